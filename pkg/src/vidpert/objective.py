"""Attack objective: semantic, visual-feature and auxiliary-feature terms.

All terms are computed per frame and averaged over the batch. The trainer
maximises the weighted total, which it does by descending on its negation.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff.tensor import default_dtype
from .autodiff import AdamW, Conv2d, Linear, Module, Tape, Tensor, no_grad, precision, use_tape
from .autodiff import functional as F
from .errors import ShapeError, TrainingError, UsageError
from .io import load_checkpoint, save_checkpoint


@dataclass
class LossWeights:
    lambda1: float = 0.1
    lambda2: float = 20.0
    lambda3: float = 10.0

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise UsageError(f"loss weights must be non-negative, got {self}")


@dataclass
class ObjectiveTerms:
    total: Tensor
    sem: Tensor
    vis: Tensor
    aux: Tensor

    def values(self):
        return {"L": self.total.item(), "L_sem": self.sem.item(), "L_vis": self.vis.item(), "L_aux": self.aux.item()}


def _batched(frames, dtype=None):
    if not isinstance(frames, Tensor):
        frames = Tensor(np.asarray(frames, dtype=dtype or default_dtype()))
    if frames.ndim == 3:
        frames = F.reshape(frames, (1, *frames.shape))
    return frames


def _sq_dist_per_frame(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"feature shapes differ: {a.shape} vs {b.shape}")
    d = F.sub(a, b)
    return F.sum(F.reshape(F.mul(d, d), (d.shape[0], -1)), axis=1)


def semantic_loss(frames_adv, questions, answers, surrogate):
    """Batch mean of the answer-token NLL given perturbed frames. Higher means a stronger attack."""
    frames_adv = _batched(frames_adv)
    if isinstance(questions, (str, bytes)):
        questions = [questions] * frames_adv.shape[0]
        answers = [answers] * frames_adv.shape[0]
    return F.mean(surrogate.nll(frames_adv, questions, answers))


def _features_pair(model_fn, frames_clean, frames_adv):
    frames_clean, frames_adv = _batched(frames_clean), _batched(frames_adv)
    if frames_clean.shape != frames_adv.shape:
        raise ShapeError(f"clean {frames_clean.shape} and adversarial {frames_adv.shape} frames differ")
    if frames_clean.requires_grad:
        clean = model_fn(frames_clean)
    else:
        with no_grad():
            clean = model_fn(frames_clean)
    return clean, model_fn(frames_adv)


def visual_loss(frames_clean, frames_adv, surrogate, clean_features=None):
    """Squared L2 distance between visual-token matrices, averaged over the batch."""
    if clean_features is None:
        clean_features, adv = _features_pair(surrogate.encode_frame, frames_clean, frames_adv)
    else:
        adv = surrogate.encode_frame(_batched(frames_adv))
    return F.mean(_sq_dist_per_frame(clean_features, adv))


def aux_loss(frames_clean, frames_adv, aux, clean_features=None):
    """Squared L2 distance between the auxiliary model's pooled features, averaged over the batch."""
    if clean_features is None:
        clean_features, adv = _features_pair(aux.features, frames_clean, frames_adv)
    else:
        adv = aux.features(_batched(frames_adv))
    return F.mean(_sq_dist_per_frame(clean_features, adv))


def total_objective(frames_clean, frames_adv, questions, answers, surrogate, aux, weights=None, clean_cache=None):
    """L = l1 * L_sem + l2 * L_vis + l3 * L_aux. To be maximised.

    ``clean_cache`` may hold precomputed ``(visual_features, aux_features)`` of the clean frames.
    """
    w = weights or LossWeights()
    vis_clean, aux_clean = clean_cache if clean_cache is not None else (None, None)
    sem = semantic_loss(frames_adv, questions, answers, surrogate)
    vis = visual_loss(frames_clean, frames_adv, surrogate, vis_clean)
    aux_term = aux_loss(frames_clean, frames_adv, aux, aux_clean)
    total = combine(sem, vis, aux_term, w)
    return ObjectiveTerms(total, sem, vis, aux_term)


def combine(sem, vis, aux_term, weights):
    return F.add(F.add(F.scale(sem, weights.lambda1), F.scale(vis, weights.lambda2)), F.scale(aux_term, weights.lambda3))


@dataclass
class AuxConfig:
    channels: int = 3
    widths: tuple = (8, 16, 32)
    n_classes: int = 2


class AuxModel(Module):
    """Three conv blocks and global average pooling; the pooled vector is the feature."""

    def __init__(self, cfg=None, seed=0):
        cfg = cfg or AuxConfig()
        self._cfg = cfg
        rng = np.random.default_rng(seed)
        w1, w2, w3 = cfg.widths
        self.conv1 = Conv2d(rng, cfg.channels, w1)
        self.conv2 = Conv2d(rng, w1, w2, stride=2)
        self.conv3 = Conv2d(rng, w2, w3, stride=2)
        self.head = Linear(rng, w3, cfg.n_classes)

    @property
    def feature_dim(self):
        return self._cfg.widths[-1]

    def features(self, frames):
        x = _batched(frames, self.conv1.weight.dtype)
        x = F.relu(self.conv1(x))
        x = F.relu(self.conv2(x))
        x = F.relu(self.conv3(x))
        return F.mean(x, axis=(2, 3))

    def forward(self, frames):
        return self.head(self.features(frames))

    def meta(self):
        cfg = asdict(self._cfg)
        cfg["widths"] = list(cfg["widths"])
        return {"kind": "aux", "architecture": cfg}

    def save(self, directory, **extra):
        return save_checkpoint(directory, self.state_dict(), {**self.meta(), **extra})

    @classmethod
    def load(cls, directory):
        tensors, meta = load_checkpoint(directory)
        if meta.get("kind") != "aux":
            raise UsageError(f"{directory} is not an auxiliary-model checkpoint")
        arch = dict(meta["architecture"])
        arch["widths"] = tuple(arch["widths"])
        model = cls(AuxConfig(**arch))
        model.load_state_dict(tensors)
        model.freeze()
        return model, meta


def _cross_entropy(logits, labels):
    labels = np.asarray(labels, dtype=np.int64)
    logp = F.log_softmax(logits, axis=-1)
    return F.scale(F.mean(logp[np.arange(len(labels)), labels]), -1.0)


def fgsm(model, images, labels, eps):
    """Single-step sign-gradient perturbation of ``images`` against ``model``'s loss."""
    x = Tensor(images.copy(), requires_grad=True)
    with use_tape(Tape()) as tape:
        loss = _cross_entropy(model(x), labels)
        tape.backward(loss)
    model.zero_grad()
    return np.clip(images + eps * np.sign(x.grad), 0.0, 1.0).astype(images.dtype)


def accuracy(model, images, labels, batch=128):
    hits = 0
    with no_grad():
        for i in range(0, len(images), batch):
            pred = model(images[i : i + batch]).data.argmax(axis=1)
            hits += int((pred == labels[i : i + batch]).sum())
    return hits / max(len(images), 1)


def train_aux_model(images, labels, epochs, seed=0, adversarial=True, eps=8 / 255, batch=16, lr=3e-3, weight_decay=0.01, holdout=0.2):
    """Train the auxiliary CNN on a labelled toy set and return ``(frozen_model, report)``.

    With ``adversarial`` set, each batch is half clean and half FGSM-perturbed
    against the current weights.
    """
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) < 2:
        raise UsageError("auxiliary training needs at least two images")
    rng = np.random.default_rng(seed)
    n_classes = int(labels.max()) + 1
    model = AuxModel(AuxConfig(n_classes=max(2, n_classes)), seed=seed)
    order = rng.permutation(len(images))
    n_hold = max(1, int(round(holdout * len(images))))
    hold, train = order[:n_hold], order[n_hold:]
    batch = min(batch, len(train))
    steps_per_epoch = max(1, len(train) // batch)
    opt = AdamW(model.parameters(), lr=lr, weight_decay=weight_decay, schedule="cosine", total_steps=max(1, epochs * steps_per_epoch))
    last = None
    for _ in range(epochs):
        perm = rng.permutation(train)
        for i in range(steps_per_epoch):
            idx = perm[i * batch : (i + 1) * batch]
            x, y = images[idx], labels[idx]
            if adversarial:
                x = np.concatenate([x, fgsm(model, x, y, eps)])
                y = np.concatenate([y, y])
            with use_tape(Tape()) as tape:
                loss = _cross_entropy(model(x), y)
                tape.backward(loss)
            opt.step()
            last = loss.item()
            if not np.isfinite(last):
                raise TrainingError("auxiliary training diverged")
    model.freeze()
    report = {
        "epochs": epochs,
        "adversarial": adversarial,
        "eps": eps,
        "final_loss": last,
        "heldout_clean_accuracy": accuracy(model, images[hold], labels[hold]),
        "n_train": int(len(train)),
        "n_heldout": int(len(hold)),
    }
    return model, report


def feature_jacobian_norm(model, images, n_probes=8, h=1e-3, seed=0):
    """Mean over images and random unit directions u of ||F(x + h u) - F(x - h u)|| / 2h.

    Evaluated in float64 on a copy of the model.
    """
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        probe = type(model)(model._cfg)
        probe.load_state_dict(model.state_dict())
        probe.astype(np.float64)
        x = np.asarray(images, dtype=np.float64)
        total = 0.0
        with no_grad():
            for _ in range(n_probes):
                u = rng.standard_normal(x.shape)
                u /= np.sqrt((u.reshape(len(x), -1) ** 2).sum(axis=1)).reshape(-1, 1, 1, 1)
                fp = probe.features(x + h * u).data
                fm = probe.features(x - h * u).data
                total += float(np.sqrt(((fp - fm) ** 2).sum(axis=1)).mean() / (2 * h))
    return total / n_probes
