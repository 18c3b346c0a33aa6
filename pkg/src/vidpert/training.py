"""Generator curriculum: caption pretraining, QA fine-tuning, same-video fine-tuning.

Every stage maximises the weighted attack objective over generator weights
only; the surrogate and auxiliary model stay frozen. Stages chain through
checkpoint directories whose metadata records the provenance chain.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import AdamW, Tape, no_grad, use_tape
from .autodiff import functional as F
from .errors import LoadError, UsageError
from .generator import DEFAULT_EPS, Generator, GeneratorConfig, apply
from .io import config_hash, content_hash, load_tensor, read_jsonl
from .objective import AuxModel, LossWeights, total_objective
from .runtime import read_clip
from .surrogate import Surrogate
from .toydata import PRETRAIN_QUESTION

log = logging.getLogger(__name__)

STAGES = ("pretrain", "finetune_qa", "finetune_video")
DEFAULT_STEPS = {"pretrain": 2000, "finetune_qa": 500, "finetune_video": 500}
DEFAULT_QUOTA = 50
TOY_QUOTA = 5


@dataclass
class StageConfig:
    kind: str
    manifest: str
    steps: int = None
    batch: int = 8
    lr: float = 1e-4
    schedule: str = None
    seed: int = 0
    eps: float = DEFAULT_EPS
    quota: int = DEFAULT_QUOTA
    weights: LossWeights = field(default_factory=LossWeights)
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.kind not in STAGES:
            raise UsageError(f"unknown stage {self.kind!r}; expected one of {STAGES}")
        if self.steps is None:
            self.steps = DEFAULT_STEPS[self.kind]
        if self.schedule is None:
            # annealing starts with fine-tuning
            self.schedule = "constant" if self.kind == "pretrain" else "cosine"
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.batch < 1:
            raise UsageError(f"batch size must be >= 1, got {self.batch}")
        if self.steps < 0:
            raise UsageError(f"steps must be >= 0, got {self.steps}")
        if self.quota < 1:
            raise UsageError(f"video quota must be >= 1, got {self.quota}")
        if self.schedule not in ("constant", "cosine"):
            raise UsageError(f"unknown lr schedule {self.schedule!r}")

    def as_dict(self):
        d = asdict(self)
        d["manifest"] = str(self.manifest)
        return d


def _resolve(manifest, rel):
    path = Path(manifest).parent / rel
    if not path.exists():
        raise LoadError(f"{manifest}: media {rel!r} does not exist")
    return path


def load_image_manifest(manifest, fixed_question=None):
    """``(frames (N, C, H, W), questions, answers)`` from a JSONL of single images."""
    recs = read_jsonl(manifest)
    if not recs:
        raise UsageError(f"{manifest}: empty manifest")
    frames, questions, answers = [], [], []
    for r in recs:
        path = _resolve(manifest, r["media"])
        clip = read_clip(path).frames if path.is_dir() else load_tensor(path)
        frame = clip[0] if clip.ndim == 4 else clip
        frames.append(frame)
        questions.append(fixed_question if fixed_question is not None else r["question"])
        answers.append(r["answer"])
    return np.stack(frames).astype(np.float32), questions, answers


def load_video_manifest(manifest):
    """List of ``(video_id, frames, question, answer)``; records must carry a video id."""
    recs = read_jsonl(manifest)
    if not recs:
        raise UsageError(f"{manifest}: empty manifest")
    videos = []
    for r in recs:
        if "video_id" not in r:
            raise UsageError(f"{manifest}: video record without video_id: {r}")
        rel = r.get("media") or r.get("clip_path")
        clip = read_clip(_resolve(manifest, rel), r["video_id"])
        videos.append((r["video_id"], clip.frames, r["question"], r["answer"]))
    return videos


def video_batch_plan(lengths, quota, batch, rng):
    """Sequence of ``(video_index, frame_indices)``: ``quota`` batches per video, videos in shuffled order.

    Frames come from one video without replacement; a video shorter than
    ``batch`` is sampled with replacement and a warning is logged.
    """
    if quota < 1 or batch < 1:
        raise UsageError(f"quota and batch must be >= 1, got {quota}, {batch}")
    order = rng.permutation(np.repeat(np.arange(len(lengths)), quota))
    plan = []
    warned = set()
    for v in order:
        n = lengths[v]
        short = n < batch
        if short and v not in warned:
            log.warning("video %d has %d frames < batch %d; sampling with replacement", v, n, batch)
            warned.add(v)
        idx = np.sort(rng.choice(n, size=batch, replace=short))
        plan.append((int(v), idx))
    return plan


def _image_batches(n, batch, rng):
    batch = min(batch, n)
    while True:
        perm = rng.permutation(n)
        for i in range(0, n - batch + 1, batch):
            yield perm[i : i + batch]


def _objective_step(generator, surrogate, aux, frames, questions, answers, cfg, opt):
    with no_grad():
        clean_cache = (surrogate.encode_frame(frames), aux.features(frames))
    with use_tape(Tape()) as tape:
        delta = generator.perturbation(frames, cfg.eps)
        adv = apply(frames, delta)
        terms = total_objective(frames, adv, questions, answers, surrogate, aux, cfg.weights, clean_cache)
        tape.backward(F.scale(terms.total, -1.0))
    lr = opt.step()
    return lr, terms.values()


def _log_writer(path):
    if path is None:
        return None
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fh = open(path, "a")
    return fh


def _train(generator, surrogate, aux, cfg, batches, n_steps, log_path):
    opt = AdamW(
        generator.parameters(),
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        schedule=cfg.schedule,
        # the last update runs at lr 0
        total_steps=max(n_steps - 1, 1),
    )
    fh = _log_writer(log_path)
    history = []
    try:
        for step in range(n_steps):
            frames, questions, answers = next(batches)
            lr, values = _objective_step(generator, surrogate, aux, frames, questions, answers, cfg, opt)
            rec = {"stage": cfg.kind, "step": step, "lr": lr, **values}
            history.append(rec)
            if fh is not None:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    finally:
        if fh is not None:
            fh.close()
    return history


def _check_frozen(*models):
    for m in models:
        live = [n for n, p in m.named_parameters() if p.requires_grad]
        if live:
            raise UsageError(f"{type(m).__name__} must be frozen; trainable: {live[:3]}")


def _stage_meta(cfg, provenance, surrogate, aux, n_steps, prior_steps):
    steps = dict(prior_steps)
    steps[cfg.kind] = n_steps
    return {
        "provenance": [*provenance, cfg.kind],
        "steps": steps,
        "config_hash": config_hash(cfg.as_dict()),
        "stage_config": cfg.as_dict(),
        "eps": cfg.eps,
        "surrogate_hash": content_hash(surrogate.state_dict()),
        "aux_hash": content_hash(aux.state_dict()),
    }


@dataclass
class StageResult:
    generator: Generator
    meta: dict
    history: list

    def save(self, directory):
        return self.generator.save(directory, **self.meta)


def run_pretrain(cfg, surrogate, aux, generator=None, log_path=None):
    """Caption stage: every sample is asked the fixed description question."""
    if cfg.kind != "pretrain":
        raise UsageError(f"run_pretrain got a {cfg.kind!r} config")
    _check_frozen(surrogate, aux)
    frames, _, captions = load_image_manifest(cfg.manifest, fixed_question=PRETRAIN_QUESTION)
    generator = generator or Generator(GeneratorConfig(channels=frames.shape[1]), seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    batches = ((frames[idx], [PRETRAIN_QUESTION] * len(idx), [captions[i] for i in idx]) for idx in _image_batches(len(frames), cfg.batch, rng))
    history = _train(generator, surrogate, aux, cfg, batches, cfg.steps, log_path)
    return StageResult(generator, _stage_meta(cfg, [], surrogate, aux, cfg.steps, {}), history)


def _require_chain(meta_in, needed, override):
    chain = list(meta_in.get("provenance", []))
    if chain[-1:] != [needed] and not override:
        raise UsageError(f"checkpoint provenance {chain} does not end in {needed!r}; pass the override flag to force")
    return chain


def run_finetune_qa(cfg, generator, meta_in, surrogate, aux, log_path=None, allow_any_provenance=False):
    if cfg.kind != "finetune_qa":
        raise UsageError(f"run_finetune_qa got a {cfg.kind!r} config")
    _check_frozen(surrogate, aux)
    chain = _require_chain(meta_in, "pretrain", allow_any_provenance)
    frames, questions, answers = load_image_manifest(cfg.manifest)
    rng = np.random.default_rng(cfg.seed)
    batches = ((frames[idx], [questions[i] for i in idx], [answers[i] for i in idx]) for idx in _image_batches(len(frames), cfg.batch, rng))
    history = _train(generator, surrogate, aux, cfg, batches, cfg.steps, log_path)
    return StageResult(generator, _stage_meta(cfg, chain, surrogate, aux, cfg.steps, meta_in.get("steps", {})), history)


def run_finetune_video(cfg, generator, meta_in, surrogate, aux, log_path=None, allow_any_provenance=False):
    """Same-video batches: ``cfg.quota`` batches per video; ``cfg.steps`` is not used."""
    if cfg.kind != "finetune_video":
        raise UsageError(f"run_finetune_video got a {cfg.kind!r} config")
    _check_frozen(surrogate, aux)
    chain = _require_chain(meta_in, "finetune_qa", allow_any_provenance)
    videos = load_video_manifest(cfg.manifest)
    rng = np.random.default_rng(cfg.seed)
    plan = video_batch_plan([len(v[1]) for v in videos], cfg.quota, cfg.batch, rng)

    def batches():
        for v, idx in plan:
            _, frames, q, a = videos[v]
            yield frames[idx], [q] * len(idx), [a] * len(idx)

    history = _train(generator, surrogate, aux, cfg, batches(), len(plan), log_path)
    meta = _stage_meta(cfg, chain, surrogate, aux, len(plan), meta_in.get("steps", {}))
    meta["videos"] = len(videos)
    return StageResult(generator, meta, history)


def load_frozen(surrogate_dir, aux_dir):
    surrogate, _ = Surrogate.load(surrogate_dir)
    aux, _ = AuxModel.load(aux_dir)
    return surrogate, aux


def run_ablation(pretrain_only_dir, full_dir, surrogate, benchmark, eps=None):
    """Toy-benchmark degradation of the pretrain-only and full-pipeline generators and their difference."""
    from .evaluation import degradation_report, load_benchmark, score_model

    for name, path in (("pretrain_only", pretrain_only_dir), ("full", full_dir)):
        if path is None or not (Path(path) / "meta.json").is_file():
            raise UsageError(f"ablation arm {name!r}: no checkpoint at {path}")
    bench = load_benchmark(benchmark) if isinstance(benchmark, (str, Path)) else benchmark
    clean = score_model(surrogate, bench)
    arms = {}
    for name, path in (("pretrain_only", pretrain_only_dir), ("full", full_dir)):
        gen, meta = Generator.load(path)
        attacked = score_model(surrogate, bench, gen, eps=eps if eps is not None else meta.get("eps", DEFAULT_EPS))
        arms[name] = {
            "provenance": meta.get("provenance", []),
            "content_hash": meta["content_hash"],
            "degradation": degradation_report(clean, attacked),
        }
    full, pre = arms["full"]["degradation"], arms["pretrain_only"]["degradation"]
    return {
        "schema": 1,
        "benchmark_hash": clean["benchmark_hash"],
        "pretrain_only": arms["pretrain_only"],
        "full": arms["full"],
        "difference": {
            "absolute": full["absolute"] - pre["absolute"],
            "nll_ratio": full["nll_ratio"] - pre["nll_ratio"],
        },
    }
