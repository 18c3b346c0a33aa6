"""Tiny white-box vision-language surrogate.

A patch transformer encodes each frame into visual tokens; a causal
transformer LM reads them as a projected prefix followed by the byte-level
question and answer.
"""

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import AdamW, LayerNorm, Linear, Module, Tape, Tensor, no_grad, use_tape
from .autodiff import functional as F
from .autodiff.nn import Embedding
from .errors import ShapeError, TrainingError, UsageError
from .io import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

BOS = 256
EOS = 257
VOCAB = 258
_NEG = -1e9


class Tokenizer:
    """Byte-level tokenizer: ids 0-255 are bytes, 256 is BOS, 257 is EOS."""

    vocab_size = VOCAB

    def __init__(self, max_len=64):
        self.max_len = max_len

    def tokenize(self, text):
        if isinstance(text, str):
            text = text.encode()
        if len(text) > self.max_len - 2:
            raise UsageError(f"text of {len(text)} bytes exceeds the {self.max_len - 2}-byte limit (would truncate)")
        return [BOS, *text, EOS]

    def detokenize(self, ids):
        ids = list(ids)
        if ids and ids[0] == BOS:
            ids = ids[1:]
        if EOS in ids:
            ids = ids[: ids.index(EOS)]
        return bytes(i for i in ids if i < 256)


@dataclass
class SurrogateConfig:
    image_size: int = 32
    channels: int = 3
    patch: int = 4
    d_vis: int = 64
    vis_blocks: int = 2
    vis_heads: int = 4
    d_lm: int = 64
    lm_blocks: int = 2
    lm_heads: int = 4
    vocab: int = VOCAB
    max_text: int = 64
    mlp_ratio: int = 4

    @property
    def n_visual(self):
        return (self.image_size // self.patch) ** 2


class Block(Module):
    """Pre-norm transformer block with an additive attention mask."""

    def __init__(self, rng, d, heads, mlp_ratio):
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self._heads = heads
        self.ln1 = LayerNorm(d)
        self.qkv = Linear(rng, d, 3 * d)
        self.proj = Linear(rng, d, d)
        self.ln2 = LayerNorm(d)
        self.fc1 = Linear(rng, d, mlp_ratio * d)
        self.fc2 = Linear(rng, mlp_ratio * d, d)

    def attention(self, x, mask):
        b, t, d = x.shape
        h = self._heads
        dh = d // h
        qkv = F.transpose(F.reshape(self.qkv(x), (b, t, 3, h, dh)), (2, 0, 3, 1, 4))
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = F.scale(F.matmul(q, F.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        if mask is not None:
            scores = F.add(scores, mask)
        attn = F.softmax(scores, axis=-1)
        out = F.reshape(F.transpose(F.matmul(attn, v), (0, 2, 1, 3)), (b, t, d))
        return self.proj(out)

    def forward(self, x, mask=None):
        x = F.add(x, self.attention(self.ln1(x), mask))
        return F.add(x, self.fc2(F.gelu(self.fc1(self.ln2(x)))))


class VisionEncoder(Module):
    def __init__(self, rng, cfg):
        self._cfg = cfg
        p = cfg.patch
        self.patch_embed = Linear(rng, cfg.channels * p * p, cfg.d_vis)
        self.pos = Tensor(rng.normal(0.0, 0.02, size=(cfg.n_visual, cfg.d_vis)).astype(self.patch_embed.weight.dtype), requires_grad=True)
        self.blocks = [Block(rng, cfg.d_vis, cfg.vis_heads, cfg.mlp_ratio) for _ in range(cfg.vis_blocks)]
        self.ln_f = LayerNorm(cfg.d_vis)

    def forward(self, frames):
        cfg = self._cfg
        if frames.ndim == 3:
            frames = F.reshape(frames, (1, *frames.shape))
        n, c, h, w = frames.shape
        p = cfg.patch
        if c != cfg.channels or h % p or w % p:
            raise ShapeError(f"frame shape {(c, h, w)} incompatible with {cfg.channels} channels and patch {p}")
        if (h // p) * (w // p) != cfg.n_visual:
            raise ShapeError(f"frame {h}x{w} gives {(h // p) * (w // p)} patches, encoder expects {cfg.n_visual}")
        gh, gw = h // p, w // p
        x = F.reshape(frames, (n, c, gh, p, gw, p))
        x = F.reshape(F.transpose(x, (0, 2, 4, 1, 3, 5)), (n, gh * gw, c * p * p))
        x = F.add(self.patch_embed(x), self.pos)
        for blk in self.blocks:
            x = blk(x)
        return self.ln_f(x)


class LanguageModel(Module):
    def __init__(self, rng, cfg):
        self._cfg = cfg
        self._masks = {}
        self.vis_proj = Linear(rng, cfg.d_vis, cfg.d_lm)
        self.tok_emb = Embedding(rng, cfg.vocab, cfg.d_lm)
        self.pos = Tensor(rng.normal(0.0, 0.02, size=(cfg.max_text, cfg.d_lm)).astype(self.vis_proj.weight.dtype), requires_grad=True)
        self.blocks = [Block(rng, cfg.d_lm, cfg.lm_heads, cfg.mlp_ratio) for _ in range(cfg.lm_blocks)]
        self.ln_f = LayerNorm(cfg.d_lm)
        self.head = Linear(rng, cfg.d_lm, cfg.vocab)

    def mask(self, n_prefix, n_text, dtype):
        key = (n_prefix, n_text, np.dtype(dtype).str)
        m = self._masks.get(key)
        if m is None:
            total = n_prefix + n_text
            allowed = np.zeros((total, total), dtype=bool)
            allowed[:, :n_prefix] = True
            allowed[n_prefix:, n_prefix:] = np.tril(np.ones((n_text, n_text), dtype=bool))
            m = self._masks[key] = np.where(allowed, 0.0, _NEG).astype(dtype)
        return m

    def forward(self, visual, ids):
        """Logits (B, T, vocab) for text ids (B, T) given visual tokens (B, P, d_vis)."""
        ids = np.asarray(ids, dtype=np.int64)
        b, t = ids.shape
        if t > self._cfg.max_text:
            raise UsageError(f"text length {t} exceeds max_text {self._cfg.max_text}")
        if visual.shape[0] != b:
            raise ShapeError(f"visual batch {visual.shape[0]} != text batch {b}")
        n_prefix = visual.shape[1]
        prefix = self.vis_proj(visual)
        text = F.add(self.tok_emb(ids), self.pos[:t])
        x = F.concat([prefix, text], axis=1)
        mask = self.mask(n_prefix, t, x.dtype)
        for blk in self.blocks:
            x = blk(x, mask)
        x = self.ln_f(x[:, n_prefix:])
        return self.head(x)


def nll_from_logits(logits, targets, weights):
    """Per-row weighted negative log-likelihood: -sum_t w[b,t] * log p(targets[b,t]).

    With weights 1/T on the answer positions this is the mean answer-token NLL.
    """
    targets = np.asarray(targets, dtype=np.int64)
    b, t = targets.shape
    logp = F.log_softmax(logits, axis=-1)
    picked = logp[np.arange(b)[:, None], np.arange(t)[None, :], targets]
    w = np.asarray(weights, dtype=logits.dtype)
    return F.scale(F.sum(F.mul(picked, w), axis=1), -1.0)


def teacher_forcing_batch(tokenizer, questions, answers):
    """Right-padded input ids, targets and per-token weights for a batch of QA pairs."""
    rows = []
    for q, a in zip(questions, answers):
        if isinstance(a, str):
            a = a.encode()
        prompt = tokenizer.tokenize(q)
        inp = prompt + list(a)
        tgt_pos = list(range(len(prompt) - 1, len(inp)))
        tgt = list(a) + [EOS]
        rows.append((inp, tgt_pos, tgt))
    t = max(len(r[0]) for r in rows)
    ids = np.full((len(rows), t), EOS, dtype=np.int64)
    targets = np.full((len(rows), t), EOS, dtype=np.int64)
    weights = np.zeros((len(rows), t))
    for i, (inp, pos, tgt) in enumerate(rows):
        ids[i, : len(inp)] = inp
        targets[i, pos] = tgt
        weights[i, pos] = 1.0 / len(tgt)
    return ids, targets, weights


def sample_frames(n_frames, k):
    """Uniformly spaced frame indices floor(i*N/k), i = 0..k-1."""
    if not 1 <= k <= n_frames:
        raise UsageError(f"cannot sample k={k} frames from a clip of {n_frames}")
    return [i * n_frames // k for i in range(k)]


class Surrogate(Module):
    def __init__(self, cfg=None, seed=0):
        cfg = cfg or SurrogateConfig()
        rng = np.random.default_rng(seed)
        self._cfg = cfg
        self._tokenizer = Tokenizer(cfg.max_text)
        self.encoder = VisionEncoder(rng, cfg)
        self.lm = LanguageModel(rng, cfg)

    @property
    def config(self):
        return self._cfg

    @property
    def tokenizer(self):
        return self._tokenizer

    def encode_frame(self, frames):
        """Visual tokens (B, n_visual, d_vis) for frames (B, C, H, W); a single (C, H, W) frame gives B=1."""
        if not isinstance(frames, Tensor):
            frames = Tensor(np.asarray(frames, dtype=self.encoder.patch_embed.weight.dtype))
        return self.encoder(frames)

    def lm_nll(self, visual, questions, answers):
        """Per-sample mean answer-token NLL under teacher forcing, shape (B,)."""
        ids, targets, weights = teacher_forcing_batch(self._tokenizer, questions, answers)
        return nll_from_logits(self.lm(visual, ids), targets, weights)

    def nll(self, frames, questions, answers):
        return self.lm_nll(self.encode_frame(frames), questions, answers)

    def generate(self, visual, questions, max_new=8):
        """Greedy decoding, one answer (bytes) per row of ``visual``."""
        if isinstance(questions, (str, bytes)):
            questions = [questions] * visual.shape[0]
        seqs = [self._tokenizer.tokenize(q) for q in questions]
        prompt_len = [len(s) for s in seqs]
        done = [max_new <= 0] * len(seqs)
        with no_grad():
            for _ in range(max(max_new, 0)):
                if all(done):
                    break
                t = max(len(s) for s in seqs)
                if t > self._cfg.max_text:
                    break
                ids = np.full((len(seqs), t), EOS, dtype=np.int64)
                for i, s in enumerate(seqs):
                    ids[i, : len(s)] = s
                logits = self.lm(visual, ids).data
                for i, s in enumerate(seqs):
                    if done[i]:
                        continue
                    nxt = int(np.argmax(logits[i, len(s) - 1]))
                    s.append(nxt)
                    if nxt == EOS:
                        done[i] = True
        return [bytes(x for x in s[p:] if x < 256) for s, p in zip(seqs, prompt_len)]

    def answer(self, frames, question, max_new=8):
        with no_grad():
            visual = self.encode_frame(frames)
        return self.generate(visual, question, max_new)

    def meta(self):
        return {"kind": "surrogate", "architecture": asdict(self._cfg)}

    def save(self, directory, **extra):
        return save_checkpoint(directory, self.state_dict(), {**self.meta(), **extra})

    @classmethod
    def load(cls, directory):
        tensors, meta = load_checkpoint(directory)
        if meta.get("kind") != "surrogate":
            raise UsageError(f"{directory} is not a surrogate checkpoint")
        model = cls(SurrogateConfig(**meta["architecture"]))
        model.load_state_dict(tensors)
        model.freeze()
        return model, meta


def _batches(rng, n, batch):
    """Endless stream of index batches: reshuffled epochs, partial tail dropped."""
    while True:
        perm = rng.permutation(n)
        for i in range(0, n - batch + 1, batch):
            yield perm[i : i + batch]


def mean_nll(model, samples, batch=64):
    total = 0.0
    with no_grad():
        for i in range(0, len(samples), batch):
            chunk = samples[i : i + batch]
            frames = np.stack([s[0] for s in chunk])
            nll = model.nll(frames, [s[1] for s in chunk], [s[2] for s in chunk])
            total += float(nll.data.astype(np.float64).sum())
    return total / len(samples)


def pretrain_surrogate(samples, steps, seed=0, batch=16, lr=1e-3, weight_decay=0.01, holdout=0.1, cfg=None, log_every=0):
    """Train a fresh surrogate on ``(frame, question, answer)`` triples.

    Returns ``(model, report)``; the model comes back frozen. ``report`` holds
    the held-out NLL before and after training.
    """
    if not samples:
        raise UsageError("surrogate pretraining needs a non-empty dataset")
    rng = np.random.default_rng(seed)
    model = Surrogate(cfg, seed=seed)
    order = rng.permutation(len(samples))
    n_hold = max(1, int(round(holdout * len(samples)))) if len(samples) > 1 else 0
    held = [samples[i] for i in order[:n_hold]]
    train = [samples[i] for i in order[n_hold:]] or held
    initial = mean_nll(model, held) if held else float("nan")
    batch = min(batch, len(train))
    opt = AdamW(model.parameters(), lr=lr, weight_decay=weight_decay, schedule="cosine", total_steps=steps)
    ema = None
    history = []
    stream = _batches(rng, len(train), batch)
    for step in range(steps):
        idx = next(stream)
        frames = np.stack([train[i][0] for i in idx])
        with use_tape(Tape()) as tape:
            loss = F.mean(model.nll(frames, [train[i][1] for i in idx], [train[i][2] for i in idx]))
            tape.backward(loss)
        opt.step()
        value = loss.item()
        ema = value if ema is None else 0.95 * ema + 0.05 * value
        history.append(ema)
        if step >= 100 and ema > 2.0 * history[step - 100]:
            raise TrainingError(f"surrogate pretraining diverged at step {step}: smoothed NLL {ema:.3f}")
        if log_every and step % log_every == 0:
            log.info("surrogate step %d nll %.4f", step, value)
    model.freeze()
    final = mean_nll(model, held) if held else float("nan")
    return model, {"steps": steps, "initial_heldout_nll": initial, "final_heldout_nll": final, "n_train": len(train), "n_heldout": len(held)}
