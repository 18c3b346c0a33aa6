"""Chunked application of a trained generator to images and videos."""

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LoadError, ParseError, ShapeError, UsageError
from .generator import DEFAULT_EPS, Generator, perturb
from .io import load_tensor, read_jsonl, save_tensor

DEFAULT_CHUNK = 300
_FRAME_RE = re.compile(r"^frame_(\d+)\.(cvt|png)$")


@dataclass
class VideoClip:
    id: str
    frames: np.ndarray  # (N, C, H, W) in [0, 1]
    fps: float = 0.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim == 3:
            self.frames = self.frames[None]
        if self.frames.ndim != 4 or len(self.frames) < 1:
            raise ShapeError(f"clip {self.id!r}: expected (N, C, H, W) with N >= 1, got {self.frames.shape}")

    def __len__(self):
        return len(self.frames)


@dataclass
class AttackJob:
    checkpoint: str = ""
    eps: float = None
    chunk: int = DEFAULT_CHUNK
    out_dir: str = None
    png: bool = False
    manifest: str = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.chunk < 1:
            raise UsageError(f"chunk size must be >= 1, got {self.chunk}")


def chunk_plan(n_frames, chunk):
    """Sizes of the sequential chunks covering ``n_frames``."""
    if chunk < 1:
        raise UsageError(f"chunk size must be >= 1, got {chunk}")
    full, rest = divmod(n_frames, chunk)
    return [chunk] * full + ([rest] if rest else [])


def stream_attack(frames, generator, eps=DEFAULT_EPS, chunk=DEFAULT_CHUNK):
    """Yield ``(adversarial, delta)`` chunk by chunk; at most one chunk is live at a time."""
    start = 0
    for size in chunk_plan(len(frames), chunk):
        block = np.asarray(frames[start : start + size], dtype=np.float32)
        yield perturb(generator, block, eps)
        start += size


def attack_video(clip, generator, eps=DEFAULT_EPS, chunk=DEFAULT_CHUNK, out_dir=None, png=False):
    """Perturb every frame of ``clip``; optionally write ``adv/`` and ``delta/`` frame dumps.

    Returns ``(adversarial_clip, deltas)``. Frames are processed independently,
    so the result does not depend on ``chunk``.
    """
    h, w = clip.frames.shape[2:]
    if h % 4 or w % 4:
        raise ShapeError(f"clip {clip.id!r}: frame size {h}x{w} not divisible by 4")
    adv = np.empty_like(clip.frames)
    deltas = np.empty_like(clip.frames)
    start = 0
    for a, d in stream_attack(clip.frames, generator, eps, chunk):
        adv[start : start + len(a)] = a
        deltas[start : start + len(d)] = d
        if out_dir is not None:
            _dump(Path(out_dir), start, a, d, png)
        start += len(a)
    return VideoClip(clip.id, adv, clip.fps), deltas


def attack_image(frame, generator, eps=DEFAULT_EPS):
    frame = np.asarray(frame, dtype=np.float32)
    adv, _ = perturb(generator, frame[None], eps)
    return adv[0]


def _dump(out, start, adv, deltas, png):
    for sub in ("adv", "delta"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for i, (a, d) in enumerate(zip(adv, deltas)):
        name = f"frame_{start + i:03d}"
        save_tensor(out / "adv" / f"{name}.cvt", a)
        save_tensor(out / "delta" / f"{name}.cvt", d)
        if png:
            save_png(out / "adv" / f"{name}.png", a)


def save_png(path, frame):
    from PIL import Image

    arr = np.clip(np.rint(np.asarray(frame).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_png(path):
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1).copy()


def _frame_files(directory):
    found = {}
    for p in directory.iterdir():
        m = _FRAME_RE.match(p.name)
        if m:
            idx = int(m.group(1))
            # the lossless container wins over a PNG export of the same frame
            if idx not in found or p.suffix == ".cvt":
                found[idx] = p
    return [found[i] for i in sorted(found)]


def read_clip(path, clip_id=None):
    """Load a clip from a frame directory (``frame_000.cvt``/``.png`` ...) or a container file.

    A container may hold one frame (C, H, W) or a whole clip (N, C, H, W).
    """
    path = Path(path)
    clip_id = clip_id or path.stem
    if path.is_dir():
        files = _frame_files(path)
        if not files:
            raise LoadError(f"{path}: no frame_NNN.cvt/.png files")
        frames = [load_tensor(p) if p.suffix == ".cvt" else load_png(p) for p in files]
        shapes = {f.shape for f in frames}
        if len(shapes) != 1:
            raise ShapeError(f"{path}: frame shapes differ {sorted(shapes)}")
        return VideoClip(clip_id, np.stack(frames))
    if not path.exists():
        raise LoadError(f"{path}: no such clip")
    arr = load_tensor(path)
    if arr.ndim not in (3, 4):
        raise ParseError(f"{path}: container rank {arr.ndim}, expected 3 or 4", offset=4)
    return VideoClip(clip_id, arr)


def write_clip(clip, directory, png=False):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(clip.frames):
        save_tensor(directory / f"frame_{i:03d}.cvt", f)
        if png:
            save_png(directory / f"frame_{i:03d}.png", f)
    return directory


def read_deltas(directory):
    return read_clip(directory).frames


def iter_manifest_clips(manifest):
    """Yield ``(record, clip)`` for a JSONL manifest whose records carry ``clip_path`` or ``media``."""
    manifest = Path(manifest)
    for rec in read_jsonl(manifest):
        rel = rec.get("clip_path") or rec.get("media")
        if rel is None:
            raise ParseError(f"{manifest}: record without clip_path/media: {rec}")
        clip_id = rec.get("video_id") or rec.get("id") or Path(rel).stem
        yield rec, read_clip(manifest.parent / rel, clip_id)


def run_attack_job(job):
    """Attack every clip the job's input names. ``job.manifest`` may be a JSONL manifest, a clip dir or a container."""
    generator, meta = Generator.load(job.checkpoint)
    eps = job.eps if job.eps is not None else meta.get("eps", DEFAULT_EPS)
    src = Path(job.manifest)
    if src.suffix == ".jsonl":
        items = iter_manifest_clips(src)
    else:
        items = iter([({}, read_clip(src))])
    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for _rec, clip in items:
        target = out / clip.id
        adv, deltas = attack_video(clip, generator, eps, job.chunk, target, job.png)
        summary.append(
            {
                "id": clip.id,
                "frames": len(clip),
                "chunks": chunk_plan(len(clip), job.chunk),
                "max_abs_delta": float(np.abs(deltas).max()),
                "out": str(target),
            }
        )
    report = {"checkpoint": str(job.checkpoint), "eps": eps, "chunk": job.chunk, "clips": summary}
    (out / "attack.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report
