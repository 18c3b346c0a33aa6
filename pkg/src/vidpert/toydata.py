"""Synthetic scenes, videos and manifests for every training stage and the benchmark.

Frames are 3x32x32 with coloured squares and circles on a plain background.
Moving objects drag a fading trail of ghost copies behind them so that the
direction of motion is readable from a single frame (the surrogate sees frames one at a
time).
"""

import json
from pathlib import Path

import numpy as np

from .io import content_hash, save_tensor, write_jsonl

SIZE = 32
COLORS = {
    "red": (0.9, 0.1, 0.1),
    "green": (0.1, 0.8, 0.15),
    "blue": (0.15, 0.25, 0.95),
    "yellow": (0.95, 0.9, 0.1),
    "cyan": (0.1, 0.85, 0.9),
    "magenta": (0.9, 0.15, 0.85),
}
BACKGROUNDS = {"black": (0.05, 0.05, 0.05), "gray": (0.45, 0.45, 0.45)}
DIRECTIONS = {"right": (1.0, 0.0), "left": (-1.0, 0.0), "down": (0.0, 1.0), "up": (0.0, -1.0)}
NUMBER_WORDS = {1: "one", 2: "two", 3: "three"}

PRETRAIN_QUESTION = "Describe what you see in this image"
COLOR_Q = "what color is the square?"
COUNT_Q = "how many circles are there?"
MOTION_Q = "which direction does the square move?"
CATEGORIES = ("color", "count", "motion")

DEFAULT_COUNTS = {"pretrain": 200, "qa": 800, "video": 100, "benchmark": 144}
TRAIL = 5
SPLIT_IDS = {"pretrain": 1, "qa": 2, "video": 3, "benchmark": 4}


def _coverage(obj, xs, ys):
    dx, dy = xs - obj["x"], ys - obj["y"]
    if obj["kind"] == "circle":
        d = np.hypot(dx, dy)
    else:
        d = np.maximum(np.abs(dx), np.abs(dy))
    return np.clip(obj["r"] + 0.5 - d, 0.0, 1.0)


def render(objects, background, size=SIZE, velocity=None):
    """Anti-aliased rendering of ``objects`` (dicts with kind, color, x, y, r)."""
    img = np.empty((3, size, size), dtype=np.float64)
    img[:] = np.asarray(BACKGROUNDS[background])[:, None, None]
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    for obj in objects:
        col = np.asarray(COLORS[obj["color"]])[:, None, None]
        if velocity is not None and any(velocity):
            vx, vy = velocity
            norm = np.hypot(vx, vy)
            ux, uy = vx / norm, vy / norm
            # fading ghost copies along -velocity, faintest furthest back
            trail = np.zeros((size, size))
            for step in range(1, TRAIL + 1):
                ghost = _coverage(obj, xs + step * ux, ys + step * uy)
                trail = np.maximum(trail, ghost * 0.6 * (1.0 - step / (TRAIL + 1)))
            img = img * (1 - trail) + col * trail
        alpha = _coverage(obj, xs, ys)
        img = img * (1 - alpha) + col * alpha
    return img.astype(np.float32)


def _place(rng, radii, margins, size=SIZE, tries=500):
    """Non-overlapping centres; ``margins`` are (xlo, xhi, ylo, yhi) extra clearance."""
    for _ in range(tries):
        pts = []
        ok = True
        for r in radii:
            xlo, xhi, ylo, yhi = margins
            lo_x, hi_x = r + 1 + xlo, size - r - 1 - xhi
            lo_y, hi_y = r + 1 + ylo, size - r - 1 - yhi
            if lo_x > hi_x or lo_y > hi_y:
                return None
            p = (rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y))
            if any(np.hypot(p[0] - q[0], p[1] - q[1]) < r + rq + 3 for q, rq in zip(pts, radii)):
                ok = False
                break
            pts.append(p)
        if ok:
            return pts
    return None


def _objects(rng, kinds, colors, n_frames=1, velocity=(0.0, 0.0)):
    radii = [float(rng.uniform(3.0, 4.5)) for _ in kinds]
    travel_x = velocity[0] * (n_frames - 1)
    travel_y = velocity[1] * (n_frames - 1)
    margins = (max(0.0, -travel_x) + 3, max(0.0, travel_x) + 3, max(0.0, -travel_y) + 3, max(0.0, travel_y) + 3)
    pts = _place(rng, radii, margins)
    if pts is None:
        return None
    return [dict(kind=k, color=c, x=p[0], y=p[1], r=r) for k, c, p, r in zip(kinds, colors, pts, radii)]


def _pick_colors(rng, n, exclude=()):
    pool = [c for c in COLORS if c not in exclude]
    return [pool[i] for i in rng.choice(len(pool), size=n, replace=len(pool) < n)]


def scene_spec(rng, category, n_frames=1, moving=False):
    """Random scene layout plus (question, answer) for one category.

    ``category`` is one of color/count/motion/shape/caption. Multi-frame
    scenes and motion questions always move.
    """
    bg = list(BACKGROUNDS)[rng.integers(len(BACKGROUNDS))]
    moving = moving or n_frames > 1 or category == "motion"
    direction = list(DIRECTIONS)[rng.integers(4)] if moving else None
    velocity = DIRECTIONS[direction] if moving else (0.0, 0.0)
    while True:
        if category == "color":
            sq = _pick_colors(rng, 1)
            extra = int(rng.integers(0, 3))
            kinds = ["square"] + ["circle"] * extra
            colors = sq + _pick_colors(rng, extra, exclude=sq)
            qa = (COLOR_Q, sq[0])
        elif category == "count":
            n = int(rng.integers(1, 4))
            kinds = ["circle"] * n
            colors = _pick_colors(rng, n)
            qa = (COUNT_Q, NUMBER_WORDS[n])
        elif category == "motion":
            extra = int(rng.integers(0, 2))
            kinds = ["square"] + ["circle"] * extra
            colors = _pick_colors(rng, 1 + extra)
            qa = (MOTION_Q, direction)
        elif category == "shape":
            kind = ["square", "circle"][rng.integers(2)]
            kinds, colors = [kind], _pick_colors(rng, 1)
            qa = (f"what shape is the {colors[0]} object?", kind)
        elif category == "caption":
            kind = ["square", "circle"][rng.integers(2)]
            kinds, colors = [kind], _pick_colors(rng, 1)
            qa = (PRETRAIN_QUESTION, f"a {colors[0]} {kind} on {bg}")
        else:
            raise ValueError(f"unknown category {category!r}")
        objs = _objects(rng, kinds, colors, n_frames, velocity)
        if objs is not None:
            break
    return {"background": bg, "objects": objs, "velocity": list(velocity), "direction": direction, "question": qa[0], "answer": qa[1], "category": category}


def render_clip(spec, n_frames):
    v = tuple(spec["velocity"])
    frames = []
    for t in range(n_frames):
        objs = [dict(o, x=o["x"] + v[0] * t, y=o["y"] + v[1] * t) for o in spec["objects"]]
        frames.append(render(objs, spec["background"], velocity=v if any(v) else None))
    return np.stack(frames)


def translating_clip(rng, n_frames=12, direction=None):
    """A constant-velocity clip with its layout; used by temporal-coherence checks."""
    category = ["color", "count", "motion"][rng.integers(3)]
    spec = scene_spec(rng, category, n_frames=n_frames)
    if direction is not None and spec["direction"] != direction:
        return translating_clip(rng, n_frames, direction)
    return render_clip(spec, n_frames), spec


def _split_rng(seed, split):
    return np.random.default_rng(np.random.SeedSequence([seed, SPLIT_IDS[split]]))


def _write_clip(directory, frames):
    directory.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        save_tensor(directory / f"frame_{i:03d}.cvt", f)


def make_toy_data(out_dir, seed=0, counts=None, frames=(8, 16)):
    """Write manifests and media for every stage. Returns the summary dict.

    Splits draw from independent seed streams, so the benchmark never shares
    media with any training split.
    """
    counts = {**DEFAULT_COUNTS, **(counts or {})}
    for k, v in counts.items():
        if v < 1:
            raise ValueError(f"count for {k} must be >= 1")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    hashes = {}

    rng = _split_rng(seed, "pretrain")
    recs = []
    for i in range(counts["pretrain"]):
        spec = scene_spec(rng, "caption")
        img = render(spec["objects"], spec["background"])
        name = f"images/pretrain_{i:04d}.cvt"
        save_tensor(out / name, img)
        hashes[name] = img
        recs.append({"media": name, "question": spec["question"], "answer": spec["answer"], "category": "caption", "label": spec["objects"][0]["kind"]})
    write_jsonl(out / "pretrain.jsonl", recs)

    rng = _split_rng(seed, "qa")
    recs = []
    cats = ("color", "count", "motion", "shape")
    for i in range(counts["qa"]):
        spec = scene_spec(rng, cats[i % len(cats)], moving=bool(rng.random() < 0.5))
        v = tuple(spec["velocity"])
        img = render(spec["objects"], spec["background"], velocity=v if any(v) else None)
        name = f"images/qa_{i:04d}.cvt"
        save_tensor(out / name, img)
        hashes[name] = img
        recs.append({"media": name, "question": spec["question"], "answer": spec["answer"], "category": spec["category"]})
    write_jsonl(out / "qa.jsonl", recs)

    for split, manifest, key in (("video", "video.jsonl", "media"), ("benchmark", "benchmark.jsonl", "clip_path")):
        rng = _split_rng(seed, split)
        recs = []
        for i in range(counts[split]):
            n = int(rng.integers(frames[0], frames[1] + 1))
            spec = scene_spec(rng, CATEGORIES[i % 3], n_frames=n)
            clip = render_clip(spec, n)
            vid = f"{split}_{i:03d}"
            name = f"videos/{vid}"
            _write_clip(out / name, clip)
            hashes[name] = clip
            rec = {key: name, "question": spec["question"], "answer": spec["answer"], "category": spec["category"], "video_id": vid}
            if split == "video":
                rec["n_frames"] = n
            recs.append(rec)
        write_jsonl(out / manifest, recs)

    summary = {
        "seed": seed,
        "counts": counts,
        "manifests": {"pretrain": "pretrain.jsonl", "qa": "qa.jsonl", "video": "video.jsonl", "benchmark": "benchmark.jsonl"},
        "hash": content_hash(hashes),
    }
    (out / "toydata.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
