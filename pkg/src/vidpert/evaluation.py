"""Clean-vs-attacked scoring on the toy video-QA benchmark.

A clip's answer is the majority vote of greedy answers on k uniformly
sampled frames. Scores are exact match per item; the headline score is the
unweighted mean of per-category exact-match rates.
"""

import hashlib
import json
from collections import Counter
from pathlib import Path

import numpy as np

from .autodiff import no_grad
from .errors import UsageError
from .generator import DEFAULT_EPS
from .io import encode_tensor, read_jsonl
from .runtime import DEFAULT_CHUNK, attack_video, read_clip
from .surrogate import EOS, sample_frames

SCHEMA = 1
K_FRAMES = 4


def majority_vote(answers):
    """Most frequent answer; ties go to the one seen first in frame order."""
    if not answers:
        raise UsageError("majority vote over zero answers")
    counts = Counter(answers)
    best = max(counts.values())
    return next(a for a in answers if counts[a] == best)


def token_accuracy(prediction, truth):
    """Share of ground-truth tokens (answer bytes then EOS) matched position by position."""
    gt = [*truth, EOS]
    pred = [*prediction, EOS]
    return sum(p == g for p, g in zip(pred, gt)) / len(gt)


def load_benchmark(manifest):
    """Records plus their clips, and an identity hash over manifest text and clip contents."""
    manifest = Path(manifest)
    recs = read_jsonl(manifest)
    if not recs:
        raise UsageError(f"{manifest}: empty benchmark")
    h = hashlib.sha256(manifest.read_bytes())
    items = []
    for r in recs:
        missing = {"clip_path", "question", "answer", "category"} - r.keys()
        if missing:
            raise UsageError(f"{manifest}: record lacks {sorted(missing)}: {r}")
        clip = read_clip(manifest.parent / r["clip_path"], r.get("video_id"))
        h.update(encode_tensor(clip.frames))
        items.append((r, clip))
    return items, h.hexdigest()


def _score_clip(surrogate, frames, question, answer, k):
    idx = sample_frames(len(frames), min(k, len(frames)))
    picked = frames[idx]
    with no_grad():
        visual = surrogate.encode_frame(picked)
        answers = surrogate.generate(visual, question)
        nll = surrogate.lm_nll(visual, [question] * len(idx), [answer] * len(idx)).data
    pred = majority_vote(answers)
    truth = answer.encode()
    return {
        "prediction": pred.decode("utf-8", errors="replace"),
        "frame_answers": [a.decode("utf-8", errors="replace") for a in answers],
        "exact": int(pred == truth),
        "token_accuracy": token_accuracy(pred, truth),
        "gt_nll": float(np.mean(nll, dtype=np.float64)),
    }


def _summary(rows, categories):
    per_cat = {}
    for cat in sorted(set(categories)):
        sel = [r for r, c in zip(rows, categories) if c == cat]
        per_cat[cat] = {
            "n": len(sel),
            "exact_match": sum(r["exact"] for r in sel) / len(sel),
            "token_accuracy": float(np.mean([r["token_accuracy"] for r in sel])),
            "mean_gt_nll": float(np.mean([r["gt_nll"] for r in sel])),
        }
    return {
        "score": float(np.mean([v["exact_match"] for v in per_cat.values()])),
        "token_accuracy": float(np.mean([v["token_accuracy"] for v in per_cat.values()])),
        "mean_gt_nll": float(np.mean([r["gt_nll"] for r in rows])),
        "per_category": per_cat,
    }


def score_model(surrogate, benchmark, generator=None, eps=DEFAULT_EPS, k=K_FRAMES, chunk=DEFAULT_CHUNK):
    """ScoreReport dict; with ``generator`` the clips are also scored after attack.

    ``benchmark`` is a manifest path or the ``(items, hash)`` pair from ``load_benchmark``.
    """
    items, bench_hash = load_benchmark(benchmark) if isinstance(benchmark, (str, Path)) else benchmark
    if not items:
        raise UsageError("empty benchmark")
    categories = [r["category"] for r, _ in items]
    rows = []
    clean_rows, adv_rows = [], []
    for rec, clip in items:
        row = {"clip_path": rec["clip_path"], "category": rec["category"], "question": rec["question"], "answer": rec["answer"]}
        row["clean"] = _score_clip(surrogate, clip.frames, rec["question"], rec["answer"], k)
        clean_rows.append(row["clean"])
        if generator is not None:
            adv, _ = attack_video(clip, generator, eps, chunk)
            row["attacked"] = _score_clip(surrogate, adv.frames, rec["question"], rec["answer"], k)
            adv_rows.append(row["attacked"])
        rows.append(row)
    clean = _summary(clean_rows, categories)
    attacked = _summary(adv_rows, categories) if generator is not None else None
    return {
        "schema": SCHEMA,
        "benchmark_hash": bench_hash,
        "n_items": len(items),
        "k": k,
        "eps": eps if generator is not None else None,
        "clean": clean,
        "attacked": attacked,
        "degradation": clean["score"] - attacked["score"] if attacked else None,
        "items": rows,
    }


def _headline(report):
    return report["attacked"] if report.get("attacked") else report["clean"]


def degradation_report(clean, attacked):
    """Absolute and relative drop from ``clean`` to ``attacked``, overall and per category.

    Each argument is a ScoreReport; a report that carries an attacked section
    contributes that section, otherwise its clean one.
    """
    if clean.get("benchmark_hash") != attacked.get("benchmark_hash"):
        raise UsageError("score reports come from different benchmarks")
    c, a = _headline(clean), _headline(attacked)

    def rel(drop, base):
        return drop / base if base else None

    absolute = c["score"] - a["score"]
    per_cat = {}
    for cat in sorted(c["per_category"]):
        cs, as_ = c["per_category"][cat]["exact_match"], a["per_category"][cat]["exact_match"]
        per_cat[cat] = {"clean": cs, "attacked": as_, "absolute": cs - as_, "relative": rel(cs - as_, cs)}
    relative = rel(absolute, c["score"])
    return {
        "schema": SCHEMA,
        "benchmark_hash": clean["benchmark_hash"],
        "clean": c["score"],
        "attacked": a["score"],
        "absolute": absolute,
        "relative": relative,
        "relative_percent": None if relative is None else 100.0 * relative,
        "clean_nll": c["mean_gt_nll"],
        "attacked_nll": a["mean_gt_nll"],
        "nll_ratio": a["mean_gt_nll"] / c["mean_gt_nll"] if c["mean_gt_nll"] else None,
        "per_category": per_cat,
    }


def dumps_report(report):
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def loads_report(text):
    report = json.loads(text)
    if report.get("schema") != SCHEMA:
        raise UsageError(f"unsupported report schema {report.get('schema')!r}")
    return report
