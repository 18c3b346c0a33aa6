"""Acceptance criteria, each at its stated tolerance.

The end-to-end criteria (3, 4, 6, 7) share one toy pipeline driven through
the CLI: shared surrogate and auxiliary model, then the three generator
stages for each of three seeds. Verdicts print in the "acceptance criteria"
section of the pytest summary.
"""

import hashlib
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from vidpert.cli import main
from vidpert.generator import DEFAULT_EPS, Generator, GeneratorConfig, perturb
from vidpert.gradchecks import run_gradchecks
from vidpert.runtime import VideoClip, attack_video
from vidpert.temporal import FlowField, baseline_deltas, estimate_flow, nfc_aggregate, nfc_step, warp
from vidpert.toydata import render_clip, scene_spec

pytestmark = pytest.mark.acceptance

SEEDS = (0, 1, 2)
CPU_BUDGET_S = 30 * 60
# desk-scale stage lengths; everything else is the CLI default
RUN_CONFIG = {
    "pretrain": {"steps": 600},
    "finetune_qa": {"steps": 300},
    "finetune_video": {"quota": 5},
}


def cli(*argv):
    code = main([str(a) for a in argv])
    assert code == 0, f"vidpert {argv[0]} exited {code}"


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    cfg = root / "run.json"
    cfg.write_text(json.dumps(RUN_CONFIG))
    data, models = root / "data", root / "models"
    common = ("--config", cfg, "--seed", 0)

    t0 = time.process_time()
    cli("make-toy-data", "--out", data, *common)
    cli("pretrain-surrogate", "--data", data, "--out", models / "surrogate", *common)
    cli("train-aux", "--data", data, "--out", models / "aux", *common)
    shared_cpu = time.process_time() - t0

    stage_cpu = {}
    for seed in SEEDS:
        t0 = time.process_time()
        run = ("--config", cfg, "--seed", seed)
        pre, qa, full = (models / f"{name}_{seed}" for name in ("pre", "qa", "full"))
        cli("pretrain", "--data", data, "--surrogate", models / "surrogate", "--aux", models / "aux", "--out", pre, *run)
        cli("finetune-qa", "--data", data, "--checkpoint", pre, "--out", qa, *run)
        cli("finetune-video", "--data", data, "--checkpoint", qa, "--out", full, *run)
        stage_cpu[seed] = time.process_time() - t0

    t0 = time.process_time()
    bench = data / "benchmark.jsonl"
    cli("score", "--surrogate", models / "surrogate", "--benchmark", bench, "--generator", models / "full_0", "--out", root / "score.json", "--degradation", root / "degradation.json", *common)
    score_cpu = time.process_time() - t0

    for seed in SEEDS:
        cli("ablate", "--pretrain-only", models / f"pre_{seed}", "--full", models / f"full_{seed}", "--surrogate", models / "surrogate", "--benchmark", bench, "--out", root / f"ablate_{seed}.json", *common)

    return {
        "root": root,
        "models": models,
        "cpu_seconds": shared_cpu + stage_cpu[0] + score_cpu,
        "degradation": json.loads((root / "degradation.json").read_text()),
        "ablations": {s: json.loads((root / f"ablate_{s}.json").read_text()) for s in SEEDS},
    }


@pytest.fixture(scope="module")
def full_generator(pipeline):
    gen, _ = Generator.load(pipeline["models"] / "full_0")
    return gen


def test_criterion_1_gradient_integrity(criterion):
    t0 = time.perf_counter()
    report = run_gradchecks(tolerance=1e-3)
    elapsed = time.perf_counter() - t0
    worst = max(report["checks"].items(), key=lambda kv: kv[1]["max_rel_error"])
    e2e = report["checks"]["end_to_end"]["max_rel_error"]
    ok = report["passed"] and elapsed < 120
    detail = f"{len(report['checks'])} checks, end_to_end={e2e:.2e}, worst {worst[0]}={worst[1]['max_rel_error']:.2e}, {elapsed:.1f}s"
    assert criterion(1, "gradient integrity", ok, detail), detail


def test_criterion_2_constraint_soundness(criterion):
    rng = np.random.default_rng(2024)
    frames_seen = violations = 0
    worst = 0.0
    for k in range(20):
        gen = Generator(GeneratorConfig(), seed=1000 + k)
        if k % 2:
            # drive the raw output deep into tanh saturation
            gen.head.weight.data *= 1e3
            gen.head.bias.data += rng.normal(0, 50, gen.head.bias.shape).astype(np.float32)
        frames = rng.uniform(0, 1, (500, 3, 32, 32)).astype(np.float32)
        frames[:50] = np.round(frames[:50])
        for i in range(0, 500, 100):
            x = frames[i : i + 100]
            adv, delta = perturb(gen, x)
            worst = max(worst, float(np.abs(delta).max()))
            violations += int((np.abs(delta) > DEFAULT_EPS + 1e-6).any(axis=(1, 2, 3)).sum())
            violations += int(((adv < 0) | (adv > 1)).any(axis=(1, 2, 3)).sum())
            violations += int((np.abs(adv - x) > DEFAULT_EPS + 1e-6).any(axis=(1, 2, 3)).sum())
            frames_seen += len(x)
    ok = frames_seen >= 10_000 and violations == 0
    detail = f"{frames_seen} frames x 20 generators, violations={violations}, max|delta|*255={worst * 255:.6f}"
    assert criterion(2, "constraint soundness", ok, detail), detail


def test_criterion_3_attack_effectiveness(pipeline, criterion):
    d = pipeline["degradation"]
    cpu = pipeline["cpu_seconds"]
    ok = d["relative"] is not None and d["relative"] >= 0.30 and d["nll_ratio"] >= 1.5 and cpu < CPU_BUDGET_S
    detail = f"exact match {d['clean']:.3f} -> {d['attacked']:.3f} (relative drop {d['relative_percent']:.1f}%), NLL x{d['nll_ratio']:.2f}, pipeline {cpu / 60:.1f} CPU-min"
    assert criterion(3, "attack effectiveness", ok, detail), detail


def test_criterion_4_two_stage_superiority(pipeline, criterion):
    pairs = {s: (a["full"]["degradation"]["absolute"], a["pretrain_only"]["degradation"]["absolute"]) for s, a in pipeline["ablations"].items()}
    worse = [s for s, (f, p) in pairs.items() if f < p]
    ties = [s for s, (f, p) in pairs.items() if f == p]
    ok = not worse and len(ties) <= 1
    detail = ", ".join(f"seed {s}: full {f:.3f} vs pretrain-only {p:.3f}" for s, (f, p) in pairs.items())
    assert criterion(4, "two-stage superiority", ok, detail), detail


def test_criterion_5_nfc_analytic(criterion):
    rng = np.random.default_rng(5)
    d = rng.uniform(-1, 1, (3, 16, 16))
    ident = FlowField.zeros(16, 16)
    flow = FlowField.constant(16, 16, 1.5, -0.5)
    follow = nfc_step(d, warp(d, flow), flow)
    flip = nfc_step(d, -d, ident)
    mc = float(np.mean([nfc_step(rng.uniform(-1, 1, (3, 16, 16)), rng.uniform(-1, 1, (3, 16, 16)), ident) for _ in range(100)]))
    target = 1 - math.sqrt(2)
    ok = follow == 1.0 and flip == -1.0 and abs(mc - target) <= 0.05
    detail = f"follow={follow!r}, sign flip={flip!r}, noise={mc:.4f} (target {target:.4f} +- 0.05)"
    assert criterion(5, "NFC analytic suite", ok, detail), detail


def _constant_velocity_clips(n_clips=8, n_frames=12):
    rng = np.random.default_rng(6)
    return [render_clip(scene_spec(rng, "motion", n_frames=n_frames), n_frames) for _ in range(n_clips)]


def test_criterion_6_temporal_coherence(full_generator, criterion):
    ours, noise = [], []
    for i, frames in enumerate(_constant_velocity_clips()):
        flows = [estimate_flow(frames[t - 1], frames[t]) for t in range(1, len(frames))]
        _, deltas = attack_video(VideoClip(f"cv{i}", frames), full_generator)
        ours.append(nfc_aggregate(frames, deltas, flows)[0])
        base = baseline_deltas("uniform_noise", len(frames), frames.shape[1:], DEFAULT_EPS, seed=i)
        noise.append(nfc_aggregate(frames, base, flows)[0])
    ok = np.mean(ours) > 0 and np.mean(noise) < -0.2
    detail = f"generator NFC={np.mean(ours):.3f}, uniform-noise NFC={np.mean(noise):.3f} over {len(ours)} clips"
    assert criterion(6, "temporal coherence", ok, detail), detail


def _digest_tree(root):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(Path(root).rglob("*")) if p.is_file()}


def test_criterion_7_chunk_invariance(full_generator, tmp_path, criterion):
    frames = np.random.default_rng(7).uniform(0, 1, (600, 3, 32, 32)).astype(np.float32)
    clip = VideoClip("long", frames)
    dumps = {}
    for chunk in (1, 37, 300, 600):
        attack_video(clip, full_generator, chunk=chunk, out_dir=tmp_path / str(chunk))
        dumps[chunk] = _digest_tree(tmp_path / str(chunk) / "delta")
    ok = len(dumps[600]) > 0 and all(d == dumps[600] for d in dumps.values())
    detail = f"{len(dumps[600])} delta dump files compared across chunks 1/37/300/600"
    assert criterion(7, "chunk invariance", ok, detail), detail


def _smooth(shift, size=32):
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    x = x - shift
    return 0.5 + 0.25 * np.sin(2 * np.pi * x / 16) * np.cos(2 * np.pi * y / 20) + 0.1 * np.sin(2 * np.pi * (x + y) / 23)


def test_criterion_8_flow_quality(criterion):
    flow = estimate_flow(_smooth(0.0), _smooth(1.0))
    epe = float(np.hypot(flow.u - 1.0, flow.v).mean())
    ok = epe <= 0.3
    detail = f"mean endpoint error {epe:.4f} px (mean u={flow.u.mean():.3f}, v={flow.v.mean():.3f})"
    assert criterion(8, "flow quality", ok, detail), detail


def _recipe(workdir, seed):
    argv = [
        ["make-toy-data", "--out", "data", "--pretrain", "12", "--qa", "12", "--video", "2", "--benchmark", "6"],
        ["pretrain-surrogate", "--data", "data", "--out", "models/surrogate", "--steps", "20", "--batch", "4"],
        ["train-aux", "--data", "data", "--out", "models/aux", "--epochs", "2"],
        ["pretrain", "--data", "data", "--surrogate", "models/surrogate", "--aux", "models/aux", "--out", "models/pre", "--steps", "4", "--batch", "4"],
        ["finetune-qa", "--data", "data", "--checkpoint", "models/pre", "--out", "models/qa", "--steps", "4", "--batch", "4"],
        ["finetune-video", "--data", "data", "--checkpoint", "models/qa", "--out", "models/full", "--quota", "2", "--batch", "4"],
        ["attack", "--checkpoint", "models/full", "--input", "data/benchmark.jsonl", "--out", "reports/attack", "--chunk", "5"],
        ["score", "--surrogate", "models/surrogate", "--benchmark", "data/benchmark.jsonl", "--generator", "models/full", "--out", "reports/score.json", "--degradation", "reports/degradation.json"],
        ["ablate", "--pretrain-only", "models/pre", "--full", "models/full", "--surrogate", "models/surrogate", "--benchmark", "data/benchmark.jsonl", "--out", "reports/ablate.json"],
    ]
    for a in argv:
        cli(*a, "--seed", seed)
    return _digest_tree(workdir / "models"), _digest_tree(workdir / "reports")


def test_criterion_9_determinism(tmp_path, monkeypatch, criterion):
    runs = []
    for name in ("first", "second"):
        (tmp_path / name).mkdir()
        monkeypatch.chdir(tmp_path / name)
        runs.append(_recipe(tmp_path / name, seed=11))
    (m1, r1), (m2, r2) = runs
    ok = m1 == m2 and r1 == r2 and len(m1) > 0 and len(r1) > 0
    diff = sorted(k for k in set(m1) | set(r1) if m1.get(k, r1.get(k)) != m2.get(k, r2.get(k)))
    detail = f"{len(m1)} checkpoint files and {len(r1)} report files compared; differing: {diff or 'none'}"
    assert criterion(9, "determinism", ok, detail), detail
