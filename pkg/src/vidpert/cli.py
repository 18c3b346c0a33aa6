"""``vidpert`` command line: toy data, model training, attack, metrics and scoring.

Exit codes: 0 success, 2 usage, 3 I/O, 4 numeric failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import LoadError, NumericError, ParseError, ShapeError, TrainingError, UsageError
from .generator import DEFAULT_EPS, Generator
from .io import load_tensor, read_jsonl
from .runtime import DEFAULT_CHUNK, AttackJob, read_clip, read_deltas, run_attack_job
from .surrogate import sample_frames
from .toydata import DEFAULT_COUNTS

log = logging.getLogger("vidpert")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULTS = {
    "seed": 0,
    "eps": DEFAULT_EPS,
    "toy": dict(DEFAULT_COUNTS),
    "surrogate": {"steps": 1500, "batch": 16, "lr": 1e-3, "frames_per_video": 4},
    "aux": {"epochs": 100, "adversarial": True, "eps": 8 / 255},
    "pretrain": {"steps": 2000, "batch": 8, "lr": 1e-4},
    "finetune_qa": {"steps": 500, "batch": 8, "lr": 1e-4},
    "finetune_video": {"quota": 50, "batch": 8, "lr": 1e-4},
    "weights": {"lambda1": 0.1, "lambda2": 20.0, "lambda3": 10.0},
}


def _merge(base, override):
    out = dict(base)
    for k, v in override.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_config(path):
    """Defaults overlaid with a JSON run config (stage blocks merge key by key)."""
    if path is None:
        return json.loads(json.dumps(DEFAULTS))
    try:
        user = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", offset=exc.pos) from None
    if not isinstance(user, dict):
        raise UsageError(f"{path}: run config must be a JSON object")
    return _merge(DEFAULTS, user)


def _stage_block(cfg, name, args):
    block = dict(cfg[name])
    for key in ("steps", "batch", "lr", "quota"):
        val = getattr(args, key, None)
        if val is not None:
            block[key] = val
    return block


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_frozen(args, meta=None):
    from .training import load_frozen

    meta = meta or {}
    surrogate_dir = args.surrogate or meta.get("surrogate_dir")
    aux_dir = args.aux or meta.get("aux_dir")
    if not surrogate_dir or not aux_dir:
        raise UsageError("--surrogate and --aux checkpoints are required")
    surrogate, aux = load_frozen(surrogate_dir, aux_dir)
    return surrogate, aux, {"surrogate_dir": str(surrogate_dir), "aux_dir": str(aux_dir)}


def cmd_make_toy_data(args, cfg):
    from .toydata import make_toy_data

    counts = dict(cfg["toy"])
    for split in counts:
        val = getattr(args, split, None)
        if val is not None:
            counts[split] = val
    summary = make_toy_data(args.out, seed=cfg["seed"], counts=counts)
    print(json.dumps(summary, sort_keys=True))


def _surrogate_samples(data, frames_per_video):
    data = Path(data)
    samples = []
    for manifest in ("pretrain.jsonl", "qa.jsonl"):
        for r in read_jsonl(data / manifest):
            samples.append((load_tensor(data / r["media"]), r["question"], r["answer"]))
    for r in read_jsonl(data / "video.jsonl"):
        clip = read_clip(data / r["media"]).frames
        for i in sample_frames(len(clip), min(frames_per_video, len(clip))):
            samples.append((clip[i], r["question"], r["answer"]))
    return samples


def cmd_pretrain_surrogate(args, cfg):
    from .surrogate import pretrain_surrogate

    block = _stage_block(cfg, "surrogate", args)
    samples = _surrogate_samples(args.data, block["frames_per_video"])
    model, report = pretrain_surrogate(samples, steps=block["steps"], seed=cfg["seed"], batch=block["batch"], lr=block["lr"])
    model.save(args.out, training=report, seed=cfg["seed"])
    print(json.dumps(report, sort_keys=True))


def cmd_train_aux(args, cfg):
    from .objective import train_aux_model

    block = dict(cfg["aux"])
    if args.epochs is not None:
        block["epochs"] = args.epochs
    if args.no_adversarial:
        block["adversarial"] = False
    data = Path(args.data)
    recs = read_jsonl(data / "pretrain.jsonl")
    images = np.stack([load_tensor(data / r["media"]) for r in recs])
    classes = sorted({r["label"] for r in recs})
    labels = np.array([classes.index(r["label"]) for r in recs])
    model, report = train_aux_model(images, labels, block["epochs"], seed=cfg["seed"], adversarial=block["adversarial"], eps=block["eps"])
    model.save(args.out, training=report, classes=classes, seed=cfg["seed"])
    print(json.dumps(report, sort_keys=True))


def _stage_config(kind, manifest, block, cfg):
    from .training import StageConfig

    kw = {k: block[k] for k in ("steps", "batch", "lr", "schedule", "quota") if k in block}
    return StageConfig(kind=kind, manifest=str(manifest), seed=cfg["seed"], eps=cfg["eps"], weights=cfg["weights"], **kw)


def _finish_stage(result, args, refs):
    result.meta.update(refs)
    digest = result.save(args.out)
    print(json.dumps({"checkpoint": str(args.out), "content_hash": digest, "provenance": result.meta["provenance"], "final": result.history[-1] if result.history else None}, sort_keys=True))


def _log_path(args):
    return args.log if args.log else Path(args.out) / "train_log.jsonl"


def _fresh_log(path):
    # a stage rewrites its own log; lines are only ever appended while it runs
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("")
    return path


def cmd_pretrain(args, cfg):
    from .training import run_pretrain

    surrogate, aux, refs = _load_frozen(args)
    stage = _stage_config("pretrain", Path(args.data) / "pretrain.jsonl", _stage_block(cfg, "pretrain", args), cfg)
    result = run_pretrain(stage, surrogate, aux, log_path=_fresh_log(_log_path(args)))
    _finish_stage(result, args, refs)


def _load_generator(path):
    return Generator.load(path)


def cmd_finetune_qa(args, cfg):
    from .training import run_finetune_qa

    gen, meta = _load_generator(args.checkpoint)
    surrogate, aux, refs = _load_frozen(args, meta)
    stage = _stage_config("finetune_qa", Path(args.data) / "qa.jsonl", _stage_block(cfg, "finetune_qa", args), cfg)
    result = run_finetune_qa(stage, gen, meta, surrogate, aux, _fresh_log(_log_path(args)), args.allow_any_provenance)
    _finish_stage(result, args, refs)


def cmd_finetune_video(args, cfg):
    from .training import run_finetune_video

    gen, meta = _load_generator(args.checkpoint)
    surrogate, aux, refs = _load_frozen(args, meta)
    stage = _stage_config("finetune_video", Path(args.data) / "video.jsonl", _stage_block(cfg, "finetune_video", args), cfg)
    result = run_finetune_video(stage, gen, meta, surrogate, aux, _fresh_log(_log_path(args)), args.allow_any_provenance)
    _finish_stage(result, args, refs)


def cmd_attack(args, cfg):
    job = AttackJob(checkpoint=args.checkpoint, eps=args.eps, chunk=args.chunk, out_dir=args.out, png=args.png, manifest=args.input)
    report = run_attack_job(job)
    print(json.dumps({"clips": len(report["clips"]), "eps": report["eps"], "out": str(args.out)}, sort_keys=True))


def cmd_nfc(args, cfg):
    from .temporal import baseline_deltas, estimate_flow, nfc_aggregate

    clean = read_clip(args.clean).frames
    deltas = read_deltas(args.deltas)
    flows = [estimate_flow(clean[t - 1], clean[t]) for t in range(1, len(clean))]
    mean, series = nfc_aggregate(clean, deltas, flows)
    report = {"schema": 1, "frames": len(clean), "nfc": mean, "series": series}
    if args.baseline:
        eps = args.eps if args.eps is not None else float(np.abs(deltas).max()) or cfg["eps"]
        base = baseline_deltas(args.baseline, len(clean), clean.shape[1:], eps, seed=cfg["seed"])
        b_mean, b_series = nfc_aggregate(clean, base, flows)
        report["baseline"] = {"kind": args.baseline, "eps": eps, "nfc": b_mean, "series": b_series}
    _write_json(args.out, report)
    print(json.dumps({k: report[k] for k in ("frames", "nfc")} | ({"baseline_nfc": report["baseline"]["nfc"]} if args.baseline else {}), sort_keys=True))


def cmd_score(args, cfg):
    from .evaluation import degradation_report, score_model
    from .surrogate import Surrogate

    surrogate, _ = Surrogate.load(args.surrogate)
    gen, eps = None, cfg["eps"]
    if args.generator:
        gen, meta = _load_generator(args.generator)
        eps = args.eps if args.eps is not None else meta.get("eps", eps)
    report = score_model(surrogate, args.benchmark, gen, eps=eps)
    _write_json(args.out, report)
    summary = {"clean": report["clean"]["score"]}
    if gen is not None:
        deg = degradation_report({**report, "attacked": None}, report)
        summary.update(attacked=report["attacked"]["score"], degradation=deg["absolute"], relative=deg["relative"], nll_ratio=deg["nll_ratio"])
        if args.degradation:
            _write_json(args.degradation, deg)
    print(json.dumps(summary, sort_keys=True))


def cmd_ablate(args, cfg):
    from .surrogate import Surrogate
    from .training import run_ablation

    surrogate, _ = Surrogate.load(args.surrogate)
    report = run_ablation(args.pretrain_only, args.full, surrogate, args.benchmark, eps=args.eps)
    _write_json(args.out, report)
    print(json.dumps({"pretrain_only": report["pretrain_only"]["degradation"]["absolute"], "full": report["full"]["degradation"]["absolute"], "difference": report["difference"]["absolute"]}, sort_keys=True))


def cmd_gradcheck(args, cfg):
    from .gradchecks import run_gradchecks

    report = run_gradchecks(tolerance=args.tolerance, seed=cfg["seed"], end_to_end=not args.skip_end_to_end)
    for name, r in report["checks"].items():
        print(f"{name:20s} {'PASS' if r['passed'] else 'FAIL'}  max_rel_error={r['max_rel_error']:.3e}")
    if args.out:
        _write_json(args.out, report)
    if not report["passed"]:
        raise NumericError("gradient check failed")


COMMANDS = {
    "make-toy-data": cmd_make_toy_data,
    "pretrain-surrogate": cmd_pretrain_surrogate,
    "train-aux": cmd_train_aux,
    "pretrain": cmd_pretrain,
    "finetune-qa": cmd_finetune_qa,
    "finetune-video": cmd_finetune_video,
    "attack": cmd_attack,
    "nfc": cmd_nfc,
    "score": cmd_score,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config overriding the defaults")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="vidpert", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common])

    def stage_args(p, quota=False):
        p.add_argument("--data", required=True, help="toy data directory")
        p.add_argument("--surrogate", help="frozen surrogate checkpoint")
        p.add_argument("--aux", help="frozen auxiliary checkpoint")
        p.add_argument("--out", required=True, help="output checkpoint directory")
        p.add_argument("--steps", type=int)
        p.add_argument("--batch", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--log", help="training log JSONL (default: <out>/train_log.jsonl)")
        if quota:
            p.add_argument("--quota", type=int, help="batches drawn per video")

    p = add("make-toy-data", "write synthetic manifests, images and clips")
    p.add_argument("--out", required=True)
    for split in DEFAULTS["toy"]:
        p.add_argument(f"--{split}", type=int, help=f"number of {split} items")

    p = add("pretrain-surrogate", "train the frozen surrogate on the toy data")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)

    p = add("train-aux", "train the auxiliary feature CNN")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--no-adversarial", action="store_true", help="plain training (control model)")

    stage_args(add("pretrain", "generator stage 1: captions with the fixed question"))
    for name, quota in (("finetune-qa", False), ("finetune-video", True)):
        p = add(name, f"generator stage: {name}")
        p.add_argument("--checkpoint", required=True, help="generator checkpoint from the previous stage")
        stage_args(p, quota)
        p.add_argument("--allow-any-provenance", action="store_true", help="skip the stage-order check")

    p = add("attack", "perturb a clip, a frame directory or a manifest of clips")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eps", type=float)
    p.add_argument("--chunk", type=int, default=DEFAULT_CHUNK)
    p.add_argument("--png", action="store_true", help="also write 8-bit PNG frames")

    p = add("nfc", "temporal coherence of a perturbation sequence")
    p.add_argument("--clean", required=True)
    p.add_argument("--deltas", required=True)
    p.add_argument("--baseline", choices=("uniform_noise", "fixed_pattern"))
    p.add_argument("--eps", type=float, help="baseline amplitude (default: max |delta|)")
    p.add_argument("--out", required=True)

    p = add("score", "exact-match scoring, optionally under attack")
    p.add_argument("--surrogate", required=True)
    p.add_argument("--benchmark", required=True)
    p.add_argument("--generator")
    p.add_argument("--eps", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--degradation", help="also write the degradation report here")

    p = add("ablate", "pretrain-only vs full-pipeline degradation")
    p.add_argument("--pretrain-only", required=True)
    p.add_argument("--full", required=True)
    p.add_argument("--surrogate", required=True)
    p.add_argument("--benchmark", required=True)
    p.add_argument("--eps", type=float)
    p.add_argument("--out", required=True)

    p = add("gradcheck", "finite-difference check of every primitive and the full objective")
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--skip-end-to-end", action="store_true")
    p.add_argument("--out")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        COMMANDS[args.command](args, cfg)
    except (UsageError, ShapeError) as exc:
        print(f"vidpert {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, TrainingError, FloatingPointError) as exc:
        print(f"vidpert {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (LoadError, ParseError, OSError, json.JSONDecodeError) as exc:
        print(f"vidpert {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
