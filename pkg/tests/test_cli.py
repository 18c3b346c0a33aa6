import json

import numpy as np
import pytest

from vidpert.cli import main
from vidpert.generator import Generator, GeneratorConfig
from vidpert.io import save_tensor


@pytest.fixture
def ckpt(tmp_path):
    Generator(GeneratorConfig(base=8), seed=0).save(tmp_path / "gen", eps=16 / 255)
    return tmp_path / "gen"


def test_unknown_command_and_flag(ckpt, tmp_path):
    assert main(["bogus"]) == 2
    assert main(["attack", "--checkpoint", str(ckpt), "--input", "x", "--out", "y", "--frobnicate"]) == 2


def test_attack_exit_codes(ckpt, tmp_path):
    clip = np.random.default_rng(0).uniform(0, 1, (3, 3, 16, 16)).astype(np.float32)
    save_tensor(tmp_path / "clip.cvt", clip)
    assert main(["attack", "--checkpoint", str(ckpt), "--input", str(tmp_path / "clip.cvt"), "--out", str(tmp_path / "o")]) == 0
    assert main(["attack", "--checkpoint", str(ckpt), "--input", str(tmp_path / "missing.cvt"), "--out", str(tmp_path / "o2")]) == 3
    assert main(["attack", "--checkpoint", str(tmp_path / "nockpt"), "--input", str(tmp_path / "clip.cvt"), "--out", str(tmp_path / "o3")]) == 3
    assert main(["attack", "--checkpoint", str(ckpt), "--input", str(tmp_path / "clip.cvt"), "--out", str(tmp_path / "o4"), "--chunk", "0"]) == 2
    clip[1, 0, 2, 2] = np.nan
    save_tensor(tmp_path / "nan.cvt", clip)
    assert main(["attack", "--checkpoint", str(ckpt), "--input", str(tmp_path / "nan.cvt"), "--out", str(tmp_path / "o5")]) == 4


def test_bad_config_is_io_error(tmp_path):
    (tmp_path / "cfg.json").write_text("{not json")
    assert main(["make-toy-data", "--out", str(tmp_path / "d"), "--config", str(tmp_path / "cfg.json")]) == 3


def test_nfc_command(tmp_path, ckpt):
    rng = np.random.default_rng(0)
    clean = rng.uniform(0, 1, (4, 3, 16, 16)).astype(np.float32)
    save_tensor(tmp_path / "clean.cvt", clean)
    save_tensor(tmp_path / "deltas.cvt", np.repeat(rng.uniform(-0.05, 0.05, (1, 3, 16, 16)), 4, axis=0).astype(np.float32))
    out = tmp_path / "nfc.json"
    assert main(["nfc", "--clean", str(tmp_path / "clean.cvt"), "--deltas", str(tmp_path / "deltas.cvt"), "--baseline", "uniform_noise", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["frames"] == 4 and len(rep["series"]) == 3 and rep["baseline"]["nfc"] < rep["nfc"]


def _recipe(root, seed):
    d, m = root / "data", root / "models"
    steps = [
        ["make-toy-data", "--out", str(d), "--pretrain", "8", "--qa", "8", "--video", "2", "--benchmark", "3"],
        ["pretrain-surrogate", "--data", str(d), "--out", str(m / "surrogate"), "--steps", "3", "--batch", "4"],
        ["train-aux", "--data", str(d), "--out", str(m / "aux"), "--epochs", "1"],
        ["pretrain", "--data", str(d), "--surrogate", str(m / "surrogate"), "--aux", str(m / "aux"), "--out", str(m / "pre"), "--steps", "2", "--batch", "4"],
        ["finetune-qa", "--data", str(d), "--checkpoint", str(m / "pre"), "--out", str(m / "qa"), "--steps", "2", "--batch", "4"],
        ["finetune-video", "--data", str(d), "--checkpoint", str(m / "qa"), "--out", str(m / "full"), "--quota", "1", "--batch", "4"],
        ["score", "--surrogate", str(m / "surrogate"), "--benchmark", str(d / "benchmark.jsonl"), "--generator", str(m / "full"), "--out", str(root / "score.json")],
        ["ablate", "--pretrain-only", str(m / "pre"), "--full", str(m / "full"), "--surrogate", str(m / "surrogate"), "--benchmark", str(d / "benchmark.jsonl"), "--out", str(root / "ablate.json")],
    ]
    for argv in steps:
        assert main([*argv, "--seed", str(seed)]) == 0, argv


def test_recipe_smoke(tmp_path):
    _recipe(tmp_path, 0)
    meta = json.loads((tmp_path / "models" / "full" / "meta.json").read_text())
    assert meta["provenance"] == ["pretrain", "finetune_qa", "finetune_video"]
    score = json.loads((tmp_path / "score.json").read_text())
    assert score["schema"] == 1 and score["attacked"] is not None
    log = (tmp_path / "models" / "full" / "train_log.jsonl").read_text().splitlines()
    assert len(log) == 2
