import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vidpert.errors import UsageError
from vidpert.evaluation import degradation_report, dumps_report, load_benchmark, loads_report, majority_vote, score_model, token_accuracy
from vidpert.generator import Generator, GeneratorConfig, ZeroGenerator


def report(score, nll=1.0, bench="h", cats=None):
    cats = cats or {"color": score}
    return {
        "schema": 1,
        "benchmark_hash": bench,
        "clean": {"score": score, "mean_gt_nll": nll, "per_category": {c: {"exact_match": v} for c, v in cats.items()}},
        "attacked": None,
    }


def test_degradation_example():
    d = degradation_report(report(0.9), report(0.6, nll=2.0))
    assert d["absolute"] == pytest.approx(0.3)
    assert d["relative_percent"] == pytest.approx(33.333, abs=1e-3)
    assert d["nll_ratio"] == pytest.approx(2.0)


@given(st.floats(0.01, 1), st.floats(0, 1))
def test_degradation_antisymmetric(a, b):
    fwd = degradation_report(report(a), report(b))["absolute"]
    bwd = degradation_report(report(b), report(a))["absolute"]
    assert fwd == -bwd


def test_degradation_rejects_mixed_benchmarks():
    with pytest.raises(UsageError):
        degradation_report(report(0.5, bench="a"), report(0.5, bench="b"))


@given(st.lists(st.sampled_from(["red", "blue", "two"]), min_size=1, max_size=9))
def test_majority_vote_properties(answers):
    win = majority_vote(answers)
    counts = {a: answers.count(a) for a in answers}
    assert counts[win] == max(counts.values())
    assert win == next(a for a in answers if counts[a] == counts[win])


def test_majority_vote_examples():
    assert majority_vote(["a", "b", "b"]) == "b"
    assert majority_vote(["a", "b"]) == "a"
    with pytest.raises(UsageError):
        majority_vote([])


def test_token_accuracy():
    assert token_accuracy(b"red", b"red") == 1.0
    assert token_accuracy(b"rex", b"red") == 0.75
    assert token_accuracy(b"", b"red") == 0.0


def test_report_round_trip():
    r = report(0.5)
    assert loads_report(dumps_report(r)) == r
    with pytest.raises(UsageError):
        loads_report(json.dumps({"schema": 2}))


def test_empty_benchmark(tmp_path):
    (tmp_path / "b.jsonl").write_text("")
    with pytest.raises(UsageError):
        load_benchmark(tmp_path / "b.jsonl")


def test_zero_generator_scores_like_clean(toy_dir, frozen_models):
    surrogate, _ = frozen_models
    bench = load_benchmark(toy_dir / "benchmark.jsonl")
    rep = score_model(surrogate, bench, ZeroGenerator())
    assert rep["attacked"] == rep["clean"]
    assert rep["degradation"] == 0
    assert rep["schema"] == 1 and rep["n_items"] == 6


def test_scoring_is_deterministic(toy_dir, frozen_models):
    surrogate, _ = frozen_models
    bench = load_benchmark(toy_dir / "benchmark.jsonl")
    gen = Generator(GeneratorConfig(base=8), seed=4)
    a = dumps_report(score_model(surrogate, bench, gen))
    b = dumps_report(score_model(surrogate, bench, gen))
    assert a == b
    assert load_benchmark(toy_dir / "benchmark.jsonl")[1] == bench[1]
