import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from vidpert.autodiff import Tensor, gradcheck, no_grad
from vidpert.autodiff import functional as F
from vidpert.errors import ShapeError, UsageError
from vidpert.generator import DEFAULT_EPS, Generator, GeneratorConfig, apply, perturb, project_linf


@pytest.fixture(scope="module")
def gen():
    return Generator(seed=0)


def test_shapes(gen, rng):
    x = rng.uniform(0, 1, (2, 3, 32, 32)).astype(np.float32)
    with no_grad():
        assert gen(x).shape == (2, 3, 32, 32)
        assert gen(rng.uniform(0, 1, (1, 3, 12, 20)).astype(np.float32)).shape == (1, 3, 12, 20)


def test_identical_frames_identical_outputs(gen, rng):
    f = rng.uniform(0, 1, (3, 32, 32)).astype(np.float32)
    with no_grad():
        out = gen(np.stack([f, f])).data
    assert out[0].tobytes() == out[1].tobytes()


@pytest.mark.parametrize("shape", [(1, 3, 30, 32), (1, 3, 32, 10), (3, 32, 32), (1, 1, 32, 32)])
def test_bad_dims(gen, shape):
    with pytest.raises(ShapeError):
        gen(np.zeros(shape, dtype=np.float32))


def test_project_linf_examples():
    assert project_linf(Tensor([0.0])).data[0] == 0.0
    assert project_linf(Tensor([50.0])).data[0] == pytest.approx(DEFAULT_EPS, abs=1e-7)
    assert project_linf(Tensor(np.array([1.0]))).data[0] == pytest.approx(0.047786, abs=1e-6)
    assert project_linf(Tensor(np.array([1.0]))).data[0] == pytest.approx(16 / 255 * math.tanh(1.0), rel=1e-6)
    with pytest.raises(UsageError):
        project_linf(Tensor([1.0]), eps=0.0)


def test_apply_examples():
    frames = Tensor(np.array([[0.2, 1.0]], dtype=np.float32))
    np.testing.assert_array_equal(apply(frames, Tensor(np.zeros((1, 2), dtype=np.float32))).data, frames.data)
    assert apply(frames, Tensor(np.full((1, 2), 16 / 255, dtype=np.float32))).data[0, 1] == 1.0
    with pytest.raises(ShapeError):
        apply(frames, Tensor(np.zeros((2, 2), dtype=np.float32)))


@given(
    hnp.arrays(np.float32, (2, 3, 4, 4), elements=st.floats(0, 1, width=32)),
    hnp.arrays(np.float32, (2, 3, 4, 4), elements=st.floats(-1e4, 1e4, width=32)),
)
def test_linf_bound_property(frames, raw):
    delta = project_linf(Tensor(raw))
    adv = apply(Tensor(frames), delta).data
    assert np.abs(delta.data).max() <= DEFAULT_EPS + 1e-6
    assert np.abs(adv - frames).max() <= DEFAULT_EPS + 1e-6
    assert adv.min() >= 0.0 and adv.max() <= 1.0


@given(st.integers(0, 2**31 - 1), st.lists(st.integers(1, 5), min_size=1, max_size=4))
def test_partition_invariance(seed, parts):
    g = Generator(GeneratorConfig(base=4), seed=seed % 7)
    frames = np.random.default_rng(seed).uniform(0, 1, (sum(parts), 3, 8, 8)).astype(np.float32)
    _, whole = perturb(g, frames)
    pieces, start = [], 0
    for p in parts:
        pieces.append(perturb(g, frames[start : start + p])[1])
        start += p
    assert np.concatenate(pieces).tobytes() == whole.tobytes()


def test_generate_raw_gradcheck_wrt_theta():
    def build(rng):
        g = Generator(GeneratorConfig(base=4), seed=1)
        g.astype(np.float64)
        x = Tensor(rng.uniform(0, 1, (1, 3, 8, 8)))
        return (lambda: F.sum(g.generate_raw(x))), dict(g.named_parameters())

    rep = gradcheck(build, tolerance=1e-3, h=1e-6, max_coords=12)
    assert rep.passed, rep.as_dict()


def test_checkpoint_round_trip(tmp_path, gen, rng):
    gen.save(tmp_path / "g", eps=0.05)
    back, meta = Generator.load(tmp_path / "g")
    assert meta["eps"] == 0.05 and meta["kind"] == "generator"
    x = rng.uniform(0, 1, (2, 3, 32, 32)).astype(np.float32)
    assert perturb(gen, x)[1].tobytes() == perturb(back, x)[1].tobytes()


def test_load_rejects_other_kinds(tmp_path):
    from vidpert.objective import AuxModel

    AuxModel(seed=0).save(tmp_path / "aux")
    with pytest.raises(UsageError):
        Generator.load(tmp_path / "aux")
