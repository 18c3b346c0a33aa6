import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from vidpert.errors import ShapeError, UsageError
from vidpert.temporal import FlowField, UndefinedStepError, baseline_deltas, estimate_flow, nfc_aggregate, nfc_step, warp


def smooth_image(h=32, w=32, shift=0.0):
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    x = x - shift
    return 0.5 + 0.25 * np.sin(2 * np.pi * x / 16) * np.cos(2 * np.pi * y / 20) + 0.1 * np.sin(2 * np.pi * (x + y) / 23)


def test_identical_frames_zero_flow():
    img = smooth_image()
    flow = estimate_flow(img, img)
    assert max(np.abs(flow.u).max(), np.abs(flow.v).max()) <= 1e-3


def test_translation_recovered():
    flow = estimate_flow(smooth_image(), smooth_image(shift=1.0))
    assert 0.7 <= flow.u.mean() <= 1.3
    assert -0.3 <= flow.v.mean() <= 0.3


def test_flow_antisymmetric():
    a, b = smooth_image(), smooth_image(shift=1.0)
    fwd, bwd = estimate_flow(a, b), estimate_flow(b, a)
    assert abs(fwd.u.mean() + bwd.u.mean()) <= 0.3
    assert abs(fwd.v.mean() + bwd.v.mean()) <= 0.3


def test_flow_shape_mismatch_and_bounds():
    with pytest.raises(ShapeError):
        estimate_flow(np.zeros((8, 8)), np.zeros((8, 9)))
    with pytest.raises(ShapeError):
        FlowField(np.zeros((2, 2)), np.zeros((3, 2)))
    rng = np.random.default_rng(0)
    f = estimate_flow(rng.uniform(0, 1, (3, 16, 16)), rng.uniform(0, 1, (3, 16, 16)))
    assert np.isfinite(f.u).all() and np.abs(f.u).max() <= 16 and np.abs(f.v).max() <= 16


def test_flow_is_deterministic():
    a, b = smooth_image(), smooth_image(shift=0.5)
    f1, f2 = estimate_flow(a, b), estimate_flow(a, b)
    assert f1.u.tobytes() == f2.u.tobytes() and f1.v.tobytes() == f2.v.tobytes()


@given(hnp.arrays(np.float32, (2, 5, 6), elements=st.floats(-1, 1, width=32)))
def test_zero_flow_warp_is_exact_copy(field):
    out = warp(field, FlowField.zeros(5, 6))
    # value-exact; blending may turn -0.0 into +0.0
    np.testing.assert_array_equal(out, field)


def test_warp_shifts_ramp_by_one_column():
    ramp = np.tile(np.arange(10, dtype=np.float64), (6, 1))[None]
    out = warp(ramp, FlowField.constant(6, 10, 1.0, 0.0))
    # out(y, x) = f(y, x - 1): interior columns hold the previous column's value
    np.testing.assert_array_equal(out[0, :, 1:], ramp[0, :, :-1])
    np.testing.assert_array_equal(out[0, :, 0], ramp[0, :, 0])


@given(
    hnp.arrays(np.float64, (1, 6, 6), elements=st.floats(-1, 1)),
    hnp.arrays(np.float64, (1, 6, 6), elements=st.floats(-1, 1)),
    st.floats(-3, 3),
    st.floats(-3, 3),
)
def test_warp_is_linear(a, b, u, v):
    flow = FlowField.constant(6, 6, u, v)
    np.testing.assert_allclose(warp(a + b, flow), warp(a, flow) + warp(b, flow), atol=1e-12)


def test_nfc_examples(rng):
    d = rng.uniform(-1, 1, (3, 8, 8))
    ident = FlowField.zeros(8, 8)
    assert nfc_step(d, d, ident) == 1.0
    assert nfc_step(d, -d, ident) == -1.0
    flow = FlowField.constant(8, 8, 0.6, -0.3)
    assert nfc_step(d, warp(d, flow), flow) == 1.0
    with pytest.raises(UndefinedStepError):
        nfc_step(d, np.zeros_like(d), ident)


def test_uniform_noise_identity_flow_monte_carlo():
    rng = np.random.default_rng(0)
    ident = FlowField.zeros(16, 16)
    vals = [nfc_step(rng.uniform(-1, 1, (3, 16, 16)), rng.uniform(-1, 1, (3, 16, 16)), ident) for _ in range(100)]
    assert abs(np.mean(vals) - (1 - math.sqrt(2))) <= 0.05


@given(hnp.arrays(np.float64, (2, 4, 4), elements=st.floats(-1, 1)), hnp.arrays(np.float64, (2, 4, 4), elements=st.floats(-1, 1)), st.floats(1e-3, 1e3))
def test_nfc_bounded_and_scale_invariant(a, b, c):
    if np.sqrt((b * b).sum()) < 1e-6:
        return
    ident = FlowField.zeros(4, 4)
    v = nfc_step(a, b, ident)
    assert v <= 1.0
    assert nfc_step(c * a, c * b, ident) == pytest.approx(v, rel=1e-9, abs=1e-9)
    # static clip: reduces to the plain relative difference
    assert v == pytest.approx(1 - np.linalg.norm(a - b) / np.linalg.norm(b), rel=1e-12, abs=1e-12)


def test_aggregate_examples(rng, caplog):
    static = np.repeat(rng.uniform(0, 1, (1, 3, 8, 8)), 5, axis=0)
    fixed = baseline_deltas("fixed_pattern", 5, (3, 8, 8), 0.1, seed=1)
    assert all(f.tobytes() == fixed[0].tobytes() for f in fixed)
    assert nfc_aggregate(static, fixed)[0] == 1.0
    noise = baseline_deltas("uniform_noise", 5, (3, 8, 8), 0.1, seed=1)
    assert np.abs(noise).max() <= 0.1
    assert nfc_aggregate(static, noise)[0] < 0
    with pytest.raises(UsageError):
        nfc_aggregate(static[:1], fixed[:1])
    with pytest.raises(UsageError):
        baseline_deltas("uniform_noise", 2, (1, 2, 2), 0.0)
    with pytest.raises(UsageError):
        baseline_deltas("gaussian", 2, (1, 2, 2), 0.1)
    zeroed = fixed.copy()
    zeroed[2] = 0
    with caplog.at_level(logging.WARNING):
        mean, series = nfc_aggregate(static, zeroed)
    assert series[1] is None and "skipping" in caplog.text
    assert mean == pytest.approx(np.mean([s for s in series if s is not None]))


def test_aggregate_bit_identical_across_runs(rng):
    clip = np.stack([smooth_image(16, 16, s) for s in range(4)])[:, None].repeat(3, axis=1)
    deltas = rng.uniform(-0.05, 0.05, clip.shape)
    assert nfc_aggregate(clip, deltas) == nfc_aggregate(clip, deltas)
