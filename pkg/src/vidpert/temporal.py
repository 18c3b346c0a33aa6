"""Optical flow, warping and the Normalized Flow Consistency (NFC) metric.

NFC at step t is ``1 - ||W(d_{t-1}) - d_t|| / ||d_t||`` where W warps the
previous perturbation along the flow estimated between the clean frames.
It equals 1 when perturbations follow the scene motion exactly.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ShapeError, UsageError

log = logging.getLogger(__name__)

HS_ALPHA = 10.0
HS_ITERS = 100


@dataclass
class FlowField:
    """Per-pixel displacement (pixels) from frame t-1 to frame t; ``u`` is horizontal."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.v.shape:
            raise ShapeError(f"flow components differ in shape: {self.u.shape} vs {self.v.shape}")

    @property
    def shape(self):
        return self.u.shape

    @classmethod
    def zeros(cls, h, w):
        return cls(np.zeros((h, w)), np.zeros((h, w)))

    @classmethod
    def constant(cls, h, w, u, v):
        return cls(np.full((h, w), float(u)), np.full((h, w), float(v)))


def _gray255(frame):
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 3:
        frame = frame.mean(axis=0)
    # intensities in 8-bit units so that alpha=10 is on the scale it was tuned for
    return frame * 255.0


def estimate_flow(frame_prev, frame_next, alpha=HS_ALPHA, iters=HS_ITERS):
    """Horn-Schunck flow between two (C, H, W) or (H, W) frames, zero-initialised."""
    a, b = _gray255(frame_prev), _gray255(frame_next)
    if a.shape != b.shape:
        raise ShapeError(f"frames differ in shape: {a.shape} vs {b.shape}")
    u, v = _kernels.horn_schunck(a, b, alpha, iters)
    h, w = a.shape
    return FlowField(np.clip(u, -w, w), np.clip(v, -h, h))


def warp(field, flow):
    """Backward bilinear warp of a (C, H, W) field along ``flow`` with border replication."""
    field = np.asarray(field)
    squeeze = field.ndim == 2
    if squeeze:
        field = field[None]
    if field.shape[1:] != flow.shape:
        raise ShapeError(f"field {field.shape} and flow {flow.shape} disagree")
    out = _kernels.bilinear_warp(field, flow.u, flow.v)
    return out[0] if squeeze else out


class UndefinedStepError(UsageError):
    pass


def nfc_step(delta_prev, delta_next, flow):
    warped = warp(delta_prev, flow).astype(np.float64)
    nxt = np.asarray(delta_next, dtype=np.float64)
    denom = np.sqrt((nxt * nxt).sum())
    if denom == 0.0:
        raise UndefinedStepError("NFC undefined: current perturbation has zero norm")
    diff = warped - nxt
    return float(1.0 - np.sqrt((diff * diff).sum()) / denom)


def nfc_aggregate(clean_frames, deltas, flows=None):
    """Mean NFC over t = 2..N with flows from the clean frames.

    Returns ``(mean, series)``; ``series`` has None for skipped zero-norm steps.
    """
    clean_frames = np.asarray(clean_frames)
    deltas = np.asarray(deltas)
    n = len(clean_frames)
    if n < 2:
        raise UsageError(f"NFC needs at least two frames, got {n}")
    if deltas.shape != clean_frames.shape:
        raise ShapeError(f"deltas {deltas.shape} do not match frames {clean_frames.shape}")
    if flows is None:
        flows = [estimate_flow(clean_frames[t - 1], clean_frames[t]) for t in range(1, n)]
    series = []
    for t in range(1, n):
        try:
            series.append(nfc_step(deltas[t - 1], deltas[t], flows[t - 1]))
        except UndefinedStepError:
            log.warning("skipping NFC step %d: zero-norm perturbation", t)
            series.append(None)
    valid = [s for s in series if s is not None]
    if not valid:
        raise UsageError("every NFC step was undefined")
    return float(np.mean(valid)), series


def baseline_deltas(kind, n_frames, frame_shape, eps, seed=0):
    """Comparison perturbations: fresh U(-eps, eps) noise per frame, or one noise pattern repeated."""
    if eps <= 0:
        raise UsageError(f"eps must be positive, got {eps}")
    rng = np.random.default_rng(seed)
    shape = (n_frames, *frame_shape)
    if kind == "uniform_noise":
        return rng.uniform(-eps, eps, size=shape).astype(np.float32)
    if kind == "fixed_pattern":
        pattern = rng.uniform(-eps, eps, size=frame_shape).astype(np.float32)
        return np.broadcast_to(pattern, shape).copy()
    raise UsageError(f"unknown baseline {kind!r}")
