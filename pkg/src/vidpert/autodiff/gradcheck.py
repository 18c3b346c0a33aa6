"""Analytic-vs-central-difference gradient comparison."""

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tape, Tensor, no_grad, precision, use_tape


@dataclass
class LeafReport:
    name: str
    max_rel_error: float
    checked: int


@dataclass
class GradcheckReport:
    tolerance: float
    leaves: list = field(default_factory=list)

    @property
    def max_rel_error(self):
        return max((leaf.max_rel_error for leaf in self.leaves), default=0.0)

    @property
    def passed(self):
        return all(leaf.max_rel_error <= self.tolerance for leaf in self.leaves)

    def as_dict(self):
        return {
            "tolerance": self.tolerance,
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "leaves": {leaf.name: {"max_rel_error": leaf.max_rel_error, "checked": leaf.checked} for leaf in self.leaves},
        }


def _rel_error(analytic, numeric):
    # normalised by the leaf's gradient scale so near-zero entries do not dominate
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def gradcheck(builder, tolerance=1e-3, h=1e-3, seed=0, max_coords=None, dtype=np.float64):
    """Compare backprop against central differences for every leaf ``builder`` exposes.

    ``builder(rng)`` must return ``(fn, leaves)`` where ``leaves`` maps names to
    requires-grad tensors and ``fn()`` rebuilds the scalar loss from them.
    With ``max_coords`` set, only that many seeded random coordinates are
    probed per leaf (the analytic gradient is still computed in full).
    """
    rng = np.random.default_rng(seed)
    report = GradcheckReport(tolerance=tolerance)
    with precision(dtype):
        fn, leaves = builder(rng)
        for t in leaves.values():
            t.data = t.data.astype(dtype)
            t.grad = None
        with use_tape(Tape()) as tape:
            loss = fn()
            tape.backward(loss)
        analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}

        with no_grad():
            for name, t in leaves.items():
                flat = t.data.reshape(-1)
                coords = np.arange(flat.size)
                if max_coords is not None and flat.size > max_coords:
                    coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
                numeric = np.empty(len(coords))
                for j, i in enumerate(coords):
                    orig = flat[i]
                    flat[i] = orig + h
                    fp = fn().item()
                    flat[i] = orig - h
                    fm = fn().item()
                    flat[i] = orig
                    numeric[j] = (fp - fm) / (2 * h)
                err = _rel_error(analytic[name].reshape(-1)[coords], numeric)
                report.leaves.append(LeafReport(name, err, len(coords)))
    return report


def leaf(rng, *shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)
