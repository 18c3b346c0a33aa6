"""Seeded gradient checks for every differentiable primitive and for the full attack objective."""

import time

import numpy as np

from .autodiff import functional as F
from .autodiff.gradcheck import gradcheck, leaf
from .autodiff.tensor import Tensor
from .generator import Generator, apply
from .objective import AuxModel, total_objective
from .surrogate import Surrogate, SurrogateConfig


def _primitive_builders():
    def unary(op, shape=(3, 4), **kw):
        def build(rng):
            x = leaf(rng, *shape)
            w = Tensor(rng.standard_normal(shape))
            return (lambda: F.sum(F.mul(op(x, **kw), w))), {"x": x}

        return build

    def binary(op, sa=(3, 4), sb=(3, 4)):
        def build(rng):
            a, b = leaf(rng, *sa), leaf(rng, *sb, low=0.5, high=1.5)
            w = Tensor(rng.standard_normal(np.broadcast_shapes(sa, sb)))
            return (lambda: F.sum(F.mul(op(a, b), w))), {"a": a, "b": b}

        return build

    def matmul(rng):
        a, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 5)
        w = Tensor(rng.standard_normal((2, 3, 5)))
        return (lambda: F.sum(F.mul(F.matmul(a, b), w))), {"a": a, "b": b}

    def conv(stride):
        def build(rng):
            x, k, b = leaf(rng, 1, 3, 8, 8), leaf(rng, 4, 3, 3, 3), leaf(rng, 4)
            ho = (8 + 2 - 3) // stride + 1
            w = Tensor(rng.standard_normal((1, 4, ho, ho)))
            return (lambda: F.sum(F.mul(F.conv2d(x, k, b, stride=stride, pad=1), w))), {"x": x, "weight": k, "bias": b}

        return build

    def layernorm(rng):
        x, g, b = leaf(rng, 2, 16), leaf(rng, 16), leaf(rng, 16)
        w = Tensor(rng.standard_normal((2, 16)))
        return (lambda: F.sum(F.mul(F.layernorm(x, g, b), w))), {"x": x, "gamma": g, "beta": b}

    def embedding(rng):
        table = leaf(rng, 10, 4)
        ids = np.array([[1, 3, 3], [0, 9, 1]])
        w = Tensor(rng.standard_normal((2, 3, 4)))
        return (lambda: F.sum(F.mul(F.embedding_lookup(table, ids), w))), {"table": table}

    def concat(rng):
        a, b = leaf(rng, 2, 3), leaf(rng, 2, 2)
        w = Tensor(rng.standard_normal((2, 5)))
        return (lambda: F.sum(F.mul(F.concat([a, b], axis=1), w))), {"a": a, "b": b}

    def reduce(op):
        def build(rng):
            x = leaf(rng, 3, 4, 2)
            w = Tensor(rng.standard_normal((3, 2)))
            return (lambda: F.sum(F.mul(op(x, axis=1), w))), {"x": x}

        return build

    def upsample(rng):
        x = leaf(rng, 1, 2, 3, 3)
        w = Tensor(rng.standard_normal((1, 2, 6, 6)))
        return (lambda: F.sum(F.mul(F.nearest_upsample2x(x), w))), {"x": x}

    def instance_norm(rng):
        x = leaf(rng, 2, 3, 4, 4)
        w = Tensor(rng.standard_normal((2, 3, 4, 4)))
        return (lambda: F.sum(F.mul(F.instance_norm(x), w))), {"x": x}

    def reshape(rng):
        x = leaf(rng, 3, 4)
        w = Tensor(rng.standard_normal((2, 6)))
        return (lambda: F.sum(F.mul(F.reshape(x, (2, 6)), w))), {"x": x}

    def relu(rng):
        # keep inputs away from the kink where central differences are meaningless
        x = Tensor(rng.choice([-1.0, 1.0], size=(3, 4)) * rng.uniform(0.1, 1.0, size=(3, 4)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 4)))
        return (lambda: F.sum(F.mul(F.relu(x), w))), {"x": x}

    return {
        "add": binary(F.add, (3, 4), (4,)),
        "sub": binary(F.sub, (3, 4), (3, 1)),
        "mul": binary(F.mul),
        "matmul": matmul,
        "conv2d": conv(1),
        "conv2d_stride2": conv(2),
        "nearest_upsample2x": upsample,
        "relu": relu,
        "tanh": unary(F.tanh),
        "gelu": unary(F.gelu),
        "layernorm": layernorm,
        "instance_norm": instance_norm,
        "softmax": unary(F.softmax, axis=-1),
        "embedding_lookup": embedding,
        "reshape": reshape,
        "concat": concat,
        "mean": reduce(F.mean),
        "sum": reduce(F.sum),
        "scale": unary(F.scale, c=-2.5),
    }


def _end_to_end_builder(size=32):
    """Objective on one 3 x size x size frame as a function of every generator weight."""

    def build(rng):
        gen = Generator(seed=int(rng.integers(1 << 31)))
        surrogate = Surrogate(SurrogateConfig(image_size=size), seed=1)
        aux = AuxModel(seed=2)
        for m in (gen, surrogate, aux):
            m.astype(np.float64)
        surrogate.freeze()
        aux.freeze()
        # stay clear of the [0, 1] clamp so the objective is smooth in the weights
        frame = rng.uniform(0.2, 0.8, size=(1, 3, size, size))
        question, answer = "what color is the square?", "red"

        def fn():
            delta = gen.perturbation(Tensor(frame))
            adv = apply(Tensor(frame), delta)
            return total_objective(frame, adv, question, answer, surrogate, aux).total

        return fn, dict(gen.named_parameters())

    return build


def run_gradchecks(tolerance=1e-3, seed=0, end_to_end=True, coords_per_leaf=4):
    """Report dict with one entry per primitive plus the end-to-end objective."""
    results = {}
    for name, build in _primitive_builders().items():
        t0 = time.perf_counter()
        rep = gradcheck(build, tolerance=tolerance, h=1e-6, seed=seed)
        results[name] = {**rep.as_dict(), "seconds": time.perf_counter() - t0}
    if end_to_end:
        t0 = time.perf_counter()
        rep = gradcheck(_end_to_end_builder(), tolerance=tolerance, h=1e-6, seed=seed, max_coords=coords_per_leaf)
        results["end_to_end"] = {**rep.as_dict(), "seconds": time.perf_counter() - t0}
    return {"tolerance": tolerance, "passed": all(r["passed"] for r in results.values()), "checks": results}

