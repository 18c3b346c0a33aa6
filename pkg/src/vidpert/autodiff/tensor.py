"""Tensor carrier and the recording tape for reverse-mode differentiation."""

import contextlib
import threading

import numpy as np

from ..errors import NumericError, UsageError

_state = threading.local()


def default_dtype():
    return getattr(_state, "dtype", np.float32)


@contextlib.contextmanager
def precision(dtype):
    """Create new tensors in ``dtype`` inside the block (float64 is for verification only)."""
    prev = default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = prev


def grad_enabled():
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tape:
    """Ordered record of primitive applications on one thread.

    Each record is ``(out, inputs, backward_fn)``. Records are appended in
    execution order, so the inputs of a record always precede it.
    """

    def __init__(self):
        self.records = []

    def record(self, out, inputs, backward_fn):
        self.records.append((out, inputs, backward_fn))

    def clear(self):
        self.records.clear()

    def __len__(self):
        return len(self.records)

    def backward(self, loss):
        if loss.data.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise UsageError("loss does not depend on any tensor that requires grad")
        if not loss._produced:
            loss.grad = _accumulate(loss.grad, np.ones_like(loss.data))
            return
        grads = {id(loss): np.ones_like(loss.data)}
        for out, inputs, fn in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            in_grads = fn(g)
            for inp, ig in zip(inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                if ig.shape != inp.data.shape:
                    raise AssertionError(f"gradient shape {ig.shape} != input shape {inp.data.shape}")
                if inp._produced:
                    key = id(inp)
                    grads[key] = grads[key] + ig if key in grads else ig
                else:
                    inp.grad = _accumulate(inp.grad, ig)
        self.clear()


def _accumulate(existing, g):
    g = np.asarray(g)
    return g.copy() if existing is None else existing + g


def active_tape():
    tape = getattr(_state, "tape", None)
    if tape is None:
        tape = _state.tape = Tape()
    return tape


@contextlib.contextmanager
def use_tape(tape):
    prev = getattr(_state, "tape", None)
    _state.tape = tape
    try:
        yield tape
    finally:
        _state.tape = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_produced", "name")

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(default_dtype())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._produced = False
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        active_tape().backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar; the primitives live in functional.py
    def __add__(self, other):
        from . import functional as F

        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F

        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F

        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F

        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F

        if isinstance(other, (int, float)):
            return F.scale(self, 1.0 / other)
        return F.div(self, other)

    def __neg__(self):
        from . import functional as F

        return F.scale(self, -1.0)

    def __matmul__(self, other):
        from . import functional as F

        return F.matmul(self, other)

    def __getitem__(self, idx):
        from . import functional as F

        return F.index(self, idx)

    def sum(self, axis=None, keepdims=False):
        from . import functional as F

        return F.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import functional as F

        return F.mean(self, axis, keepdims)

    def reshape(self, *shape):
        from . import functional as F

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes):
        from . import functional as F

        return F.transpose(self, axes or None)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=default_dtype()))


def make_output(data, inputs, backward_fn, op):
    """Wrap a primitive's forward result, check it is finite and record it."""
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by {op}")
    out = Tensor(data)
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._produced = True
        out.name = op
        active_tape().record(out, inputs, backward_fn)
    return out


def backward(loss):
    """Populate ``.grad`` of every requires-grad leaf reachable from ``loss`` and clear the tape."""
    active_tape().backward(loss)
