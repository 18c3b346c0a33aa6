"""Hot inner loops with two interchangeable backends.

Every kernel exists as a numba ``@njit`` loop nest and as a vectorised numpy
function. The numba path is the default; set ``VIDPERT_DISABLE_JIT=1`` to run
the numpy path (useful for debugging, or where numba is unavailable).
``benchmarks/bench_kernels.py`` times both.
"""

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


def _env_disabled():
    return os.environ.get("VIDPERT_DISABLE_JIT", "").strip().lower() in ("1", "true", "yes", "on")


JIT_ENABLED = HAVE_NUMBA and not _env_disabled()

if HAVE_NUMBA:
    njit = numba.njit(cache=True, nogil=True)
else:  # pragma: no cover

    def njit(f):
        return f


def set_backend(name):
    """Switch kernels at runtime; ``name`` is ``"numba"`` or ``"numpy"``."""
    global JIT_ENABLED
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba is not installed")
        JIT_ENABLED = True
    elif name == "numpy":
        JIT_ENABLED = False
    else:
        raise ValueError(f"unknown backend {name!r}")


def backend():
    return "numba" if JIT_ENABLED else "numpy"


def conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


# ---------------------------------------------------------------------------
# im2col / col2im
# cols layout: (N, Ho*Wo, C*k*k), inner index ordered (c, ki, kj) so that it
# lines up with weight.reshape(O, C*k*k).


def _im2col_numpy(x, k, stride, pad):
    n, c, h, w = x.shape
    ho, wo = conv_out_size(h, k, stride, pad), conv_out_size(w, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # (n, c, ho, wo, k, k) -> (n, ho, wo, c, k, k)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, ho * wo, c * k * k)


@njit
def _im2col_jit(x, k, stride, pad, ho, wo):
    n, c, h, w = x.shape
    cols = np.zeros((n, ho * wo, c * k * k), dtype=x.dtype)
    for b in range(n):
        for oy in range(ho):
            for ox in range(wo):
                row = oy * wo + ox
                for ch in range(c):
                    for ki in range(k):
                        iy = oy * stride + ki - pad
                        if iy < 0 or iy >= h:
                            continue
                        for kj in range(k):
                            ix = ox * stride + kj - pad
                            if ix < 0 or ix >= w:
                                continue
                            cols[b, row, (ch * k + ki) * k + kj] = x[b, ch, iy, ix]
    return cols


def im2col(x, k, stride, pad):
    if JIT_ENABLED:
        h, w = x.shape[2:]
        ho, wo = conv_out_size(h, k, stride, pad), conv_out_size(w, k, stride, pad)
        return _im2col_jit(np.ascontiguousarray(x), k, stride, pad, ho, wo)
    return _im2col_numpy(x, k, stride, pad)


def _col2im_numpy(cols, x_shape, k, stride, pad):
    n, c, h, w = x_shape
    ho, wo = conv_out_size(h, k, stride, pad), conv_out_size(w, k, stride, pad)
    g = cols.reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += g[:, :, ki, kj]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(out)


@njit
def _col2im_jit(cols, n, c, h, w, k, stride, pad, ho, wo):
    out = np.zeros((n, c, h, w), dtype=cols.dtype)
    for b in range(n):
        for oy in range(ho):
            for ox in range(wo):
                row = oy * wo + ox
                for ch in range(c):
                    for ki in range(k):
                        iy = oy * stride + ki - pad
                        if iy < 0 or iy >= h:
                            continue
                        for kj in range(k):
                            ix = ox * stride + kj - pad
                            if ix < 0 or ix >= w:
                                continue
                            out[b, ch, iy, ix] += cols[b, row, (ch * k + ki) * k + kj]
    return out


def col2im(cols, x_shape, k, stride, pad):
    if JIT_ENABLED:
        n, c, h, w = x_shape
        ho, wo = conv_out_size(h, k, stride, pad), conv_out_size(w, k, stride, pad)
        return _col2im_jit(np.ascontiguousarray(cols), n, c, h, w, k, stride, pad, ho, wo)
    return _col2im_numpy(cols, x_shape, k, stride, pad)


# ---------------------------------------------------------------------------
# Horn-Schunck optical flow (float64 throughout)


def _hs_derivatives_numpy(i1, i2):
    a = np.pad(i1, ((0, 1), (0, 1)), mode="edge")
    b = np.pad(i2, ((0, 1), (0, 1)), mode="edge")
    ix = 0.25 * (
        (a[:-1, 1:] - a[:-1, :-1]) + (a[1:, 1:] - a[1:, :-1]) + (b[:-1, 1:] - b[:-1, :-1]) + (b[1:, 1:] - b[1:, :-1])
    )
    iy = 0.25 * (
        (a[1:, :-1] - a[:-1, :-1]) + (a[1:, 1:] - a[:-1, 1:]) + (b[1:, :-1] - b[:-1, :-1]) + (b[1:, 1:] - b[:-1, 1:])
    )
    it = 0.25 * ((b[:-1, :-1] - a[:-1, :-1]) + (b[1:, :-1] - a[1:, :-1]) + (b[:-1, 1:] - a[:-1, 1:]) + (b[1:, 1:] - a[1:, 1:]))
    return ix, iy, it


def _hs_average_numpy(f):
    p = np.pad(f, 1, mode="edge")
    side = p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]
    diag = p[:-2, :-2] + p[:-2, 2:] + p[2:, :-2] + p[2:, 2:]
    return side / 6.0 + diag / 12.0


def _horn_schunck_numpy(i1, i2, alpha, iters):
    ix, iy, it = _hs_derivatives_numpy(i1, i2)
    denom = alpha * alpha + ix * ix + iy * iy
    u = np.zeros_like(i1)
    v = np.zeros_like(i1)
    for _ in range(iters):
        ub = _hs_average_numpy(u)
        vb = _hs_average_numpy(v)
        t = (ix * ub + iy * vb + it) / denom
        u = ub - ix * t
        v = vb - iy * t
    return u, v


@njit
def _clampi(i, n):
    if i < 0:
        return 0
    if i >= n:
        return n - 1
    return i


@njit
def _horn_schunck_jit(i1, i2, alpha, iters):
    h, w = i1.shape
    ix = np.empty((h, w))
    iy = np.empty((h, w))
    it = np.empty((h, w))
    for y in range(h):
        y1 = _clampi(y + 1, h)
        for x in range(w):
            x1 = _clampi(x + 1, w)
            ix[y, x] = 0.25 * (
                (i1[y, x1] - i1[y, x]) + (i1[y1, x1] - i1[y1, x]) + (i2[y, x1] - i2[y, x]) + (i2[y1, x1] - i2[y1, x])
            )
            iy[y, x] = 0.25 * (
                (i1[y1, x] - i1[y, x]) + (i1[y1, x1] - i1[y, x1]) + (i2[y1, x] - i2[y, x]) + (i2[y1, x1] - i2[y, x1])
            )
            it[y, x] = 0.25 * (
                (i2[y, x] - i1[y, x]) + (i2[y1, x] - i1[y1, x]) + (i2[y, x1] - i1[y, x1]) + (i2[y1, x1] - i1[y1, x1])
            )
    u = np.zeros((h, w))
    v = np.zeros((h, w))
    un = np.zeros((h, w))
    vn = np.zeros((h, w))
    a2 = alpha * alpha
    for _ in range(iters):
        for y in range(h):
            ym = _clampi(y - 1, h)
            yp = _clampi(y + 1, h)
            for x in range(w):
                xm = _clampi(x - 1, w)
                xp = _clampi(x + 1, w)
                ub = (u[ym, x] + u[yp, x] + u[y, xm] + u[y, xp]) / 6.0 + (
                    u[ym, xm] + u[ym, xp] + u[yp, xm] + u[yp, xp]
                ) / 12.0
                vb = (v[ym, x] + v[yp, x] + v[y, xm] + v[y, xp]) / 6.0 + (
                    v[ym, xm] + v[ym, xp] + v[yp, xm] + v[yp, xp]
                ) / 12.0
                gx = ix[y, x]
                gy = iy[y, x]
                t = (gx * ub + gy * vb + it[y, x]) / (a2 + gx * gx + gy * gy)
                un[y, x] = ub - gx * t
                vn[y, x] = vb - gy * t
        u, un = un, u
        v, vn = vn, v
    return u, v


def horn_schunck(i1, i2, alpha, iters):
    i1 = np.ascontiguousarray(i1, dtype=np.float64)
    i2 = np.ascontiguousarray(i2, dtype=np.float64)
    if JIT_ENABLED:
        return _horn_schunck_jit(i1, i2, float(alpha), int(iters))
    return _horn_schunck_numpy(i1, i2, float(alpha), int(iters))


# ---------------------------------------------------------------------------
# Backward bilinear warp with border replication: out(y, x) = f(y - v, x - u)


def _bilinear_warp_numpy(field, u, v):
    c, h, w = field.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = np.clip(xs - u, 0.0, w - 1.0)
    sy = np.clip(ys - v, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = sx - x0
    wy = sy - y0
    f = field.astype(np.float64)
    top = (1.0 - wx) * f[:, y0, x0] + wx * f[:, y0, x1]
    bot = (1.0 - wx) * f[:, y1, x0] + wx * f[:, y1, x1]
    return ((1.0 - wy) * top + wy * bot).astype(field.dtype)


@njit
def _bilinear_warp_jit(field, u, v):
    c, h, w = field.shape
    out = np.empty((c, h, w))
    for y in range(h):
        for x in range(w):
            sx = min(max(x - u[y, x], 0.0), w - 1.0)
            sy = min(max(y - v[y, x], 0.0), h - 1.0)
            x0 = int(np.floor(sx))
            y0 = int(np.floor(sy))
            x1 = min(x0 + 1, w - 1)
            y1 = min(y0 + 1, h - 1)
            wx = sx - x0
            wy = sy - y0
            for ch in range(c):
                top = (1.0 - wx) * field[ch, y0, x0] + wx * field[ch, y0, x1]
                bot = (1.0 - wx) * field[ch, y1, x0] + wx * field[ch, y1, x1]
                out[ch, y, x] = (1.0 - wy) * top + wy * bot
    return out


def bilinear_warp(field, u, v):
    u = np.ascontiguousarray(u, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    if JIT_ENABLED:
        f64 = np.ascontiguousarray(field, dtype=np.float64)
        return _bilinear_warp_jit(f64, u, v).astype(field.dtype)
    return _bilinear_warp_numpy(field, u, v)

