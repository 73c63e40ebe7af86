"""Batched 1-D interpolation kernels used by the Gaussian parameter fields.

The field interpolators need, per query point, a monotone shape-preserving
cubic along depth and wavelength.  The batched evaluators here take knot
values with the knot axis last and evaluate each batch entry at its own
query position, which vanilla library interpolators do not support.
"""

from __future__ import annotations

import numpy as np


def pchip_slopes(t: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Shape-preserving Hermite slopes (Fritsch-Carlson) for batched data.

    t: (n,) strictly increasing knots.  f: (..., n) values.  Returns (..., n)
    slopes.  n == 1 yields zeros; n == 2 yields the single secant slope.
    """
    t = np.asarray(t, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    n = t.size
    if f.shape[-1] != n:
        raise ValueError("knot count mismatch")
    if n == 1:
        return np.zeros_like(f)
    h = np.diff(t)
    delta = np.diff(f, axis=-1) / h
    if n == 2:
        return np.repeat(delta, 2, axis=-1)

    d = np.zeros_like(f)
    # Interior: weighted harmonic mean of adjacent secants where they agree in
    # sign, zero at local extrema.
    d0 = delta[..., :-1]
    d1 = delta[..., 1:]
    h0 = h[:-1]
    h1 = h[1:]
    w1 = 2.0 * h1 + h0
    w2 = h1 + 2.0 * h0
    same_sign = (np.sign(d0) * np.sign(d1)) > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        harm = (w1 + w2) / (w1 / d0 + w2 / d1)
    d[..., 1:-1] = np.where(same_sign, harm, 0.0)

    d[..., 0] = _edge_slope(h[0], h[1], delta[..., 0], delta[..., 1])
    d[..., -1] = _edge_slope(h[-1], h[-2], delta[..., -1], delta[..., -2])
    return d


def _edge_slope(h0: float, h1: float, d0: np.ndarray, d1: np.ndarray) -> np.ndarray:
    """One-sided three-point endpoint slope, clipped to preserve shape."""
    s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1)
    s = np.where(np.sign(s) != np.sign(d0), 0.0, s)
    overshoot = (np.sign(d0) != np.sign(d1)) & (np.abs(s) > 3.0 * np.abs(d0))
    return np.where(overshoot, 3.0 * d0, s)


def hermite_eval(
    t: np.ndarray, f: np.ndarray, d: np.ndarray, x: np.ndarray
) -> np.ndarray:
    """Evaluate batched cubic Hermite interpolants.

    t: (n,) knots; f, d: (..., n) values and slopes; x: query positions
    broadcastable against f.shape[:-1].  Each batch entry is evaluated at its
    own (clamped) position.  At a knot the knot value is returned exactly.
    """
    t = np.asarray(t, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    n = t.size
    x = np.clip(np.asarray(x, dtype=np.float64), t[0], t[-1])
    if n == 1:
        return np.broadcast_to(f[..., 0], np.broadcast_shapes(f.shape[:-1], x.shape)).copy()

    shape = np.broadcast_shapes(f.shape[:-1], x.shape)
    xb = np.broadcast_to(x, shape)
    i = np.clip(np.searchsorted(t, xb, side="right") - 1, 0, n - 2)

    fb = np.broadcast_to(f, shape + (n,))
    db = np.broadcast_to(d, shape + (n,))
    i1 = i[..., None]
    f0 = np.take_along_axis(fb, i1, axis=-1)[..., 0]
    f1 = np.take_along_axis(fb, i1 + 1, axis=-1)[..., 0]
    d0 = np.take_along_axis(db, i1, axis=-1)[..., 0]
    d1 = np.take_along_axis(db, i1 + 1, axis=-1)[..., 0]

    h = t[i + 1] - t[i]
    s = (xb - t[i]) / h
    s2 = s * s
    s3 = s2 * s
    h00 = 2.0 * s3 - 3.0 * s2 + 1.0
    h10 = s3 - 2.0 * s2 + s
    h01 = -2.0 * s3 + 3.0 * s2
    h11 = s3 - s2
    out = h00 * f0 + h * (h10 * d0 + h11 * d1) + h01 * f1
    # Exact pass-through at knots (guards the lattice-exactness invariant
    # against rounding in the basis evaluation).
    at_knot = s == 0.0
    if np.any(at_knot):
        out = np.where(at_knot, f0, out)
    at_end = xb == t[-1]
    if np.any(at_end):
        out = np.where(at_end, fb[..., -1], out)
    return out


def pchip_eval(t: np.ndarray, f: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Monotone cubic interpolation of batched data at per-batch positions."""
    return hermite_eval(t, f, pchip_slopes(t, f), x)


def linear_weights(t: np.ndarray, x: np.ndarray):
    """Bracketing indices and blend weight for linear interpolation on knots t."""
    t = np.asarray(t, dtype=np.float64)
    x = np.clip(np.asarray(x, dtype=np.float64), t[0], t[-1])
    if t.size == 1:
        i = np.zeros(x.shape, dtype=np.intp)
        return i, i, np.zeros_like(x)
    i = np.clip(np.searchsorted(t, x, side="right") - 1, 0, t.size - 2)
    w = (x - t[i]) / (t[i + 1] - t[i])
    return i, i + 1, w
