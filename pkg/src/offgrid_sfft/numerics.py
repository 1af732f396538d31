"""Scalar special functions, phase arithmetic, box self-convolution and the DFT.

All functions accept scalars or NumPy arrays and broadcast like ufuncs.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.interpolate import BSpline

__all__ = [
    "sinc1",
    "rect1",
    "sinc_multi",
    "circ_dist",
    "wrap_phase",
    "box_selfconv",
    "dft_multi",
    "idft_multi",
    "CLOSED_FORM_MAX_ORDER",
]

#: Largest order evaluated with the alternating Irwin-Hall sum.
CLOSED_FORM_MAX_ORDER = 12

TWO_PI = 2.0 * np.pi


def sinc1(s1, t):
    """Scaled sinc ``sin(pi*s1*t) / (pi*s1*t)`` with value 1 at ``t = 0``."""
    return np.sinc(np.multiply(s1, t))


def rect1(s1, f):
    """Box of height ``1/s1`` on the closed interval ``[-s1/2, s1/2]``."""
    s1 = np.asarray(s1, dtype=float)
    f = np.asarray(f, dtype=float)
    return np.where(np.abs(f) <= s1 / 2.0, 1.0 / s1, 0.0)


def sinc_multi(s1, tau):
    """Product of :func:`sinc1` over the last axis of ``tau``."""
    tau = np.asarray(tau, dtype=float)
    return np.prod(sinc1(s1, tau), axis=-1)


def circ_dist(theta):
    """Distance from ``theta`` to the nearest multiple of ``2*pi``, in ``[0, pi]``."""
    theta = np.asarray(theta, dtype=float)
    r = np.remainder(theta, TWO_PI)
    return np.minimum(r, TWO_PI - r)


def wrap_phase(theta):
    """Reduce a phase into ``(-pi, pi]``."""
    theta = np.asarray(theta, dtype=float)
    r = np.remainder(theta + np.pi, TWO_PI) - np.pi
    return np.where(r == -np.pi, np.pi, r)


def _irwin_hall_pdf(order: int, x: np.ndarray) -> np.ndarray:
    # Reflect to the left half of the support: the alternating sum has fewer
    # and smaller terms there, which keeps the cancellation mild.
    x = np.minimum(x, order - x)
    out = np.zeros_like(x)
    inside = x > 0
    xi = x[inside]
    acc = np.zeros_like(xi)
    for j in range(order):
        active = xi > j
        if not active.any():
            break
        term = math.comb(order, j) * np.where(active, xi - j, 0.0) ** (order - 1)
        acc += term if j % 2 == 0 else -term
    out[inside] = acc / math.factorial(order - 1)
    return out


def _bspline_pdf(order: int, x: np.ndarray) -> np.ndarray:
    basis = BSpline.basis_element(np.arange(order + 1, dtype=float), extrapolate=False)
    y = basis(x)
    return np.nan_to_num(y, nan=0.0)


def box_selfconv(ell: int, s1, t):
    """Value at ``t`` of the ``ell``-fold self-convolution of ``rect1(s1, .)``.

    This is the density of a sum of ``ell`` independent uniforms on
    ``[-s1/2, s1/2]``, i.e. a rescaled Irwin-Hall density (the cardinal
    B-spline of order ``ell``). Orders up to :data:`CLOSED_FORM_MAX_ORDER` use
    the closed-form polynomial; larger orders use de Boor's recursion, which
    is stable where the alternating sum is not.
    """
    if ell < 1:
        raise ValueError("ell must be a positive integer")
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    if ell == 1:
        out = rect1(s1, t)
    else:
        # Evaluate on the left half so the result is exactly even.
        x = ell / 2.0 - np.abs(t) / s1
        mask = (x > 0) & (x < ell)
        out = np.zeros_like(x)
        if mask.any():
            pdf = _irwin_hall_pdf if ell <= CLOSED_FORM_MAX_ORDER else _bspline_pdf
            out[mask] = np.maximum(pdf(ell, x[mask]), 0.0) / s1
    return float(out[0]) if scalar else out


def dft_multi(u):
    """Unnormalised forward DFT over every axis, ``sum_i u_i exp(-2 pi i j.i / B)``."""
    return np.fft.fftn(np.asarray(u, dtype=complex))


def idft_multi(u_hat):
    """Inverse of :func:`dft_multi` (carries the ``1/B**d`` factor)."""
    return np.fft.ifftn(np.asarray(u_hat, dtype=complex))
