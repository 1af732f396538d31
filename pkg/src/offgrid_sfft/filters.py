"""Filter construction: building block, single- and multi-dimensional filters.

The building block is a pair ``(G, G_hat)`` of real, even functions with

    G(t)     = s0 * rect_{s1}^{*ell}(t) * sinc_{s2}(t)
    G_hat(f) = (s0 / s2) * integral_{f - s2/2}^{f + s2/2} sinc_{s1}(xi)^ell dxi

where ``s1 = 2B/alpha`` and ``s0`` normalises ``G_hat(0) = 1``.  ``G_hat`` is
flat on ``|f| <= (1 - alpha)/(2B)`` and negligible beyond ``1/(2B)``.

The single-dimensional filter periodises ``G_hat`` over the integer shifts
``|w| <= W``; its exact inverse transform is ``G(t) * D_W(t)`` with the
Dirichlet kernel ``D_W(t) = sin((2W+1) pi t) / sin(pi t)``.  Because
``D_W(i + 1/2) = (-1)**W`` at every integer ``i``, shifting the kernel by half
a sample gives a filter of unit gain on the integer lattice; HashToBins uses
that lattice form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .numerics import box_selfconv, sinc1

__all__ = [
    "FilterParams",
    "derive_params",
    "g_hat",
    "g_time",
    "dirichlet_kernel",
    "filt1d_time",
    "filt1d_freq",
    "filt_multi_time",
    "filt_multi_freq",
    "window_multi_freq",
    "lattice_weights_1d",
    "WINDOW_FLAT",
    "WINDOW_LITERAL",
]

#: Rect window of width ``(1 - alpha/2)/B``: pass band reaches ``(1-alpha)/(2B)``.
WINDOW_FLAT = "flat"
#: Rect window of width ``1/(B + B/d)``: pass band only reaches ``d/(2B(d+1))``.
WINDOW_LITERAL = "literal"

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_INT_TOL = 1e-9


def _is_integer(x: float) -> bool:
    return abs(x - round(x)) <= _INT_TOL * max(1.0, abs(x))


def _window_width(B: int, d: int, alpha: float, window: str) -> float:
    if window == WINDOW_FLAT:
        return (1.0 - alpha / 2.0) / B
    if window == WINDOW_LITERAL:
        return 1.0 / (B + B / d)
    raise ValueError(f"unknown window {window!r}")


def _sinc_power(y: np.ndarray, ell: int) -> np.ndarray:
    s = np.sinc(y)
    if ell <= 30:
        return s**ell
    with np.errstate(divide="ignore"):
        return np.exp(ell * np.log(np.abs(s)))


class _SincPowerIntegral:
    """Accurate integrals of ``sinc(y)**ell`` built from Gauss-Legendre panels.

    Integrals that contain the origin are sums of two nonnegative pieces read
    from a cumulative table, so the pass band is exact to rounding.  Integrals
    that stay on one side of the origin are integrated directly, so tiny stop
    band values keep their relative accuracy.
    """

    def __init__(self, ell: int, half_width: float):
        self.ell = ell
        self.h = 0.25 / max(1, math.ceil(math.sqrt(ell) / 4.0))
        n_panels = int(math.ceil((2.0 * half_width + 1.0) / self.h))
        edges = np.arange(n_panels + 1) * self.h
        self.edges = edges
        panel = self._panels(edges[:-1], edges[1:])
        self.cum = np.concatenate([[0.0], np.cumsum(panel)])
        self.top = edges[-1]

    def _panels(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        mid = 0.5 * (lo + hi)
        rad = 0.5 * (hi - lo)
        y = mid[..., None] + rad[..., None] * _GL_NODES
        return rad * (_sinc_power(y, self.ell) @ _GL_WEIGHTS)

    def from_zero(self, y: np.ndarray) -> np.ndarray:
        """``integral_0^y`` for ``0 <= y <= top``."""
        y = np.asarray(y, dtype=float)
        k = np.minimum((y / self.h).astype(int), len(self.edges) - 2)
        return self.cum[k] + self._panels(self.edges[k], y)

    def between(self, a, width: float) -> np.ndarray:
        """``integral_a^{a + width}`` for each ``a >= 0``, integrated panel by panel."""
        a = np.atleast_1d(np.asarray(a, dtype=float))
        n = max(1, int(math.ceil(width / self.h)))
        steps = np.linspace(0.0, width, n + 1)
        out = np.empty(a.shape)
        chunk = max(1, 250_000 // n)
        for s in range(0, len(a), chunk):
            edges = a[s:s + chunk, None] + steps
            out[s:s + chunk] = self._panels(edges[:, :-1], edges[:, 1:]).sum(axis=1)
        return out


@dataclass(frozen=True)
class FilterParams:
    """Every constant of one filter configuration.

    ``strict`` records whether ``alpha`` obeys ``1/(100 (d+1) alpha)`` being
    an integer.  Desk-scale fixtures may relax it to keep lattices small.
    """

    k: int
    d: int
    delta: float
    F: float
    eta: float
    B: int
    alpha: float
    ell: int
    W: int
    D: int
    s1: float
    s2: float
    s0: float
    window: str = WINDOW_FLAT
    strict: bool = True
    _integral: _SincPowerIntegral = field(default=None, repr=False, compare=False, hash=False)

    @property
    def n_bins(self) -> int:
        return self.B**self.d

    @property
    def support(self) -> float:
        """Half-width ``ell*B/alpha`` of the support of ``G``."""
        return self.ell * self.B / self.alpha

    @property
    def lattice_radius(self) -> int:
        """Largest integer ``i`` with possibly nonzero ``G(i)``."""
        return int(math.floor(self.support))

    @property
    def window_index(self) -> float:
        """``s1 * s2 / 2``: half the rect window in units of ``1/s1``."""
        return self.s1 * self.s2 / 2.0

    def echo(self) -> dict:
        """Plain-JSON view of the parameters."""
        return {
            "k": self.k, "d": self.d, "delta": self.delta, "F": self.F, "eta": self.eta,
            "B": self.B, "alpha": self.alpha, "ell": self.ell, "W": self.W, "D": self.D,
            "s0": self.s0, "s1": self.s1, "s2": self.s2, "window": self.window,
            "strict": self.strict,
        }


def _check_positive(**values) -> None:
    for name, value in values.items():
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
            raise ValueError(f"{name} must be finite and positive, got {value!r}")


def derive_params(
    k: int,
    d: int,
    delta: float,
    F: float,
    eta: float,
    *,
    c_B: float = 2,
    c_ell: float = 2,
    c_W: float = 2,
    c_D: float = 1,
    window: str = WINDOW_FLAT,
    **overrides,
) -> FilterParams:
    """Derive the filter constants for ``k`` tones in ``d`` dimensions.

    ``overrides`` may pin any of ``B``, ``alpha``, ``ell``, ``W``, ``D``.
    Explicit ``alpha`` values need not follow the ``1/(100 (d+1))`` rule; the
    result then has ``strict=False``.  The window integrality condition
    (``s1*s2/2`` integral for the literal window, ``s1*s2`` integral for the
    flat one) is always enforced because ``G_hat <= 1`` depends on it.
    """
    _check_positive(k=k, d=d, F=F, eta=eta)
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must lie in (0, 1), got {delta!r}")
    unknown = set(overrides) - {"B", "alpha", "ell", "W", "D"}
    if unknown:
        raise ValueError(f"unknown overrides: {sorted(unknown)}")
    k, d = int(k), int(d)

    B = overrides.get("B")
    if B is None:
        target = c_B * d * math.ceil(k ** (1.0 / d) - 1e-12)
        B = d * math.ceil(target / d)
    B = int(B)
    if B < 1 or B % d:
        raise ValueError(f"B must be a positive multiple of d={d}, got {B}")

    rule_alpha = 1.0 / (100 * (d + 1))
    alpha = float(overrides.get("alpha", rule_alpha))
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    strict = _is_integer(1.0 / (100 * (d + 1) * alpha))

    ell = overrides.get("ell")
    if ell is None:
        ell = max(10, math.ceil(c_ell * math.ceil(math.log2(k * d / delta))))
        ell += ell % 2
    ell = int(ell)
    if ell < 2 or ell % 2:
        raise ValueError(f"ell must be an even integer >= 2, got {ell}")

    W = overrides.get("W")
    if W is None:
        W = math.ceil(c_W * d * F / (B * eta))
        W += W % 2
    W = int(W)
    if W < 0:
        raise ValueError("W must be nonnegative")

    D = int(overrides.get("D", math.ceil(c_D * ell / alpha - 1e-9)))

    s1 = 2.0 * B / alpha
    s2 = _window_width(B, d, alpha, window)
    integrality = s1 * s2 / 2.0 if window == WINDOW_LITERAL else s1 * s2
    if not _is_integer(integrality):
        raise ValueError(
            f"window integrality fails: {integrality} is not an integer for "
            f"B={B}, d={d}, alpha={alpha}, window={window!r}"
        )

    integral = _SincPowerIntegral(ell, s1 * s2 / 2.0)
    center_mass = 2.0 * float(integral.from_zero(s1 * s2 / 2.0))
    s0 = s1 * s2 / center_mass
    return FilterParams(
        k=k, d=d, delta=float(delta), F=float(F), eta=float(eta), B=B, alpha=alpha,
        ell=ell, W=W, D=D, s1=s1, s2=s2, s0=s0, window=window, strict=strict,
        _integral=integral,
    )


def with_overrides(p: FilterParams, **changes) -> FilterParams:
    """Re-derive ``p`` after changing some of its inputs."""
    base = dict(k=p.k, d=p.d, delta=p.delta, F=p.F, eta=p.eta)
    pinned = dict(B=p.B, alpha=p.alpha, ell=p.ell, W=p.W, D=p.D)
    window = changes.pop("window", p.window)
    for key in list(changes):
        if key in base:
            base[key] = changes.pop(key)
    pinned.update(changes)
    return derive_params(**base, window=window, **pinned)


def g_hat(p: FilterParams, f):
    """Frequency response of the building block (even, in ``[0, 1]``)."""
    f = np.asarray(f, dtype=float)
    scalar = f.ndim == 0
    y = np.abs(np.atleast_1d(f)) * p.s1
    m = p.window_index
    scale = p.s0 / (p.s1 * p.s2)
    out = np.empty_like(y)
    inner = y <= m
    if inner.any():
        yi = y[inner]
        out[inner] = scale * (p._integral.from_zero(m + yi) + p._integral.from_zero(m - yi))
    outer = ~inner
    if outer.any():
        out[outer] = scale * p._integral.between(y[outer] - m, 2.0 * m)
    return float(out[0]) if scalar else out


def g_time(p: FilterParams, t):
    """Time-domain building block ``s0 * rect^{*ell}(t) * sinc_{s2}(t)``."""
    return p.s0 * box_selfconv(p.ell, p.s1, t) * sinc1(p.s2, t)


def dirichlet_kernel(W: int, x):
    """``sin((2W+1) pi x) / sin(pi x)``, equal to ``2W+1`` at integers."""
    x = np.asarray(x, dtype=float)
    r = x - np.rint(x)
    n = 2 * W + 1
    with np.errstate(invalid="ignore", divide="ignore"):
        val = np.sin(n * np.pi * r) / np.sin(np.pi * r)
    return np.where(r == 0.0, float(n), val)


def filt1d_time(p: FilterParams, t, shift: float = 0.0):
    """Single-dimensional filter ``G(t) * D_W(t + shift)``.

    ``shift=0`` is the exact inverse transform of :func:`filt1d_freq`;
    ``shift=0.5`` is the unit-gain form sampled by HashToBins.
    """
    return g_time(p, t) * dirichlet_kernel(p.W, np.asarray(t, dtype=float) + shift)


def filt1d_freq(p: FilterParams, f):
    """``sum_{|w| <= W} G_hat(f + w)``."""
    f = np.asarray(f, dtype=float)
    shifts = np.arange(-p.W, p.W + 1, dtype=float)
    vals = g_hat(p, (f[..., None] + shifts).ravel()).reshape(f.shape + shifts.shape)
    return vals.sum(axis=-1)


def filt_multi_time(p: FilterParams, t, shift: float = 0.0):
    """Tensor product of :func:`filt1d_time` over the last axis of ``t``."""
    return np.prod(filt1d_time(p, t, shift), axis=-1)


def filt_multi_freq(p: FilterParams, f):
    """Tensor product of :func:`filt1d_freq` over the last axis of ``f``."""
    return np.prod(filt1d_freq(p, f), axis=-1)


def window_multi_freq(p: FilterParams, f):
    """Idealised window: 1 in the pass band, the real filter in the transition
    band and 0 elsewhere, judged by the sup-distance to the nearest shift in
    ``[-W, W]^d``."""
    f = np.atleast_2d(np.asarray(f, dtype=float))
    nearest = np.clip(np.rint(f), -p.W, p.W)
    dist = np.max(np.abs(f - nearest), axis=-1)
    out = np.zeros(dist.shape)
    out[dist <= (1.0 - p.alpha) / (2.0 * p.B)] = 1.0
    mid = (dist > (1.0 - p.alpha) / (2.0 * p.B)) & (dist < 1.0 / (2.0 * p.B))
    if mid.any():
        out[mid] = filt_multi_freq(p, f[mid])
    return out


@lru_cache(maxsize=32)
def lattice_weights_1d(p: FilterParams) -> tuple[np.ndarray, np.ndarray]:
    """Integer offsets with nonzero unit-gain filter weight, and the weights.

    The weights are ``filt1d_time(p, i, shift=0.5) = (-1)**W * G(i)``; with the
    even ``W`` produced by :func:`derive_params` this is ``G(i)``.
    """
    r = p.lattice_radius
    offsets = np.arange(-r, r + 1)
    weights = filt1d_time(p, offsets.astype(float), shift=0.5)
    keep = weights != 0.0
    offsets, weights = offsets[keep], weights[keep]
    offsets.setflags(write=False)
    weights.setflags(write=False)
    return offsets, weights

