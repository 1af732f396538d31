"""HashToBins: filtered, permuted lattice samples folded into ``B^d`` bins.

For an integer lattice point ``i`` the sample is

    y_i = filter(i) * x(Sigma^T (i + a)) * exp(-2 pi i b^T Sigma^T i)

with the unit-gain lattice filter ``prod_r G(i_r)``.  Folding ``y`` modulo
``B`` along every axis and taking the unnormalised DFT gives bin values

    u_hat_j = sum_tones v * exp(2 pi i a^T Sigma f)
                       * prod_r sum_n G_hat(j_r / B - phi_r + n),   phi = Sigma (f - b)

by Poisson summation, so a tone hashed to bin ``j`` appears there with
its magnitude rotated by ``exp(2 pi i a^T Sigma f)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .filters import FilterParams, g_hat, lattice_weights_1d
from .hashing import HashInstance
from .numerics import dft_multi
from .signal import lattice_points

__all__ = ["BinSketch", "hash_to_bins", "lattice_extent", "sketch_samples", "expected_sketch"]


@dataclass(frozen=True, eq=False)
class BinSketch:
    """Bin values ``u_hat`` over ``[B]^d`` plus where they came from."""

    values: np.ndarray
    hash_uid: int
    a: np.ndarray

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


def sketch_samples(p: FilterParams) -> int:
    """Number of oracle samples consumed by one :func:`hash_to_bins` call."""
    return len(lattice_weights_1d(p)[0]) ** p.d


def lattice_extent(p: FilterParams, sigma: np.ndarray) -> np.ndarray:
    """Per-coordinate ``max |(Sigma^T i)_c|`` over the sampled lattice."""
    offsets = lattice_weights_1d(p)[0]
    radius = float(np.max(np.abs(offsets)))
    return radius * np.sum(np.abs(sigma), axis=0)


def _fold_matrix(offsets: np.ndarray, B: int) -> np.ndarray:
    fold = np.zeros((len(offsets), B))
    fold[np.arange(len(offsets)), np.mod(offsets, B)] = 1.0
    return fold


def hash_to_bins(oracle, h: HashInstance, a, p: FilterParams) -> BinSketch:
    """Run HashToBins at time shift ``a`` and return the ``B^d`` bin values.

    Raises :class:`~offgrid_sfft.signal.DurationError` when some lattice point
    ``Sigma^T (i + a)`` leaves ``[0, T]^d``.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    d = p.d
    offsets, weights = lattice_weights_1d(p)
    grid = offsets.astype(float)
    grids = [grid] * d
    origin = a @ h.sigma
    rows = h.sigma
    if hasattr(oracle, "sample_lattice"):
        x = oracle.sample_lattice(origin, rows, grids)
    else:
        x = np.asarray(oracle.sample(lattice_points(origin, rows, grids))).reshape((len(grid),) * d)

    sigma_b = h.sigma @ h.b
    fold = _fold_matrix(offsets, p.B)
    y = x
    for r in range(d):
        factor = weights * np.exp(-2j * np.pi * sigma_b[r] * grid)
        # Contract the leading axis; the folded axis is appended at the end,
        # so after d passes the axes are back in order.
        y = np.tensordot(y, factor[:, None] * fold, axes=([0], [0]))
    return BinSketch(dft_multi(y), h.uid, a)


def expected_sketch(p: FilterParams, h: HashInstance, a, tones, n_shifts: int | None = None) -> np.ndarray:
    """Analytic bin values of a noiseless tone sum (used as a test oracle).

    Each coordinate sums ``G_hat`` over the shifts ``|n| <= n_shifts``
    (default ``W``) around the bin-relative hashed frequency.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    n_shifts = p.W if n_shifts is None else n_shifts
    shifts = np.arange(-n_shifts, n_shifts + 1, dtype=float)
    centers = np.arange(p.B) / p.B
    out = np.zeros((p.B,) * p.d, dtype=complex)
    for tone in tones:
        f = np.asarray(tone.f, dtype=float)
        phi = h.sigma @ (f - h.b)
        rot = tone.v * np.exp(2j * np.pi * float(a @ h.sigma @ f))
        per_axis = []
        for r in range(p.d):
            x = centers - phi[r]
            x = x - np.rint(x)
            per_axis.append(g_hat(p, (x[:, None] + shifts).ravel()).reshape(p.B, -1).sum(axis=1))
        grid = per_axis[0]
        for vec in per_axis[1:]:
            grid = np.multiply.outer(grid, vec)
        out += rot * grid
    return out
