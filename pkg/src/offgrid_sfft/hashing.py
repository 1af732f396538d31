"""Pseudorandom permutation and hashing of frequencies into bins.

A hash instance is a scaled random rotation ``Sigma = beta * Q`` and an anchor
``b``.  A frequency ``f`` is sent to ``phi = Sigma (f - b)`` in the unit torus;
its bin is ``floor(B * frac(phi + 1/(2B)))`` in every coordinate and its offset
is the signed distance from the bin center.

``is_collision`` and ``is_large_offset`` need the true tones and exist only
for tests and audits; recovery never calls them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .filters import FilterParams

__all__ = [
    "HashInstance",
    "haar_orthogonal",
    "sample_hash_instance",
    "sample_hash_batch",
    "frac",
    "hashed_position",
    "hash_bin",
    "offset",
    "bin_index",
    "permute_sample",
    "is_collision",
    "is_large_offset",
    "large_offset_rate",
    "collision_rate",
    "collision_band",
]


def haar_orthogonal(rng: np.random.Generator, d: int, size: int | None = None) -> np.ndarray:
    """Haar-distributed orthogonal matrices via QR with a positive-diagonal ``R``."""
    shape = (d, d) if size is None else (size, d, d)
    q, r = np.linalg.qr(rng.standard_normal(shape))
    signs = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    signs[signs == 0] = 1.0
    return q * signs[..., None, :]


def beta_range(d: int, B: int, eta: float) -> tuple[float, float]:
    """Interval ``[2 sqrt(d)/(B eta), 4 sqrt(d)/(B eta)]`` of the scale factor."""
    lo = 2.0 * math.sqrt(d) / (B * eta)
    return lo, 2.0 * lo


@dataclass(frozen=True, eq=False)
class HashInstance:
    """One draw of ``(Sigma, b)``; ``uid`` labels it in provenance records."""

    sigma: np.ndarray
    beta: float
    b: np.ndarray
    b_prime: np.ndarray
    uid: int = 0

    def __post_init__(self):
        for name in ("sigma", "b", "b_prime"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def d(self) -> int:
        return self.sigma.shape[0]

    @property
    def rotation(self) -> np.ndarray:
        return self.sigma / self.beta

    @property
    def sigma_inv(self) -> np.ndarray:
        return self.sigma.T / self.beta**2

    @classmethod
    def from_matrix(cls, sigma, b_prime, uid: int = 0) -> "HashInstance":
        """Build from an explicit ``Sigma`` (a scaled orthogonal matrix) and ``b'``."""
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        beta = float(np.sqrt(np.abs(np.linalg.det(sigma))) ** (2.0 / sigma.shape[0]))
        b_prime = np.atleast_1d(np.asarray(b_prime, dtype=float))
        b = np.linalg.solve(sigma, b_prime)
        return cls(sigma, beta, b, b_prime, uid)


def sample_hash_instance(rng: np.random.Generator, p: FilterParams, uid: int = 0) -> HashInstance:
    """Draw ``Sigma = beta * Q`` (``Q`` Haar on O(d)) and ``b = Sigma^{-1} b'``."""
    q = haar_orthogonal(rng, p.d)
    lo, hi = beta_range(p.d, p.B, p.eta)
    beta = float(rng.uniform(lo, hi))
    b_prime = rng.uniform(0.0, 1.0, size=p.d)
    sigma = beta * q
    b = (q.T @ b_prime) / beta
    return HashInstance(sigma, beta, b, b_prime, uid)


def sample_hash_batch(rng: np.random.Generator, d: int, B: int, eta: float, n: int):
    """Vectorised draws: ``sigma (n, d, d)`` and ``b (n, d)``."""
    q = haar_orthogonal(rng, d, size=n)
    lo, hi = beta_range(d, B, eta)
    beta = rng.uniform(lo, hi, size=n)
    b_prime = rng.uniform(0.0, 1.0, size=(n, d))
    sigma = beta[:, None, None] * q
    b = np.einsum("nji,nj->ni", q, b_prime) / beta[:, None]
    return sigma, b


def frac(x):
    """Fractional part ``x - floor(x)`` in ``[0, 1)``."""
    x = np.asarray(x, dtype=float)
    return x - np.floor(x)


def hashed_position(sigma, b, f) -> np.ndarray:
    """``Sigma (f - b)``; broadcasts over leading axes of ``sigma``, ``b`` and ``f``."""
    diff = np.asarray(f, dtype=float) - np.asarray(b, dtype=float)
    return np.einsum("...ij,...j->...i", np.asarray(sigma, dtype=float), diff)


def _bin_and_offset(sigma, b, B: int, f):
    shifted = frac(hashed_position(sigma, b, f) + 0.5 / B)
    bins = np.minimum(np.floor(B * shifted).astype(np.int64), B - 1)
    off = shifted - bins / B - 0.5 / B
    return bins, off


def hash_bin(h: HashInstance, B: int, f) -> np.ndarray:
    """Bin index in ``{0, ..., B-1}^d`` of one or many frequencies."""
    return _bin_and_offset(h.sigma, h.b, B, f)[0]


def offset(h: HashInstance, B: int, f) -> np.ndarray:
    """Offset from the bin center, in ``[-1/(2B), 1/(2B))^d``."""
    return _bin_and_offset(h.sigma, h.b, B, f)[1]


def bin_index(bins, B: int) -> np.ndarray:
    """Flatten multi-indices ``(..., d)`` into C-order positions in ``[B]^d``."""
    bins = np.asarray(bins)
    d = bins.shape[-1]
    return np.ravel_multi_index(tuple(np.moveaxis(bins, -1, 0)), (B,) * d)


def permute_sample(oracle, h: HashInstance, a, t):
    """``x(Sigma^T (t + a)) * exp(-2 pi i b^T Sigma^T t)`` at one or many ``t``."""
    t = np.asarray(t, dtype=float)
    a = np.asarray(a, dtype=float)
    pts = (t + a) @ h.sigma
    values = oracle.sample(pts)
    phase = np.exp(-2j * np.pi * (t @ h.sigma) @ h.b)
    return values * phase


def is_collision(h: HashInstance, B: int, freqs, i: int) -> bool:
    """True when another true frequency shares the bin of ``freqs[i]`` (test use)."""
    freqs = np.atleast_2d(np.asarray(freqs, dtype=float))
    bins = hash_bin(h, B, freqs)
    same = np.all(bins == bins[i], axis=-1)
    same[i] = False
    return bool(same.any())


def is_large_offset(h: HashInstance, B: int, alpha: float, f) -> bool:
    """True when some offset coordinate reaches ``(1 - alpha)/(2B)`` (test use)."""
    return bool(np.max(np.abs(offset(h, B, f))) >= (1.0 - alpha) / (2.0 * B))


def large_offset_rate(rng: np.random.Generator, d: int, B: int, alpha: float, eta: float, f, n: int):
    """Monte-Carlo frequency of the large-offset event for a fixed ``f``.

    Returns ``(empirical, exact, stderr)`` with ``exact = 1 - (1 - alpha)^d``.
    """
    hits = 0
    done = 0
    chunk = 50_000
    while done < n:
        m = min(chunk, n - done)
        sigma, b = sample_hash_batch(rng, d, B, eta, m)
        _, off = _bin_and_offset(sigma, b, B, np.asarray(f, dtype=float))
        hits += int(np.count_nonzero(np.max(np.abs(off), axis=-1) >= (1.0 - alpha) / (2.0 * B)))
        done += m
    exact = 1.0 - (1.0 - alpha) ** d
    return hits / n, exact, math.sqrt(exact * (1.0 - exact) / n)


def collision_band(d: int, B: int, eta: float) -> tuple[float, float]:
    """Distances ``[eta, (B - 2) eta / (4 sqrt d)]`` at which two frequencies never share a bin."""
    return eta, (B - 2) * eta / (4.0 * math.sqrt(d))


def collision_rate(rng: np.random.Generator, d: int, B: int, eta: float, f, f2, n: int):
    """Monte-Carlo frequency with which ``f`` and ``f2`` land in the same bin.

    Returns ``(empirical, bound, stderr)``.  ``bound`` is ``0`` inside
    :func:`collision_band` and the loose ceiling ``min(1, 50 / B^d)`` outside.
    """
    f = np.asarray(f, dtype=float)
    f2 = np.asarray(f2, dtype=float)
    hits = 0
    done = 0
    while done < n:
        m = min(50_000, n - done)
        sigma, b = sample_hash_batch(rng, d, B, eta, m)
        bins1, _ = _bin_and_offset(sigma, b, B, f)
        bins2, _ = _bin_and_offset(sigma, b, B, f2)
        hits += int(np.count_nonzero(np.all(bins1 == bins2, axis=-1)))
        done += m
    lo, hi = collision_band(d, B, eta)
    dist = float(np.linalg.norm(f - f2))
    bound = 0.0 if lo <= dist <= hi else min(1.0, 50.0 / B**d)
    rate = hits / n
    return rate, bound, math.sqrt(max(rate * (1.0 - rate), 1.0 / n) / n)
