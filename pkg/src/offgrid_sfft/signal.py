"""Ground-truth sparse signals, noise models and the sampling oracle.

The oracle is the only way the recovery pipeline sees the signal.  It counts
every sample and refuses time points outside ``[0, T]^d``.

White Gaussian noise is realised as a fixed function of ``(seed, t)``: the
bit pattern of every coordinate of ``t`` is mixed with SplitMix64 and the two
resulting uniforms feed a Box-Muller transform.  Querying the same point twice
therefore returns the same value, as a fixed noise function over the duration
should.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numba import njit
from scipy.spatial.distance import pdist

__all__ = [
    "Tone",
    "SparseSignal",
    "NoiseModel",
    "NoiseLevel",
    "DurationError",
    "SignalOracle",
    "lattice_points",
    "noise_level",
    "validate_separation",
    "load_signal",
    "save_signal",
]


class DurationError(ValueError):
    """A requested time point lies outside the sampling duration."""

    def __init__(self, message: str, point=None):
        super().__init__(message)
        self.point = None if point is None else np.asarray(point, dtype=float).tolist()


@dataclass(frozen=True)
class Tone:
    """One complex exponential ``v * exp(2 pi i f.t)``."""

    v: complex
    f: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "v", complex(self.v))
        object.__setattr__(self, "f", tuple(float(x) for x in np.atleast_1d(self.f)))
        if not (math.isfinite(self.v.real) and math.isfinite(self.v.imag)):
            raise ValueError("tone magnitude must be finite")
        if not all(math.isfinite(x) for x in self.f):
            raise ValueError("tone frequency must be finite")

    @property
    def freq(self) -> np.ndarray:
        return np.asarray(self.f, dtype=float)


def _tone_arrays(tones: Sequence[Tone], d: int) -> tuple[np.ndarray, np.ndarray]:
    if not tones:
        return np.zeros(0, dtype=complex), np.zeros((0, d))
    v = np.array([t.v for t in tones], dtype=complex)
    f = np.array([t.f for t in tones], dtype=float).reshape(len(tones), d)
    return v, f


@dataclass(frozen=True)
class SparseSignal:
    """A sum of tones observed on ``[0, T]^d``.

    Frequencies lie in ``[-F, F]^d`` and are pairwise at least ``eta`` apart.
    """

    tones: tuple[Tone, ...]
    d: int
    F: float
    eta: float
    T: float

    def __post_init__(self):
        object.__setattr__(self, "tones", tuple(self.tones))
        for tone in self.tones:
            if len(tone.f) != self.d:
                raise ValueError(f"tone frequency has {len(tone.f)} coordinates, expected {self.d}")
            if max(abs(x) for x in tone.f) > self.F:
                raise ValueError(f"tone frequency {tone.f} lies outside [-F, F]^d with F={self.F}")
        if self.T <= 0 or self.F <= 0 or self.eta <= 0:
            raise ValueError("T, F and eta must be positive")

    @property
    def k(self) -> int:
        return len(self.tones)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Magnitudes ``(k,)`` and frequencies ``(k, d)`` as arrays."""
        return _tone_arrays(self.tones, self.d)

    def energy(self) -> float:
        """``sum |v_i|^2``."""
        return float(sum(abs(t.v) ** 2 for t in self.tones))

    def scaled(self, c: complex) -> "SparseSignal":
        return SparseSignal(tuple(Tone(c * t.v, t.f) for t in self.tones), self.d, self.F, self.eta, self.T)


NOISE_KINDS = ("none", "gaussian", "burst")


@dataclass(frozen=True)
class NoiseModel:
    """Additive noise ``g(t)``.

    ``gaussian`` has ``E|g(t)|^2 = sigma**2`` with independent real and
    imaginary parts; ``burst`` is a fixed list of tones.
    """

    kind: str = "none"
    sigma: float = 0.0
    seed: int = 0
    tones: tuple[Tone, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"noise kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ValueError("sigma must be finite and nonnegative")
        object.__setattr__(self, "tones", tuple(self.tones))

    @classmethod
    def parse(cls, spec: str, seed: int = 0) -> "NoiseModel":
        """Parse ``none`` or ``gaussian:SIGMA``."""
        if spec == "none":
            return cls("none", 0.0, seed)
        kind, _, value = spec.partition(":")
        if kind == "gaussian" and value:
            return cls("gaussian", float(value), seed)
        raise ValueError(f"cannot parse noise spec {spec!r}; use 'none' or 'gaussian:SIGMA'")


@dataclass(frozen=True)
class NoiseLevel:
    """``value2 = noise_energy + delta * sum |v_i|^2``."""

    noise_energy: float
    signal_term: float
    stderr: float = 0.0

    @property
    def value2(self) -> float:
        return self.noise_energy + self.signal_term

    @property
    def value(self) -> float:
        return math.sqrt(self.value2)


# --------------------------------------------------------------------------
# numba kernels

@njit(cache=True)
def _splitmix(z):
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _gaussian_noise(bits, seed, sigma, out):
    n, d = bits.shape
    inv = 1.0 / 9007199254740992.0
    for i in range(n):
        h = _splitmix(seed)
        for c in range(d):
            h = _splitmix(h ^ bits[i, c])
        h2 = _splitmix(h)
        u1 = (float(h >> np.uint64(11)) + 0.5) * inv
        u2 = float(h2 >> np.uint64(11)) * inv
        r = sigma * math.sqrt(-math.log(u1))
        ang = 2.0 * math.pi * u2
        out[i] += complex(r * math.cos(ang), r * math.sin(ang))


@njit(cache=True)
def _tone_sum(points, v, f, out):
    n, d = points.shape
    for i in range(n):
        acc = 0j
        for q in range(v.shape[0]):
            ph = 0.0
            for c in range(d):
                ph += f[q, c] * points[i, c]
            ang = 2.0 * math.pi * ph
            acc += v[q] * complex(math.cos(ang), math.sin(ang))
        out[i] += acc


@njit(cache=True)
def _lattice_points(origin, rows, grid_table, sizes):
    d = origin.shape[0]
    total = 1
    for r in range(d):
        total *= sizes[r]
    pts = np.empty((total, d))
    idx = np.zeros(d, dtype=np.int64)
    for n in range(total):
        for c in range(d):
            acc = origin[c]
            for r in range(d):
                acc += grid_table[r, idx[r]] * rows[r, c]
            pts[n, c] = acc
        r = d - 1
        while r >= 0:
            idx[r] += 1
            if idx[r] < sizes[r]:
                break
            idx[r] = 0
            r -= 1
    return pts


def lattice_points(origin, rows, grids: Sequence[np.ndarray]) -> np.ndarray:
    """Points ``origin + sum_r i_r * rows[r]`` for ``i`` in the product of ``grids``.

    The result has shape ``(prod(len(g)), d)`` in C order over ``grids``.
    """
    sizes = np.array([len(g) for g in grids], dtype=np.int64)
    table = np.zeros((len(grids), int(sizes.max())))
    for r, g in enumerate(grids):
        table[r, : len(g)] = g
    return _lattice_points(
        np.ascontiguousarray(origin, dtype=float), np.ascontiguousarray(rows, dtype=float), table, sizes
    )


# --------------------------------------------------------------------------


class SignalOracle:
    """Sampling access to ``x(t) = x*(t) + g(t)`` with a sample counter.

    With ``enforce_duration=False`` queries outside ``[0, T]^d`` are answered
    anyway and counted in ``duration_violations``.
    """

    def __init__(self, signal: SparseSignal, noise: NoiseModel | None = None, *, enforce_duration: bool = True):
        self.signal = signal
        self.noise = noise if noise is not None else NoiseModel()
        self.enforce_duration = enforce_duration
        self.duration_violations = 0
        self.n_samples = 0
        self._v, self._f = signal.arrays()
        if self.noise.kind == "burst":
            gv, gf = _tone_arrays(self.noise.tones, signal.d)
            self._v = np.concatenate([self._v, gv])
            self._f = np.concatenate([self._f, gf])
        self._seed = np.uint64(self.noise.seed & 0xFFFFFFFFFFFFFFFF)

    @property
    def d(self) -> int:
        return self.signal.d

    @property
    def T(self) -> float:
        return self.signal.T

    def check_duration(self, lo: np.ndarray, hi: np.ndarray) -> None:
        """Raise :class:`DurationError` unless ``[lo, hi]`` lies inside ``[0, T]^d``."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        finite = bool(np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)))
        if not finite or np.any(lo < 0.0) or np.any(hi > self.T):
            if finite and not self.enforce_duration:
                self.duration_violations += 1
                return
            bad = np.where(lo < 0.0, lo, hi)
            raise DurationError(
                f"time points span [{lo.tolist()}, {hi.tolist()}], outside [0, {self.T}]^{self.d}",
                point=bad,
            )

    def _evaluate(self, points: np.ndarray) -> np.ndarray:
        out = np.zeros(points.shape[0], dtype=complex)
        if self._v.size:
            _tone_sum(points, self._v, self._f, out)
        if self.noise.kind == "gaussian" and self.noise.sigma > 0:
            bits = np.ascontiguousarray(points).view(np.uint64)
            _gaussian_noise(bits, self._seed, self.noise.sigma, out)
        return out

    def sample(self, t) -> np.ndarray | complex:
        """Sample at one point ``(d,)`` or many points ``(n, d)``."""
        t = np.asarray(t, dtype=float)
        single = t.ndim == 1
        points = np.ascontiguousarray(np.atleast_2d(t))
        if points.shape[1] != self.d:
            raise ValueError(f"expected points with {self.d} coordinates")
        self.check_duration(points.min(axis=0), points.max(axis=0))
        self.n_samples += points.shape[0]
        out = self._evaluate(points)
        return complex(out[0]) if single else out

    def sample_lattice(self, origin, rows, grids: Sequence[np.ndarray]) -> np.ndarray:
        """Sample at :func:`lattice_points` and return an array shaped like the grid.

        Values equal ``sample(lattice_points(origin, rows, grids))``; the tone
        part is evaluated through the separable structure of the lattice.
        """
        origin = np.asarray(origin, dtype=float)
        rows = np.asarray(rows, dtype=float)
        grids = [np.asarray(g, dtype=float) for g in grids]
        shape = tuple(len(g) for g in grids)
        lo = origin + sum(np.minimum(g.min() * rows[r], g.max() * rows[r]) for r, g in enumerate(grids))
        hi = origin + sum(np.maximum(g.min() * rows[r], g.max() * rows[r]) for r, g in enumerate(grids))
        self.check_duration(lo, hi)
        n = int(np.prod(shape))
        self.n_samples += n
        out = np.zeros(shape, dtype=complex)
        for q in range(self._v.size):
            f = self._f[q]
            term = self._v[q] * np.exp(2j * np.pi * float(f @ origin))
            factors = [np.exp(2j * np.pi * g * float(rows[r] @ f)) for r, g in enumerate(grids)]
            prod = factors[0]
            for fac in factors[1:]:
                prod = np.multiply.outer(prod, fac)
            out += term * prod
        if self.noise.kind == "gaussian" and self.noise.sigma > 0:
            points = lattice_points(origin, rows, grids)
            flat = np.zeros(n, dtype=complex)
            _gaussian_noise(points.view(np.uint64), self._seed, self.noise.sigma, flat)
            out += flat.reshape(shape)
        return out


def validate_separation(tones: Iterable[Tone], eta: float) -> bool:
    """True when every pair of tone frequencies is at least ``eta`` apart."""
    freqs = np.array([t.f for t in tones], dtype=float)
    if len(freqs) <= 1:
        return True
    return bool(pdist(freqs).min() >= eta)


def _sinc_T(diff: np.ndarray, T: float) -> np.ndarray:
    return np.prod(np.sinc(T * diff), axis=-1)


def noise_level(
    signal: SparseSignal,
    noise: NoiseModel,
    delta: float,
    trials: int = 0,
    rng: np.random.Generator | None = None,
) -> NoiseLevel:
    """Noise level ``N^2 = ||g||_T^2 + delta * sum |v_i|^2``.

    Gaussian and burst noise use exact formulas; ``trials`` Monte-Carlo draws
    of ``t`` are used only to attach a standard error for the gaussian case.
    """
    signal_term = delta * signal.energy()
    if noise.kind == "none":
        return NoiseLevel(0.0, signal_term)
    if noise.kind == "burst":
        v, f = _tone_arrays(noise.tones, signal.d)
        gram = _sinc_T(f[:, None, :] - f[None, :, :], signal.T)
        energy = float(np.real(v @ gram @ v.conj()))
        return NoiseLevel(energy, signal_term)
    stderr = 0.0
    if trials > 0:
        rng = rng if rng is not None else np.random.default_rng(noise.seed)
        pts = rng.uniform(0.0, signal.T, size=(trials, signal.d))
        out = np.zeros(trials, dtype=complex)
        _gaussian_noise(np.ascontiguousarray(pts).view(np.uint64), np.uint64(noise.seed), noise.sigma, out)
        stderr = float(np.std(np.abs(out) ** 2) / math.sqrt(trials))
    return NoiseLevel(noise.sigma**2, signal_term, stderr)


# --------------------------------------------------------------------------
# JSON


def _tone_to_json(t: Tone) -> dict:
    return {"re": t.v.real, "im": t.v.imag, "f": list(t.f)}


def _tone_from_json(obj: dict) -> Tone:
    return Tone(complex(obj["re"], obj["im"]), tuple(obj["f"]))


def signal_to_json(signal: SparseSignal, noise: NoiseModel) -> dict:
    noise_obj = {"kind": noise.kind, "sigma": noise.sigma, "seed": noise.seed}
    if noise.kind == "burst":
        noise_obj["tones"] = [_tone_to_json(t) for t in noise.tones]
    return {
        "d": signal.d,
        "F": signal.F,
        "eta": signal.eta,
        "T": signal.T,
        "tones": [_tone_to_json(t) for t in signal.tones],
        "noise": noise_obj,
    }


def signal_from_json(obj: dict) -> tuple[SparseSignal, NoiseModel]:
    try:
        signal = SparseSignal(
            tuple(_tone_from_json(t) for t in obj["tones"]),
            int(obj["d"]), float(obj["F"]), float(obj["eta"]), float(obj["T"]),
        )
        n = obj.get("noise", {"kind": "none"})
        noise = NoiseModel(
            n.get("kind", "none"), float(n.get("sigma", 0.0)), int(n.get("seed", 0)),
            tuple(_tone_from_json(t) for t in n.get("tones", [])),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed signal JSON: {exc}") from exc
    return signal, noise


def save_signal(path: str | Path, signal: SparseSignal, noise: NoiseModel) -> None:
    Path(path).write_text(json.dumps(signal_to_json(signal, noise), indent=2) + "\n", encoding="utf-8")


def load_signal(path: str | Path) -> tuple[SparseSignal, NoiseModel]:
    return signal_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
