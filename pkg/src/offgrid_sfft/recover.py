"""Magnitude estimation and the staged recovery pipeline.

``one_stage`` hashes once, locates a frequency per surviving bin and reads
its magnitude off a fresh sketch.  ``multi_stage`` repeats that ``r_merge``
times, ``merged_stage`` keeps frequencies that most repetitions agree on,
and ``recovery_stage`` runs the whole thing twice, keeps tones confirmed by
both passes and returns the ``k`` largest.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .filters import FilterParams
from .hash2bins import hash_to_bins, lattice_extent
from .hashing import HashInstance, bin_index, hash_bin, is_collision, is_large_offset, sample_hash_instance
from .locate import LocateConfig, _sampling_box, locate_signal
from .rangetree import RangeTree
from .signal import DurationError, SparseSignal

__all__ = [
    "CandidateTone",
    "RecoveryConfig",
    "make_recovery_config",
    "default_r_merge",
    "sample_shift",
    "estimate_signal",
    "one_stage",
    "multi_stage",
    "merged_stage",
    "recovery_stage",
    "tones_to_json",
    "save_tones",
    "load_tones",
]


@dataclass(frozen=True)
class CandidateTone:
    """A recovered ``(v, f)`` pair with the repetition and bin that produced it."""

    v: complex
    f: tuple[float, ...]
    stage: int = 0
    bin: int = -1
    pass_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "v", complex(self.v))
        object.__setattr__(self, "f", tuple(float(x) for x in self.f))
        if not (math.isfinite(self.v.real) and math.isfinite(self.v.imag)) or not all(map(math.isfinite, self.f)):
            raise ValueError("candidate tone fields must be finite")

    @property
    def freq(self) -> np.ndarray:
        return np.asarray(self.f, dtype=float)


MERGE_ORDERS = ("medoid", "lex")


def default_r_merge(d: int, k: int, c_m: float = 3.0) -> int:
    return max(1, math.ceil(c_m * d * math.log(d + 1) * math.log(k + 1)))


@dataclass(frozen=True)
class RecoveryConfig:
    """Everything the pipeline needs besides the oracle.

    ``merge_order`` picks the order in which :func:`merged_stage` visits
    candidates (see there).  ``half_bin_phase`` multiplies estimates by ``exp(-pi i ||j||_1 / B)`` for
    bin ``j``.  Bins here are centered on ``j/B`` so the factor is off by
    default.  ``oracle_mode`` drops candidates from bins whose true tone
    collides or sits at a large offset; it needs the planted signal.
    """

    params: FilterParams
    locate: LocateConfig
    r_merge: int
    cross_pass_c: float = 1.0
    seed: int = 0
    half_bin_phase: bool = False
    oracle_mode: bool = False
    merge_order: str = "medoid"

    def __post_init__(self):
        if self.merge_order not in MERGE_ORDERS:
            raise ValueError(f"merge_order must be one of {MERGE_ORDERS}")
        if self.r_merge < 1:
            raise ValueError("r_merge must be at least 1")
        if self.cross_pass_c <= 0:
            raise ValueError("cross_pass_c must be positive")
        if self.params.d != self.locate.d:
            raise ValueError("filter and locate configs disagree on d")

    @property
    def merge_threshold(self) -> int:
        return math.ceil(0.8 * self.r_merge)

    @property
    def cluster_edge(self) -> float:
        return self.params.eta / self.params.d**3

    @property
    def clear_edge(self) -> float:
        return self.params.eta / (10.0 * math.sqrt(self.params.d))

    def echo(self) -> dict:
        return {
            "filter": self.params.echo(),
            "locate": self.locate.echo(),
            "r_merge": self.r_merge,
            "merge_threshold": self.merge_threshold,
            "cluster_edge": self.cluster_edge,
            "clear_edge": self.clear_edge,
            "cross_pass_c": self.cross_pass_c,
            "half_bin_phase": self.half_bin_phase,
            "oracle_mode": self.oracle_mode,
            "merge_order": self.merge_order,
        }


def make_recovery_config(params: FilterParams, locate: LocateConfig, *, r_merge: int | None = None,
                         c_m: float = 3.0, **kwargs) -> RecoveryConfig:
    if r_merge is None:
        r_merge = default_r_merge(params.d, params.k, c_m)
    return RecoveryConfig(params, locate, r_merge, **kwargs)


def _substream(seed: int, *labels: int) -> np.random.Generator:
    return np.random.default_rng([seed, *labels])


def sample_shift(rng: np.random.Generator, h: HashInstance, T: float, extent, *, strict: bool = True) -> np.ndarray:
    """Time shift ``a`` with ``Sigma^T a`` uniform on the admissible box.

    When the box is empty, ``strict`` raises; otherwise the draw uses the
    box with its inverted coordinates swapped.
    """
    lo, hi = _sampling_box(T, h.d, np.asarray(extent, dtype=float))
    if np.any(lo > hi):
        if not strict:
            lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)
            return (h.sigma / h.beta**2) @ rng.uniform(lo, hi)
        raise DurationError(f"sampling duration requirement fails: T={T} cannot hold one sketch")
    return (h.sigma / h.beta**2) @ rng.uniform(lo, hi)


def estimate_signal(oracle, h: HashInstance, p: FilterParams, a, freqs, *, half_bin_phase: bool = False):
    """Magnitude estimates ``v'`` for the given frequencies from one sketch at shift ``a``.

    ``v'(xi) = u_hat[bin(xi)] * exp(-2 pi i (Sigma^T a)^T xi)``.
    """
    freqs = np.atleast_2d(np.asarray(freqs, dtype=float))
    if freqs.size == 0:
        return np.zeros(0, dtype=complex)
    a = np.asarray(a, dtype=float)
    sketch = hash_to_bins(oracle, h, a, p).flat
    bins = hash_bin(h, p.B, freqs)
    values = sketch[bin_index(bins, p.B)]
    values = values * np.exp(-2j * np.pi * (freqs @ (a @ h.sigma)))
    if half_bin_phase:
        values = values * np.exp(-1j * np.pi * np.sum(np.abs(bins), axis=1) / p.B)
    return values


def one_stage(oracle, cfg: RecoveryConfig, T: float, rng: np.random.Generator, *, stage: int = 0,
              pass_id: int = 0, truth: SparseSignal | None = None) -> list[CandidateTone]:
    """Hash once, locate, estimate.  Returns at most ``B^d`` candidates."""
    p = cfg.params
    h = sample_hash_instance(rng, p, uid=stage)
    located = locate_signal(oracle, h, p, cfg.locate, T, rng)
    if len(located.bins) == 0:
        return []
    a = sample_shift(rng, h, T, lattice_extent(p, h.sigma), strict=cfg.locate.strict_duration)
    values = estimate_signal(oracle, h, p, a, located.freqs, half_bin_phase=cfg.half_bin_phase)
    keep = np.ones(len(values), dtype=bool)
    if cfg.oracle_mode:
        if truth is None:
            raise ValueError("oracle mode needs the planted signal")
        _, true_f = truth.arrays()
        bad_bins = set()
        for i, f in enumerate(true_f):
            if is_collision(h, p.B, true_f, i) or is_large_offset(h, p.B, p.alpha, f):
                bad_bins.add(int(bin_index(hash_bin(h, p.B, f), p.B)))
        keep = np.array([int(b) not in bad_bins for b in located.bins], dtype=bool)
    return [
        CandidateTone(v, tuple(f), stage, int(b), pass_id)
        for v, f, b, k in zip(values, located.freqs, located.bins, keep)
        if k
    ]


def multi_stage(oracle, cfg: RecoveryConfig, T: float, *, pass_id: int = 0,
                truth: SparseSignal | None = None, repetitions=None) -> list[CandidateTone]:
    """Union of ``r_merge`` independent :func:`one_stage` runs.

    Repetition ``r`` of pass ``pass_id`` draws from its own generator seeded
    by ``(seed, pass_id, r)``, so the order in which repetitions run does
    not matter.
    """
    reps = range(cfg.r_merge) if repetitions is None else repetitions
    out: list[CandidateTone] = []
    for r in reps:
        rng = _substream(cfg.seed, pass_id, r)
        out.extend(one_stage(oracle, cfg, T, rng, stage=r, pass_id=pass_id, truth=truth))
    return out


def _lower_median(x: np.ndarray) -> float:
    s = np.sort(x)
    return float(s[(len(s) - 1) // 2])


def _visit_order(freqs: np.ndarray, tree: RangeTree, half_cluster: float, how: str) -> np.ndarray:
    lex = np.lexsort(freqs.T[::-1])
    if how == "lex":
        return lex
    # Sum of distances to the other candidates in the cluster cube: the most
    # central member of each cluster comes first.
    score = np.empty(len(freqs))
    for i, f in enumerate(freqs):
        members = tree.report(f - half_cluster, f + half_cluster)
        score[i] = np.linalg.norm(freqs[members] - f, axis=1).sum()
    rank = np.empty(len(freqs), dtype=np.int64)
    rank[lex] = np.arange(len(freqs))
    return np.lexsort((rank, score))


def merged_stage(candidates: list[CandidateTone], cfg: RecoveryConfig) -> list[CandidateTone]:
    """Keep frequencies that at least ``ceil(0.8 r_merge)`` candidates agree on.

    Candidates are visited one at a time.  When the cube of edge ``eta/d^3``
    around the visited frequency holds enough live candidates, the tone is
    emitted at that frequency with the coordinate-wise lower median of the
    cube's magnitudes, and every candidate in the cube of edge
    ``eta/(10 sqrt d)`` around it is deleted.

    With ``merge_order="medoid"`` the visit order is ascending total distance
    to the neighbours in the cluster cube, so each cluster is anchored at its
    most central member; ``"lex"`` visits in ascending lexicographic order of
    frequency.  Both orders break ties lexicographically and do not depend on
    the order of ``candidates``.
    """
    if not candidates:
        return []
    freqs = np.array([c.f for c in candidates], dtype=float)
    mags = np.array([c.v for c in candidates], dtype=complex)
    tree = RangeTree(freqs)
    half_cluster = cfg.cluster_edge / 2.0
    half_clear = cfg.clear_edge / 2.0
    order = _visit_order(freqs, tree, half_cluster, cfg.merge_order)
    alive = np.ones(len(candidates), dtype=bool)
    out = []
    for i in order:
        if not alive[i]:
            continue
        f = freqs[i]
        members = tree.report(f - half_cluster, f + half_cluster)
        if len(members) < cfg.merge_threshold:
            continue
        v = complex(_lower_median(mags[members].real), _lower_median(mags[members].imag))
        src = candidates[i]
        out.append(CandidateTone(v, tuple(f), src.stage, src.bin, src.pass_id))
        cleared = tree.report(f - half_clear, f + half_clear)
        tree.delete(cleared)
        alive[cleared] = False
    return out


def _fill_frequencies(taken: np.ndarray, n: int, F: float, eta: float, d: int) -> list[np.ndarray]:
    """Deterministic frequencies in ``[-F, F]^d`` at least ``eta/2`` from ``taken`` and each other."""
    found: list[np.ndarray] = []
    pts = list(taken)
    steps = max(1, int(math.floor(2 * F / eta)))
    axis = np.linspace(-F, F, steps + 1)
    for idx in np.ndindex(*([len(axis)] * d)):
        cand = axis[list(idx)]
        if all(np.linalg.norm(cand - q) >= eta / 2.0 for q in pts):
            found.append(cand)
            pts.append(cand)
            if len(found) == n:
                break
    return found


@dataclass
class RecoveryResult:
    tones: list[CandidateTone]
    first_pass: list[CandidateTone]
    second_pass: list[CandidateTone]
    n_candidates: tuple[int, int]
    padded: int = 0
    extra: dict = field(default_factory=dict)


def recovery_stage(oracle, cfg: RecoveryConfig, T: float, k: int, *,
                   truth: SparseSignal | None = None) -> RecoveryResult:
    """Two merged passes, cross-checked, sorted by magnitude, cut to ``k``.

    A second-pass tone survives when some first-pass frequency lies within
    ``cross_pass_c / T`` in Euclidean distance.  When fewer than ``k``
    survive, zero-magnitude tones fill the gap at unused first-pass
    frequencies, then at deterministic grid points.
    """
    first_raw = multi_stage(oracle, cfg, T, pass_id=1, truth=truth)
    first = merged_stage(first_raw, cfg)
    second_raw = multi_stage(oracle, cfg, T, pass_id=2, truth=truth)
    second = merged_stage(second_raw, cfg)
    radius = cfg.cross_pass_c / T
    first_f = np.array([c.f for c in first], dtype=float).reshape(len(first), cfg.params.d)
    kept = []
    used = np.zeros(len(first), dtype=bool)
    for tone in second:
        if len(first) == 0:
            break
        dist = np.linalg.norm(first_f - tone.freq, axis=1)
        if dist.min() <= radius:
            kept.append(tone)
            used[dist <= radius] = True
    # Stable sort: ties keep insertion order.
    kept.sort(key=lambda c: -abs(c.v))
    chosen = kept[:k]
    padded = 0
    if len(chosen) < k:
        for j in np.nonzero(~used)[0]:
            if len(chosen) == k:
                break
            src = first[j]
            chosen.append(CandidateTone(0j, src.f, src.stage, src.bin, 1))
            padded += 1
    if len(chosen) < k:
        taken = np.array([c.f for c in chosen], dtype=float).reshape(len(chosen), cfg.params.d)
        for f in _fill_frequencies(taken, k - len(chosen), cfg.params.F, cfg.params.eta, cfg.params.d):
            chosen.append(CandidateTone(0j, tuple(f), -1, -1, 0))
            padded += 1
    return RecoveryResult(chosen, first, second, (len(first_raw), len(second_raw)), padded)


def tones_to_json(tones: list[CandidateTone], k: int, d: int, config_echo: dict, seed: int) -> dict:
    return {
        "k": k,
        "d": d,
        "tones": [
            {"re": t.v.real, "im": t.v.imag, "f": list(t.f),
             "provenance": {"pass": t.pass_id, "stage": t.stage, "bin": t.bin}}
            for t in tones
        ],
        "config_echo": config_echo,
        "seed": seed,
    }


def save_tones(path, obj: dict) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def load_tones(path) -> list[CandidateTone]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        return [
            CandidateTone(complex(t["re"], t["im"]), tuple(t["f"]),
                          t.get("provenance", {}).get("stage", 0), t.get("provenance", {}).get("bin", -1),
                          t.get("provenance", {}).get("pass", 0))
            for t in obj["tones"]
        ]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed tones JSON: {exc}") from exc
