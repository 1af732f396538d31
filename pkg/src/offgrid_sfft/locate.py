"""Frequency location: coarse voting rounds, least-squares refinement and the
outer halving loop.

Every non-empty bin carries a hypothesis ball (a center and a shared diameter
``L``).  A location round draws a time shift ``a`` and a step ``delta_a``,
computes two bin sketches and reads the phase difference
``phi_j = arg u_hat_j(a + delta_a) - arg u_hat_j(a)``, which for an isolated
tone equals ``2 pi w^T f`` modulo ``2 pi`` with ``w = Sigma^T delta_a``.  The ball
is covered by small cells; a cell gets a vote when its center reproduces the
observed phase to within ``pi * varpi``.  After ``r_vote`` rounds the cells
holding at least half the votes win, and the next ball (half the diameter)
is centered on them.

The cover has ``O((M sqrt(d))^d)`` cells, far too many to enumerate in three
dimensions, so :func:`tally_votes` counts votes by branch and bound over boxes
of cells.  A box is settled when each round either covers all of it or misses
all of it; only undecided boxes are split, and single cells use exactly the
same predicate as :func:`vote_round`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .filters import FilterParams
from .hash2bins import hash_to_bins, lattice_extent
from .hashing import HashInstance
from .numerics import wrap_phase
from .signal import DurationError

__all__ = [
    "LocateConfig",
    "make_locate_config",
    "HypothesisTable",
    "LocateResult",
    "sample_time_point",
    "cover_ball",
    "vote_round",
    "tally_votes",
    "elect_center",
    "locate_inner",
    "locate_inner_fine",
    "locate_signal",
    "search_rounds",
]

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class LocateConfig:
    """Constants of the location procedures.

    ``C`` is the guessed approximation ratio.  ``varpi = C**(-2/3)`` is the
    vote tolerance in cycles and ``M = 4 ceil(4 sqrt(d) C**(2/3))`` the cover
    resolution.  ``r_reg = c_reg * d`` observations feed the fine step, whose
    step length is clamped to ``1/L`` when ``clamp_fine`` is set.  With
    ``strict_duration`` off, a duration too short for some step no longer
    raises; the step is centered in the duration instead and may leave it.
    """

    d: int
    C: float = 120.0
    r_vote: int = 1
    c_reg: int = 10
    clamp_fine: bool = True
    strict_duration: bool = True

    def __post_init__(self):
        if self.C < 120:
            raise ValueError("the approximation ratio C must be at least 120")
        if self.r_vote < 1 or self.c_reg < 1:
            raise ValueError("r_vote and c_reg must be positive")

    @property
    def varpi(self) -> float:
        return self.C ** (-2.0 / 3.0)

    @property
    def M(self) -> int:
        return 4 * math.ceil(4.0 * math.sqrt(self.d) * self.C ** (2.0 / 3.0))

    @property
    def r_reg(self) -> int:
        return self.c_reg * self.d

    @property
    def c_star(self) -> int:
        return self.d**2

    @property
    def vote_threshold(self) -> int:
        return math.ceil(self.r_vote / 2.0)

    def echo(self) -> dict:
        return {"d": self.d, "C": self.C, "r_vote": self.r_vote, "c_reg": self.c_reg,
                "clamp_fine": self.clamp_fine,
                "strict_duration": self.strict_duration, "M": self.M, "varpi": self.varpi}


def default_r_vote(d: int, C: float, F: float, eta: float) -> int:
    """``ceil(3 (d ln(C d) + ln ln(F/eta + e))) + 5``."""
    return math.ceil(3.0 * (d * math.log(C * d) + math.log(math.log(F / eta + math.e)))) + 5


def make_locate_config(d: int, F: float, eta: float, *, C: float = 120.0, r_vote: int | None = None,
                       c_reg: int = 10, clamp_fine: bool = True, strict_duration: bool = True) -> LocateConfig:
    if r_vote is None:
        r_vote = default_r_vote(d, C, F, eta)
    return LocateConfig(d=d, C=C, r_vote=r_vote, c_reg=c_reg, clamp_fine=clamp_fine,
                        strict_duration=strict_duration)


@dataclass
class HypothesisTable:
    """Per-bin hypothesis centers (``None`` marks an abandoned bin) and the shared diameter."""

    centers: list
    L: float

    @classmethod
    def initial(cls, n_bins: int, d: int, L: float) -> "HypothesisTable":
        return cls([np.zeros(d) for _ in range(n_bins)], L)

    def live(self) -> list[int]:
        return [j for j, c in enumerate(self.centers) if c is not None]


@dataclass
class LocateResult:
    """Output of :func:`locate_signal` for one hash instance."""

    freqs: np.ndarray
    bins: np.ndarray
    coarse: np.ndarray
    fine_ok: np.ndarray
    L_final: float
    rounds: int
    history: list = field(default_factory=list)


# --------------------------------------------------------------------------
# time points


def search_rounds(d: int, F: float, T: float) -> int:
    """Number of halvings taking ``2 sqrt(d) F`` into ``(20 d/T, 40 d/T]``."""
    L = 2.0 * math.sqrt(d) * F
    n = 0
    while L > 40.0 * d / T:
        L /= 2.0
        n += 1
    return n


def _sampling_box(T: float, d: int, extent: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = 0.01 * T / d + extent
    hi = (1.0 - 0.01 / d) * T - extent
    return lo, hi


def sample_time_point(rng: np.random.Generator, h: HashInstance, cfg: LocateConfig, L: float, T: float,
                      extent=None, *, fine: bool = False):
    """Draw ``(a, delta_a)`` for one location round.

    ``w = Sigma^T delta_a`` has a uniform direction and length uniform on
    ``[varpi M/(4L), varpi M/(2L)]`` (clamped to ``1/L`` for the fine step when
    the config asks for it).  ``Sigma^T a`` is uniform on the set of ``z`` with
    both ``z`` and ``z + w`` in ``[0.01 T/d, (1 - 0.01/d) T]^d`` shrunk by
    ``extent`` per coordinate, so every lattice sample stays inside the duration.
    """
    d = h.d
    extent = np.zeros(d) if extent is None else np.asarray(extent, dtype=float)
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    length = rng.uniform(cfg.varpi * cfg.M / (4.0 * L), cfg.varpi * cfg.M / (2.0 * L))
    if fine and cfg.clamp_fine:
        length = min(length, 1.0 / L)
    w = length * direction
    lo, hi = _sampling_box(T, d, extent)
    z_lo = lo - np.minimum(w, 0.0)
    z_hi = hi - np.maximum(w, 0.0)
    if np.any(z_lo > z_hi):
        if cfg.strict_duration:
            raise DurationError(
                f"sampling duration requirement fails: T={T} is too short for diameter L={L} "
                f"(lattice extent {extent.tolist()}, step {w.tolist()})"
            )
        z_lo, z_hi = np.minimum(z_lo, z_hi), np.maximum(z_lo, z_hi)
    z = rng.uniform(z_lo, z_hi)
    inv_t = h.sigma / h.beta**2  # (Sigma^T)^{-1}
    return inv_t @ z, inv_t @ w


# --------------------------------------------------------------------------
# cover and votes


def cover_spacing(L: float, M: int, d: int) -> float:
    return L / (M * math.sqrt(d))


def cover_radius(L: float, M: int) -> float:
    return L / 2.0 + L / (2.0 * M)


def _grid_extent(L: float, M: int, d: int) -> int:
    return int(math.floor(cover_radius(L, M) / cover_spacing(L, M, d) + 1e-9))


def cover_ball(center, L: float, M: int) -> tuple[np.ndarray, np.ndarray]:
    """Centers of sub-balls of diameter ``L/M`` covering the ball of diameter ``L``.

    Returns ``(centers, indices)``: grid points ``center + spacing * n`` with
    spacing ``L/(M sqrt(d))`` inside radius ``L/2 + L/(2M)``.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    d = center.size
    step = cover_spacing(L, M, d)
    radius = cover_radius(L, M)
    n = _grid_extent(L, M, d)
    axes = np.arange(-n, n + 1)
    idx = np.stack(np.meshgrid(*([axes] * d), indexing="ij"), axis=-1).reshape(-1, d)
    keep = _in_ball(idx, step, radius)
    idx = idx[keep]
    return center + step * idx, idx


def _in_ball(idx: np.ndarray, step: float, radius: float) -> np.ndarray:
    return np.sqrt(np.sum((step * idx) ** 2, axis=-1)) <= radius


@njit(cache=True)
def _cell_votes(phi, w, freqs, varpi):
    n, d = freqs.shape
    out = np.zeros(n, dtype=np.bool_)
    tol = math.pi * varpi
    two_pi = 2.0 * math.pi
    for i in range(n):
        dot = 0.0
        for c in range(d):
            dot += w[c] * freqs[i, c]
        theta = phi - two_pi * dot
        r = theta - two_pi * math.floor(theta / two_pi)
        dist = min(r, two_pi - r)
        out[i] = dist <= tol
    return out


def vote_round(phi: float, w, candidates, varpi: float) -> np.ndarray:
    """Boolean votes of candidate frequencies for one observed phase difference.

    A candidate ``f_q`` votes when ``circ_dist(phi - 2 pi w^T f_q) <= pi varpi``.
    """
    candidates = np.ascontiguousarray(np.atleast_2d(np.asarray(candidates, dtype=float)))
    return _cell_votes(float(phi), np.ascontiguousarray(w, dtype=float), candidates, float(varpi))


@njit(cache=True)
def _grow2(arr, n):
    out = np.empty((2 * arr.shape[0], arr.shape[1]), dtype=arr.dtype)
    out[:n] = arr[:n]
    return out


@njit(cache=True)
def _grow1(arr, n):
    out = np.empty(2 * arr.shape[0], dtype=arr.dtype)
    out[:n] = arr[:n]
    return out


@njit(cache=True)
def _tally(center, step, radius, n_ext, w, phi, varpi, thr):
    """Branch and bound over index boxes of the cover grid.

    Each stack entry carries the rounds still undecided for its box and the
    number of rounds that vote for the whole box, so children only revisit
    the undecided rounds.
    """
    d = center.shape[0]
    R = w.shape[0]
    two_pi = 2.0 * math.pi
    half = varpi / 2.0
    eps = 1e-9
    tol = math.pi * varpi
    base = np.empty(R)
    hw = np.empty((R, d))
    for r in range(R):
        acc = 0.0
        for c in range(d):
            acc += w[r, c] * center[c]
            hw[r, c] = step * w[r, c]
        base[r] = acc - phi[r] / two_pi
    rad2 = radius * radius

    cap = 256
    st_lo = np.empty((cap, d), dtype=np.int64)
    st_hi = np.empty((cap, d), dtype=np.int64)
    st_rounds = np.empty((cap, R), dtype=np.int32)
    st_nact = np.empty(cap, dtype=np.int64)
    st_all = np.empty(cap, dtype=np.int64)
    st_inside = np.empty(cap, dtype=np.bool_)
    for c in range(d):
        st_lo[0, c] = -n_ext
        st_hi[0, c] = n_ext
    for r in range(R):
        st_rounds[0, r] = r
    st_nact[0] = R
    st_all[0] = 0
    st_inside[0] = False
    top = 1

    wcap = 256
    win_lo = np.empty((wcap, d), dtype=np.int64)
    win_hi = np.empty((wcap, d), dtype=np.int64)
    win_cnt = np.empty(wcap, dtype=np.int64)
    nwin = 0
    visits = 0
    lo = np.empty(d, dtype=np.int64)
    hi = np.empty(d, dtype=np.int64)
    f = np.empty(d)
    active = np.empty(R, dtype=np.int32)

    while top > 0:
        top -= 1
        visits += 1
        single = True
        for c in range(d):
            lo[c] = st_lo[top, c]
            hi[c] = st_hi[top, c]
            if lo[c] != hi[c]:
                single = False
        nact = st_nact[top]
        for i in range(nact):
            active[i] = st_rounds[top, i]
        all_count = st_all[top]
        inside = st_inside[top]

        if not inside:
            dmin = 0.0
            dmax = 0.0
            for c in range(d):
                a = lo[c] * step
                b = hi[c] * step
                if a > 0.0:
                    dmin += a * a
                elif b < 0.0:
                    dmin += b * b
                dmax += max(a * a, b * b)
            if dmin > rad2 * (1.0 + 1e-12):
                continue
            inside = dmax < rad2 * (1.0 - 1e-12)

        if single:
            if not inside:
                sq = 0.0
                for c in range(d):
                    x = step * lo[c]
                    sq += x * x
                if math.sqrt(sq) > radius:
                    continue
            for c in range(d):
                f[c] = center[c] + step * lo[c]
            count = all_count
            for i in range(nact):
                r = active[i]
                dot = 0.0
                for c in range(d):
                    dot += w[r, c] * f[c]
                theta = phi[r] - two_pi * dot
                rr = theta - two_pi * math.floor(theta / two_pi)
                if min(rr, two_pi - rr) <= tol:
                    count += 1
                elif count + (nact - i - 1) < thr:
                    break
            if count >= thr:
                if nwin == wcap:
                    win_lo = _grow2(win_lo, nwin)
                    win_hi = _grow2(win_hi, nwin)
                    win_cnt = _grow1(win_cnt, nwin)
                    wcap *= 2
                for c in range(d):
                    win_lo[nwin, c] = lo[c]
                    win_hi[nwin, c] = lo[c]
                win_cnt[nwin] = count
                nwin += 1
            continue

        # classify the undecided rounds on this box; keep the partial ones
        npart = 0
        for i in range(nact):
            r = active[i]
            mid = base[r]
            span = 0.0
            for c in range(d):
                mid += hw[r, c] * (0.5 * (lo[c] + hi[c]))
                span += abs(hw[r, c]) * (0.5 * (hi[c] - lo[c]))
            gap = abs(mid - math.floor(mid + 0.5))
            if gap - span > half + eps:
                pass
            elif gap + span <= half - eps:
                all_count += 1
            else:
                active[npart] = r
                npart += 1
            if all_count + npart + (nact - i - 1) < thr:
                all_count = -1
                break
        if all_count < 0 or all_count + npart < thr:
            continue
        if npart == 0 and inside:
            if nwin == wcap:
                win_lo = _grow2(win_lo, nwin)
                win_hi = _grow2(win_hi, nwin)
                win_cnt = _grow1(win_cnt, nwin)
                wcap *= 2
            for c in range(d):
                win_lo[nwin, c] = lo[c]
                win_hi[nwin, c] = hi[c]
            win_cnt[nwin] = all_count
            nwin += 1
            continue
        axis = 0
        width = -1
        for c in range(d):
            if hi[c] - lo[c] > width:
                width = hi[c] - lo[c]
                axis = c
        split = (lo[axis] + hi[axis]) // 2
        if top + 2 > cap:
            st_lo = _grow2(st_lo, top)
            st_hi = _grow2(st_hi, top)
            st_rounds = _grow2(st_rounds, top)
            st_nact = _grow1(st_nact, top)
            st_all = _grow1(st_all, top)
            st_inside = _grow1(st_inside, top)
            cap *= 2
        for k in range(2):
            for c in range(d):
                st_lo[top, c] = lo[c]
                st_hi[top, c] = hi[c]
            if k == 0:
                st_hi[top, axis] = split
            else:
                st_lo[top, axis] = split + 1
            for i in range(npart):
                st_rounds[top, i] = active[i]
            st_nact[top] = npart
            st_all[top] = all_count
            st_inside[top] = inside
            top += 1
    return win_lo[:nwin].copy(), win_hi[:nwin].copy(), win_cnt[:nwin].copy(), visits


@dataclass
class VoteTally:
    """Winning cells of one bin as index boxes with a common vote count each."""

    center: np.ndarray
    step: float
    lo: np.ndarray
    hi: np.ndarray
    counts: np.ndarray
    visits: int = 0

    def cells(self) -> tuple[np.ndarray, np.ndarray]:
        """Expand the boxes into ``(indices, counts)`` sorted lexicographically."""
        d = self.center.size
        idx_list, cnt_list = [], []
        for lo, hi, c in zip(self.lo, self.hi, self.counts):
            axes = [np.arange(lo[i], hi[i] + 1) for i in range(d)]
            grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
            idx_list.append(grid)
            cnt_list.append(np.full(len(grid), c))
        if not idx_list:
            return np.zeros((0, d), dtype=np.int64), np.zeros(0, dtype=np.int64)
        idx = np.concatenate(idx_list)
        cnt = np.concatenate(cnt_list)
        order = np.lexsort(idx.T[::-1])
        return idx[order], cnt[order]

    @property
    def empty(self) -> bool:
        return len(self.counts) == 0


def tally_votes(center, L: float, cfg: LocateConfig, w: np.ndarray, phi: np.ndarray) -> VoteTally:
    """Cells of the cover of ``ball(center, L)`` holding at least ``ceil(r/2)`` of the
    ``r = len(phi)`` votes, where round ``i`` uses step ``w[i]`` and phase ``phi[i]``."""
    center = np.ascontiguousarray(np.atleast_1d(center), dtype=float)
    d = center.size
    step = cover_spacing(L, cfg.M, d)
    thr = math.ceil(len(phi) / 2.0)
    w = np.asarray(w, dtype=float).reshape(len(phi), d)
    # Short steps give narrow phase ranges and decide boxes sooner.
    order = np.argsort(np.linalg.norm(w, axis=1), kind="stable")
    lo, hi, cnt, visits = _tally(
        center, step, cover_radius(L, cfg.M), _grid_extent(L, cfg.M, d),
        np.ascontiguousarray(w[order]), np.ascontiguousarray(np.asarray(phi, dtype=float)[order]),
        float(cfg.varpi), thr,
    )
    return VoteTally(center, step, lo, hi, cnt, visits)


def elect_center(tally: VoteTally, L: float, M: int) -> tuple[np.ndarray | None, bool]:
    """New center for the next ball of diameter ``L/2``.

    Picks the cell with the most votes (lexicographically smallest index on
    ties).  If the next ball around it would not contain every winning cell,
    falls back to the center of the winners' bounding box.  Returns
    ``(center, contained)``; ``center`` is ``None`` when nothing won.
    """
    if tally.empty:
        return None, False
    best = tally.counts.max()
    tied = tally.lo[tally.counts == best]
    order = np.lexsort(tied.T[::-1])
    pick = tied[order[0]].astype(float)
    reach = L / 4.0 - L / (2.0 * M)

    def farthest(point):
        gap = np.maximum(np.abs(tally.lo - point), np.abs(tally.hi - point))
        return float(np.sqrt(np.max(np.sum(gap.astype(float) ** 2, axis=1)))) * tally.step

    if farthest(pick) <= reach:
        return tally.center + tally.step * pick, True
    mid = (tally.lo.min(axis=0) + tally.hi.max(axis=0)) / 2.0
    return tally.center + tally.step * mid, farthest(mid) <= reach


# --------------------------------------------------------------------------
# location procedures


def _phase_rounds(oracle, h, p, cfg, L, T, rng, rounds, extent, fine=False):
    """Run ``rounds`` sketch pairs; return steps ``w (rounds, d)`` and phases ``(rounds, B^d)``."""
    ws = np.empty((rounds, p.d))
    phis = np.empty((rounds, p.n_bins))
    for r in range(rounds):
        a, da = sample_time_point(rng, h, cfg, L, T, extent, fine=fine)
        first = hash_to_bins(oracle, h, a, p).flat
        second = hash_to_bins(oracle, h, a + da, p).flat
        ws[r] = da @ h.sigma
        phis[r] = np.angle(second) - np.angle(first)
    return ws, phis


def locate_inner(oracle, h: HashInstance, p: FilterParams, cfg: LocateConfig, table: HypothesisTable,
                 T: float, rng: np.random.Generator) -> HypothesisTable:
    """One voting stage: every live bin moves to a ball of half the diameter or is dropped."""
    L = table.L
    live = table.live()
    new = HypothesisTable([None] * len(table.centers), L / 2.0)
    if not live:
        return new
    extent = lattice_extent(p, h.sigma)
    ws, phis = _phase_rounds(oracle, h, p, cfg, L, T, rng, cfg.r_vote, extent)
    for j in live:
        tally = tally_votes(table.centers[j], L, cfg, ws, phis[:, j])
        center, _ = elect_center(tally, L, cfg.M)
        new.centers[j] = center
    return new


def locate_inner_fine(oracle, h: HashInstance, p: FilterParams, cfg: LocateConfig, table: HypothesisTable,
                      T: float, rng: np.random.Generator) -> tuple[list[int], np.ndarray, np.ndarray]:
    """Least-squares refinement of every live center.

    Solves ``min ||psi - 2 pi Delta (f - f0)||`` where row ``r`` of ``Delta`` is
    ``w_r`` and ``psi_r`` is the observed phase minus the phase predicted by
    the current center ``f0``, reduced into ``(-pi, pi]``.  Returns the live
    bins, refined frequencies and a flag per bin that is False when the system
    was rank deficient and the coarse center was kept.
    """
    live = table.live()
    if not live:
        return [], np.zeros((0, p.d)), np.zeros(0, dtype=bool)
    extent = lattice_extent(p, h.sigma)
    ws, phis = _phase_rounds(oracle, h, p, cfg, table.L, T, rng, cfg.r_reg, extent, fine=True)
    svals = np.linalg.svd(ws, compute_uv=False)
    full_rank = svals.size == p.d and svals[-1] > 1e-12 * max(svals[0], 1e-300)
    freqs = np.empty((len(live), p.d))
    ok = np.zeros(len(live), dtype=bool)
    for n, j in enumerate(live):
        f0 = table.centers[j]
        if not full_rank:
            freqs[n] = f0
            continue
        psi = wrap_phase(phis[:, j] - TWO_PI * (ws @ f0))
        step, *_ = np.linalg.lstsq(TWO_PI * ws, psi, rcond=None)
        freqs[n] = f0 + step
        ok[n] = True
    return live, freqs, ok


def longest_step(cfg: LocateConfig, F: float, T: float) -> float:
    """Largest ``||Sigma^T delta_a||`` any round of :func:`locate_signal` may draw."""
    d = cfg.d
    L0 = 2.0 * math.sqrt(d) * F
    n = search_rounds(d, F, T)
    L_fine = L0 / 2**n
    fine = 1.0 / L_fine if cfg.clamp_fine else cfg.varpi * cfg.M / (2.0 * L_fine)
    if n == 0:
        return fine
    return max(fine, cfg.varpi * cfg.M / (2.0 * (L0 / 2 ** (n - 1))))


def duration_check(p: FilterParams, cfg: LocateConfig, h: HashInstance, T: float) -> None:
    """Raise :class:`DurationError` when the worst-case step cannot fit in ``[0, T]^d``."""
    extent = lattice_extent(p, h.sigma)
    lo, hi = _sampling_box(T, p.d, extent)
    step = longest_step(cfg, p.F, T)
    if np.any(hi - lo < step):
        raise DurationError(
            f"sampling duration requirement fails: T={T} leaves {np.min(hi - lo):.4g} per coordinate "
            f"but steps up to {step:.4g} are needed"
        )


def locate_signal(oracle, h: HashInstance, p: FilterParams, cfg: LocateConfig, T: float,
                  rng: np.random.Generator, *, check_duration: bool = True) -> LocateResult:
    """Halve the hypothesis diameter until it is at most ``40 d/T``, then refine.

    Returns at most ``B^d`` frequencies, one per surviving bin.
    """
    d = p.d
    L = 2.0 * math.sqrt(d) * p.F
    n_rounds = search_rounds(d, p.F, T)
    if check_duration and cfg.strict_duration:
        duration_check(p, cfg, h, T)
    table = HypothesisTable.initial(p.n_bins, d, L)
    history = []
    for _ in range(n_rounds):
        table = locate_inner(oracle, h, p, cfg, table, T, rng)
        history.append(len(table.live()))
    live, freqs, ok = locate_inner_fine(oracle, h, p, cfg, table, T, rng)
    coarse = np.array([table.centers[j] for j in live]).reshape(len(live), d)
    return LocateResult(freqs, np.asarray(live, dtype=np.int64), coarse, ok, table.L, n_rounds, history)
