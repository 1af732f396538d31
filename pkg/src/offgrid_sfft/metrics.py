"""Error measures for recovered tones.

All closed forms average over the box ``[-T/2, T/2]^d``, where the inner
product of two tones is ``v1 * conj(v2) * sinc_T(f1 - f2)`` with the real
``sinc_T(x) = prod_r sinc(T x_r)``.  Signals here are observed on
``[0, T]^d``; :func:`recenter` moves magnitudes referenced at ``t = 0`` to
the box center so the same formulas give errors over the observation window.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "sinc_T",
    "recenter",
    "tone_err_closed",
    "cross_tone_closed",
    "signal_err",
    "signal_err_gram",
    "MatchReport",
    "match_tones",
    "snr_estimate",
    "mc_tone_err",
    "mc_cross_tone",
    "mc_signal_err",
    "approx_tone_err",
    "cross_tone_bound_audit",
    "sandwich_audit",
    "geometric_audit",
    "metrics_to_json",
]

HUNGARIAN_MAX = 64


def sinc_T(diff, T: float):
    """``prod_r sinc(T * diff_r)`` over the last axis."""
    return np.prod(np.sinc(T * np.asarray(diff, dtype=float)), axis=-1)


def recenter(v, f, T: float):
    """Magnitude at the box center for a tone whose magnitude ``v`` is referenced at ``t = 0``."""
    f = np.asarray(f, dtype=float)
    return np.asarray(v) * np.exp(1j * np.pi * T * np.sum(f, axis=-1))


def tone_err_closed(v, f, v2, f2, T: float) -> float:
    """``|v|^2 + |v2|^2 - 2 Re(v conj(v2)) sinc_T(f2 - f)``."""
    s = float(sinc_T(np.asarray(f2, dtype=float) - np.asarray(f, dtype=float), T))
    val = abs(v) ** 2 + abs(v2) ** 2 - 2.0 * (complex(v) * complex(v2).conjugate()).real * s
    return max(val, 0.0)


def cross_tone_closed(vi, fi, vi2, fi2, vj, fj, vj2, fj2, T: float) -> complex:
    """Inner product of ``a_i = x_i - x_i'`` and ``a_j = x_j - x_j'`` over the box.

    ``err_ij = cross + conj(cross)`` is the cross term of the signal error;
    with ``i == j`` the value is real and equals :func:`tone_err_closed`.
    """
    fi, fi2, fj, fj2 = (np.asarray(x, dtype=float) for x in (fi, fi2, fj, fj2))
    conj = complex.conjugate
    return complex(
        vi * conj(complex(vj)) * sinc_T(fi - fj, T)
        - vi * conj(complex(vj2)) * sinc_T(fi - fj2, T)
        - vi2 * conj(complex(vj)) * sinc_T(fi2 - fj, T)
        + vi2 * conj(complex(vj2)) * sinc_T(fi2 - fj2, T)
    )


def _as_arrays(tones, d=None):
    v = np.array([complex(t.v) for t in tones], dtype=complex)
    f = np.array([t.f for t in tones], dtype=float)
    if d is not None:
        f = f.reshape(len(tones), d)
    return v, f


def signal_err(truth, recovered, T: float) -> float:
    """Error of paired tone lists (``truth[i]`` against ``recovered[i]``).

    Sum of the diagonal tone errors plus ``2 Re`` of every cross term.
    """
    if len(truth) != len(recovered):
        raise ValueError("signal_err pairs tones by index; lists must have equal length")
    total = sum(tone_err_closed(a.v, a.f, b.v, b.f, T) for a, b in zip(truth, recovered))
    n = len(truth)
    for i in range(n):
        for j in range(i + 1, n):
            c = cross_tone_closed(truth[i].v, truth[i].f, recovered[i].v, recovered[i].f,
                                  truth[j].v, truth[j].f, recovered[j].v, recovered[j].f, T)
            total += 2.0 * c.real
    return max(total, 0.0)


def signal_err_gram(truth, recovered, T: float) -> float:
    """Same quantity as a Gram quadratic form ``c^H K c`` over all tones."""
    v1, f1 = _as_arrays(truth)
    v2, f2 = _as_arrays(recovered)
    if len(v1) + len(v2) == 0:
        return 0.0
    coef = np.concatenate([v1, -v2])
    freqs = np.concatenate([f.reshape(len(v), -1) for v, f in ((v1, f1), (v2, f2)) if len(v)])
    gram = sinc_T(freqs[:, None, :] - freqs[None, :, :], T)
    return max(float(np.real(coef @ gram @ coef.conj())), 0.0)


# --------------------------------------------------------------------------
# matching


@dataclass
class MatchReport:
    """Pairing of recovered tones to true tones.

    ``pairs`` maps recovered index to truth index.  ``tone_err_total`` adds
    ``|v|^2`` for every unmatched tone on either side, the error of pairing
    it with a zero tone.
    """

    pairs: dict
    per_tone: list
    unmatched_truth: list
    unmatched_recovered: list
    tone_err_total: float
    matched_err: float

    @property
    def matched(self) -> int:
        return len(self.pairs)

    def to_json(self) -> dict:
        return {
            "matched": self.matched,
            "pairs": {str(k): v for k, v in sorted(self.pairs.items())},
            "per_tone": self.per_tone,
            "unmatched_truth": self.unmatched_truth,
            "unmatched_recovered": self.unmatched_recovered,
            "tone_err_total": self.tone_err_total,
        }


def match_tones(truth, recovered, eta: float, T: float, *, greedy: bool | None = None) -> MatchReport:
    """Minimum total tone error assignment restricted to pairs within ``eta/2``.

    Exact (Hungarian) up to 64 true tones, greedy nearest-frequency beyond
    that or when ``greedy`` is set.  The exact assignment leaves a pair
    unmatched when counting both tones as unmatched costs less, so
    ``matched`` counts the pairings that lower the total.
    """
    vt, ft = _as_arrays(truth)
    vr, fr = _as_arrays(recovered)
    nt, nr = len(vt), len(vr)
    pairs: dict[int, int] = {}
    if nt and nr:
        ft = ft.reshape(nt, -1)
        fr = fr.reshape(nr, -1)
        dist = np.linalg.norm(fr[:, None, :] - ft[None, :, :], axis=-1)
        allowed = dist <= eta / 2.0
        use_greedy = (nt > HUNGARIAN_MAX) if greedy is None else greedy
        if use_greedy:
            order = np.argsort(dist, axis=None, kind="stable")
            taken_r, taken_t = set(), set()
            for flat in order:
                r, t = divmod(int(flat), nt)
                if not allowed[r, t]:
                    break
                if r in taken_r or t in taken_t:
                    continue
                pairs[r] = t
                taken_r.add(r)
                taken_t.add(t)
        else:
            # Augmented assignment: every tone may also stay unmatched at cost
            # |v|^2, so the optimum minimises the reported total exactly.
            cost = np.empty((nr, nt))
            for r in range(nr):
                for t in range(nt):
                    cost[r, t] = tone_err_closed(vt[t], ft[t], vr[r], fr[r], T)
            big = 1e6 * (1.0 + cost.max() + np.sum(np.abs(vt) ** 2) + np.sum(np.abs(vr) ** 2))
            full = np.full((nr + nt, nt + nr), big)
            full[:nr, :nt] = np.where(allowed, cost, big)
            full[:nr, nt:][np.diag_indices(nr)] = np.abs(vr) ** 2
            full[nr:, :nt][np.diag_indices(nt)] = np.abs(vt) ** 2
            full[nr:, nt:] = 0.0
            rows, cols = linear_sum_assignment(full)
            for r, t in zip(rows, cols):
                if r < nr and t < nt:
                    pairs[int(r)] = int(t)
    per_tone = []
    matched_err = 0.0
    for r, t in sorted(pairs.items(), key=lambda kv: kv[1]):
        e = tone_err_closed(vt[t], ft[t], vr[r], fr[r], T)
        matched_err += e
        per_tone.append({
            "truth": t,
            "recovered": r,
            "freq_err": float(np.linalg.norm(fr[r] - ft[t])),
            "mag_err": float(abs(vr[r] - vt[t])),
            "tone_err": e,
        })
    um_t = sorted(set(range(nt)) - set(pairs.values()))
    um_r = sorted(set(range(nr)) - set(pairs))
    total = matched_err + float(sum(abs(vt[t]) ** 2 for t in um_t)) + float(sum(abs(vr[r]) ** 2 for r in um_r))
    return MatchReport(pairs, per_tone, um_t, um_r, total, matched_err)


# --------------------------------------------------------------------------
# SNR


def snr_estimate(oracle, p, tone_index: int, trials: int, rng: np.random.Generator, *,
                 max_draws: int | None = None):
    """Monte-Carlo ``(mu, rho, stderr)`` for one planted tone.

    ``mu^2`` is the mean of ``|v' - v|^2`` over hash draws and time shifts in
    which the tone neither collides nor sits at a large offset; ``rho`` is
    ``|v| / mu`` (``0`` for a zero tone, ``inf`` when ``mu`` vanishes).
    """
    from .hash2bins import lattice_extent
    from .hashing import is_collision, is_large_offset, sample_hash_instance
    from .recover import estimate_signal, sample_shift

    v, f = oracle.signal.arrays()
    target_v = v[tone_index]
    target_f = f[tone_index]
    sq = []
    draws = 0
    limit = max_draws if max_draws is not None else 50 * trials
    while len(sq) < trials and draws < limit:
        draws += 1
        h = sample_hash_instance(rng, p)
        if is_collision(h, p.B, f, tone_index) or is_large_offset(h, p.B, p.alpha, target_f):
            continue
        a = sample_shift(rng, h, oracle.T, lattice_extent(p, h.sigma))
        est = estimate_signal(oracle, h, p, a, target_f[None, :])[0]
        sq.append(abs(est - target_v) ** 2)
    if not sq:
        raise RuntimeError("no admissible hash draw for the SNR estimate")
    sq = np.asarray(sq)
    mu = math.sqrt(float(sq.mean()))
    stderr = float(sq.std(ddof=1) / (2 * mu * math.sqrt(len(sq)))) if len(sq) > 1 and mu > 0 else 0.0
    if abs(target_v) == 0:
        rho = 0.0
    else:
        rho = abs(target_v) / mu if mu > 0 else math.inf
    return mu, rho, stderr


# --------------------------------------------------------------------------
# Monte-Carlo quadrature


def _mc_mean(integrand, d: int, T: float, rng: np.random.Generator, target: float, cap: int,
             chunk: int = 1_000_000, pilot: int = 20_000):
    """Mean of ``integrand(tau)`` for ``tau`` uniform on the centered box.

    The sample count is chosen from a pilot run to reach relative standard
    error ``target`` and capped at ``cap``.
    """
    first = integrand(rng.uniform(-T / 2, T / 2, size=(pilot, d)))
    mean, sd = float(first.mean()), float(first.std(ddof=1))
    if mean <= 0 or sd == 0:
        need = pilot
    else:
        need = int(min(cap, max(pilot, math.ceil((sd / (target * mean)) ** 2))))
    total, total_sq, n = float(first.sum()), float((first**2).sum()), pilot
    while n < need:
        m = min(chunk, need - n)
        vals = integrand(rng.uniform(-T / 2, T / 2, size=(m, d)))
        total += float(vals.sum())
        total_sq += float((vals**2).sum())
        n += m
    mean = total / n
    var = max(total_sq / n - mean**2, 0.0) * n / (n - 1)
    return mean, math.sqrt(var / n), n


def _tone_values(v, f, tau):
    return np.asarray(v) * np.exp(2j * np.pi * (tau @ np.asarray(f, dtype=float)))


def mc_tone_err(v, f, v2, f2, T: float, rng: np.random.Generator, *, target: float = 1e-3, cap: int = 10**7):
    d = len(np.atleast_1d(f))
    return _mc_mean(lambda tau: np.abs(_tone_values(v, f, tau) - _tone_values(v2, f2, tau)) ** 2,
                    d, T, rng, target, cap)


def mc_cross_tone(vi, fi, vi2, fi2, vj, fj, vj2, fj2, T: float, rng: np.random.Generator, *,
                  target: float = 1e-3, cap: int = 10**7):
    """Monte-Carlo of ``err_ij = 2 Re <a_i, a_j>``."""
    d = len(np.atleast_1d(fi))

    def integrand(tau):
        ai = _tone_values(vi, fi, tau) - _tone_values(vi2, fi2, tau)
        aj = _tone_values(vj, fj, tau) - _tone_values(vj2, fj2, tau)
        return 2.0 * np.real(ai * np.conj(aj))

    return _mc_mean(integrand, d, T, rng, target, cap)


def mc_signal_err(truth, recovered, T: float, rng: np.random.Generator, *, target: float = 1e-3,
                  cap: int = 10**7):
    vt, ft = _as_arrays(truth)
    vr, fr = _as_arrays(recovered)
    d = ft.shape[-1] if ft.size else fr.shape[-1]

    def integrand(tau):
        diff = np.exp(2j * np.pi * tau @ ft.T) @ vt - np.exp(2j * np.pi * tau @ fr.T) @ vr
        return np.abs(diff) ** 2

    return _mc_mean(integrand, d, T, rng, target, cap)


# --------------------------------------------------------------------------
# audits


def approx_tone_err(v, f, v2, f2, T: float, form: str = "sinc") -> float:
    """Two-term proxy for the tone error.

    ``form="sinc"``: ``|v - v2|^2 + |v2|^2 (1 - sinc_T(f - f2))``, the form the
    constants 0.31 and 2.73 are derived for.  ``form="min"``: the coarser
    ``|v - v2|^2 + |v2|^2 min(1, T^2 ||f - f2||^2)``.
    """
    df = np.asarray(f, dtype=float) - np.asarray(f2, dtype=float)
    if form == "sinc":
        shape = 1.0 - float(sinc_T(df, T))
    elif form == "min":
        shape = min(1.0, T**2 * float(df @ df))
    else:
        raise ValueError(f"unknown form {form!r}")
    return abs(v - v2) ** 2 + abs(v2) ** 2 * shape


def _unit(rng, d):
    x = rng.standard_normal(d)
    return x / np.linalg.norm(x)


def _random_pair(rng, d, T, scale):
    v = complex(*rng.normal(size=2))
    f = rng.uniform(-1, 1, d)
    v2 = v + complex(*rng.normal(scale=scale, size=2))
    f2 = f + _unit(rng, d) * rng.exponential(scale) / T
    return v, f, v2, f2


def cross_tone_bound_audit(rng: np.random.Generator, n: int, d: int, T: float = 100.0, *,
                           c: float = 10.0, min_sep: float | None = None) -> dict:
    """Check ``|err_ij| <= c sqrt(d) / (df T) ||a_i|| ||a_j||`` on random instances.

    ``df`` is the smallest distance between ``{f_i, f_i'}`` and ``{f_j, f_j'}``
    and every instance has ``df T >= min_sep`` (default ``10 d``).
    """
    min_sep = 10.0 * d if min_sep is None else min_sep
    worst = 0.0
    violations = 0
    for _ in range(n):
        vi, fi, vi2, fi2 = _random_pair(rng, d, T, 0.5)
        vj, _, vj2, _ = _random_pair(rng, d, T, 0.5)
        reach = rng.exponential(0.5) / T
        sep = (min_sep + rng.exponential(5.0 * d)) / T
        fj = fi + _unit(rng, d) * (sep + np.linalg.norm(fi2 - fi) + reach)
        fj2 = fj + _unit(rng, d) * reach
        df = min(np.linalg.norm(a - b) for a in (fi, fi2) for b in (fj, fj2))
        if df * T < min_sep:
            continue
        err = 2.0 * cross_tone_closed(vi, fi, vi2, fi2, vj, fj, vj2, fj2, T).real
        na = math.sqrt(tone_err_closed(vi, fi, vi2, fi2, T))
        nb = math.sqrt(tone_err_closed(vj, fj, vj2, fj2, T))
        bound = c * math.sqrt(d) / (df * T) * na * nb
        if abs(err) > bound * (1 + 1e-12):
            violations += 1
        if bound > 0:
            worst = max(worst, abs(err) / bound)
    return {"instances": n, "violations": violations, "worst_ratio": worst, "c": c}


def sandwich_audit(rng: np.random.Generator, n: int, d: int, T: float = 100.0, *, form: str = "sinc") -> dict:
    """Range of ``tone_err_closed / approx_tone_err`` over random pairs."""
    ratios = []
    for _ in range(n):
        v, f, v2, f2 = _random_pair(rng, d, T, rng.choice([0.05, 0.5, 2.0]))
        approx = approx_tone_err(v, f, v2, f2, T, form)
        if approx > 0:
            ratios.append(tone_err_closed(v, f, v2, f2, T) / approx)
    ratios = np.asarray(ratios)
    return {"pairs": len(ratios), "min_ratio": float(ratios.min()), "max_ratio": float(ratios.max()), "form": form}


def geometric_audit(freqs, eta: float, constant: float = 0.25) -> dict:
    """Check ``||f_1 - f_j|| >= constant |1 - j|^(1/d) eta / sqrt(d)`` after sorting by distance.

    For every anchor tone the others are sorted by distance; the ``j``-th
    nearest (``j >= 2`` counting the anchor as 1) must satisfy the bound.
    """
    freqs = np.asarray(freqs, dtype=float)
    n, d = freqs.shape
    worst = math.inf
    violations = 0
    for i in range(n):
        dist = np.sort(np.linalg.norm(freqs - freqs[i], axis=1))
        for j in range(2, n + 1):
            need = constant * (j - 1) ** (1.0 / d) * eta / math.sqrt(d)
            worst = min(worst, dist[j - 1] / need)
            if dist[j - 1] < need:
                violations += 1
    return {"points": n, "violations": violations, "worst_ratio": worst}


def metrics_to_json(report: MatchReport, signal_error: float, noise_level: float, snr=None) -> dict:
    return {
        "matched": report.matched,
        "per_tone": report.per_tone,
        "unmatched_truth": report.unmatched_truth,
        "unmatched_recovered": report.unmatched_recovered,
        "tone_err_total": report.tone_err_total,
        "signal_err": signal_error,
        "noise_level": noise_level,
        "snr": [] if snr is None else list(snr),
    }


def save_json(path, obj: dict) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")
