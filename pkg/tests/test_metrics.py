import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from offgrid_sfft.filters import derive_params
from offgrid_sfft.metrics import (
    approx_tone_err,
    cross_tone_bound_audit,
    cross_tone_closed,
    geometric_audit,
    match_tones,
    mc_tone_err,
    metrics_to_json,
    recenter,
    sandwich_audit,
    signal_err,
    signal_err_gram,
    snr_estimate,
    tone_err_closed,
)
from offgrid_sfft.signal import NoiseModel, SignalOracle, SparseSignal, Tone

T = 50.0


def direct_err(truth, rec, T, n=400):
    """Midpoint rule on the centered box (d = 1), exact enough for smooth integrands."""
    tau = (np.arange(n) + 0.5) / n * T - T / 2
    x = sum(t.v * np.exp(2j * np.pi * tau * t.f[0]) for t in truth)
    y = sum(t.v * np.exp(2j * np.pi * tau * t.f[0]) for t in rec)
    return float(np.mean(np.abs(x - y) ** 2))


def test_tone_err_examples():
    assert tone_err_closed(1.0, [0.2], 1.0, [0.2], T) == 0
    assert tone_err_closed(1.0, [0.2], 0.0, [0.9], T) == pytest.approx(1.0)
    # Integer sinc zero: orthogonal tones add energies.
    assert tone_err_closed(1.0, [0.0], 2.0, [1 / T], T) == pytest.approx(5.0)
    assert tone_err_closed(1j, [0.1, 0.2], 1j, [0.1, 0.2 + 0.5 / T], T) == pytest.approx(2 - 2 * 2 / math.pi)


@settings(max_examples=50, deadline=None)
@given(st.complex_numbers(max_magnitude=5), st.complex_numbers(max_magnitude=5),
       st.floats(-1, 1), st.floats(-1, 1))
def test_tone_err_symmetric_and_nonnegative(v, v2, f, f2):
    a = tone_err_closed(v, [f], v2, [f2], T)
    assert a >= 0
    assert a == pytest.approx(tone_err_closed(v2, [f2], v, [f], T), abs=1e-9)
    c = cross_tone_closed(v, [f], v2, [f2], v, [f], v2, [f2], T)
    assert abs(c.imag) < 1e-9 and c.real == pytest.approx(a, abs=1e-9)


def test_closed_forms_match_quadrature():
    rng = np.random.default_rng(0)
    for _ in range(5):
        truth = [Tone(complex(*rng.normal(size=2)), (rng.uniform(-1, 1),)) for _ in range(3)]
        rec = [Tone(t.v + 0.1 * complex(*rng.normal(size=2)), (t.f[0] + rng.normal(scale=0.5) / T,)) for t in truth]
        exact = direct_err(truth, rec, T, n=20000)
        assert signal_err(truth, rec, T) == pytest.approx(exact, rel=1e-6)
        assert signal_err_gram(truth, rec, T) == pytest.approx(signal_err(truth, rec, T), rel=1e-10, abs=1e-12)


def test_monte_carlo_tone_err_agrees():
    rng = np.random.default_rng(1)
    mean, se, n = mc_tone_err(1.0, [0.1, 0.3], 0.9j, [0.11, 0.29], T, rng, target=5e-3)
    exact = tone_err_closed(1.0, [0.1, 0.3], 0.9j, [0.11, 0.29], T)
    assert abs(mean - exact) <= 4 * se
    assert se <= 1e-2 * mean


def test_gram_handles_empty_sides():
    tones = [Tone(2.0, (0.1,))]
    assert signal_err_gram(tones, [], T) == pytest.approx(4.0)
    assert signal_err_gram([], tones, T) == pytest.approx(4.0)
    assert signal_err_gram([], [], T) == 0.0


def test_recentering_makes_errors_shift_invariant():
    # x(t) referenced at t = 0 and evaluated on [0, T]^d equals the recentred
    # tone on the centered box.
    rng = np.random.default_rng(2)
    v, f = 1 + 1j, np.array([0.37, -0.2])
    v2, f2 = 1.1 + 0.9j, f + 0.3 / T
    tau = rng.uniform(0, T, size=(200_000, 2))
    direct = np.mean(np.abs(v * np.exp(2j * np.pi * tau @ f) - v2 * np.exp(2j * np.pi * tau @ f2)) ** 2)
    closed = tone_err_closed(recenter(v, f, T), f, recenter(v2, f2, T), f2, T)
    assert closed == pytest.approx(direct, rel=2e-2)


def test_match_permuted_and_spurious():
    rng = np.random.default_rng(3)
    truth = [Tone(complex(i + 1), (0.5 * i,)) for i in range(4)]
    rec = [Tone(t.v * 1.01, (t.f[0] + 0.001,)) for t in truth]
    perm = list(rng.permutation(4))
    m = match_tones(truth, [rec[i] for i in perm], 0.5, T)
    assert m.matched == 4
    assert {perm[r]: t for r, t in m.pairs.items()} == {i: i for i in range(4)}
    extra = match_tones(truth, rec + [Tone(3.0, (5.0,))], 0.5, T)
    assert extra.unmatched_recovered == [4]
    assert extra.tone_err_total == pytest.approx(extra.matched_err + 9.0)
    missing = match_tones(truth, rec[:2], 0.5, T)
    assert missing.unmatched_truth == [2, 3]
    assert match_tones(truth, [], 0.5, T).tone_err_total == pytest.approx(sum(abs(t.v) ** 2 for t in truth))


def test_exact_matching_equals_brute_force():
    import itertools

    rng = np.random.default_rng(8)
    for _ in range(30):
        truth = [Tone(complex(*rng.normal(size=2)), (rng.uniform(-1, 1),)) for _ in range(4)]
        rec = [Tone(complex(*rng.normal(size=2)), (rng.uniform(-1, 1),)) for _ in range(3)]
        best = math.inf
        for perm in itertools.permutations(range(4), 3):
            for keep in itertools.product([False, True], repeat=3):
                total, ok, used = 0.0, True, set()
                for r, (t, k) in enumerate(zip(perm, keep)):
                    if k:
                        if abs(truth[t].f[0] - rec[r].f[0]) > 0.25:
                            ok = False
                        total += tone_err_closed(truth[t].v, truth[t].f, rec[r].v, rec[r].f, T)
                        used.add(t)
                    else:
                        total += abs(rec[r].v) ** 2
                total += sum(abs(truth[t].v) ** 2 for t in range(4) if t not in used)
                if ok:
                    best = min(best, total)
        assert match_tones(truth, rec, 0.5, T).tone_err_total == pytest.approx(best)


def test_match_respects_radius():
    m = match_tones([Tone(1.0, (0.0,))], [Tone(1.0, (0.26,))], 0.5, T)
    assert m.matched == 0 and m.tone_err_total == pytest.approx(2.0)


def test_hungarian_never_worse_than_greedy():
    rng = np.random.default_rng(4)
    for _ in range(20):
        truth = [Tone(complex(*rng.normal(size=2)), tuple(rng.uniform(-1, 1, 2))) for _ in range(8)]
        rec = [Tone(complex(*rng.normal(size=2)), tuple(np.array(t.f) + rng.normal(scale=0.1, size=2)))
               for t in truth]
        opt = match_tones(truth, rec, 0.5, T)
        greedy = match_tones(truth, rec, 0.5, T, greedy=True)
        assert opt.tone_err_total <= greedy.tone_err_total + 1e-9


def test_metrics_json_shape():
    m = match_tones([Tone(1.0, (0.0,))], [Tone(1.0, (0.0,))], 0.5, T)
    obj = metrics_to_json(m, 0.0, 0.1)
    assert obj["matched"] == 1 and obj["snr"] == []


def test_snr_examples():
    p = derive_params(1, 1, 0.1, 1.0, 0.5, B=8, ell=2, alpha=1 / 5)
    sig = SparseSignal((Tone(1.0, (0.3,)),), 1, 1.0, 0.5, 200.0)
    mus = []
    for sigma in (0.0, 0.2, 1.0):
        # Same hash draws for every sigma, so only the noise changes.
        rng = np.random.default_rng(5)
        mu, rho, se = snr_estimate(SignalOracle(sig, NoiseModel("gaussian", sigma, 1)), p, 0, 60, rng)
        mus.append(mu)
        assert rho == pytest.approx(1.0 / mu)
    assert mus[0] < mus[1] < mus[2]
    zero = SparseSignal((Tone(0.0, (0.3,)),), 1, 1.0, 0.5, 200.0)
    assert snr_estimate(SignalOracle(zero, NoiseModel("gaussian", 0.1, 1)), p, 0, 10, rng)[1] == 0.0


def test_cross_tone_audit_passes():
    for d in (1, 2, 3):
        res = cross_tone_bound_audit(np.random.default_rng(d), 300, d)
        assert res["violations"] == 0


def test_sandwich_sinc_form_constants():
    res = sandwich_audit(np.random.default_rng(6), 2000, 2)
    assert res["min_ratio"] >= 0.31 and res["max_ratio"] <= 2.73


def test_sandwich_min_form_exceeds_the_upper_constant():
    # The coarse form undershoots near T ||df|| = 1, so the ratio escapes 2.73.
    res = sandwich_audit(np.random.default_rng(7), 2000, 1, form="min")
    assert res["max_ratio"] > 2.73
    assert approx_tone_err(1.0, [0.0], 1.0, [1 / T], T, "min") == pytest.approx(1.0)
    with pytest.raises(ValueError):
        approx_tone_err(1.0, [0.0], 1.0, [0.0], T, "max")


def test_geometric_audit():
    grid = np.array([[i, j] for i in range(5) for j in range(5)], dtype=float)
    assert geometric_audit(grid, 1.0)["violations"] == 0
    crowded = np.array([[0.0, 0.0], [0.01, 0.0]])
    assert geometric_audit(crowded, 1.0)["violations"] > 0
