import math

import numpy as np
import pytest
from scipy import stats

from offgrid_sfft.filters import derive_params
from offgrid_sfft.hashing import (
    HashInstance,
    beta_range,
    bin_index,
    collision_band,
    collision_rate,
    frac,
    hash_bin,
    haar_orthogonal,
    is_collision,
    is_large_offset,
    offset,
    permute_sample,
    sample_hash_instance,
)
from offgrid_sfft.signal import SignalOracle, SparseSignal, Tone


def identity_hash(d=1):
    return HashInstance.from_matrix(np.eye(d), np.zeros(d))


def test_hash_formula_examples():
    h = identity_hash()
    assert hash_bin(h, 4, [0.0]).tolist() == [0]
    assert hash_bin(h, 4, [0.25]).tolist() == [1]
    assert hash_bin(h, 4, [-0.2]).tolist() == [3]
    assert offset(h, 4, [0.0])[0] == pytest.approx(0.0)
    assert offset(h, 4, [-0.2])[0] == pytest.approx(0.05)
    assert frac(-0.075) == pytest.approx(0.925)


def test_offset_range_on_random_draws():
    rng = np.random.default_rng(0)
    for d in (1, 2, 3):
        p = derive_params(1, d, 0.1, 1.0, 1.0, B=4 * d)
        for _ in range(200):
            h = sample_hash_instance(rng, p)
            f = rng.uniform(-50, 50, (50, d))
            off = offset(h, p.B, f)
            bins = hash_bin(h, p.B, f)
            assert np.all(off >= -0.5 / p.B) and np.all(off < 0.5 / p.B)
            assert np.all((bins >= 0) & (bins < p.B))


@pytest.mark.parametrize("d", [1, 2, 3, 4, 5, 6])
def test_haar_orthogonality(d):
    q = haar_orthogonal(np.random.default_rng(d), d, size=100)
    eye = np.einsum("nji,njk->nik", q, q)
    assert np.max(np.abs(eye - np.eye(d))) <= 1e-10


def test_hash_instance_invariants():
    rng = np.random.default_rng(1)
    p = derive_params(4, 3, 0.1, 1.0, 0.5, B=6)
    lo, hi = beta_range(3, 6, 0.5)
    for _ in range(50):
        h = sample_hash_instance(rng, p)
        assert lo <= h.beta <= hi
        assert np.allclose(h.rotation.T @ h.rotation, np.eye(3), atol=1e-10)
        assert abs(abs(np.linalg.det(h.sigma)) - h.beta**3) <= 1e-9 * h.beta**3
        assert np.allclose(h.sigma @ h.b, h.b_prime)
        assert np.all((h.b_prime >= 0) & (h.b_prime < 1))
        assert np.allclose(h.sigma_inv @ h.sigma, np.eye(3))


def test_one_dimensional_rotation_is_a_sign():
    rng = np.random.default_rng(2)
    p = derive_params(1, 1, 0.1, 1.0, 1.0)
    signs = [np.sign(sample_hash_instance(rng, p).sigma[0, 0]) for _ in range(400)]
    assert set(signs) == {-1.0, 1.0}
    assert 140 < signs.count(1.0) < 260


def test_beta_is_uniform():
    rng = np.random.default_rng(3)
    p = derive_params(1, 2, 0.1, 1.0, 1.0)
    lo, hi = beta_range(2, p.B, p.eta)
    betas = [sample_hash_instance(rng, p).beta for _ in range(10_000)]
    assert stats.kstest(betas, stats.uniform(lo, hi - lo).cdf).pvalue > 1e-3


def test_bins_uniform_over_anchor():
    rng = np.random.default_rng(4)
    p = derive_params(1, 2, 0.1, 1.0, 1.0, B=4)
    q = haar_orthogonal(rng, 2)
    sigma = 1.3 * q
    f = np.array([0.2, -0.4])
    b_prime = rng.uniform(0, 1, (100_000, 2))
    b = np.linalg.solve(sigma, b_prime.T).T
    from offgrid_sfft.hashing import _bin_and_offset

    bins, _ = _bin_and_offset(sigma, b, p.B, f)
    counts = np.bincount(bin_index(bins, p.B), minlength=p.B**2)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_event_predicates():
    h = identity_hash()
    assert not is_collision(h, 4, [[0.1]], 0)
    assert is_collision(h, 4, [[0.0], [0.01]], 0)
    # f = 0.125 - alpha/8 puts the offset at exactly (1 - alpha)/(2B) for B=4.
    alpha = 0.5
    edge = (1 - alpha) / 8
    assert is_large_offset(h, 4, alpha, [edge])
    assert not is_large_offset(h, 4, alpha, [edge * 0.99])


def test_same_bin_for_close_pairs_without_large_offset():
    rng = np.random.default_rng(5)
    checked = 0
    for d in (1, 2, 3):
        p = derive_params(1, d, 0.1, 1.0, 1.0, B=4 * d, alpha=1 / 5)
        radius = p.alpha * p.eta / (8 * math.sqrt(d))
        while checked < 10_000 * d / 3:
            h = sample_hash_instance(rng, p)
            f = rng.uniform(-1, 1, d)
            if is_large_offset(h, p.B, p.alpha, f):
                continue
            u = rng.normal(size=d)
            g = f + u / np.linalg.norm(u) * radius * rng.uniform(0, 0.999)
            assert np.array_equal(hash_bin(h, p.B, f), hash_bin(h, p.B, g))
            checked += 1


def test_collision_rate_reports_band():
    lo, hi = collision_band(2, 8, 1.0)
    assert (lo, hi) == (1.0, 6 / (4 * math.sqrt(2)))
    rate, bound, _ = collision_rate(np.random.default_rng(0), 2, 8, 1.0, [0, 0], [1.0, 0.0], 5000)
    assert rate == 0.0 and bound == 0.0
    far, bound, _ = collision_rate(np.random.default_rng(0), 1, 4, 1.0, [0.0], [3.0], 5000)
    assert bound == pytest.approx(min(1.0, 50 / 4))
    assert far <= bound


def test_permute_sample_formula():
    rng = np.random.default_rng(6)
    p = derive_params(1, 2, 0.1, 1.0, 1.0)
    h = sample_hash_instance(rng, p)
    v, f = 1.5 - 0.5j, np.array([0.3, -0.2])
    oracle = SignalOracle(SparseSignal((Tone(v, tuple(f)),), 2, 1.0, 1.0, 1e4))
    a = np.array([3000.0, 2000.0]) @ np.linalg.inv(h.sigma)
    t = rng.uniform(-50, 50, (20, 2))
    got = permute_sample(oracle, h, a, t)
    want = v * np.exp(2j * np.pi * ((t + a) @ h.sigma) @ f) * np.exp(-2j * np.pi * (t @ h.sigma) @ h.b)
    assert np.allclose(got, want, rtol=1e-10)
    zero = SignalOracle(SparseSignal((), 2, 1.0, 1.0, 1e4))
    assert np.all(permute_sample(zero, h, a, t) == 0)


def test_permutation_moves_the_spectrum():
    """A 64-point DFT of the permuted tone peaks at Sigma (f - b) with phase a.Sigma f."""
    rng = np.random.default_rng(7)
    p = derive_params(1, 1, 0.1, 1.0, 1.0)
    h = sample_hash_instance(rng, p)
    n = 64
    pos = frac(h.sigma @ (np.array([0.0]) - h.b))[0]
    # Pick f so that Sigma (f - b) sits exactly on DFT bin 5.
    f = np.array([((5 / n) - pos) / h.sigma[0, 0]])
    v = 0.8 + 0.6j
    oracle = SignalOracle(SparseSignal((Tone(v, tuple(f)),), 1, 10.0, 1.0, 1e4))
    a = np.array([5000.0 / h.sigma[0, 0]])
    t = np.arange(n, dtype=float)[:, None]
    spectrum = np.fft.fft(permute_sample(oracle, h, a, t)) / n
    peak = int(np.argmax(np.abs(spectrum)))
    assert peak == 5
    assert spectrum[peak] == pytest.approx(v * np.exp(2j * np.pi * float(a @ h.sigma @ f)), abs=1e-9)
