import itertools
import json

import numpy as np
import pytest

from offgrid_sfft.metrics import recenter, signal_err_gram
from offgrid_sfft.signal import (
    DurationError,
    NoiseModel,
    SignalOracle,
    SparseSignal,
    Tone,
    lattice_points,
    load_signal,
    noise_level,
    save_signal,
    validate_separation,
)


def make(tones, d=1, F=1.0, eta=0.1, T=10.0):
    return SparseSignal(tuple(Tone(v, f) for v, f in tones), d, F, eta, T)


def test_sample_examples():
    assert SignalOracle(make([(2.0, (0.0,))])).sample([3.3]) == 2.0
    assert SignalOracle(make([], d=2)).sample([1.0, 2.0]) == 0.0
    f = np.array([0.25, 0.0])
    sig = make([(1.0, tuple(f)), (1.0, tuple(-f))], d=2)
    assert abs(SignalOracle(sig).sample([1.0, 0.7])) < 1e-12


def test_out_of_duration_is_an_error():
    oracle = SignalOracle(make([(1.0, (0.1,))], T=5.0))
    with pytest.raises(DurationError):
        oracle.sample([5.0001])
    with pytest.raises(DurationError):
        oracle.sample([[1.0], [-0.1]])
    with pytest.raises(DurationError):
        oracle.sample([np.nan])
    assert oracle.n_samples == 0


def test_relaxed_oracle_counts_violations():
    oracle = SignalOracle(make([(1.0, (0.1,))], T=5.0), enforce_duration=False)
    oracle.sample([6.0])
    assert oracle.duration_violations == 1 and oracle.n_samples == 1
    with pytest.raises(DurationError):
        oracle.sample([np.inf])


def test_tone_and_signal_validation():
    with pytest.raises(ValueError):
        Tone(complex(np.nan, 0), (0.0,))
    with pytest.raises(ValueError):
        make([(1.0, (2.0,))])
    with pytest.raises(ValueError):
        make([(1.0, (0.0, 0.0))])


def test_gaussian_noise_is_a_fixed_function():
    sig = make([(1.0, (0.3,))], T=100.0)
    a = SignalOracle(sig, NoiseModel("gaussian", 0.5, seed=7))
    b = SignalOracle(sig, NoiseModel("gaussian", 0.5, seed=7))
    t = np.random.default_rng(0).uniform(0, 100, (50, 1))
    assert np.array_equal(a.sample(t), b.sample(t))
    assert np.array_equal(a.sample(t), a.sample(t))
    c = SignalOracle(sig, NoiseModel("gaussian", 0.5, seed=8))
    assert not np.array_equal(a.sample(t), c.sample(t))


def test_gaussian_noise_moments():
    oracle = SignalOracle(make([], T=1e4), NoiseModel("gaussian", 0.7, seed=1))
    g = oracle.sample(np.random.default_rng(2).uniform(0, 1e4, (200_000, 1)))
    assert np.mean(np.abs(g) ** 2) == pytest.approx(0.49, rel=0.02)
    assert abs(np.mean(g)) < 0.01
    assert np.var(g.real) == pytest.approx(np.var(g.imag), rel=0.03)


def test_lattice_sampling_matches_pointwise():
    rng = np.random.default_rng(4)
    tones = [(complex(*rng.normal(size=2)), tuple(rng.uniform(-1, 1, 2))) for _ in range(3)]
    sig = make(tones, d=2, eta=0.01, T=200.0)
    oracle = SignalOracle(sig, NoiseModel("gaussian", 0.2, seed=3))
    rows = np.array([[1.1, 0.3], [-0.3, 1.1]])
    grids = [np.arange(-5, 6, dtype=float), np.arange(-4, 5, dtype=float)]
    origin = np.array([100.0, 90.0])
    lattice = oracle.sample_lattice(origin, rows, grids)
    direct = oracle.sample(lattice_points(origin, rows, grids)).reshape(lattice.shape)
    assert np.allclose(lattice, direct, rtol=1e-12, atol=1e-12)
    assert oracle.n_samples == 2 * lattice.size


def test_noise_level_examples():
    assert noise_level(make([(3.0, (0.0,))]), NoiseModel(), 0.1).value2 == pytest.approx(0.9)
    assert noise_level(make([]), NoiseModel("gaussian", 0.5), 0.1).value2 == pytest.approx(0.25)
    burst = NoiseModel("burst", tones=(Tone(1.0, (0.2,)),))
    level = noise_level(make([]), burst, 0.1)
    assert level.noise_energy == pytest.approx(1.0)
    assert level.value2 == level.noise_energy + level.signal_term


def test_validate_separation_boundary():
    eta = 0.3
    assert validate_separation([Tone(1, (0.0,))], eta)
    assert validate_separation([Tone(1, (0.0,)), Tone(1, (eta,))], eta)
    assert not validate_separation([Tone(1, (0.0,)), Tone(1, (eta - 1e-9,))], eta)


def test_validate_separation_matches_pairwise_scan():
    rng = np.random.default_rng(9)
    for _ in range(20):
        pts = rng.uniform(-1, 1, (8, 2))
        eta = rng.uniform(0.05, 0.6)
        brute = min(np.linalg.norm(a - b) for a, b in itertools.combinations(pts, 2)) >= eta
        assert validate_separation([Tone(1, tuple(p)) for p in pts], eta) == brute


def test_energy_matches_closed_form():
    rng = np.random.default_rng(11)
    T = 20.0
    tones = [(complex(*rng.normal(size=2)), tuple(rng.uniform(-0.3, 0.3, 2))) for _ in range(3)]
    sig = make(tones, d=2, T=T)
    t = rng.uniform(0, T, (100_000, 2))
    vals = np.abs(SignalOracle(sig).sample(t)) ** 2
    mc, se = vals.mean(), vals.std(ddof=1) / np.sqrt(len(vals))
    # Energy over the window is the Gram form of the magnitudes moved to its center.
    v, f = sig.arrays()
    centred = [Tone(recenter(vi, fi, T), fi) for vi, fi in zip(v, f)]
    closed = signal_err_gram(centred, [], T)
    assert abs(mc - closed) <= 3 * se


def test_json_roundtrip(tmp_path):
    sig = make([(1 + 2j, (0.1, -0.2)), (0.5, (0.7, 0.3))], d=2)
    noise = NoiseModel("gaussian", 0.25, seed=5)
    path = tmp_path / "s.json"
    save_signal(path, sig, noise)
    obj = json.loads(path.read_text(encoding="utf-8"))
    assert set(obj) == {"d", "F", "eta", "T", "tones", "noise"}
    assert load_signal(path) == (sig, noise)


def test_noise_parse():
    assert NoiseModel.parse("none").kind == "none"
    assert NoiseModel.parse("gaussian:0.3", seed=2) == NoiseModel("gaussian", 0.3, 2)
    with pytest.raises(ValueError):
        NoiseModel.parse("pink:1")
