import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaosbench.alignment import (
    GRANULARITY,
    AlignmentError,
    AlignmentResult,
    EmptySpectrumError,
    UpsamplingError,
    align_system,
    aligned,
    cache_key,
    load_cached,
    phase_surrogate,
    power_spectrum,
    resample,
    surrogate_significant_frequencies,
)
from chaosbench.dynamics import Trajectory
from chaosbench.systems import get_system, linear_system


def test_sine_peak_frequency():
    t = np.arange(2000) * 0.05
    f, p = power_spectrum(np.sin(2 * np.pi * t / 5), 0.05)
    assert abs(f[np.argmax(p)] - 0.2) <= f[0]


def test_two_sines_top_bins():
    t = np.arange(4000) * 0.05
    f, p = power_spectrum(np.sin(2 * np.pi * 0.2 * t) + np.sin(2 * np.pi * 0.05 * t), 0.05)
    top = f[np.argsort(p)[-2:]]
    assert np.min(np.abs(top - 0.2)) <= f[0]
    assert np.min(np.abs(top - 0.05)) <= f[0]


def test_constant_series_empty_spectrum():
    with pytest.raises(EmptySpectrumError):
        power_spectrum(np.full(100, 3.0))


def test_short_series_rejected():
    with pytest.raises(ValueError):
        power_spectrum(np.arange(8.0))


def test_sine_plus_noise_significant():
    rng = np.random.default_rng(0)
    t = np.arange(2048) * 0.05
    x = np.sin(2 * np.pi * 0.4 * t) + 0.1 * rng.standard_normal(t.size)
    sig = surrogate_significant_frequencies(x, 0.05, seed=1)
    df = 1 / (2048 * 0.05)
    assert np.any(np.abs(sig - 0.4) <= df)


def test_white_noise_false_positive_rate():
    rng = np.random.default_rng(0)
    rates = []
    for k in range(50):
        x = rng.standard_normal(512)
        f, _ = power_spectrum(x)
        sig = surrogate_significant_frequencies(x, n_surrogates=20, seed=k)
        rates.append(sig.size / f.size)
    assert np.mean(rates) <= 0.08


def test_surrogate_argument_checks():
    x = np.sin(np.arange(100.0))
    with pytest.raises(ValueError):
        surrogate_significant_frequencies(x, n_surrogates=10)
    with pytest.raises(ValueError):
        surrogate_significant_frequencies(x, quantile=0.4)
    with pytest.raises(EmptySpectrumError):
        surrogate_significant_frequencies(np.ones(100))


@settings(max_examples=50, deadline=None)
@given(st.integers(16, 300), st.integers(0, 2**32 - 1))
def test_surrogate_preserves_amplitudes_and_mean(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n).cumsum() + 5.0
    s = phase_surrogate(x, np.random.default_rng(seed + 1))
    assert np.allclose(np.abs(np.fft.rfft(s)), np.abs(np.fft.rfft(x)), rtol=1e-9, atol=1e-9)
    assert abs(s.mean() - x.mean()) < 1e-10


def test_linear_oscillator_period():
    spec = linear_system([[0.0, 2 * np.pi], [-2 * np.pi, 0.0]], name="Oscillator", x0=[1.0, 0.0])
    res = align_system(spec, 0, n_points=2048, n_surrogates=20)
    # the refining pilot is sampled at t_peak / 20
    df = 1.0 / (2048 * res.t_peak / 20)
    assert abs(1.0 / res.t_peak - 1.0) <= df
    assert res.t_peak <= res.t_max


def test_lorenz_peak_stable_across_seeds():
    spec = get_system("Lorenz", aligned=False)
    a = align_system(spec, 0, n_points=4096, n_surrogates=20)
    b = align_system(spec, 1, n_points=4096, n_surrogates=20)
    assert abs(a.t_peak - b.t_peak) / a.t_peak < 0.2
    assert a.significant_frequencies
    assert a.dt_integration > 0 and a.t_peak <= a.t_max


def test_alignment_deterministic():
    spec = get_system("Chen", aligned=False)
    a = align_system(spec, 3, n_points=2048, n_surrogates=20)
    b = align_system(spec, 3, n_points=2048, n_surrogates=20)
    assert a == b


def test_alignment_failure_names_system():
    spec = linear_system([[-1.0, 0.0], [0.0, -2.0]], name="Decay", x0=[1.0, 1.0])
    with pytest.raises((AlignmentError, EmptySpectrumError)):
        align_system(spec, 0, n_points=512, n_surrogates=20)


def test_result_invariants_enforced():
    with pytest.raises(ValueError):
        AlignmentResult("x", 2.0, 1.0, 0.01, 1)
    with pytest.raises(ValueError):
        AlignmentResult("x", 1.0, 2.0, 0.0, 1)


def test_result_json_roundtrip():
    r = AlignmentResult("x", 1.0, 2.0, 0.01, 1, [(1.0, 0.5)], 0.2, "abc", 3)
    assert AlignmentResult.from_json(r.to_json()) == r
    assert r.sample_dt == pytest.approx(0.01)


def test_cache_roundtrip(tmp_path):
    spec = linear_system([[0.0, 2 * np.pi], [-2 * np.pi, 0.0]], name="Oscillator", x0=[1.0, 0.0])
    path = tmp_path / "align.json"
    assert load_cached(spec, path) is None
    first = aligned(spec, 0, path)
    assert cache_key(spec) in path.read_text()
    assert load_cached(spec, path) == first
    assert aligned(spec, 0, path) == first


def test_packaged_systems_have_granularity_100():
    for name in ("Lorenz", "MackeyGlass", "Thomas"):
        spec = get_system(name)
        steps = spec.period / GRANULARITY / spec.dt
        assert abs(steps - round(steps)) < 1e-9


# ---------------------------------------------------------------------------
# resampling


def test_resample_identity():
    t = Trajectory(np.random.default_rng(0).standard_normal((300, 2)), 0.01)
    out = resample(t, 1.0)
    assert np.max(np.abs(out.values - t.values)) < 1e-12
    assert out.granularity == 100


def test_resample_linear_ramp_exact():
    ramp = np.column_stack([np.arange(1000) * 0.003, 1 - np.arange(1000) * 0.002])
    out = resample(Trajectory(ramp, 0.003), 1.7)
    tt = np.arange(len(out)) * 0.017
    assert np.allclose(out.values[:, 0], tt, atol=1e-12)
    assert np.allclose(out.values[:, 1], 1 - tt * (0.002 / 0.003), atol=1e-12)


def test_resample_sine_accuracy():
    t = np.arange(4001) / 400.0
    src = Trajectory(np.sin(2 * np.pi * t)[:, None], 1 / 400.0)
    out = resample(src, 1.0)
    tt = np.arange(len(out)) / 100.0
    assert len(out) == 1001
    assert np.max(np.abs(out.values[:, 0] - np.sin(2 * np.pi * tt))) < 1e-3


def test_resample_refuses_upsampling():
    with pytest.raises(UpsamplingError):
        resample(Trajectory(np.zeros((10, 1)) + np.arange(10)[:, None], 0.1), 1.0)
