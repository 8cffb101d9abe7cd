import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gaitradar.sim import (
    AliasingError,
    CohortSpec,
    Direction,
    Label,
    RadarConfig,
    SubjectSpec,
    WalkerConfig,
    default_cohort,
    make_dataset,
    peak_doppler,
    plan_dataset,
    scatterer_trajectories,
    synthesize_return,
)
from gaitradar.tfa import StftParams, stft_spectrogram

RADAR = RadarConfig(snr=np.inf)


def by_name(scatterers, name, leg):
    return next(s for s in scatterers if s.name == name and s.leg == leg)


def test_wavelength_and_samples():
    assert RADAR.n_samples == 15360
    assert 2 / RADAR.wavelength == pytest.approx(160.1, abs=0.05)


def test_torso_only_linear_range():
    w = WalkerConfig(torso_speed=1.0, legs=False, torso_modulation=0.0, start_range=4.0)
    t = RADAR.times()
    (torso,) = scatterer_trajectories(w, t)
    np.testing.assert_allclose(torso.range, 4.0 - t, atol=1e-12)
    away = scatterer_trajectories(WalkerConfig(direction="away", legs=False, torso_modulation=0.0,
                                               start_range=1.0), t)[0]
    np.testing.assert_allclose(away.range, 1.0 + t, atol=1e-12)


def test_symmetric_feet_are_half_cycle_shifted():
    w = WalkerConfig(step_rate=2.0, asymmetry=1.0, phase=0.1)
    fs = 1000.0
    t = np.arange(0, 4, 1 / fs)
    sc = scatterer_trajectories(w, t)
    left = by_name(sc, "foot", "left").velocity
    right = by_name(sc, "foot", "right").velocity
    shift = int(round(0.5 * (2 / w.step_rate) * fs))  # half a gait cycle
    np.testing.assert_allclose(right[shift:], left[:-shift], atol=1e-9)


def test_asymmetry_scales_affected_foot_peak():
    w = WalkerConfig(asymmetry=0.7, torso_modulation=0.0)
    sc = scatterer_trajectories(w, RADAR.times())
    v_left = by_name(sc, "foot", "left").velocity.max()
    v_right = by_name(sc, "foot", "right").velocity.max()
    assert v_right / v_left == pytest.approx(0.7, rel=1e-3)
    assert v_left == pytest.approx(3.0, rel=1e-3)


def test_ranges_continuous():
    sc = scatterer_trajectories(WalkerConfig(duty_asymmetry=0.2, asymmetry=0.6), RADAR.times())
    for s in sc:
        # no jumps larger than max speed times one sample
        assert np.max(np.abs(np.diff(s.range))) <= np.max(np.abs(s.velocity)) / 2560 + 1e-9


def test_rejects_non_monotone_grid():
    with pytest.raises(ValueError):
        scatterer_trajectories(WalkerConfig(), np.array([0.0, 0.2, 0.1]))


def test_walker_validation():
    with pytest.raises(ValueError):
        WalkerConfig(asymmetry=0.0)
    with pytest.raises(ValueError):
        WalkerConfig(torso_speed=-1)
    with pytest.raises(ValueError):
        RadarConfig(duration=0)


def ridge_frequency(sig):
    spec = stft_spectrogram(sig, StftParams(hop=64))
    return spec.freq_axis[np.argmax(spec.values, axis=1)], spec.bin_width


def test_single_scatterer_ridge_at_160hz():
    w = WalkerConfig(torso_speed=1.0, legs=False, torso_modulation=0.0)
    f, bw = ridge_frequency(synthesize_return(w, RADAR))
    expected = 2 * 1.0 / RADAR.wavelength
    assert np.all(np.abs(f - expected) <= bw)
    assert abs(expected - 160.0) < 0.2


@pytest.mark.parametrize("v", np.random.default_rng(7).uniform(0.2, 3.0, 10).round(4))
def test_doppler_consistency(v):
    w = WalkerConfig(torso_speed=float(v), legs=False, torso_modulation=0.0)
    f, bw = ridge_frequency(synthesize_return(w, RadarConfig(snr=np.inf, duration=1.0)))
    assert np.all(np.abs(f - 2 * v / RADAR.wavelength) <= bw)


def test_direction_sign_convention():
    w = WalkerConfig(direction="away", legs=False, torso_modulation=0.0)
    f, _ = ridge_frequency(synthesize_return(w, RADAR))
    assert np.all(f < 0)


def test_deterministic_given_seed():
    w = WalkerConfig(step_variability=0.05)
    a = synthesize_return(w, RadarConfig(snr=np.inf, rng_seed=3))
    b = synthesize_return(w, RadarConfig(snr=np.inf, rng_seed=3))
    np.testing.assert_array_equal(a.samples, b.samples)
    c = synthesize_return(w, RadarConfig(snr=10, rng_seed=3))
    d = synthesize_return(w, RadarConfig(snr=10, rng_seed=3))
    np.testing.assert_array_equal(c.samples, d.samples)
    e = synthesize_return(w, RadarConfig(snr=10, rng_seed=4))
    assert not np.array_equal(c.samples, e.samples)


def test_noise_power_matches_snr():
    w = WalkerConfig()
    clean = synthesize_return(w, RadarConfig(snr=np.inf, rng_seed=1)).samples
    noisy = synthesize_return(w, RadarConfig(snr=10.0, rng_seed=1)).samples
    ratio = np.mean(np.abs(clean) ** 2) / np.mean(np.abs(noisy - clean) ** 2)
    assert 10 * np.log10(ratio) == pytest.approx(10.0, abs=0.2)


@settings(max_examples=30, deadline=None)
@given(st.floats(2.0, 5.0))
def test_aliasing_guard_exact(speed):
    w = WalkerConfig(torso_speed=speed)
    radar = RadarConfig(snr=np.inf, duration=1.0)
    predicted = peak_doppler(scatterer_trajectories(w, radar.times()), radar.wavelength)
    if predicted >= radar.sampling_frequency / 2:
        with pytest.raises(AliasingError):
            synthesize_return(w, radar)
    else:
        synthesize_return(w, radar)


def test_cohort_plan_structure():
    subjects = tuple(SubjectSpec(f"H{i}", simulated_limp=True) for i in range(10))
    plans = plan_dataset(CohortSpec(subjects=subjects, master_seed=1))
    assert len(plans) == 400
    assert sum(p.label is Label.ASYMMETRIC for p in plans) == 200
    assert sum(p.direction is Direction.TOWARD for p in plans) == 200
    assert len({p.seed for p in plans}) == 400


def test_empty_cohort_and_duplicates():
    assert make_dataset(CohortSpec()) == []
    with pytest.raises(ValueError):
        CohortSpec(subjects=(SubjectSpec("A"), SubjectSpec("A")))


def test_default_cohort_layout():
    c = default_cohort()
    ids = [s.subject_id for s in c.subjects]
    assert ids[:10] == [f"H{i:02d}" for i in range(1, 11)]
    patients = {s.subject_id: s for s in c.subjects if s.label is Label.ASYMMETRIC}
    assert sorted(patients) == ["P1", "P2", "P3", "P4"]
    assert [patients[p].asymmetry for p in ("P1", "P2", "P3")] == [0.6, 0.7, 0.8]
    assert patients["P4"].knee_mode
    assert default_cohort(5) == default_cohort(5)
