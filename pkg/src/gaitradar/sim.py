"""
Synthetic continuous-wave radar returns of a walking person.

The body is reduced to a handful of point scatterers: one torso scatterer and,
per leg, a chain of points from hip to foot. Each foot alternates between a
stance phase (zero radial velocity) and a swing phase whose radial velocity is
a raised-cosine pulse peaking at ``swing_speed_ratio * torso_speed``. One leg
can be weakened by ``asymmetry`` (peak swing speed scaling), a longer swing
(``duty_asymmetry``) or a stiff knee (``knee_mode``).

The baseband model is the usual CW one::

    s(n) = sum_i a_i * exp(-j * 4*pi * R_i(n/fs) / wavelength) + w(n)

so a scatterer closing in on the radar produces a positive Doppler shift.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

# hip -> foot position of the leg points, fraction of the foot swing they follow
LEG_POINTS = (0.25, 0.5, 0.75, 1.0)
LEG_POINT_NAMES = ("thigh", "knee", "shin", "foot")
DEFAULT_AMPLITUDES = {"torso": 1.0, "thigh": 0.45, "knee": 0.35, "shin": 0.3, "foot": 0.25}


class AliasingError(ValueError):
    """Raised when a scatterer would be Doppler-aliased at the given sampling rate."""


class Direction(str, Enum):
    TOWARD = "toward"
    AWAY = "away"

    @property
    def sign(self) -> int:
        return 1 if self is Direction.TOWARD else -1

    @property
    def code(self) -> int:
        return 0 if self is Direction.TOWARD else 1

    @classmethod
    def from_code(cls, code: int) -> "Direction":
        return cls.TOWARD if code == 0 else cls.AWAY


class Label(str, Enum):
    SYMMETRIC = "symmetric"
    ASYMMETRIC = "asymmetric"

    @property
    def code(self) -> int:
        return 0 if self is Label.SYMMETRIC else 1

    @classmethod
    def from_code(cls, code: int) -> "Label":
        return cls.SYMMETRIC if code == 0 else cls.ASYMMETRIC


@dataclass(frozen=True)
class RadarConfig:
    carrier_frequency: float = 24e9
    sampling_frequency: float = 2560.0
    duration: float = 6.0
    snr: float = float("inf")
    rng_seed: int = 0

    def __post_init__(self):
        if not self.carrier_frequency > 0:
            raise ValueError("carrier_frequency must be positive")
        if not self.sampling_frequency > 0:
            raise ValueError("sampling_frequency must be positive")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.n_samples <= 0:
            raise ValueError("fs * T must give at least one sample")

    @property
    def n_samples(self) -> int:
        return int(round(self.sampling_frequency * self.duration))

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.sampling_frequency


@dataclass(frozen=True)
class WalkerConfig:
    torso_speed: float = 1.0
    step_rate: float = 1.8
    direction: Direction = Direction.TOWARD
    start_range: float = 4.0
    asymmetry: float = 1.0
    duty_asymmetry: float = 0.0
    knee_mode: bool = False
    scatterer_amplitudes: dict = field(default_factory=lambda: dict(DEFAULT_AMPLITUDES))
    swing_speed_ratio: float = 3.0
    swing_fraction: float = 0.4
    knee_gain: float = 0.5
    torso_modulation: float = 0.05
    step_variability: float = 0.0
    phase: float = 0.0
    legs: bool = True

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        if not self.torso_speed > 0:
            raise ValueError("torso_speed must be positive")
        if not self.step_rate > 0:
            raise ValueError("step_rate must be positive")
        if not 0 < self.asymmetry <= 1:
            raise ValueError("asymmetry must lie in (0, 1]")
        if self.duty_asymmetry < 0:
            raise ValueError("duty_asymmetry must be non-negative")
        if not self.start_range > 0:
            raise ValueError("start_range must be positive")
        if not 0 < self.swing_fraction * (1 + self.duty_asymmetry) < 1:
            raise ValueError("swing phase must be shorter than the gait cycle")
        unknown = set(self.scatterer_amplitudes) - set(DEFAULT_AMPLITUDES)
        if unknown:
            raise ValueError(f"unknown scatterers: {sorted(unknown)}")


@dataclass(frozen=True)
class IqSignal:
    samples: np.ndarray
    fs: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.complex128)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        if not self.fs > 0:
            raise ValueError("fs must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.fs

    def zero_mean(self) -> "IqSignal":
        return IqSignal(self.samples - self.samples.mean(), self.fs)


@dataclass(frozen=True)
class Scatterer:
    name: str
    leg: Optional[str]
    amplitude: float
    range: np.ndarray
    velocity: np.ndarray  # radial closing speed, m/s


def _swing_profile(t, cycle, offset, swing_frac, peaks):
    """Velocity and cumulative displacement of one foot.

    ``peaks`` holds the peak swing speed of every swing that can intersect
    ``t``; swing ``j`` starts at ``(j0 + j + offset) * cycle``.
    """
    x = t / cycle - offset
    j0 = int(np.floor(x.min())) if x.size else 0
    idx = np.floor(x).astype(int) - j0
    tau = (x - np.floor(x)) * cycle
    t_sw = swing_frac * cycle
    pk = peaks[idx]
    in_swing = tau < t_sw
    arg = 2 * np.pi * np.minimum(tau, t_sw) / t_sw
    vel = np.where(in_swing, 0.5 * pk * (1 - np.cos(arg)), 0.0)
    # displacement within the current swing (full swing covers pk * t_sw / 2)
    part = 0.5 * pk * (np.minimum(tau, t_sw) - t_sw * np.sin(arg) / (2 * np.pi))
    done = np.concatenate([[0.0], np.cumsum(0.5 * peaks * t_sw)])
    disp = done[idx] + part
    # measured from t=0
    return vel, disp, j0


def scatterer_trajectories(walker: WalkerConfig, times, rng=None) -> list[Scatterer]:
    """Radial range and closing speed of every scatterer on the time grid.

    With ``rng`` given and ``walker.step_variability > 0`` each swing's peak
    speed is perturbed by a relative Gaussian jitter of that size.
    """
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("times must be a non-empty 1-D grid")
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")

    amps = dict(DEFAULT_AMPLITUDES)
    amps.update(walker.scatterer_amplitudes)
    v0 = walker.torso_speed
    fst = walker.step_rate
    sign = walker.direction.sign
    cycle = 2.0 / fst

    m = walker.torso_modulation
    w = 2 * np.pi * fst
    v_torso = v0 * (1 + m * np.cos(w * t))
    d_torso = v0 * (t + m * np.sin(w * t) / w)

    def to_range(disp):
        # closing motion (toward) shrinks the range
        return walker.start_range - sign * disp

    out = [Scatterer("torso", None, amps["torso"], to_range(d_torso), v_torso)]
    if not walker.legs:
        return out

    n_swings = int(np.ceil((t[-1] - t[0]) / cycle)) + 3
    # right leg is the affected one; it swings half a cycle after the left
    for leg, offset, rho, sw in (
        ("left", walker.phase, 1.0, walker.swing_fraction),
        ("right", walker.phase + 0.5, walker.asymmetry,
         walker.swing_fraction * (1 + walker.duty_asymmetry)),
    ):
        peaks = np.full(n_swings, walker.swing_speed_ratio * v0 * rho)
        if rng is not None and walker.step_variability > 0:
            peaks = peaks * (1 + walker.step_variability * rng.standard_normal(n_swings))
            peaks = np.maximum(peaks, 0.0)
        vel_f, disp_f, _ = _swing_profile(t, cycle, offset, sw, peaks)
        disp_f = disp_f - disp_f[0]
        for c, name in zip(LEG_POINTS, LEG_POINT_NAMES):
            gain = c
            if walker.knee_mode and leg == "right" and name != "foot":
                gain = c * walker.knee_gain
            # hip follows the torso, lower points blend towards the foot
            vel = (1 - c) * v_torso + gain * vel_f
            disp = (1 - c) * d_torso + gain * disp_f
            out.append(Scatterer(name, leg, amps[name], to_range(disp), vel))
    return out


def peak_doppler(scatterers, wavelength) -> float:
    """Largest absolute Doppler shift (Hz) over all scatterers and times."""
    vmax = max(float(np.max(np.abs(s.velocity))) for s in scatterers)
    return 2.0 * vmax / wavelength


def _walk_seed(radar: RadarConfig) -> np.random.SeedSequence:
    return np.random.SeedSequence([radar.rng_seed, 0x5EED])


def synthesize_return(walker: WalkerConfig, radar: RadarConfig) -> IqSignal:
    ss_kin, ss_noise = _walk_seed(radar).spawn(2)
    t = radar.times()
    lam = radar.wavelength
    scatterers = scatterer_trajectories(walker, t, np.random.default_rng(ss_kin))
    fd = peak_doppler(scatterers, lam)
    if fd >= radar.sampling_frequency / 2:
        raise AliasingError(
            f"peak Doppler {fd:.1f} Hz reaches fs/2 = {radar.sampling_frequency / 2:.1f} Hz"
        )
    s = np.zeros(t.size, dtype=np.complex128)
    for sc in scatterers:
        s += sc.amplitude * np.exp(-1j * 4 * np.pi * sc.range / lam)
    if np.isfinite(radar.snr):
        rng = np.random.default_rng(ss_noise)
        p_noise = np.mean(np.abs(s) ** 2) / 10 ** (radar.snr / 10)
        noise = rng.standard_normal(t.size) + 1j * rng.standard_normal(t.size)
        s = s + np.sqrt(p_noise / 2) * noise
    return IqSignal(s, radar.sampling_frequency)


# --- cohorts -----------------------------------------------------------------


@dataclass(frozen=True)
class SubjectSpec:
    """One simulated person and how many walks to record per direction."""

    subject_id: str
    torso_speed: float = 0.7
    step_rate: float = 1.7
    asymmetry: float = 1.0
    duty_asymmetry: float = 0.0
    knee_mode: bool = False
    # label of the subject's natural gait
    label: Label = Label.SYMMETRIC
    n_toward: int = 10
    n_away: int = 10
    # also record a simulated limp with these parameters
    simulated_limp: bool = False
    limp_asymmetry: float = 0.65
    limp_duty_asymmetry: float = 0.15
    limp_knee_mode: bool = False

    def __post_init__(self):
        object.__setattr__(self, "label", Label(self.label))


@dataclass(frozen=True)
class CohortSpec:
    subjects: tuple = ()
    master_seed: int = 0
    snr: float = 20.0
    duration: float = 6.0
    sampling_frequency: float = 2560.0
    carrier_frequency: float = 24e9
    speed_jitter: float = 0.08
    rate_jitter: float = 0.04
    asymmetry_jitter: float = 0.03
    step_variability: float = 0.04

    def __post_init__(self):
        ids = [s.subject_id for s in self.subjects]
        dup = {i for i in ids if ids.count(i) > 1}
        if dup:
            raise ValueError(f"duplicate subject ids: {sorted(dup)}")


@dataclass(frozen=True)
class Measurement:
    signal: IqSignal
    label: Label
    subject_id: str
    direction: Direction
    seed: int
    index: int = 0

    @property
    def name(self) -> str:
        return f"{self.subject_id}_{self.direction.value}_{self.label.value}_{self.index:02d}"


@dataclass(frozen=True)
class MeasurementPlan:
    """Everything needed to synthesize one measurement, without the samples."""

    walker: WalkerConfig
    radar: RadarConfig
    label: Label
    subject_id: str
    direction: Direction
    index: int

    @property
    def seed(self) -> int:
        return self.radar.rng_seed

    def run(self) -> Measurement:
        sig = synthesize_return(self.walker, self.radar)
        return Measurement(sig, self.label, self.subject_id, self.direction, self.seed, self.index)


def _measurement_seed(master: int, subject_id: str, direction: Direction, label: Label, index: int) -> int:
    ss = np.random.SeedSequence(
        [master, zlib.crc32(subject_id.encode()), direction.code, label.code, index]
    )
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def plan_dataset(cohort: CohortSpec) -> list[MeasurementPlan]:
    plans = []
    for subj in cohort.subjects:
        variants = [(subj.label, subj.asymmetry, subj.duty_asymmetry, subj.knee_mode)]
        if subj.simulated_limp:
            variants.append((Label.ASYMMETRIC, subj.limp_asymmetry,
                             subj.limp_duty_asymmetry, subj.limp_knee_mode))
        for label, rho, duty, knee in variants:
            for direction, count in ((Direction.TOWARD, subj.n_toward), (Direction.AWAY, subj.n_away)):
                for i in range(count):
                    seed = _measurement_seed(cohort.master_seed, subj.subject_id, direction, label, i)
                    rng = np.random.default_rng(seed)
                    speed = subj.torso_speed * (1 + cohort.speed_jitter * rng.uniform(-1, 1))
                    rate = subj.step_rate * (1 + cohort.rate_jitter * rng.uniform(-1, 1))
                    rho_i = min(1.0, rho * (1 + cohort.asymmetry_jitter * rng.uniform(-1, 1)))
                    walker = WalkerConfig(
                        torso_speed=speed,
                        step_rate=rate,
                        direction=direction,
                        start_range=4.0 if direction is Direction.TOWARD else 1.0,
                        asymmetry=rho_i,
                        duty_asymmetry=duty,
                        knee_mode=knee,
                        step_variability=cohort.step_variability,
                        phase=float(rng.uniform(0, 1)),
                    )
                    radar = RadarConfig(
                        carrier_frequency=cohort.carrier_frequency,
                        sampling_frequency=cohort.sampling_frequency,
                        duration=cohort.duration,
                        snr=cohort.snr,
                        rng_seed=seed,
                    )
                    plans.append(MeasurementPlan(walker, radar, label, subj.subject_id, direction, i))
    return plans


def make_dataset(cohort: CohortSpec) -> list[Measurement]:
    """Synthesize every measurement of the cohort (serially, in plan order)."""
    return [p.run() for p in plan_dataset(cohort)]


def default_cohort(master_seed: int = 2019, snr: float = 20.0) -> CohortSpec:
    """Ten healthy walkers who also simulate a limp, plus four patients.

    Patients P1-P3 have a weaker swing on one leg (0.6, 0.7, 0.8); P4 walks
    with a stiff knee whose asymmetry shows up in the mid-Doppler band. The
    measurement counts of the patients follow the 7/6, 11/9, 7/5, 13/13 split
    of the original recordings.
    """
    rng = np.random.default_rng(master_seed)
    subjects = []
    for i in range(10):
        knee_limp = i in (3, 7)
        subjects.append(SubjectSpec(
            subject_id=f"H{i + 1:02d}",
            torso_speed=float(rng.uniform(0.55, 0.8)),
            step_rate=float(rng.uniform(1.5, 1.9)),
            # healthy gait is not perfectly symmetric either
            asymmetry=float(rng.uniform(0.9, 1.0)),
            label=Label.SYMMETRIC,
            simulated_limp=True,
            limp_asymmetry=1.0 if knee_limp else float(rng.uniform(0.65, 0.88)),
            limp_duty_asymmetry=0.1 if knee_limp else float(rng.uniform(0.05, 0.2)),
            limp_knee_mode=knee_limp,
        ))
    patients = [
        ("P1", 0.6, 0.15, False, 7, 6),
        ("P2", 0.7, 0.1, False, 11, 9),
        ("P3", 0.8, 0.1, False, 7, 5),
        ("P4", 1.0, 0.05, True, 13, 13),
    ]
    for sid, rho, duty, knee, nt, na in patients:
        subjects.append(SubjectSpec(
            subject_id=sid,
            torso_speed=float(rng.uniform(0.5, 0.7)),
            step_rate=float(rng.uniform(1.4, 1.8)),
            asymmetry=rho,
            duty_asymmetry=duty,
            knee_mode=knee,
            label=Label.ASYMMETRIC,
            n_toward=nt,
            n_away=na,
        ))
    return CohortSpec(subjects=tuple(subjects), master_seed=master_seed, snr=snr, asymmetry_jitter=0.05)


def with_snr(cohort: CohortSpec, snr: float) -> CohortSpec:
    return replace(cohort, snr=snr)
