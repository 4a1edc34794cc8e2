"""Behavioral model of the onboard entangled-pair source and sync beacon.

The source is characterized entirely by its output statistics: pair
rate (brightness x pump power), polarization-correlation visibility,
and the split ratio sending signal photons to the ground link. Pairs
are emitted as a homogeneous Poisson process; each pair carries the
onboard (idler) basis choice and outcome, the shared hidden outcomes
for both measurement bases, and an error flag encoding whether the
ground-side correlation is broken by source imperfection. The beacon
is an exact arithmetic pulse train used by the receivers for clock
synchronization.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidExtrema, NonpositiveBrightness, OutOfRange
from .seeding import module_rng

MODULE_NAME = "photon_source"

BASIS_HV = 0
BASIS_AD = 1


@dataclass(frozen=True)
class SourceConfig:
    """Source operating point and statistical parameters."""

    brightness_pairs_per_s_mw: float = 13.6e6
    pump_power_mw: float = 1.84
    visibility: float = 0.98
    downlink_fraction: float = 0.9   # as-built 90/10 splitter; intended design 0.99
    beacon_frequency_hz: float = 10e3
    beacon_pulse_width_s: float = 5e-9
    intensity_imbalance: float = 0.0
    signal_wavelength_nm: float = 785.0   # metadata only
    idler_wavelength_nm: float = 837.0    # metadata only
    rng_seed: int = 0

    def __post_init__(self):
        if self.brightness_pairs_per_s_mw <= 0.0:
            raise NonpositiveBrightness(
                f"brightness must be positive, got {self.brightness_pairs_per_s_mw}"
            )
        if self.pump_power_mw < 0.0:
            raise OutOfRange(f"pump power must be nonnegative, got {self.pump_power_mw}")
        if not 0.0 <= self.visibility <= 1.0:
            raise OutOfRange(f"visibility {self.visibility} outside [0, 1]")
        if not 0.0 < self.downlink_fraction <= 1.0:
            raise OutOfRange(f"downlink_fraction {self.downlink_fraction} outside (0, 1]")
        if self.beacon_frequency_hz and not 1e3 <= self.beacon_frequency_hz <= 50e3:
            raise OutOfRange(
                f"beacon frequency {self.beacon_frequency_hz} Hz outside [1, 50] kHz"
            )
        if self.intensity_imbalance < 0.0:
            raise OutOfRange("intensity_imbalance must be nonnegative")


@dataclass(frozen=True)
class PairEventStream:
    """Timed pair emissions plus the beacon pulse schedule.

    Columns share one index: emission_times (s, strictly increasing),
    idler_basis (0=HV, 1=AD) and idler_outcome for the onboard arm,
    latent_bit and latent_bit_ad holding the shared hidden outcome a
    measurement in the H/V or A/D basis would see (idler_outcome is
    the one matching idler_basis), and error_flag (True where the
    ground-side correlation is broken by source imperfection).
    """

    emission_times: np.ndarray
    idler_basis: np.ndarray
    idler_outcome: np.ndarray
    latent_bit: np.ndarray
    latent_bit_ad: np.ndarray
    error_flag: np.ndarray
    beacon_times: np.ndarray
    duration_s: float
    config: SourceConfig = field(repr=False)

    def __len__(self) -> int:
        return len(self.emission_times)


def pair_rate(config: SourceConfig) -> float:
    """Generated pair rate in pairs/s."""
    return config.brightness_pairs_per_s_mw * config.pump_power_mw


def required_pump_power(target_rate: float, brightness: float) -> float:
    """Pump power (mW) needed to reach a target pair rate."""
    if brightness <= 0.0:
        raise NonpositiveBrightness(f"brightness must be positive, got {brightness}")
    if target_rate < 0.0:
        raise OutOfRange(f"target rate must be nonnegative, got {target_rate}")
    return target_rate / brightness


def visibility_from_extrema(c_max: float, c_min: float) -> float:
    """Polarization-correlation visibility from fringe extrema counts."""
    if not c_max >= c_min >= 0.0:
        raise InvalidExtrema(f"need c_max >= c_min >= 0, got ({c_max}, {c_min})")
    if c_max <= 0.0:
        raise InvalidExtrema("c_max must be positive")
    return (c_max - c_min) / (c_max + c_min)


def qber_from_visibility(vis: float) -> float:
    """QBER implied by a correlation visibility: (1 - VIS)/2."""
    if not 0.0 <= vis <= 1.0:
        raise OutOfRange(f"visibility {vis} outside [0, 1]")
    return (1.0 - vis) / 2.0


def visibility_from_qber(qber: float) -> float:
    """Inverse of qber_from_visibility."""
    if not 0.0 <= qber <= 0.5:
        raise OutOfRange(f"qber {qber} outside [0, 0.5]")
    return 1.0 - 2.0 * qber


def beacon_schedule(config: SourceConfig, duration_s: float) -> np.ndarray:
    """Beacon pulse times: exact arithmetic progression from t=0."""
    if not config.beacon_frequency_hz:
        return np.empty(0)
    n = int(np.floor(duration_s * config.beacon_frequency_hz)) + 1
    return np.arange(n) / config.beacon_frequency_hz


def generate_pair_stream(config: SourceConfig, duration_s: float) -> PairEventStream:
    """Emit a Poisson pair stream over [0, duration_s].

    Deterministic for a given config.rng_seed. Error flags are set with
    probability (1 - visibility)/2, the QBER the source alone would
    produce on an otherwise perfect link.
    """
    if duration_s <= 0.0:
        raise OutOfRange(f"duration must be positive, got {duration_s}")
    rng = module_rng(config.rng_seed, MODULE_NAME)
    rate = pair_rate(config)
    n = int(rng.poisson(rate * duration_s))
    times = np.unique(rng.uniform(0.0, duration_s, size=n))  # sorted, strictly increasing
    n = len(times)
    latent_hv = rng.integers(0, 2, size=n, dtype=np.uint8)
    latent_ad = rng.integers(0, 2, size=n, dtype=np.uint8)
    basis = rng.integers(0, 2, size=n, dtype=np.uint8)
    qber = qber_from_visibility(config.visibility)
    return PairEventStream(
        emission_times=times,
        idler_basis=basis,
        idler_outcome=np.where(basis == BASIS_HV, latent_hv, latent_ad),
        latent_bit=latent_hv,
        latent_bit_ad=latent_ad,
        error_flag=rng.random(n) < qber,
        beacon_times=beacon_schedule(config, duration_s),
        duration_s=duration_s,
        config=config,
    )


def scan_fringe_mean(
    config: SourceConfig, angles_deg: np.ndarray, integration_s: float,
    peak_angle_deg: float = 0.0,
) -> np.ndarray:
    """Expected coincidence counts of a single-polarizer scan.

    The fringe is A(theta) * [1 + V cos 2(theta - theta0)] / 2 with a
    full-turn amplitude envelope A(theta) = A0 (1 + b cos(theta -
    theta0)) so the two maxima carry amplitudes A0(1 +/- b), the
    intensity-imbalance signature; b = 0 gives one shared amplitude.
    """
    theta = np.radians(np.asarray(angles_deg, dtype=float) - peak_angle_deg)
    amplitude = 0.5 * pair_rate(config) * integration_s
    envelope = 1.0 + config.intensity_imbalance * np.cos(theta)
    fringe = 0.5 * (1.0 + config.visibility * np.cos(2.0 * theta))
    return amplitude * envelope * fringe


def polarizer_scan(
    config: SourceConfig,
    angles_deg: np.ndarray,
    integration_s: float,
    peak_angle_deg: float = 0.0,
) -> np.ndarray:
    """Poisson-fluctuated coincidence counts per polarizer angle."""
    if integration_s <= 0.0:
        raise OutOfRange(f"integration must be positive, got {integration_s}")
    mean = scan_fringe_mean(config, angles_deg, integration_s, peak_angle_deg)
    rng = module_rng(config.rng_seed, MODULE_NAME + ".scan")
    return rng.poisson(mean).astype(np.int64)


def scan_visibility(angles_deg: np.ndarray, counts: np.ndarray) -> float:
    """Visibility of a scanned fringe via its extrema.

    Fits the scan with angular harmonics 0 through 3, which span the
    imbalanced-envelope fringe exactly, and reads the extrema from the
    fit. The mean of the two maxima (and of the two minima) is used,
    so an intensity imbalance between the peaks cancels and only the
    half-turn fringe component sets the contrast.
    """
    angles = np.asarray(angles_deg, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if len(angles) != len(counts) or len(angles) < 8:
        raise InvalidExtrema("need matching angle/count arrays with >= 8 samples")
    theta = np.radians(angles)
    design = np.column_stack(
        [np.ones_like(theta)]
        + [f(m * theta) for m in (1, 2, 3) for f in (np.cos, np.sin)]
    )
    coef, *_ = np.linalg.lstsq(design, counts, rcond=None)
    dc = float(coef[0])
    fringe_amp = float(np.hypot(coef[3], coef[4]))
    if dc <= 0.0:
        raise InvalidExtrema(f"fitted mean count {dc} is not positive")
    c_max = dc + fringe_amp
    c_min = dc - fringe_amp
    if c_min < 1e-9 * dc:
        # fitted minimum indistinguishable from zero at double precision
        c_min = 0.0
    return visibility_from_extrema(c_max, c_min)


def with_seed(config: SourceConfig, rng_seed: int) -> SourceConfig:
    return replace(config, rng_seed=rng_seed)
