"""Polarization reference-frame tracking between satellite and ground.

The relative rotation of the satellite's linear-polarization frame as
seen at the ground station drifts during a pass. A two-detector
polarimeter (polarizing splitter behind a half-wave plate) measures
the downlink beacon at two or more wave-plate settings; the fringe
visibilities at those settings determine the rotation angle, which is
handed to the quantum receiver as a basis correction. Only the single
linear rotation angle is modeled; all angles are half-turn periodic.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import LowCounts, OutOfRange, ProfileGap, ZeroCounts
from .orbit_dynamics.passes import PassProfile
from .orbit_dynamics.sgp4 import gmst_radians, julian_date
from .seeding import module_rng

MODULE_NAME = "polarization_correction"

MAX_THETA_STEP_DEG_PER_S = 5.0


@dataclass(frozen=True)
class FrameOffsetProfile:
    """Relative frame rotation theta(t) over a pass.

    Samples are continuous in time (consecutive values within the
    5 deg/s continuity bound); values may run outside (-90, 90] so the
    curve stays unwrapped, since every consumer is 180 deg periodic.
    """

    times_s: np.ndarray
    theta_deg: np.ndarray

    def __post_init__(self):
        if len(self.times_s) != len(self.theta_deg) or len(self.times_s) < 2:
            raise ProfileGap("need at least two (time, theta) samples")
        dt = np.diff(self.times_s)
        if np.any(dt <= 0.0):
            raise ProfileGap("sample times must be strictly increasing")
        step = np.abs(np.diff(self.theta_deg)) / dt
        if np.any(step > MAX_THETA_STEP_DEG_PER_S):
            raise ProfileGap(
                f"theta changes faster than {MAX_THETA_STEP_DEG_PER_S} deg/s "
                "between samples; profile has a hole or discontinuity"
            )

    def theta_at(self, t_s) -> np.ndarray:
        t = np.asarray(t_s, dtype=float)
        if t.size and (t.min() < self.times_s[0] - 1e-9 or t.max() > self.times_s[-1] + 1e-9):
            raise ProfileGap("time outside frame-offset profile coverage")
        return np.interp(t, self.times_s, self.theta_deg)


@dataclass(frozen=True)
class PolarimeterConfig:
    """Beacon polarimeter settings."""

    hwp_settings_deg: tuple[float, ...] = (0.0, 22.5)
    detector_pair_efficiency_ratio: float = 1.0
    integration_s: float = 1.0
    count_rate_hz: float = 1e5

    def __post_init__(self):
        if len(set(self.hwp_settings_deg)) < 2:
            raise OutOfRange("need at least two distinct wave-plate settings")
        if self.detector_pair_efficiency_ratio <= 0.0:
            raise OutOfRange("efficiency ratio must be positive")
        if self.integration_s <= 0.0 or self.count_rate_hz <= 0.0:
            raise OutOfRange("integration and count rate must be positive")


def wrap_half_turn(theta_deg):
    """Map an angle to the linear-polarization convention (-90, 90]."""
    wrapped = -((-np.asarray(theta_deg, dtype=float) + 90.0) % 180.0 - 90.0)
    return wrapped if np.ndim(theta_deg) else float(wrapped)


def _unwrap_half_turn(theta_deg: np.ndarray) -> np.ndarray:
    """Remove 180 deg jumps so consecutive samples stay close."""
    out = np.asarray(theta_deg, dtype=float).copy()
    for i in range(1, len(out)):
        step = out[i] - out[i - 1]
        out[i] -= 180.0 * round(step / 180.0)
    return out


def _geometric_theta(profile: PassProfile, body_yaw_deg: float) -> np.ndarray:
    """Rotation of a nadir-pointing satellite's transmit axis at the site.

    The satellite frame has its z axis at nadir and its x axis
    along-track, rotated by a fixed body yaw; the transmit axis is
    that x axis. The receiver's reference axis is anchored to the
    site's zenith direction at the first sample and then parallel
    transported along the line of sight as it sweeps, which is how the
    image-plane basis of smoothly tracking optics evolves. theta is
    the signed angle from the transported reference to the projected
    transmit axis around the line of sight. Transporting (rather than
    re-projecting zenith each step) keeps theta smooth through
    culmination, where the instantaneous zenith projection is
    singular.
    """
    site_ecef = profile.site.ecef_km()
    lat = math.radians(profile.site.latitude_deg)
    lon = math.radians(profile.site.longitude_deg)
    yaw = math.radians(body_yaw_deg)
    n = len(profile.times_s)
    theta = np.empty(n)
    reference = None
    previous = 0.0
    for i, ts in enumerate(profile.times_s):
        jd = julian_date(profile.start) + float(ts) / 86400.0
        gmst = gmst_radians(jd)
        c, s = math.cos(gmst), math.sin(gmst)
        # Earth-fixed -> inertial rotation of the site position
        site_teme = np.array([
            c * site_ecef[0] - s * site_ecef[1],
            s * site_ecef[0] + c * site_ecef[1],
            site_ecef[2],
        ])
        r = profile.r_teme_km[i]
        v = profile.v_teme_kms[i]
        nadir = -r / np.linalg.norm(r)
        orbit_normal = np.cross(r, v)
        orbit_normal /= np.linalg.norm(orbit_normal)
        along = np.cross(-orbit_normal, nadir)
        along /= np.linalg.norm(along)
        cross = np.cross(nadir, along)
        transmit = math.cos(yaw) * along + math.sin(yaw) * cross

        los = r - site_teme
        los /= np.linalg.norm(los)

        if reference is None:
            lam = lon + gmst
            zenith = np.array([
                math.cos(lat) * math.cos(lam),
                math.cos(lat) * math.sin(lam),
                math.sin(lat),
            ])
            east = np.array([-math.sin(lam), math.cos(lam), 0.0])
            for anchor in (zenith, east):
                candidate = anchor - np.dot(anchor, los) * los
                norm = np.linalg.norm(candidate)
                if norm > 1e-6:
                    reference = candidate / norm
                    break
        else:
            candidate = reference - np.dot(reference, los) * los
            norm = np.linalg.norm(candidate)
            if norm > 1e-9:
                reference = candidate / norm

        t_perp = transmit - np.dot(transmit, los) * los
        nt = np.linalg.norm(t_perp)
        if nt < 1e-9 or reference is None:
            theta[i] = previous  # degenerate geometry, carry the last angle
            continue
        t_perp /= nt
        angle = math.degrees(
            math.atan2(float(np.dot(np.cross(reference, t_perp), los)),
                       float(np.dot(reference, t_perp)))
        )
        previous = angle
        theta[i] = angle
    return _unwrap_half_turn(theta)


def frame_offset_profile(
    geometry: PassProfile | None,
    mode: str = "geometric",
    *,
    scripted: tuple[np.ndarray, np.ndarray] | None = None,
    constant_deg: float | None = None,
    ramp_deg: tuple[float, float] | None = None,
    body_yaw_deg: float = 0.0,
    duration_s: float | None = None,
    step_s: float = 1.0,
) -> FrameOffsetProfile:
    """Build the frame rotation profile for a pass.

    geometric mode derives theta from the pass geometry assuming a
    nadir-pointing satellite with a fixed body yaw. scripted mode takes
    a user-supplied curve: explicit (times, theta) samples, a constant,
    or a linear (start, end) ramp over the pass duration.
    """
    if mode == "geometric":
        if geometry is None:
            raise ProfileGap("geometric mode needs pass geometry")
        return FrameOffsetProfile(
            times_s=geometry.times_s.copy(),
            theta_deg=_geometric_theta(geometry, body_yaw_deg),
        )
    if mode != "scripted":
        raise OutOfRange(f"unknown frame-offset mode {mode!r}")
    span = duration_s if duration_s is not None else \
        (geometry.duration_s if geometry is not None else None)
    if scripted is not None:
        times, theta = (np.asarray(a, dtype=float) for a in scripted)
        if span is not None and (times[0] > 1e-9 or times[-1] < span - 1e-9):
            raise ProfileGap(
                f"scripted profile [{times[0]}, {times[-1]}] s does not cover "
                f"[0, {span}] s"
            )
        return FrameOffsetProfile(times_s=times, theta_deg=theta)
    if span is None:
        raise ProfileGap("scripted mode needs a duration or pass geometry")
    n = max(2, int(math.ceil(span / step_s)) + 1)
    times = np.linspace(0.0, span, n)
    if constant_deg is not None:
        return FrameOffsetProfile(times_s=times,
                                  theta_deg=np.full(n, float(constant_deg)))
    if ramp_deg is not None:
        start, end = ramp_deg
        return FrameOffsetProfile(times_s=times,
                                  theta_deg=np.linspace(start, end, n))
    raise ProfileGap("scripted mode needs samples, a constant, or a ramp")


def polarimeter_counts(
    theta_true_deg: float,
    hwp_deg: float,
    config: PolarimeterConfig,
    rng: np.random.Generator | int,
) -> tuple[int, int]:
    """Transmit/reflect beacon counts for one wave-plate setting.

    The wave plate rotates the incoming linear polarization by twice
    its angle, so the transmitted fraction is cos^2(theta - 2 hwp).
    The reflect arm's efficiency is scaled by the configured detector
    pair ratio.
    """
    rng = rng if isinstance(rng, np.random.Generator) else module_rng(rng, MODULE_NAME)
    x = math.radians(theta_true_deg - 2.0 * hwp_deg)
    p_t = math.cos(x) ** 2
    mean = config.count_rate_hz * config.integration_s
    n_t = int(rng.poisson(mean * p_t))
    n_r = int(rng.poisson(mean * (1.0 - p_t) * config.detector_pair_efficiency_ratio))
    return n_t, n_r


def estimate_offset(
    measurements: Iterable[tuple[float, int, int]],
    detector_pair_efficiency_ratio: float = 1.0,
) -> float:
    """Frame rotation estimate from (hwp_deg, n_transmit, n_reflect) triples.

    Each setting yields a visibility v = (n_t - n_r)/(n_t + n_r) whose
    expectation is cos(2 theta - 4 hwp); a linear least-squares fit of
    the (cos 2 theta, sin 2 theta) components recovers theta on
    (-90, 90]. Two distinct settings resolve the sign a single
    visibility cannot.
    """
    rows = list(measurements)
    if len(rows) < 2:
        raise OutOfRange("need measurements at two or more settings")
    design = np.empty((len(rows), 2))
    vis = np.empty(len(rows))
    for i, (hwp, n_t, n_r) in enumerate(rows):
        n_r = n_r / detector_pair_efficiency_ratio
        total = n_t + n_r
        if total <= 0:
            raise ZeroCounts(f"no counts at wave-plate setting {hwp} deg")
        if total < 100:
            warnings.warn(
                f"only {total:.0f} counts at setting {hwp} deg; estimate is noisy",
                LowCounts,
                stacklevel=2,
            )
        vis[i] = (n_t - n_r) / total
        phase = math.radians(4.0 * hwp)
        design[i] = (math.cos(phase), math.sin(phase))
    (c2, s2), *_ = np.linalg.lstsq(design, vis, rcond=None)
    theta = 0.5 * math.degrees(math.atan2(s2, c2))
    return wrap_half_turn(theta)


def qber_from_residual(delta_deg) -> float:
    """Error rate added by a linear-basis misalignment: sin^2 delta."""
    value = np.sin(np.radians(delta_deg)) ** 2
    return value if np.ndim(delta_deg) else float(value)


def apply_correction(measurement_angles_deg, theta_hat_deg: float):
    """Rotate receiver measurement angles by the estimated offset."""
    if not -90.0 < theta_hat_deg <= 90.0:
        raise OutOfRange(f"theta_hat {theta_hat_deg} outside (-90, 90]")
    corrected = np.asarray(measurement_angles_deg, dtype=float) - theta_hat_deg
    return corrected if np.ndim(measurement_angles_deg) else float(corrected)


@dataclass(frozen=True)
class PcsSeries:
    """Stepwise correction history over a pass."""

    update_times_s: np.ndarray   # start of each correction interval
    theta_true_deg: np.ndarray   # frame rotation at each update
    theta_hat_deg: np.ndarray    # estimate applied over the interval
    visibilities: np.ndarray     # (n, n_settings) per-setting visibility
    update_interval_s: float
    hwp_settings_deg: tuple[float, ...]
    profile: FrameOffsetProfile = field(repr=False)

    def theta_hat_at(self, t_s) -> np.ndarray:
        idx = np.clip(
            np.searchsorted(self.update_times_s, np.asarray(t_s, dtype=float),
                            side="right") - 1,
            0, len(self.update_times_s) - 1,
        )
        return self.theta_hat_deg[idx]

    def residual_at(self, t_s) -> np.ndarray:
        """Uncorrected misalignment theta_true(t) - theta_hat(t), wrapped.

        Wrapped to (-90, 90] so an unwrapped truth curve against a
        wrapped estimate never reads as a half-turn error.
        """
        true = self.profile.theta_at(t_s)
        return wrap_half_turn(true - self.theta_hat_at(t_s))


def run_polarization_correction(
    profile: FrameOffsetProfile,
    config: PolarimeterConfig,
    seed: int,
    update_interval_s: float = 1.0,
    extra_offset_deg: float = 0.0,
) -> PcsSeries:
    """Estimate and apply the frame correction on a fixed cadence.

    Each interval integrates the beacon at every wave-plate setting,
    estimates theta, and applies it until the next update. A nonzero
    extra_offset_deg biases the applied correction away from the
    estimate, modeling an uncompensated systematic (used for
    error-budget studies).
    """
    rng = module_rng(seed, MODULE_NAME)
    start = float(profile.times_s[0])
    end = float(profile.times_s[-1])
    n = max(1, int(math.ceil((end - start) / update_interval_s)))
    update_times = start + np.arange(n) * update_interval_s
    theta_true = np.empty(n)
    theta_hat = np.empty(n)
    vis = np.empty((n, len(config.hwp_settings_deg)))
    ratio = config.detector_pair_efficiency_ratio
    for i, t in enumerate(update_times):
        true = float(profile.theta_at(min(t, end)))
        theta_true[i] = true
        rows = []
        for j, hwp in enumerate(config.hwp_settings_deg):
            n_t, n_r = polarimeter_counts(true, hwp, config, rng)
            total = n_t + n_r / ratio
            vis[i, j] = (n_t - n_r / ratio) / max(total, 1.0)
            rows.append((hwp, n_t, n_r))
        theta_hat[i] = estimate_offset(rows, ratio) - extra_offset_deg
    return PcsSeries(
        update_times_s=update_times,
        theta_true_deg=theta_true,
        theta_hat_deg=theta_hat,
        visibilities=vis,
        update_interval_s=update_interval_s,
        hwp_settings_deg=config.hwp_settings_deg,
        profile=profile,
    )
