"""Entanglement key extraction over one satellite pass.

Orchestrates the full chain: pass geometry, pointing acquisition,
polarization-frame tracking, pair generation, channel thinning,
detection on both arms, beacon clock recovery with flight-time
compensation, coincidence identification, basis sifting, error
estimation, and the asymptotic secret-key accounting.

The onboard arm detects the idler locally, so its tags sit on the
reference timebase. Ground tags carry the free-running receiver clock
plus the light flight time, which changes by milliseconds over a pass
and cannot be absorbed by a linear clock fit; the pipeline subtracts
the flight time predicted from the ephemeris and refines the
subtraction once the first clock fit pins down the emission times.
"""
from __future__ import annotations

import math
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import timedelta
from typing import Any

import numpy as np

from .channel_link import LinkProfile, apply_channel, build_link_profile
from .errors import (EmptyKey, LowSample, OutOfRange, ProfileGap,
                     SimulationError, SyncFailed, QkdPassError)
from .orbit_dynamics import PassProfile, PassWindow, TwoLineElement, \
    predict_passes, sample_pass
from .pat_controller import PatSeries, run_pat
from .photon_source import PairEventStream, generate_pair_stream, pair_rate, \
    with_seed
from .polarization_correction import PcsSeries, frame_offset_profile, \
    run_polarization_correction
from .quantum_receiver import (CHANNEL_BEACON, ClockModel, CoincidenceResult,
                               DetectorModel, ORIGIN_BACKGROUND, ORIGIN_SIGNAL,
                               SyncResult, TagStream, apply_detector,
                               beacon_clock_sync, channel_basis, channel_bit,
                               find_coincidences, measure_polarization)
from .scenario import Scenario
from .seeding import module_rng

MODULE_NAME = "bbm92_pipeline"

SPEED_OF_LIGHT_KM_S = 299792.458

# transmittance below this is treated as a total blackout for the
# classical beacon; above it the bright pulse train always registers
BEACON_BLACKOUT = 1e-12


def binary_entropy(p: float) -> float:
    """Shannon entropy of a binary variable, in bits."""
    if not 0.0 <= p <= 1.0:
        raise OutOfRange(f"probability {p} outside [0, 1]")
    if p == 0.0 or p == 1.0:
        return 0.0
    return float(-p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p))


def secret_fraction(qber: float) -> float:
    """Asymptotic BBM92 key fraction max(0, 1 - 2 h2(qber)).

    Models one-way error correction at the Shannon limit plus privacy
    amplification; finite-key corrections are out of scope. Valid for
    qber in [0, 0.5]; beyond that no key survives and the input is
    rejected rather than silently clamped.
    """
    if not 0.0 <= qber <= 0.5:
        raise OutOfRange(f"qber {qber} outside [0, 0.5]")
    return max(0.0, 1.0 - 2.0 * binary_entropy(qber))


@dataclass(frozen=True)
class SiftedKey:
    """Matched-basis bit pairs kept after sifting.

    bits holds the ground outcomes, partner_bits the onboard outcomes
    after the entangled-state convention is unwound, so error-free
    events agree. basis_per_bit records the shared basis (0 = H/V,
    1 = A/D).
    """

    bits: np.ndarray
    partner_bits: np.ndarray
    basis_per_bit: np.ndarray

    def __post_init__(self):
        if not (len(self.bits) == len(self.partner_bits) == len(self.basis_per_bit)):
            raise ValueError("sifted key columns must share one length")

    def __len__(self) -> int:
        return len(self.bits)

    def mismatches(self) -> int:
        return int(np.count_nonzero(self.bits != self.partner_bits))


def sift(
    onboard_channels: np.ndarray,
    ground_channels: np.ndarray,
    ad_anticorrelated: bool = True,
) -> SiftedKey:
    """Keep coincidences where both sides measured in the same basis.

    Inputs are the channel codes of matched coincidence pairs, one
    entry per coincidence. When the source emits the A/D-anticorrelated
    state the onboard A/D bits are flipped here, so agreement between
    bits and partner_bits is the error-free case in both bases.
    """
    on = np.asarray(onboard_channels)
    gr = np.asarray(ground_channels)
    if len(on) != len(gr):
        raise ValueError("coincidence channel lists must share one length")
    on_basis = channel_basis(on)
    keep = on_basis == channel_basis(gr)
    partner = channel_bit(on[keep])
    if ad_anticorrelated:
        partner = partner ^ (on_basis[keep] == 1)
    return SiftedKey(
        bits=channel_bit(gr[keep]).astype(np.uint8),
        partner_bits=partner.astype(np.uint8),
        basis_per_bit=on_basis[keep].astype(np.uint8),
    )


@dataclass(frozen=True)
class QberEstimate:
    """Error rate from a disclosed random subset of the sifted key."""

    qber: float
    std_error: float
    disclosed: int
    errors: int


def estimate_qber(
    key: SiftedKey,
    sample_fraction: float = 0.1,
    rng: np.random.Generator | int = 0,
) -> QberEstimate:
    """Disclose a random fraction of the key and count disagreements.

    The standard error is the binomial estimate sqrt(q(1-q)/n) on the
    disclosed sample. Raises EmptyKey on a zero-length key and warns
    LowSample when fewer than 100 bits are disclosed.
    """
    if not 0.0 < sample_fraction <= 1.0:
        raise OutOfRange(f"sample_fraction {sample_fraction} outside (0, 1]")
    n = len(key)
    if n == 0:
        raise EmptyKey("cannot estimate an error rate from an empty key")
    if not isinstance(rng, np.random.Generator):
        rng = module_rng(rng, MODULE_NAME)
    n_disclosed = max(1, int(round(sample_fraction * n)))
    if n_disclosed < 100:
        warnings.warn(
            f"only {n_disclosed} bits disclosed; error estimate is coarse",
            LowSample, stacklevel=2,
        )
    idx = rng.choice(n, size=n_disclosed, replace=False)
    errors = int(np.count_nonzero(key.bits[idx] != key.partner_bits[idx]))
    q = errors / n_disclosed
    return QberEstimate(
        qber=q,
        std_error=math.sqrt(q * (1.0 - q) / n_disclosed),
        disclosed=n_disclosed,
        errors=errors,
    )


@dataclass(frozen=True)
class KeyReport:
    """Per-pass key accounting written to report.json."""

    pass_id: str
    coincidences_total: int
    sifted_bits: int
    qber_estimate: float
    qber_std_error: float
    accidental_fraction: float
    secret_fraction: float
    secret_bits: int
    loss_budget: dict[str, float | None]
    pat_lock_fraction: float
    sync_offset_s: float | None
    sync_drift: float | None
    window_start_utc: str
    window_duration_s: float
    quantum_window_start_s: float
    quantum_window_duration_s: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "pass_id": self.pass_id,
            "coincidences_total": self.coincidences_total,
            "sifted_bits": self.sifted_bits,
            "qber_estimate": self.qber_estimate,
            "qber_std_error": self.qber_std_error,
            "accidental_fraction": self.accidental_fraction,
            "secret_fraction": self.secret_fraction,
            "secret_bits": self.secret_bits,
            "loss_budget": dict(self.loss_budget),
            "pat_lock_fraction": self.pat_lock_fraction,
            "sync_offset_s": self.sync_offset_s,
            "sync_drift": self.sync_drift,
            "window_start_utc": self.window_start_utc,
            "window_duration_s": self.window_duration_s,
            "quantum_window_start_s": self.quantum_window_start_s,
            "quantum_window_duration_s": self.quantum_window_duration_s,
        }


@dataclass(frozen=True)
class PassResult:
    """Everything simulate_pass produced, report plus telemetry."""

    report: KeyReport
    scenario: Scenario = field(repr=False)
    tle: TwoLineElement = field(repr=False)
    window: PassWindow = field(repr=False)
    profile: PassProfile = field(repr=False)
    pat: PatSeries = field(repr=False)
    pcs: PcsSeries = field(repr=False)
    link: LinkProfile = field(repr=False)
    stream: PairEventStream = field(repr=False)
    onboard_tags: TagStream = field(repr=False)
    ground_tags: TagStream = field(repr=False)
    ground_corrected: TagStream = field(repr=False)
    sync: SyncResult | None = field(repr=False)
    coincidences: CoincidenceResult | None = field(repr=False)
    key: SiftedKey = field(repr=False)


@contextmanager
def _stage(module: str):
    """Reattribute library errors to the pipeline stage that hit them."""
    try:
        yield
    except SimulationError:
        raise
    except QkdPassError as exc:
        raise SimulationError(module, str(exc)) from exc


def _empty_tags() -> TagStream:
    return TagStream(np.empty(0), np.empty(0, dtype=np.uint8),
                     np.empty(0, dtype=np.uint8))


def _loss_budget(link: LinkProfile) -> dict[str, float | None]:
    """Time-averaged dB per term over the quantum window.

    Samples where a term underflows to zero transmittance (open-loop
    pointing, total blackout) would average to infinity; the mean runs
    over the finite samples only, and a term with no finite sample
    reports null.
    """
    def mean_db(series: np.ndarray) -> float | None:
        finite = series[np.isfinite(series)]
        return float(np.mean(finite)) if len(finite) else None

    with np.errstate(divide="ignore"):
        total_db = -10.0 * np.log10(link.transmittance)
    return {
        "geometric_db": mean_db(link.geometric_loss_db),
        "atmospheric_db": mean_db(link.atmospheric_loss_db),
        "pointing_db": mean_db(link.pointing_loss_db),
        "optics_db": mean_db(link.optics_loss_db),
        "total_db": mean_db(total_db),
    }


def simulate_pass(
    scenario: Scenario,
    window: PassWindow | None = None,
    pass_index: int = 0,
) -> PassResult:
    """Run the full chain for one pass and account for the key.

    Without an explicit window, passes are searched from the TLE epoch
    and picked by index in time order. The quantum source runs over a
    window centered on the closest approach, capped so the event count
    stays at protocol.max_source_events; pointing and frame tracking
    run over the whole pass. Deterministic for a given scenario and
    seed. A pass with no usable beacon (total blackout) yields a
    well-formed zero-key report instead of an error.
    """
    seed = scenario.seed
    proto = scenario.protocol

    with _stage("orbit_dynamics"):
        tle = scenario.load_tle()
        if window is None:
            start = tle.epoch
            end = start + timedelta(hours=scenario.prediction.search_hours)
            passes = predict_passes(tle, scenario.site, start, end,
                                    scenario.prediction.min_elevation_deg)
            if not passes:
                raise ProfileGap(
                    f"no pass above {scenario.prediction.min_elevation_deg} deg "
                    f"within {scenario.prediction.search_hours} h of epoch"
                )
            if not 0 <= pass_index < len(passes):
                raise OutOfRange(
                    f"pass index {pass_index} outside 0..{len(passes) - 1}"
                )
            window = passes[pass_index]
        profile = sample_pass(tle, scenario.site, window,
                              step_s=scenario.prediction.profile_step_s)
    duration = float(profile.duration_s)

    with _stage("pat_controller"):
        pat = run_pat(
            lambda t: profile.elevation_at(t).item(),
            scenario.pat, duration_s=duration, dt_s=scenario.pat_dt_s, seed=seed,
        )

    with _stage("polarization_correction"):
        frame = frame_offset_profile(
            profile, scenario.pcs.mode,
            constant_deg=scenario.pcs.scripted_constant_deg,
            ramp_deg=scenario.pcs.scripted_ramp_deg,
            body_yaw_deg=scenario.pcs.body_yaw_deg,
            duration_s=duration,
            step_s=scenario.prediction.profile_step_s,
        )
        pcs = run_polarization_correction(
            frame, scenario.pcs.polarimeter, seed=seed,
            update_interval_s=scenario.pcs.update_interval_s,
            extra_offset_deg=scenario.pcs.uncompensated_offset_deg,
        )

    with _stage("photon_source"):
        source = with_seed(scenario.source, seed)
        rate = pair_rate(source)
        q_dur = min(duration, proto.max_source_events / max(rate, 1.0))
        tca_rel = (window.tca - window.aos).total_seconds()
        q_start = min(max(tca_rel - q_dur / 2.0, 0.0), duration - q_dur)
        stream = generate_pair_stream(source, q_dur)

    with _stage("channel_link"):
        # link samples bracketing the quantum window, on its timeline
        lo = max(np.searchsorted(profile.times_s, q_start, side="right") - 1, 0)
        hi = min(np.searchsorted(profile.times_s, q_start + q_dur, side="left") + 1,
                 len(profile.times_s))
        seg = slice(lo, hi)
        seg_times = profile.times_s[seg]
        res_times, res_vals = pat.residual_profile()
        link = build_link_profile(
            seg_times - q_start,
            profile.range_km[seg],
            profile.elevation_deg[seg],
            np.interp(seg_times, res_times, res_vals),
            scenario.link,
        )
        channel = apply_channel(stream, link, seed=seed)

    def flight_s(t_window: np.ndarray) -> np.ndarray:
        rng_km = np.interp(np.asarray(t_window, dtype=float) + q_start,
                           profile.times_s, profile.range_km)
        return rng_km / SPEED_OF_LIGHT_KM_S

    max_flight = float(np.max(profile.range_km[seg])) / SPEED_OF_LIGHT_KM_S
    ground_span = (0.0, q_dur + max_flight)

    with _stage("quantum_receiver"):
        onboard_channels = measure_polarization(stream, "onboard")
        onboard_tags = apply_detector(
            stream.emission_times, onboard_channels,
            scenario.onboard_detector, ClockModel(),
            rng=module_rng(seed, "quantum_receiver.onboard.detector"),
            span_s=(0.0, q_dur),
        )

        residual_deg = pcs.residual_at(q_start + stream.emission_times)
        ground_channels = measure_polarization(
            stream, "ground", residual_deg=residual_deg,
            rng=module_rng(seed, "quantum_receiver.ground"),
            ad_anticorrelated=proto.ad_anticorrelated,
        )

        keep_downlink = (
            module_rng(seed, "photon_source.downlink").random(len(stream))
            < source.downlink_fraction
        )
        signal_idx = channel.survivor_indices[keep_downlink[channel.survivor_indices]]
        signal_emit = stream.emission_times[signal_idx]
        bg_times = channel.background_times
        bg_channels = module_rng(seed, "quantum_receiver.ground.background").integers(
            0, 4, size=len(bg_times), dtype=np.uint8
        )
        arrivals = np.concatenate([signal_emit + flight_s(signal_emit), bg_times])
        chans = np.concatenate([ground_channels[signal_idx], bg_channels])
        origins = np.concatenate([
            np.full(len(signal_idx), ORIGIN_SIGNAL, dtype=np.uint8),
            np.full(len(bg_times), ORIGIN_BACKGROUND, dtype=np.uint8),
        ])
        order = np.argsort(arrivals, kind="stable")
        ground_tags = apply_detector(
            arrivals[order], chans[order],
            scenario.ground_detector, scenario.clock,
            rng=module_rng(seed, "quantum_receiver.ground.detector"),
            span_s=ground_span,
            origins=origins[order],
        )

        # classical beacon: bright pulse train, lost only in a blackout
        beacon_keep = link.transmittance_at(stream.beacon_times) > BEACON_BLACKOUT
        beacon_emit = stream.beacon_times[beacon_keep]
        beacon_model = DetectorModel(
            efficiency=1.0, dark_rate_hz=0.0, dead_time_s=0.0,
            timing_jitter_rms_s=scenario.sync.beacon_jitter_rms_s,
        )
        beacon_tags = apply_detector(
            beacon_emit + flight_s(beacon_emit),
            np.full(len(beacon_emit), CHANNEL_BEACON, dtype=np.uint8),
            beacon_model, scenario.clock,
            rng=module_rng(seed, "quantum_receiver.ground.beacon"),
            span_s=ground_span,
        )

    sync: SyncResult | None = None
    coincidences: CoincidenceResult | None = None
    key = SiftedKey(np.empty(0, dtype=np.uint8), np.empty(0, dtype=np.uint8),
                    np.empty(0, dtype=np.uint8))
    ground_corrected = _empty_tags()
    try:
        with _stage("quantum_receiver"):
            tags_b = beacon_tags.times_s
            # first pass: flight predicted at the raw tag time (the clock
            # offset slews the lookup point, worst case tens of ns)
            sync1 = _sync_stage(
                tags_b - flight_s(tags_b), stream.beacon_times, scenario)
            # second pass: invert the fitted clock, iterate emission time,
            # and scale the flight by the fitted rate
            emit_hat = _emission_estimate(tags_b, sync1.clock, flight_s)
            sync = _sync_stage(
                tags_b - flight_s(emit_hat) * (1.0 + sync1.clock.drift),
                stream.beacon_times, scenario)

            quad = ground_tags.quad()
            emit_q = _emission_estimate(quad.times_s, sync.clock, flight_s)
            t_hat = sync.clock.invert(
                quad.times_s - flight_s(emit_q) * (1.0 + sync.clock.drift))
            ground_corrected = quad.with_times(t_hat)

            coincidences = find_coincidences(
                onboard_tags.quad().times_s,
                ground_corrected.times_s,
                proto.coincidence_window_s,
            )
    except SimulationError as exc:
        if not isinstance(exc.__cause__, SyncFailed):
            raise
        # no timing reference: no coincidence identification is
        # possible, report zero key rather than failing the pass

    with _stage(MODULE_NAME):
        if coincidences is not None:
            on_quad = onboard_tags.quad()
            key = sift(
                on_quad.channels[coincidences.onboard_indices],
                ground_corrected.channels[coincidences.ground_indices],
                ad_anticorrelated=proto.ad_anticorrelated,
            )
        total = len(coincidences.onboard_indices) if coincidences else 0
        if len(key):
            est = estimate_qber(key, proto.sample_fraction,
                                rng=module_rng(seed, MODULE_NAME))
            fraction = secret_fraction(min(est.qber, 0.5))
            secret_bits = max(0, math.floor(
                len(key) * fraction * (1.0 - proto.sample_fraction)))
        else:
            est = QberEstimate(qber=0.0, std_error=0.0, disclosed=0, errors=0)
            fraction = 0.0
            secret_bits = 0
        accidental_fraction = (
            coincidences.expected_accidentals / max(total, 1)
            if coincidences else 0.0
        )
        report = KeyReport(
            pass_id=(f"{tle.satellite_number:05d}-"
                     f"{window.tca.strftime('%Y%m%dT%H%M%SZ')}"),
            coincidences_total=total,
            sifted_bits=len(key),
            qber_estimate=float(est.qber),
            qber_std_error=float(est.std_error),
            accidental_fraction=float(accidental_fraction),
            secret_fraction=float(fraction),
            secret_bits=int(secret_bits),
            loss_budget=_loss_budget(link),
            pat_lock_fraction=float(pat.lock_fraction()),
            sync_offset_s=float(sync.clock.offset_s) if sync else None,
            sync_drift=float(sync.clock.drift) if sync else None,
            window_start_utc=window.aos.isoformat(),
            window_duration_s=float(window.duration_s),
            quantum_window_start_s=float(q_start),
            quantum_window_duration_s=float(q_dur),
        )

    return PassResult(
        report=report, scenario=scenario, tle=tle, window=window,
        profile=profile, pat=pat, pcs=pcs, link=link, stream=stream,
        onboard_tags=onboard_tags, ground_tags=ground_tags,
        ground_corrected=ground_corrected, sync=sync,
        coincidences=coincidences, key=key,
    )


def _sync_stage(
    compensated_times_s: np.ndarray,
    schedule_s: np.ndarray,
    scenario: Scenario,
) -> SyncResult:
    return beacon_clock_sync(
        compensated_times_s, schedule_s,
        max_offset_s=scenario.sync.max_offset_s,
        bin_s=scenario.sync.bin_s,
        min_matched=scenario.sync.min_matched,
    )


def _emission_estimate(tag_times_s, clock: ClockModel, flight_s) -> np.ndarray:
    """Iterate t_emit = clock.invert(tag) - flight(t_emit) to fixed point.

    Two rounds leave an error of order (d_flight/dt)^2 * flight, well
    under a picosecond for LEO geometry.
    """
    t0 = clock.invert(np.asarray(tag_times_s, dtype=float))
    t1 = t0 - flight_s(t0)
    return t0 - flight_s(t1)
