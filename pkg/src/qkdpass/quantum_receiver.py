"""Four-channel polarization detection, time tagging, and sync.

One detection unit model serves both ends of the link: the ground
receiver and the onboard idler arm are identical four-channel
analyzers (50/50 basis splitter, then a polarizing splitter per
basis, one avalanche photodiode per output). This module measures
pair events into channels, degrades arrival times through a detector
model and a clock, recovers the ground clock from the sync beacon,
and finds coincidences between the two sides' tag streams.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import OutOfRange, SyncFailed
from .photon_source import BASIS_HV, PairEventStream
from .polarization_correction import qber_from_residual
from .seeding import module_rng

MODULE_NAME = "quantum_receiver"

CHANNEL_H = 0
CHANNEL_V = 1
CHANNEL_A = 2
CHANNEL_D = 3
CHANNEL_BEACON = 255

CHANNEL_TOKENS = {CHANNEL_H: "H", CHANNEL_V: "V", CHANNEL_A: "A",
                  CHANNEL_D: "D", CHANNEL_BEACON: "BEACON"}
TOKEN_CHANNELS = {v: k for k, v in CHANNEL_TOKENS.items()}

ORIGIN_SIGNAL = 0
ORIGIN_DARK = 1
ORIGIN_BACKGROUND = 2

QUAD_CHANNELS = (CHANNEL_H, CHANNEL_V, CHANNEL_A, CHANNEL_D)

MAX_CLOCK_DRIFT = 1e-4


def channel_basis(channels: np.ndarray) -> np.ndarray:
    """0 for H/V, 1 for A/D."""
    return np.asarray(channels) >> 1


def channel_bit(channels: np.ndarray) -> np.ndarray:
    """Key bit convention: H=0, V=1, A=0, D=1."""
    return np.asarray(channels) & 1


@dataclass(frozen=True)
class DetectorModel:
    """Shared imperfection model for one four-channel analyzer."""

    efficiency: float = 0.5
    dark_rate_hz: float = 100.0       # per channel
    dead_time_s: float = 1e-6
    timing_jitter_rms_s: float = 1e-10

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise OutOfRange(f"efficiency {self.efficiency} outside [0, 1]")
        if self.dark_rate_hz < 0.0 or self.dead_time_s < 0.0 or self.timing_jitter_rms_s < 0.0:
            raise OutOfRange("dark rate, dead time, and jitter must be nonnegative")


@dataclass(frozen=True)
class ClockModel:
    """Affine receiver clock relative to the satellite clock."""

    offset_s: float = 0.0
    drift: float = 0.0   # s/s

    def __post_init__(self):
        if not abs(self.drift) < MAX_CLOCK_DRIFT:
            raise OutOfRange(f"|drift| {abs(self.drift)} not below {MAX_CLOCK_DRIFT}")

    def apply(self, times_s: np.ndarray) -> np.ndarray:
        return np.asarray(times_s, dtype=float) * (1.0 + self.drift) + self.offset_s

    def invert(self, times_s: np.ndarray) -> np.ndarray:
        return (np.asarray(times_s, dtype=float) - self.offset_s) / (1.0 + self.drift)

    def inverse(self) -> ClockModel:
        return ClockModel(offset_s=-self.offset_s / (1.0 + self.drift),
                          drift=-self.drift / (1.0 + self.drift))


@dataclass(frozen=True)
class TagStream:
    """Time-ordered detection records for one receiver.

    origins carries the ground-truth label (signal/dark/background)
    for testing; exported data drops it.
    """

    times_s: np.ndarray
    channels: np.ndarray
    origins: np.ndarray

    def __post_init__(self):
        if not (len(self.times_s) == len(self.channels) == len(self.origins)):
            raise ValueError("tag columns must share one length")
        if len(self.times_s) > 1 and np.any(np.diff(self.times_s) < 0.0):
            raise ValueError("tags must be sorted by time")

    def __len__(self) -> int:
        return len(self.times_s)

    def select(self, mask: np.ndarray) -> TagStream:
        return TagStream(self.times_s[mask], self.channels[mask], self.origins[mask])

    def channel_times(self, channel: int) -> np.ndarray:
        return self.times_s[self.channels == channel]

    def quad(self) -> TagStream:
        """Only the four polarization channels (beacon removed)."""
        return self.select(self.channels != CHANNEL_BEACON)

    def beacon(self) -> TagStream:
        return self.select(self.channels == CHANNEL_BEACON)

    def with_times(self, times_s: np.ndarray) -> TagStream:
        order = np.argsort(times_s, kind="stable")
        return TagStream(np.asarray(times_s, dtype=float)[order],
                         self.channels[order], self.origins[order])


def merge_tag_streams(*streams: TagStream) -> TagStream:
    times = np.concatenate([s.times_s for s in streams])
    channels = np.concatenate([s.channels for s in streams])
    origins = np.concatenate([s.origins for s in streams])
    order = np.argsort(times, kind="stable")
    return TagStream(times[order], channels[order], origins[order])


def measure_polarization(
    stream: PairEventStream,
    side: str,
    residual_deg=0.0,
    rng: np.random.Generator | int = 0,
    ad_anticorrelated: bool = True,
) -> np.ndarray:
    """Channel assignment (H/V/A/D) for every pair event on one side.

    The onboard side replays the idler basis and outcome recorded at
    emission. The ground side picks its basis uniformly and reads the
    shared hidden outcome for that basis, flipped where the source
    error flag is set and, independently, with probability
    sin^2(residual misalignment). ad_anticorrelated selects the
    entangled-state convention of correlated H/V and anticorrelated
    A/D outcomes, matching the source's fringe extrema.
    """
    n = len(stream)
    if side == "onboard":
        return (stream.idler_basis.astype(np.uint8) * 2
                + stream.idler_outcome.astype(np.uint8))
    if side != "ground":
        raise OutOfRange(f"side must be 'ground' or 'onboard', got {side!r}")
    if not isinstance(rng, np.random.Generator):
        rng = module_rng(rng, MODULE_NAME + ".ground")
    basis = rng.integers(0, 2, size=n, dtype=np.uint8)
    flip_mis = np.zeros(n, dtype=bool)
    q = np.asarray(qber_from_residual(residual_deg), dtype=float)
    if np.any(q > 0.0):
        flip_mis = rng.random(n) < np.broadcast_to(q, (n,))
    bit = np.where(basis == BASIS_HV, stream.latent_bit, stream.latent_bit_ad)
    if ad_anticorrelated:
        bit = bit ^ (basis != BASIS_HV)
    bit = bit.astype(np.uint8) ^ stream.error_flag.astype(np.uint8) ^ flip_mis.astype(np.uint8)
    return basis * 2 + bit


def _prune_dead_time(times: np.ndarray, dead_time_s: float) -> np.ndarray:
    """Indices kept by a non-paralyzable dead time on sorted times."""
    keep = np.empty(len(times), dtype=bool)
    last = -math.inf
    for i, t in enumerate(times):
        if t - last >= dead_time_s:
            keep[i] = True
            last = t
        else:
            keep[i] = False
    return keep


def apply_detector(
    arrival_times_s: np.ndarray,
    channels: np.ndarray,
    model: DetectorModel,
    clock: ClockModel,
    rng: np.random.Generator | int = 0,
    span_s: tuple[float, float] | None = None,
    origins: np.ndarray | None = None,
) -> TagStream:
    """Detection chain from photon arrivals to clock-stamped tags.

    In order: Bernoulli thinning at the detector efficiency, Gaussian
    timing jitter, the receiver clock transform, dark counts injected
    per channel over the clock-transformed span, then per-channel
    dead-time pruning on the final timebase. span_s (in arrival-side
    time) bounds the dark-count window; it defaults to the arrival
    extent and is required for empty arrival lists when dark counts
    matter.
    """
    if not isinstance(rng, np.random.Generator):
        rng = module_rng(rng, MODULE_NAME + ".detector")
    times = np.asarray(arrival_times_s, dtype=float)
    channels = np.asarray(channels)
    if origins is None:
        origins = np.full(len(times), ORIGIN_SIGNAL, dtype=np.uint8)

    kept = rng.random(len(times)) < model.efficiency
    times = times[kept]
    chan = channels[kept].astype(np.uint8)
    orig = np.asarray(origins)[kept].astype(np.uint8)

    if model.timing_jitter_rms_s > 0.0 and len(times):
        times = times + rng.normal(0.0, model.timing_jitter_rms_s, size=len(times))
    times = clock.apply(times)

    if span_s is None:
        span_s = (float(arrival_times_s[0]), float(arrival_times_s[-1])) \
            if len(arrival_times_s) else (0.0, 0.0)
    lo, hi = clock.apply(np.asarray(span_s, dtype=float))
    if model.dark_rate_hz > 0.0 and hi > lo:
        extra_t, extra_c = [], []
        for channel in QUAD_CHANNELS:
            n_dark = rng.poisson(model.dark_rate_hz * (hi - lo))
            extra_t.append(rng.uniform(lo, hi, size=n_dark))
            extra_c.append(np.full(n_dark, channel, dtype=np.uint8))
        dark_t = np.concatenate(extra_t)
        times = np.concatenate([times, dark_t])
        chan = np.concatenate([chan, np.concatenate(extra_c)])
        orig = np.concatenate([orig, np.full(len(dark_t), ORIGIN_DARK, dtype=np.uint8)])

    order = np.argsort(times, kind="stable")
    times, chan, orig = times[order], chan[order], orig[order]

    if model.dead_time_s > 0.0 and len(times):
        keep = np.ones(len(times), dtype=bool)
        for channel in np.unique(chan):
            mask = chan == channel
            keep[mask] = _prune_dead_time(times[mask], model.dead_time_s)
        times, chan, orig = times[keep], chan[keep], orig[keep]

    return TagStream(times, chan, orig)


@dataclass(frozen=True)
class SyncResult:
    """Recovered receiver clock and fit diagnostics."""

    clock: ClockModel
    n_matched: int
    residual_rms_s: float
    coarse_offset_s: float


def beacon_clock_sync(
    beacon_tag_times_s: np.ndarray,
    schedule_s: np.ndarray,
    max_offset_s: float = 10e-3,
    bin_s: float = 100e-9,
    min_matched: int = 100,
) -> SyncResult:
    """Estimate the receiver clock from beacon tags and the known schedule.

    Coarse stage: tag times are folded modulo the beacon period and
    histogrammed at bin_s; the peak bin gives the offset modulo one
    period, rejected as ambiguous unless it exceeds 5x the median
    bin. The fold uses only an initial slice short enough that the
    worst admissible drift cannot smear the peak. The whole number of
    periods is then anchored by pairing the first tag with its
    nearest pulse, which assumes the tag stream covers the start of
    the pulse train; a strictly periodic train constrains the offset
    only modulo its period, so some edge reference is required.

    Fine stage: each tag is matched to the nearest schedule pulse
    under the current clock estimate and a straight line of tag time
    against pulse time is refit (slope 1+drift, intercept offset),
    with the match tolerance tightened from the fit residuals. The
    first fit reuses the short fold slice so unmodeled drift cannot
    scramble matches far from it; later rounds use every tag.
    """
    tags = np.sort(np.asarray(beacon_tag_times_s, dtype=float))
    schedule = np.asarray(schedule_s, dtype=float)
    if len(tags) == 0 or len(schedule) == 0:
        raise SyncFailed("no beacon tags to synchronize on")
    if len(schedule) < 2:
        raise SyncFailed("schedule must contain at least two pulses")
    period = float(np.median(np.diff(schedule)))

    # a drift of MAX_CLOCK_DRIFT may smear the fold by at most period/10
    fold_window = min(0.1 * period / MAX_CLOCK_DRIFT,
                      float(tags[-1] - tags[0]) + period)
    segment = tags[tags <= tags[0] + fold_window]
    folded = (segment - schedule[0]) % period
    n_bins = max(4, int(round(period / bin_s)))
    counts, edges = np.histogram(folded, bins=n_bins, range=(0.0, period))
    peak = int(np.argmax(counts))
    floor = max(float(np.median(counts)), 1.0)
    if counts[peak] <= 5.0 * floor:
        raise SyncFailed(
            f"correlation peak {counts[peak]} not above 5x median bin {floor:.1f}"
        )
    center = 0.5 * (edges[peak] + edges[peak + 1])
    # circular refinement so a peak straddling the fold boundary stays sharp
    delta = (folded - center + 0.5 * period) % period - 0.5 * period
    near = np.abs(delta) <= 2.0 * (period / n_bins)
    offset_mod = center + (float(np.mean(delta[near])) if np.any(near) else 0.0)
    whole = round(float(segment[0] - schedule[0] - offset_mod) / period)
    coarse = offset_mod + whole * period
    if abs(coarse) > max_offset_s:
        raise SyncFailed(
            f"coarse offset {coarse:.6g} s outside +/-{max_offset_s:.3g} s"
        )

    # two fits on the fold slice (trim outliers before trusting the
    # slope for extrapolation), then two over every tag
    offset, drift = coarse, 0.0
    matched_tags = matched_pulses = np.empty(0)
    rms = math.inf
    for round_index, pool in enumerate((segment, segment, tags, tags)):
        predicted = (pool - offset) / (1.0 + drift)
        j = np.clip(np.searchsorted(schedule, predicted), 1, len(schedule) - 1)
        nearer_left = (predicted - schedule[j - 1]) < (schedule[j] - predicted)
        j = j - nearer_left
        residual = pool - (schedule[j] * (1.0 + drift) + offset)
        if round_index == 0:
            tol = 0.4 * period
        else:
            mad = float(np.median(np.abs(residual - np.median(residual))))
            tol = min(max(8.0 * 1.4826 * mad, 4.0 * bin_s), 0.4 * period)
        good = np.abs(residual) <= tol
        if int(good.sum()) < 2:
            raise SyncFailed("too few beacon tags matched schedule pulses")
        matched_tags, matched_pulses = pool[good], schedule[j[good]]
        slope, intercept = np.polyfit(matched_pulses, matched_tags, 1)
        offset, drift = float(intercept), float(slope) - 1.0
        rms = float(np.sqrt(np.mean(
            (matched_tags - (matched_pulses * (1.0 + drift) + offset)) ** 2)))
    if len(matched_tags) < min_matched:
        raise SyncFailed(
            f"only {len(matched_tags)} beacon pulses matched; need {min_matched}"
        )
    if rms > 0.1 * period:
        raise SyncFailed(
            f"fit residual rms {rms:.3g} s is not well below the beacon period; "
            "tags show no coherent pulse structure"
        )
    try:
        clock = ClockModel(offset_s=offset, drift=drift)
    except OutOfRange as exc:
        raise SyncFailed(f"implausible clock fit: {exc}") from exc
    return SyncResult(
        clock=clock,
        n_matched=int(len(matched_tags)),
        residual_rms_s=rms,
        coarse_offset_s=float(coarse),
    )


@dataclass(frozen=True)
class CoincidenceResult:
    """Matched tag pairs plus the accidental-rate estimate."""

    onboard_indices: np.ndarray
    ground_indices: np.ndarray
    window_s: float
    overlap_span_s: float
    accidental_rate_hz: float
    expected_accidentals: float

    def __len__(self) -> int:
        return len(self.onboard_indices)


def find_coincidences(
    onboard_times_s: np.ndarray,
    ground_times_s: np.ndarray,
    window_s: float,
) -> CoincidenceResult:
    """Greedy pairing of tags within +/- window/2, each tag used once.

    A linear two-pointer sweep pairs the earliest compatible tags and
    advances; at rates where at most one candidate falls inside the
    window this is exactly nearest-neighbor matching. The accidental
    estimate is r_onboard x r_ground x window over the overlap span.
    """
    if window_s < 0.0:
        raise OutOfRange(f"window must be nonnegative, got {window_s}")
    a = np.asarray(onboard_times_s, dtype=float)
    b = np.asarray(ground_times_s, dtype=float)
    half = 0.5 * window_s
    ia: list[int] = []
    ib: list[int] = []
    i = j = 0
    na, nb = len(a), len(b)
    while i < na and j < nb:
        d = b[j] - a[i]
        if d > half:
            i += 1
        elif d < -half:
            j += 1
        else:
            ia.append(i)
            ib.append(j)
            i += 1
            j += 1
    if na and nb:
        overlap = min(a[-1], b[-1]) - max(a[0], b[0])
    else:
        overlap = 0.0
    if overlap > 0.0:
        rate_a = na / (a[-1] - a[0]) if a[-1] > a[0] else 0.0
        rate_b = nb / (b[-1] - b[0]) if b[-1] > b[0] else 0.0
        accidental = rate_a * rate_b * window_s
    else:
        overlap = 0.0
        accidental = 0.0
    return CoincidenceResult(
        onboard_indices=np.asarray(ia, dtype=np.int64),
        ground_indices=np.asarray(ib, dtype=np.int64),
        window_s=window_s,
        overlap_span_s=float(max(overlap, 0.0)),
        accidental_rate_hz=accidental,
        expected_accidentals=accidental * float(max(overlap, 0.0)),
    )


def write_tags_csv(stream: TagStream, path: str | Path) -> None:
    """Export tags as time_s,channel rows (origin labels dropped)."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["time_s", "channel"])
        for t, c in zip(stream.times_s, stream.channels):
            writer.writerow([f"{t:.15g}", CHANNEL_TOKENS[int(c)]])


def read_tags_csv(path: str | Path) -> TagStream:
    """Import tags written by write_tags_csv (origins come back blank)."""
    times, channels = [], []
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["time_s", "channel"]:
            raise ValueError(f"unrecognized tag CSV header {header!r}")
        for row in reader:
            times.append(float(row[0]))
            channels.append(TOKEN_CHANNELS[row[1]])
    return TagStream(
        times_s=np.asarray(times, dtype=float),
        channels=np.asarray(channels, dtype=np.uint8),
        origins=np.zeros(len(times), dtype=np.uint8),
    )


_BINARY_DTYPE = np.dtype([("time_s", "<f8"), ("channel", "u1")])


def write_tags_binary(stream: TagStream, path: str | Path) -> None:
    """Export packed little-endian (float64 seconds, uint8 channel) records."""
    records = np.empty(len(stream), dtype=_BINARY_DTYPE)
    records["time_s"] = stream.times_s
    records["channel"] = stream.channels
    Path(path).write_bytes(records.tobytes())


def read_tags_binary(path: str | Path) -> TagStream:
    records = np.frombuffer(Path(path).read_bytes(), dtype=_BINARY_DTYPE)
    return TagStream(
        times_s=records["time_s"].astype(float),
        channels=records["channel"].astype(np.uint8),
        origins=np.zeros(len(records), dtype=np.uint8),
    )
