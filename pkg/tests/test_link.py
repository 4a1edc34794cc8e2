"""Free-space link budget terms against closed-form anchors."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ncx2

from qkdpass.channel_link import (LinkConfig, apply_channel, atmospheric_loss,
                                  background_rate, build_link_profile,
                                  geometric_loss, geometric_transmittance,
                                  pointing_loss, pointing_transmittance,
                                  total_transmittance)
from qkdpass.errors import LowElevation, OutOfRange, ProfileGap
from qkdpass.photon_source import SourceConfig, generate_pair_stream

CONFIG = LinkConfig()


def test_geometric_transmittance_far_field():
    # 20 urad full divergence at 500 km: beam radius 5 m, aperture radius 0.3 m
    t = geometric_transmittance(500.0, CONFIG)
    assert t == pytest.approx(0.3**2 / 5.0**2, rel=1e-12)
    assert geometric_loss(500.0, CONFIG) == pytest.approx(24.4370, abs=1e-3)


def test_geometric_transmittance_caps_at_unity():
    # beam smaller than the aperture in the (unphysical) near field
    assert geometric_transmittance(10.0, CONFIG) == 1.0
    assert geometric_loss(10.0, CONFIG) == 0.0


def test_geometric_obstruction_scales_area():
    blocked = LinkConfig(rx_obstruction_fraction=0.25)
    ratio = geometric_transmittance(800.0, blocked) / geometric_transmittance(800.0, CONFIG)
    assert ratio == pytest.approx(0.75, rel=1e-12)


def test_geometric_rejects_nonpositive_range():
    with pytest.raises(OutOfRange):
        geometric_transmittance(0.0, CONFIG)


def test_atmospheric_airmass_scaling():
    assert atmospheric_loss(90.0, CONFIG) == pytest.approx(CONFIG.zenith_atmospheric_loss_db)
    assert atmospheric_loss(30.0, CONFIG) == pytest.approx(
        2.0 * CONFIG.zenith_atmospheric_loss_db, rel=1e-12
    )
    el5 = 1.0 / np.sin(np.radians(5.0))
    assert atmospheric_loss(5.0, CONFIG) == pytest.approx(el5, rel=1e-9)


def test_atmospheric_clamped_below_five_degrees():
    with pytest.warns(LowElevation):
        low = atmospheric_loss(2.0, CONFIG)
    assert low == pytest.approx(atmospheric_loss(5.0, CONFIG))


def test_pointing_on_axis_closed_form():
    # spot radius w = stop radius a: captured fraction is 1 - exp(-2 a^2 / w^2)
    expected = 1.0 - np.exp(-2.0)
    assert pointing_transmittance(0.0, CONFIG) == pytest.approx(expected, abs=1e-6)
    assert pointing_loss(0.0, CONFIG) == pytest.approx(0.6315, abs=1e-3)


def test_pointing_matches_noncentral_chi_square():
    # displaced-Gaussian capture equals the Marcum Q complement, which the
    # noncentral chi-square CDF with 2 dof provides: an independent route
    w = CONFIG.spot_radius
    a = CONFIG.stop_radius
    for d in (0.5, 2.0, 5.0, 7.5, 12.0, 20.0):
        expected = ncx2.cdf((2.0 * a / w) ** 2, df=2, nc=(2.0 * d / w) ** 2)
        assert pointing_transmittance(d, CONFIG) == pytest.approx(expected, abs=1e-6)


def test_pointing_monotone_in_residual():
    d = np.linspace(0.0, 40.0, 81)
    t = pointing_transmittance(d, CONFIG)
    assert np.all(np.diff(t) < 0.0)
    assert np.all((t >= 0.0) & (t <= 1.0))


def test_pointing_rejects_negative_residual():
    with pytest.raises(OutOfRange):
        pointing_transmittance(-1.0, CONFIG)


def test_total_transmittance_composes_terms():
    state = total_transmittance(700.0, 45.0, 3.0, CONFIG, time_s=12.0)
    recombined = 10.0 ** (
        -(
            state.geometric_loss_db
            + state.atmospheric_loss_db
            + state.pointing_loss_db
            + state.optics_loss_db
        )
        / 10.0
    )
    assert state.total_transmittance == pytest.approx(recombined, rel=1e-9)
    assert state.optics_loss_db == pytest.approx(-10.0 * np.log10(CONFIG.optics_efficiency))
    assert state.time_s == 12.0


def test_background_rate_scales_with_airmass():
    config = LinkConfig(sky_background_rate_zenith=200.0)
    assert background_rate(90.0, config) == pytest.approx(200.0)
    assert background_rate(30.0, config) == pytest.approx(400.0, rel=1e-12)
    assert background_rate(90.0, CONFIG) == 0.0


def test_config_validation():
    with pytest.raises(OutOfRange):
        LinkConfig(tx_divergence_rad=0.0)
    with pytest.raises(OutOfRange):
        LinkConfig(optics_efficiency=0.0)
    with pytest.raises(OutOfRange):
        LinkConfig(optics_efficiency=1.5)
    with pytest.raises(OutOfRange):
        LinkConfig(rx_obstruction_fraction=1.0)


@settings(max_examples=50, deadline=None)
@given(
    r1=st.floats(min_value=300.0, max_value=3000.0),
    r2=st.floats(min_value=300.0, max_value=3000.0),
)
def test_geometric_monotone_in_range(r1, r2):
    lo, hi = sorted((r1, r2))
    assert geometric_transmittance(hi, CONFIG) <= geometric_transmittance(lo, CONFIG)


@settings(max_examples=50, deadline=None)
@given(el=st.floats(min_value=5.0, max_value=90.0))
def test_atmospheric_bounded_by_airmass_range(el):
    loss = atmospheric_loss(el, CONFIG)
    assert CONFIG.zenith_atmospheric_loss_db <= loss
    assert loss <= CONFIG.zenith_atmospheric_loss_db / np.sin(np.radians(5.0)) + 1e-9


def test_profile_lookup_zero_order_hold():
    times = np.array([0.0, 10.0, 20.0])
    profile = build_link_profile(
        times,
        range_km=np.array([900.0, 500.0, 900.0]),
        elevation_deg=np.array([20.0, 80.0, 20.0]),
        residual_arcsec=np.zeros(3),
        config=CONFIG,
    )
    assert profile.covers(20.0)
    assert not profile.covers(25.0)
    assert profile.transmittance_at(10.0) == profile.transmittance[1]
    assert profile.transmittance_at(14.0) == profile.transmittance[1]
    assert profile.transmittance_at(9.999) == profile.transmittance[0]
    with pytest.raises(ProfileGap):
        profile.transmittance_at(-1.0)


def test_profile_recombines_to_transmittance():
    times = np.linspace(0.0, 60.0, 61)
    el = np.linspace(10.0, 80.0, 61)
    rng_km = np.linspace(1500.0, 550.0, 61)
    residual = np.linspace(6.0, 1.0, 61)
    profile = build_link_profile(times, rng_km, el, residual, CONFIG)
    recombined = 10.0 ** (
        -(
            profile.geometric_loss_db
            + profile.atmospheric_loss_db
            + profile.pointing_loss_db
            + profile.optics_loss_db
        )
        / 10.0
    )
    assert np.allclose(profile.transmittance, recombined, rtol=1e-9)


def test_apply_channel_thinning_statistics():
    config = SourceConfig(pump_power_mw=0.01, rng_seed=2)  # 136k pairs/s
    stream = generate_pair_stream(config, 1.0)
    profile = build_link_profile(
        np.array([0.0, 1.0]),
        range_km=np.full(2, 500.0),
        elevation_deg=np.full(2, 90.0),
        residual_arcsec=np.zeros(2),
        config=LinkConfig(),
    )
    t = float(profile.transmittance[0])
    result = apply_channel(stream, profile, seed=9)
    n = len(stream)
    expected = n * t
    assert abs(len(result.survivor_indices) - expected) < 5.0 * np.sqrt(n * t * (1.0 - t))
    assert np.array_equal(
        result.arrival_times, stream.emission_times[result.survivor_indices]
    )
    again = apply_channel(stream, profile, seed=9)
    assert np.array_equal(result.survivor_indices, again.survivor_indices)


def test_apply_channel_background_statistics():
    config = SourceConfig(pump_power_mw=1e-4, rng_seed=2)
    stream = generate_pair_stream(config, 2.0)
    rate = 5000.0
    profile = build_link_profile(
        np.array([0.0, 2.0]),
        range_km=np.full(2, 500.0),
        elevation_deg=np.full(2, 90.0),
        residual_arcsec=np.zeros(2),
        config=LinkConfig(sky_background_rate_zenith=rate),
    )
    result = apply_channel(stream, profile, seed=4)
    mean = rate * 2.0
    assert abs(len(result.background_times) - mean) < 5.0 * np.sqrt(mean)
    assert np.all(np.diff(result.background_times) >= 0.0)
    assert result.background_times.min() >= 0.0
    assert result.background_times.max() <= 2.0


def test_apply_channel_requires_coverage():
    stream = generate_pair_stream(SourceConfig(pump_power_mw=1e-4), 10.0)
    profile = build_link_profile(
        np.array([0.0, 5.0]),
        range_km=np.full(2, 500.0),
        elevation_deg=np.full(2, 90.0),
        residual_arcsec=np.zeros(2),
        config=CONFIG,
    )
    with pytest.raises(ProfileGap):
        apply_channel(stream, profile, seed=0)
