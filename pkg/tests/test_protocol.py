"""Sifting, error estimation, key-rate arithmetic, and the full pipeline."""
from __future__ import annotations

import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdpass.bbm92_pipeline import (QberEstimate, SiftedKey, binary_entropy,
                                    estimate_qber, secret_fraction, sift,
                                    simulate_pass)
from qkdpass.errors import EmptyKey, LowSample, OutOfRange, SimulationError
from qkdpass.photon_source import SourceConfig, generate_pair_stream
from qkdpass.quantum_receiver import (CHANNEL_A, CHANNEL_D, CHANNEL_H,
                                      CHANNEL_V, measure_polarization)
from qkdpass.scenario import LinkConfig, ProtocolConfig
from conftest import base_scenario


def test_binary_entropy_values():
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0
    assert binary_entropy(0.5) == 1.0
    assert binary_entropy(0.11) == pytest.approx(
        -0.11 * math.log2(0.11) - 0.89 * math.log2(0.89)
    )
    with pytest.raises(OutOfRange):
        binary_entropy(-0.01)
    with pytest.raises(OutOfRange):
        binary_entropy(1.01)


@given(st.floats(min_value=0.0, max_value=1.0))
def test_binary_entropy_symmetric(p):
    assert binary_entropy(p) == pytest.approx(binary_entropy(1.0 - p), abs=1e-12)


def test_secret_fraction_values():
    assert secret_fraction(0.0) == 1.0
    expected = 1.0 - 2.0 * (-0.05 * math.log2(0.05) - 0.95 * math.log2(0.95))
    assert secret_fraction(0.05) == pytest.approx(expected, abs=1e-12)
    assert secret_fraction(0.5) == 0.0
    # the rate hits zero just above 11 percent and stays clamped
    assert secret_fraction(0.12) == 0.0
    with pytest.raises(OutOfRange):
        secret_fraction(0.51)
    with pytest.raises(OutOfRange):
        secret_fraction(-0.001)


def test_secret_fraction_monotone():
    grid = np.linspace(0.0, 0.5, 101)
    values = [secret_fraction(float(q)) for q in grid]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_sift_hand_worked_example():
    onboard = np.array([CHANNEL_H, CHANNEL_V, CHANNEL_A, CHANNEL_D, CHANNEL_H, CHANNEL_A])
    ground = np.array([CHANNEL_H, CHANNEL_H, CHANNEL_D, CHANNEL_D, CHANNEL_A, CHANNEL_V])
    key = sift(onboard, ground)
    # pairs 0,1 share H/V; pairs 2,3 share A/D; pairs 4,5 are cross-basis
    assert len(key) == 4
    assert key.basis_per_bit.tolist() == [0, 0, 1, 1]
    assert key.bits.tolist() == [0, 0, 1, 1]
    # onboard bits: H=0, V=1, then A=0 and D=1 flipped by the
    # anticorrelation convention to 1 and 0
    assert key.partner_bits.tolist() == [0, 1, 1, 0]
    assert key.mismatches() == 2
    plain = sift(onboard, ground, ad_anticorrelated=False)
    assert plain.partner_bits.tolist() == [0, 1, 0, 1]


def test_sift_all_same_basis():
    onboard = np.array([CHANNEL_H, CHANNEL_V] * 10)
    ground = np.array([CHANNEL_V, CHANNEL_H] * 10)
    assert len(sift(onboard, ground)) == 20


def test_sift_length_mismatch():
    with pytest.raises(ValueError):
        sift(np.array([CHANNEL_H]), np.array([CHANNEL_H, CHANNEL_V]))


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=3000), st.integers(min_value=0, max_value=2**31 - 1))
def test_sift_conserves_events(n, seed):
    rng = np.random.default_rng(seed)
    onboard = rng.integers(0, 4, n).astype(np.uint8)
    ground = rng.integers(0, 4, n).astype(np.uint8)
    key = sift(onboard, ground)
    discarded = int(np.count_nonzero((onboard >> 1) != (ground >> 1)))
    assert len(key) + discarded == n


def test_sift_fraction_near_half():
    rng = np.random.default_rng(21)
    n = 40000
    onboard = rng.integers(0, 4, n).astype(np.uint8)
    ground = rng.integers(0, 4, n).astype(np.uint8)
    key = sift(onboard, ground)
    assert abs(len(key) / n - 0.5) < 5.0 * 0.5 / np.sqrt(n)


def _key(bits, partner):
    bits = np.asarray(bits, dtype=np.uint8)
    partner = np.asarray(partner, dtype=np.uint8)
    return SiftedKey(bits=bits, partner_bits=partner,
                     basis_per_bit=np.zeros(len(bits), dtype=np.uint8))


def test_estimate_qber_extremes():
    n = 2000
    bits = np.random.default_rng(20).integers(0, 2, n).astype(np.uint8)
    perfect = estimate_qber(_key(bits, bits), rng=0)
    assert perfect.qber == 0.0
    assert perfect.std_error == 0.0
    assert perfect.disclosed == 200
    inverted = estimate_qber(_key(bits, 1 - bits), rng=0)
    assert inverted.qber == 1.0


def test_estimate_qber_matches_true_rate():
    rng = np.random.default_rng(22)
    n = 50000
    bits = rng.integers(0, 2, n).astype(np.uint8)
    flips = rng.random(n) < 0.07
    est = estimate_qber(_key(bits, bits ^ flips), sample_fraction=0.2, rng=1)
    assert est.disclosed == 10000
    assert est.qber == pytest.approx(0.07, abs=5.0 * math.sqrt(0.07 * 0.93 / 10000))
    assert est.std_error == pytest.approx(math.sqrt(est.qber * (1 - est.qber) / 10000))
    assert est.errors == round(est.qber * est.disclosed)


def test_estimate_qber_guards():
    with pytest.raises(EmptyKey):
        estimate_qber(_key([], []))
    bits = np.ones(500, dtype=np.uint8)
    with pytest.raises(OutOfRange):
        estimate_qber(_key(bits, bits), sample_fraction=0.0)
    with pytest.raises(OutOfRange):
        estimate_qber(_key(bits, bits), sample_fraction=1.5)
    with pytest.warns(LowSample):
        estimate_qber(_key(bits, bits), sample_fraction=0.01)


def test_estimate_qber_deterministic_per_seed():
    rng = np.random.default_rng(23)
    bits = rng.integers(0, 2, 5000).astype(np.uint8)
    flips = rng.random(5000) < 0.05
    key = _key(bits, bits ^ flips)
    a = estimate_qber(key, rng=4)
    b = estimate_qber(key, rng=4)
    assert a == b


def test_error_mechanisms_add_independently():
    # source errors at q1 and misalignment flips at q2 combine to
    # q1 + q2 - 2 q1 q2 (a double flip cancels)
    q1, q2 = 0.05, 0.03
    config = SourceConfig(pump_power_mw=0.02, visibility=1.0 - 2.0 * q1, rng_seed=31)
    stream = generate_pair_stream(config, 0.5)
    residual = math.degrees(math.asin(math.sqrt(q2)))
    onboard = measure_polarization(stream, "onboard")
    ground = measure_polarization(stream, "ground", residual_deg=residual, rng=32)
    key = sift(onboard, ground)
    rate = key.mismatches() / len(key)
    expected = q1 + q2 - 2.0 * q1 * q2
    sigma = math.sqrt(expected * (1.0 - expected) / len(key))
    assert rate == pytest.approx(expected, abs=4.0 * sigma)


def test_simulate_pass_report_well_formed(sim_result):
    report = sim_result.report
    assert report.coincidences_total > 0
    assert 0 < report.sifted_bits <= report.coincidences_total
    assert abs(report.sifted_bits / report.coincidences_total - 0.5) < 0.05
    assert 0.0 <= report.qber_estimate <= 1.0
    assert 0.0 <= report.secret_fraction <= 1.0
    assert report.secret_bits >= 0
    assert report.pat_lock_fraction > 0.3
    assert report.sync_offset_s is not None
    assert report.quantum_window_duration_s > 0.0
    budget = report.loss_budget
    for term in ("geometric_db", "atmospheric_db", "pointing_db", "optics_db", "total_db"):
        assert budget[term] is None or budget[term] >= 0.0
    parts = sum(budget[k] for k in ("geometric_db", "atmospheric_db",
                                    "pointing_db", "optics_db"))
    assert budget["total_db"] == pytest.approx(parts, rel=0.05)
    payload = json.dumps(report.to_dict(), sort_keys=True)
    assert "qber" in payload


def test_simulate_pass_recovers_configured_clock(sim_result):
    scenario = base_scenario()
    sync = sim_result.sync
    assert sync is not None
    assert abs(sync.clock.offset_s - scenario.clock.offset_s) < 1e-9
    assert abs(sync.clock.drift - scenario.clock.drift) < 1e-8


def test_simulate_pass_deterministic(sim_result):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        again = simulate_pass(base_scenario())
    assert json.dumps(again.report.to_dict(), sort_keys=True) == \
        json.dumps(sim_result.report.to_dict(), sort_keys=True)


def test_simulate_pass_background_degrades_key():
    results = []
    for rate in (0.0, 2e4, 2e6):
        scenario = base_scenario(
            link=LinkConfig(rx_aperture_diameter_m=1.0,
                            tx_divergence_rad=10e-6,
                            sky_background_rate_zenith=rate),
            protocol=ProtocolConfig(max_source_events=300_000),
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            results.append(simulate_pass(scenario))
    accidental = [r.report.accidental_fraction for r in results]
    assert accidental[0] < accidental[1] < accidental[2]
    # judge error rates on the full sifted key, not the disclosed sample,
    # since these short runs disclose only a few dozen bits
    error_rate = [r.key.mismatches() / len(r.key) for r in results]
    assert error_rate[0] < error_rate[2]
    assert error_rate[1] < error_rate[2]


def test_simulate_pass_blackout_yields_zero_key():
    scenario = base_scenario(
        link=LinkConfig(rx_aperture_diameter_m=1.0,
                        tx_divergence_rad=10e-6,
                        zenith_atmospheric_loss_db=500.0),
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = simulate_pass(scenario)
    report = result.report
    assert report.coincidences_total == 0
    assert report.sifted_bits == 0
    assert report.secret_bits == 0
    assert report.qber_estimate == 0.0
    assert report.secret_fraction == 0.0
    assert report.sync_offset_s is None
    json.dumps(report.to_dict())  # stays serializable


def test_simulate_pass_no_pass_found_is_simulation_error():
    scenario = base_scenario()
    with pytest.raises(SimulationError):
        simulate_pass(scenario, pass_index=99)
