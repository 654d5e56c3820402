import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from motnet.plc import (FIXTURES, Cfr, Cir, DegenerateChannelError, PdrMode, QMode, analyze_link, ber_bpsk,
                        channel_gain, cir_from_cfr, default_grid, fit_lognormal, fixture_metadata, noise_psd,
                        pdr_plc, power_delay_profile, q_function, read_cfr_csv, rms_delay_spread, sinr,
                        synth_cfr, to_db, write_cfr_csv)
from oracles import q_quad

GRID = default_grid()


def test_default_grid():
    assert len(GRID) == 200 and GRID[1] == 200e3


def test_all_pass_cfr_gives_unit_tap():
    cir = cir_from_cfr(Cfr(GRID, np.ones(200)))
    assert cir.taps[0] == pytest.approx(1.0)
    assert np.allclose(cir.taps[1:], 0, atol=1e-12)
    assert cir.tap_spacing == pytest.approx(25e-9)


def test_pure_delay_moves_tap():
    t0 = 17 * 25e-9
    cir = cir_from_cfr(Cfr(GRID, np.exp(-2j * np.pi * GRID * t0)))
    assert int(np.argmax(np.abs(cir.taps))) == 17
    assert abs(cir.taps[17]) == pytest.approx(1.0)


def test_parseval_and_roundtrip():
    cfr = synth_cfr(12, 1e-6, seed=4)
    cir = cir_from_cfr(cfr)
    assert np.sum(np.abs(cir.taps) ** 2) == pytest.approx(np.sum(np.abs(cfr.values) ** 2) / cfr.n, rel=1e-9)
    assert np.allclose(np.fft.fft(cir.taps), cfr.values, rtol=1e-9, atol=1e-12)


def test_non_uniform_grid_rejected():
    f = GRID.copy()
    f[5] += 1e3
    with pytest.raises(ValueError):
        cir_from_cfr(Cfr(f, np.ones(200)))


def test_profile():
    assert np.allclose(power_delay_profile(Cir(np.array([0, 2, 0]), 1.0)), [0, 1, 0])
    assert np.allclose(power_delay_profile(Cir(np.array([1, 0, 1j]), 1.0)), [0.5, 0, 0.5])
    with pytest.raises(DegenerateChannelError):
        power_delay_profile(Cir(np.zeros(4), 1.0))


def test_rms_delay_spread_cases():
    assert rms_delay_spread(np.array([0, 0, 1.0]), 1e-6) == 0.0
    p = np.zeros(11)
    p[0] = p[10] = 0.5
    assert rms_delay_spread(p, 1e-7) == pytest.approx(0.5e-6, abs=1e-18)


def test_channel_gain():
    assert channel_gain(Cfr(GRID, np.ones(200))) == 1.0
    g = channel_gain(Cfr(GRID, np.full(200, 0.5)))
    assert g == 0.25 and to_db(g) == pytest.approx(-6.0206, abs=1e-4)
    h = np.concatenate([np.zeros(10), np.ones(190)])
    assert channel_gain(Cfr(GRID, h), band=(2e6, 40e6)) == 1.0


def test_noise_psd():
    assert noise_psd(1e6) == pytest.approx(35.0, abs=1e-12)
    assert noise_psd(10 ** 7.75, delta_f=10 ** 7.75) == pytest.approx(0.0, abs=1e-12)
    assert noise_psd(2e6) - noise_psd(4e6) == pytest.approx(20 * math.log10(2))
    with pytest.raises(ValueError):
        noise_psd(0.0)
    with pytest.raises(ValueError):
        noise_psd(250e3)


def test_sinr():
    assert sinr(1, 1, 0, 1) == 1
    assert sinr(10 ** -3.436, 3.162e-12, 0, 0.13) == pytest.approx(8.9e-15, rel=0.01)
    assert sinr(2, 3, 1, 1) == 3
    with pytest.raises(ValueError):
        sinr(1, 1, 0, 0)


def test_ber():
    assert ber_bpsk(0) == 0.5
    assert ber_bpsk(1) == pytest.approx(q_quad(2.0), abs=1e-12)
    assert ber_bpsk(1) == pytest.approx(0.022750, abs=1e-6)
    assert ber_bpsk(1, QMode.ERFC) == pytest.approx(math.erfc(2.0))
    assert ber_bpsk(0.25, "erfc") == pytest.approx(math.erfc(1.0))
    with pytest.raises(ValueError):
        ber_bpsk(-1)


@pytest.mark.parametrize("x", [0.0, 0.3, 1.0, 2.5, 4.0, 6.0])
def test_q_function_matches_quadrature(x):
    assert q_function(x) == pytest.approx(q_quad(x), rel=1e-9, abs=1e-15)


def test_pdr_modes():
    assert pdr_plc(0.0) == 1.0 and pdr_plc(0.0, mode="packet") == 1.0
    assert pdr_plc(0.022750, 136) == pytest.approx(math.exp(136 * math.log1p(-0.022750)), rel=1e-12)
    assert pdr_plc(0.022750, 136) == pytest.approx(0.0435, abs=5e-4)
    assert pdr_plc(0.1, 10, PdrMode.PACKET) == pytest.approx(1 - 1e-10)
    ber = optimize.brentq(lambda b: pdr_plc(b, 136) - 0.938, 0, 0.01)
    assert ber == pytest.approx(4.70e-4, rel=0.01)
    with pytest.raises(ValueError):
        pdr_plc(1.2)


@settings(max_examples=50, deadline=None)
@given(b1=st.floats(0, 1), b2=st.floats(0, 1), n1=st.integers(1, 300), n2=st.integers(1, 300))
def test_pdr_monotone(b1, b2, n1, n2):
    lo, hi = sorted((b1, b2))
    assert pdr_plc(hi, n1) <= pdr_plc(lo, n1)
    a, b = sorted((n1, n2))
    assert pdr_plc(b1, b) <= pdr_plc(b1, a)


def test_fit_lognormal():
    f = fit_lognormal([3.0, 3.0, 3.0])
    assert f.mu == pytest.approx(math.log(3)) and f.sigma == 0.0
    f = fit_lognormal([math.e, math.e ** 3])
    assert f.mu == pytest.approx(2.0) and f.sigma == pytest.approx(1.0)
    x = np.random.default_rng(0).lognormal(0, 1, 100_000)
    f = fit_lognormal(x)
    assert abs(f.mu) < 0.02 and abs(f.sigma - 1) < 0.02
    with pytest.raises(ValueError):
        fit_lognormal([1.0, 0.0])
    with pytest.raises(ValueError):
        fit_lognormal([1.0])


def test_synth_cfr():
    one = synth_cfr(1, 0.0)
    assert np.allclose(one.values, 1.0)
    two = synth_cfr(2, 0, delays=[0, 40 * 25e-9], gains=[1, 1])
    cir = cir_from_cfr(two)
    assert rms_delay_spread(power_delay_profile(cir), cir.tap_spacing) == pytest.approx(20 * 25e-9, rel=1e-9)
    a, b = synth_cfr(8, 1e-6, seed=3), synth_cfr(8, 1e-6, seed=3)
    assert np.array_equal(a.values, b.values)
    with pytest.raises(ValueError):
        synth_cfr(0, 1e-6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000), scale=st.floats(0.01, 100), shift=st.integers(0, 50))
def test_spread_invariances(seed, scale, shift):
    cfr = synth_cfr(6, 1e-6, seed=seed)
    cir = cir_from_cfr(cfr)
    base = rms_delay_spread(power_delay_profile(cir), cir.tap_spacing)
    scaled = Cir(cir.taps * scale, cir.tap_spacing)
    assert rms_delay_spread(power_delay_profile(scaled), cir.tap_spacing) == pytest.approx(base, rel=1e-9)
    shifted = Cir(np.concatenate([np.zeros(shift), cir.taps]), cir.tap_spacing)
    assert rms_delay_spread(power_delay_profile(shifted), cir.tap_spacing) == pytest.approx(base, rel=1e-9)
    assert channel_gain(Cfr(cfr.freqs, cfr.values * scale)) == pytest.approx(scale ** 2 * channel_gain(cfr))


def test_csv_roundtrip(tmp_path):
    cfr = synth_cfr(5, 1e-6, seed=1)
    p = tmp_path / "c.csv"
    write_cfr_csv(cfr, p)
    back = read_cfr_csv(p)
    assert np.array_equal(back.freqs, cfr.freqs) and np.array_equal(back.values, cfr.values)
    p.write_text("f,re,im\n1,2,3\n")
    with pytest.raises(ValueError):
        read_cfr_csv(p)
    p.write_text("freq_hz,re,im\n1,x,3\n")
    with pytest.raises(ValueError):
        read_cfr_csv(p)


@pytest.mark.parametrize("name,target", [("switching", 10.8e-3), ("resistive", 6e-3)])
def test_spread_fixtures(name, target):
    cfr = read_cfr_csv(FIXTURES[name])
    meta = fixture_metadata(FIXTURES[name])
    assert meta["target_tau_rms_s"] == target
    link = analyze_link(cfr)
    assert link.tau_rms == pytest.approx(target, rel=1e-9)


def test_gain_fixture():
    link = analyze_link(read_cfr_csv(FIXTURES["measured"]))
    assert link.gain_db == pytest.approx(-34.36, abs=0.05)
    # reference operating point: vanishing SINR, so BER sits at one half
    assert link.sinr == pytest.approx(8.9e-15, rel=0.01)
    assert link.ber == pytest.approx(0.5, abs=1e-6)
    assert 0 <= link.pdr <= 1
