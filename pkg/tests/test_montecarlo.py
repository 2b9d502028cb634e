import logging

import numpy as np
import pytest
from scipy.signal import fftconvolve

from fbmc_tdce.errors import ConfigError
from fbmc_tdce.filterbank import FbmcConfig, analyze, apply_channel, complex_noise, preamble_grid, synthesize, analysis_matrix
from fbmc_tdce.montecarlo import (ChannelProfile, cpofdm_power, default_design_length, fbmc_power,
                                  gen_channel, power_normalize, run_sweep)
from fbmc_tdce.preamble import cpofdm_time_signal, design_cpofdm, design_full_optimal, design_iamc, design_sparse_optimal
from fbmc_tdce.sysmodel import system_model

from conftest import crandn


def test_profiles():
    for p in (ChannelProfile.exponential(6), ChannelProfile.uniform(16), ChannelProfile([2.0, 2.0])):
        assert p.powers.sum() == pytest.approx(1.0)
    low = ChannelProfile.preset("low")
    assert low.Lh == 6
    assert low.powers[1] / low.powers[0] == pytest.approx(10 ** -0.3)
    assert ChannelProfile.preset("high").Lh == 16
    flat = ChannelProfile.preset("flat")
    assert not flat.fading and flat.Lh == 1
    with pytest.raises(ConfigError):
        ChannelProfile.preset("medium")
    with pytest.raises(ConfigError):
        ChannelProfile([-1.0, 2.0])


def test_channel_statistics():
    prof = ChannelProfile.exponential(6)
    r = np.random.default_rng(0)
    h = np.array([gen_channel(prof, r, 64).h for _ in range(100000)])
    emp = np.mean(np.abs(h) ** 2, axis=0)
    assert np.all(np.abs(emp / prof.powers - 1) < 0.02)
    a = gen_channel(prof, np.random.default_rng(5), 64).h
    b = gen_channel(prof, np.random.default_rng(5), 64).h
    assert np.array_equal(a, b)
    assert np.array_equal(gen_channel(ChannelProfile.preset("flat"), r, 8).H, np.ones(8))


def test_default_design_length():
    assert default_design_length(64, 6) == 8
    assert default_design_length(64, 16) == 16
    assert default_design_length(48, 5) == 6
    assert default_design_length(64, 1) == 1


def test_power_normalize(sys64):
    specs = [design_full_optimal(sys64, 1.0), design_iamc(64, sys64.constants.beta, 3.0),
             design_sparse_optimal(64, 8, 0.5), design_cpofdm(64, 2.0)]
    out = power_normalize(specs, 0.7, sys=sys64, cp=5)
    for (s, rho), orig in zip(out, specs):
        p = cpofdm_power(s, 5) if s.kind.startswith("cpofdm") else fbmc_power(sys64, s)
        assert p == pytest.approx(0.7, rel=1e-6)
        p0 = cpofdm_power(orig, 5) if orig.kind.startswith("cpofdm") else fbmc_power(sys64, orig)
        assert p == pytest.approx(rho ** 2 * p0, rel=1e-12)
    # already normalized: identity
    again = power_normalize([s for s, _ in out], 0.7, sys=sys64, cp=5)
    assert all(r == pytest.approx(1.0) for _, r in again)
    with pytest.raises(ConfigError):
        power_normalize([specs[0]], 1.0)


def test_fbmc_power_matches_waveform(sys64):
    spec = design_full_optimal(sys64, 2.0)
    s = synthesize(sys64.config, preamble_grid(sys64.config, spec.d))
    assert fbmc_power(sys64, spec) == pytest.approx(np.sum(np.abs(s) ** 2) / 64, rel=1e-9)
    x = cpofdm_time_signal(design_cpofdm(64, 2.0), 3)
    assert x.size == 67


def test_literal_chain_matches_model(cfg64, rng):
    """Waveform-level SFB -> channel -> AFB equals Gamma h + A_1 w on the q=1 output."""
    sysm = system_model(cfg64, 8)
    d = design_full_optimal(sysm, 1.0).d
    h = crandn(rng, 8)
    s = synthesize(cfg64, preamble_grid(cfg64, d))
    r = apply_channel(s, h)
    w = crandn(rng, r.size)
    y = analyze(cfg64, r + w)[:, 1]
    A1 = analysis_matrix(cfg64, 1)
    start = cfg64.half
    model = sysm.with_preamble(d).Gamma @ h + A1 @ w[start:start + cfg64.Lg]
    assert np.max(np.abs(y - model)) < 1e-12


def test_cpofdm_literal_chain(rng):
    M, cp = 32, 3
    spec = design_cpofdm(M, 1.0)
    h = crandn(rng, 4)
    x = cpofdm_time_signal(spec, cp)
    rx = fftconvolve(x, h)[cp:cp + M]
    Y = np.fft.fft(rx, norm="ortho")
    assert np.allclose(Y, spec.d * np.fft.fft(h, M))


def test_sweep_empty_and_warning(cfg16, caplog):
    prof = ChannelProfile.preset("low")
    res = run_sweep(cfg16, ["td"], prof, [0, 10], 0)
    assert res.rows() == [] and res.trials == 0
    with caplog.at_level(logging.WARNING, logger="fbmc_tdce.montecarlo"):
        res = run_sweep(cfg16, ["td"], prof, [10], 20)
    assert "trials" in caplog.text
    assert "warning" in res.metadata
    with pytest.raises(ConfigError):
        run_sweep(cfg16, ["nope"], prof, [0], 10)
    with pytest.raises(ConfigError):
        run_sweep(cfg16, ["td"], prof, [0], 10, snr_mode="other")


def test_sweep_reproducible(cfg16, tmp_path):
    prof = ChannelProfile.preset("low")
    kw = dict(methods=["td", "iamc", "cpofdm"], profile=prof, snr_db=[0, 20], trials=150, seed=7)
    a = run_sweep(cfg16, **kw).to_csv(tmp_path / "a.csv")
    b = run_sweep(cfg16, **kw).to_csv(tmp_path / "b.csv")
    c = run_sweep(cfg16, chunk=37, **kw).to_csv(tmp_path / "c.csv")
    assert a.read_bytes() == b.read_bytes()
    ra = np.loadtxt(a, delimiter=",", skiprows=1, usecols=(2,))
    rc = np.loadtxt(c, delimiter=",", skiprows=1, usecols=(2,))
    assert np.allclose(ra, rc, rtol=1e-12)
    d = run_sweep(cfg16, **{**kw, "seed": 8}).to_csv(tmp_path / "d.csv")
    assert a.read_bytes() != d.read_bytes()


def test_td_monotonic_and_high_snr(cfg64):
    prof = ChannelProfile.preset("low")
    res = run_sweep(cfg64, ["td", "iamc"], prof, [0, 10, 20, 30, 200], 200, seed=1)
    td = res.series("td")
    assert np.all(np.diff(td) < 0)
    assert td[-1] < 1e-12
    # the flat-subchannel method keeps a model-error floor
    assert res.series("iamc")[-1] > 1e-6


def test_flat_channel_matches_closed_forms(cfg64):
    sysm = system_model(cfg64, 1)
    beta = sysm.constants.beta
    res = run_sweep(cfg64, ["td", "iamc", "cpofdm"], ChannelProfile.preset("flat"), [10, 20],
                    2000, seed=3, snr_mode="subcarrier")
    snr = 10.0 ** (np.array([10, 20]) / 10)
    # frequency-domain NMSE with |H|^2 = 1 per tone: divide trace by M
    iam_pred = 64 / (1 + 2 * beta) / snr / 64
    cp_pred = 64 / snr / 64
    td_spec = design_full_optimal(sysm, 1.0)
    # sigma^2/E in time, M sigma^2/E in frequency; E/M per tone
    td_pred = 1 / (64 * snr)
    for got, pred in ((res.series("iamc"), iam_pred), (res.series("cpofdm"), cp_pred),
                      (res.series("td"), td_pred)):
        assert np.all(np.abs(10 * np.log10(got / pred)) < 1.0), (got, pred)
    assert td_spec.m_opt == 0
