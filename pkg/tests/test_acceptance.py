"""Exit criteria.  Each test records one PASS/FAIL line shown in the terminal summary."""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, crandn
from fbmc_tdce.estimators import (GaussMarkov, cfr, iam_estimate, sparse_flat_estimate,
                                  td_estimate, td_estimate_sparse, td_estimate_two_symbol)
from fbmc_tdce.filterbank import FbmcConfig, analysis_matrix, complex_noise, transmux_response
from fbmc_tdce.montecarlo import (ChannelProfile, afb_noise_operator, covariance_zscores,
                                  run_sweep, sample_noise_covariance)
from fbmc_tdce.preamble import (design_full_optimal, design_iamc, design_sparse_optimal,
                                predicted_mse_full, predicted_mse_iamc, predicted_mse_sparse)
from fbmc_tdce.sysmodel import (build_B, build_two_symbol, circulant_deviation, decompose_Cbar,
                                dft_matrix, modulation_matrix, shift_matrix, sparse_core_deviation,
                                system_model, whiten)

MC_TRIALS = 10000


def record(n, ok, text):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {text}"
    ACCEPTANCE[n] = line
    print(line)
    return ok


def db(x):
    return 10 * np.log10(x)


def noisy_obs(config, Gamma, h, sigma2, trials, seed):
    """``Gamma h + A_1 w`` with white time-domain noise of variance ``sigma2``."""
    r = np.random.default_rng(seed)
    A1 = analysis_matrix(config, 1)
    return (Gamma @ h)[:, None] + A1 @ complex_noise(r, (A1.shape[1], trials), sigma2)


# 1 --------------------------------------------------------------------------

def test_c01_oracle_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    r = np.random.default_rng(101)
    for M, Lh in ((16, 16), (64, 64)):
        cfg = FbmcConfig(M, 3)
        d = crandn(r, M)
        G = system_model(cfg, Lh).with_preamble(d).Gamma
        worst = max(worst, max(np.max(np.abs(transmux_response(cfg, k, d) - G[:, k]))
                               for k in range(Lh)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and dt < 30
    record(1, ok, f"Gamma vs filter-bank chain, M in {{16,64}}, all lags: max err {worst:.2e} "
                  f"(tol 1e-9), {dt:.1f} s")
    assert ok


# 2 --------------------------------------------------------------------------

def test_c02_structural_identities():
    res = {"G0=B": 0.0, "circ": 0.0, "GkP": 0.0, "FW": 0.0, "Bbar": 0.0}
    r = np.random.default_rng(202)
    gkp = {}
    for M, Lh in ((8, 4), (64, 8)):
        cfg = FbmcConfig(M, 3)
        s = system_model(cfg, Lh)
        res["G0=B"] = max(res["G0=B"], np.max(np.abs(s.blocks[0] - build_B(M, s.constants))))
        res["circ"] = max(res["circ"], max(circulant_deviation(c) for c in s.cores))
        gkp[M] = sparse_core_deviation(s, (M // Lh) * np.arange(Lh))
        res["GkP"] = max(res["GkP"], gkp[M])
        F = dft_matrix(M)
        res["FW"] = max(res["FW"], max(
            np.max(np.abs(F.conj().T @ modulation_matrix(M, k) - shift_matrix(M, k) @ F.conj().T))
            for k in range(Lh)))
        two = build_two_symbol(cfg, crandn(r, M), crandn(r, M), min(Lh, M // 2), single=s)
        res["Bbar"] = max(res["Bbar"], decompose_Cbar(two).residuals["reconstruction"])
    tol = {"G0=B": 1e-12, "circ": 1e-9, "GkP": 1e-9, "FW": 1e-12, "Bbar": 1e-10}
    failed = [k for k in tol if res[k] > tol[k]]
    text = ", ".join(f"{k} {res[k]:.1e}/{tol[k]:.0e}" for k in tol)
    if failed:
        text += (f"; exceeded: {','.join(failed)} (G_k|P leakage M=8: {gkp[8]:.1e}, "
                 f"M=64: {gkp[64]:.1e}; finite-prototype effect, see README)")
    record(2, not failed, "M in {8,64}: " + text)
    assert not failed


# 3 --------------------------------------------------------------------------

def test_c03_noise_covariance():
    cfg = FbmcConfig(16, 3)
    n = 100000
    s = system_model(cfg, 2)
    C1 = sample_noise_covariance(cfg, n, 1.0, seed=0)
    z1 = covariance_zscores(C1, s.B, n)[np.triu_indices(16)]
    two = build_two_symbol(cfg, np.ones(16), np.ones(16), 2, single=s)
    C2 = sample_noise_covariance(cfg, n, 1.0, seed=1, symbols=(1, 2))
    z2 = covariance_zscores(C2, two.Bbar, n)[np.triu_indices(32)]
    # exact model check independent of sampling: A A^H equals the models
    A1, _ = afb_noise_operator(cfg, (1,))
    A2, _ = afb_noise_operator(cfg, (1, 2))
    exact = max(np.max(np.abs(A1 @ A1.conj().T - s.B)), np.max(np.abs(A2 @ A2.conj().T - two.Bbar)))
    ok = z1.max() <= 3 and z2.max() <= 3
    record(3, ok, f"M=16, 1e5 draws: max z single {z1.max():.2f}, two-symbol {z2.max():.2f} "
                  f"(limit 3); |A A^H - model| {exact:.1e}")
    assert ok


# 4 --------------------------------------------------------------------------

def test_c04_sparse_closed_form(sys64):
    cfg, M, Lh, E = sys64.config, 64, 8, 1.0
    spec = design_sparse_optimal(M, Lh, E)
    P, dP = spec.pilots, spec.d[spec.pilots]
    Gam = sys64.with_preamble(spec.d).Gamma
    h = crandn(np.random.default_rng(4), Lh) / np.sqrt(2 * Lh)
    worst_t = worst_f = 0.0
    for snr_db in (0, 10, 20):
        sigma2 = (E / Lh) / 10 ** (snr_db / 10)
        Y = noisy_obs(cfg, Gam, h, sigma2, MC_TRIALS, 40 + snr_db)
        err = td_estimate_sparse(dP, sys64.alpha, Y[P], P, M) - h[:, None]
        mse_t = np.mean(np.sum(np.abs(err) ** 2, 0))
        mse_f = np.mean(np.sum(np.abs(cfr(err, M)) ** 2, 0))
        pred = predicted_mse_sparse(sys64.alpha, E, sigma2)
        worst_t = max(worst_t, abs(mse_t / pred - 1))
        worst_f = max(worst_f, abs(mse_f / (M * mse_t) - 1))
    ok = worst_t <= 0.05 and worst_f <= 0.02
    record(4, ok, f"sparse, M=64 Lh=8, SNR_sbc 0/10/20 dB: max rel dev {worst_t:.2%} (5%), "
                  f"MSE_f/(M MSE_t) dev {worst_f:.1e} (2%)")
    assert ok


# 5 --------------------------------------------------------------------------

def test_c05_full_closed_form(sys64):
    cfg, M, Lh, E = sys64.config, 64, 8, 1.0
    spec = design_full_optimal(sys64, E)
    s = sys64.with_preamble(spec.d)
    gm = GaussMarkov(s.Gamma, s.B)
    g = whiten(s).gram
    off = np.max(np.abs(g - np.diag(np.diag(g))))
    h = crandn(np.random.default_rng(5), Lh) / np.sqrt(2 * Lh)
    worst = 0.0
    for snr_db in (0, 10, 20):
        sigma2 = (E / M) / 10 ** (snr_db / 10)
        err = gm(noisy_obs(cfg, s.Gamma, h, sigma2, MC_TRIALS, 50 + snr_db)) - h[:, None]
        mse = np.mean(np.sum(np.abs(err) ** 2, 0))
        worst = max(worst, abs(mse / predicted_mse_full(sys64, spec.m_opt, E, sigma2) - 1))
    ok = worst <= 0.05 and off <= 1e-9 * E
    record(5, ok, f"full optimal (m_opt={spec.m_opt}), SNR_sbc 0/10/20 dB: max rel dev {worst:.2%} "
                  f"(5%); whitened Gram off-diagonal {off:.1e} (1e-9 E)")
    assert ok


# 6 --------------------------------------------------------------------------

def test_c06_flat_formulas(cfg64):
    M, E = 64, 1.0
    s = system_model(cfg64, 1)
    beta = s.constants.beta
    h = np.array([1.0 + 0j])
    d = design_iamc(M, beta, E).d
    c = s.B @ d
    sp = design_sparse_optimal(M, 1, E)
    P = sp.pilots
    dev_i = dev_s = 0.0
    for snr_db in (0, 10, 20):
        snr = 10 ** (snr_db / 10)
        sigma2 = (E / M) / snr
        Y = noisy_obs(cfg64, s.with_preamble(d).Gamma, h, sigma2, MC_TRIALS, 60 + snr_db)
        mse = np.mean(np.sum(np.abs(iam_estimate(c, Y) - 1) ** 2, 0))
        dev_i = max(dev_i, abs(mse / ((M / (1 + 2 * beta)) / snr) - 1))
        assert predicted_mse_iamc(M, beta, E, sigma2) == pytest.approx((M / (1 + 2 * beta)) / snr)
        sigma2 = E / snr  # one pilot carries all of E
        Y = noisy_obs(cfg64, s.with_preamble(sp.d).Gamma, h, sigma2, MC_TRIALS, 70 + snr_db)
        mse = np.mean(np.sum(np.abs(sparse_flat_estimate(sp.d[P], Y[P], P, M) - 1) ** 2, 0))
        dev_s = max(dev_s, abs(mse / (M / snr) - 1))
    ok = dev_i <= 0.05 and dev_s <= 0.05
    record(6, ok, f"Lh=1, SNR_sbc 0/10/20 dB: IAM-C rel dev {dev_i:.2%}, sparse flat rel dev "
                  f"{dev_s:.2%} (5%); beta={beta:.6f}")
    assert ok


# 7 --------------------------------------------------------------------------

@pytest.mark.slow
def test_c07_time_vs_frequency_gain(cfg64):
    res = run_sweep(cfg64, ["cpofdm", "cpofdm-td", "iamc", "iamc-td"], ChannelProfile.preset("low"),
                    [20], 2000, seed=7, Lh_design=8, snr_mode="subcarrier")
    beta = system_model(cfg64, 1).constants.beta
    target = db(64 / 8)
    g_cp = float(res.series_db("cpofdm")[0] - res.series_db("cpofdm-td")[0])
    g_iam = float(res.series_db("iamc")[0] - res.series_db("iamc-td")[0])
    target_iam = target - db(1 + 2 * beta)
    ok = abs(g_cp - target) <= 1 and abs(g_iam - target_iam) <= 1
    record(7, ok, f"SNR 20 dB, M=64 Lh=8: CP-OFDM gain {g_cp:.2f} dB (target {target:.2f} +/- 1), "
                  f"IAM gain {g_iam:.2f} dB (target {target_iam:.2f} +/- 1)")
    assert ok


# 8 --------------------------------------------------------------------------

@pytest.mark.slow
def test_c08_error_floor(cfg64):
    t0 = time.perf_counter()
    res = run_sweep(cfg64, ["td", "iamc"], ChannelProfile.preset("high"), [40, 50], 2000, seed=8)
    dt = time.perf_counter() - t0
    iam, td = res.series_db("iamc"), res.series_db("td")
    d_iam, d_td, margin = abs(iam[1] - iam[0]), td[0] - td[1], iam[1] - td[1]
    ok = d_iam < 1 and d_td >= 8 and margin >= 10 and dt < 300
    record(8, ok, f"high selectivity, 40->50 dB: IAM-C change {d_iam:.2f} dB (<1), TD change "
                  f"{d_td:.2f} dB (>=8), TD margin at 50 dB {margin:.1f} dB (>=10), {dt:.1f} s")
    assert ok


# 9 --------------------------------------------------------------------------

def test_c09_exact_recovery(cfg64):
    r = np.random.default_rng(909)
    worst = 0.0
    for Lh in (1, 4, 8, 16):
        s = system_model(cfg64, Lh)
        d1 = design_full_optimal(s, 1.0).d
        h = crandn(r, Lh)
        s1 = s.with_preamble(d1)
        worst = max(worst, np.linalg.norm(td_estimate(s1, s1.Gamma @ h) - h) / np.linalg.norm(h))
        two = build_two_symbol(cfg64, d1, crandn(r, 64), Lh, single=s)
        est = td_estimate_two_symbol(two, two.GammaBar @ h)
        worst = max(worst, np.linalg.norm(est - h) / np.linalg.norm(h))
    ok = worst <= 1e-8
    record(9, ok, f"noiseless, M=64, Lh in {{1,4,8,16}}, single and two-symbol: max rel err "
                  f"{worst:.1e} (1e-8)")
    assert ok


# 10 -------------------------------------------------------------------------

@pytest.mark.slow
def test_c10_blue_smoothing(cfg64):
    snr = [0, 5, 10, 35, 40]
    res = run_sweep(cfg64, ["iamc", "iamc-blue"], ChannelProfile.preset("low"), snr, 2000, seed=10)
    gain = res.series_db("iamc") - res.series_db("iamc-blue")
    low, high = gain[:3], gain[3:]
    ok = np.all(low >= 2) and np.all(high < 0)
    record(10, ok, "low selectivity, BLUE gain (dB) at " + ", ".join(
        f"{s}:{g:+.2f}" for s, g in zip(snr, gain)) + " (>=2 at <=10 dB, <0 at >=35 dB)")
    assert ok
