"""Channel generation, noise statistics and NMSE sweeps.

Signal path used by :func:`run_sweep` for every FBMC preamble::

    y_{:,1} = Gamma_true h + A_1 w

``Gamma_true`` is the exact delay-block response for the true channel
length (identical to running synthesize -> convolve -> analyze, see the
test-suite), ``A_1`` the AFB row operator for ``q=1`` and ``w`` white
complex noise on the ``Lg`` received samples that ``y_{:,1}`` depends on.
CP-OFDM symbols go through a literal CP insertion, linear convolution, CP
removal and FFT.

Per-trial randomness comes from ``numpy.random.default_rng([seed, trial])``
so results do not depend on chunking or on the order in which trials run.
All methods within a trial share the channel draw, and all FBMC (resp.
CP-OFDM) methods share the noise draw.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .errors import ConfigError
from .estimators import (ChannelRealization, GaussMarkov, blue_smooth, cfr, cpofdm_estimate,
                         dft_interpolate, iam_estimate, nmse, sparse_flat_estimate,
                         td_estimate_sparse)
from .filterbank import FbmcConfig, analysis_matrix, complex_noise
from .preamble import (PreambleSpec, cpofdm_time_signal, design_cpofdm, design_full_optimal,
                       design_iamc, design_sparse_optimal, sfb_energy)
from .sysmodel import system_model

log = logging.getLogger(__name__)

METHODS = ("td", "iamc", "iamc-td", "iamc-blue", "iamc-plain", "cpofdm", "cpofdm-td",
           "sparse-td", "sparse-iam", "sparse-cpofdm")
MIN_TRIALS = 100


# ---------------------------------------------------------------------------
# channels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelProfile:
    """Power-delay profile with unit total average power.

    With ``fading`` the taps are circular complex Gaussian with variances
    ``powers``; without it every draw is the fixed channel ``sqrt(powers)``.
    A single Rayleigh tap makes ``E[1/||H||^2]`` infinite, so the flat preset
    does not fade.
    """

    powers: np.ndarray
    label: str = "custom"
    fading: bool = True

    def __post_init__(self):
        p = np.array(self.powers, dtype=float)
        if p.ndim != 1 or p.size < 1 or np.any(p < 0) or p.sum() <= 0:
            raise ConfigError("power-delay profile must be a non-empty, non-negative vector")
        p = p / p.sum()
        p.setflags(write=False)
        object.__setattr__(self, "powers", p)

    @property
    def Lh(self) -> int:
        return self.powers.size

    @classmethod
    def exponential(cls, Lh: int, decay_db: float = 3.0, label="exponential"):
        return cls(10.0 ** (-decay_db * np.arange(Lh) / 10.0), label)

    @classmethod
    def uniform(cls, Lh: int, label="uniform"):
        return cls(np.ones(Lh), label)

    @classmethod
    def preset(cls, name: str) -> "ChannelProfile":
        """``low`` (6 taps, 3 dB/tap), ``high`` (16 equal taps) or ``flat`` (one tap)."""
        if name == "low":
            return cls.exponential(6, 3.0, "low")
        if name == "high":
            return cls.uniform(16, "high")
        if name == "flat":
            return cls(np.ones(1), "flat", fading=False)
        raise ConfigError(f"unknown channel profile {name!r}; use low, high or flat")


def gen_channel(profile: ChannelProfile, rng, M: int) -> ChannelRealization:
    if not profile.fading:
        return ChannelRealization(np.sqrt(profile.powers), M)
    return ChannelRealization(complex_noise(rng, profile.Lh) * np.sqrt(profile.powers), M)


# ---------------------------------------------------------------------------
# noise statistics
# ---------------------------------------------------------------------------

def afb_noise_operator(config: FbmcConfig, symbols=(1,)) -> tuple[np.ndarray, int]:
    """Stacked AFB rows for ``symbols`` over their joint sample window.

    Returns the operator and the first sample index of the window.
    """
    start = min(symbols) * config.half
    stop = max(symbols) * config.half + config.Lg
    A = np.zeros((config.M * len(symbols), stop - start), dtype=complex)
    for i, q in enumerate(symbols):
        off = q * config.half - start
        A[i * config.M:(i + 1) * config.M, off:off + config.Lg] = analysis_matrix(config, q)
    return A, start


def sample_noise_covariance(config: FbmcConfig, trials: int, sigma2: float = 1.0, seed=0,
                            symbols=(1,), chunk: int = 10000) -> np.ndarray:
    """Sample covariance of the AFB output when the input is white noise only."""
    A, _ = afb_noise_operator(config, symbols)
    rng = np.random.default_rng(seed)
    n = A.shape[0]
    acc = np.zeros((n, n), dtype=complex)
    done = 0
    while done < trials:
        t = min(chunk, trials - done)
        eta = complex_noise(rng, (A.shape[1], t), sigma2)
        Y = A @ eta
        acc += Y @ Y.conj().T
        done += t
    return acc / trials


def covariance_zscores(C_hat, C_model, trials: int) -> np.ndarray:
    """``|C_hat - C| / se`` with ``se = sqrt(C_pp C_mm / N)`` (circular Gaussian)."""
    d = np.real(np.diag(C_model))
    se = np.sqrt(np.outer(d, d) / trials)
    return np.abs(C_hat - C_model) / se


# ---------------------------------------------------------------------------
# power accounting
# ---------------------------------------------------------------------------

def fbmc_power(sys, spec: PreambleSpec) -> float:
    """SFB-output energy spread over one FBMC symbol period of ``M`` samples."""
    return sfb_energy(sys, spec) / spec.M


def cpofdm_power(spec: PreambleSpec, cp: int) -> float:
    x = cpofdm_time_signal(spec, cp)
    return float(np.real(np.vdot(x, x))) / x.size


def power_normalize(specs, reference_power: float, sys=None, cp: int = 0):
    """Scale each preamble so its average transmit power equals ``reference_power``.

    FBMC preambles use :func:`fbmc_power` (needs ``sys``), CP-OFDM preambles
    :func:`cpofdm_power` with a ``cp``-sample prefix.

    Returns
    -------
    list of (PreambleSpec, float)
        Scaled specs with their amplitude factors.
    """
    out = []
    for spec in specs:
        if spec.kind.startswith("cpofdm"):
            p = cpofdm_power(spec, cp)
        else:
            if sys is None:
                raise ConfigError("FBMC preambles need system matrices for power accounting")
            p = fbmc_power(sys, spec)
        if p <= 0:
            raise ConfigError(f"{spec.kind} preamble has zero energy")
        rho = float(np.sqrt(reference_power / p))
        out.append((spec.scaled(rho) if rho != 1.0 else spec, rho))
    return out


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepResult:
    """Mean NMSE and its standard error for each (method, SNR)."""

    methods: tuple
    snr_db: np.ndarray
    nmse_mean: np.ndarray
    nmse_stderr: np.ndarray
    trials: int
    metadata: dict = field(default_factory=dict)

    def series(self, method: str) -> np.ndarray:
        return self.nmse_mean[self.methods.index(method)]

    def series_db(self, method: str) -> np.ndarray:
        return 10.0 * np.log10(self.series(method))

    def rows(self):
        if self.trials == 0:
            return []
        return [(m, float(s), float(self.nmse_mean[i, j]), float(self.nmse_stderr[i, j]),
                 self.trials)
                for i, m in enumerate(self.methods) for j, s in enumerate(self.snr_db)]

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w") as fh:
            fh.write("method,snr_db,nmse_mean,nmse_stderr,trials\n")
            for m, s, mu, se, n in self.rows():
                fh.write(f"{m},{s!r},{mu!r},{se!r},{n}\n")
        return path

    def write_metadata(self, path) -> Path:
        path = Path(path)
        with path.open("w") as fh:
            for k, v in self.metadata.items():
                fh.write(f"{k}={v}\n")
        return path


def default_design_length(M: int, Lh_true: int) -> int:
    """Smallest divisor of ``M`` not below the true channel length."""
    for q in range(Lh_true, M + 1):
        if M % q == 0:
            return q
    return M


def run_sweep(config: FbmcConfig, methods, profile: ChannelProfile, snr_db, trials: int,
              seed: int = 0, Lh_design: int | None = None, snr_mode: str = "transmit",
              chunk: int = 500) -> SweepResult:
    """Monte-Carlo NMSE for each method and SNR.

    Parameters
    ----------
    snr_mode : {"transmit", "subcarrier"}
        ``transmit``: all preambles are scaled to unit average transmit power
        and ``SNR = 1 / sigma^2``.  ``subcarrier``: same preambles, but the
        noise variance of each transmission is chosen so that its
        per-subcarrier SNR (pilot energy per active tone over ``sigma^2``)
        equals the grid value.
    """
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; available: {', '.join(METHODS)}")
    if snr_mode not in ("transmit", "subcarrier"):
        raise ConfigError(f"unknown snr_mode {snr_mode!r}")
    if trials < 0:
        raise ConfigError("trials must be non-negative")
    snr_db = np.asarray(snr_db, dtype=float).ravel()
    M = config.M
    Lt = profile.Lh
    if Lt > M:
        raise ConfigError(f"channel length {Lt} exceeds M={M}")
    Ld = default_design_length(M, Lt) if Lh_design is None else int(Lh_design)
    if not 1 <= Ld <= M:
        raise ConfigError(f"design channel length must lie in [1, {M}], got {Ld}")
    cp = Lt - 1

    meta = {
        "M": M, "K": config.K, "Lg": config.Lg, "Lh_true": Lt, "Lh_design": Ld,
        "profile": profile.label, "fading": profile.fading, "profile_powers": " ".join(f"{p:.6g}" for p in profile.powers),
        "cp_length": cp, "trials": trials, "seed": seed, "snr_mode": snr_mode,
        "snr_definition": ("transmit power / sigma^2; every preamble has unit average power "
                           "(FBMC: SFB energy / M samples, CP-OFDM: energy / (M + cp))"
                           if snr_mode == "transmit" else
                           "pilot energy per active subcarrier / sigma^2"),
        "methods": ",".join(methods),
    }
    warn = []
    if 0 < trials < MIN_TRIALS:
        warn.append(f"only {trials} trials per point (< {MIN_TRIALS}); statistics are rough")
    if warn:
        meta["warning"] = "; ".join(warn)
        for w in warn:
            log.warning(w)
    if trials == 0:
        empty = np.zeros((len(methods), snr_db.size))
        return SweepResult(methods, snr_db, empty, empty.copy(), 0, meta)

    sys_d = system_model(config, Ld)
    sys_t = system_model(config, Lt, constants=sys_d.constants)
    beta = sys_d.constants.beta
    need = set(methods)
    tx = {}
    if "td" in need:
        tx["full"] = design_full_optimal(sys_d, 1.0)
    if need & {"iamc", "iamc-td", "iamc-blue", "iamc-plain"}:
        tx["iamc"] = design_iamc(M, beta, 1.0)
    if need & {"sparse-td", "sparse-iam"}:
        tx["sparse"] = design_sparse_optimal(M, Ld, 1.0)
    if need & {"cpofdm", "cpofdm-td"}:
        tx["cpofdm"] = design_cpofdm(M, 1.0, "full")
    if "sparse-cpofdm" in need:
        tx["cpofdm-sparse"] = design_cpofdm(M, 1.0, "sparse", Lh=Ld)
    scaled = power_normalize(list(tx.values()), 1.0, sys=sys_d, cp=cp)
    tx = {k: s for k, (s, _) in zip(tx, scaled)}
    for k, (s, rho) in zip(list(tx), scaled):
        meta[f"scale_{k}"] = repr(rho)
        meta[f"energy_{k}"] = repr(s.energy)

    # per-transmission noise variance for a unit SNR
    def per_tone_energy(spec):
        n_active = spec.pilots.size if spec.pilots is not None else M
        if spec.kind.startswith("cpofdm"):
            return spec.energy / n_active
        return sfb_energy(sys_d, spec) / n_active

    noise_unit = {k: (1.0 if snr_mode == "transmit" else per_tone_energy(s)) for k, s in tx.items()}
    A1 = analysis_matrix(config, 1)
    Gam_true = {k: sys_t.with_preamble(s.d).Gamma for k, s in tx.items()
                if not k.startswith("cpofdm")}
    est = {}
    if "full" in tx:
        est["td"] = GaussMarkov(sys_d.with_preamble(tx["full"].d).Gamma, sys_d.B)
    if "iamc" in tx:
        c_iam = sys_d.B @ tx["iamc"].d
    x_cp = {k: cpofdm_time_signal(s, cp) for k, s in tx.items() if k.startswith("cpofdm")}

    sig2 = 10.0 ** (-snr_db / 10.0)
    vals = np.empty((len(methods), snr_db.size, trials))
    for t0 in range(0, trials, chunk):
        idx = range(t0, min(trials, t0 + chunk))
        T = len(idx)
        h = np.empty((Lt, T), dtype=complex)
        w = np.empty((config.Lg, T), dtype=complex)
        n = np.empty((M, T), dtype=complex)
        for j, t in enumerate(idx):
            rng = np.random.default_rng([seed, t])
            h[:, j] = gen_channel(profile, rng, M).h
            w[:, j] = complex_noise(rng, config.Lg)
            n[:, j] = complex_noise(rng, M)
        H = cfr(h, M)
        Yn = A1 @ w
        obs = {}
        for k in tx:
            if k.startswith("cpofdm"):
                rx = fftconvolve(x_cp[k][:, None], h, axes=0)[cp:cp + M]
                obs[k] = (np.fft.fft(rx, axis=0, norm="ortho"), np.fft.fft(n, axis=0, norm="ortho"))
            else:
                obs[k] = (Gam_true[k] @ h, Yn)
        for si, s2 in enumerate(sig2):
            Y = {k: sig + np.sqrt(s2 * noise_unit[k]) * nz for k, (sig, nz) in obs.items()}
            for mi, m in enumerate(methods):
                vals[mi, si, t0:t0 + T] = nmse(H, _estimate(m, Y, tx, est, sys_d, Ld, M,
                                                            c_iam if "iamc" in tx else None, beta))
    mean = vals.mean(axis=2)
    stderr = vals.std(axis=2, ddof=1) / np.sqrt(trials) if trials > 1 else np.full(mean.shape, np.nan)
    return SweepResult(methods, snr_db, mean, stderr, trials, meta)


def _estimate(method, Y, tx, est, sys_d, Ld, M, c_iam, beta):
    if method == "td":
        return cfr(est["td"](Y["full"]), M)
    if method.startswith("iamc"):
        Hi = iam_estimate(c_iam, Y["iamc"])
        if method == "iamc":
            return Hi
        if method == "iamc-td":
            return dft_interpolate(Hi, Ld)
        return blue_smooth(Hi, c_iam, beta, "blue" if method == "iamc-blue" else "plain")
    if method in ("sparse-td", "sparse-iam"):
        sp = tx["sparse"]
        yP = Y["sparse"][sp.pilots]
        if method == "sparse-td":
            return cfr(td_estimate_sparse(sp.d[sp.pilots], sys_d.alpha, yP, sp.pilots, M), M)
        return sparse_flat_estimate(sp.d[sp.pilots], yP, sp.pilots, M)
    if method == "cpofdm":
        return cpofdm_estimate(tx["cpofdm"].d, Y["cpofdm"], Ld, "freq")
    if method == "cpofdm-td":
        return cpofdm_estimate(tx["cpofdm"].d, Y["cpofdm"], Ld, "time")
    if method == "sparse-cpofdm":
        sp = tx["cpofdm-sparse"]
        return sparse_flat_estimate(sp.d[sp.pilots], Y["cpofdm-sparse"][sp.pilots], sp.pilots, M)
    raise ConfigError(f"unknown method {method!r}")
