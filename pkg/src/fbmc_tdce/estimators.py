"""Channel estimators operating on AFB (or FFT) outputs.

Every estimator accepts a single observation of shape ``(M,)`` or a batch of
shape ``(M, T)`` with one observation per column; all of them are linear in
the observation.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConfigError, EstimationError
from .sysmodel import CbarFactors, SystemMatrices, TwoSymbolMatrices, decompose_Cbar

log = logging.getLogger(__name__)

COND_LIMIT = 1e12


@dataclass(frozen=True)
class ChannelRealization:
    """CIR taps ``h`` and the CFR ``H = sqrt(M) F[:, :Lh] h`` on ``M`` tones."""

    h: np.ndarray
    M: int

    def __post_init__(self):
        h = np.atleast_1d(np.array(self.h, dtype=complex))
        if h.ndim != 1 or h.size < 1:
            raise ConfigError("channel taps must form a non-empty 1-D vector")
        if h.size > self.M:
            raise ConfigError(f"channel length {h.size} exceeds M={self.M}")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @property
    def Lh(self) -> int:
        return self.h.size

    @property
    def H(self) -> np.ndarray:
        return cfr(self.h, self.M)


def cfr(h, M: int) -> np.ndarray:
    """``H[m] = sum_k h[k] exp(-j 2 pi m k / M)``; batches along axis 0."""
    return np.fft.fft(h, n=M, axis=0)


@dataclass(frozen=True)
class EstimationResult:
    method: str
    h_hat: np.ndarray | None
    H_hat: np.ndarray

    def nmse(self, H) -> np.ndarray:
        return nmse(H, self.H_hat)


def nmse(H, H_hat) -> np.ndarray:
    """``||H - H_hat||^2 / ||H||^2`` along axis 0."""
    H = np.asarray(H)
    err = np.sum(np.abs(np.asarray(H_hat) - H) ** 2, axis=0)
    return err / np.sum(np.abs(H) ** 2, axis=0)


# ---------------------------------------------------------------------------
# Gauss-Markov (time domain)
# ---------------------------------------------------------------------------

class GaussMarkov:
    """Weighted LS estimator ``(Gamma^H B^-1 Gamma)^-1 Gamma^H B^-1`` for noise ``sigma^2 B``.

    The estimator matrix is formed once; applying it costs ``M * Lh``
    multiplications per observation.
    """

    def __init__(self, Gamma, B):
        Gamma = np.asarray(Gamma, dtype=complex)
        if Gamma.ndim != 2 or Gamma.shape[0] < Gamma.shape[1]:
            raise EstimationError(f"system matrix of shape {Gamma.shape} cannot have full column rank")
        try:
            cB = cho_factor(np.asarray(B, dtype=complex), lower=True)
        except np.linalg.LinAlgError as exc:
            raise EstimationError("noise covariance is not positive definite") from exc
        BiG = cho_solve(cB, Gamma)
        normal = Gamma.conj().T @ BiG
        normal = 0.5 * (normal + normal.conj().T)
        self._init_from_normal(normal, BiG.conj().T)

    def _init_from_normal(self, normal, rhs_op):
        cond = np.linalg.cond(normal)
        self.condition = float(cond)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise EstimationError(
                f"normal matrix is rank deficient (condition number {cond:.3e})")
        log.debug("Gauss-Markov normal matrix condition number %.3e", cond)
        cN = cho_factor(normal, lower=True)
        self.covariance = cho_solve(cN, np.eye(normal.shape[0]))
        self.matrix = cho_solve(cN, rhs_op)

    @classmethod
    def from_whitened(cls, Gamma_w):
        """Estimator for an already-whitened model (noise covariance ``sigma^2 I``)."""
        obj = cls.__new__(cls)
        Gamma_w = np.asarray(Gamma_w)
        obj._init_from_normal(Gamma_w.conj().T @ Gamma_w, Gamma_w.conj().T)
        return obj

    def __call__(self, y) -> np.ndarray:
        return self.matrix @ y

    def predicted_mse(self, sigma2: float) -> float:
        """``sigma^2 tr{(Gamma^H B^-1 Gamma)^-1}``."""
        return float(sigma2 * np.real(np.trace(self.covariance)))


def td_estimate(sys: SystemMatrices, y) -> np.ndarray:
    """Time-domain Gauss-Markov CIR estimate from the AFB output at ``q=1``."""
    if sys.Gamma is None:
        raise ConfigError("system matrices carry no preamble; call with_preamble(d) first")
    return GaussMarkov(sys.Gamma, sys.B)(y)


def sparse_gamma(pilots, d_P, alpha, M: int) -> np.ndarray:
    """``Gamma_P[i, k] = exp(-j 2 pi p_i k / M) alpha_k d_{p_i}``."""
    pilots = np.asarray(pilots)
    k = np.arange(np.size(alpha))
    ph = np.exp(-2j * np.pi * (np.outer(pilots, k) % M) / M)
    return ph * np.asarray(alpha)[None, :] * np.asarray(d_P)[:, None]


def is_equispaced(pilots, M: int) -> bool:
    pilots = np.asarray(pilots)
    n = pilots.size
    if n == 0 or M % n:
        return False
    return bool(np.all(pilots == pilots[0] + (M // n) * np.arange(n)))


def td_estimate_sparse(d_P, alpha, y_P, pilots, M: int) -> np.ndarray:
    """Sparse-preamble CIR estimate: divide by pilots, ``Lh``-point IDFT, divide by ``alpha``.

    Parameters
    ----------
    d_P : array_like
        Pilot values on ``pilots``.
    alpha : array_like
        Lag autocorrelations ``alpha_0..alpha_{Lh-1}`` of the prototype.
    y_P : array_like, shape (|P|,) or (|P|, T)
        AFB outputs on the pilot tones.
    pilots : array_like of int
    M : int

    Notes
    -----
    Non-equispaced pilot sets (or ``|P| != Lh``) use the generic solve of
    ``Gamma_P h = y_P`` and emit a warning.
    """
    d_P = np.asarray(d_P, dtype=complex)
    alpha = np.asarray(alpha, dtype=float)
    y_P = np.asarray(y_P)
    pilots = np.asarray(pilots)
    if np.any(d_P == 0):
        raise EstimationError("zero pilot value on a pilot tone")
    if np.any(alpha == 0):
        raise EstimationError("zero lag autocorrelation; tap not identifiable")
    Lh = alpha.size
    if pilots.size != Lh or not is_equispaced(pilots, M):
        warnings.warn("pilot set is not equispaced with |P| = Lh; using the generic solve",
                      stacklevel=2)
        G = sparse_gamma(pilots, d_P, alpha, M)
        sol, *_ = np.linalg.lstsq(G, y_P, rcond=None)
        return sol
    shape = (Lh,) + (1,) * (y_P.ndim - 1)
    H_alpha = y_P / d_P.reshape(shape)
    u = np.fft.ifft(H_alpha, axis=0)
    k = np.arange(Lh)
    rot = np.exp(2j * np.pi * ((pilots[0] * k) % M) / M) / alpha
    return u * rot.reshape(shape)


def td_estimate_two_symbol(two: TwoSymbolMatrices, ybar,
                           factors: CbarFactors | None = None) -> np.ndarray:
    """Gauss-Markov estimate from both pilot symbols, ``Bbar^-1`` applied through its eigen-factors."""
    if factors is None:
        factors = decompose_Cbar(two)
    if np.min(factors.L) <= 0:
        raise EstimationError("Bbar has a non-positive eigenvalue")
    Wt = factors.whitening()
    return GaussMarkov.from_whitened(Wt @ two.GammaBar)(Wt @ ybar)


# ---------------------------------------------------------------------------
# frequency domain
# ---------------------------------------------------------------------------

def _check_pilots(c, what="pseudo-pilot"):
    c = np.asarray(c)
    scale = np.max(np.abs(c)) if c.size else 0.0
    if scale == 0 or np.any(np.abs(c) <= 1e-14 * scale):
        raise EstimationError(f"zero {what} encountered")
    return c


def _col(v, like):
    return v.reshape((-1,) + (1,) * (np.ndim(like) - 1))


def iam_estimate(c, y) -> np.ndarray:
    """Flat-subchannel CFR estimate ``H_m = y_m / c_m``."""
    c = _check_pilots(c)
    return np.asarray(y) / _col(c, y)


def dft_interpolate(H_hat, Lh: int) -> np.ndarray:
    """Project a CFR estimate onto the span of length-``Lh`` channels."""
    H_hat = np.asarray(H_hat)
    M = H_hat.shape[0]
    if not 1 <= Lh <= M:
        raise ConfigError(f"Lh must lie in [1, {M}], got {Lh}")
    h = np.fft.ifft(H_hat, axis=0)[:Lh]
    return np.fft.fft(h, n=M, axis=0)


def blue_weights(c, beta: float, variant: str = "blue") -> np.ndarray:
    """Row ``m`` holds the weights applied to ``H_hat[m-1], H_hat[m], H_hat[m+1]`` (circular)."""
    c = np.asarray(c, dtype=complex)
    M = c.size
    if M < 3:
        raise ConfigError("BLUE smoothing needs at least 3 subcarriers")
    if variant == "blue":
        B3 = np.array([[1, 1j * beta, 0], [-1j * beta, 1, 1j * beta], [0, -1j * beta, 1]])
        B3inv = np.linalg.inv(B3)
    elif variant == "plain":
        B3inv = np.eye(3)
    else:
        raise ConfigError(f"unknown smoothing variant {variant!r}; use 'blue' or 'plain'")
    m = np.arange(M)
    cw = np.stack([c[(m - 1) % M], c, c[(m + 1) % M]], axis=1)
    r = cw.conj() @ B3inv
    den = np.sum(r * cw, axis=1)
    if np.any(np.abs(den) <= 1e-14 * max(1.0, np.max(np.abs(den)))):
        raise EstimationError("zero BLUE denominator")
    return r * cw / den[:, None]


def blue_smooth(H_hat, c, beta: float, variant: str = "blue") -> np.ndarray:
    """Three-tap BLUE combination of neighbouring IAM estimates.

    ``variant="plain"`` replaces ``B3^-1`` by the identity.
    """
    H_hat = np.asarray(H_hat)
    w = blue_weights(c, beta, variant)
    M = w.shape[0]
    m = np.arange(M)
    out = (_col(w[:, 0], H_hat) * H_hat[(m - 1) % M] + _col(w[:, 1], H_hat) * H_hat
           + _col(w[:, 2], H_hat) * H_hat[(m + 1) % M])
    return out


def cpofdm_estimate(X, Y, Lh: int, mode: str = "freq") -> np.ndarray:
    """LS CFR estimate ``Y / X``; ``mode="time"`` adds DFT interpolation to ``Lh`` taps."""
    X = _check_pilots(X, "pilot")
    H = np.asarray(Y) / _col(X, Y)
    if mode == "freq":
        return H
    if mode == "time":
        return dft_interpolate(H, Lh)
    raise ConfigError(f"unknown CP-OFDM estimation mode {mode!r}")


def sparse_flat_estimate(d_P, y_P, pilots, M: int) -> np.ndarray:
    """Sparse estimate assuming flat subchannels (``alpha_k = 1``), returned as a CFR."""
    Lh = np.size(pilots)
    h = td_estimate_sparse(d_P, np.ones(Lh), y_P, pilots, M)
    return cfr(h, M)
