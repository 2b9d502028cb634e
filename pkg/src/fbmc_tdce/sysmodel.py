"""Matrix model of the preamble/AFB transmultiplexer.

Single pilot symbol (guards at n=0 and n=2, observation at q=1)::

    y = Gamma h + eta,   Gamma[:, k] = calG_k d,   calG_k = W^k G_k,
    cov(eta) = sigma^2 B,  B = calG_0 = F Lambda F^H

Two pilot symbols (n=1,2, observations q=1,2)::

    ybar = GammaBar h + etabar,   cov(etabar) = sigma^2 Bbar,
    Bbar = [[B, S A+], [S A-, B]]

``F`` is the unitary DFT matrix ``F[p, i] = exp(-j 2 pi p i / M) / sqrt(M)``,
``W = diag(exp(-j 2 pi p / M))`` and ``Z`` the cyclic down-shift, so that
``F^H W^k = Z^k F^H``.  Eigenvalue vectors are 0-based; the 1-based index
used in printed reports is ``i + 1``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DecompositionError, StructureError
from .filterbank import FbmcConfig, pulses

log = logging.getLogger(__name__)

_JPOW = np.array([1.0, 1.0j, -1.0, -1.0j])

# banded-model deviations below this are reported, not raised
BOUNDARY_REPORT_TOL = 1e-6
STRUCTURAL_ZERO = 1e-14


# ---------------------------------------------------------------------------
# elementary matrices
# ---------------------------------------------------------------------------

def dft_matrix(M: int) -> np.ndarray:
    """Unitary DFT matrix with ``F[p, i] = exp(-j 2 pi p i / M) / sqrt(M)``."""
    pi = np.outer(np.arange(M), np.arange(M)) % M
    return np.exp(-2j * np.pi * pi / M) / np.sqrt(M)


def shift_matrix(M: int, k: int = 1) -> np.ndarray:
    """``Z^k``: premultiplication shifts rows cyclically down by ``k``."""
    return np.roll(np.eye(M), k % M, axis=0)


def modulation_matrix(M: int, k: int = 1) -> np.ndarray:
    """``W^k = diag(exp(-j 2 pi p k / M))``."""
    return np.diag(modulation_diag(M, k))


def modulation_diag(M: int, k: int) -> np.ndarray:
    return np.exp(-2j * np.pi * ((np.arange(M) * k) % M) / M)


def parity_matrix(M: int) -> np.ndarray:
    """``P = blkdiag(1, J_{M-1})``: index 0 fixed, ``i <-> M - i``."""
    P = np.zeros((M, M))
    P[0, 0] = 1.0
    idx = np.arange(1, M)
    P[idx, M - idx] = 1.0
    return P


def alternating_sign(M: int) -> np.ndarray:
    """Diagonal of ``S = diag(1, -1, 1, ...) = W^{M/2}``."""
    return np.where(np.arange(M) % 2 == 0, 1.0, -1.0)


def circulant_deviation(C) -> float:
    """Largest ``|C[p, m] - C[0, (m - p) mod M]|``."""
    C = np.asarray(C)
    M = C.shape[0]
    rows = np.stack([np.roll(C[0], p) for p in range(M)])
    return float(np.max(np.abs(C - rows)))


def eig_circulant(C, tol: float = 1e-9) -> np.ndarray:
    """Eigenvalues of a circulant matrix in the ``F`` basis.

    ``C = F diag(lam) F^H`` with ``lam = fft(C[0, :])``.

    Raises
    ------
    StructureError
        If ``C`` deviates from circulant by more than ``tol``.
    """
    C = np.asarray(C)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise StructureError(f"expected a square matrix, got shape {C.shape}")
    dev = circulant_deviation(C)
    if dev > tol:
        raise StructureError(f"matrix is not circulant: max deviation {dev:.3e} > {tol:.1e}",
                             max_deviation=dev)
    return np.fft.fft(C[0])


def _real_eigs(lam, what, tol=1e-9):
    if np.max(np.abs(lam.imag)) > tol:
        raise StructureError(f"{what}: eigenvalues not real (max |imag| "
                             f"{np.max(np.abs(lam.imag)):.3e})")
    return lam.real.copy()


# ---------------------------------------------------------------------------
# interference constants and B
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InterferenceConstants:
    """Intrinsic-interference magnitudes computed from the prototype.

    ``beta``: adjacent-subcarrier correlation (``B[0,1] = j beta``).
    ``gamma, delta, epsilon``: adjacent-symbol correlations, first row of
    ``A+ = j(gamma, delta, -epsilon, ...)``.
    ``corner_sign``: ``B[0, M-1] = corner_sign * j beta``; -1 is circulant.
    """

    beta: float
    gamma: float
    delta: float
    epsilon: float
    corner_sign: int = -1
    strict: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        if self.corner_sign not in (-1, 1):
            raise ConfigError(f"corner_sign must be +1 or -1, got {self.corner_sign}")
        if self.strict and not (self.beta > 0 and self.gamma > self.delta > abs(self.epsilon) >= 0):
            raise ConfigError(
                "interference constants violate beta > 0, gamma > delta > |epsilon|: "
                f"beta={self.beta:.6g} gamma={self.gamma:.6g} "
                f"delta={self.delta:.6g} epsilon={self.epsilon:.6g}")


def interference_constants(config: FbmcConfig, strict: bool = True) -> InterferenceConstants:
    """Inner products of neighbouring pulses, summed directly over samples."""
    g = config.g
    if abs(np.sum(g**2) - 1.0) > 1e-12:
        raise ConfigError("prototype filter does not have unit energy")
    M, half, Lg = config.M, config.half, config.Lg
    start = half
    length = Lg + half
    p1 = pulses(config, 1, start, length)
    p2 = pulses(config, 2, start, length)
    g01 = p1[:, 0]
    b01 = np.vdot(g01, p1[:, 1])
    b0end = np.vdot(g01, p1[:, M - 1])
    beta = abs(b01)
    if abs(b01.real) > 1e-12 * max(1.0, beta):
        log.warning("adjacent-subcarrier correlation has a real part %.3e", b01.real)
    if b01.imag < 0:
        log.warning("B[0,1] = %s is -j beta; the usual sign pattern assumes +j beta", b01)
    corner_sign = int(np.sign(b0end.imag)) if beta > 0 else -1
    if corner_sign == 0:
        corner_sign = -1
    if corner_sign != -1 and beta > 0:
        log.warning("B has +j beta at the top-right corner: the matrix is not circulant "
                    "for this prototype (even filter length with M divisible by 4)")
    x00 = np.vdot(g01, p2[:, 0])
    x01 = np.vdot(g01, p2[:, 1])
    x02 = np.vdot(g01, p2[:, 2])
    return InterferenceConstants(beta=float(beta), gamma=float(x00.imag), delta=float(x01.imag),
                                 epsilon=float(-x02.imag), corner_sign=corner_sign, strict=strict)


def build_B(M: int, constants: InterferenceConstants) -> np.ndarray:
    """Tridiagonal model of the normalized AFB noise covariance."""
    beta = constants.beta
    B = np.eye(M, dtype=complex)
    idx = np.arange(M - 1)
    B[idx, idx + 1] = 1j * beta
    B[idx + 1, idx] = -1j * beta
    B[0, M - 1] = constants.corner_sign * 1j * beta
    B[M - 1, 0] = np.conj(B[0, M - 1])
    return B


# ---------------------------------------------------------------------------
# delay blocks
# ---------------------------------------------------------------------------

def lag_correlation(g, k: int, M: int) -> np.ndarray:
    """``R_k(n) = sum_l g(l-k) g(l) exp(j 2 pi n l / M)`` for ``n = 0..M-1``."""
    Lg = g.size
    if abs(k) >= Lg:
        return np.zeros(M, dtype=complex)
    l = np.arange(max(0, k), min(Lg, Lg + k))
    a = g[l - k] * g[l]
    folded = np.bincount(l % M, weights=a, minlength=M)
    return M * np.fft.ifft(folded)


def delay_block(config: FbmcConfig, k: int) -> np.ndarray:
    """``calG_k``: AFB response at ``q=1`` to unit pilots at ``n=1`` via ``delta(l-k)``.

    ``k`` may be negative (used for the symbol-2 to symbol-1 cross terms).
    """
    M, Lg = config.M, config.Lg
    R = lag_correlation(config.g, k, M)
    p = np.arange(M)[:, None]
    m = np.arange(M)[None, :]
    n = m - p
    centre = (Lg - 1) / 2.0
    phase = (_JPOW[n % 4]
             * np.exp(-2j * np.pi * ((m * k) % M) / M)
             * np.exp(-2j * np.pi * np.mod(n * centre, M) / M))
    return phase * R[n % M]


def core_from_block(block, k: int) -> np.ndarray:
    """``G_k = W^{-k} calG_k``."""
    M = block.shape[0]
    return np.conj(modulation_diag(M, k))[:, None] * block


# ---------------------------------------------------------------------------
# single-symbol system
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemMatrices:
    """Everything needed for single-symbol estimation and design.

    Attributes
    ----------
    blocks : ndarray, shape (Lh, M, M)
        ``calG_k``.
    cores : ndarray, shape (Lh, M, M)
        Circulant ``G_k`` with ``calG_k = W^k G_k``.
    B : ndarray
        ``calG_0`` (the same array object as ``blocks[0]``).
    lam : ndarray
        Eigenvalues of ``B`` (real, positive).
    lam_k : ndarray, shape (Lh, M)
        Eigenvalues of ``G_k``; ``lam_k[0] == lam``.
    delta : ndarray, shape (Lh, M)
        Diagonals of ``Delta_k = Lambda^-1 Lambda_k^2 (Z^{M-k} Lambda)^-1``.
    alpha : ndarray
        Lag autocorrelations of ``g``.
    Gamma : ndarray or None
        ``M x Lh`` system matrix for the attached preamble ``d``.
    """

    config: FbmcConfig
    Lh: int
    F: np.ndarray
    blocks: np.ndarray
    cores: np.ndarray
    lam: np.ndarray
    lam_k: np.ndarray
    delta: np.ndarray
    alpha: np.ndarray
    constants: InterferenceConstants
    d: np.ndarray | None = None
    Gamma: np.ndarray | None = None

    @property
    def M(self) -> int:
        return self.config.M

    @property
    def B(self) -> np.ndarray:
        return self.blocks[0]

    def with_preamble(self, d) -> "SystemMatrices":
        d = np.asarray(d, dtype=complex)
        if d.shape != (self.M,):
            raise ConfigError(f"preamble must have length {self.M}, got shape {d.shape}")
        Gamma = np.einsum("kpm,m->pk", self.blocks, d)
        return replace(self, d=d, Gamma=Gamma)


def system_model(config: FbmcConfig, Lh: int, constants: InterferenceConstants | None = None
                 ) -> SystemMatrices:
    """Delay blocks, circulant cores and their eigen-structure for ``Lh`` taps."""
    M = config.M
    if not 1 <= Lh <= M:
        raise ConfigError(f"channel length must satisfy 1 <= Lh <= M={M}, got {Lh}")
    if constants is None:
        constants = interference_constants(config)
    blocks = np.stack([delay_block(config, k) for k in range(Lh)])
    cores = np.stack([core_from_block(blocks[k], k) for k in range(Lh)])
    lam_k = np.stack([_real_eigs(eig_circulant(cores[k]), f"G_{k}") for k in range(Lh)])
    lam = lam_k[0]
    if np.min(lam) <= 0:
        raise StructureError(f"B is not positive definite (min eigenvalue {np.min(lam):.3e})")
    delta = np.stack([lam_k[k] ** 2 / (lam * np.roll(lam, -k)) for k in range(Lh)])
    g = config.g
    alpha = np.array([np.dot(g[: g.size - k], g[k:]) for k in range(Lh)])
    for arr in (blocks, cores, lam_k, delta, alpha):
        arr.setflags(write=False)
    return SystemMatrices(config=config, Lh=Lh, F=dft_matrix(M), blocks=blocks, cores=cores,
                          lam=lam, lam_k=lam_k, delta=delta, alpha=alpha, constants=constants)


def build_gamma(config: FbmcConfig, d, Lh: int) -> SystemMatrices:
    """System matrices with ``Gamma = [calG_0 d | ... | calG_{Lh-1} d]``."""
    return system_model(config, Lh).with_preamble(d)


@dataclass(frozen=True)
class Whitened:
    """Noise-whitened model ``ytilde = Gamma_tilde h + etatilde``.

    ``transform`` is ``Lambda^{-1/2} F^H``; ``d_tilde = Lambda^{1/2} F^H d``.
    """

    transform: np.ndarray
    Gamma_tilde: np.ndarray
    d_tilde: np.ndarray
    deltas: np.ndarray

    @property
    def gram(self) -> np.ndarray:
        return self.Gamma_tilde.conj().T @ self.Gamma_tilde


def whiten(sys: SystemMatrices, d=None) -> Whitened:
    """Columns of the whitened system matrix from the diagonal eigen-factors."""
    if d is None:
        d = sys.d
    if d is None:
        raise ConfigError("no preamble given")
    lam = sys.lam
    if np.min(lam) <= 0:
        raise StructureError("Lambda must be strictly positive to whiten")
    FH = sys.F.conj().T
    d_tilde = np.sqrt(lam) * (FH @ d)
    cols = [d_tilde]
    inv_sqrt = 1.0 / np.sqrt(lam)
    for k in range(1, sys.Lh):
        cols.append(inv_sqrt * np.roll(sys.lam_k[k] * inv_sqrt * d_tilde, k))
    Gt = np.stack(cols, axis=1)
    deltas = np.array([np.real(np.vdot(d_tilde, sys.delta[k] * d_tilde)) for k in range(sys.Lh)])
    return Whitened(transform=inv_sqrt[:, None] * FH, Gamma_tilde=Gt, d_tilde=d_tilde,
                    deltas=deltas)


def sparse_core_deviation(sys: SystemMatrices, pilots) -> float:
    """Max ``|G_{k|P} - alpha_k I|`` over the delays of ``sys``."""
    pilots = np.asarray(pilots)
    dev = 0.0
    for k in range(sys.Lh):
        sub = sys.cores[k][np.ix_(pilots, pilots)]
        dev = max(dev, float(np.max(np.abs(sub - sys.alpha[k] * np.eye(pilots.size)))))
    return dev


# ---------------------------------------------------------------------------
# two pilot symbols
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TwoSymbolMatrices:
    """Two consecutive pilot symbols ``d1`` (n=1) and ``d2`` (n=2).

    ``blocks12[k] = j calG_{k+M/2}`` is the response at q=1 to symbol 2 and
    ``blocks21[k] = -j calG_{k-M/2}`` the response at q=2 to symbol 1.
    """

    single: SystemMatrices
    d1: np.ndarray
    d2: np.ndarray
    blocks12: np.ndarray
    blocks21: np.ndarray
    GammaBar: np.ndarray
    Aplus: np.ndarray
    Aminus: np.ndarray
    Bbar: np.ndarray

    @property
    def M(self) -> int:
        return self.single.M

    @property
    def Lh(self) -> int:
        return self.single.Lh

    @property
    def S(self) -> np.ndarray:
        return np.diag(alternating_sign(self.M))

    def cross_cores(self):
        """``G^{(1,2)}_k`` and ``G^{(2,1)}_k`` with ``calG^{(q,n)}_k = S W^k G^{(q,n)}_k``."""
        M, half = self.M, self.M // 2
        c12 = np.stack([core_from_block(b, k + half) for k, b in enumerate(self.blocks12)])
        c21 = np.stack([core_from_block(b, k + half) for k, b in enumerate(self.blocks21)])
        return c12, c21

    def A_structure(self) -> dict:
        """Deviation of ``A+/-`` from imaginary symmetric circulant."""
        report = {}
        for name, A in (("Aplus", self.Aplus), ("Aminus", self.Aminus)):
            report[name] = {
                "circulant": circulant_deviation(A),
                "symmetric": float(np.max(np.abs(A - A.T))),
                "real_part": float(np.max(np.abs(A.real))),
            }
        return report


def build_two_symbol(config: FbmcConfig, d1, d2, Lh: int,
                     single: SystemMatrices | None = None) -> TwoSymbolMatrices:
    """Stacked two-symbol model ``ybar = GammaBar h + etabar``."""
    M, half = config.M, config.half
    if not 1 <= Lh <= half:
        raise ConfigError(f"two-symbol model needs 1 <= Lh <= M/2={half}, got {Lh}")
    d1 = np.asarray(d1, dtype=complex)
    d2 = np.asarray(d2, dtype=complex)
    if d1.shape != (M,) or d2.shape != (M,):
        raise ConfigError(f"pilot symbols must have length {M}")
    if single is None or single.Lh != Lh:
        single = system_model(config, Lh)
    single = single.with_preamble(d1)
    blocks12 = np.stack([1j * delay_block(config, k + half) for k in range(Lh)])
    blocks21 = np.stack([-1j * delay_block(config, k - half) for k in range(Lh)])
    top = single.Gamma + np.einsum("kpm,m->pk", blocks12, d2)
    bottom = np.einsum("kpm,m->pk", blocks21, d1) + np.einsum("kpm,m->pk", single.blocks, d2)
    GammaBar = np.vstack([top, bottom])
    s = alternating_sign(M)[:, None]
    Aplus = s * blocks12[0]
    Aminus = s * blocks21[0]
    B = single.B
    Bbar = np.block([[B, blocks12[0]], [blocks21[0], B]])
    herm = float(np.max(np.abs(Bbar - Bbar.conj().T)))
    if herm > 1e-12:
        raise StructureError(f"Bbar is not Hermitian (deviation {herm:.3e})", max_deviation=herm)
    two = TwoSymbolMatrices(single=single, d1=d1, d2=d2, blocks12=blocks12, blocks21=blocks21,
                            GammaBar=GammaBar, Aplus=Aplus, Aminus=Aminus, Bbar=Bbar)
    for name, rep in two.A_structure().items():
        dev = rep["circulant"]
        if dev > BOUNDARY_REPORT_TOL:
            raise StructureError(f"{name} deviates from circulant by {dev:.3e}", max_deviation=dev)
        if dev > 1e-9:
            log.info("%s boundary deviation from circulant: %.3e", name, dev)
    return two


def givens(M: int, i: int, k: int, theta: float) -> np.ndarray:
    """``G_{i,k,theta}``: cos on (i,i),(k,k), sin at (i,k), -sin at (k,i)."""
    G = np.eye(M)
    c, s = np.cos(theta), np.sin(theta)
    G[i, i] = G[k, k] = c
    G[i, k] = s
    G[k, i] = -s
    return G


@dataclass(frozen=True)
class CbarFactors:
    """Unitary chain with ``Bbar = U diag(L) U^H``.

    ``U = (I_2 (x) F) Q blkdiag(P, I) H2 blkdiag(V+, V+^T)`` where
    ``Q = blkdiag(Z^{M/2}, -j I)`` and ``H2 = [[I, I], [I, -I]] / sqrt(2)``.
    """

    lam: np.ndarray
    lam_plus: np.ndarray
    lam_minus: np.ndarray
    lam_I: np.ndarray
    thetas: np.ndarray
    Vplus: np.ndarray
    Lplus: np.ndarray
    Lminus: np.ndarray
    U: np.ndarray
    residuals: dict

    @property
    def L(self) -> np.ndarray:
        return np.concatenate([self.Lplus, self.Lminus])

    def solve(self, x) -> np.ndarray:
        """``Bbar^{-1} x`` through the diagonal factor."""
        x = np.asarray(x)
        Lx = self.L if x.ndim == 1 else self.L[:, None]
        return self.U @ ((self.U.conj().T @ x) / Lx)

    def whitening(self) -> np.ndarray:
        """``diag(L)^{-1/2} U^H``."""
        return self.U.conj().T / np.sqrt(self.L)[:, None]


def _resid(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def decompose_Cbar(two: TwoSymbolMatrices, tol: float = 1e-8) -> CbarFactors:
    """Eigen-decomposition of ``Bbar`` through DFT, parity, 2x2 DFT and Givens stages."""
    M = two.M
    half = M // 2
    F = two.single.F
    I = np.eye(M)
    Z = shift_matrix(M, half)
    P = parity_matrix(M)
    res = {}

    def check(stage, lhs, rhs):
        r = _resid(lhs, rhs)
        res[stage] = r
        if r > tol:
            raise DecompositionError(f"stage '{stage}' residual {r:.3e} > {tol:.1e}",
                                     stage=stage, residual=r)

    lam = two.single.lam
    lam_plus = eig_circulant(two.Aplus, tol=BOUNDARY_REPORT_TOL)
    lam_minus = eig_circulant(two.Aminus, tol=BOUNDARY_REPORT_TOL)
    res["lam_plus_real"] = float(np.max(np.abs(lam_plus.real)))
    lam_I = lam_plus.imag
    Lam = np.diag(lam).astype(complex)

    # Bbar = (I2 x F) K (I2 x F)^H
    IF = np.kron(np.eye(2), F)
    K = np.block([[Lam, Z @ np.diag(lam_plus)], [Z @ np.diag(lam_minus), Lam]])
    check("dft", IF @ K @ IF.conj().T, two.Bbar)
    check("lambda_minus", lam_minus, -np.roll(lam_plus, half))

    # K = Q [[Lambda', Lambda_I], [Lambda_I, Lambda]] Q^H
    Q = np.block([[Z, np.zeros((M, M))], [np.zeros((M, M)), -1j * I]])
    K2 = np.block([[np.diag(np.roll(lam, half)), np.diag(lam_I)],
                   [np.diag(lam_I), np.diag(lam)]])
    check("rotation", Q @ K2 @ Q.conj().T, K)

    # parity conjugation to the block-circulant Mmat
    PI = np.block([[P, np.zeros((M, M))], [np.zeros((M, M)), I]])
    PL = P @ np.diag(lam_I)
    Mmat = np.block([[np.diag(lam), PL], [PL, np.diag(lam)]])
    check("parity", PI @ Mmat @ PI, K2)

    # 2x2 DFT block-diagonalization
    H2 = np.block([[I, I], [I, -I]]) / np.sqrt(2.0)
    Nplus = np.diag(lam) + PL
    Nminus = np.diag(lam) - PL
    Nmat = np.block([[Nplus, np.zeros((M, M))], [np.zeros((M, M)), Nminus]])
    check("block_dft", H2 @ Nmat @ H2, Mmat)

    # Givens rotations on the (i, M-i) pairs
    Vplus = np.eye(M)
    Lplus = np.empty(M)
    Lminus = np.empty(M)
    thetas = np.zeros(half - 1)
    for i in (0, half):
        Lplus[i] = Nplus[i, i]
        Lminus[i] = Nminus[i, i]
    for i in range(1, half):
        k = M - i
        a, c = Nplus[i, i], Nplus[k, k]
        b = 0.5 * (Nplus[i, k] + Nplus[k, i])
        # principal branch |theta| <= pi/4, so an already-diagonal pair gets theta = 0
        if b == 0.0:
            theta = 0.0
        elif a == c:
            theta = -np.sign(b) * np.pi / 4.0
        else:
            theta = 0.5 * np.arctan(-2.0 * b / (a - c))
        thetas[i - 1] = theta
        C, Sn = np.cos(theta), np.sin(theta)
        Lplus[i] = Lminus[i] = C * C * a - 2 * C * Sn * b + Sn * Sn * c
        Lplus[k] = Lminus[k] = Sn * Sn * a + 2 * C * Sn * b + C * C * c
        Vplus[i, i] = Vplus[k, k] = C
        Vplus[i, k] = Sn
        Vplus[k, i] = -Sn
    V = np.block([[Vplus, np.zeros((M, M))], [np.zeros((M, M)), Vplus.T]])
    check("givens", V @ np.diag(np.concatenate([Lplus, Lminus])) @ V.T, Nmat)

    U = IF @ Q @ PI @ H2 @ V
    L = np.concatenate([Lplus, Lminus])
    check("reconstruction", U @ np.diag(L) @ U.conj().T, two.Bbar)
    res["unitarity"] = _resid(U.conj().T @ U, np.eye(2 * M))
    if np.min(L) <= 0:
        raise DecompositionError(f"Bbar not positive definite (min eigenvalue {np.min(L):.3e})",
                                 stage="givens", residual=float(np.min(L)))
    return CbarFactors(lam=lam, lam_plus=lam_plus, lam_minus=lam_minus, lam_I=lam_I,
                       thetas=thetas, Vplus=Vplus, Lplus=Lplus, Lminus=Lminus, U=U,
                       residuals=res)


@dataclass(frozen=True)
class OrthogonalityReport:
    """Off-diagonal entries of the whitened two-symbol Gram matrix.

    ``first_row[k-1]`` is the ``(0, k)`` condition, ``pairwise[(k, l)]`` the
    ``(k, l)`` condition for ``1 <= k < l``; ``first_row_formula`` evaluates the
    same ``(0, k)`` conditions from the diagonal eigen-factors.
    """

    gram: np.ndarray
    first_row: np.ndarray
    first_row_formula: np.ndarray
    pairwise: dict

    @property
    def formula_discrepancy(self) -> float:
        if self.first_row.size == 0:
            return 0.0
        return float(np.max(np.abs(self.first_row - self.first_row_formula)))

    @property
    def max_residual(self) -> float:
        vals = [np.max(np.abs(self.first_row))] if self.first_row.size else []
        vals += [abs(v) for v in self.pairwise.values()]
        return float(max(vals)) if vals else 0.0


def check_two_symbol_orthogonality(two: TwoSymbolMatrices, factors: CbarFactors | None = None
                                   ) -> OrthogonalityReport:
    """Residuals of the column-orthogonality conditions for ``(d1, d2)``."""
    if factors is None:
        factors = decompose_Cbar(two)
    Gt = factors.whitening() @ two.GammaBar
    gram = Gt.conj().T @ Gt
    Lh = two.Lh
    first = np.array([gram[0, k] for k in range(1, Lh)], dtype=complex)
    pair = {(k, l): complex(gram[k, l]) for k in range(1, Lh - 1) for l in range(k + 1, Lh)}

    M, half = two.M, two.M // 2
    FH = two.single.F.conj().T
    dt = np.concatenate([FH @ two.d1, FH @ two.d2])
    c12, c21 = two.cross_cores()
    formula = np.zeros(max(Lh - 1, 0), dtype=complex)
    for k in range(1, Lh):
        lk = two.single.lam_k[k]
        l12 = eig_circulant(c12[k], tol=BOUNDARY_REPORT_TOL)
        l21 = eig_circulant(c21[k], tol=BOUNDARY_REPORT_TOL)
        Zk = shift_matrix(M, k)
        Zh = shift_matrix(M, half)
        inner = np.block([[np.diag(lk), Zh @ np.diag(l12)], [Zh @ np.diag(l21), np.diag(lk)]])
        outer = np.kron(np.eye(2), Zk)
        formula[k - 1] = np.vdot(dt, outer @ inner @ dt)
    return OrthogonalityReport(gram=gram, first_row=first, first_row_formula=formula, pairwise=pair)


def write_complex_matrix(path, A, header=()):
    """Write ``A`` as CSV, each entry as an adjacent ``re,im`` pair."""
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    with open(path, "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        for row in A:
            fh.write(",".join(f"{float(v.real)!r},{float(v.imag)!r}" for v in row) + "\n")


def read_complex_matrix(path) -> np.ndarray:
    vals = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return vals[:, 0::2] + 1j * vals[:, 1::2]
