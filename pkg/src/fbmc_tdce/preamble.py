"""Preamble designs, predicted MSEs and energy accounting.

All MSE values are traces (sums over taps or over subcarriers), not
per-entry averages.  ``E`` is the energy budget of the preamble, i.e. the
energy of the SFB output for FBMC designs (``d^H B d``) and ``||X||^2`` for
the CP-OFDM pilot vector (excluding the cyclic prefix).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .sysmodel import SystemMatrices, TwoSymbolMatrices

log = logging.getLogger(__name__)

KINDS = ("full", "sparse", "iamc", "cpofdm", "cpofdm-sparse", "two_symbol")


@dataclass(frozen=True)
class PreambleSpec:
    """Pilot symbol(s) carried between two zero guard symbols.

    Attributes
    ----------
    kind : str
        One of ``full``, ``sparse``, ``iamc``, ``cpofdm``, ``cpofdm-sparse``,
        ``two_symbol``.
    d : ndarray
        Pilot vector of length M (frequency-domain pilots for CP-OFDM).
    energy : float
        Energy the design was normalized to.
    d2 : ndarray, optional
        Second pilot symbol (two-symbol preambles only).
    pilots : ndarray, optional
        Nonzero subcarriers of a sparse preamble.
    m_opt : int, optional
        0-based eigen-index selected by the full optimal design.
    Lh : int, optional
        Channel length the design assumed.
    scale : float
        Accumulated amplitude scaling from power normalization.
    """

    kind: str
    d: np.ndarray
    energy: float
    d2: np.ndarray | None = None
    pilots: np.ndarray | None = None
    m_opt: int | None = None
    Lh: int | None = None
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown preamble kind {self.kind!r}; expected one of {KINDS}")
        d = np.array(self.d, dtype=complex)
        d.setflags(write=False)
        object.__setattr__(self, "d", d)
        if self.d2 is not None:
            d2 = np.array(self.d2, dtype=complex)
            if d2.shape != d.shape:
                raise ConfigError("both pilot symbols must have the same length")
            d2.setflags(write=False)
            object.__setattr__(self, "d2", d2)
        if self.pilots is not None:
            p = np.array(self.pilots, dtype=int)
            p.setflags(write=False)
            object.__setattr__(self, "pilots", p)

    @property
    def M(self) -> int:
        return self.d.size

    def scaled(self, rho: float) -> "PreambleSpec":
        """Copy with all pilots multiplied by ``rho`` (energy scales by ``rho^2``)."""
        d2 = None if self.d2 is None else self.d2 * rho
        return replace(self, d=self.d * rho, d2=d2, energy=self.energy * rho**2,
                       scale=self.scale * rho)


# ---------------------------------------------------------------------------
# full preamble
# ---------------------------------------------------------------------------

def full_optimal_scores(sys: SystemMatrices) -> np.ndarray:
    """``lambda_m * sum_{k>=1} lambda_{(m+k) mod M} / lambda_{k,m}^2`` for every m."""
    lam = sys.lam
    score = np.zeros(sys.M)
    for k in range(1, sys.Lh):
        lk = sys.lam_k[k]
        if np.any(lk == 0):
            score = np.where(lk == 0, np.inf, score)
            lk = np.where(lk == 0, np.nan, lk)
        score = score + np.roll(lam, -k) / lk**2
    return np.nan_to_num(lam * score, nan=np.inf)


def design_full_optimal(sys: SystemMatrices, E: float) -> PreambleSpec:
    """Best single-spike whitened preamble ``d = sqrt(E/lambda_m) f_m``.

    Ties in the score are broken by the lowest index.
    """
    _check_energy(E)
    score = full_optimal_scores(sys)
    best = np.min(score)
    ties = np.flatnonzero(np.isclose(score, best, rtol=1e-12, atol=0.0))
    m = int(ties[0])
    if ties.size > 1:
        log.info("full optimal design: %d tied indices %s, choosing %d", ties.size,
                 ties.tolist(), m)
    d = np.sqrt(E / sys.lam[m]) * sys.F[:, m]
    return PreambleSpec(kind="full", d=d, energy=float(E), m_opt=m, Lh=sys.Lh)


def predicted_mse_full(sys: SystemMatrices, m: int, E: float, sigma2: float) -> float:
    """Time-domain MSE ``sigma^2/E * (1 + score_m)`` of the single-spike design."""
    return sigma2 / E * (1.0 + full_optimal_scores(sys)[m])


# ---------------------------------------------------------------------------
# sparse preamble
# ---------------------------------------------------------------------------

def _divisors(M):
    return [q for q in range(1, M + 1) if M % q == 0]


def design_sparse_optimal(M: int, Lh: int, E: float, p0: int = 0, phases=None,
                          rng=None) -> PreambleSpec:
    """Equispaced, equipowered pilots ``p_i = p0 + i M/Lh``.

    Parameters
    ----------
    phases : None, "random" or array_like
        Pilot phases in radians.  ``None`` gives all-zero phases; ``"random"``
        draws uniform phases from ``rng``.
    """
    _check_energy(E)
    if Lh < 1 or M % Lh:
        adm = [q for q in _divisors(M) if q <= M // 2]
        nearest = min(adm, key=lambda q: (abs(q - Lh), -q))
        raise ConfigError(f"sparse design needs Lh dividing M={M}, got Lh={Lh}; "
                          f"nearest admissible Lh is {nearest}")
    spacing = M // Lh
    if spacing < 2:
        raise ConfigError(f"Lh={Lh} leaves no room for isolated pilots (M={M}); need Lh <= M/2")
    if not 0 <= p0 < spacing:
        raise ConfigError(f"p0 must lie in [0, {spacing}), got {p0}")
    pilots = p0 + spacing * np.arange(Lh)
    if phases is None:
        theta = np.zeros(Lh)
    elif isinstance(phases, str) and phases == "random":
        if rng is None:
            raise ConfigError("random pilot phases need an rng")
        theta = rng.uniform(0.0, 2.0 * np.pi, Lh)
    else:
        theta = np.asarray(phases, dtype=float)
        if theta.shape != (Lh,):
            raise ConfigError(f"expected {Lh} phases, got shape {theta.shape}")
    d = np.zeros(M, dtype=complex)
    d[pilots] = np.sqrt(E / Lh) * np.exp(1j * theta)
    return PreambleSpec(kind="sparse", d=d, energy=float(E), pilots=pilots, Lh=Lh)


def predicted_mse_sparse(alpha, E: float, sigma2: float) -> float:
    """Time-domain MSE ``sigma^2 / E * sum_k 1/alpha_k^2``."""
    alpha = np.asarray(alpha, dtype=float)
    return sigma2 / E * float(np.sum(1.0 / alpha**2))


# ---------------------------------------------------------------------------
# flat-subchannel and CP-OFDM preambles
# ---------------------------------------------------------------------------

def design_iamc(M: int, beta: float, E: float) -> PreambleSpec:
    """``sqrt(E/(M(1+2 beta))) * (1, -j, -1, j, ...)``."""
    _check_energy(E)
    if M % 4:
        raise ConfigError(f"IAM-C preamble needs M divisible by 4, got {M}")
    pattern = np.tile(np.array([1.0, -1.0j, -1.0, 1.0j]), M // 4)
    d = np.sqrt(E / (M * (1.0 + 2.0 * beta))) * pattern
    return PreambleSpec(kind="iamc", d=d, energy=float(E))


def predicted_mse_iamc(M: int, beta: float, E: float, sigma2: float) -> float:
    """Frequency-domain MSE ``sigma^2 M^2 / (E (1 + 2 beta))`` for a flat channel."""
    return sigma2 * M**2 / (E * (1.0 + 2.0 * beta))


def design_cpofdm(M: int, E: float, kind: str = "full", Lh: int | None = None,
                  column: int = 0) -> PreambleSpec:
    """CP-OFDM pilot vector ``X`` (frequency domain, ``||X||^2 = E``).

    ``full`` uses a scaled DFT-matrix column, so every tone carries a pilot
    of modulus ``sqrt(E/M)``; ``sparse`` uses ``Lh`` equal equispaced pilots.
    """
    _check_energy(E)
    if kind == "full":
        X = np.sqrt(E) * np.exp(-2j * np.pi * column * np.arange(M) / M) / np.sqrt(M)
        return PreambleSpec(kind="cpofdm", d=X, energy=float(E))
    if kind == "sparse":
        if Lh is None or Lh < 1 or M % Lh:
            raise ConfigError(f"sparse CP-OFDM pilots need Lh dividing M={M}, got {Lh}")
        pilots = (M // Lh) * np.arange(Lh)
        X = np.zeros(M, dtype=complex)
        X[pilots] = np.sqrt(E / Lh)
        return PreambleSpec(kind="cpofdm-sparse", d=X, energy=float(E), pilots=pilots, Lh=Lh)
    raise ConfigError(f"unknown CP-OFDM preamble kind {kind!r}")


def cpofdm_time_signal(spec: PreambleSpec, cp: int) -> np.ndarray:
    """Time-domain CP-OFDM symbol with a ``cp``-sample cyclic prefix."""
    x = np.fft.ifft(spec.d, norm="ortho")
    return np.concatenate([x[x.size - cp:], x]) if cp > 0 else x


# ---------------------------------------------------------------------------
# energy
# ---------------------------------------------------------------------------

def sfb_energy(sys, spec: PreambleSpec) -> float:
    """``d^H B d`` (one pilot symbol) or ``dbar^H Bbar dbar`` (two symbols)."""
    if spec.d2 is not None:
        if not isinstance(sys, TwoSymbolMatrices):
            raise ConfigError("two-symbol preambles need TwoSymbolMatrices")
        dbar = np.concatenate([spec.d, spec.d2])
        return float(np.real(np.vdot(dbar, sys.Bbar @ dbar)))
    B = sys.single.B if isinstance(sys, TwoSymbolMatrices) else sys.B
    return float(np.real(np.vdot(spec.d, B @ spec.d)))


def _check_energy(E):
    if not np.isfinite(E) or E <= 0:
        raise ConfigError(f"energy must be positive and finite, got {E}")


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def write_preamble_csv(path, spec: PreambleSpec, metadata: dict | None = None) -> Path:
    """Write ``index,re,im`` rows, preceded by ``# key=value`` comment lines.

    Two-symbol preambles list ``d1`` at indices ``0..M-1`` and ``d2`` at
    ``M..2M-1``.
    """
    path = Path(path)
    meta = {"kind": spec.kind, "M": spec.M, "energy": repr(spec.energy)}
    if spec.m_opt is not None:
        meta["m_opt"] = spec.m_opt
    if spec.Lh is not None:
        meta["Lh"] = spec.Lh
    meta.update(metadata or {})
    values = spec.d if spec.d2 is None else np.concatenate([spec.d, spec.d2])
    with path.open("w", newline="") as fh:
        for k, v in meta.items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh)
        w.writerow(["index", "re", "im"])
        for i, v in enumerate(values):
            w.writerow([i, repr(float(v.real)), repr(float(v.imag))])
    return path


def read_preamble_csv(path) -> PreambleSpec:
    """Inverse of :func:`write_preamble_csv`."""
    meta = {}
    rows = []
    with Path(path).open() as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key.strip()] = val.strip()
            elif line.strip():
                lines.append(line)
    reader = csv.DictReader(lines)
    for row in reader:
        rows.append((int(row["index"]), float(row["re"]) + 1j * float(row["im"])))
    if not rows:
        raise ConfigError(f"{path}: no preamble rows")
    rows.sort()
    values = np.array([v for _, v in rows])
    kind = meta.get("kind", "full")
    M = int(meta.get("M", values.size))
    d, d2 = (values[:M], values[M:]) if values.size == 2 * M else (values, None)
    pilots = np.flatnonzero(d) if kind in ("sparse", "cpofdm-sparse") else None
    return PreambleSpec(kind=kind, d=d, d2=d2, energy=float(meta.get("energy", np.vdot(d, d).real)),
                        pilots=pilots,
                        m_opt=int(meta["m_opt"]) if "m_opt" in meta else None,
                        Lh=int(meta["Lh"]) if "Lh" in meta else None)
