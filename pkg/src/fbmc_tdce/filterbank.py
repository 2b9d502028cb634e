"""Prototype filter design and the direct-form FBMC/OQAM signal chain.

Conventions
-----------
The modulated pulses are

    g_{m,n}(l) = g(l - n M/2) exp(j 2 pi m (l - (Lg-1)/2) / M) exp(j phi_{m,n})

with ``phi_{m,n} = (m + n) pi/2 + m n pi``.  The synthesis filter bank (SFB)
output is ``s(l) = sum_{m,n} d_{m,n} g_{m,n}(l)`` and the analysis filter bank
(AFB) output is ``y_{p,q} = sum_l y(l) conj(g_{p,q}(l))``.

Everything here is evaluated literally (no polyphase shortcuts) because these
routines are the reference against which the matrix models in
:mod:`fbmc_tdce.sysmodel` are checked.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

# Frequency-sampling coefficients of the PHYDYAS prototype, keyed by overlap.
PHYDYAS_COEFFICIENTS = {
    2: (1.0, np.sqrt(2.0) / 2.0),
    3: (1.0, 0.911438, 0.411438),
    4: (1.0, 0.971960, np.sqrt(2.0) / 2.0, 0.235147),
}

_JPOW = np.array([1.0, 1.0j, -1.0, -1.0j])


@dataclass(frozen=True)
class PrototypeFilter:
    """Real, symmetric prototype impulse response ``g``."""

    coefficients: np.ndarray

    def __post_init__(self):
        g = np.array(self.coefficients, dtype=float)
        if g.ndim != 1 or g.size < 2:
            raise ConfigError("prototype filter must be a 1-D array with at least two taps")
        g.setflags(write=False)
        object.__setattr__(self, "coefficients", g)

    @property
    def length(self) -> int:
        return self.coefficients.size

    @property
    def energy(self) -> float:
        return float(np.sum(self.coefficients**2))

    def is_symmetric(self, tol=1e-12) -> bool:
        g = self.coefficients
        return bool(np.max(np.abs(g - g[::-1])) <= tol)


def design_prototype(M: int, K: int) -> PrototypeFilter:
    """Frequency-sampling (PHYDYAS) prototype of length ``K*M - 1``.

    The ``K*M + 1`` point frequency-sampling design has (near-)zero end
    samples; dropping them leaves an odd-length filter whose symmetry centre
    ``(Lg-1)/2`` is an integer.  That keeps the adjacent-subcarrier
    correlation matrices exactly circulant for ``M`` divisible by 4.

    Parameters
    ----------
    M : int
        Number of subcarriers (even).
    K : int
        Overlap factor, one of 2, 3, 4.

    Returns
    -------
    PrototypeFilter
        Unit-energy symmetric filter.
    """
    if K not in PHYDYAS_COEFFICIENTS:
        supported = ", ".join(str(k) for k in sorted(PHYDYAS_COEFFICIENTS))
        raise ConfigError(f"unsupported overlap factor K={K}; supported: {supported}")
    if M <= 0 or M % 2:
        raise ConfigError(f"M must be a positive even integer, got {M}")
    P = PHYDYAS_COEFFICIENTS[K]
    KM = K * M
    t = np.arange(1, KM)
    g = np.full(t.shape, P[0], dtype=float)
    for k in range(1, K):
        g += 2.0 * (-1) ** k * P[k] * np.cos(2.0 * np.pi * k * t / KM)
    g /= np.linalg.norm(g)
    # enforce exact symmetry against rounding in the cosine evaluation
    g = 0.5 * (g + g[::-1])
    g /= np.linalg.norm(g)
    return PrototypeFilter(g)


@dataclass(frozen=True)
class FbmcConfig:
    """System geometry: ``M`` subcarriers, overlap ``K`` and the prototype.

    When ``prototype`` is omitted the PHYDYAS design for ``(M, K)`` is used.
    The phase rule ``phi_{m,n} = (m+n) pi/2 + m n pi`` is fixed.
    """

    M: int
    K: int = 3
    prototype: PrototypeFilter | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not isinstance(self.M, (int, np.integer)) or self.M < 8 or self.M % 2:
            raise ConfigError(f"M must be an even integer >= 8, got {self.M!r}")
        if self.M % 4:
            # the circulant models need j^M = 1
            raise ConfigError(f"M must be a multiple of 4, got {self.M}")
        if not isinstance(self.K, (int, np.integer)) or self.K < 1:
            raise ConfigError(f"K must be a positive integer, got {self.K!r}")
        if self.prototype is None:
            object.__setattr__(self, "prototype", design_prototype(self.M, self.K))
        proto = self.prototype
        if abs(proto.energy - 1.0) > 1e-12:
            raise ConfigError(f"prototype energy is {proto.energy!r}, expected 1")

    @property
    def g(self) -> np.ndarray:
        return self.prototype.coefficients

    @property
    def Lg(self) -> int:
        return self.prototype.length

    @property
    def half(self) -> int:
        """Symbol-rate step ``M/2`` in samples."""
        return self.M // 2

    def frame_length(self, n_symbols: int) -> int:
        """SFB output length for symbols ``0..n_symbols-1``."""
        return (n_symbols - 1) * self.half + self.Lg


def phase_factor(m, n):
    """``exp(j phi_{m,n})`` evaluated exactly (no floating-point angles)."""
    m = np.asarray(m)
    n = np.asarray(n)
    sign = np.where((m * n) % 2 == 0, 1.0, -1.0)
    return _JPOW[(m + n) % 4] * sign


def pulses(config: FbmcConfig, n: int, start: int, length: int) -> np.ndarray:
    """Samples of ``g_{m,n}(l)`` for ``l in [start, start+length)``.

    Returns
    -------
    ndarray, shape (length, M)
        Column ``m`` holds the pulse of subcarrier ``m`` at symbol ``n``.
    """
    M, Lg = config.M, config.Lg
    l = np.arange(start, start + length)
    local = l - n * config.half
    inside = (local >= 0) & (local < Lg)
    env = np.zeros(length)
    env[inside] = config.g[local[inside]]
    m = np.arange(M)
    centre = (Lg - 1) / 2.0
    # reduce m*(l - centre) modulo M before scaling, for accuracy at large l
    arg = np.outer(l - centre, m)
    arg = np.mod(arg, M)
    carrier = np.exp(2j * np.pi * arg / M)
    return env[:, None] * carrier * phase_factor(m, n)[None, :]


def synthesize(config: FbmcConfig, d) -> np.ndarray:
    """SFB output for a grid ``d`` of shape ``(M, N)``.

    Returns the complex signal of length ``(N-1) M/2 + Lg`` starting at
    sample 0.  The map is linear in ``d``.
    """
    d = np.asarray(d)
    if d.ndim == 1:
        d = d[:, None]
    if d.ndim != 2 or d.shape[0] != config.M:
        raise ConfigError(f"grid must have {config.M} rows (subcarriers), got shape {d.shape}")
    N = d.shape[1]
    s = np.zeros(config.frame_length(N), dtype=complex)
    for n in range(N):
        if not np.any(d[:, n]):
            continue
        start = n * config.half
        s[start:start + config.Lg] += pulses(config, n, start, config.Lg) @ d[:, n]
    return s


def apply_channel(s, h, sigma2: float = 0.0, rng=None) -> np.ndarray:
    """Linear convolution with ``h`` plus circular complex Gaussian noise.

    ``sigma2`` is the variance per complex sample.  With ``sigma2 == 0`` the
    result is deterministic and ``rng`` may be omitted.
    """
    s = np.asarray(s, dtype=complex)
    h = np.atleast_1d(np.asarray(h, dtype=complex))
    if h.ndim != 1 or h.size < 1:
        raise ConfigError("channel must be a non-empty 1-D tap vector")
    if sigma2 < 0:
        raise ConfigError(f"noise variance must be non-negative, got {sigma2}")
    y = np.convolve(s, h)
    if sigma2 > 0:
        if rng is None:
            raise ConfigError("an rng is required when sigma2 > 0")
        y = y + complex_noise(rng, y.shape, sigma2)
    return y


def complex_noise(rng, shape, sigma2=1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples of variance ``sigma2``."""
    scale = np.sqrt(sigma2 / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def analysis_matrix(config: FbmcConfig, q: int) -> np.ndarray:
    """``(M, Lg)`` matrix mapping the support of symbol ``q`` to ``y_{:,q}``."""
    start = q * config.half
    return pulses(config, q, start, config.Lg).conj().T


def analyze(config: FbmcConfig, y, symbols=None) -> np.ndarray:
    """AFB output ``y_{p,q}`` at the requested symbol instants.

    Parameters
    ----------
    y : array_like
        Received samples starting at sample 0.
    symbols : iterable of int, optional
        Instants ``q``.  Defaults to every ``q`` whose support fits in ``y``.

    Returns
    -------
    ndarray, shape (M, len(symbols))
    """
    y = np.asarray(y, dtype=complex)
    n_fit = (y.size - config.Lg) // config.half + 1 if y.size >= config.Lg else 0
    if symbols is None:
        symbols = range(n_fit)
    symbols = list(symbols)
    out = np.zeros((config.M, len(symbols)), dtype=complex)
    for col, q in enumerate(symbols):
        if q < 0 or q >= n_fit:
            raise ConfigError(
                f"symbol instant q={q} outside the signal (valid 0..{n_fit - 1})")
        start = q * config.half
        out[:, col] = analysis_matrix(config, q) @ y[start:start + config.Lg]
    return out


def preamble_grid(config: FbmcConfig, *pilot_symbols) -> np.ndarray:
    """Grid with a zero guard symbol before and after the pilot symbols."""
    n_pil = len(pilot_symbols)
    grid = np.zeros((config.M, n_pil + 2), dtype=complex)
    for i, d in enumerate(pilot_symbols):
        grid[:, i + 1] = d
    return grid


def transmux_response(config: FbmcConfig, k: int, d) -> np.ndarray:
    """AFB output at ``q=1`` for a guarded preamble ``d`` and channel ``delta(l-k)``."""
    if k < 0 or k > config.Lg - 1:
        raise ConfigError(f"delay must lie in [0, {config.Lg - 1}], got {k}")
    s = synthesize(config, preamble_grid(config, d))
    h = np.zeros(k + 1)
    h[k] = 1.0
    return analyze(config, apply_channel(s, h), [1])[:, 0]


def transmux_response_two_symbol(config: FbmcConfig, k: int, d1, d2) -> np.ndarray:
    """Stacked AFB outputs ``[y_1; y_2]`` for pilots at n=1,2 and delay ``k``."""
    if k < 0 or k > config.Lg - 1:
        raise ConfigError(f"delay must lie in [0, {config.Lg - 1}], got {k}")
    s = synthesize(config, preamble_grid(config, d1, d2))
    h = np.zeros(k + 1)
    h[k] = 1.0
    return analyze(config, apply_channel(s, h), [1, 2]).T.reshape(-1)
