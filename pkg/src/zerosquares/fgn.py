"""Exact sampling of fractional Gaussian noise (fGN) on a uniform grid.

The primary sampler embeds the fGN autocovariance into a circulant matrix and
draws through the FFT (O(n log n), exact when the embedding is nonnegative
definite, which it is for fGN at any Hurst index up to floating-point noise).
Small problems, and the rare case of a genuinely indefinite embedding, fall
back to a dense Cholesky factorization.

Each component of a multi-dimensional draw consumes its own PCG64 stream
derived from (seed, component index), so outputs are a pure function of the
spec and replications can be split across workers safely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CirculantNotPSD",
    "HurstIndex",
    "FgnSpec",
    "fgn_autocovariance",
    "fbm_covariance",
    "sample_fgn",
    "cumulate",
]

# Relative tolerance below which a negative embedding eigenvalue is treated as
# floating-point noise and clamped to zero.
_EIG_TOL = 1e-9

# Below this length the dense Cholesky sampler is used directly.
_CHOLESKY_CUTOFF = 16


class CirculantNotPSD(Exception):
    """Circulant embedding produced a negative eigenvalue beyond tolerance."""


@dataclass(frozen=True)
class HurstIndex:
    """Hurst index, constrained to the open interval (0, 1)."""

    value: float

    def __post_init__(self) -> None:
        v = float(self.value)
        if not np.isfinite(v) or not 0.0 < v < 1.0:
            raise ValueError(f"Hurst index must lie in (0, 1), got {self.value!r}")
        object.__setattr__(self, "value", v)


def _hurst_value(h: HurstIndex | float) -> float:
    if isinstance(h, HurstIndex):
        return h.value
    return HurstIndex(float(h)).value


@dataclass(frozen=True)
class FgnSpec:
    """Parameters of an fGN draw: dims independent rows of `count` increments.

    `step` is the grid spacing in time units; `seed` fixes the output exactly.
    """

    h: HurstIndex
    step: float
    count: int
    dims: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.h, HurstIndex):
            object.__setattr__(self, "h", HurstIndex(float(self.h)))
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if int(self.count) < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        if int(self.dims) < 1:
            raise ValueError(f"dims must be >= 1, got {self.dims}")
        object.__setattr__(self, "count", int(self.count))
        object.__setattr__(self, "dims", int(self.dims))
        object.__setattr__(self, "seed", int(self.seed))


def fgn_autocovariance(h: HurstIndex | float, lag, step: float = 1.0):
    """Autocovariance of fGN at the given lag: the second difference of t^{2H}/2.

    gamma(k) = 0.5*(|k+1|^{2H} - 2|k|^{2H} + |k-1|^{2H}) * step^{2H}
    """
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    hv = _hurst_value(h)
    k = np.abs(np.asarray(lag, dtype=float))
    two_h = 2.0 * hv
    gamma = 0.5 * ((k + 1.0) ** two_h - 2.0 * k**two_h + np.abs(k - 1.0) ** two_h)
    out = gamma * step**two_h
    if np.ndim(lag) == 0:
        return float(out)
    return out


def fbm_covariance(h: HurstIndex | float, s: float, t: float) -> float:
    """Covariance of one fBm component: 0.5*(t^{2H} + s^{2H} - |t-s|^{2H})."""
    hv = _hurst_value(h)
    if s < 0 or t < 0:
        raise ValueError("fbm_covariance requires s, t >= 0")
    two_h = 2.0 * hv
    return float(0.5 * (t**two_h + s**two_h - abs(t - s) ** two_h))


def _embedding_eigenvalues(first_row: np.ndarray) -> np.ndarray:
    """Eigenvalues of the circulant with the given first row, clamped at zero.

    Raises CirculantNotPSD when a negative eigenvalue exceeds the relative
    tolerance (then the embedding is genuinely indefinite rather than noisy).
    """
    lam = np.fft.fft(first_row).real
    lam_max = float(lam.max(initial=0.0))
    if float(lam.min()) < -_EIG_TOL * max(lam_max, 1.0):
        raise CirculantNotPSD(
            f"negative embedding eigenvalue {lam.min():.3e} (max {lam_max:.3e})"
        )
    return np.clip(lam, 0.0, None)


# Cache of embedding eigenvalues keyed by (H, embedding size): replicated
# sampling reuses the same row FFT.
_EIG_CACHE: dict[tuple[float, int], np.ndarray] = {}


def _circulant_eigenvalues(hv: float, m: int) -> np.ndarray:
    key = (hv, m)
    lam = _EIG_CACHE.get(key)
    if lam is None:
        k = np.arange(m // 2 + 1)
        gamma = fgn_autocovariance(hv, k, 1.0)
        row = np.concatenate([gamma, gamma[-2:0:-1]])
        lam = _embedding_eigenvalues(row)
        lam.flags.writeable = False
        if len(_EIG_CACHE) > 64:
            _EIG_CACHE.clear()
        _EIG_CACHE[key] = lam
    return lam


def _sample_circulant(hv: float, count: int, rng: np.random.Generator) -> np.ndarray:
    """One row of unit-step fGN via the circulant embedding."""
    m = 2
    while m < 2 * (count - 1):
        m *= 2
    lam = _circulant_eigenvalues(hv, m)
    half = m // 2
    z = rng.standard_normal(m)
    xi = np.empty(m, dtype=complex)
    xi[0] = z[0]
    xi[half] = z[half]
    idx = np.arange(1, half)
    xi[idx] = (z[idx] + 1j * z[m - idx]) / np.sqrt(2.0)
    xi[m - idx] = np.conj(xi[idx])
    x = np.fft.ifft(np.sqrt(lam) * xi).real * np.sqrt(m)
    return x[:count]


def _sample_cholesky(hv: float, count: int, rng: np.random.Generator) -> np.ndarray:
    """One row of unit-step fGN via dense Cholesky of the Toeplitz covariance."""
    gamma = fgn_autocovariance(hv, np.arange(count), 1.0)
    idx = np.arange(count)
    cov = gamma[np.abs(idx[:, None] - idx[None, :])]
    chol = np.linalg.cholesky(cov)
    return chol @ rng.standard_normal(count)


def sample_fgn(spec: FgnSpec) -> np.ndarray:
    """Sample a (dims, count) matrix of fGN increments, exact in law.

    Rows are mutually independent; each row is stationary Gaussian with
    autocovariance `fgn_autocovariance(spec.h, lag, spec.step)`. Identical
    (spec, seed) pairs yield bit-identical output.
    """
    hv = spec.h.value
    children = np.random.SeedSequence(spec.seed).spawn(spec.dims)
    out = np.empty((spec.dims, spec.count))
    for j, child in enumerate(children):
        rng = np.random.default_rng(child)
        if spec.count < _CHOLESKY_CUTOFF:
            row = _sample_cholesky(hv, spec.count, rng)
        else:
            try:
                row = _sample_circulant(hv, spec.count, rng)
            except CirculantNotPSD:
                row = _sample_cholesky(hv, spec.count, rng)
        out[j] = row
    out *= spec.step**hv
    return out


def cumulate(increments: np.ndarray) -> np.ndarray:
    """Prefix-sum increments along the last axis, prepending B_0 = 0.

    Differencing the output along the last axis recovers the input exactly.
    """
    inc = np.asarray(increments, dtype=float)
    zeros = np.zeros(inc.shape[:-1] + (1,))
    if inc.shape[-1] == 0:
        return zeros
    return np.concatenate([zeros, np.cumsum(inc, axis=-1)], axis=-1)
