"""GOE sampling, seeded streams and spectral reference quantities."""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class GoeMatrix:
    """Real symmetric ``n x n`` matrix drawn from the GOE with scale ``lam``.

    Second moments: <H_ij^2> = lam^2/n off the diagonal and 2 lam^2/n on it,
    so that the spectrum fills [-2 lam, 2 lam].
    """

    n: int
    lam: float
    entries: np.ndarray


def stream(master_seed: int, index: int, attempt: int = 0) -> np.random.Generator:
    """Return the random stream for realization ``index`` of a run.

    The stream is a pure function of ``(master_seed, index, attempt)``; the
    ``attempt`` slot reserves an independent substream for resampling after a
    numerical failure.
    """
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(index), int(attempt)))
    return np.random.Generator(np.random.PCG64(seq))


def sample_goe(n: int, lam: float, rng: np.random.Generator) -> GoeMatrix:
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidArgument(f"GOE dimension must be a positive integer, got {n!r}")
    if not lam > 0:
        raise InvalidArgument(f"energy scale lambda must be positive, got {lam!r}")
    iu = _upper_indices(int(n))
    x = rng.standard_normal(iu[0].size) * (lam / np.sqrt(n))
    h = np.empty((n, n))
    h[iu] = x
    h.T[iu] = x
    h[np.diag_indices(n)] *= np.sqrt(2.0)
    return GoeMatrix(int(n), float(lam), h)


@functools.lru_cache(maxsize=8)
def _upper_indices(n):
    return np.triu_indices(n)


def semicircle_density(e, lam: float, n: int):
    """Average level density N/(pi lam) sqrt(1 - (E/2lam)^2), zero outside the band."""
    if not lam > 0:
        raise InvalidArgument("lambda must be positive")
    e = np.asarray(e, dtype=float)
    x = e / (2.0 * lam)
    rho = n / (np.pi * lam) * np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    return rho if rho.ndim else float(rho)


def mean_level_spacing(lam: float, n: int) -> float:
    """Mean level spacing d = pi lam / N at the band centre."""
    if n < 1 or not lam > 0:
        raise InvalidArgument("need n >= 1 and lambda > 0")
    return np.pi * lam / n


def average_xi(e: float, lam: float) -> complex:
    """Large-N ensemble average of lam * G_mm(E) for |E| <= 2 lam.

    Equals -i at the band centre; the magnitude is one throughout the band.
    """
    x = e / lam
    if abs(x) > 2.0:
        raise InvalidArgument("energy outside the GOE band")
    return complex(0.5 * x, -np.sqrt(1.0 - 0.25 * x * x))
