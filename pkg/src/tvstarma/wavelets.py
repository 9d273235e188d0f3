"""Dyadic wavelet dictionaries for time-varying coefficient curves.

Coefficient curves are expanded on a dictionary of functions evaluated on the
rescaled-time grid u = t/T, t = 1..T.  The dictionary holds one coarse column
(the constant function, standing in for a scaling function: the Mexican hat
has no orthogonal one) followed by dyadic dilations/translations of a mother
wavelet, 2^(j/2) * psi(2^j u - k) for j = 0..J-1, k = 0..2^j-1.  A resolution
bound J gives exactly 2^J columns.

Wavelets are evaluated raw: no periodization or boundary folding is applied
where the effective support of psi(2^j u - k) leaves [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "mexican_hat",
    "default_resolution",
    "level_pairs",
    "WaveletDictionary",
    "CoefficientCurve",
    "build_dictionary",
    "reconstruct_curve",
    "MOTHER_WAVELETS",
]

_MEXHAT_NORM = 2.0 / (np.sqrt(3.0) * np.pi**0.25)


def mexican_hat(t):
    """Mexican hat mother wavelet, 2/(sqrt(3)*pi^(1/4)) * (1-t^2) * exp(-t^2/2).

    Accepts scalars or arrays; total on all finite inputs.
    """
    t = np.asarray(t, dtype=float)
    out = _MEXHAT_NORM * (1.0 - t * t) * np.exp(-0.5 * t * t)
    return float(out) if out.ndim == 0 else out


#: Registry of available mother wavelets, keyed by family name.
MOTHER_WAVELETS = {"mexican_hat": mexican_hat}


def default_resolution(T: int, n: int = 2) -> int:
    """Smallest resolution bound J with 2^J >= sqrt(T).

    Integer arithmetic only (4^J >= T), so exact at powers of two.
    """
    if T < 2:
        raise ValueError(f"series length must be >= 2, got {T}")
    if n < 2:
        raise ValueError(f"station count must be >= 2, got {n}")
    J = 1
    while 4**J < T:
        J += 1
    return J


def level_pairs(J: int) -> list[tuple[int, int]]:
    """Column order of a resolution-J dictionary: (-1,0), (0,0), (1,0), (1,1), ..."""
    pairs = [(-1, 0)]
    for j in range(J):
        pairs.extend((j, k) for k in range(2**j))
    return pairs


@dataclass(frozen=True)
class WaveletDictionary:
    """Tabulated wavelet dictionary on the grid u = t/T, t = 1..T.

    ``values`` is T x 2^J; column c holds the function for ``pairs[c]``.
    Immutable after construction; safe for concurrent reads.
    """

    T: int
    J: int
    family: str
    values: np.ndarray
    pairs: tuple[tuple[int, int], ...] = field(repr=False)

    @property
    def n_columns(self) -> int:
        return 2**self.J

    def column(self, j: int, k: int) -> np.ndarray:
        return self.values[:, self.pairs.index((j, k))]

    @property
    def grid(self) -> np.ndarray:
        """Rescaled times u = t/T for t = 1..T."""
        return np.arange(1, self.T + 1, dtype=float) / self.T


@dataclass(frozen=True)
class CoefficientCurve:
    """A coefficient trajectory on the rescaled-time grid, tagged by its
    (time lag, spatial lag) pair."""

    values: np.ndarray
    lag: tuple[int, int] | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not np.isfinite(v).all():
            raise ValueError("coefficient curve contains non-finite values")
        object.__setattr__(self, "values", v)


@lru_cache(maxsize=64)
def build_dictionary(T: int, J: int, family: str = "mexican_hat") -> WaveletDictionary:
    """Tabulate the 2^J dictionary functions at u = 1/T, 2/T, ..., 1.

    Results are cached per (T, J, family); the returned object is immutable,
    so sharing across callers and threads is safe.

    Parameters
    ----------
    T : series length (>= 2)
    J : resolution bound; J = 0 yields the intercept-only dictionary.
        Rejected when 2^J >= T (would leave least squares underdetermined).
    family : key into ``MOTHER_WAVELETS``

    Returns
    -------
    WaveletDictionary
    """
    if T < 2:
        raise ValueError(f"series length must be >= 2, got {T}")
    if J < 0:
        raise ValueError(f"resolution bound must be >= 0, got {J}")
    if 2**J >= T:
        raise ValueError(
            f"resolution bound J={J} gives 2^J={2**J} columns for only {T} grid "
            "points; require 2^J < T"
        )
    try:
        psi = MOTHER_WAVELETS[family]
    except KeyError:
        raise ValueError(
            f"unknown wavelet family {family!r}; available: {sorted(MOTHER_WAVELETS)}"
        ) from None

    u = np.arange(1, T + 1, dtype=float) / T
    pairs = level_pairs(J)
    values = np.empty((T, len(pairs)))
    values[:, 0] = 1.0  # coarse column: intercept basis
    for c, (j, k) in enumerate(pairs[1:], start=1):
        values[:, c] = 2.0 ** (j / 2.0) * psi(2**j * u - k)
    if not np.isfinite(values).all():
        raise FloatingPointError("wavelet dictionary contains non-finite entries")
    values.setflags(write=False)
    return WaveletDictionary(T=T, J=J, family=family, values=values, pairs=tuple(pairs))


def reconstruct_curve(
    coeffs: np.ndarray,
    dictionary: WaveletDictionary,
    lag: tuple[int, int] | None = None,
) -> CoefficientCurve:
    """Linear combination of dictionary columns: values[t] = sum_c coeffs[c] * psi_c(t/T)."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (dictionary.n_columns,):
        raise ValueError(
            f"expected {dictionary.n_columns} coefficients, got shape {coeffs.shape}"
        )
    return CoefficientCurve(values=dictionary.values @ coeffs, lag=lag)
