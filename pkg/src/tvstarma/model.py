"""Model orders, data panels, and fit results shared by the estimators.

Coefficient layout convention
-----------------------------
A fitted coefficient vector is stored grouped by lag pair: one block of 2^J
wavelet coefficients per AR pair (s, l) in specification order, followed by
one block per MA pair.  Within a block, coefficients follow the dictionary
column order (-1,0), (0,0), (1,0), (1,1), ...

Sign convention: fitted models read

    z(t/T) = sum phi_sl(t/T) W^(l) z((t-s)/T)
           + sum theta_sl(t/T) W^(l) nu((t-s)/T) + nu(t/T)

i.e. the MA curves enter with a plus sign, matching the simulators in
:mod:`tvstarma.simulate`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["ModelSpec", "PanelSeries", "FitResult"]


@dataclass(frozen=True)
class ModelSpec:
    """Orders of a tvSTAR / tvSTARMA model and the wavelet resolution.

    ``lam[s-1]`` is the spatial order of the s-th AR lag, ``m[s-1]`` of the
    s-th MA lag (empty for a pure AR model).
    """

    p: int
    lam: tuple[int, ...]
    q: int = 0
    m: tuple[int, ...] = ()
    J: int = 2
    family: str = "mexican_hat"

    def __post_init__(self):
        object.__setattr__(self, "lam", tuple(int(v) for v in self.lam))
        object.__setattr__(self, "m", tuple(int(v) for v in self.m))
        if self.p < 1:
            raise ValueError(f"AR order p must be >= 1, got {self.p}")
        if len(self.lam) != self.p:
            raise ValueError(f"expected {self.p} spatial AR orders, got {len(self.lam)}")
        if self.q < 0 or len(self.m) != self.q:
            raise ValueError(f"expected {self.q} spatial MA orders, got {len(self.m)}")
        if any(v < 0 for v in self.lam) or any(v < 0 for v in self.m):
            raise ValueError("spatial orders must be >= 0")
        if self.J < 0:
            raise ValueError(f"resolution bound must be >= 0, got {self.J}")

    @property
    def s_a(self) -> int:
        """Number of AR lag pairs, sum over s of (1 + lam_s)."""
        return sum(1 + v for v in self.lam)

    @property
    def s_m(self) -> int:
        return sum(1 + v for v in self.m)

    @property
    def ar_pairs(self) -> list[tuple[int, int]]:
        return [(s, l) for s in range(1, self.p + 1) for l in range(self.lam[s - 1] + 1)]

    @property
    def ma_pairs(self) -> list[tuple[int, int]]:
        return [(s, l) for s in range(1, self.q + 1) for l in range(self.m[s - 1] + 1)]

    @property
    def max_spatial_order(self) -> int:
        return max(self.lam + self.m + (0,))

    @property
    def max_time_lag(self) -> int:
        return max(self.p, self.q)

    def n_coefficients(self) -> int:
        return 2**self.J * (self.s_a + self.s_m)

    def label(self) -> str:
        """Compact order label, e.g. 'tvSTARMA(1_1,1_1)'."""
        ar = ",".join(f"{s}_{l}" for s, l in zip(range(1, self.p + 1), self.lam))
        if self.q == 0:
            return f"tvSTAR({ar})"
        ma = ",".join(f"{s}_{l}" for s, l in zip(range(1, self.q + 1), self.m))
        return f"tvSTARMA({ar};{ma})"


@dataclass(frozen=True)
class PanelSeries:
    """T x n panel of observations; column order matches the station ids."""

    values: np.ndarray
    ids: tuple[str, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        ids = tuple(str(s) for s in self.ids)
        if v.ndim != 2:
            raise ValueError(f"panel must be 2-d (T x n), got shape {v.shape}")
        if v.shape[1] != len(ids):
            raise ValueError(
                f"panel has {v.shape[1]} columns but {len(ids)} station ids"
            )
        if not np.isfinite(v).all():
            t, i = np.argwhere(~np.isfinite(v))[0]
            raise ValueError(
                f"panel contains a non-finite value at t={t + 1}, station {ids[i]!r}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "ids", ids)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FitResult:
    """Estimation output shared by the least-squares and filter paths.

    ``beta_hat`` follows the canonical per-lag-pair block layout documented in
    the module docstring.  ``residuals`` are the one-step prediction errors
    z - zhat for t = t0+1 .. T computed with the *final* coefficient curves;
    for the recursive filter, ``innovations`` additionally keeps the online
    innovation sequence produced while filtering.
    """

    method: str
    spec: ModelSpec
    t0: int
    beta_hat: np.ndarray
    phi_curves: dict[tuple[int, int], np.ndarray]
    theta_curves: dict[tuple[int, int], np.ndarray]
    residuals: np.ndarray
    sigma2_hat: float
    mse: float
    sigma_hat: np.ndarray | None = None
    innovations: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mse < 0:
            raise ValueError("mse must be nonnegative")

    @property
    def ar_blocks(self) -> np.ndarray:
        """(s_a, 2^J) wavelet coefficients, one row per AR pair."""
        w = 2**self.spec.J
        return self.beta_hat[: self.spec.s_a * w].reshape(self.spec.s_a, w)

    @property
    def ma_blocks(self) -> np.ndarray:
        w = 2**self.spec.J
        return self.beta_hat[self.spec.s_a * w :].reshape(self.spec.s_m, w)
