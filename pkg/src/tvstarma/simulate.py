"""Synthetic data generators: tvSTAR/tvSTARMA paths, space-time Gaussian
random fields, and random station geometries.

All generators are deterministic given a seed.  Replicate batches should
derive per-replicate seeds with ``numpy.random.SeedSequence(base).spawn(M)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .exceptions import CovarianceFactorizationError, DivergenceError
from .model import PanelSeries
from .spatial import (
    StationGeometry,
    WeightMatrixSet,
    distance_matrix,
    great_circle_distance,
)

__all__ = [
    "CoefficientFunctions",
    "preset_group1",
    "preset_group2",
    "simulate_tvstar",
    "simulate_tvstarma",
    "GneitingCovarianceSpec",
    "gneiting_covariance",
    "GrfSampler",
    "simulate_grf",
    "random_geometry",
]

# Dense factorization guard: covariance is (n*T) x (n*T).
MAX_GRF_CELLS = 32768


# Preset coefficient functions of rescaled time u = t/T.  Module-level (not
# closures) so coefficient sets stay picklable for parallel study runs.
def _g1_phi10(u):
    return 0.5 - np.sin(2.0 * np.pi * u) / 4.0


def _g1_phi11(u):
    return -0.5 - np.cos(2.0 * np.pi * u) / 4.0


def _g2_phi10(u):
    return 0.5 * (1.0 - u) ** 2


def _g2_phi11(u):
    return -0.5 * (1.0 - u) ** 2


def _g2_theta10(u):
    return 0.5 * u**2


def _g2_theta11(u):
    return -0.5 * u**2


@dataclass(frozen=True)
class CoefficientFunctions:
    """Time-varying coefficients keyed by (time lag, spatial lag).

    Callables take rescaled time u in (0, 1] and must accept numpy arrays.
    """

    phi: dict[tuple[int, int], object]
    theta: dict[tuple[int, int], object] = field(default_factory=dict)
    preset: str = "custom"

    @property
    def max_time_lag(self) -> int:
        lags = [s for s, _ in self.phi] + [s for s, _ in self.theta]
        return max(lags, default=0)

    @property
    def max_spatial_order(self) -> int:
        orders = [l for _, l in self.phi] + [l for _, l in self.theta]
        return max(orders, default=0)

    def phi_on_grid(self, u: np.ndarray) -> dict[tuple[int, int], np.ndarray]:
        return {k: np.broadcast_to(np.asarray(f(u), float), u.shape).copy()
                for k, f in self.phi.items()}

    def theta_on_grid(self, u: np.ndarray) -> dict[tuple[int, int], np.ndarray]:
        return {k: np.broadcast_to(np.asarray(f(u), float), u.shape).copy()
                for k, f in self.theta.items()}


def preset_group1() -> CoefficientFunctions:
    """Sinusoidal AR pair: phi10 = 0.5 - sin(2 pi u)/4, phi11 = -0.5 - cos(2 pi u)/4."""
    return CoefficientFunctions(
        phi={(1, 0): _g1_phi10, (1, 1): _g1_phi11}, theta={}, preset="group1"
    )


def preset_group2() -> CoefficientFunctions:
    """Quadratic AR/MA set: phi = +/-0.5(1-u)^2, theta = +/-0.5 u^2."""
    return CoefficientFunctions(
        phi={(1, 0): _g2_phi10, (1, 1): _g2_phi11},
        theta={(1, 0): _g2_theta10, (1, 1): _g2_theta11},
        preset="group2",
    )


PRESETS = {"group1": preset_group1, "group2": preset_group2}


def _simulate_arma(
    funcs: CoefficientFunctions,
    weights: WeightMatrixSet,
    T: int,
    n: int,
    sigma2: float,
    seed,
) -> PanelSeries:
    if n != weights.n:
        raise ValueError(f"requested n={n} but weight set has {weights.n} stations")
    if funcs.max_spatial_order > weights.max_order:
        raise ValueError(
            f"coefficients need spatial order {funcs.max_spatial_order}, weight "
            f"set provides up to {weights.max_order}"
        )
    if T < 1:
        raise ValueError(f"series length must be >= 1, got {T}")
    if sigma2 < 0:
        raise ValueError(f"innovation variance must be >= 0, got {sigma2}")

    u = np.arange(1, T + 1, dtype=float) / T
    phi = funcs.phi_on_grid(u)
    theta = funcs.theta_on_grid(u)
    Wmats = {l: weights.order(l) for l in range(weights.max_order + 1)}

    rng = np.random.default_rng(seed)
    eps = rng.normal(0.0, np.sqrt(sigma2), size=(T, n))
    z = np.zeros((T, n))
    for t in range(1, T + 1):
        acc = eps[t - 1].copy()
        for (s, l), coef in phi.items():
            if t - s >= 1:
                acc += coef[t - 1] * (Wmats[l] @ z[t - s - 1])
        for (s, l), coef in theta.items():
            if t - s >= 1:
                acc += coef[t - 1] * (Wmats[l] @ eps[t - s - 1])
        z[t - 1] = acc
        if np.max(np.abs(acc)) > 1e8:
            raise DivergenceError(
                f"simulated trajectory exceeded 1e8 at t={t}; "
                "coefficient functions are explosive for this weight matrix"
            )
    ids = tuple(f"s{i + 1:02d}" for i in range(n))
    return PanelSeries(values=z, ids=ids)


def simulate_tvstar(
    funcs: CoefficientFunctions,
    weights: WeightMatrixSet,
    T: int,
    n: int,
    sigma2: float = 1.0,
    seed=None,
) -> PanelSeries:
    """Iterate z(t/T) = sum phi_sl(t/T) W^(l) z((t-s)/T) + eps(t/T), z(0) = 0.

    Innovations are i.i.d. N(0, sigma2 I_n).  Rejects coefficient sets with
    an MA part.
    """
    if funcs.theta:
        raise ValueError("tvSTAR generator takes AR-only coefficients (theta empty)")
    return _simulate_arma(funcs, weights, T, n, sigma2, seed)


def simulate_tvstarma(
    funcs: CoefficientFunctions,
    weights: WeightMatrixSet,
    T: int,
    n: int,
    sigma2: float = 1.0,
    seed=None,
) -> PanelSeries:
    """tvSTAR recursion plus MA terms + theta_sl(t/T) W^(l) eps((t-s)/T), eps(0) = 0.

    MA terms carry a plus sign; the estimators use the same convention, so
    recovered theta curves are directly comparable with the generating ones.
    With all theta absent the output is bitwise identical to simulate_tvstar
    under the same seed.
    """
    return _simulate_arma(funcs, weights, T, n, sigma2, seed)


@dataclass(frozen=True)
class GneitingCovarianceSpec:
    """Nonseparable space-time covariance with exponential spatial profile.

    cov(h, tau) = sigma2 / beta(|tau|)^(d/2) * exp(-(h / sqrt(beta(|tau|))) / gamma)
    with beta(f) = (f^zeta + 1)^(delta/zeta), plus a nugget at (h, tau) = (0, 0).
    """

    sigma2: float = 1.0
    zeta: float = 1.0
    delta: float = 1.0
    gamma: float = 1.0
    nugget: float = 0.05
    d: int = 2

    def __post_init__(self):
        if self.sigma2 <= 0 or self.zeta <= 0 or self.delta <= 0 or self.gamma <= 0:
            raise ValueError("sigma2, zeta, delta, gamma must all be positive")
        if self.nugget < 0:
            raise ValueError(f"nugget must be >= 0, got {self.nugget}")


def gneiting_covariance(h, tau, spec: GneitingCovarianceSpec):
    """Evaluate the covariance at spatial distance h and time lag tau.

    Vectorized; the nugget contributes only where h == 0 and tau == 0.
    """
    h = np.asarray(h, dtype=float)
    tau = np.asarray(tau, dtype=float)
    beta = (np.abs(tau) ** spec.zeta + 1.0) ** (spec.delta / spec.zeta)
    val = spec.sigma2 / beta ** (spec.d / 2.0) * np.exp(
        -(h / np.sqrt(beta)) / spec.gamma
    )
    val = val + spec.nugget * ((h == 0.0) & (tau == 0.0))
    return float(val) if val.ndim == 0 else val


class GrfSampler:
    """Zero-mean Gaussian panel sampler for a fixed geometry and covariance.

    The (nT x nT) covariance over all (time, station) cells is built once and
    Cholesky-factorized (with a jitter retry); draws are then cheap, which is
    what makes replicate studies with a shared covariance affordable.

    Spatial distances are great-circle km, by default rescaled by their
    maximum over the geometry (the same convention as the weight matrices),
    so the gamma ranges used with normalized weights stay meaningful.
    """

    def __init__(
        self,
        geom: StationGeometry,
        T: int,
        spec: GneitingCovarianceSpec,
        normalize_distances: bool = True,
    ):
        n = geom.n
        if n * T > MAX_GRF_CELLS:
            raise ValueError(
                f"n*T = {n * T} exceeds the dense-factorization guard "
                f"({MAX_GRF_CELLS}); reduce the panel size"
            )
        self.geom = geom
        self.T = T
        self.spec = spec
        dist = distance_matrix(geom, normalized=normalize_distances)

        lags = np.arange(T, dtype=float)
        beta = (lags**spec.zeta + 1.0) ** (spec.delta / spec.zeta)
        # one n x n cross-covariance block per time lag
        blocks = spec.sigma2 / beta[:, None, None] ** (spec.d / 2.0) * np.exp(
            -(dist[None, :, :] / np.sqrt(beta)[:, None, None]) / spec.gamma
        )
        cov = np.empty((T, n, T, n))
        for lag in range(T):
            idx = np.arange(T - lag)
            cov[idx + lag, :, idx, :] = blocks[lag]
            cov[idx, :, idx + lag, :] = blocks[lag]
        cov = cov.reshape(T * n, T * n)
        cov[np.diag_indices_from(cov)] += spec.nugget
        try:
            self._chol = sla.cholesky(cov, lower=True, check_finite=False)
        except sla.LinAlgError:
            jitter = 1e-8 * spec.sigma2
            cov[np.diag_indices_from(cov)] += jitter
            try:
                self._chol = sla.cholesky(
                    cov, lower=True, check_finite=False, overwrite_a=True
                )
            except sla.LinAlgError as exc:
                raise CovarianceFactorizationError(
                    f"space-time covariance (n={n}, T={T}, {spec}) is not "
                    f"positive definite even after jitter {jitter:.1e}: {exc}"
                ) from exc

    def draw(self, seed=None) -> PanelSeries:
        """One zero-mean Gaussian panel; deterministic given the seed."""
        rng = np.random.default_rng(seed)
        x = self._chol @ rng.standard_normal(self.T * self.geom.n)
        return PanelSeries(values=x.reshape(self.T, self.geom.n), ids=self.geom.ids)


def simulate_grf(
    geom: StationGeometry,
    T: int,
    spec: GneitingCovarianceSpec,
    seed=None,
    normalize_distances: bool = True,
) -> PanelSeries:
    """One-shot GRF draw; use GrfSampler directly for repeated draws."""
    return GrfSampler(geom, T, spec, normalize_distances).draw(seed)


def random_geometry(
    n: int,
    lat_range: tuple[float, float] = (36.0, 49.0),
    lon_range: tuple[float, float] = (-104.0, -80.0),
    seed=None,
    min_separation_km: float = 1.0,
) -> StationGeometry:
    """Uniform station locations in a lat/lon box (default: US Midwest window).

    Candidates closer than ``min_separation_km`` to an accepted station are
    rejected and redrawn, so all pairwise distances are strictly positive.
    """
    if n < 2:
        raise ValueError(f"need at least 2 stations, got {n}")
    rng = np.random.default_rng(seed)
    lats: list[float] = []
    lons: list[float] = []
    attempts = 0
    while len(lats) < n:
        attempts += 1
        if attempts > 1000 * n:
            raise RuntimeError(
                f"could not place {n} stations at least {min_separation_km} km "
                "apart in the requested box"
            )
        la = rng.uniform(*lat_range)
        lo = rng.uniform(*lon_range)
        if lats and min(
            great_circle_distance((la, lo), p) for p in zip(lats, lons)
        ) < min_separation_km:
            continue
        lats.append(la)
        lons.append(lo)
    width = max(2, len(str(n)))
    ids = tuple(f"s{i + 1:0{width}d}" for i in range(n))
    return StationGeometry(
        ids=ids, latitudes=np.array(lats), longitudes=np.array(lons)
    )
