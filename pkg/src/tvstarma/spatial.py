"""Station geometry, great-circle distances, and spatial weight matrices.

Weights are row-normalized kernels of the pairwise great-circle distance:
inverse power d^(-alpha) or negative exponential exp(-alpha*d), zero on the
diagonal, each row summing to one.  Order 0 is always the identity.

By default distances are rescaled by their maximum over the geometry before
the kernel is applied, so alpha is comparable across geometries (for the
inverse-power kernel the rescaling cancels in the row normalization; for the
exponential kernel raw-km distances would degenerate to near one-hot rows).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EARTH_RADIUS_KM",
    "StationGeometry",
    "WeightMatrixSet",
    "great_circle_distance",
    "distance_matrix",
    "inverse_distance_weights",
    "negative_exponential_weights",
    "simulation_weights",
    "build_weight_set",
    "spatial_lag",
    "WEIGHT_SCHEMES",
]

EARTH_RADIUS_KM = 6371.0

#: Recognized weight scheme names.
WEIGHT_SCHEMES = ("inverse_distance", "negative_exponential")


@dataclass(frozen=True)
class StationGeometry:
    """Ordered station locations; the order defines the index used everywhere
    downstream (panel columns, weight matrix rows)."""

    ids: tuple[str, ...]
    latitudes: np.ndarray
    longitudes: np.ndarray
    earth_radius_km: float = EARTH_RADIUS_KM

    def __post_init__(self):
        lat = np.asarray(self.latitudes, dtype=float)
        lon = np.asarray(self.longitudes, dtype=float)
        ids = tuple(str(s) for s in self.ids)
        if len(ids) < 2:
            raise ValueError(f"need at least 2 stations, got {len(ids)}")
        if len(set(ids)) != len(ids):
            dupes = sorted({s for s in ids if ids.count(s) > 1})
            raise ValueError(f"duplicate station ids: {dupes}")
        if lat.shape != (len(ids),) or lon.shape != (len(ids),):
            raise ValueError("latitude/longitude arrays must match station count")
        if np.any(np.abs(lat) > 90.0):
            raise ValueError("latitudes must lie in [-90, 90]")
        if np.any(np.abs(lon) > 180.0):
            raise ValueError("longitudes must lie in [-180, 180]")
        lat.setflags(write=False)
        lon.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "latitudes", lat)
        object.__setattr__(self, "longitudes", lon)

    @classmethod
    def from_records(cls, records, earth_radius_km: float = EARTH_RADIUS_KM):
        """Build from an iterable of (id, latitude, longitude) triples."""
        rows = list(records)
        return cls(
            ids=tuple(str(r[0]) for r in rows),
            latitudes=np.array([float(r[1]) for r in rows]),
            longitudes=np.array([float(r[2]) for r in rows]),
            earth_radius_km=earth_radius_km,
        )

    @property
    def n(self) -> int:
        return len(self.ids)

    def subset(self, keep_ids) -> "StationGeometry":
        """Geometry restricted to ``keep_ids``, preserving the original order."""
        keep = set(keep_ids)
        idx = [i for i, s in enumerate(self.ids) if s in keep]
        if len(idx) < 2:
            raise ValueError("subset leaves fewer than 2 stations")
        return StationGeometry(
            ids=tuple(self.ids[i] for i in idx),
            latitudes=self.latitudes[idx].copy(),
            longitudes=self.longitudes[idx].copy(),
            earth_radius_km=self.earth_radius_km,
        )


def great_circle_distance(a, b, radius_km: float = EARTH_RADIUS_KM) -> float:
    """Great-circle distance in km between (lat, lon) pairs in degrees.

    Spherical law of cosines with the arccos argument clamped to [-1, 1] to
    absorb floating-point drift at coincident or antipodal points.
    """
    lat1, lon1 = np.radians(float(a[0])), np.radians(float(a[1]))
    lat2, lon2 = np.radians(float(b[0])), np.radians(float(b[1]))
    arg = np.sin(lat1) * np.sin(lat2) + np.cos(lat1) * np.cos(lat2) * np.cos(
        abs(lon1 - lon2)
    )
    return radius_km * float(np.arccos(np.clip(arg, -1.0, 1.0)))


def distance_matrix(geom: StationGeometry, normalized: bool = False) -> np.ndarray:
    """Pairwise great-circle distances; optionally rescaled by their maximum."""
    lat = np.radians(geom.latitudes)
    lon = np.radians(geom.longitudes)
    arg = np.sin(lat)[:, None] * np.sin(lat)[None, :] + np.cos(lat)[:, None] * np.cos(
        lat
    )[None, :] * np.cos(np.abs(lon[:, None] - lon[None, :]))
    d = geom.earth_radius_km * np.arccos(np.clip(arg, -1.0, 1.0))
    np.fill_diagonal(d, 0.0)
    if normalized:
        dmax = d.max()
        if dmax <= 0.0:
            raise ValueError("all stations coincide; cannot normalize distances")
        d = d / dmax
    return d


def _check_distinct(d: np.ndarray, geom: StationGeometry) -> None:
    off = ~np.eye(geom.n, dtype=bool)
    if np.any(d[off] <= 0.0):
        i, j = np.argwhere((d <= 0.0) & off)[0]
        raise ValueError(
            f"stations {geom.ids[i]!r} and {geom.ids[j]!r} are at zero distance; "
            "weights are undefined for duplicate locations"
        )


def _row_normalize(kernel: np.ndarray) -> np.ndarray:
    np.fill_diagonal(kernel, 0.0)
    return kernel / kernel.sum(axis=1, keepdims=True)


def inverse_distance_weights(
    geom: StationGeometry, alpha: float, normalize_distances: bool = True
) -> np.ndarray:
    """Row-normalized d^(-alpha) weights, zero diagonal."""
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    d = distance_matrix(geom, normalized=normalize_distances)
    _check_distinct(d, geom)
    with np.errstate(divide="ignore"):
        kernel = d**-alpha
    return _row_normalize(kernel)


def negative_exponential_weights(
    geom: StationGeometry, alpha: float, normalize_distances: bool = True
) -> np.ndarray:
    """Row-normalized exp(-alpha*d) weights, zero diagonal."""
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    d = distance_matrix(geom, normalized=normalize_distances)
    _check_distinct(d, geom)
    return _row_normalize(np.exp(-alpha * d))


def simulation_weights(geom: StationGeometry) -> np.ndarray:
    """Inverse-distance weights with alpha = 0.5, the generator default."""
    return inverse_distance_weights(geom, 0.5)


_SCHEME_BUILDERS = {
    "inverse_distance": inverse_distance_weights,
    "negative_exponential": negative_exponential_weights,
}


@dataclass(frozen=True)
class WeightMatrixSet:
    """Spatial weight matrices by order: matrices[0] is the identity,
    matrices[l] for l >= 1 is row-normalized with zero diagonal."""

    matrices: tuple[np.ndarray, ...]
    scheme: str
    alpha: float
    normalize_distances: bool = True

    def __post_init__(self):
        mats = []
        for l, W in enumerate(self.matrices):
            W = np.asarray(W, dtype=float)
            n = W.shape[0]
            if W.shape != (n, n):
                raise ValueError(f"order-{l} matrix is not square: {W.shape}")
            if l == 0:
                if not np.array_equal(W, np.eye(n)):
                    raise ValueError("order-0 matrix must be the identity")
            else:
                if np.any(np.diag(W) != 0.0):
                    raise ValueError(f"order-{l} matrix has nonzero diagonal")
                if np.any(W < 0.0):
                    raise ValueError(f"order-{l} matrix has negative entries")
                if np.max(np.abs(W.sum(axis=1) - 1.0)) > 1e-12:
                    raise ValueError(f"order-{l} matrix rows do not sum to 1")
            W.setflags(write=False)
            mats.append(W)
        object.__setattr__(self, "matrices", tuple(mats))

    @property
    def n(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def max_order(self) -> int:
        return len(self.matrices) - 1

    def order(self, l: int) -> np.ndarray:
        if not 0 <= l <= self.max_order:
            raise ValueError(f"spatial order {l} not available (max {self.max_order})")
        return self.matrices[l]


def build_weight_set(
    geom: StationGeometry,
    scheme: str = "inverse_distance",
    alpha: float = 0.5,
    normalize_distances: bool = True,
    l_max: int = 1,
) -> WeightMatrixSet:
    """Identity plus the order-1 weight matrix for the requested scheme.

    Only first-order neighbourhoods are constructed: there is no agreed rule
    for deriving order-l weights from geometry for l >= 2.
    """
    if scheme not in _SCHEME_BUILDERS:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {WEIGHT_SCHEMES}")
    if l_max != 1:
        raise ValueError(
            f"only l_max=1 is supported (no construction rule for order {l_max} weights)"
        )
    W1 = _SCHEME_BUILDERS[scheme](geom, alpha, normalize_distances)
    return WeightMatrixSet(
        matrices=(np.eye(geom.n), W1),
        scheme=scheme,
        alpha=alpha,
        normalize_distances=normalize_distances,
    )


def spatial_lag(weights: WeightMatrixSet, z: np.ndarray, l: int) -> np.ndarray:
    """Order-l spatial lag: z itself for l = 0, otherwise W^(l) z."""
    z = np.asarray(z, dtype=float)
    if z.shape[0] != weights.n:
        raise ValueError(f"vector length {z.shape[0]} does not match n={weights.n}")
    if l == 0:
        return z
    return weights.order(l) @ z
