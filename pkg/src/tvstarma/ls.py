"""Design matrix assembly and least-squares estimation for tvSTAR models.

The stacked regression has one row per (station, time) cell, grouped by
station block with times p+1 .. T inside each block; the response vector is
stacked identically.  Columns pair a dictionary function with a lagged
regressor: entry for row (i, t) and column ((j,k), (s,l)) is

    psi_jk(t/T) * [W^(l) z((t-s)/T)]_i

with the dictionary index (j,k) outermost and the lag pair (s,l) innermost,
so the raw solution comes out in dictionary-major order and is re-grouped
into the canonical per-lag-pair layout (see :mod:`tvstarma.model`) before it
is returned.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import RankDeficiencyError
from .model import FitResult, ModelSpec, PanelSeries
from .prediction import one_step_mse, predict_one_step
from .spatial import WeightMatrixSet
from .wavelets import WaveletDictionary, build_dictionary

__all__ = ["DesignMatrix", "build_design", "fit_ls", "predict_one_step", "one_step_mse"]

# Smallest-to-largest singular value ratio below which the design is treated
# as rank deficient.
RANK_TOLERANCE = 1e-10


@dataclass(frozen=True)
class DesignMatrix:
    """Stacked regressor matrix for a pure-AR specification.

    ``matrix`` is N x K with N = n*(T-p) and K = s_a * 2^J.
    """

    matrix: np.ndarray
    spec: ModelSpec
    T: int
    n: int

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]


def _lagged_regressors(
    Z: np.ndarray, weights: WeightMatrixSet, pairs, t0: int
) -> np.ndarray:
    """(T-t0, n_pairs, n) stack of [W^(l) z(t-s)]_i for t = t0+1 .. T."""
    T = Z.shape[0]
    out = np.empty((T - t0, len(pairs), Z.shape[1]))
    for c, (s, l) in enumerate(pairs):
        out[:, c, :] = Z[t0 - s : T - s, :] @ weights.order(l).T
    return out


def build_design(
    panel: PanelSeries,
    weights: WeightMatrixSet,
    spec: ModelSpec,
    dictionary: WaveletDictionary,
) -> DesignMatrix:
    """Assemble the stacked tvSTAR regression matrix.

    Requires spec.q == 0 and a dictionary tabulated for this panel's length
    and the spec's resolution.
    """
    if spec.q != 0:
        raise ValueError("least-squares design is defined for pure AR models (q=0)")
    T, n = panel.T, panel.n
    if n != weights.n:
        raise ValueError(f"panel has {n} stations but weight set has {weights.n}")
    if spec.max_spatial_order > weights.max_order:
        raise ValueError(
            f"model needs spatial order {spec.max_spatial_order}, weight set "
            f"provides up to {weights.max_order}"
        )
    if dictionary.T != T or dictionary.J != spec.J:
        raise ValueError(
            f"dictionary built for (T={dictionary.T}, J={dictionary.J}) does not "
            f"match panel T={T}, spec J={spec.J}"
        )
    if T <= spec.p:
        raise ValueError(f"panel length {T} must exceed the AR order p={spec.p}")
    K = spec.s_a * dictionary.n_columns
    N = n * (T - spec.p)
    if K >= N:
        raise ValueError(f"{K} coefficients for {N} stacked rows; need K < N")

    R = _lagged_regressors(panel.values, weights, spec.ar_pairs, spec.p)
    psi = dictionary.values[spec.p :, :]  # rows t = p+1 .. T
    blocks = [
        np.einsum("tj,ts->tjs", psi, R[:, :, i]).reshape(T - spec.p, K)
        for i in range(n)
    ]
    return DesignMatrix(matrix=np.vstack(blocks), spec=spec, T=T, n=n)


def stacked_response(panel: PanelSeries, p: int) -> np.ndarray:
    """Response vector matching the design's station-blocked row order."""
    return panel.values[p:, :].T.reshape(-1)


def _to_canonical(beta_design: np.ndarray, s_a: int, n_wavelets: int) -> np.ndarray:
    # design order is (j,k)-major; regroup into per-lag-pair blocks
    return beta_design.reshape(n_wavelets, s_a).T.reshape(-1)


def fit_ls(design: DesignMatrix, panel: PanelSeries) -> FitResult:
    """Least-squares fit of the wavelet coefficients via SVD.

    Raises
    ------
    RankDeficiencyError
        When the smallest singular value of the design falls below
        RANK_TOLERANCE times the largest.
    """
    spec = design.spec
    if panel.T != design.T or panel.n != design.n:
        raise ValueError("panel does not match the design's dimensions")
    X = design.matrix
    y = stacked_response(panel, spec.p)

    col_norms = np.linalg.norm(X, axis=0)
    if np.any(col_norms == 0.0):
        warnings.warn(
            f"{int(np.sum(col_norms == 0))} design column(s) are identically zero "
            "(constant or degenerate series?); the fit will be rank deficient",
            RuntimeWarning,
            stacklevel=2,
        )

    beta, _, rank, svals = np.linalg.lstsq(X, y, rcond=None)
    if svals[-1] < RANK_TOLERANCE * svals[0]:
        raise RankDeficiencyError(
            f"design is rank deficient: smallest singular value {svals[-1]:.3e} "
            f"vs largest {svals[0]:.3e} (tolerance {RANK_TOLERANCE:g})"
        )

    resid_vec = y - X @ beta
    rss = float(resid_vec @ resid_vec)
    N, K = X.shape
    residuals = resid_vec.reshape(panel.n, panel.T - spec.p).T

    dictionary = build_dictionary(panel.T, spec.J, spec.family)
    beta_can = _to_canonical(beta, spec.s_a, dictionary.n_columns)
    blocks = beta_can.reshape(spec.s_a, dictionary.n_columns)
    phi_curves = {
        pair: dictionary.values @ blocks[c] for c, pair in enumerate(spec.ar_pairs)
    }
    return FitResult(
        method="ls",
        spec=spec,
        t0=spec.p,
        beta_hat=beta_can,
        phi_curves=phi_curves,
        theta_curves={},
        residuals=residuals,
        sigma2_hat=rss / (N - K),
        mse=rss / N,
        innovations=residuals,
        diagnostics={
            "rank": int(rank),
            "smallest_singular_value": float(svals[-1]),
            "largest_singular_value": float(svals[0]),
        },
    )
