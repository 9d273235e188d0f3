"""One-step-ahead predictions from fitted coefficient curves.

Predictions cover the cells t = t0+1 .. T that have all required lags;
reported mean squared errors average over exactly those n*(T-t0) cells.

For models with an MA part the residual regressors come either from a stored
residual history (the filter's own innovations, the default when re-scoring
the fitted panel) or, on fresh data, from rerunning the residual recursion
with the fitted curves.  The recursion is only stable when the fitted MA
part is invertible; it aborts rather than returning garbage when residuals
blow up.
"""

from __future__ import annotations

import numpy as np

from .exceptions import DivergenceError
from .model import FitResult, PanelSeries
from .spatial import WeightMatrixSet

__all__ = ["predict_one_step", "one_step_mse"]


def predict_one_step(
    fit: FitResult,
    panel: PanelSeries,
    weights: WeightMatrixSet,
    residual_history: np.ndarray | None = None,
) -> np.ndarray:
    """(T - t0) x n matrix of one-step predictions zhat(t/T), t = t0+1 .. T.

    ``residual_history``, when given, supplies the MA regressors: row r is
    the residual at time t0+1+r (the layout of ``FitResult.innovations``).
    """
    spec = fit.spec
    Z = panel.values
    T, n = Z.shape
    t0 = fit.t0
    if n != weights.n:
        raise ValueError(f"panel has {n} stations but weight set has {weights.n}")
    if spec.max_spatial_order > weights.max_order:
        raise ValueError(
            f"model needs spatial order {spec.max_spatial_order}, weight set "
            f"provides up to {weights.max_order}"
        )
    if T <= t0:
        raise ValueError(f"panel length {T} leaves no predictable cells (t0={t0})")
    for curves in (fit.phi_curves, fit.theta_curves):
        for (s, l), c in curves.items():
            if c.shape != (T,):
                raise ValueError(
                    f"curve for lag ({s},{l}) has length {c.shape[0]}, panel has T={T}"
                )

    lagged = {
        (s, l): Z[t0 - s : T - s, :] @ weights.order(l).T
        for (s, l) in spec.ar_pairs
    }

    if spec.q == 0:
        preds = np.zeros((T - t0, n))
        for (s, l), R in lagged.items():
            preds += fit.phi_curves[(s, l)][t0:, None] * R
        return preds

    nu = np.zeros((T + 1, n))  # nu[t] = residual at time t; zero for t <= t0
    if residual_history is not None:
        if residual_history.shape != (T - t0, n):
            raise ValueError(
                f"residual history shape {residual_history.shape} does not match "
                f"({T - t0}, {n})"
            )
        nu[t0 + 1 :] = residual_history
        track = False
    else:
        track = True

    preds = np.zeros((T - t0, n))
    Wmats = {l: weights.order(l) for l in range(weights.max_order + 1)}
    for t in range(t0 + 1, T + 1):
        zhat = np.zeros(n)
        for (s, l), curve in fit.phi_curves.items():
            zhat += curve[t - 1] * (Wmats[l] @ Z[t - s - 1])
        for (s, l), curve in fit.theta_curves.items():
            zhat += curve[t - 1] * (Wmats[l] @ nu[t - s])
        preds[t - t0 - 1] = zhat
        if track:
            nu[t] = Z[t - 1] - zhat
            if np.max(np.abs(nu[t])) > 1e8:
                raise DivergenceError(
                    f"residual recursion exceeded 1e8 at t={t}; the fitted MA "
                    "part is not invertible on this panel"
                )
    return preds


def one_step_mse(panel: PanelSeries, predictions: np.ndarray, t0: int) -> float:
    """Mean squared one-step error over the n*(T-t0) predictable cells."""
    actual = panel.values[t0:, :]
    if predictions.shape != actual.shape:
        raise ValueError(
            f"predictions shape {predictions.shape} does not match {actual.shape}"
        )
    return float(np.mean((actual - predictions) ** 2))
