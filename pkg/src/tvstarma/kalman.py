"""Recursive (Kalman/RLS) estimation of tvSTARMA wavelet coefficients.

The coefficient vector c = (a, b) stacks the AR and MA wavelet coefficients
in the canonical per-lag-pair layout.  With the regressor matrix Y(t/T) built
from lagged observations and lagged filter residuals, the observation model
is z(t/T) = Y(t/T) c + nu(t/T) with a static state (c constant), so the
filter reduces to multivariate recursive least squares:

    S      = Y P Y' + Sigma
    gain   = P Y' S^-1
    c_new  = c + gain (z - Y c)
    P_new  = P - gain Y P          (symmetrized each step)
    nu_new = z - Y c_new

Sigma is re-estimated as a running average of residual outer products with
denominator t - (s_a + s_m).  That average only becomes well defined once it
has absorbed enough residuals: updates are deferred while t <= s_a + s_m + n,
which both keeps the printed denominator positive and leaves the h*I
initialization carrying n pseudo-counts when updates begin, so Sigma stays
positive definite instead of collapsing to a low-rank outer-product sum (a
rank-deficient Sigma makes the gain wildly overconfident and the filter
diverges).

MA regressor columns enter with a plus sign, matching the simulators: the
fitted model reads z = sum phi W z + sum theta W nu + nu, so the recovered
theta curves are directly comparable with the generating ones.

Residual lags before the start are zero.  One forward pass only; no
smoothing or likelihood iteration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla

from .exceptions import DivergenceError, NumericalError
from .model import FitResult, ModelSpec, PanelSeries
from .prediction import one_step_mse, predict_one_step
from .spatial import WeightMatrixSet
from .wavelets import WaveletDictionary, build_dictionary

__all__ = [
    "KalmanConfig",
    "KalmanState",
    "build_regressor",
    "kalman_step",
    "fit_kalman",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KalmanConfig:
    """Tuning knobs for the recursive estimator.

    h
        Initial innovation-covariance scale, Sigma_0 = h * I.
    p0_scale
        Initial coefficient-covariance scale, P_0 = p0_scale * I.  Large
        values give a diffuse start whose endpoint matches batch least
        squares on the same rows.
    t0
        Index of the last time treated as known before filtering starts;
        defaults to max(p, q).
    sigma_freeze
        If set, Sigma is held fixed at sigma_freeze * I (pure RLS mode).
    divergence_limit
        Abort when the coefficient norm exceeds this.
    record_trace
        Keep a per-step (t, |c|, tr P, tr Sigma) trace in the diagnostics.
    """

    h: float = 0.01
    p0_scale: float = 1.0
    t0: int | None = None
    sigma_freeze: float | None = None
    divergence_limit: float = 1e6
    record_trace: bool = False

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError(f"h must be positive, got {self.h}")
        if self.p0_scale <= 0:
            raise ValueError(f"p0_scale must be positive, got {self.p0_scale}")


@dataclass(frozen=True)
class KalmanState:
    """Filter state after absorbing the observation at time ``t``.

    ``nu_lags`` holds the last max(q, 1) residual vectors, most recent first.
    """

    t: int
    c_hat: np.ndarray
    P: np.ndarray
    sigma_hat: np.ndarray
    nu_lags: tuple[np.ndarray, ...]
    ridge_fallbacks: int = 0


def initial_state(spec: ModelSpec, n: int, cfg: KalmanConfig) -> KalmanState:
    """State at t0: zero coefficients, identity-scaled P, Sigma = h*I."""
    K = spec.n_coefficients()
    t0 = cfg.t0 if cfg.t0 is not None else spec.max_time_lag
    if t0 < spec.max_time_lag:
        raise ValueError(f"t0={t0} is below the largest model lag {spec.max_time_lag}")
    sigma0 = cfg.sigma_freeze if cfg.sigma_freeze is not None else cfg.h
    return KalmanState(
        t=t0,
        c_hat=np.zeros(K),
        P=cfg.p0_scale * np.eye(K),
        sigma_hat=sigma0 * np.eye(n),
        nu_lags=tuple(np.zeros(n) for _ in range(max(spec.q, 1))),
    )


def build_regressor(
    t: int,
    panel: PanelSeries,
    nu_lags,
    weights: WeightMatrixSet,
    spec: ModelSpec,
    dictionary: WaveletDictionary,
) -> np.ndarray:
    """n x 2^J*(s_a+s_m) regressor matrix Y(t/T) for the observation at time t.

    Row i holds, for each AR pair (s, l) and dictionary column (j, k),
    psi_jk(t/T) * [W^(l) z((t-s)/T)]_i, followed by the MA blocks
    psi_jk(t/T) * [W^(l) nu((t-s)/T)]_i built from ``nu_lags`` (a sequence
    with nu_lags[s-1] = residual at time t-s; zero-filled during burn-in).
    """
    if t <= spec.max_time_lag:
        raise ValueError(f"time index {t} does not leave room for the model lags")
    if t > panel.T:
        raise ValueError(f"time index {t} exceeds the panel length {panel.T}")
    n = panel.n
    Z = panel.values
    rows = [
        weights.order(l) @ Z[t - s - 1] if l else Z[t - s - 1]
        for (s, l) in spec.ar_pairs
    ]
    for s, l in spec.ma_pairs:
        nu = np.asarray(nu_lags[s - 1], dtype=float)
        rows.append(weights.order(l) @ nu if l else nu)
    reg = np.stack(rows)  # (s_a + s_m, n)
    psi = dictionary.values[t - 1]
    return np.einsum("si,j->isj", reg, psi).reshape(n, spec.n_coefficients())


def _solve_spd(S: np.ndarray, B: np.ndarray, sigma_trace: float, n: int):
    """Solve S X = B for symmetric positive definite S, with a ridge retry."""
    try:
        return sla.cho_solve(sla.cho_factor(S, check_finite=False), B, check_finite=False), False
    except sla.LinAlgError:
        ridge = 1e-8 * sigma_trace / n
        logger.warning(
            "innovation covariance factorization failed; retrying with ridge %.3e",
            ridge,
        )
        try:
            cf = sla.cho_factor(S + ridge * np.eye(n), check_finite=False)
            return sla.cho_solve(cf, B, check_finite=False), True
        except sla.LinAlgError as exc:
            raise NumericalError(
                f"innovation covariance is not positive definite even after "
                f"ridge {ridge:.3e}: {exc}"
            ) from exc


def kalman_step(
    state: KalmanState,
    z_t: np.ndarray,
    y_t: np.ndarray,
    spec: ModelSpec,
    cfg: KalmanConfig,
) -> KalmanState:
    """Absorb the observation at time state.t + 1 and return the new state."""
    z_t = np.asarray(z_t, dtype=float)
    n = z_t.shape[0]
    if y_t.shape != (n, state.c_hat.shape[0]):
        raise ValueError(f"regressor shape {y_t.shape} does not match state")
    t_new = state.t + 1
    s_total = spec.s_a + spec.s_m

    P, Sigma = state.P, state.sigma_hat
    S = y_t @ P @ y_t.T + Sigma
    sol, used_ridge = _solve_spd(S, y_t @ P, float(np.trace(Sigma)), n)
    gain = sol.T  # P Y' S^-1
    c_new = state.c_hat + gain @ (z_t - y_t @ state.c_hat)
    # Joseph form of P - gain Y P: algebraically identical for this gain,
    # but keeps P positive semidefinite under roundoff.
    IKY = np.eye(P.shape[0]) - gain @ y_t
    P_new = IKY @ P @ IKY.T + gain @ Sigma @ gain.T
    P_new = 0.5 * (P_new + P_new.T)
    resid = z_t - y_t @ c_new

    if cfg.sigma_freeze is not None or t_new <= s_total + n:
        # Deferred: running average not yet full rank (or frozen for RLS mode).
        sigma_new = Sigma
    else:
        sigma_new = ((t_new - 1 - s_total) * Sigma + np.outer(resid, resid)) / (
            t_new - s_total
        )
        sigma_new = 0.5 * (sigma_new + sigma_new.T)

    norm_c = float(np.linalg.norm(c_new))
    if not np.isfinite(norm_c) or norm_c > cfg.divergence_limit:
        raise DivergenceError(
            f"coefficient norm {norm_c:.3e} exceeded {cfg.divergence_limit:.1e} "
            f"at t={t_new}"
        )

    return KalmanState(
        t=t_new,
        c_hat=c_new,
        P=P_new,
        sigma_hat=sigma_new,
        nu_lags=(resid,) + state.nu_lags[:-1] if state.nu_lags else (resid,),
        ridge_fallbacks=state.ridge_fallbacks + int(used_ridge),
    )


def fit_kalman(
    panel: PanelSeries,
    weights: WeightMatrixSet,
    spec: ModelSpec,
    dictionary: WaveletDictionary | None = None,
    cfg: KalmanConfig | None = None,
) -> FitResult:
    """One forward filtering pass over t = t0+1 .. T.

    The final coefficient vector defines the reported curves; residuals and
    the one-step MSE are then computed by re-applying those curves to the
    panel (see :mod:`tvstarma.prediction`), while the online innovation
    sequence is kept in ``innovations``.
    """
    cfg = cfg or KalmanConfig()
    if dictionary is None:
        dictionary = build_dictionary(panel.T, spec.J, spec.family)
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
    if T <= spec.max_time_lag + spec.s_a + spec.s_m:
        raise ValueError(
            f"panel length {T} too short: need T > max(p,q) + s_a + s_m = "
            f"{spec.max_time_lag + spec.s_a + spec.s_m}"
        )

    state = initial_state(spec, n, cfg)
    t0 = state.t
    innovations = np.empty((T - t0, n))
    trace = [] if cfg.record_trace else None
    for t in range(t0 + 1, T + 1):
        y_t = build_regressor(t, panel, state.nu_lags, weights, spec, dictionary)
        state = kalman_step(state, panel.values[t - 1], y_t, spec, cfg)
        innovations[t - t0 - 1] = state.nu_lags[0]
        if trace is not None:
            trace.append(
                (
                    t,
                    float(np.linalg.norm(state.c_hat)),
                    float(np.trace(state.P)),
                    float(np.trace(state.sigma_hat)),
                )
            )

    blocks = state.c_hat.reshape(spec.s_a + spec.s_m, dictionary.n_columns)
    phi_curves = {
        pair: dictionary.values @ blocks[c] for c, pair in enumerate(spec.ar_pairs)
    }
    theta_curves = {
        pair: dictionary.values @ blocks[spec.s_a + c]
        for c, pair in enumerate(spec.ma_pairs)
    }
    diagnostics = {"ridge_fallbacks": state.ridge_fallbacks, "h": cfg.h, "t0": t0}
    if trace is not None:
        diagnostics["trace"] = np.array(trace)

    partial = FitResult(
        method="kalman",
        spec=spec,
        t0=t0,
        beta_hat=state.c_hat.copy(),
        phi_curves=phi_curves,
        theta_curves=theta_curves,
        residuals=np.zeros((T - t0, n)),
        sigma2_hat=float(np.trace(state.sigma_hat)) / n,
        mse=0.0,
        sigma_hat=state.sigma_hat,
        innovations=innovations,
        diagnostics=diagnostics,
    )
    # Score with the final curves; the filter's innovations supply the MA
    # regressors, which keeps the scoring pass stable even when the fitted
    # MA part is not invertible.
    preds = predict_one_step(partial, panel, weights, residual_history=innovations)
    residuals = panel.values[t0:, :] - preds
    return replace(
        partial,
        residuals=residuals,
        mse=one_step_mse(panel, preds, t0),
    )
