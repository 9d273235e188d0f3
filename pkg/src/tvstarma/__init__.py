"""Time-varying space-time ARMA (tvSTAR / tvSTARMA) modelling.

Coefficients of spatio-temporal autoregressions are smooth functions of
rescaled time, expanded on a Mexican-hat wavelet dictionary, and estimated
either by stacked least squares (pure AR) or a recursive filter (ARMA).
Includes simulators for locally stationary panels and space-time Gaussian
random fields, spatial weight matrix construction, and a Monte Carlo study
harness.
"""

from .exceptions import (
    CovarianceFactorizationError,
    DivergenceError,
    NumericalError,
    RankDeficiencyError,
)
from .kalman import KalmanConfig, KalmanState, build_regressor, fit_kalman, kalman_step
from .ls import DesignMatrix, build_design, fit_ls
from .model import FitResult, ModelSpec, PanelSeries
from .prediction import one_step_mse, predict_one_step
from .simulate import (
    CoefficientFunctions,
    GneitingCovarianceSpec,
    GrfSampler,
    gneiting_covariance,
    preset_group1,
    preset_group2,
    random_geometry,
    simulate_grf,
    simulate_tvstar,
    simulate_tvstarma,
)
from .spatial import (
    StationGeometry,
    WeightMatrixSet,
    build_weight_set,
    distance_matrix,
    great_circle_distance,
    inverse_distance_weights,
    negative_exponential_weights,
    simulation_weights,
    spatial_lag,
)
from .study import (
    ArmaPanelGenerator,
    FitTask,
    GrfPanelGenerator,
    StudyDesign,
    StudyResult,
    curve_recovery_error,
    emit_tables,
    run_fit,
    run_study,
)
from .wavelets import (
    CoefficientCurve,
    WaveletDictionary,
    build_dictionary,
    default_resolution,
    mexican_hat,
    reconstruct_curve,
)

__version__ = "0.1.0"
