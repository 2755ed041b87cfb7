"""Scikit-learn style estimators wrapping the two inference stages.

Both estimators follow the usual conventions: constructor arguments are
stored verbatim (so ``get_params`` / ``set_params`` / ``clone`` work),
``fit`` takes the data and sets trailing-underscore attributes, and nothing
is mutated outside ``fit``. The "X" of these estimators is a
:class:`~sparsemodal.modal.ModalDataset` rather than a feature matrix; the
structural model is a (hyper)parameter of the estimator, like a kernel.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .modal import ModalDataset
from .solver import CalibrationResult, MonitoringResult, SolverConfig, run_calibration, run_monitoring
from .structural import StructuralBasis


def _as_dataset(X) -> ModalDataset:
    if not isinstance(X, ModalDataset):
        raise TypeError(
            f"X must be a ModalDataset, got {type(X).__name__}; build one with "
            "sparsemodal.modal.ModalDataset or load_dataset()"
        )
    return X


class StiffnessCalibrator(BaseEstimator):
    """Estimate the calibration-state stiffness scaling parameters.

    Bayesian model updating without a sparseness mechanism: all stiffness
    scaling parameters are inferred jointly from identified modal data of
    the (assumed undamaged) structure, together with the system modal
    parameters and all noise precisions.

    Parameters
    ----------
    basis : StructuralBasis
        The parameterized structural model.
    theta0 : array-like of shape (n_sub,), default=None
        Nominal parameter values used to initialize the iteration (and as
        the center of the effectively non-informative prior). Defaults to
        all ones.
    b0 : float, default=1.0
        Scale hyper-parameter of the equation-error precision prior.
    tol_theta : float, default=0.001
        Convergence tolerance on the max absolute posterior-mean change.
    max_iters : int, default=500
        Iteration budget; exceeding it raises ConvergenceError.
    alpha_large : float, default=1e9
        Large likelihood variance standing in for a non-informative prior.

    Attributes
    ----------
    theta_u_ : ndarray of shape (n_sub,)
        Posterior mean of the stiffness scaling parameters.
    sigma_u_ : ndarray of shape (n_sub, n_sub)
        Posterior covariance.
    cov_percent_ : ndarray of shape (n_sub,)
        Coefficients of variation, in percent.
    hyper_state_ : HyperState
        Converged MAP values of all hyper-parameters (including the system
        frequencies and mode shapes).
    trace_ : tuple of TraceRecord
        Per-iteration objective and convergence diagnostics.
    n_iter_ : int
        Number of iterations run.
    result_ : CalibrationResult
        The full result object consumed by the monitoring stage.
    """

    def __init__(
        self,
        basis: StructuralBasis,
        theta0=None,
        b0: float = 1.0,
        tol_theta: float = 0.001,
        max_iters: int = 500,
        alpha_large: float = 1e9,
    ):
        self.basis = basis
        self.theta0 = theta0
        self.b0 = b0
        self.tol_theta = tol_theta
        self.max_iters = max_iters
        self.alpha_large = alpha_large

    def fit(self, X, y=None):
        """Run the calibration stage on a modal dataset.

        Parameters
        ----------
        X : ModalDataset
            Identified modal data of the calibration (undamaged) state.
        y : ignored
            Present for scikit-learn API compatibility.
        """
        dataset = _as_dataset(X)
        config = SolverConfig(
            b0=self.b0,
            tol_theta=self.tol_theta,
            max_iters=self.max_iters,
            alpha_large=self.alpha_large,
        )
        result = run_calibration(self.basis, dataset, theta0=self.theta0, config=config)
        self.result_ = result
        self.theta_u_ = result.theta_u_hat
        self.sigma_u_ = result.sigma_u
        self.cov_percent_ = result.cov_percent
        self.hyper_state_ = result.delta_map
        self.trace_ = result.trace
        self.n_iter_ = result.n_iters
        return self


class SparseStiffnessMonitor(BaseEstimator):
    """Infer spatially-sparse stiffness reductions against a calibration.

    Automatic relevance determination drives the per-component likelihood
    variances of unchanged substructures to zero, pinning them exactly to
    their calibration values; with the no-increase constraint enabled,
    components whose estimate rises above the calibration value are pruned
    outright.

    Parameters
    ----------
    basis : StructuralBasis
        The parameterized structural model (same as used for calibration).
    calibration : CalibrationResult or fitted StiffnessCalibrator
        Output of the calibration stage.
    b0 : float, default=1.0
        Scale hyper-parameter of the equation-error precision prior.
    alpha_min : float, default=1e-9
        Pruning threshold on the likelihood variances.
    tol_log_alpha : float, default=0.005
        Convergence tolerance on the active log-variance changes.
    max_iters : int, default=500
        Iteration budget.
    enforce_no_increase : bool, default=True
        Prune components whose estimate exceeds the calibration value.
    warmup_iters : int, default=2
        Iterations to run before the no-increase rule activates.

    Attributes
    ----------
    theta_d_ : ndarray of shape (n_sub,)
        Posterior (MAP) stiffness scaling parameters of the current state.
    sigma_d_ : ndarray of shape (n_sub, n_sub)
        Posterior covariance (rows/columns of pruned components are zero).
    alpha_ : ndarray of shape (n_sub,)
        Final likelihood variances (zero where pruned).
    pruned_ : tuple of int
        Indices of pruned (undamaged) components.
    stiffness_ratio_ : ndarray of shape (n_sub,)
        theta_d / theta_u; exactly 1 for pruned components.
    cov_percent_ : ndarray of shape (n_sub,)
        Coefficients of variation in percent; exactly 0 for pruned.
    hyper_state_ : HyperState
        Final MAP hyper-parameters.
    trace_ : tuple of TraceRecord
    n_iter_ : int
    warnings_ : tuple of str
        Diagnostic warnings (e.g. all components pruned under large misfit).
    result_ : MonitoringResult
    """

    def __init__(
        self,
        basis: StructuralBasis,
        calibration,
        b0: float = 1.0,
        alpha_min: float = 1e-9,
        tol_log_alpha: float = 0.005,
        max_iters: int = 500,
        enforce_no_increase: bool = True,
        warmup_iters: int = 2,
    ):
        self.basis = basis
        self.calibration = calibration
        self.b0 = b0
        self.alpha_min = alpha_min
        self.tol_log_alpha = tol_log_alpha
        self.max_iters = max_iters
        self.enforce_no_increase = enforce_no_increase
        self.warmup_iters = warmup_iters

    def _calibration_result(self) -> CalibrationResult:
        calibration = self.calibration
        if isinstance(calibration, StiffnessCalibrator):
            check_is_fitted(calibration)
            return calibration.result_
        if isinstance(calibration, CalibrationResult):
            return calibration
        raise TypeError(
            "calibration must be a CalibrationResult or a fitted StiffnessCalibrator"
        )

    def fit(self, X, y=None):
        """Run the monitoring stage on a modal dataset.

        Parameters
        ----------
        X : ModalDataset
            Identified modal data of the current (possibly damaged) state.
        y : ignored
            Present for scikit-learn API compatibility.
        """
        dataset = _as_dataset(X)
        config = SolverConfig(
            b0=self.b0,
            alpha_min=self.alpha_min,
            tol_log_alpha=self.tol_log_alpha,
            max_iters=self.max_iters,
            enforce_no_increase=self.enforce_no_increase,
            warmup_iters_before_constraint=self.warmup_iters,
        )
        result = run_monitoring(self.basis, dataset, self._calibration_result(), config)
        self.result_ = result
        self.theta_d_ = result.theta_d
        self.sigma_d_ = result.sigma_d
        self.alpha_ = result.alpha_final
        self.pruned_ = result.pruned
        self.stiffness_ratio_ = result.stiffness_ratio
        self.cov_percent_ = result.cov_percent
        self.hyper_state_ = result.delta_map
        self.trace_ = result.trace
        self.n_iter_ = result.n_iters
        self.warnings_ = result.warnings
        return self

    def predict(self, X=None) -> np.ndarray:
        """Return the inferred stiffness scaling parameters.

        ``X`` is ignored; the estimate is a property of the fitted state.
        """
        check_is_fitted(self)
        return self.theta_d_.copy()
