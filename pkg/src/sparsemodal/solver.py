"""Iteration drivers for the calibration and monitoring stages.

Calibration estimates the stiffness scaling parameters of the undamaged
structure without sparseness (all likelihood variances fixed large), giving
the posterior mean/covariance used as pseudo-data afterwards. Monitoring
re-estimates the parameters from new data with automatic relevance
determination: per-component variances ``alpha_j`` are learned, collapse of
an ``alpha_j`` to zero prunes component j (pins it to its calibration
value, exactly), and components whose estimate rises above the calibration
value are pruned directly, encoding the constraint that stiffness cannot
increase in a damaged state.

Both drivers record a per-iteration trace (objective value, parameter
changes, active count, key precisions); it is the primary debugging
artifact for the fixed-point iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConvergenceError
from .kernels import (
    HyperState,
    PosteriorState,
    build_residual_system,
    conditional_posterior,
    objective_j,
)
from .modal import ModalDataset, build_selection
from .structural import StructuralBasis, solve_modes
from .updates import (
    init_hypers,
    update_alpha,
    update_b0_kappa,
    update_beta,
    update_eta,
    update_omega_sq,
    update_phi,
    update_rho,
)

# Tolerance of the final no-increase post-check, and the relative frequency
# misfit above which an all-pruned monitoring result is flagged as suspect.
_INCREASE_TOL = 1e-9
_ALL_PRUNED_MISFIT_REL = 0.02


@dataclass(frozen=True)
class SolverConfig:
    """Knobs shared by both stages.

    ``alpha_large`` plays the role of the non-informative prior covariance
    during calibration; ``alpha_min`` is the pruning threshold of the
    monitoring stage; the two tolerances are the stage-specific convergence
    criteria (max absolute posterior-mean change, max absolute change of
    the active log alphas).
    """

    b0: float = 1.0
    alpha_min: float = 1e-9
    alpha_large: float = 1e9
    tol_theta: float = 0.001
    tol_log_alpha: float = 0.005
    max_iters: int = 500
    enforce_no_increase: bool = True
    warmup_iters_before_constraint: int = 2

    def __post_init__(self):
        for name in ("b0", "alpha_min", "alpha_large", "tol_theta", "tol_log_alpha"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.warmup_iters_before_constraint < 0:
            raise ValueError("warmup_iters_before_constraint must be nonnegative")


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    objective: float
    max_delta_mu: float
    n_active: int
    beta: float
    eta: float
    n_pruned_this_iter: int = 0
    max_delta_log_alpha: float = float("nan")

    FIELDS = (
        "iteration",
        "objective",
        "max_delta_mu",
        "n_active",
        "beta",
        "eta",
        "n_pruned_this_iter",
        "max_delta_log_alpha",
    )

    def row(self) -> list:
        return [getattr(self, name) for name in self.FIELDS]


@dataclass(frozen=True)
class CalibrationResult:
    """Output of the calibration stage."""

    theta_u_hat: np.ndarray
    sigma_u: np.ndarray
    delta_map: HyperState
    trace: tuple[TraceRecord, ...]
    n_iters: int

    @property
    def cov_percent(self) -> np.ndarray:
        return 100.0 * np.sqrt(np.diag(self.sigma_u)) / self.theta_u_hat


@dataclass(frozen=True)
class MonitoringResult:
    """Output of the monitoring stage.

    Pruned components have ``stiffness_ratio`` exactly 1 and
    ``cov_percent`` exactly 0 by construction.
    """

    theta_d: np.ndarray
    sigma_d: np.ndarray
    alpha_final: np.ndarray
    pruned: tuple[int, ...]
    stiffness_ratio: np.ndarray
    cov_percent: np.ndarray
    delta_map: HyperState
    trace: tuple[TraceRecord, ...]
    n_iters: int
    warnings: tuple[str, ...] = field(default_factory=tuple)

    @property
    def active(self) -> tuple[int, ...]:
        n = self.theta_d.shape[0]
        return tuple(j for j in range(n) if j not in set(self.pruned))


def convergence_check(kind: str, prev, curr, active, tol: float) -> bool:
    """Stage convergence criteria.

    ``"theta-change"``: max absolute change of the posterior mean below
    ``tol``. ``"log-alpha-change"``: max absolute change of ``log(alpha)``
    over active components below ``tol`` (vacuously true when none are
    active).
    """
    prev = np.asarray(prev, dtype=float)
    curr = np.asarray(curr, dtype=float)
    if prev.shape != curr.shape:
        raise ValueError("prev and curr must have matching shapes")
    if kind == "theta-change":
        return bool(np.max(np.abs(curr - prev)) < tol)
    if kind == "log-alpha-change":
        active = np.asarray(active, dtype=bool)
        if not np.any(active):
            return True
        change = np.abs(np.log(curr[active]) - np.log(prev[active]))
        return bool(np.max(change) < tol)
    raise ValueError(f"unknown convergence criterion {kind!r}")


def _initial_state(
    dataset: ModalDataset,
    basis: StructuralBasis,
    omega_sq: np.ndarray,
    phi: np.ndarray,
    alpha: np.ndarray,
    config: SolverConfig,
) -> HyperState:
    init = init_hypers(dataset, basis.n_dof, config.b0)
    return HyperState(
        omega_sq=omega_sq,
        phi=phi,
        rho=init.rho_bar,
        tau=1.0 / init.rho_bar,
        eta=init.eta_bar,
        nu=1.0 / init.eta_bar,
        alpha=alpha,
        beta=init.beta_bar,
        b0=config.b0,
        kappa=1.0 / config.b0,
    )


def _sweep_hypers(
    state: HyperState,
    basis: StructuralBasis,
    dataset: ModalDataset,
    selection,
    posterior: PosteriorState,
    theta_pseudo: np.ndarray,
) -> HyperState:
    """One pass of the MAP updates (shapes, frequencies, precisions), with
    the conditional posterior held frozen at the current iteration's values."""
    phi = update_phi(state, basis, dataset, posterior)
    eta, nu = update_eta(dataset, selection, phi)
    state = replace(state, phi=phi, eta=eta, nu=nu)

    omega_sq = update_omega_sq(state, basis, dataset, posterior)
    rho, tau = update_rho(dataset, omega_sq)
    state = replace(state, omega_sq=omega_sq, rho=rho, tau=tau)

    rs = build_residual_system(basis, state.omega_sq, state.phi)
    beta = update_beta(posterior, rs, state.alpha, state.b0, state.a0)
    b0, kappa = update_b0_kappa(beta, state.a0, state.kappa)
    return replace(state, beta=beta, b0=b0, kappa=kappa)


def run_calibration(
    basis: StructuralBasis,
    dataset: ModalDataset,
    theta0: np.ndarray | None = None,
    config: SolverConfig | None = None,
) -> CalibrationResult:
    """Estimate the calibration-state stiffness parameters (no sparseness).

    The likelihood variances are fixed at ``config.alpha_large`` with the
    nominal ``theta0`` standing in as pseudo-data, which makes the theta
    prior effectively non-informative; the posterior is driven by the modal
    data through the eigenvalue-equation residuals. The system frequencies
    start at the per-mode segment means and the system mode shapes at the
    eigenvectors of the nominal model. Iterates shape/frequency/precision
    updates followed by the posterior solve until the posterior mean stops
    moving (max change below ``config.tol_theta``).

    Raises
    ------
    ConvergenceError
        If the tolerance is not met within ``config.max_iters``; the
        per-iteration trace is attached to the exception.
    """
    config = config or SolverConfig()
    dataset.check_compatible(basis.n_dof)
    if theta0 is None:
        theta0 = np.ones(basis.n_sub)
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.shape != (basis.n_sub,):
        raise ValueError(f"theta0 must have length {basis.n_sub}")

    selection = build_selection(
        dataset.observed_dofs, basis.n_dof, dataset.n_modes, dataset.n_segments
    )
    omega0 = dataset.freq_sq.mean(axis=0)
    _, shapes0 = solve_modes(basis, theta0, dataset.n_modes)
    alpha = np.full(basis.n_sub, config.alpha_large)
    state = _initial_state(dataset, basis, omega0, shapes0.reshape(-1), alpha, config)

    rs = build_residual_system(basis, state.omega_sq, state.phi)
    posterior = conditional_posterior(rs, state.beta, state.alpha, theta0)
    trace = [
        TraceRecord(
            iteration=0,
            objective=objective_j(state, dataset, basis, theta0, selection),
            max_delta_mu=float("nan"),
            n_active=posterior.n_active,
            beta=state.beta,
            eta=state.eta,
        )
    ]

    for it in range(1, config.max_iters + 1):
        state = _sweep_hypers(state, basis, dataset, selection, posterior, theta0)
        rs = build_residual_system(basis, state.omega_sq, state.phi)
        new_posterior = conditional_posterior(rs, state.beta, state.alpha, theta0)
        prev_mu = posterior.mu
        posterior = new_posterior
        delta_mu = float(np.max(np.abs(posterior.mu - prev_mu)))
        trace.append(
            TraceRecord(
                iteration=it,
                objective=objective_j(state, dataset, basis, theta0, selection),
                max_delta_mu=delta_mu,
                n_active=posterior.n_active,
                beta=state.beta,
                eta=state.eta,
            )
        )
        if convergence_check("theta-change", prev_mu, posterior.mu, None, config.tol_theta):
            return CalibrationResult(
                theta_u_hat=posterior.mu,
                sigma_u=posterior.sigma,
                delta_map=state,
                trace=tuple(trace),
                n_iters=it,
            )
    raise ConvergenceError(
        f"calibration did not converge in {config.max_iters} iterations "
        f"(last max |delta mu| = {trace[-1].max_delta_mu:.3e}, tol {config.tol_theta})",
        trace=tuple(trace),
    )


def run_monitoring(
    basis: StructuralBasis,
    dataset: ModalDataset,
    calibration: CalibrationResult,
    config: SolverConfig | None = None,
) -> MonitoringResult:
    """Sparse inference of the current stiffness state against calibration.

    The likelihood variances start at ``n_sub**2`` and are re-estimated
    every iteration; a variance falling below ``config.alpha_min`` prunes
    its component (exactly zero, monotone: pruned components stay pruned).
    With the no-increase constraint enabled, components whose posterior
    mean exceeds the calibration value are pruned as well, starting after
    the warmup iterations. Converges when the active log-variances stop
    moving; a final post-check prunes any component left violating the
    constraint and resumes iterating, so the constraint holds at output.
    """
    config = config or SolverConfig()
    dataset.check_compatible(basis.n_dof)
    theta_u = calibration.theta_u_hat
    if theta_u.shape != (basis.n_sub,):
        raise ValueError("calibration result does not match the basis")
    if dataset.n_modes != calibration.delta_map.n_modes:
        raise ValueError(
            "monitoring dataset and calibration must use the same mode count"
        )

    selection = build_selection(
        dataset.observed_dofs, basis.n_dof, dataset.n_modes, dataset.n_segments
    )
    alpha = np.full(basis.n_sub, float(basis.n_sub) ** 2)
    state = _initial_state(
        dataset,
        basis,
        calibration.delta_map.omega_sq,
        calibration.delta_map.phi,
        alpha,
        config,
    )

    trace: list[TraceRecord] = []
    posterior: PosteriorState | None = None
    result_warnings: list[str] = []

    for it in range(1, config.max_iters + 1):
        alpha = state.alpha.copy()
        active_before = alpha > 0
        alpha[active_before & (alpha < config.alpha_min)] = 0.0
        if (
            config.enforce_no_increase
            and posterior is not None
            and it > config.warmup_iters_before_constraint
        ):
            alpha[(alpha > 0) & (posterior.mu > theta_u)] = 0.0
        n_pruned_now = int(np.count_nonzero(active_before) - np.count_nonzero(alpha > 0))
        state = replace(state, alpha=alpha)

        rs = build_residual_system(basis, state.omega_sq, state.phi)
        new_posterior = conditional_posterior(rs, state.beta, state.alpha, theta_u)
        delta_mu = (
            float(np.max(np.abs(new_posterior.mu - posterior.mu)))
            if posterior is not None
            else float("nan")
        )
        posterior = new_posterior

        state = _sweep_hypers(state, basis, dataset, selection, posterior, theta_u)

        alpha_before = state.alpha
        alpha_new = update_alpha(posterior, theta_u)
        active = alpha_new > 0
        if np.any(active):
            delta_log_alpha = float(
                np.max(np.abs(np.log(alpha_new[active]) - np.log(alpha_before[active])))
            )
        else:
            delta_log_alpha = 0.0
        state = replace(state, alpha=alpha_new)

        trace.append(
            TraceRecord(
                iteration=it,
                objective=objective_j(state, dataset, basis, theta_u, selection),
                max_delta_mu=delta_mu,
                n_active=int(np.count_nonzero(active)),
                beta=state.beta,
                eta=state.eta,
                n_pruned_this_iter=n_pruned_now,
                max_delta_log_alpha=delta_log_alpha,
            )
        )

        if not convergence_check(
            "log-alpha-change", alpha_before, alpha_new, active, config.tol_log_alpha
        ):
            continue
        # Converged on the alphas; enforce the termination invariant on the
        # last posterior before accepting (the in-loop rule checked the
        # previous iteration's mean, not this one).
        violating = posterior.active & (posterior.mu > theta_u + _INCREASE_TOL)
        if config.enforce_no_increase and np.any(violating):
            alpha_fixed = state.alpha.copy()
            alpha_fixed[violating] = 0.0
            state = replace(state, alpha=alpha_fixed)
            continue
        return _finish_monitoring(
            basis, dataset, state, posterior, theta_u, trace, it, result_warnings
        )

    raise ConvergenceError(
        f"monitoring did not converge in {config.max_iters} iterations",
        trace=tuple(trace),
    )


def _finish_monitoring(
    basis: StructuralBasis,
    dataset: ModalDataset,
    state: HyperState,
    posterior: PosteriorState,
    theta_u: np.ndarray,
    trace: list[TraceRecord],
    n_iters: int,
    result_warnings: list[str],
) -> MonitoringResult:
    pruned = tuple(int(j) for j in np.flatnonzero(~posterior.active))
    ratio = posterior.mu / theta_u
    ratio[list(pruned)] = 1.0  # pinned means divide to 1.0 exactly anyway
    cov_percent = 100.0 * np.sqrt(np.diag(posterior.sigma)) / posterior.mu
    if len(pruned) == basis.n_sub:
        misfit = _frequency_misfit(basis, theta_u, dataset)
        if misfit > _ALL_PRUNED_MISFIT_REL:
            result_warnings.append(
                "all components were pruned while the calibration model misfits "
                f"the data (relative frequency misfit {misfit:.3f}); the data may "
                "reflect changes this model class cannot represent"
            )
    return MonitoringResult(
        theta_d=posterior.mu,
        sigma_d=posterior.sigma,
        alpha_final=state.alpha,
        pruned=pruned,
        stiffness_ratio=ratio,
        cov_percent=cov_percent,
        delta_map=state,
        trace=tuple(trace),
        n_iters=n_iters,
        warnings=tuple(result_warnings),
    )


def _frequency_misfit(
    basis: StructuralBasis, theta: np.ndarray, dataset: ModalDataset
) -> float:
    model_omega_sq, _ = solve_modes(basis, theta, dataset.n_modes)
    data_mean = dataset.freq_sq.mean(axis=0)
    return float(np.max(np.abs(model_omega_sq - data_mean) / data_mean))


# ---------------------------------------------------------------------------
# Result serialization (JSON-friendly dicts)
# ---------------------------------------------------------------------------


def _hyper_state_to_dict(state: HyperState) -> dict:
    return {
        "omega_sq": state.omega_sq.tolist(),
        "phi": state.phi.tolist(),
        "rho": state.rho.tolist(),
        "tau": state.tau.tolist(),
        "eta": state.eta,
        "nu": state.nu,
        "alpha": state.alpha.tolist(),
        "beta": state.beta,
        "b0": state.b0,
        "kappa": state.kappa,
        "a0": state.a0,
    }


def _hyper_state_from_dict(doc: dict) -> HyperState:
    return HyperState(
        omega_sq=np.asarray(doc["omega_sq"], dtype=float),
        phi=np.asarray(doc["phi"], dtype=float),
        rho=np.asarray(doc["rho"], dtype=float),
        tau=np.asarray(doc["tau"], dtype=float),
        eta=float(doc["eta"]),
        nu=float(doc["nu"]),
        alpha=np.asarray(doc["alpha"], dtype=float),
        beta=float(doc["beta"]),
        b0=float(doc["b0"]),
        kappa=float(doc["kappa"]),
        a0=float(doc.get("a0", 1.0)),
    )


def _trace_to_rows(trace) -> list:
    return [record.row() for record in trace]


def _trace_from_rows(rows) -> tuple[TraceRecord, ...]:
    out = []
    for row in rows:
        kwargs = dict(zip(TraceRecord.FIELDS, row))
        kwargs["iteration"] = int(kwargs["iteration"])
        kwargs["n_active"] = int(kwargs["n_active"])
        kwargs["n_pruned_this_iter"] = int(kwargs["n_pruned_this_iter"])
        out.append(TraceRecord(**kwargs))
    return tuple(out)


def calibration_to_dict(result: CalibrationResult) -> dict:
    return {
        "theta_u_hat": result.theta_u_hat.tolist(),
        "sigma_u": result.sigma_u.tolist(),
        "cov_percent": result.cov_percent.tolist(),
        "hyper_state": _hyper_state_to_dict(result.delta_map),
        "trace_fields": list(TraceRecord.FIELDS),
        "trace": _trace_to_rows(result.trace),
        "n_iters": result.n_iters,
    }


def calibration_from_dict(doc: dict) -> CalibrationResult:
    return CalibrationResult(
        theta_u_hat=np.asarray(doc["theta_u_hat"], dtype=float),
        sigma_u=np.asarray(doc["sigma_u"], dtype=float),
        delta_map=_hyper_state_from_dict(doc["hyper_state"]),
        trace=_trace_from_rows(doc.get("trace", [])),
        n_iters=int(doc["n_iters"]),
    )


def monitoring_to_dict(result: MonitoringResult) -> dict:
    return {
        "theta_d": result.theta_d.tolist(),
        "sigma_d": result.sigma_d.tolist(),
        "alpha_final": result.alpha_final.tolist(),
        "pruned": list(result.pruned),
        "stiffness_ratio": result.stiffness_ratio.tolist(),
        "cov_percent": result.cov_percent.tolist(),
        "hyper_state": _hyper_state_to_dict(result.delta_map),
        "trace_fields": list(TraceRecord.FIELDS),
        "trace": _trace_to_rows(result.trace),
        "n_iters": result.n_iters,
        "warnings": list(result.warnings),
    }


def monitoring_from_dict(doc: dict) -> MonitoringResult:
    return MonitoringResult(
        theta_d=np.asarray(doc["theta_d"], dtype=float),
        sigma_d=np.asarray(doc["sigma_d"], dtype=float),
        alpha_final=np.asarray(doc["alpha_final"], dtype=float),
        pruned=tuple(int(j) for j in doc["pruned"]),
        stiffness_ratio=np.asarray(doc["stiffness_ratio"], dtype=float),
        cov_percent=np.asarray(doc["cov_percent"], dtype=float),
        delta_map=_hyper_state_from_dict(doc["hyper_state"]),
        trace=_trace_from_rows(doc.get("trace", [])),
        n_iters=int(doc["n_iters"]),
        warnings=tuple(doc.get("warnings", [])),
    )
