"""Closed-form MAP updates for the hyper-parameters.

Each function implements one coordinate update of the hyper-parameter MAP
objective (see :func:`sparsemodal.kernels.objective_j`), holding the
conditional posterior of theta (``mu``, ``sigma``) frozen at the values
computed for the current state. Rate parameters are updated jointly with
their precision (``nu`` with ``eta``, ``tau`` with ``rho``, ``kappa`` with
``b0``), which lands directly on the joint stationary point of the pair.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError, NumericalError
from .kernels import HyperState, PosteriorState, ResidualSystem, build_g_c
from .linalg import spd_factor
from .modal import ModalDataset, SelectionMaps, flatten_dataset
from .structural import StructuralBasis, assemble_stiffness

# Floor for a non-positive frequency update, relative to the data mean.
_OMEGA_CLAMP_REL = 1e-12


@dataclass(frozen=True)
class InitValues:
    """Hyper-parameter starting values derived from the dataset."""

    eta_bar: float
    rho_bar: np.ndarray
    beta_bar: float

    def __post_init__(self):
        rho_bar = np.asarray(self.rho_bar, dtype=float)
        if self.eta_bar <= 0 or self.beta_bar <= 0 or np.any(rho_bar <= 0):
            raise ValueError("initial hyper-parameters must be strictly positive")
        rho_bar.setflags(write=False)
        object.__setattr__(self, "rho_bar", rho_bar)


def init_hypers(
    dataset: ModalDataset, n_dof: int, b0: float, a0: float = 1.0
) -> InitValues:
    """Starting values for eta, rho and beta.

    ``eta_bar`` scales with the inverse data energy, ``rho_bar`` with the
    inverse fourth-power frequency sums (a deliberately weak start) and
    ``beta_bar`` with the prior mean implied by ``b0``. These are starting
    points only; all three are re-estimated from the first iteration.
    """
    if b0 <= 0:
        raise ValueError("b0 must be strictly positive")
    if dataset.n_observed <= 2:
        raise ValueError(
            "at least three observed DOFs are required for the rho "
            "initialization to be positive"
        )
    _, psi_hat = flatten_dataset(dataset)
    n_data = dataset.n_segments * dataset.n_modes * dataset.n_observed
    eta_bar = (n_data - 2) / float(psi_hat @ psi_hat)
    rho_bar = (dataset.n_observed - 2) / np.sum(dataset.freq_sq**2, axis=0)
    beta_bar = 0.5 * b0 * (n_dof * dataset.n_modes + 2.0 * (a0 - 1.0))
    return InitValues(eta_bar=eta_bar, rho_bar=rho_bar, beta_bar=beta_bar)


def update_phi(
    state: HyperState,
    basis: StructuralBasis,
    dataset: ModalDataset,
    posterior: PosteriorState,
) -> np.ndarray:
    """MAP update of the system mode shapes.

    Solves, per mode ``i`` (the full system is block diagonal across modes),

        [beta Fi^T Fi + beta diag(tr(sigma T_q)) + eta N_s diag(observed)] phi_i
            = eta sum_r psi_hat_{r,i} - beta [tr(sigma U_q)]_q

    with ``Fi = K(mu) - omega_i^2 M`` and the trace terms built from the
    current (active-set-reduced) posterior covariance.
    """
    n_d = basis.n_dof
    n_m = dataset.n_modes
    sigma = posterior.sigma
    mu = posterior.mu
    phi2 = state.phi.reshape(n_m, n_d)

    # tr(sigma T_q) depends only on the dof index k of q = (i, k); the
    # single nonzero block of dH/dphi_q is pi_k = [Kj[:, k]]_j for any mode.
    pi = np.stack(basis.k_sub, axis=2)  # pi[:, k, j] = Kj[:, k]
    t_trace = np.empty(n_d)
    for k in range(n_d):
        pik = pi[:, k, :]
        t_trace[k] = float(np.sum((pik @ sigma) * pik))

    k_mu = assemble_stiffness(basis, mu)
    obs = np.asarray(dataset.observed_dofs, dtype=int)
    data_diag = np.zeros(n_d)
    data_diag[obs] = state.eta * dataset.n_segments
    psi_sum = np.sum(dataset.mode_shapes, axis=0)  # (n_m, n_o)

    new_phi = np.empty((n_m, n_d))
    for i in range(n_m):
        f_i = k_mu - state.omega_sq[i] * basis.mass
        h_i = np.empty((n_d, basis.n_sub))
        for j, kj in enumerate(basis.k_sub):
            h_i[:, j] = kj @ phi2[i]
        ys = h_i @ sigma
        u_i = np.array(
            [float(np.sum(pi[:, k, :] * ys)) - phi2[i, k] * t_trace[k] for k in range(n_d)]
        )
        system = state.beta * (f_i.T @ f_i)
        system[np.diag_indices(n_d)] += state.beta * t_trace + data_diag
        rhs = -state.beta * u_i
        rhs[obs] += state.eta * psi_sum[i]
        new_phi[i] = spd_factor(system).solve(rhs)
    return new_phi.reshape(-1)


def update_eta(
    dataset: ModalDataset, selection: SelectionMaps, phi: np.ndarray
) -> tuple[float, float]:
    """Joint MAP update of the mode-shape precision and its rate parameter.

    Returns ``(eta, nu)`` with ``eta = (Ns Nm No - 2) / ||psi_hat - Gamma phi||^2``
    and ``nu = 1 / eta``.
    """
    _, psi_hat = flatten_dataset(dataset)
    n_data = dataset.n_segments * dataset.n_modes * dataset.n_observed
    if n_data <= 2:
        raise ValueError("need more than two mode-shape observations")
    res = psi_hat - selection.gamma @ np.asarray(phi, dtype=float)
    ssq = float(res @ res)
    if ssq == 0.0:
        raise DegenerateDataError(
            "mode-shape residual is exactly zero; eta is unbounded"
        )
    eta = (n_data - 2) / ssq
    return eta, 1.0 / eta


def update_omega_sq(
    state: HyperState,
    basis: StructuralBasis,
    dataset: ModalDataset,
    posterior: PosteriorState,
) -> np.ndarray:
    """MAP update of the system squared frequencies.

    The normal equations decouple per mode:

        omega_i^2 = (rho_i sum_r w_hat_{r,i}^2 + beta (M phi_i) . (K(mu) phi_i))
                    / (Ns rho_i + beta ||M phi_i||^2)

    A non-positive result (never seen at realistic noise, but possible for
    adversarial states) is clamped to a tiny positive value with a warning,
    since downstream formulas assume positive squared frequencies.
    """
    g, c = build_g_c(basis, posterior.mu, state.phi)
    n_m = dataset.n_modes
    n_d = basis.n_dof
    freq_sum = np.sum(dataset.freq_sq, axis=0)
    new = np.empty(n_m)
    for i in range(n_m):
        g_i = g[i * n_d : (i + 1) * n_d, i]
        c_i = c[i * n_d : (i + 1) * n_d]
        den = dataset.n_segments * state.rho[i] + state.beta * float(g_i @ g_i)
        num = state.rho[i] * freq_sum[i] + state.beta * float(g_i @ c_i)
        new[i] = num / den
    if np.any(new <= 0):
        floor = _OMEGA_CLAMP_REL * float(np.mean(dataset.freq_sq))
        bad = np.flatnonzero(new <= 0)
        warnings.warn(
            f"frequency update produced non-positive values at modes {bad.tolist()}; "
            f"clamped to {floor:.3e}",
            RuntimeWarning,
            stacklevel=2,
        )
        new[bad] = floor
    return new


def update_rho(dataset: ModalDataset, omega_sq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Joint MAP update of the frequency precisions and their rates.

    Returns ``(rho, tau)`` with
    ``rho_i = (Ns - 2) / sum_r (w_hat_{r,i}^2 - omega_i^2)^2`` and
    ``tau = 1 / rho``. Requires at least three segments.
    """
    omega_sq = np.asarray(omega_sq, dtype=float)
    dev = dataset.freq_sq - omega_sq[None, :]
    ssq = np.sum(dev**2, axis=0)
    if np.any(ssq == 0.0):
        raise DegenerateDataError(
            "per-mode frequency deviations are exactly zero; rho is unbounded"
        )
    rho = (dataset.n_segments - 2) / ssq
    return rho, 1.0 / rho


def update_alpha(posterior: PosteriorState, theta_u_hat: np.ndarray) -> np.ndarray:
    """MAP update of the per-component likelihood variances.

    ``alpha_j = sigma_jj + (theta_u_hat - mu)_j^2`` on the active set;
    pruned components stay exactly zero.
    """
    theta_u_hat = np.asarray(theta_u_hat, dtype=float)
    alpha = np.zeros(posterior.mu.shape[0])
    act = posterior.active
    alpha[act] = np.diag(posterior.sigma)[act] + (theta_u_hat[act] - posterior.mu[act]) ** 2
    return alpha


def update_beta(
    posterior: PosteriorState,
    rs: ResidualSystem,
    alpha: np.ndarray,
    b0: float,
    a0: float = 1.0,
) -> float:
    """MAP update of the equation-error precision.

    ``beta = (Nd Nm - sum_j gamma_j + 2 (a0 - 1)) / (||H mu - b||^2 + 2/b0)``
    where ``gamma_j = 1 - sigma_jj / alpha_j`` summed over active components
    only (the exact limit of a pruned component's gamma is zero).
    """
    alpha = np.asarray(alpha, dtype=float)
    act = posterior.active
    gamma_sum = 0.0
    if np.any(act):
        gamma_sum = float(np.sum(1.0 - np.diag(posterior.sigma)[act] / alpha[act]))
    numerator = rs.b.shape[0] - gamma_sum + 2.0 * (a0 - 1.0)
    if numerator <= 0:
        raise NumericalError(
            f"beta update numerator {numerator:.3e} is not positive; the "
            "posterior covariance is inconsistent with its likelihood variances"
        )
    r = rs.h @ posterior.mu - rs.b
    return float(numerator / (float(r @ r) + 2.0 / b0))


def update_b0_kappa(beta: float, a0: float, kappa: float) -> tuple[float, float]:
    """Joint MAP update of the scale parameter b0 and its rate kappa.

    ``b0 = 2 beta / (a0 + sqrt(a0^2 + 4 kappa beta))`` (the positive root of
    ``kappa b0^2 + a0 b0 - beta = 0``), then ``kappa = 1 / b0``.
    """
    if beta <= 0 or kappa <= 0 or a0 <= 0:
        raise ValueError("beta, a0 and kappa must be strictly positive")
    b0 = 2.0 * beta / (a0 + np.sqrt(a0**2 + 4.0 * kappa * beta))
    return float(b0), float(1.0 / b0)
