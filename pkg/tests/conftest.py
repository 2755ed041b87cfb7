"""Shared fixtures: small random model/data instances sized for oracles."""

from __future__ import annotations

import numpy as np
import pytest

from sparsemodal.kernels import HyperState, build_residual_system, conditional_posterior
from sparsemodal.modal import ModalDataset
from sparsemodal.structural import ShearBuildingSpec, StructuralBasis, build_shear_building


def random_spd(rng, n, scale=1.0):
    a = rng.standard_normal((n, n))
    return scale * (a @ a.T + n * np.eye(n))


def random_psd(rng, n, rank=None, scale=1.0):
    rank = rank or max(1, n - 1)
    a = rng.standard_normal((n, rank))
    return scale * (a @ a.T)


def random_basis(rng, n_dof=4, n_sub=3) -> StructuralBasis:
    """A small random structural basis with PSD substructure matrices."""
    mass = random_spd(rng, n_dof, scale=0.5)
    k0 = random_psd(rng, n_dof, rank=n_dof, scale=0.2)
    k_sub = tuple(random_psd(rng, n_dof, rank=2, scale=1.0) for _ in range(n_sub))
    return StructuralBasis(
        mass=mass,
        k0=k0,
        k_sub=k_sub,
        labels=tuple(f"s{j}" for j in range(n_sub)),
    )


def random_dataset(rng, n_dof, n_modes=2, n_segments=4, n_observed=None) -> ModalDataset:
    n_observed = n_observed or n_dof
    dofs = tuple(sorted(rng.choice(n_dof, size=n_observed, replace=False).tolist()))
    freq = rng.uniform(0.5, 4.0, size=(n_segments, n_modes))
    shapes = rng.standard_normal((n_segments, n_modes, n_observed))
    return ModalDataset(observed_dofs=dofs, freq_sq=freq, mode_shapes=shapes)


def random_state(rng, basis, dataset, pruned=0) -> HyperState:
    """A random feasible hyper-state compatible with basis and dataset."""
    n_m = dataset.n_modes
    alpha = rng.uniform(0.05, 2.0, size=basis.n_sub)
    if pruned:
        idx = rng.choice(basis.n_sub, size=pruned, replace=False)
        alpha[idx] = 0.0
    return HyperState(
        omega_sq=rng.uniform(0.5, 4.0, size=n_m),
        phi=rng.standard_normal(n_m * basis.n_dof),
        rho=rng.uniform(0.5, 5.0, size=n_m),
        tau=rng.uniform(0.2, 2.0, size=n_m),
        eta=rng.uniform(0.5, 5.0),
        nu=rng.uniform(0.2, 2.0),
        alpha=alpha,
        beta=rng.uniform(0.5, 3.0),
        b0=rng.uniform(0.5, 2.0),
        kappa=rng.uniform(0.5, 2.0),
    )


def posterior_for(basis, state, theta_u_hat):
    rs = build_residual_system(basis, state.omega_sq, state.phi)
    return rs, conditional_posterior(rs, state.beta, state.alpha, theta_u_hat)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_instance(rng):
    """Basis + dataset + feasible state + pseudo-data, all-active."""
    basis = random_basis(rng, n_dof=4, n_sub=3)
    dataset = random_dataset(rng, basis.n_dof, n_modes=2, n_segments=4, n_observed=3)
    state = random_state(rng, basis, dataset)
    theta_u_hat = rng.uniform(0.8, 1.2, size=basis.n_sub)
    return basis, dataset, state, theta_u_hat


@pytest.fixture(scope="session")
def bench_basis():
    spec = ShearBuildingSpec(
        n_stories=2,
        face_stiffness={"+x": 1.0, "-x": 1.0, "+y": 1.5, "-y": 1.5},
        floor_mass=1.0,
        rotational_inertia=0.6,
        plan_half_widths=(1.0, 1.0),
    )
    return build_shear_building(spec)
