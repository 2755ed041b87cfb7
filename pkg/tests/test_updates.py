"""MAP update formulas: arithmetic cases, stationarity, gradient oracles."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from sparsemodal.errors import DegenerateDataError
from sparsemodal.kernels import (
    build_b,
    build_f,
    build_g_c,
    build_h,
    build_residual_system,
    build_t_u,
    conditional_posterior,
    objective_gradients,
    objective_j,
    PosteriorState,
    ResidualSystem,
)
from sparsemodal.modal import ModalDataset, build_selection, flatten_dataset
from sparsemodal.updates import (
    init_hypers,
    update_alpha,
    update_b0_kappa,
    update_beta,
    update_eta,
    update_omega_sq,
    update_phi,
    update_rho,
)

from conftest import random_basis, random_dataset, random_state


def make_dataset(freq_sq, shapes, dofs):
    return ModalDataset(observed_dofs=dofs, freq_sq=freq_sq, mode_shapes=shapes)


class TestUpdateEta:
    def test_direct_arithmetic(self, rng):
        # Ns=3, Nm=1, No=2, residual norm^2 == 1 -> eta = 4
        dofs = (0, 1)
        freq = np.full((3, 1), 2.0)
        shapes = rng.standard_normal((3, 1, 2))
        dataset = make_dataset(freq, shapes, dofs)
        selection = build_selection(dofs, 2, 1, 3)
        # choose phi so that the residual norm is exactly 1
        _, psi_hat = flatten_dataset(dataset)
        phi = np.zeros(2)
        base = psi_hat - selection.gamma @ phi
        phi_scaled = phi + 0.0  # zero phi: residual == ||psi_hat||
        eta, nu = update_eta(dataset, selection, phi_scaled)
        ssq = float(base @ base)
        np.testing.assert_allclose(eta, (6 - 2) / ssq)
        np.testing.assert_allclose(nu, ssq / 4)

    def test_known_residual(self):
        # residual norm^2 = 4 with Ns*Nm*No = 6 -> eta = 1
        dofs = (0, 1)
        freq = np.full((3, 1), 2.0)
        shapes = np.tile(np.array([[[1.0, 0.0]]]), (3, 1, 1))
        dataset = make_dataset(freq, shapes, dofs)
        selection = build_selection(dofs, 2, 1, 3)
        # every observed entry deviates by sqrt(4/6)
        dev = np.sqrt(4.0 / 6.0)
        _, psi_hat = flatten_dataset(dataset)
        # solve gamma @ phi = psi_hat - dev exactly (full observation per mode)
        phi = np.linalg.lstsq(selection.gamma, psi_hat - dev, rcond=None)[0]
        res = psi_hat - selection.gamma @ phi
        np.testing.assert_allclose(res @ res, 4.0)
        eta, _ = update_eta(dataset, selection, phi)
        np.testing.assert_allclose(eta, 1.0)

    def test_fixed_point_consistency(self, rng):
        # eta = N/(2 nu + r) with nu = 1/eta is equivalent to eta = (N-2)/r
        for _ in range(10):
            n = int(rng.integers(4, 50))
            r = float(rng.uniform(0.1, 10.0))
            eta_closed = (n - 2) / r
            eta_fp = n / (2 / eta_closed + r)
            np.testing.assert_allclose(eta_fp, eta_closed, rtol=1e-12)

    def test_zero_residual_degenerate(self, rng):
        dofs = (0, 1)
        freq = np.full((3, 1), 2.0)
        shapes = np.tile(np.array([[[0.6, 0.8]]]), (3, 1, 1))
        dataset = make_dataset(freq, shapes, dofs)
        selection = build_selection(dofs, 2, 1, 3)
        phi = dataset.mode_shapes[0, 0]  # exact fit, zero residual
        with pytest.raises(DegenerateDataError):
            update_eta(dataset, selection, phi)


class TestUpdateRho:
    def test_arithmetic_three_segments(self):
        dofs = (0, 1, 2)
        freq = np.array([[1.5], [1.5], [1.0]])
        shapes = np.tile(np.array([[[1.0, 0.0, 0.0]]]), (3, 1, 1))
        dataset = make_dataset(freq, shapes, dofs)
        rho, tau = update_rho(dataset, np.array([1.0]))
        # deviations (0.5, 0.5, 0): sum of squares 0.5 -> rho = 1/0.5 = 2
        np.testing.assert_allclose(rho, [2.0])
        np.testing.assert_allclose(tau, [0.5])

    def test_arithmetic_four_segments(self):
        dofs = (0, 1, 2)
        freq = np.full((4, 1), 1.1)
        shapes = np.tile(np.array([[[1.0, 0.0, 0.0]]]), (4, 1, 1))
        dataset = make_dataset(freq, shapes, dofs)
        rho, _ = update_rho(dataset, np.array([1.0]))
        # four deviations of 0.1 -> rho = 2/0.04 = 50
        np.testing.assert_allclose(rho, [50.0])

    def test_segment_permutation_invariance(self, rng):
        basis = random_basis(rng, n_dof=3, n_sub=2)
        dataset = random_dataset(rng, 3, n_modes=2, n_segments=5)
        omega_sq = rng.uniform(0.5, 4.0, size=2)
        rho1, _ = update_rho(dataset, omega_sq)
        perm = rng.permutation(5)
        shuffled = ModalDataset(
            observed_dofs=dataset.observed_dofs,
            freq_sq=dataset.freq_sq[perm],
            mode_shapes=dataset.mode_shapes[perm],
        )
        rho2, _ = update_rho(shuffled, omega_sq)
        np.testing.assert_allclose(rho1, rho2, rtol=1e-12)

    def test_zero_deviation_degenerate(self):
        dofs = (0, 1, 2)
        freq = np.full((3, 1), 2.0)
        shapes = np.tile(np.array([[[1.0, 0.0, 0.0]]]), (3, 1, 1))
        dataset = make_dataset(freq, shapes, dofs)
        with pytest.raises(DegenerateDataError):
            update_rho(dataset, np.array([2.0]))


class TestUpdateAlpha:
    def test_arithmetic(self):
        sigma = np.diag([0.01, 0.02])
        mu = np.array([0.9, 1.0])
        post = PosteriorState(mu=mu, sigma=sigma, active=np.array([True, True]))
        alpha = update_alpha(post, np.array([1.0, 1.0]))
        np.testing.assert_allclose(alpha, [0.01 + 0.01, 0.02])

    def test_pruning_pressure_limit(self):
        post = PosteriorState(
            mu=np.array([1.0]), sigma=np.array([[1e-14]]), active=np.array([True])
        )
        alpha = update_alpha(post, np.array([1.0]))
        assert alpha[0] == pytest.approx(1e-14, rel=1e-6)

    def test_pruned_stay_zero(self):
        sigma = np.zeros((2, 2))
        sigma[0, 0] = 0.05
        post = PosteriorState(
            mu=np.array([0.9, 1.0]), sigma=sigma, active=np.array([True, False])
        )
        alpha = update_alpha(post, np.array([1.0, 1.0]))
        assert alpha[1] == 0.0
        np.testing.assert_allclose(alpha[0], 0.05 + 0.01)

    def test_zeroes_own_derivative(self, rng):
        # the alpha stationarity: alpha^-2 diff^2 - alpha^-1 + alpha^-2 sjj = 0
        sigma = np.diag(rng.uniform(0.01, 0.1, size=3))
        mu = rng.uniform(0.8, 1.2, size=3)
        theta_u = rng.uniform(0.8, 1.2, size=3)
        post = PosteriorState(mu=mu, sigma=sigma, active=np.ones(3, dtype=bool))
        alpha = update_alpha(post, theta_u)
        resid = (
            (theta_u - mu) ** 2 / alpha**2 - 1.0 / alpha + np.diag(sigma) / alpha**2
        )
        np.testing.assert_allclose(resid, 0.0, atol=1e-10)


class TestUpdateBeta:
    def test_arithmetic(self):
        # one active parameter with sigma_jj = alpha_j (gamma = 0),
        # Nd*Nm = 2, ||H mu - b||^2 = 1, b0 = 2 -> beta = 2 / (1 + 1) = 1
        h = np.array([[1.0], [0.0]])
        b = np.array([2.0, 0.0])  # mu = 1 -> residual (1-2, 0) -> norm^2 = 1
        rs = ResidualSystem(b=b, h=h)
        post = PosteriorState(
            mu=np.array([1.0]), sigma=np.array([[0.5]]), active=np.array([True])
        )
        beta = update_beta(post, rs, np.array([0.5]), b0=2.0, a0=1.0)
        np.testing.assert_allclose(beta, 1.0)

    def test_all_pruned_empty_sum(self):
        h = np.ones((4, 2))
        b = np.zeros(4)
        rs = ResidualSystem(b=b, h=h)
        theta = np.array([0.5, 0.5])
        post = PosteriorState(
            mu=theta, sigma=np.zeros((2, 2)), active=np.zeros(2, dtype=bool)
        )
        # residual = H theta = (1,1,1,1) -> norm^2 = 4
        beta = update_beta(post, rs, np.zeros(2), b0=1.0, a0=1.0)
        np.testing.assert_allclose(beta, 4.0 / (4.0 + 2.0))

    def test_zeroes_own_derivative(self, rng):
        h = rng.standard_normal((8, 3))
        b = rng.standard_normal(8)
        rs = ResidualSystem(b=b, h=h)
        alpha = rng.uniform(0.2, 1.0, size=3)
        theta_u = rng.uniform(0.8, 1.2, size=3)
        post = conditional_posterior(rs, 1.0, alpha, theta_u)
        b0 = 1.5
        beta = update_beta(post, rs, alpha, b0=b0, a0=1.0)
        r = rs.h @ post.mu - rs.b
        gamma_sum = np.sum(1 - np.diag(post.sigma) / alpha)
        # stationarity with the posterior frozen at the pre-update values
        deriv = (
            0.5 * (rs.b.size + 2 * 1.0 - 2) / beta
            - 0.5 * r @ r
            - 0.5 * gamma_sum / beta
            - 1.0 / b0
        )
        np.testing.assert_allclose(deriv, 0.0, atol=1e-12)


class TestUpdateB0Kappa:
    def test_fixed_point_arithmetic(self):
        b0, kappa = update_b0_kappa(beta=1.0, a0=1.0, kappa=2.0)
        np.testing.assert_allclose(b0, 0.5)
        np.testing.assert_allclose(kappa, 2.0)

    def test_small_kappa_beta_limit(self):
        b0, _ = update_b0_kappa(beta=1.0, a0=1.0, kappa=1e-14)
        np.testing.assert_allclose(b0, 1.0, rtol=1e-6)

    def test_root_condition(self, rng):
        for _ in range(20):
            beta = float(rng.uniform(0.1, 10.0))
            kappa = float(rng.uniform(0.1, 5.0))
            b0, _ = update_b0_kappa(beta, 1.0, kappa)
            np.testing.assert_allclose(beta / b0**2 - 1.0 / b0 - kappa, 0.0, atol=1e-10)


class TestInitHypers:
    def test_eta_bar_unit_norm_convention(self, rng):
        # unit-norm shapes: ||psi||^2 = Ns*Nm; Ns=3, Nm=1, No=4 -> eta = 10/3
        dofs = (0, 1, 2, 3)
        freq = np.full((3, 1), 2.0)
        shapes = rng.standard_normal((3, 1, 4))
        dataset = make_dataset(freq, shapes, dofs)
        init = init_hypers(dataset, n_dof=4, b0=1.0)
        np.testing.assert_allclose(init.eta_bar, (12 - 2) / 3.0)

    def test_beta_bar(self, rng):
        dofs = (0, 1, 2)
        freq = np.full((3, 4), 2.0) + rng.uniform(0, 0.1, (3, 4))
        shapes = rng.standard_normal((3, 4, 3))
        dataset = make_dataset(freq, shapes, dofs)
        init = init_hypers(dataset, n_dof=3, b0=2.0)
        # (1/2) * b0 * Nd * Nm with a0 = 1
        np.testing.assert_allclose(init.beta_bar, 0.5 * 2.0 * 3 * 4)

    def test_rho_bar_positive(self, rng):
        basis = random_basis(rng, n_dof=4, n_sub=2)
        dataset = random_dataset(rng, 4, n_modes=3, n_segments=5, n_observed=3)
        init = init_hypers(dataset, basis.n_dof, b0=1.0)
        assert np.all(init.rho_bar > 0)

    def test_too_few_sensors_rejected(self, rng):
        dataset = random_dataset(rng, 4, n_modes=2, n_segments=4, n_observed=2)
        with pytest.raises(ValueError):
            init_hypers(dataset, 4, b0=1.0)


class TestUpdatePhi:
    def test_dominant_data_limit(self, rng):
        """Full observation, one segment, huge eta: phi -> psi_hat."""
        basis = random_basis(rng, n_dof=3, n_sub=2)
        n_m = 2
        freq = np.tile(rng.uniform(0.5, 2.0, size=(1, n_m)), (3, 1))
        freq += rng.uniform(0, 1e-3, size=(3, n_m))
        shapes = np.tile(rng.standard_normal((1, n_m, 3)), (3, 1, 1))
        dataset = make_dataset(freq, shapes, (0, 1, 2))
        state = random_state(rng, basis, dataset)
        state = replace(state, eta=1e12, beta=1e-8)
        theta_u = rng.uniform(0.8, 1.2, size=2)
        rs = build_residual_system(basis, state.omega_sq, state.phi)
        post = conditional_posterior(rs, state.beta, state.alpha, theta_u)
        phi = update_phi(state, basis, dataset, post)
        _, psi_hat = flatten_dataset(dataset)
        expected = np.mean(dataset.mode_shapes, axis=0).reshape(-1)
        np.testing.assert_allclose(phi, expected, atol=1e-6)

    def test_vanishing_prior_limit(self, rng):
        """beta -> 0+: observed rows tend to the segment-mean data; the
        unobserved rows solve the eigen-consistency complement (the betas
        cancel in the unobserved block, so they stay finite, not zero)."""
        basis = random_basis(rng, n_dof=4, n_sub=2)
        dataset = random_dataset(rng, 4, n_modes=1, n_segments=4, n_observed=2)
        state = random_state(rng, basis, dataset)
        state = replace(state, beta=1e-13)
        theta_u = rng.uniform(0.8, 1.2, size=2)
        rs = build_residual_system(basis, state.omega_sq, state.phi)
        post = conditional_posterior(rs, state.beta, state.alpha, theta_u)
        phi = update_phi(state, basis, dataset, post)
        obs = list(dataset.observed_dofs)
        unobs = [d for d in range(4) if d not in obs]
        expected_obs = np.mean(dataset.mode_shapes, axis=0)[0]
        np.testing.assert_allclose(phi[obs], expected_obs, atol=1e-4)
        # unobserved block: (F^T F + diag(tr(sigma T))) phi + tr(sigma U) = 0
        n_q = phi.size
        tvec = np.empty(n_q)
        uvec = np.empty(n_q)
        for q in range(n_q):
            t_q, u_q = build_t_u(basis, state.phi, q)
            tvec[q] = np.trace(post.sigma @ t_q)
            uvec[q] = np.trace(post.sigma @ u_q)
        f = build_f(basis, post.mu, state.omega_sq)
        resid = (f.T @ f) @ phi + tvec * phi + uvec
        scale = max(1.0, float(np.max(np.abs((f.T @ f) @ phi))))
        np.testing.assert_allclose(resid[unobs] / scale, 0.0, atol=1e-6)

    def test_solves_frozen_stationarity(self, rng):
        """The returned phi zeroes the update's own gradient: the full
        objective gradient with the posterior and trace terms frozen at the
        values used in the solve."""
        basis = random_basis(rng, n_dof=3, n_sub=3)
        dataset = random_dataset(rng, 3, n_modes=2, n_segments=4, n_observed=2)
        state = random_state(rng, basis, dataset)
        theta_u = rng.uniform(0.8, 1.2, size=3)
        rs = build_residual_system(basis, state.omega_sq, state.phi)
        post = conditional_posterior(rs, state.beta, state.alpha, theta_u)
        selection = build_selection(dataset.observed_dofs, 3, 2, 4)
        phi_new = update_phi(state, basis, dataset, post)

        _, psi_hat = flatten_dataset(dataset)
        n_q = phi_new.size
        tvec = np.empty(n_q)
        uvec = np.empty(n_q)
        for q in range(n_q):
            t_q, u_q = build_t_u(basis, state.phi, q)  # frozen at old phi
            tvec[q] = np.trace(post.sigma @ t_q)
            uvec[q] = np.trace(post.sigma @ u_q)
        f = build_f(basis, post.mu, state.omega_sq)
        grad = (
            state.eta * (selection.gamma.T @ (psi_hat - selection.gamma @ phi_new))
            - state.beta * (tvec * phi_new + uvec)
            - state.beta * f.T @ (f @ phi_new)
        )
        scale = max(
            np.linalg.norm(state.eta * selection.gamma.T @ psi_hat),
            np.linalg.norm(state.beta * f.T @ (f @ phi_new)),
            1.0,
        )
        assert np.linalg.norm(grad) <= 1e-8 * scale


class TestUpdateOmegaSq:
    def test_data_only_limit(self, rng):
        basis = random_basis(rng, n_dof=3, n_sub=2)
        dataset = random_dataset(rng, 3, n_modes=2, n_segments=4)
        state = random_state(rng, basis, dataset)
        state = replace(state, beta=1e-14)
        theta_u = rng.uniform(0.8, 1.2, size=2)
        rs = build_residual_system(basis, state.omega_sq, state.phi)
        post = conditional_posterior(rs, state.beta, state.alpha, theta_u)
        new = update_omega_sq(state, basis, dataset, post)
        np.testing.assert_allclose(new, dataset.freq_sq.mean(axis=0), rtol=1e-8)

    def test_prior_only_limit(self, rng):
        basis = random_basis(rng, n_dof=3, n_sub=2)
        dataset = random_dataset(rng, 3, n_modes=2, n_segments=4)
        state = random_state(rng, basis, dataset)
        state = replace(state, rho=np.full(2, 1e-14))
        theta_u = rng.uniform(0.8, 1.2, size=2)
        rs = build_residual_system(basis, state.omega_sq, state.phi)
        post = conditional_posterior(rs, state.beta, state.alpha, theta_u)
        new = update_omega_sq(state, basis, dataset, post)
        g, c = build_g_c(basis, post.mu, state.phi)
        expected = np.linalg.solve(g.T @ g, g.T @ c)
        np.testing.assert_allclose(new, expected, rtol=1e-8)

    def test_solves_frozen_stationarity(self, rng):
        basis = random_basis(rng, n_dof=3, n_sub=3)
        dataset = random_dataset(rng, 3, n_modes=2, n_segments=4)
        state = random_state(rng, basis, dataset)
        theta_u = rng.uniform(0.8, 1.2, size=3)
        rs = build_residual_system(basis, state.omega_sq, state.phi)
        post = conditional_posterior(rs, state.beta, state.alpha, theta_u)
        new = update_omega_sq(state, basis, dataset, post)
        g, c = build_g_c(basis, post.mu, state.phi)
        freq_dev_sum = np.sum(dataset.freq_sq - new[None, :], axis=0)
        grad = state.rho * freq_dev_sum - state.beta * (g.T @ (g @ new) - g.T @ c)
        assert np.max(np.abs(grad)) <= 1e-8 * max(1.0, float(np.max(np.abs(state.rho * dataset.freq_sq.sum(0)))))


class TestGradientOracle:
    """Analytic total derivatives match central finite differences of the
    objective on random feasible states."""

    @staticmethod
    def _fd(fun, x0, eps):
        return (fun(x0 + eps) - fun(x0 - eps)) / (2 * eps)

    def test_all_blocks(self, rng):
        for trial in range(5):
            basis = random_basis(rng, n_dof=3, n_sub=3)
            dataset = random_dataset(rng, 3, n_modes=2, n_segments=4, n_observed=2)
            state = random_state(rng, basis, dataset)
            theta_u = rng.uniform(0.8, 1.2, size=3)
            selection = build_selection(dataset.observed_dofs, 3, 2, 4)
            grads = objective_gradients(state, dataset, basis, theta_u, selection)

            def obj(s):
                return objective_j(s, dataset, basis, theta_u, selection)

            # phi components
            for q in range(state.phi.size):
                def fphi(x, q=q):
                    phi = state.phi.copy()
                    phi[q] = x
                    return obj(replace(state, phi=phi))

                fd = self._fd(fphi, state.phi[q], 1e-6)
                np.testing.assert_allclose(grads["phi"][q], fd, rtol=1e-5, atol=1e-6)

            # omega_sq components
            for i in range(state.n_modes):
                def fom(x, i=i):
                    om = state.omega_sq.copy()
                    om[i] = x
                    return obj(replace(state, omega_sq=om))

                fd = self._fd(fom, state.omega_sq[i], 1e-6)
                np.testing.assert_allclose(grads["omega_sq"][i], fd, rtol=1e-5, atol=1e-6)

            # alpha components
            for j in range(basis.n_sub):
                def fal(x, j=j):
                    al = state.alpha.copy()
                    al[j] = x
                    return obj(replace(state, alpha=al))

                fd = self._fd(fal, state.alpha[j], 1e-7)
                np.testing.assert_allclose(grads["alpha"][j], fd, rtol=1e-5, atol=1e-6)

            # scalars
            for name in ("beta", "eta", "nu", "b0", "kappa"):
                def fsc(x, name=name):
                    return obj(replace(state, **{name: x}))

                fd = self._fd(fsc, getattr(state, name), 1e-7)
                np.testing.assert_allclose(grads[name], fd, rtol=1e-5, atol=1e-6)

            # rho and tau vectors
            for i in range(state.n_modes):
                def frho(x, i=i):
                    rho = state.rho.copy()
                    rho[i] = x
                    return obj(replace(state, rho=rho))

                fd = self._fd(frho, state.rho[i], 1e-7)
                np.testing.assert_allclose(grads["rho"][i], fd, rtol=1e-5, atol=1e-6)

                def ftau(x, i=i):
                    tau = state.tau.copy()
                    tau[i] = x
                    return obj(replace(state, tau=tau))

                fd = self._fd(ftau, state.tau[i], 1e-7)
                np.testing.assert_allclose(grads["tau"][i], fd, rtol=1e-5, atol=1e-6)


class TestCoordinateAscent:
    """Each update (with its paired rate parameter) does not decrease the
    objective when started from a state whose posterior is current."""

    def _ascent_case(self, rng, seed_offset=0):
        basis = random_basis(rng, n_dof=3, n_sub=3)
        dataset = random_dataset(rng, 3, n_modes=2, n_segments=4, n_observed=3)
        state = random_state(rng, basis, dataset)
        theta_u = rng.uniform(0.8, 1.2, size=3)
        selection = build_selection(dataset.observed_dofs, 3, 2, 4)
        rs = build_residual_system(basis, state.omega_sq, state.phi)
        post = conditional_posterior(rs, state.beta, state.alpha, theta_u)
        return basis, dataset, state, theta_u, selection, post

    def test_eta_rho_b0_blocks_ascend(self, rng):
        for _ in range(20):
            basis, dataset, state, theta_u, selection, post = self._ascent_case(rng)
            before = objective_j(state, dataset, basis, theta_u, selection)

            eta, nu = update_eta(dataset, selection, state.phi)
            after = objective_j(
                replace(state, eta=eta, nu=nu), dataset, basis, theta_u, selection
            )
            assert after >= before - 1e-9

            rho, tau = update_rho(dataset, state.omega_sq)
            after = objective_j(
                replace(state, rho=rho, tau=tau), dataset, basis, theta_u, selection
            )
            assert after >= before - 1e-9

            b0, kappa = update_b0_kappa(state.beta, state.a0, state.kappa)
            after = objective_j(
                replace(state, b0=b0, kappa=kappa), dataset, basis, theta_u, selection
            )
            assert after >= before - 1e-9

    def test_omega_update_ascends(self, rng):
        for _ in range(20):
            basis, dataset, state, theta_u, selection, post = self._ascent_case(rng)
            before = objective_j(state, dataset, basis, theta_u, selection)
            omega = update_omega_sq(state, basis, dataset, post)
            after = objective_j(
                replace(state, omega_sq=omega), dataset, basis, theta_u, selection
            )
            assert after >= before - 1e-9
