import numpy as np
import pytest

from dadmm.linreg import (
    LinRegDataset,
    LinRegLocalData,
    LinRegModel,
    LinRegProblem,
    generate_linreg_dataset,
    linreg_dual_update_lambda,
    linreg_dual_update_mu,
    linreg_objective,
    linreg_primal_step_a,
    linreg_primal_step_omega,
)


class TestObjective:
    def test_perfect_fit(self):
        X = np.array([[1.0, 2.0], [0.0, -1.0], [3.0, 1.0]])
        a = np.array([0.5, -1.5])
        omega = 0.25
        data = LinRegLocalData(X, X @ a + omega)
        assert linreg_objective(data, LinRegModel(a, omega)) == pytest.approx(0.0)

    def test_single_sample_constant_miss(self):
        data = LinRegLocalData(np.array([[0.0]]), np.array([1.0]))
        assert linreg_objective(data, LinRegModel(np.array([0.0]), 0.0)) == pytest.approx(0.5)

    def test_two_sample_hand_value(self):
        data = LinRegLocalData(np.array([[1.0], [-1.0]]), np.array([2.0, 0.0]))
        assert linreg_objective(data, LinRegModel(np.array([1.0]), 1.0)) == pytest.approx(0.0)

    def test_empty_samples_rejected(self):
        with pytest.raises(ValueError):
            LinRegLocalData(np.zeros((0, 2)), np.zeros(0))

    def test_dimension_mismatch(self):
        data = LinRegLocalData(np.array([[1.0, 0.0]]), np.array([1.0]))
        with pytest.raises(ValueError):
            linreg_objective(data, LinRegModel(np.array([1.0]), 0.0))


class TestPrimalSteps:
    def test_a_unchanged_when_features_zero(self):
        data = LinRegLocalData(np.zeros((3, 2)), np.array([1.0, 2.0, 3.0]))
        a = np.array([0.7, -0.3])
        out = linreg_primal_step_a(data, a, 5.0, {}, np.zeros(2), alpha=0.3, rho=1.0)
        assert out == pytest.approx(a)

    def test_a_single_sample_hand_value(self):
        data = LinRegLocalData(np.array([[1.0]]), np.array([0.0]))
        out = linreg_primal_step_a(data, np.array([1.0]), 0.0, {}, np.zeros(1), alpha=1.0, rho=0.0)
        assert out == pytest.approx([0.0])

    def test_a_consensus_with_zero_duals_is_local_step(self):
        rng = np.random.default_rng(0)
        data = LinRegLocalData(rng.normal(size=(4, 3)), rng.normal(size=4))
        a = rng.normal(size=3)
        copies = {2: a.copy(), 4: a.copy()}
        with_nbrs = linreg_primal_step_a(data, a, 0.5, copies, np.zeros(3), alpha=0.2, rho=3.0)
        without = linreg_primal_step_a(data, a, 0.5, {}, np.zeros(3), alpha=0.2, rho=3.0)
        assert with_nbrs == pytest.approx(without)

    def test_omega_stationary_at_perfect_fit(self):
        X = np.array([[1.0], [2.0]])
        a = np.array([1.5])
        omega = -0.5
        data = LinRegLocalData(X, (X @ a + omega))
        out = linreg_primal_step_omega(data, a, omega, {3: omega}, 0.0, delta=0.4, beta=2.0)
        assert out == pytest.approx(omega)

    def test_omega_single_sample_hand_value(self):
        data = LinRegLocalData(np.array([[0.0]]), np.array([1.0]))
        out = linreg_primal_step_omega(data, np.array([3.0]), 0.0, {}, 0.0, delta=0.5, beta=0.0)
        assert out == pytest.approx(0.5)

    def test_data_terms_match_finite_differences(self):
        rng = np.random.default_rng(1)
        data = LinRegLocalData(rng.normal(size=(5, 3)), rng.normal(size=5))
        a = rng.normal(size=3)
        omega = float(rng.normal())
        h = 1e-6

        # recover gradients from the steps with unit step size, no neighbors
        ga = (a - linreg_primal_step_a(data, a, omega, {}, np.zeros(3), alpha=1.0, rho=0.0))
        gw = omega - linreg_primal_step_omega(data, a, omega, {}, 0.0, delta=1.0, beta=0.0)

        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd = (linreg_objective(data, LinRegModel(a + e, omega))
                  - linreg_objective(data, LinRegModel(a - e, omega))) / (2 * h)
            assert abs(ga[i] - fd) <= 1e-6 * max(1.0, abs(fd))
        fd_w = (linreg_objective(data, LinRegModel(a, omega + h))
                - linreg_objective(data, LinRegModel(a, omega - h))) / (2 * h)
        assert abs(gw - fd_w) <= 1e-6 * max(1.0, abs(fd_w))


class TestDualUpdates:
    def test_mu_consensus_unchanged(self):
        mu = np.array([0.2, -0.4])
        a = np.array([1.0, 0.0])
        assert linreg_dual_update_mu(mu, a, {2: a.copy()}, eta=1.0) == pytest.approx(mu)

    def test_mu_single_neighbor(self):
        out = linreg_dual_update_mu(np.zeros(2), np.array([1.0, 0.0]),
                                    {2: np.zeros(2)}, eta=1.0)
        assert out == pytest.approx([1.0, 0.0])

    def test_mu_no_neighbors(self):
        mu = np.array([0.5])
        assert linreg_dual_update_mu(mu, np.array([2.0]), {}, eta=0.3) == pytest.approx(mu)

    def test_lambda_mirror_cases(self):
        assert linreg_dual_update_lambda(0.7, 2.0, {4: 2.0}, gamma=0.9) == pytest.approx(0.7)
        assert linreg_dual_update_lambda(0.0, 1.0, {4: 0.0}, gamma=0.5) == pytest.approx(0.5)
        assert linreg_dual_update_lambda(0.3, 9.0, {}, gamma=1.0) == pytest.approx(0.3)


class TestGenerateDataset:
    def test_noiseless_pooled_normal_equations(self):
        ds = generate_linreg_dataset(2, 1, 3, 0.0, 2, seed=21)
        for i in range(2):
            X = ds.features[i].reshape(-1, 1)
            s = ds.labels[i].ravel()
            design = np.hstack([X, np.ones((X.shape[0], 1))])
            sol, *_ = np.linalg.lstsq(design, s, rcond=None)
            assert sol == pytest.approx(ds.targets[i], abs=1e-10)

    def test_deterministic(self):
        a = generate_linreg_dataset(3, 4, 5, 0.1, 3, seed=9)
        b = generate_linreg_dataset(3, 4, 5, 0.1, 3, seed=9)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.targets, b.targets)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            generate_linreg_dataset(0, 4, 5, 0.1, 1, seed=1)
        with pytest.raises(ValueError):
            generate_linreg_dataset(2, 4, 5, -0.1, 1, seed=1)

    def test_json_round_trip(self, tmp_path):
        ds = generate_linreg_dataset(2, 3, 4, 0.2, 3, seed=10, num_train=2)
        path = tmp_path / "ds.json"
        ds.to_json(path)
        back = LinRegDataset.from_json(path)
        assert np.array_equal(back.features, ds.features)
        assert np.array_equal(back.labels, ds.labels)
        assert np.array_equal(back.targets, ds.targets)
        assert back.num_train == 2

    def test_target_model_view(self):
        ds = generate_linreg_dataset(2, 3, 4, 0.0, 1, seed=11)
        model = ds.target_model(0)
        assert np.array_equal(model.stacked(), ds.targets[0])


class TestProblemInstance:
    def test_combined_step_matches_functional_ops(self):
        rng = np.random.default_rng(2)
        ds = generate_linreg_dataset(3, 4, 6, 0.1, 1, seed=12)
        prob = ds.problem(0)
        d = 4
        y = rng.normal(size=d + 1)
        duals = rng.normal(size=d + 1)
        copies = {2: rng.normal(size=d + 1), 3: rng.normal(size=d + 1)}
        hp = np.array([0.1, 0.3, 0.2, 0.4, 0.05, 0.06])  # (alpha, rho, delta, beta, eta, gamma)

        stepped = y - prob.primal_step_sizes(hp) * prob.primal_gradient(1, y, copies, duals, hp)

        a_copies = {j: c[:d] for j, c in copies.items()}
        w_copies = {j: float(c[d]) for j, c in copies.items()}
        a_new = linreg_primal_step_a(prob.data[0], y[:d], y[d], a_copies, duals[:d],
                                     alpha=0.1, rho=0.3)
        w_new = linreg_primal_step_omega(prob.data[0], y[:d], y[d], w_copies, float(duals[d]),
                                         delta=0.2, beta=0.4)
        assert stepped[:d] == pytest.approx(a_new, rel=1e-12, abs=1e-12)
        assert stepped[d] == pytest.approx(w_new, rel=1e-12, abs=1e-12)

    def test_dual_updates_match_functional_ops(self):
        rng = np.random.default_rng(3)
        ds = generate_linreg_dataset(2, 3, 4, 0.1, 1, seed=13)
        prob = ds.problem(0)
        d = 3
        y = rng.normal(size=d + 1)
        duals = rng.normal(size=d + 1)
        copies = {2: rng.normal(size=d + 1)}
        hp = np.array([0.1, 0.3, 0.2, 0.4, 0.05, 0.06])
        updated = prob.dual_updates(1, y, copies, duals, hp)
        mu_new = linreg_dual_update_mu(duals[:d], y[:d], {2: copies[2][:d]}, eta=0.05)
        lam_new = linreg_dual_update_lambda(float(duals[d]), float(y[d]),
                                            {2: float(copies[2][d])}, gamma=0.06)
        assert updated[:d] == pytest.approx(mu_new, rel=1e-12)
        assert updated[d] == pytest.approx(lam_new, rel=1e-12)

    def test_combined_step_is_plain_descent_under_consensus(self):
        # zero duals + full consensus: one engine step equals gradient descent
        # on the local objective with per-block step sizes
        rng = np.random.default_rng(4)
        ds = generate_linreg_dataset(2, 3, 5, 0.1, 1, seed=14)
        prob = ds.problem(0)
        y = rng.normal(size=4)
        copies = {2: y.copy()}
        hp = np.array([0.07, 1.0, 0.09, 1.0, 0.0, 0.0])
        stepped = y - prob.primal_step_sizes(hp) * prob.primal_gradient(1, y, copies, np.zeros(4), hp)

        h = 1e-7
        grad = np.zeros(4)
        for i in range(4):
            e = np.zeros(4)
            e[i] = h
            up = prob.local_objective(1, y + e)
            dn = prob.local_objective(1, y - e)
            grad[i] = (up - dn) / (2 * h)
        expected = y - np.concatenate([0.07 * grad[:3], [0.09 * grad[3]]])
        assert stepped == pytest.approx(expected, abs=1e-6)

    def test_dual_update_zero_under_consensus_any_step(self):
        ds = generate_linreg_dataset(2, 2, 3, 0.0, 1, seed=15)
        prob = ds.problem(0)
        y = np.array([1.0, -2.0, 0.5])
        for eta, gamma in ((0.1, 0.9), (5.0, -3.0)):
            hp = np.array([0.1, 0.3, 0.2, 0.4, eta, gamma])
            duals = np.array([0.2, 0.3, -0.1])
            out = prob.dual_updates(1, y, {2: y.copy()}, duals, hp)
            assert out == pytest.approx(duals)

    def test_split_duals(self):
        ds = generate_linreg_dataset(2, 2, 3, 0.0, 1, seed=16)
        prob = ds.problem(0)
        duals = prob.split_duals(np.array([1.0, 2.0, 3.0]))
        assert np.array_equal(duals.mu, [1.0, 2.0])
        assert duals.lam == 3.0
