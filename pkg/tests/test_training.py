import numpy as np
import pytest

from dadmm.engine import AGENT_SPECIFIC, SHARED, HyperparameterSchedule
from dadmm.graphs import generate_erdos_renyi, greedy_color
from dadmm.lasso import LASSO_HP_NAMES, generate_lasso_dataset
from dadmm.linreg import LINREG_HP_NAMES, generate_linreg_dataset
from dadmm.training import (
    Adam,
    DEFAULT_BASELINE_TUPLES,
    grid_search_baseline,
    init_baseline_hyperparameters,
    load_schedule,
    save_schedule,
    train,
    train_sequential,
)
from dadmm.unfolding import depth_losses


@pytest.fixture(scope="module")
def tiny_lasso():
    P = 3
    graph = generate_erdos_renyi(P, 0.8, seed=2)
    coloring = greedy_color(graph)
    ds = generate_lasso_dataset(P, 8, 4, 0.25, 2.0, 12, seed=31)
    return graph, coloring, ds


class TestAdam:
    def test_two_steps_hand_computed(self):
        # reference arithmetic for the standard update
        opt = Adam((2,), learning_rate=0.1)
        theta = np.array([1.0, -1.0])
        g1 = np.array([0.5, -0.2])

        m = 0.1 * g1
        v = 0.001 * g1 * g1
        m_hat = m / (1 - 0.9)
        v_hat = v / (1 - 0.999)
        want = theta - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
        got = opt.step(theta, g1)
        assert got == pytest.approx(want, rel=1e-12)

        g2 = np.array([-0.1, 0.4])
        m = 0.9 * m + 0.1 * g2
        v = 0.999 * v + 0.001 * g2 * g2
        m_hat = m / (1 - 0.9 ** 2)
        v_hat = v / (1 - 0.999 ** 2)
        want = got - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
        assert opt.step(got, g2) == pytest.approx(want, rel=1e-12)

    def test_zero_gradient_is_fixed_point(self):
        opt = Adam((3,), learning_rate=0.5)
        theta = np.array([1.0, 2.0, 3.0])
        for _ in range(4):
            theta_new = opt.step(theta, np.zeros(3))
            assert np.array_equal(theta_new, theta)
            theta = theta_new


class TestInitBaseline:
    def test_lasso_shared_shape(self):
        sched = init_baseline_hyperparameters("lasso", SHARED, 25)
        assert sched.num_parameters == 4 * 25
        assert np.all(sched.values == sched.values[0])

    def test_linreg_agent_specific_count(self):
        sched = init_baseline_hyperparameters("linreg", AGENT_SPECIFIC, 20, num_agents=5)
        assert sched.num_parameters == 6 * 5 * 20

    def test_parameter_count_law(self):
        for P, T in ((5, 20), (20, 25)):
            assert init_baseline_hyperparameters("lasso", AGENT_SPECIFIC, T, P).num_parameters == 4 * P * T
            assert init_baseline_hyperparameters("lasso", SHARED, T).num_parameters == 4 * T
            assert init_baseline_hyperparameters("linreg", AGENT_SPECIFIC, T, P).num_parameters == 6 * P * T
            assert init_baseline_hyperparameters("linreg", SHARED, T).num_parameters == 6 * T

    def test_custom_tuple(self):
        tup = {"rho": 9.0, "alpha": 1.0, "eta": 2.0, "tau": 3.0}
        sched = init_baseline_hyperparameters("lasso", SHARED, 2, tuple_values=tup)
        assert np.array_equal(sched.values[0], [9.0, 1.0, 2.0, 3.0])


class TestTrain:
    def test_zero_learning_rate_returns_init(self, tiny_lasso):
        graph, coloring, ds = tiny_lasso
        sched = init_baseline_hyperparameters("lasso", SHARED, 4)
        result = train(sched, ds, graph, coloring, epochs=2, batch_size=6,
                       learning_rate=0.0, seed=5, problem="lasso")
        assert np.array_equal(result.schedule.values, sched.values)
        assert not result.diverged

    def test_deterministic_given_seed(self, tiny_lasso):
        graph, coloring, ds = tiny_lasso
        sched = init_baseline_hyperparameters("lasso", SHARED, 4)
        r1 = train(sched, ds, graph, coloring, epochs=3, batch_size=6,
                   learning_rate=0.02, seed=7, problem="lasso")
        r2 = train(sched, ds, graph, coloring, epochs=3, batch_size=6,
                   learning_rate=0.02, seed=7, problem="lasso")
        assert np.array_equal(r1.schedule.values, r2.schedule.values)
        assert r1.history == r2.history
        assert r1.epoch_losses == r2.epoch_losses

    def test_best_checkpoint_not_worse_than_init(self, tiny_lasso):
        graph, coloring, ds = tiny_lasso
        sched = init_baseline_hyperparameters("lasso", SHARED, 4)
        result = train(sched, ds, graph, coloring, epochs=4, batch_size=6,
                       learning_rate=0.02, seed=9, problem="lasso")
        assert result.best_loss <= result.initial_loss
        final = depth_losses(ds, graph, coloring, result.schedule, 4)[-1]
        assert final == pytest.approx(result.best_loss)

    def test_history_row_count(self, tiny_lasso):
        graph, coloring, ds = tiny_lasso
        sched = init_baseline_hyperparameters("lasso", SHARED, 3)
        result = train(sched, ds, graph, coloring, epochs=3, batch_size=5,
                       learning_rate=0.01, seed=1, problem="lasso")
        assert len(result.history) == 3 * 3  # ceil(12 / 5) = 3 batches
        assert len(result.epoch_losses) == 4  # init + 3 epochs

    def test_batch_size_larger_than_dataset_rejected(self, tiny_lasso):
        graph, coloring, ds = tiny_lasso
        sched = init_baseline_hyperparameters("lasso", SHARED, 3)
        with pytest.raises(ValueError):
            train(sched, ds, graph, coloring, epochs=1, batch_size=13,
                  learning_rate=0.01, seed=1)


class TestTrainSequential:
    def test_full_segment_equals_end_to_end(self, tiny_lasso):
        graph, coloring, ds = tiny_lasso
        sched = init_baseline_hyperparameters("lasso", SHARED, 4)
        end_to_end = train(sched, ds, graph, coloring, epochs=3, batch_size=6,
                           learning_rate=0.02, seed=11, problem="lasso")
        one_segment = train_sequential(sched, ds, graph, coloring, segment_length=4,
                                       epochs_per_segment=3, batch_size=6,
                                       learning_rate=0.02, seed=11, problem="lasso")
        assert np.array_equal(end_to_end.schedule.values, one_segment.schedule.values)

    def test_earlier_segments_frozen(self, tiny_lasso):
        graph, coloring, ds = tiny_lasso
        sched = init_baseline_hyperparameters("lasso", SHARED, 4)
        result = train_sequential(sched, ds, graph, coloring, segment_length=2,
                                  epochs_per_segment=2, batch_size=6,
                                  learning_rate=0.05, seed=13, problem="lasso")
        # rerun the first segment alone: its parameters must match the final
        # schedule exactly, because segment 2 never touches them
        first_only = train_sequential(sched, ds, graph, coloring, segment_length=2,
                                      epochs_per_segment=2, batch_size=6,
                                      learning_rate=0.05, seed=13, problem="lasso")
        assert np.array_equal(result.schedule.values[:2], first_only.schedule.values[:2])
        # and segment 2 parameters did move away from the initialization
        assert not np.array_equal(result.schedule.values[2:], sched.values[2:])

    def test_segment_boundaries_cover_odd_tail(self, tiny_lasso):
        graph, coloring, ds = tiny_lasso
        sched = init_baseline_hyperparameters("lasso", SHARED, 5)
        result = train_sequential(sched, ds, graph, coloring, segment_length=2,
                                  epochs_per_segment=1, batch_size=6,
                                  learning_rate=0.02, seed=15, problem="lasso")
        assert result.schedule.num_iterations == 5
        with pytest.raises(ValueError):
            train_sequential(sched, ds, graph, coloring, segment_length=0,
                             epochs_per_segment=1, batch_size=6,
                             learning_rate=0.02, seed=15)


class TestGridSearch:
    def test_winner_converges_on_validation_instance(self):
        P = 5
        graph = generate_erdos_renyi(P, 0.5, seed=1)
        coloring = greedy_color(graph)
        ds = generate_lasso_dataset(P, 100, 20, 0.25, 2.0, 1, seed=999)
        grids = {
            "rho": [1.0],
            "alpha": [0.05, 0.3],
            "eta": [0.05, 0.2],
            "tau": [0.005],
        }
        res = grid_search_baseline([ds.problem(0, tau_eval=0.005)], graph, coloring, grids,
                                   max_iterations=1500, problem_tag="lasso", tolerance=1e-3)
        from dadmm.engine import run_dadmm
        sched = HyperparameterSchedule.constant(res.best, LASSO_HP_NAMES, 1500)
        trace = run_dadmm(ds.problem(0, tau_eval=0.005), graph, coloring, sched,
                          max_iterations=1500)
        assert trace.disagreement[-1] < 1e-3
        assert len(res.table) == 4

    def test_rejects_incomplete_grid(self):
        graph = generate_erdos_renyi(2, 1.0, seed=1)
        coloring = greedy_color(graph)
        ds = generate_lasso_dataset(2, 6, 2, 0.5, 2.0, 1, seed=1)
        with pytest.raises(ValueError):
            grid_search_baseline([ds.problem(0)], graph, coloring, {"rho": [1.0]},
                                 max_iterations=10, problem_tag="lasso")


class TestScheduleSerialization:
    def test_round_trip_agent_specific(self, tmp_path):
        rng = np.random.default_rng(0)
        values = rng.normal(size=(3, 4, 6))
        sched = HyperparameterSchedule(AGENT_SPECIFIC, LINREG_HP_NAMES, values)
        path = tmp_path / "theta.json"
        save_schedule(path, sched, "linreg")
        back, problem = load_schedule(path)
        assert problem == "linreg"
        assert back.mode == AGENT_SPECIFIC
        assert np.array_equal(back.values, values)

    def test_flat_ordering_iteration_major_agent_minor(self, tmp_path):
        import json
        values = np.arange(2 * 2 * 4, dtype=float).reshape(2, 2, 4)
        sched = HyperparameterSchedule(AGENT_SPECIFIC, LASSO_HP_NAMES, values)
        path = tmp_path / "theta.json"
        save_schedule(path, sched, "lasso")
        doc = json.loads(path.read_text())
        # iteration-major, agent-minor, then tuple order (rho, alpha, eta, tau)
        assert doc["values"] == list(range(16))
        assert doc["hp_names"] == ["rho", "alpha", "eta", "tau"]
        assert doc["num_agents"] == 2

    def test_shared_file_has_no_agent_count(self, tmp_path):
        import json
        sched = init_baseline_hyperparameters("lasso", SHARED, 3)
        path = tmp_path / "theta.json"
        save_schedule(path, sched, "lasso")
        doc = json.loads(path.read_text())
        assert "num_agents" not in doc
        back, _ = load_schedule(path)
        assert np.array_equal(back.values, sched.values)


class TestDefaults:
    def test_shipped_tuples_have_expected_names(self):
        assert set(DEFAULT_BASELINE_TUPLES["lasso"]) == set(LASSO_HP_NAMES)
        assert set(DEFAULT_BASELINE_TUPLES["linreg"]) == set(LINREG_HP_NAMES)
