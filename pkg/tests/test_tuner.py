import math

import numpy as np
import pytest

from cyclecast.errors import ConfigError, DataError
from cyclecast.tuner import (
    Dimension, ParamSpace, Trial, expected_improvement, fit_surrogate,
    gp_fit, incumbent_trace, optimize, random_search,
)


def sphere_space():
    return ParamSpace(dimensions=(
        Dimension("x", -5.0, 5.0),
        Dimension("y", -5.0, 5.0),
    ))


def sphere(p):
    return p["x"] ** 2 + p["y"] ** 2


class TestDimension:
    def test_linear_round_trip(self):
        d = Dimension("x", -5.0, 5.0)
        assert d.from_unit(0.5) == 0.0
        assert d.to_unit(2.5) == pytest.approx(0.75)

    def test_log_scale_midpoint_is_geometric_mean(self):
        d = Dimension("lr", 1e-3, 0.3, scale="log")
        assert d.from_unit(0.0) == pytest.approx(1e-3)
        assert d.from_unit(1.0) == pytest.approx(0.3)
        assert d.from_unit(0.5) == pytest.approx(math.sqrt(1e-3 * 0.3))

    def test_integer_rounding(self):
        d = Dimension("depth", 2, 10, integer=True)
        assert d.from_unit(0.0) == 2
        assert d.from_unit(1.0) == 10
        assert isinstance(d.from_unit(0.31), int)

    def test_unit_values_clamped(self):
        d = Dimension("x", 0.0, 1.0)
        assert d.from_unit(-0.2) == 0.0
        assert d.from_unit(1.7) == 1.0

    def test_validation(self):
        with pytest.raises(ConfigError):
            Dimension("x", 1.0, 1.0)
        with pytest.raises(ConfigError):
            Dimension("x", 0.0, 1.0, scale="log")


class TestParamSpace:
    def test_default_space_covers_learner_knobs(self):
        space = ParamSpace.default()
        names = [d.name for d in space.dimensions]
        assert names == ["learning_rate", "max_depth", "n_estimators",
                         "min_child_weight", "subsample",
                         "colsample_bytree", "gamma"]

    def test_round_trip(self):
        space = sphere_space()
        p = space.from_unit(np.array([0.3, 0.8]))
        u = space.to_unit(p)
        assert u == pytest.approx([0.3, 0.8])

    def test_duplicate_names_rejected(self):
        with pytest.raises(ConfigError):
            ParamSpace(dimensions=(Dimension("x", 0, 1),
                                   Dimension("x", 0, 2)))


class TestExpectedImprovement:
    def test_zero_variance_positive_gap(self):
        assert expected_improvement(1.0, 0.0, 3.0) == pytest.approx(2.0)

    def test_zero_variance_no_gap(self):
        assert expected_improvement(3.0, 0.0, 1.0) == 0.0

    def test_mean_equals_best(self):
        # EI = sigma * pdf(0) = sigma * 0.3989422804014327.
        assert expected_improvement(2.0, 1.0, 2.0) == pytest.approx(
            0.3989422804014327, abs=1e-12)
        assert expected_improvement(2.0, 0.5, 2.0) == pytest.approx(
            0.5 * 0.3989422804014327, abs=1e-12)

    def test_closed_form_point(self):
        # mu=0, sigma=1, best=1: EI = Phi(1) + pdf(1).
        from scipy.stats import norm
        want = norm.cdf(1.0) + norm.pdf(1.0)
        assert expected_improvement(0.0, 1.0, 1.0) == pytest.approx(want)

    def test_monotone_in_sigma(self):
        sigmas = np.linspace(0.01, 3.0, 30)
        ei = expected_improvement(np.full(30, 2.0), sigmas, 1.0)
        assert np.all(np.diff(ei) > 0)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ConfigError):
            expected_improvement(0.0, -1.0, 0.0)


class TestGpSurrogate:
    def test_interpolates_training_points(self):
        rng = np.random.default_rng(40)
        X = rng.uniform(size=(12, 2))
        y = np.sin(3 * X[:, 0]) + X[:, 1] ** 2
        gp = gp_fit(X, y, seed=0)
        for i in range(len(X)):
            mu, sigma = gp.posterior(X[i])
            assert mu == pytest.approx(y[i], abs=0.05)
            assert sigma < 0.15

    def test_reverts_to_prior_far_away(self):
        X = np.linspace(0.0, 0.4, 15).reshape(-1, 1)
        y = np.sin(12.0 * X[:, 0])
        gp = gp_fit(X, y, seed=0)
        _, sigma_near = gp.posterior(np.array([0.2]))
        _, sigma_far = gp.posterior(np.array([0.95]))
        assert sigma_far > 3 * sigma_near

    def test_quadratic_held_out_accuracy(self):
        rng = np.random.default_rng(41)
        X = rng.uniform(size=(40, 2))
        f = lambda X: (X[:, 0] - 0.4) ** 2 + (X[:, 1] - 0.6) ** 2
        gp = gp_fit(X, f(X), seed=0)
        X_test = rng.uniform(0.1, 0.9, size=(20, 2))
        mu, _ = gp.posterior(X_test)
        assert float(np.sqrt(np.mean((mu - f(X_test)) ** 2))) < 0.02

    def test_observation_shrinks_variance(self):
        X = np.array([[0.0], [1.0]])
        y = np.array([0.0, 1.0])
        gp_two = gp_fit(X, y, seed=0)
        _, sigma_before = gp_two.posterior(np.array([0.5]))
        gp_three = gp_fit(np.array([[0.0], [0.5], [1.0]]),
                          np.array([0.0, 0.6, 1.0]), seed=0)
        _, sigma_after = gp_three.posterior(np.array([0.5]))
        assert sigma_after < sigma_before

    def test_needs_two_points(self):
        with pytest.raises(DataError):
            gp_fit(np.array([[0.5]]), np.array([1.0]))

    def test_fit_surrogate_skips_failed_trials(self):
        trials = [
            Trial(params={"x": 0.0, "y": 0.0}, objective=0.0, iteration=0),
            Trial(params={"x": 1.0, "y": 1.0}, objective=2.0, iteration=1),
            Trial(params={"x": 2.0, "y": 2.0}, objective=None, iteration=2,
                  failed=True),
        ]
        gp = fit_surrogate(sphere_space(), trials, seed=0)
        assert gp.X.shape == (2, 2)
        with pytest.raises(DataError):
            fit_surrogate(sphere_space(), trials[:1] + trials[2:], seed=0)


class TestOptimize:
    def test_sphere_convergence(self):
        best, trials = optimize(sphere_space(), sphere, budget=40, init=8,
                                seed=0)
        assert len(trials) == 40
        assert sphere(best) < 0.05

    def test_incumbent_trace_monotone(self):
        _, trials = optimize(sphere_space(), sphere, budget=25, init=6,
                             seed=1)
        trace = incumbent_trace(trials)
        assert all(b <= a + 1e-15 for a, b in zip(trace, trace[1:]))
        assert trace[-1] == min(t.objective for t in trials if not t.failed)

    def test_deterministic_given_seed(self):
        best_a, trials_a = optimize(sphere_space(), sphere, budget=20,
                                    init=5, seed=7)
        best_b, trials_b = optimize(sphere_space(), sphere, budget=20,
                                    init=5, seed=7)
        assert best_a == best_b
        assert [t.params for t in trials_a] == [t.params for t in trials_b]

    def test_initial_points_evaluated_first(self):
        seeded = {"x": 1.25, "y": -0.5}
        _, trials = optimize(sphere_space(), sphere, budget=12, init=4,
                             seed=2, initial_points=[seeded])
        assert trials[0].params == pytest.approx(seeded)

    def test_failed_trials_tolerated(self):
        calls = {"n": 0}

        def flaky(p):
            calls["n"] += 1
            if calls["n"] % 3 == 0:
                raise RuntimeError("boom")
            return sphere(p)

        best, trials = optimize(sphere_space(), flaky, budget=20, init=6,
                                seed=3)
        assert sum(t.failed for t in trials) > 0
        assert all(t.objective is None for t in trials if t.failed)
        assert sphere(best) == min(
            t.objective for t in trials if not t.failed)

    def test_non_finite_objective_marks_failed(self):
        def bad(p):
            return float("nan")

        with pytest.raises(DataError):
            optimize(sphere_space(), bad, budget=5, init=2, seed=4)

    def test_budget_validation(self):
        with pytest.raises(ConfigError):
            optimize(sphere_space(), sphere, budget=4, init=4)
        with pytest.raises(ConfigError):
            optimize(sphere_space(), sphere, budget=5, init=1)

    def test_on_trial_callback_streams_every_trial(self):
        seen = []
        optimize(sphere_space(), sphere, budget=10, init=3, seed=5,
                 on_trial=seen.append)
        assert [t.iteration for t in seen] == list(range(10))


class TestRandomSearchBaseline:
    def test_runs_and_returns_best(self):
        best, trials = random_search(sphere_space(), sphere, budget=30,
                                     seed=0)
        assert len(trials) == 30
        assert sphere(best) == min(t.objective for t in trials)

    def test_guided_search_beats_random(self):
        # Same budget, ten paired seeds: the surrogate-guided optimizer
        # should win almost every time on a smooth bowl.
        wins = 0
        for seed in range(10):
            best_bo, _ = optimize(sphere_space(), sphere, budget=30, init=8,
                                  seed=seed)
            best_rs, _ = random_search(sphere_space(), sphere, budget=30,
                                       seed=seed)
            if sphere(best_bo) <= sphere(best_rs):
                wins += 1
        assert wins >= 8
