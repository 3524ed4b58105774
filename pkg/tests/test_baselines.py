import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpfilter.baselines import (
    WeightedEnsemble,
    bootstrap_step,
    kalman_bucy_run,
    riccati_steady_state,
    run_bootstrap,
    systematic_resample,
)
from fpfilter.errors import FilterCollapseError, FilterError
from fpfilter.models import LinearModelParams, ScalarDiffusionModel
from fpfilter.simulate import RandomStream, TruthPath, simulate_truth

LINEAR_EXP = LinearModelParams(alpha=-0.5, gamma=3.0, sigma_b=1.0, sigma_w=0.5)
S_INF = (-1 + math.sqrt(145)) / 72


def _truth(params, dt, horizon, seed=0):
    return simulate_truth(params.to_model(), dt, horizon, RandomStream(seed))


class TestKalmanBucy:
    def test_steady_state_is_quadratic_root(self):
        assert riccati_steady_state(LINEAR_EXP) == pytest.approx(S_INF, rel=1e-12)
        assert 36 * S_INF**2 + S_INF - 1 == pytest.approx(0.0, abs=1e-14)

    def test_no_observation_growth(self):
        p = LinearModelParams(alpha=0.0, gamma=0.0, sigma_b=1.0, sigma_w=0.5, init_var=1.0)
        tr = _truth(p, 0.01, 1.0)
        kb = kalman_bucy_run(p, tr)
        assert abs(kb.variance[-1] - 2.0) < 1e-9

    def test_converges_by_t5(self):
        tr = _truth(LINEAR_EXP, 0.01, 5.0)
        kb = kalman_bucy_run(LINEAR_EXP, tr)
        assert abs(kb.variance[-1] - S_INF) < 0.01 * S_INF

    def test_fixed_point(self):
        tr = _truth(LINEAR_EXP, 0.01, 10.0)
        kb = kalman_bucy_run(LINEAR_EXP, tr, init_var=S_INF)
        assert np.max(np.abs(kb.variance - S_INF)) < 1e-12

    def test_variance_ignores_observations(self):
        a = kalman_bucy_run(LINEAR_EXP, _truth(LINEAR_EXP, 0.01, 2.0, seed=1))
        b = kalman_bucy_run(LINEAR_EXP, _truth(LINEAR_EXP, 0.01, 2.0, seed=2))
        np.testing.assert_array_equal(a.variance, b.variance)
        assert not np.array_equal(a.mean, b.mean)

    def test_step_too_large(self):
        tr = _truth(LINEAR_EXP, 0.01, 1.0)
        with pytest.raises(FilterError):
            kalman_bucy_run(LINEAR_EXP, tr, init_var=5.0)

    def test_nonlinear_rejected(self):
        m = ScalarDiffusionModel(drift=np.sin, obs=np.cos, obs_deriv=np.sin, sigma_b=1.0, sigma_w=1.0)
        tr = TruthPath(np.array([0.0, 0.1]), np.zeros(2), np.zeros(1), 0.1)
        with pytest.raises(ValueError):
            kalman_bucy_run(m, tr)


def _obs_model(h, sigma_b=0.0, sigma_w=1.0, drift=None):
    return ScalarDiffusionModel(
        drift=drift or (lambda x: np.zeros_like(x)),
        obs=h,
        obs_deriv=lambda x: np.zeros_like(x),
        sigma_b=sigma_b,
        sigma_w=sigma_w,
    )


class TestBootstrapStep:
    def test_flat_likelihood(self):
        m = _obs_model(lambda x: np.zeros_like(x), sigma_b=1.0)
        ens = WeightedEnsemble.uniform(np.linspace(-1, 1, 10))
        out, resampled = bootstrap_step(ens, m, 0.3, 0.01, RandomStream(0), resample_threshold=1.0)
        assert not resampled
        np.testing.assert_array_equal(out.weights, np.full(10, 0.1))

    def test_two_particle_ratio(self):
        m = _obs_model(lambda x: np.asarray(x, float))
        ens = WeightedEnsemble.uniform([0.0, 1.0])
        out, resampled = bootstrap_step(ens, m, 0.1, 0.1, RandomStream(0), resample_threshold=0.1)
        assert not resampled
        assert out.weights[1] / out.weights[0] == pytest.approx(math.exp(0.05), rel=1e-12)
        assert math.exp(0.05) == pytest.approx(1.05127, abs=1e-5)

    def test_degenerate_weights_resampled(self):
        m = _obs_model(lambda x: np.zeros_like(x))
        ens = WeightedEnsemble(np.arange(5.0), np.array([1.0, 0, 0, 0, 0]))
        out, resampled = bootstrap_step(ens, m, 0.0, 0.1, RandomStream(0), resample_threshold=1.0)
        assert resampled
        np.testing.assert_array_equal(out.positions, np.zeros(5))
        np.testing.assert_array_equal(out.weights, np.full(5, 0.2))

    def test_noise_free_propagation_matches_drift(self):
        m = _obs_model(lambda x: np.zeros_like(x), sigma_w=1e6, drift=lambda x: -0.5 * x)
        x = np.linspace(-2, 2, 7)
        out, _ = bootstrap_step(WeightedEnsemble.uniform(x), m, 0.0, 0.01, RandomStream(0))
        np.testing.assert_array_equal(out.positions, x + (-0.5 * x) * 0.01)

    def test_collapse(self):
        m = _obs_model(lambda x: np.asarray(x, float), sigma_w=1e-3)
        ens = WeightedEnsemble.uniform([-100.0, -200.0])
        with pytest.raises(FilterCollapseError) as ei:
            bootstrap_step(ens, m, -50.0, 0.01, RandomStream(0), step=3)
        assert ei.value.step == 3

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), dz=st.floats(-0.5, 0.5))
    def test_weights_normalized(self, seed, dz):
        m = LINEAR_EXP.to_model()
        rng = np.random.default_rng(seed)
        w = rng.dirichlet(np.ones(50))
        out, _ = bootstrap_step(WeightedEnsemble(rng.standard_normal(50), w), m, dz, 0.01, rng)
        assert abs(out.weights.sum() - 1.0) <= 1e-9
        assert 1.0 <= out.ess <= 50 + 1e-9

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            bootstrap_step(WeightedEnsemble.uniform([0.0, 1.0]), LINEAR_EXP.to_model(), 0, 0.01, RandomStream(0), 0.0)


class TestSystematicResample:
    def test_hand_example(self):
        np.testing.assert_array_equal(systematic_resample([0.75, 0.25, 0.0, 0.0], 0.1), [0, 0, 0, 1])

    @pytest.mark.parametrize("u", [0.0, 0.3, 0.999])
    def test_uniform_weights(self, u):
        np.testing.assert_array_equal(systematic_resample(np.full(8, 1 / 8), u), np.arange(8))

    @pytest.mark.parametrize("u", [0.0, 0.5, 0.99])
    def test_point_mass(self, u):
        np.testing.assert_array_equal(systematic_resample([1.0, 0.0], u), [0, 0])

    def test_unnormalized(self):
        with pytest.raises(ValueError):
            systematic_resample([0.5, 0.6], 0.2)

    @settings(max_examples=1000, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 60), u=st.floats(0, 1, exclude_max=True))
    def test_count_bounds(self, seed, n, u):
        w = np.random.default_rng(seed).dirichlet(np.full(n, 0.5))
        w = w / w.sum()
        counts = np.bincount(systematic_resample(w, u), minlength=n)
        assert counts.sum() == n
        nw = n * w
        assert np.all(counts >= np.floor(nw - 1e-9)) and np.all(counts <= np.ceil(nw + 1e-9))


class TestRunBootstrap:
    def test_tracks_kalman(self):
        m = LINEAR_EXP.to_model()
        tr = simulate_truth(m, 0.01, 5.0, RandomStream(3))
        bs = run_bootstrap(m, tr, 2000, RandomStream(3, 1))
        kb = kalman_bucy_run(LINEAR_EXP, tr)
        assert len(bs) == tr.n_steps
        assert np.mean(np.abs(bs.mean - kb.mean)) < 0.05
        assert bs.diagnostics["n_resampled"] > 0

    def test_deterministic(self):
        m = LINEAR_EXP.to_model()
        tr = simulate_truth(m, 0.01, 0.5, RandomStream(3))
        a = run_bootstrap(m, tr, 100, RandomStream(3, 1))
        b = run_bootstrap(m, tr, 100, RandomStream(3, 1))
        assert a.mean.tobytes() == b.mean.tobytes()
