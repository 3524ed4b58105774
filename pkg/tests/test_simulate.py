import numpy as np
import pytest

from fpfilter.errors import DivergenceError
from fpfilter.models import ScalarDiffusionModel, make_builtin_model
from fpfilter.simulate import RandomStream, simulate_truth


def _const_model(**kw):
    base = dict(
        drift=lambda x: np.zeros_like(x), obs=lambda x: np.asarray(x, dtype=float),
        obs_deriv=lambda x: np.ones_like(x), sigma_b=0.0, sigma_w=1e-300,
        init_mean=1.0, init_var=0.0,
    )
    base.update(kw)
    return ScalarDiffusionModel(**base)


def test_noise_free_constant_state():
    # sigma_w must be positive; 1e-300 * sqrt(dt) * eta underflows to exactly 0 added.
    m = _const_model()
    tr = simulate_truth(m, 0.1, 0.5, RandomStream(1))
    assert tr.n_steps == 5
    np.testing.assert_array_equal(tr.states, 1.0)
    np.testing.assert_array_equal(tr.obs_increments, 0.1)


def test_times_and_lengths():
    m = make_builtin_model("double_well", dict(sigma_b=0.4, sigma_w=0.2))
    tr = simulate_truth(m, 0.01, 1.0, RandomStream(3))
    assert len(tr.states) == len(tr.obs_increments) + 1 == 101
    np.testing.assert_allclose(np.diff(tr.times), 0.01, atol=1e-12)


def test_deterministic_flow_without_noise():
    m = _const_model(drift=lambda x: -x, init_mean=2.0)
    tr = simulate_truth(m, 0.1, 1.0, RandomStream(0))
    x = 2.0
    for k in range(10):
        x = x + (-x) * 0.1
        assert tr.states[k + 1] == x


def test_ou_stationary_variance():
    m = make_builtin_model("linear", dict(alpha=-0.5, gamma=3, sigma_w=0.5))
    tr = simulate_truth(m, 0.01, 50, RandomStream(7))
    assert tr.n_steps == 5000
    # stationary variance sigma_b^2 / (2 |alpha|) = 1
    assert abs(np.var(tr.states) - 1.0) < 0.25


def test_same_seed_bit_identical():
    m = make_builtin_model("linear", dict(alpha=-0.5, gamma=3, sigma_w=0.5))
    a = simulate_truth(m, 0.01, 5, RandomStream(42))
    b = simulate_truth(m, 0.01, 5, RandomStream(42))
    assert a.states.tobytes() == b.states.tobytes()
    assert a.obs_increments.tobytes() == b.obs_increments.tobytes()


def test_distinct_streams_differ():
    m = make_builtin_model("linear", dict(alpha=-0.5, gamma=3, sigma_w=0.5))
    a = simulate_truth(m, 0.01, 1, RandomStream(42, 0))
    b = simulate_truth(m, 0.01, 1, RandomStream(42, 1))
    assert not np.array_equal(a.obs_increments, b.obs_increments)


def test_circle_states_wrapped():
    m = make_builtin_model("oscillator", dict(omega=1, sigma_b=0.5, sigma_w=0.4))
    tr = simulate_truth(m, 0.01, 20, RandomStream(5))
    assert np.all(tr.states >= 0) and np.all(tr.states < 2 * np.pi)


def test_divergence_names_step():
    m = _const_model(drift=lambda x: np.asarray(x) ** 3, init_mean=10.0, sigma_w=1.0)
    with pytest.raises(DivergenceError) as ei:
        simulate_truth(m, 0.5, 50, RandomStream(0))
    assert ei.value.step is not None


@pytest.mark.parametrize("dt,horizon", [(0.0, 1.0), (0.3, 1.0), (1.0, 0.5)])
def test_bad_grid(dt, horizon):
    m = make_builtin_model("double_well", dict(sigma_b=0.4, sigma_w=0.2))
    with pytest.raises(ValueError):
        simulate_truth(m, dt, horizon, RandomStream(0))


def test_truth_csv(tmp_path):
    m = make_builtin_model("double_well", dict(sigma_b=0.4, sigma_w=0.2))
    tr = simulate_truth(m, 0.1, 0.3, RandomStream(0))
    p = tmp_path / "truth.csv"
    tr.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,x,dz"
    assert len(lines) == 5
    assert float(lines[2].split(",")[1]) == tr.states[1]
    assert lines[-1].endswith(",")
