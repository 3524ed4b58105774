"""Comparison filters: Kalman-Bucy for linear models and a bootstrap particle filter."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, FilterCollapseError, FilterError
from .fpf import FilterTrack
from .models import LinearModelParams, wrap_angle
from .simulate import as_generator, euler_maruyama_step


@dataclass(frozen=True)
class KalmanState:
    mean: float
    variance: float
    time: float


def riccati_steady_state(params):
    """Positive root of 2 a S + sb^2 - g^2 S^2 / sw^2 = 0."""
    a, g, sb, sw = params.alpha, params.gamma, params.sigma_b, params.sigma_w
    if g == 0:
        if a >= 0:
            raise ValueError("no steady state without observations and with alpha >= 0")
        return sb**2 / (-2.0 * a)
    c = g**2 / sw**2
    return (a + math.sqrt(a * a + c * sb**2)) / c


def kalman_bucy_run(params, truth, init_var=None):
    """Euler-discretized Kalman-Bucy filter at the truth's time step.

    Returns a FilterTrack whose ``h_hat`` column is gamma * mean.
    """
    if not isinstance(params, LinearModelParams):
        params = getattr(params, "linear", None)
        if params is None:
            raise ValueError("Kalman-Bucy needs a linear model")
    if truth.n_steps < 1:
        raise ValueError("truth path has no observation increments")
    a, g, sb, sw2 = params.alpha, params.gamma, params.sigma_b, params.sigma_w**2
    dt = truth.dt
    mu = params.init_mean
    var = params.init_var if init_var is None else float(init_var)
    n = truth.n_steps
    mean = np.empty(n)
    variance = np.empty(n)
    for k in range(n):
        gain = var * g / sw2
        mu = mu + a * mu * dt + gain * (truth.obs_increments[k] - g * mu * dt)
        var = var + (2.0 * a * var + sb**2 - g * g * var * var / sw2) * dt
        if not var > 0:
            raise FilterError(f"Riccati variance became nonpositive at step {k}; dt too large")
        if not math.isfinite(mu):
            raise DivergenceError("Kalman mean became non-finite", step=k)
        mean[k] = mu
        variance[k] = var
    times = dt * np.arange(1, n + 1)
    return FilterTrack(times, mean, variance, g * mean, {})


@dataclass
class WeightedEnsemble:
    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.positions.shape != self.weights.shape:
            raise ValueError("positions and weights must have the same shape")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")

    @classmethod
    def uniform(cls, positions):
        positions = np.asarray(positions, dtype=float)
        return cls(positions, np.full(len(positions), 1.0 / len(positions)))

    def __len__(self):
        return len(self.positions)

    @property
    def ess(self):
        return 1.0 / float(np.sum(self.weights**2))


def systematic_resample(weights, u):
    """Indices drawn at the stratified points (u + i) / N against the cumulative weights."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be nonnegative and normalized")
    if not 0.0 <= u < 1.0:
        raise ValueError(f"u must lie in [0, 1), got {u}")
    n = len(w)
    cum = np.cumsum(w)
    cum[-1] = 1.0
    points = (u + np.arange(n)) / n
    idx = np.searchsorted(cum, points, side="right")
    return np.minimum(idx, n - 1)


def likelihood_factors(hx, dz, dt, sigma_w):
    """exp{(h dZ - h^2 dt / 2) / sigma_w^2}, evaluated as written (no rescaling)."""
    with np.errstate(over="ignore", invalid="ignore"):
        return np.exp((hx * dz - 0.5 * hx * hx * dt) / sigma_w**2)


def bootstrap_step(ens, model, dz, dt, stream, resample_threshold=0.5, step=None):
    """Propagate, reweight by the likelihood factor, and resample when ESS < threshold * N.

    Returns ``(new_ensemble, resampled)``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not 0.0 < resample_threshold <= 1.0:
        raise ValueError("resample_threshold must lie in (0, 1]")
    rng = as_generator(stream)
    n = len(ens)
    x = euler_maruyama_step(ens.positions, model.drift, model.sigma_b, dt, rng.standard_normal(n))
    if model.is_circle:
        x = wrap_angle(x)
    bad = np.flatnonzero(~np.isfinite(x))
    if bad.size:
        raise DivergenceError("particle became non-finite", step=step, particle=int(bad[0]))
    hx = np.asarray(model.obs(x), dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        w = ens.weights * likelihood_factors(hx, dz, dt, model.sigma_w)
        total = np.sum(w)
    if not (math.isfinite(total) and total > 0) or not np.all(np.isfinite(w)):
        raise FilterCollapseError("importance weights vanished or overflowed", step=step)
    w = w / total
    out = WeightedEnsemble(x, w)
    # tolerance keeps round-off in 1/sum(w^2) from triggering on uniform weights
    if out.ess < resample_threshold * n * (1.0 - 1e-12):
        idx = systematic_resample(w, rng.uniform())
        return WeightedEnsemble.uniform(x[idx]), True
    return out, False


def weighted_estimate(ens, model):
    w, x = ens.weights, ens.positions
    h_hat = float(np.sum(w * model.obs(x)))
    if model.is_circle:
        c, s = float(np.sum(w * np.cos(x))), float(np.sum(w * np.sin(x)))
        r = math.hypot(c, s)
        mean = float(wrap_angle(math.atan2(s, c))) if r >= 1e-12 else 0.0
        return mean, min(1.0, max(0.0, 1.0 - r)), h_hat
    mean = float(np.sum(w * x))
    return mean, float(np.sum(w * (x - mean) ** 2)), h_hat


def run_bootstrap(model, truth, n_particles, stream, resample_threshold=0.5):
    if truth.n_steps < 1:
        raise ValueError("truth path has no observation increments")
    rng = as_generator(stream)
    dt = truth.dt
    ens = WeightedEnsemble.uniform(model.sample_initial(rng, n_particles))
    n = truth.n_steps
    out = np.empty((n, 3))
    n_resampled = 0
    for k in range(n):
        ens, resampled = bootstrap_step(
            ens, model, truth.obs_increments[k], dt, rng, resample_threshold, step=k
        )
        n_resampled += resampled
        out[k] = weighted_estimate(ens, model)
    times = dt * np.arange(1, n + 1)
    return FilterTrack(times, out[:, 0], out[:, 1], out[:, 2], {"n_resampled": n_resampled})
