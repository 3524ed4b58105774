"""Euler-Maruyama simulation of the signal/observation pair and seeded random streams."""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError
from .models import wrap_angle


@dataclass(frozen=True)
class RandomStream:
    """A reproducible random source identified by ``(seed, stream_id)``.

    Distinct stream ids give statistically independent sequences; the same
    pair always gives the same sequence.
    """

    seed: int
    stream_id: int = 0

    def generator(self):
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))


def as_generator(stream):
    if isinstance(stream, np.random.Generator):
        return stream
    if isinstance(stream, RandomStream):
        return stream.generator()
    raise TypeError(f"expected RandomStream or numpy Generator, got {type(stream).__name__}")


@dataclass(frozen=True)
class TruthPath:
    times: np.ndarray
    states: np.ndarray
    obs_increments: np.ndarray
    dt: float

    def __post_init__(self):
        if len(self.states) != len(self.obs_increments) + 1:
            raise ValueError("states must have exactly one more entry than obs_increments")
        if len(self.times) != len(self.states):
            raise ValueError("times and states must have equal length")

    @property
    def n_steps(self):
        return len(self.obs_increments)

    @property
    def horizon(self):
        return self.n_steps * self.dt

    def to_csv(self, path):
        """Write rows ``t, x, dz``; ``dz`` on row k is the increment over [t_k, t_{k+1}]."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x", "dz"])
            for k in range(len(self.states)):
                dz = repr(float(self.obs_increments[k])) if k < self.n_steps else ""
                w.writerow([repr(float(self.times[k])), repr(float(self.states[k])), dz])


def euler_maruyama_step(x, drift, sigma_b, dt, xi):
    """One step x + a(x) dt + sigma_b sqrt(dt) xi."""
    return x + drift(x) * dt + sigma_b * math.sqrt(dt) * xi


def n_steps_for(dt, horizon):
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if horizon < dt:
        raise ValueError(f"horizon {horizon} is shorter than dt {dt}")
    n = round(horizon / dt)
    if abs(n * dt - horizon) > 1e-9 * horizon:
        raise ValueError(f"dt {dt} does not divide horizon {horizon}")
    return int(n)


def simulate_truth(model, dt, horizon, stream):
    n = n_steps_for(dt, horizon)
    rng = as_generator(stream)
    x0 = float(model.sample_initial(rng, 1)[0])
    noise = rng.standard_normal((n, 2))

    states = np.empty(n + 1)
    dz = np.empty(n)
    states[0] = x0
    sq = math.sqrt(dt)
    x = np.array([x0])
    for k in range(n):
        with np.errstate(over="ignore", invalid="ignore"):
            dz[k] = float(model.obs(x)[0]) * dt + model.sigma_w * sq * noise[k, 1]
            x = euler_maruyama_step(x, model.drift, model.sigma_b, dt, noise[k, 0])
        if model.is_circle:
            x = wrap_angle(x)
        if not (np.isfinite(x[0]) and np.isfinite(dz[k])):
            raise DivergenceError("truth path became non-finite; dt too large for the drift?", step=k)
        states[k + 1] = x[0]
    times = dt * np.arange(n + 1)
    return TruthPath(times=times, states=states, obs_increments=dz, dt=float(dt))
