"""Feedback particle filter: the discrete-time particle update and ensemble statistics."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError
from .gain import DNS, EXACT_LINEAR, FOURIER_CIRCLE, GAIN_METHODS, compute_gain, sample_variance
from .models import CIRCLE, LINE, wrap_angle
from .simulate import as_generator, euler_maruyama_step

STRATONOVICH_EULER = "stratonovich_euler"
ITO = "ito"
FORMS = (STRATONOVICH_EULER, ITO)


@dataclass(frozen=True)
class ParticleEnsemble:
    positions: np.ndarray
    geometry: str = LINE
    time: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        if x.ndim != 1 or len(x) < 2:
            raise ValueError("an ensemble needs a 1-D array of at least two particles")
        if not np.all(np.isfinite(x)):
            raise ValueError("particle positions must be finite")
        if self.geometry == CIRCLE and (np.any(x < 0) or np.any(x >= 2 * np.pi)):
            raise ValueError("circle positions must lie in [0, 2*pi)")
        object.__setattr__(self, "positions", x)

    def __len__(self):
        return len(self.positions)


@dataclass(frozen=True)
class FilterEstimate:
    mean: float
    variance: float
    h_hat: float
    time: float
    degenerate: bool = False


def innovations(positions, model, dz, dt, hx=None):
    """Per-particle innovation dZ - (h(X_i) + h_hat) dt / 2, and h_hat.

    ``hx`` may carry precomputed values of h at the positions.
    """
    if hx is None:
        hx = np.asarray(model.obs(positions), dtype=float)
    h_hat = np.mean(hx)
    return dz - 0.5 * (hx + h_hat) * dt, h_hat


def _summary(x, hx, geometry):
    """(mean, variance, h_hat, degenerate) of a particle array."""
    n = len(x)
    h_hat = float(hx.sum()) / n
    if geometry != CIRCLE:
        var = sample_variance(x)
        return float(x.sum()) / n, var, h_hat, var == 0.0
    c = float(np.mean(np.cos(x)))
    s = float(np.mean(np.sin(x)))
    resultant = math.hypot(c, s)
    dispersion = min(1.0, max(0.0, 1.0 - resultant))
    if resultant < 1e-12:
        return 0.0, dispersion, h_hat, True
    return float(wrap_angle(math.atan2(s, c))), dispersion, h_hat, False


def estimate(ensemble, model):
    x = ensemble.positions
    if len(x) < 2:
        raise ValueError("need at least two particles")
    hx = np.asarray(model.obs(x), dtype=float)
    mean, var, h_hat, degenerate = _summary(x, hx, ensemble.geometry)
    return FilterEstimate(mean, var, h_hat, ensemble.time, degenerate)


def _check_method(model, gain_method, form):
    if gain_method not in GAIN_METHODS:
        raise ValueError(f"unknown gain method {gain_method!r}")
    if form not in FORMS:
        raise ValueError(f"unknown form {form!r}; expected one of {FORMS}")
    if gain_method == FOURIER_CIRCLE and not model.is_circle:
        raise ValueError("fourier_circle gain requires a circle model")
    if gain_method == DNS and model.is_circle:
        raise ValueError("dns gain is defined on the line only")
    if gain_method == EXACT_LINEAR and model.linear is None:
        raise ValueError("exact_linear gain requires a linear model")


def advance(positions, model, gain_method, dz, dt, noise, form=STRATONOVICH_EULER, bandwidth=None, hx=None):
    """Move every particle one step; returns ``(new_positions, gain_field)``.

    ``noise`` holds one standard normal draw per particle, in particle order.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _advance(positions, model, gain_method, dz, dt, noise, form, bandwidth, hx)


def _advance(x, model, gain_method, dz, dt, noise, form, bandwidth, hx):
    dI, h_hat = innovations(x, model, dz, dt, hx)
    gain = compute_gain(gain_method, x, model, bandwidth)
    gain.meta["h_hat"] = h_hat
    new = euler_maruyama_step(x, model.drift, model.sigma_b, dt, noise) + gain.k * dI
    if form == ITO:
        new = new + 0.5 * model.sigma_w**2 * gain.k * gain.kp * dt
    if model.is_circle:
        new = wrap_angle(new)
    return new, gain


def fpf_step(
    ensemble,
    model,
    gain_method,
    dz,
    dt,
    stream,
    form=STRATONOVICH_EULER,
    bandwidth=None,
    noise=None,
    step=None,
):
    """Advance the ensemble over one observation increment ``dz``.

    ``stream`` is a RandomStream or numpy Generator supplying one N(0, 1)
    draw per particle; pass ``noise`` to supply those draws directly.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    _check_method(model, gain_method, form)
    if (ensemble.geometry == CIRCLE) != model.is_circle:
        raise ValueError("ensemble geometry does not match the model")
    n = len(ensemble)
    if noise is None:
        noise = as_generator(stream).standard_normal(n)
    new, _ = advance(ensemble.positions, model, gain_method, dz, dt, noise, form, bandwidth)
    bad = np.flatnonzero(~np.isfinite(new))
    if bad.size:
        raise DivergenceError("particle became non-finite", step=step, particle=int(bad[0]))
    return ParticleEnsemble(new, ensemble.geometry, ensemble.time + dt)


@dataclass
class FilterTrack:
    """Time series of estimates, one per observation increment."""

    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    h_hat: np.ndarray
    diagnostics: dict

    def __len__(self):
        return len(self.times)

    def estimates(self):
        return [
            FilterEstimate(float(m), float(v), float(h), float(t))
            for t, m, v, h in zip(self.times, self.mean, self.variance, self.h_hat)
        ]

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,mean,variance,h_hat\n")
            for t, m, v, h in zip(self.times, self.mean, self.variance, self.h_hat):
                fh.write(f"{float(t)!r},{float(m)!r},{float(v)!r},{float(h)!r}\n")


def run_fpf(
    model,
    gain_method,
    truth,
    n_particles,
    stream,
    form=STRATONOVICH_EULER,
    bandwidth=None,
    callback=None,
):
    """Run the filter over ``truth.obs_increments``.

    The initial ensemble is drawn from the model's prior. ``callback(k,
    ensemble, gain)`` is invoked after each step if given.
    """
    if truth.n_steps < 1:
        raise ValueError("truth path has no observation increments")
    if n_particles < 2:
        raise ValueError("need at least two particles")
    _check_method(model, gain_method, form)
    rng = as_generator(stream)
    dt = truth.dt
    x = model.sample_initial(rng, n_particles)
    geometry = model.geometry
    n = truth.n_steps
    out = np.empty((n, 3))
    floored = capped = 0
    hx = np.asarray(model.obs(x), dtype=float)
    for k in range(n):
        noise = rng.standard_normal(n_particles)
        x, gain = advance(x, model, gain_method, truth.obs_increments[k], dt, noise, form, bandwidth, hx)
        if not np.isfinite(x).all():
            bad = np.flatnonzero(~np.isfinite(x))
            raise DivergenceError("particle became non-finite", step=k, particle=int(bad[0]))
        floored += gain.meta.get("n_floored", 0)
        capped += gain.meta.get("n_capped", 0)
        with np.errstate(over="ignore", invalid="ignore"):
            hx = np.asarray(model.obs(x), dtype=float)
        out[k] = _summary(x, hx, geometry)[:3]
        if callback is not None:
            callback(k, x, gain)
    times = dt * np.arange(1, n + 1)
    diag = {"n_floored": floored, "n_capped": capped, "final_positions": x}
    return FilterTrack(times, out[:, 0], out[:, 1], out[:, 2], diag)
