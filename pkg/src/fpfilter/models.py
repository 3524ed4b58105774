"""Scalar diffusion models for the hidden state and its observation channel.

A model describes

    dX_t = a(X_t) dt + sigma_b dB_t
    dZ_t = h(X_t) dt + sigma_w dW_t

together with the law of X_0. The callables are expected to act elementwise
on numpy arrays.
"""

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

TWO_PI = 2.0 * np.pi

LINE = "line"
CIRCLE = "circle"

BUILTIN_MODELS = ("linear", "double_well", "oscillator")


def _check_finite(name, value):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ValueError(f"parameter {name!r} must be a real number, got {value!r}") from None
    if not math.isfinite(value):
        raise ValueError(f"parameter {name!r} must be finite, got {value!r}")
    return value


def _check_noise(sigma_b, sigma_w):
    if sigma_b < 0:
        raise ValueError(f"sigma_b must be nonnegative, got {sigma_b}")
    if not sigma_w > 0:
        raise ValueError(f"sigma_w must be positive, got {sigma_w}")


@dataclass(frozen=True)
class LinearModelParams:
    alpha: float
    gamma: float
    sigma_b: float = 1.0
    sigma_w: float = 0.5
    init_mean: float = 1.0
    init_var: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "gamma", "sigma_b", "sigma_w", "init_mean", "init_var"):
            object.__setattr__(self, name, _check_finite(name, getattr(self, name)))
        _check_noise(self.sigma_b, self.sigma_w)
        if self.init_var < 0:
            raise ValueError(f"init_var must be nonnegative, got {self.init_var}")

    def to_model(self):
        alpha, gamma = self.alpha, self.gamma
        return ScalarDiffusionModel(
            drift=lambda x: alpha * np.asarray(x, dtype=float),
            obs=lambda x: gamma * np.asarray(x, dtype=float),
            obs_deriv=lambda x: np.full_like(np.asarray(x, dtype=float), gamma),
            sigma_b=self.sigma_b,
            sigma_w=self.sigma_w,
            init_mean=self.init_mean,
            init_var=self.init_var,
            name="linear",
            linear=self,
            params=dataclasses.asdict(self),
        )


@dataclass(frozen=True)
class MultiLinearModelParams:
    """d-dimensional linear Gaussian model with a scalar observation."""

    a_matrix: np.ndarray
    gamma_vec: np.ndarray
    sigma_b: float
    sigma_w: float
    init_mean: np.ndarray
    init_cov: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a_matrix, dtype=float))
        g = np.atleast_1d(np.asarray(self.gamma_vec, dtype=float))
        m = np.atleast_1d(np.asarray(self.init_mean, dtype=float))
        c = np.atleast_2d(np.asarray(self.init_cov, dtype=float))
        d = g.shape[0]
        if a.shape != (d, d) or m.shape != (d,) or c.shape != (d, d):
            raise ValueError(
                f"dimension mismatch: a_matrix {a.shape}, gamma_vec {g.shape}, "
                f"init_mean {m.shape}, init_cov {c.shape}"
            )
        if np.max(np.abs(c - c.T)) > 1e-12:
            raise ValueError("init_cov must be symmetric")
        if np.min(np.linalg.eigvalsh(c)) <= 0:
            raise ValueError("init_cov must be positive definite")
        _check_noise(float(self.sigma_b), float(self.sigma_w))
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "gamma_vec", g)
        object.__setattr__(self, "init_mean", m)
        object.__setattr__(self, "init_cov", c)

    @property
    def dim(self):
        return self.gamma_vec.shape[0]


@dataclass(frozen=True)
class ScalarDiffusionModel:
    drift: Callable
    obs: Callable
    obs_deriv: Callable
    sigma_b: float
    sigma_w: float
    init_mean: float = 0.0
    init_var: float = 1.0
    geometry: str = LINE
    # "uniform" draws X_0 uniformly on [0, 2*pi); only meaningful on the circle.
    init_law: str = "gaussian"
    name: str = "custom"
    linear: Optional[LinearModelParams] = None
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("sigma_b", "sigma_w", "init_mean", "init_var"):
            object.__setattr__(self, name, _check_finite(name, getattr(self, name)))
        _check_noise(self.sigma_b, self.sigma_w)
        if self.init_var < 0:
            raise ValueError(f"init_var must be nonnegative, got {self.init_var}")
        if self.geometry not in (LINE, CIRCLE):
            raise ValueError(f"geometry must be 'line' or 'circle', got {self.geometry!r}")
        if self.init_law not in ("gaussian", "uniform"):
            raise ValueError(f"unknown init_law {self.init_law!r}")
        if self.init_law == "uniform" and self.geometry != CIRCLE:
            raise ValueError("uniform initial law requires circle geometry")
        if self.geometry == CIRCLE:
            xs = np.linspace(0.0, TWO_PI, 37)
            for fname in ("drift", "obs"):
                f = getattr(self, fname)
                if np.max(np.abs(f(xs) - f(xs + TWO_PI))) >= 1e-12:
                    raise ValueError(f"{fname} is not 2*pi-periodic on a circle model")

    @property
    def is_circle(self):
        return self.geometry == CIRCLE

    def sample_initial(self, rng, size):
        if self.init_law == "uniform":
            return rng.uniform(0.0, TWO_PI, size=size)
        x = self.init_mean + math.sqrt(self.init_var) * rng.standard_normal(size)
        if self.is_circle:
            x = wrap_angle(x)
        return x


def wrap_angle(x):
    """Map angles onto [0, 2*pi), guarding the round-off case that lands on 2*pi."""
    y = np.mod(x, TWO_PI)
    return np.where(y >= TWO_PI, 0.0, y)


_REQUIRED = {
    "linear": ("alpha", "gamma", "sigma_w"),
    "double_well": ("sigma_b", "sigma_w"),
    "oscillator": ("omega", "sigma_b", "sigma_w"),
}

_DEFAULTS = {
    "linear": {"sigma_b": 1.0, "init_mean": 1.0, "init_var": 1.0},
    "double_well": {"init_mean": 0.0, "init_var": 1.0},
    "oscillator": {},
}


def make_builtin_model(name, params=None):
    """Build one of the three experiment models from a parameter map.

    ``linear``      dX = alpha X dt + sigma_b dB,       dZ = gamma X dt + sigma_w dW
    ``double_well`` dX = X (1 - X^2) dt + sigma_b dB,   dZ = X dt + sigma_w dW
    ``oscillator``  dtheta = omega dt + sigma_b dB (mod 2 pi),
                    dZ = (1 + cos theta) / 2 dt + sigma_w dW
    """
    if name not in _REQUIRED:
        raise ValueError(f"unknown model {name!r}; expected one of {BUILTIN_MODELS}")
    params = dict(params or {})
    missing = [k for k in _REQUIRED[name] if k not in params]
    if missing:
        raise ValueError(f"model {name!r} is missing parameters: {', '.join(missing)}")
    allowed = set(_REQUIRED[name]) | set(_DEFAULTS[name]) | {"sigma_b", "init_mean", "init_var"}
    if name == "oscillator":
        allowed -= {"init_mean", "init_var"}
    unknown = sorted(set(params) - allowed)
    if unknown:
        raise ValueError(f"model {name!r} got unknown parameters: {', '.join(unknown)}")
    p = {**_DEFAULTS[name], **params}
    p = {k: _check_finite(k, v) for k, v in p.items()}

    if name == "linear":
        return LinearModelParams(**p).to_model()

    if name == "double_well":
        return ScalarDiffusionModel(
            drift=lambda x: np.asarray(x, dtype=float) * (1.0 - np.asarray(x, dtype=float) ** 2),
            obs=lambda x: np.asarray(x, dtype=float) * 1.0,
            obs_deriv=lambda x: np.ones_like(np.asarray(x, dtype=float)),
            sigma_b=p["sigma_b"],
            sigma_w=p["sigma_w"],
            init_mean=p["init_mean"],
            init_var=p["init_var"],
            name="double_well",
            params=p,
        )

    omega = p["omega"]
    return ScalarDiffusionModel(
        drift=lambda x: np.full_like(np.asarray(x, dtype=float), omega),
        obs=lambda x: 0.5 * (1.0 + np.cos(x)),
        obs_deriv=lambda x: -0.5 * np.sin(x),
        sigma_b=p["sigma_b"],
        sigma_w=p["sigma_w"],
        init_mean=0.0,
        init_var=0.0,
        geometry=CIRCLE,
        init_law="uniform",
        name="oscillator",
        params=p,
    )
