"""Grid-based reference solutions used to check the particle filters.

Nothing in here runs inside a filter loop. ``ks_filter_run`` approximates
the exact posterior by operator splitting (Bayes multiply, then a
finite-volume Fokker-Planck step); ``quadrature_gain`` integrates the
first-order gain equation directly on a grid density.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridTooSmallError
from .models import TWO_PI

DEFAULT_CELLS = 800
BOUNDARY_CELLS = 5
BOUNDARY_MASS_TOL = 1e-6


@dataclass
class GridDensity:
    """Cell-centred density on [grid_lo, grid_hi] (periodic when ``periodic``)."""

    grid_lo: float
    grid_hi: float
    n_cells: int
    values: np.ndarray = None
    periodic: bool = False
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.grid_hi > self.grid_lo:
            raise ValueError("grid_hi must exceed grid_lo")
        if self.n_cells < 3:
            raise ValueError("need at least three cells")
        if self.values is None:
            self.values = np.zeros(self.n_cells)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.n_cells,):
            raise ValueError("values must have one entry per cell")

    @property
    def dx(self):
        return (self.grid_hi - self.grid_lo) / self.n_cells

    @property
    def x(self):
        return self.grid_lo + (np.arange(self.n_cells) + 0.5) * self.dx

    def mass(self):
        if self.periodic:
            return float(np.sum(self.values) * self.dx)
        return float(np.trapezoid(self.values, dx=self.dx))

    def normalize(self):
        m = self.mass()
        if not m > 0:
            raise ValueError("density has no mass")
        self.values = self.values / m
        return self

    def copy(self):
        return GridDensity(
            self.grid_lo, self.grid_hi, self.n_cells, self.values.copy(), self.periodic, dict(self.diagnostics)
        )

    def moments(self):
        x, p, dx = self.x, self.values, self.dx
        if self.periodic:
            c = np.sum(np.cos(x) * p) * dx
            s = np.sum(np.sin(x) * p) * dx
            r = math.hypot(c, s)
            return float(math.atan2(s, c) % TWO_PI), float(min(1.0, max(0.0, 1.0 - r)))
        w = p * dx
        w = w / w.sum()
        mean = float(np.sum(w * x))
        return mean, float(np.sum(w * (x - mean) ** 2))

    def boundary_mass(self):
        if self.periodic:
            return 0.0
        b = BOUNDARY_CELLS
        return float((np.sum(self.values[:b]) + np.sum(self.values[-b:])) * self.dx)

    @classmethod
    def from_function(cls, f, lo, hi, n_cells, periodic=False):
        g = cls(lo, hi, n_cells, periodic=periodic)
        g.values = np.asarray(f(g.x), dtype=float)
        return g.normalize()

    @classmethod
    def gaussian(cls, mean, var, lo, hi, n_cells):
        return cls.from_function(
            lambda x: np.exp(-0.5 * (x - mean) ** 2 / var) / math.sqrt(2 * math.pi * var), lo, hi, n_cells
        )

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("x,p\n")
            for xi, pi in zip(self.x, self.values):
                fh.write(f"{float(xi)!r},{float(pi)!r}\n")


def _flux_divergence(p, a_face, diff, dx, periodic):
    """Upwind drift plus centred diffusion flux; zero flux through a closed boundary."""
    if periodic:
        p_right = np.roll(p, -1)
        flux = np.maximum(a_face, 0) * p + np.minimum(a_face, 0) * p_right - diff * (p_right - p) / dx
        return (flux - np.roll(flux, 1)) / dx
    f_int = (
        np.maximum(a_face, 0) * p[:-1] + np.minimum(a_face, 0) * p[1:] - diff * (p[1:] - p[:-1]) / dx
    )
    flux = np.concatenate(([0.0], f_int, [0.0]))
    return (flux[1:] - flux[:-1]) / dx


def fp_step(density, model, dt):
    """Advance the density through the Kolmogorov forward equation over ``dt``.

    Explicit finite volumes, sub-stepped so that sigma_b^2 dt / dx^2 <= 0.5
    and the combined upwind/diffusion update stays positivity-preserving.
    """
    g = density.copy()
    dx = g.dx
    if g.periodic:
        faces = g.x + 0.5 * dx
    else:
        faces = g.x[:-1] + 0.5 * dx
    a_face = np.asarray(model.drift(faces), dtype=float) * np.ones_like(faces)
    diff = 0.5 * model.sigma_b**2
    amax = float(np.max(np.abs(a_face))) if a_face.size else 0.0
    rate = amax / dx + 2.0 * diff / dx**2
    n_sub = 1
    if rate > 0:
        n_sub = max(1, math.ceil(dt * rate / 0.9), math.ceil(2.0 * diff * dt / dx**2 / 0.5))
    h = dt / n_sub
    p = g.values
    clipped = 0.0
    if rate > 0:
        for _ in range(n_sub):
            p = p - h * _flux_divergence(p, a_face, diff, dx, g.periodic)
            neg = p < 0
            if neg.any():
                clipped -= float(np.sum(p[neg]) * dx)
                p = np.where(neg, 0.0, p)
    g.values = p
    g.diagnostics["clip_mass"] = g.diagnostics.get("clip_mass", 0.0) + clipped
    g.diagnostics["substeps"] = n_sub
    g.diagnostics["mass_before_normalize"] = g.mass()
    if abs(g.mass() - 1.0) > 1e-13:
        g.normalize()
    return g


def bayes_update(density, model, dz, dt):
    """Multiply by the Gaussian likelihood of dZ given h(x) and renormalize."""
    g = density.copy()
    hx = np.asarray(model.obs(g.x), dtype=float)
    loglik = -((dz - hx * dt) ** 2) / (2.0 * model.sigma_w**2 * dt)
    g.values = g.values * np.exp(loglik - np.max(loglik))
    return g.normalize()


def default_grid(model, n_cells=DEFAULT_CELLS):
    """Grid covering the prior mean +/- 8 spreads, widened by the noise/drift scale."""
    if model.is_circle:
        return GridDensity(0.0, TWO_PI, n_cells, periodic=True)
    sd = max(math.sqrt(model.init_var), model.sigma_b, 1.0)
    if model.linear is not None and model.linear.alpha < 0:
        sd = max(sd, model.sigma_b / math.sqrt(-2.0 * model.linear.alpha))
    return GridDensity(model.init_mean - 8.0 * sd, model.init_mean + 8.0 * sd, n_cells)


def initial_density(model, grid):
    g = grid.copy()
    if model.is_circle:
        if model.init_law == "uniform":
            g.values = np.full(g.n_cells, 1.0 / TWO_PI)
            return g.normalize()
        raise ValueError("only the uniform prior is supported on the circle grid")
    if model.init_var == 0:
        g.values = np.zeros(g.n_cells)
        g.values[int(np.clip((model.init_mean - g.grid_lo) // g.dx, 0, g.n_cells - 1))] = 1.0
        return g.normalize()
    m, v = model.init_mean, model.init_var
    g.values = np.exp(-0.5 * (g.x - m) ** 2 / v)
    return g.normalize()


@dataclass
class OracleTrack:
    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    snapshots: dict

    def __len__(self):
        return len(self.times)


def ks_filter_run(model, truth, grid=None, snapshot_steps=()):
    """Grid posterior over the truth's observation increments.

    Each step assimilates dZ_k into the density at t_k and then propagates
    it to t_{k+1}, matching how the increments are generated.
    """
    if truth.n_steps < 1:
        raise ValueError("truth path has no observation increments")
    if grid is None:
        grid = default_grid(model)
    g = initial_density(model, grid)
    dt = truth.dt
    n = truth.n_steps
    mean = np.empty(n)
    var = np.empty(n)
    snaps = {}
    wanted = set(snapshot_steps)
    for k in range(n):
        g = bayes_update(g, model, truth.obs_increments[k], dt)
        g = fp_step(g, model, dt)
        if g.boundary_mass() > BOUNDARY_MASS_TOL:
            raise GridTooSmallError("posterior mass reached the grid boundary", step=k)
        mean[k], var[k] = g.moments()
        if k in wanted:
            snaps[k] = g.copy()
    return OracleTrack(dt * np.arange(1, n + 1), mean, var, snaps)


def quadrature_gain(density, model):
    """Gain on the grid from K = (1/p) (1/sigma_w^2) int_{-inf}^x (h_hat - h) p.

    Cumulative trapezoid on the cell centres, accumulated from the left up to
    the peak of the integral and from the right beyond it; p is floored at
    1e-9 max(p) before division.
    """
    x, p, dx = density.x, density.values, density.dx
    hx = np.asarray(model.obs(x), dtype=float) * np.ones_like(x)
    w = np.trapezoid(p, dx=dx)
    h_hat = np.trapezoid(hx * p, dx=dx) / w
    f = (h_hat - hx) * p
    seg = 0.5 * (f[1:] + f[:-1]) * dx
    left = np.concatenate(([0.0], np.cumsum(seg)))
    # the full integral vanishes, so the right tail is -(sum from the right end);
    # accumulating from the nearer end avoids cancellation where p is tiny
    right = -np.concatenate((np.cumsum(seg[::-1])[::-1], [0.0]))
    split = int(np.argmax(np.abs(left)))
    integral = np.where(np.arange(len(x)) <= split, left, right)
    floor = 1e-9 * np.max(p)
    return integral / (model.sigma_w**2 * np.maximum(p, floor))


def bvp_residual(density, gain, model):
    """Centred-difference residual of d/dx (p K) + (h - h_hat) p / sigma_w^2."""
    x, p, dx = density.x, density.values, density.dx
    hx = np.asarray(model.obs(x), dtype=float) * np.ones_like(x)
    h_hat = np.trapezoid(hx * p, dx=dx) / np.trapezoid(p, dx=dx)
    pk = p * gain
    d_pk = (pk[2:] - pk[:-2]) / (2 * dx)
    return d_pk + (hx[1:-1] - h_hat) * p[1:-1] / model.sigma_w**2


# 8th-order centred first-derivative stencil
_D1 = np.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0.0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])


def _ddx(f, h, axis):
    out = np.zeros_like(f)
    n = f.shape[axis]
    core = slice(4, n - 4)
    acc = 0.0
    for j, c in enumerate(_D1):
        if c == 0.0:
            continue
        sl = [slice(None)] * f.ndim
        sl[axis] = slice(j, n - 8 + j)
        acc = acc + c * f[tuple(sl)]
    idx = [slice(None)] * f.ndim
    idx[axis] = core
    out[tuple(idx)] = acc / h
    return out


def kalman_divergence_residual(cov, gamma, sigma_w, mean=None, n=64, half_width=4.0, gain=None):
    """Max-norm residual of div(p K) + (h - h_hat) p / sigma_w^2 on an n x n grid.

    p is the 2-D Gaussian N(mean, cov), h(x) = gamma . x and K the constant
    Kalman gain; derivatives use an 8th-order centred stencil and the
    residual is taken over interior nodes where the stencil fits. Pass
    ``gain`` to test some other constant vector in place of the Kalman gain.
    """
    from .gain import kalman_gain_vector

    cov = np.asarray(cov, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if cov.shape != (2, 2) or gamma.shape != (2,):
        raise ValueError("the grid residual is implemented for d = 2")
    mean = np.zeros(2) if mean is None else np.asarray(mean, dtype=float)
    k = kalman_gain_vector(cov, gamma, sigma_w) if gain is None else np.asarray(gain, dtype=float)
    sd = np.sqrt(np.diag(cov))
    axes = [np.linspace(mean[i] - half_width * sd[i], mean[i] + half_width * sd[i], n) for i in range(2)]
    h = [ax[1] - ax[0] for ax in axes]
    x1, x2 = np.meshgrid(axes[0], axes[1], indexing="ij")
    d = np.stack([x1 - mean[0], x2 - mean[1]], axis=-1)
    inv = np.linalg.inv(cov)
    quad = np.einsum("...i,ij,...j->...", d, inv, d)
    p = np.exp(-0.5 * quad) / (2 * math.pi * math.sqrt(np.linalg.det(cov)))
    div = _ddx(p * k[0], h[0], 0) + _ddx(p * k[1], h[1], 1)
    hx = gamma[0] * x1 + gamma[1] * x2
    h_hat = float(gamma @ mean)
    res = div + (hx - h_hat) * p / sigma_w**2
    return float(np.max(np.abs(res[4:-4, 4:-4])))
