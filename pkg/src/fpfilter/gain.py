"""Gain-function synthesis for the feedback particle filter.

The gain K solves d/dx (p K) = -(h - h_hat) p / sigma_w^2 with p K -> 0 at the
boundary. Three routes are provided:

* the exact linear-Gaussian (Kalman) gain, scalar and vector;
* the direct numerical approximation (DNS) built from empirical sums and a
  sum-of-Gaussians density estimate;
* a first-harmonic perturbation formula for the oscillator on the circle.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

EXACT_LINEAR = "exact_linear"
DNS = "dns"
FOURIER_CIRCLE = "fourier_circle"
GAIN_METHODS = (EXACT_LINEAR, DNS, FOURIER_CIRCLE)

DENSITY_FLOOR = 1e-6
GAIN_CAP = 1e4
# Above this many particles the mixture density is evaluated on a binned grid.
EXACT_DENSITY_MAX_N = 2000


@dataclass
class GainField:
    """Gain ``k`` and its spatial derivative ``kp`` at each particle."""

    k: np.ndarray
    kp: np.ndarray
    method_tag: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=float)
        kp = np.asarray(self.kp, dtype=float)
        self.kp = kp if kp.shape == self.k.shape else np.broadcast_to(kp, self.k.shape).copy()

    def __len__(self):
        return len(self.k)

    @property
    def at_particles(self):
        return np.column_stack([self.k, self.kp])

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("particle,K,Kprime\n")
            for i, (k, kp) in enumerate(zip(self.k, self.kp)):
                fh.write(f"{i},{float(k)!r},{float(kp)!r}\n")


# -- linear-Gaussian ---------------------------------------------------------


def kalman_gain_scalar(variance, gamma, sigma_w):
    if not sigma_w > 0:
        raise ValueError(f"sigma_w must be positive, got {sigma_w}")
    if variance < 0:
        raise ValueError(f"variance must be nonnegative, got {variance}")
    return variance * gamma / sigma_w**2


def kalman_gain_vector(cov, gamma, sigma_w):
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    if cov.shape != (gamma.shape[0], gamma.shape[0]):
        raise ValueError(f"dimension mismatch: cov {cov.shape} vs gamma {gamma.shape}")
    if not sigma_w > 0:
        raise ValueError(f"sigma_w must be positive, got {sigma_w}")
    return cov @ gamma / sigma_w**2


def check_gradient_condition(cov, gamma, sigma_w):
    """Max violation of K_i (Sigma^-1)_jk = K_j (Sigma^-1)_ik over all (i, j, k).

    The condition is necessary for p K to be a gradient field when p is
    Gaussian with covariance ``cov``; for d >= 2 and nonzero gain the Kalman
    gain violates it.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape[0] < 1:
        raise ValueError("dimension must be at least 1")
    if np.linalg.matrix_rank(cov) < cov.shape[0]:
        raise np.linalg.LinAlgError("covariance is singular")
    k = kalman_gain_vector(cov, gamma, sigma_w)
    s = np.linalg.inv(cov)
    # r[i, j, kk] = K_i S_jk - K_j S_ik
    r = k[:, None, None] * s[None, :, :] - k[None, :, None] * s[:, None, :]
    return float(np.max(np.abs(r)))


# -- DNS ---------------------------------------------------------------------


def default_bandwidth(positions):
    """Kernel variance eps = max(1e-4, std * N^(-2/5))."""
    x = np.asarray(positions, dtype=float)
    n = len(x)
    sd = float(np.std(x, ddof=1)) if n > 1 else 0.0
    return max(1e-4, sd * n ** (-0.4))


def mixture_density(x, centers, eps):
    """Sum-of-Gaussians density (1/N) sum_j q(x; X_j, eps) and its x-derivative, exactly."""
    x = np.asarray(x, dtype=float)
    c = np.asarray(centers, dtype=float)
    norm = 1.0 / (len(c) * math.sqrt(2.0 * math.pi * eps))
    p = np.empty_like(x)
    dp = np.empty_like(x)
    chunk = max(1, 4_000_000 // max(len(c), 1))
    for s in range(0, len(x), chunk):
        d = x[s : s + chunk, None] - c[None, :]
        q = np.exp(-0.5 * d * d / eps)
        p[s : s + chunk] = q.sum(axis=1)
        dp[s : s + chunk] = -(d * q).sum(axis=1) / eps
    return p * norm, dp * norm


def binned_mixture_density(x, centers, eps, points_per_sd=20, max_bins=1 << 18):
    """Mixture density and derivative via linear binning and FFT convolution.

    Falls back to the exact evaluation when the ensemble spread would need
    more than ``max_bins`` bins.
    """
    x = np.asarray(x, dtype=float)
    c = np.asarray(centers, dtype=float)
    sd = math.sqrt(eps)
    delta = sd / points_per_sd
    half = int(math.ceil(8.0 * points_per_sd))
    lo = min(c.min(), x.min()) - (half + 2) * delta
    hi = max(c.max(), x.max()) + (half + 2) * delta
    span = (hi - lo) / delta
    if not span < max_bins:
        return mixture_density(x, c, eps)
    m = int(math.ceil(span)) + 1

    u = (c - lo) / delta
    i0 = np.floor(u).astype(np.int64)
    frac = u - i0
    counts = np.bincount(i0, weights=1.0 - frac, minlength=m + 1)
    counts += np.bincount(i0 + 1, weights=frac, minlength=m + 1)

    offs = delta * np.arange(-half, half + 1)
    q = np.exp(-0.5 * offs * offs / eps)
    dq = -offs / eps * q
    norm = 1.0 / (len(c) * math.sqrt(2.0 * math.pi * eps))
    pg = fftconvolve(counts, q, mode="same") * norm
    dpg = fftconvolve(counts, dq, mode="same") * norm

    grid = lo + delta * np.arange(len(counts))
    return np.interp(x, grid, pg), np.interp(x, grid, dpg)


def dns_gain(positions, model, bandwidth=None, density="auto"):
    """Gain at the particles from empirical sums and a sum-of-Gaussians density.

    K(X_i) = [sum_{X_j < X_i} (h_hat - h(X_j)) + (h_hat - h(X_i)) / 2] / (N sigma_w^2 p(X_i))
    K'(X_i) = (h_hat - h(X_i)) / sigma_w^2 - (p'/p)(X_i) K(X_i)

    The strict-inequality sum is evaluated with a stable sort and a prefix
    sum, so coincident particles only contribute through their own half term.
    """
    x = np.asarray(positions, dtype=float)
    n = len(x)
    if n < 2:
        raise ValueError("DNS gain needs at least two particles")
    if not np.all(np.isfinite(x)):
        raise ValueError("particle positions must be finite")
    eps = default_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not eps > 0:
        raise ValueError(f"bandwidth must be positive, got {eps}")
    sw2 = model.sigma_w**2

    hx = np.asarray(model.obs(x), dtype=float)
    h_hat = np.mean(hx)
    r = h_hat - hx

    order = np.argsort(x, kind="stable")
    xs = x[order]
    csum = np.concatenate(([0.0], np.cumsum(r[order])))
    below = csum[np.searchsorted(xs, x, side="left")]

    if density == "exact" or (density == "auto" and n <= EXACT_DENSITY_MAX_N):
        p, dp = mixture_density(x, x, eps)
    elif density in ("auto", "binned"):
        p, dp = binned_mixture_density(x, x, eps)
    else:
        raise ValueError(f"unknown density mode {density!r}")

    floor = DENSITY_FLOOR * np.max(p)
    n_floored = int(np.count_nonzero(p < floor))
    p = np.maximum(p, floor)

    k = (below + 0.5 * r) / (n * sw2 * p)
    n_capped = int(np.count_nonzero(np.abs(k) > GAIN_CAP))
    k = np.clip(k, -GAIN_CAP, GAIN_CAP)
    kp = r / sw2 - (dp / p) * k
    meta = {"bandwidth": eps, "h_hat": h_hat, "n_floored": n_floored, "n_capped": n_capped}
    return GainField(k=k, kp=kp, method_tag=DNS, meta=meta)


def dns_gain_reference(positions, model, bandwidth):
    """Direct O(N^2) double loop for the DNS gain (no floor, no cap).

    Kept deliberately naive; it is the independent check for ``dns_gain``.
    """
    x = [float(v) for v in positions]
    n = len(x)
    h = [float(model.obs(np.array([v]))[0]) for v in x]
    h_hat = sum(h) / n
    sw2 = model.sigma_w**2
    c = 1.0 / math.sqrt(2.0 * math.pi * bandwidth)
    k = []
    kp = []
    for i in range(n):
        acc = 0.0
        p = 0.0
        dp = 0.0
        for j in range(n):
            if x[j] < x[i]:
                acc += h_hat - h[j]
            d = x[i] - x[j]
            q = c * math.exp(-d * d / (2.0 * bandwidth))
            p += q / n
            dp += -d / bandwidth * q / n
        acc += 0.5 * (h_hat - h[i])
        ki = acc / (p * sw2 * n)
        k.append(ki)
        kp.append((h_hat - h[i]) / sw2 - dp / p * ki)
    return np.array(k), np.array(kp)


# -- oscillator --------------------------------------------------------------


@dataclass(frozen=True)
class FourierGainCoeffs:
    p_c: float
    p_s: float


def harmonic_coeffs(angles):
    """First-harmonic coefficients (1/(pi N)) sum cos, (1/(pi N)) sum sin."""
    th = np.asarray(angles, dtype=float)
    n = len(th)
    return FourierGainCoeffs(
        p_c=float(np.sum(np.cos(th)) / (math.pi * n)),
        p_s=float(np.sum(np.sin(th)) / (math.pi * n)),
    )


def fourier_gain_eval(theta, coeffs, sigma_w):
    """K0 + K1 and the derivative, at angles ``theta``."""
    th = np.asarray(theta, dtype=float)
    sw2 = sigma_w**2
    k0 = -np.sin(th) / (2.0 * sw2)
    k1 = math.pi / (4.0 * sw2) * (coeffs.p_c * np.sin(2 * th) - coeffs.p_s * np.cos(2 * th))
    kp = -np.cos(th) / (2.0 * sw2) + math.pi / (2.0 * sw2) * (
        coeffs.p_c * np.cos(2 * th) + coeffs.p_s * np.sin(2 * th)
    )
    return k0 + k1, kp


def fourier_gain_circle(positions, sigma_w):
    """Oscillator gain from the first harmonics of the angular ensemble.

    Assumes the observation h(theta) = (1 + cos theta) / 2; higher harmonics
    of the density are ignored.
    """
    th = np.asarray(positions, dtype=float)
    if len(th) < 1:
        raise ValueError("need at least one particle")
    if not sigma_w > 0:
        raise ValueError(f"sigma_w must be positive, got {sigma_w}")
    coeffs = harmonic_coeffs(th)
    k, kp = fourier_gain_eval(th, coeffs, sigma_w)
    return GainField(k=k, kp=kp, method_tag=FOURIER_CIRCLE, meta={"coeffs": coeffs})


def sample_variance(x):
    """Unbiased (ddof=1) sample variance of a 1-D array."""
    d = x - x.sum() / len(x)
    return float(d @ d) / (len(x) - 1)


def exact_linear_gain(positions, model):
    """Kalman gain Sigma^(N) gamma / sigma_w^2 from the sample variance."""
    if model.linear is None:
        raise ValueError("exact_linear gain requires a linear model")
    x = np.asarray(positions, dtype=float)
    var = sample_variance(x)
    k = kalman_gain_scalar(var, model.linear.gamma, model.sigma_w)
    return GainField(
        k=np.full(len(x), k), kp=np.zeros(len(x)), method_tag=EXACT_LINEAR, meta={"variance": var}
    )


def compute_gain(method, positions, model, bandwidth=None):
    if method == EXACT_LINEAR:
        return exact_linear_gain(positions, model)
    if method == DNS:
        if model.is_circle:
            raise ValueError("dns gain is defined on the line only")
        return dns_gain(positions, model, bandwidth)
    if method == FOURIER_CIRCLE:
        if not model.is_circle:
            raise ValueError("fourier_circle gain requires a circle model")
        return fourier_gain_circle(positions, model.sigma_w)
    raise ValueError(f"unknown gain method {method!r}; expected one of {GAIN_METHODS}")
