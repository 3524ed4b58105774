"""Feedback particle filter for continuous-time nonlinear filtering.

Includes exact-linear, DNS and Fourier gain solvers, Kalman-Bucy and
bootstrap particle filter baselines, and grid-based reference solvers.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DivergenceError, FilterCollapseError, GridTooSmallError  # noqa: E402
from .models import (  # noqa: E402
    LinearModelParams,
    MultiLinearModelParams,
    ScalarDiffusionModel,
    make_builtin_model,
)
from .simulate import RandomStream, TruthPath, simulate_truth  # noqa: E402
from .gain import (  # noqa: E402
    GainField,
    check_gradient_condition,
    dns_gain,
    fourier_gain_circle,
    kalman_gain_scalar,
    kalman_gain_vector,
)
from .fpf import FilterEstimate, ParticleEnsemble, estimate, fpf_step, run_fpf  # noqa: E402
from .baselines import (  # noqa: E402
    WeightedEnsemble,
    bootstrap_step,
    kalman_bucy_run,
    run_bootstrap,
    systematic_resample,
)
from .oracle import GridDensity, fp_step, ks_filter_run, quadrature_gain  # noqa: E402
