"""Scenario configuration, experiment orchestration and reporting."""

import configparser
import dataclasses
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import kalman_bucy_run, run_bootstrap
from .errors import ConfigError, DivergenceError, FilterCollapseError, FilterError
from .fpf import FORMS, STRATONOVICH_EULER, run_fpf
from .gain import GAIN_METHODS, FOURIER_CIRCLE, DNS, EXACT_LINEAR
from .models import BUILTIN_MODELS, make_builtin_model
from .oracle import ks_filter_run
from .simulate import RandomStream, n_steps_for, simulate_truth

FILTERS = ("fpf", "bootstrap", "kalman", "ks_oracle")
OUTPUT_DIR_ENV = "FPFILTER_OUTPUT_DIR"

# Stream ids are laid out per trial: truth, filter.
_TRUTH_STREAM = 0
_FILTER_STREAM = 1
_STREAMS_PER_TRIAL = 16

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_COLLAPSE = 3
EXIT_DIVERGENCE = 4


@dataclass
class ScenarioConfig:
    model: str
    model_params: dict
    filter: str = "fpf"
    gain_method: str = None
    n_particles: int = 1000
    dt: float = 0.01
    horizon: float = 1.0
    seed: int = 0
    trials: int = 1
    output_dir: str = None
    form: str = STRATONOVICH_EULER
    bandwidth: float = None
    resample_threshold: float = 0.5

    def validate(self):
        if self.model not in BUILTIN_MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {BUILTIN_MODELS}")
        if self.filter not in FILTERS:
            raise ConfigError(f"unknown filter {self.filter!r}; expected one of {FILTERS}")
        try:
            model = make_builtin_model(self.model, self.model_params)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.filter == "fpf":
            if self.gain_method is None:
                self.gain_method = (
                    EXACT_LINEAR if self.model == "linear" else FOURIER_CIRCLE if model.is_circle else DNS
                )
            if self.gain_method not in GAIN_METHODS:
                raise ConfigError(f"unknown gain_method {self.gain_method!r}")
            if self.form not in FORMS:
                raise ConfigError(f"unknown form {self.form!r}")
            if self.gain_method == EXACT_LINEAR and model.linear is None:
                raise ConfigError("exact_linear gain requires the linear model")
            if (self.gain_method == FOURIER_CIRCLE) != model.is_circle:
                raise ConfigError(f"gain_method {self.gain_method!r} does not match the model geometry")
        if self.filter == "kalman" and model.linear is None:
            raise ConfigError("the kalman filter requires the linear model")
        for name in ("n_particles", "trials"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.filter in ("fpf", "bootstrap") and self.n_particles < 2:
            raise ConfigError("n_particles must be at least 2")
        for name in ("dt", "horizon"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive real")
        try:
            n_steps_for(self.dt, self.horizon)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ConfigError("bandwidth must be positive")
        if not 0.0 < self.resample_threshold <= 1.0:
            raise ConfigError("resample_threshold must lie in (0, 1]")
        return model

    def build_model(self):
        return make_builtin_model(self.model, self.model_params)

    def canonical(self):
        d = dataclasses.asdict(self)
        d["model_params"] = {k: d["model_params"][k] for k in sorted(d["model_params"])}
        return d

    def config_hash(self):
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# -- config file --------------------------------------------------------------

_INT_KEYS = {"n_particles", "seed", "trials"}
_FLOAT_KEYS = {"dt", "horizon", "bandwidth", "resample_threshold"}
_STR_KEYS = {"filter", "gain_method", "output_dir", "form"}


def _parse_number(key, text, kind):
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind.__name__}") from None


def parse_config(text):
    """Parse the INI-style scenario format.

    ::

        [scenario]
        filter = fpf
        n_particles = 10000
        ...
        [model]
        name = linear
        alpha = -0.5
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    if not cp.has_section("model") or "name" not in cp["model"]:
        raise ConfigError("config needs a [model] section with a name")
    kw = {}
    for key, raw in (cp["scenario"].items() if cp.has_section("scenario") else []):
        if key in _INT_KEYS:
            kw[key] = _parse_number(key, raw, int)
        elif key in _FLOAT_KEYS:
            kw[key] = _parse_number(key, raw, float)
        elif key in _STR_KEYS:
            kw[key] = raw.strip()
        else:
            raise ConfigError(f"unknown scenario key {key!r}")
    params = {k: _parse_number(k, v, float) for k, v in cp["model"].items() if k != "name"}
    return ScenarioConfig(model=cp["model"]["name"].strip(), model_params=params, **kw)


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text)


def dump_config(cfg):
    lines = ["[scenario]"]
    for f in dataclasses.fields(cfg):
        if f.name in ("model", "model_params"):
            continue
        v = getattr(cfg, f.name)
        if v is not None:
            lines.append(f"{f.name} = {v!r}" if isinstance(v, float) else f"{f.name} = {v}")
    lines += ["", "[model]", f"name = {cfg.model}"]
    lines += [f"{k} = {float(v)!r}" for k, v in sorted(cfg.model_params.items())]
    return "\n".join(lines) + "\n"


# -- metrics -------------------------------------------------------------------


def relative_mse(estimated_var, reference_var, dt):
    """(1/T) * sum_k dt ((est_k - ref_k) / ref_k)^2 with T = n dt."""
    est = np.asarray(estimated_var, dtype=float)
    ref = np.asarray(reference_var, dtype=float)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    if len(ref) == 0:
        raise ValueError("empty series")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if np.any(ref <= 0):
        raise ValueError("reference variance must be strictly positive")
    err = ((est - ref) / ref) ** 2
    return float(np.sum(err * dt) / (len(ref) * dt))


def tracking_rmse(mean, states, circle=False):
    d = np.asarray(mean) - np.asarray(states)
    if circle:
        d = (d + np.pi) % (2 * np.pi) - np.pi
    return float(np.sqrt(np.mean(d * d)))


# -- runs ----------------------------------------------------------------------


def trial_streams(seed, trial):
    base = trial * _STREAMS_PER_TRIAL
    return RandomStream(seed, base + _TRUTH_STREAM), RandomStream(seed, base + _FILTER_STREAM)


def run_filter(cfg, model, truth, stream):
    """Run the configured filter; returns ``(track, seconds_per_iteration)``."""
    t0 = time.perf_counter()
    if cfg.filter == "fpf":
        track = run_fpf(model, cfg.gain_method, truth, cfg.n_particles, stream, cfg.form, cfg.bandwidth)
    elif cfg.filter == "bootstrap":
        track = run_bootstrap(model, truth, cfg.n_particles, stream, cfg.resample_threshold)
    elif cfg.filter == "kalman":
        track = kalman_bucy_run(model.linear, truth)
    else:
        track = ks_filter_run(model, truth)
        track.h_hat = np.full(len(track.times), np.nan)
    elapsed = time.perf_counter() - t0
    return track, elapsed / truth.n_steps


def reference_variance(model, truth):
    if model.linear is not None:
        return kalman_bucy_run(model.linear, truth).variance
    return ks_filter_run(model, truth).variance


def write_track_csv(track, path):
    with open(path, "w") as fh:
        fh.write("t,mean,variance,h_hat\n")
        for row in zip(track.times, track.mean, track.variance, track.h_hat):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


@dataclass
class RunReport:
    relative_mse: list = field(default_factory=list)
    tracking_rmse: list = field(default_factory=list)
    time_per_iter: list = field(default_factory=list)
    status: list = field(default_factory=list)
    divergence_count: int = 0
    collapse_count: int = 0
    provenance: dict = field(default_factory=dict)

    @property
    def mean_time_per_iter(self):
        t = [v for v in self.time_per_iter if v is not None]
        return float(np.mean(t)) if t else None

    @property
    def exit_code(self):
        if self.divergence_count:
            return EXIT_DIVERGENCE
        if self.collapse_count:
            return EXIT_COLLAPSE
        return EXIT_OK

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["mean_time_per_iter"] = self.mean_time_per_iter
        return d


def resolve_output_dir(cfg):
    out = cfg.output_dir or os.environ.get(OUTPUT_DIR_ENV) or "fpfilter-out"
    return Path(out)


def run_scenario(cfg, write=True):
    """Run ``cfg.trials`` independent trials and write CSVs plus ``report.json``.

    A collapse or divergence in one trial is recorded and the remaining
    trials still run.
    """
    model = cfg.validate()
    out = resolve_output_dir(cfg)
    if write:
        out.mkdir(parents=True, exist_ok=True)
    report = RunReport(
        provenance={"config_hash": cfg.config_hash(), "seed": cfg.seed, "version": __version__}
    )
    for trial in range(cfg.trials):
        truth_stream, filter_stream = trial_streams(cfg.seed, trial)
        truth = simulate_truth(model, cfg.dt, cfg.horizon, truth_stream)
        if write:
            truth.to_csv(out / f"truth_trial{trial}.csv")
        try:
            track, per_iter = run_filter(cfg, model, truth, filter_stream)
        except FilterCollapseError as e:
            report.collapse_count += 1
            report.status.append(f"collapse: {e}")
            report.relative_mse.append(None)
            report.tracking_rmse.append(None)
            report.time_per_iter.append(None)
            continue
        except (DivergenceError, FilterError) as e:
            report.divergence_count += 1
            report.status.append(f"divergence: {e}")
            report.relative_mse.append(None)
            report.tracking_rmse.append(None)
            report.time_per_iter.append(None)
            continue
        ref = track.variance if cfg.filter in ("kalman",) else reference_variance(model, truth)
        report.relative_mse.append(relative_mse(track.variance, ref, truth.dt))
        report.tracking_rmse.append(tracking_rmse(track.mean, truth.states[1:], model.is_circle))
        report.time_per_iter.append(per_iter)
        report.status.append("ok")
        if write:
            write_track_csv(track, out / f"estimates_{cfg.filter}_trial{trial}.csv")
    if write:
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return report


def _truth_key(cfg):
    return (cfg.model, tuple(sorted(cfg.model_params.items())), cfg.seed, cfg.dt, cfg.horizon)


def compare_filters(configs, out_path=None):
    """Run each config against a truth path shared by all configs in its cell.

    A cell is one (model parameters, seed). Returns the comparison rows.
    """
    configs = list(configs)
    if not configs:
        raise ConfigError("compare needs at least one config")
    first = configs[0]
    for c in configs:
        c.validate()
        if (c.model, c.dt, c.horizon, c.seed) != (first.model, first.dt, first.horizon, first.seed):
            raise ConfigError("compared configs must share model family, dt, horizon and seed")

    truths = {}
    refs = {}
    rows = []
    for cfg in configs:
        model = cfg.build_model()
        key = _truth_key(cfg)
        if key not in truths:
            truth_stream, _ = trial_streams(cfg.seed, 0)
            truths[key] = simulate_truth(model, cfg.dt, cfg.horizon, truth_stream)
        truth = truths[key]
        dz_hash = hashlib.sha256(np.ascontiguousarray(truth.obs_increments).tobytes()).hexdigest()
        _, filter_stream = trial_streams(cfg.seed, 0)
        row = {
            "filter": cfg.filter,
            "gain_method": cfg.gain_method if cfg.filter == "fpf" else "",
            "n_particles": cfg.n_particles,
            "alpha": cfg.model_params.get("alpha", ""),
            "mse": "",
            "time_per_iter": "",
            "status": "ok",
            "dz_sha256": dz_hash,
        }
        times = []
        try:
            for _ in range(cfg.trials):
                track, per_iter = run_filter(cfg, model, truth, filter_stream)
                times.append(per_iter)
        except FilterCollapseError:
            row["status"] = "collapse"
        except FilterError:
            row["status"] = "divergence"
        if row["status"] == "ok":
            if key not in refs:
                refs[key] = reference_variance(model, truth)
            row["mse"] = relative_mse(track.variance, refs[key], truth.dt)
            row["time_per_iter"] = float(np.mean(times))
        rows.append(row)

    if out_path is not None:
        cols = list(rows[0])
        with open(out_path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for r in rows:
                fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in r.values()) + "\n")
    return rows


def gain_dump(cfg, at, path=None):
    """Run the FPF of ``cfg`` (trial 0) up to time ``at`` and return the gain used there.

    The gain is the one evaluated on the ensemble at the start of the step
    that begins at ``at``. Written as CSV (particle, K, Kprime) when ``path``
    is given.
    """
    model = cfg.validate()
    if cfg.filter != "fpf":
        raise ConfigError("gaindump requires filter = fpf")
    truth_stream, filter_stream = trial_streams(cfg.seed, 0)
    truth = simulate_truth(model, cfg.dt, cfg.horizon, truth_stream)
    k_at = int(round(at / cfg.dt))
    if not 0 <= k_at < truth.n_steps:
        raise ConfigError(f"--at {at} lies outside [0, {truth.horizon})")
    captured = {}

    def grab(k, x, gain):
        if k == k_at:
            captured["gain"] = gain
            raise _StopRun

    try:
        run_fpf(model, cfg.gain_method, truth, cfg.n_particles, filter_stream, cfg.form, cfg.bandwidth, grab)
    except _StopRun:
        pass
    gain = captured["gain"]
    if path is not None:
        gain.to_csv(path)
    return gain


class _StopRun(Exception):
    pass
