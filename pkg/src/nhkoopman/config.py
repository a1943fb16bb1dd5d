"""Run configuration: INI sections, ``--set section.key=value`` overrides, validation.

Every pipeline parameter has a key; the config is validated as a whole before
any stage runs, so a bad OCP setting fails a ``sample`` call as well.
"""
from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .costs import KINDS, CostSpec, default_cost
from .dictionaries import get_dictionary, registry
from .edmd import RegressionOptions
from .mpc import PREDICTION_MODELS, SolverOptions
from .postprocess import PostprocessSpec
from .sampler import SamplingSpec

OUTPUT_ENV = "NHKOOPMAN_OUT"


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "run": {"model_kind": "dynamic", "seed": "0", "output": "", "jobs": "1"},
    "sampling": {"segments_per_basis": "", "min_steps": "10", "max_steps": "100",
                 "noise_pos": "0.0005", "noise_heading_deg": "0.1", "dt": "", "fs": "240"},
    "postprocess": {"window": ""},
    "regression": {"ridge": "", "per_basis": "", "spread": "true", "drift": ""},
    "model": {"dictionary": ""},
    "ocp": {"horizon": "", "cost": "me", "model": "proj", "weights": "", "max_iter": "",
            "x0": "", "duration": ""},
    "experiments": {"draws": "100", "configs": "me-proj,ce-proj,ds-proj,me-noproj",
                    "sizes": "10,100,full", "reference": "infinity", "runs": "20",
                    "lookahead": "20", "windows": "40", "dictionaries": "", "full_scale": "false"},
}

# per robot: dt, window, dictionary, horizon, duration, segments per basis
ROBOT_DEFAULTS = {
    "kinematic": {"dt": 0.1, "window": 1, "dictionary": "D5t", "horizon": 60, "duration": 10.0,
                  "segments_per_basis": 5, "drift": False, "x0": (-1.0, -0.5, -np.pi / 6)},
    "dynamic": {"dt": 0.05, "window": 40, "dictionary": "D8Eul", "horizon": 50,
                "duration": 20.0, "segments_per_basis": 100, "drift": True,
                "x0": (-1.1, -0.53, np.deg2rad(-42.68), 0.0, 0.0)},
}


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def parse_weights(text: str) -> dict:
    """``"q=1,10,1,1,1;r=0.01,0.01"`` -> ``{"q": (...), "r": (...)}``.

    Diagonal matrices for the quadratic costs are given as ``Q=...``/``R=...``.
    """
    out = {}
    if not text.strip():
        return out
    for part in text.split(";"):
        if not part.strip():
            continue
        key, sep, val = part.partition("=")
        key = key.strip()
        if not sep or key not in ("q", "r", "q_exp", "r_exp", "Q", "R", "Q_psi"):
            raise ConfigError(f"bad weight entry {part!r}")
        try:
            vals = tuple(float(x) for x in val.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad weight values in {part!r}") from exc
        out[key] = np.diag(vals) if key in ("Q", "R", "Q_psi") else vals
    return out


@dataclass
class RunConfig:
    """Validated, typed view of the configuration."""

    raw: dict
    model_kind: str
    seed: int
    output: str
    jobs: int
    sampling: SamplingSpec
    postprocess: PostprocessSpec
    regression: RegressionOptions
    per_basis: Optional[int]
    spread: bool
    drift: bool
    dictionary: str
    horizon: int
    cost: str
    model: str
    weights: dict
    solver: SolverOptions
    x0: np.ndarray
    duration: float
    draws: int
    configs: list
    sizes: list
    reference: str
    runs: int
    lookahead: int
    windows: list
    dictionaries: list

    @property
    def dt(self) -> float:
        return self.sampling.dt

    def digest(self) -> str:
        """Hash of every key that can change a result (output path and jobs excluded)."""
        skip = {("run", "output"), ("run", "jobs")}
        text = "\n".join(f"{s}.{k}={v}" for s in sorted(self.raw) for k, v in
                         sorted(self.raw[s].items()) if (s, k) not in skip)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def cost_spec(self, kind: Optional[str] = None) -> CostSpec:
        n = 3 if self.model_kind == "kinematic" else 5
        return default_cost(kind or self.cost, n, get_dictionary(self.dictionary), self.weights)

    def provenance(self, **extra) -> dict:
        from . import __version__
        head = {"tool": f"nhkoopman {__version__}", "config": self.digest(), "seed": self.seed}
        head.update(extra)
        return head


def load_config(path: Optional[str] = None, overrides=()) -> RunConfig:
    """Read defaults, then the file (if any), then ``section.key=value`` overrides."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file {path} not found")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
    for item in overrides:
        key, sep, val = item.partition("=")
        sec, dot, opt = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        if sec not in DEFAULTS or opt not in DEFAULTS[sec]:
            raise ConfigError(f"unknown config key {key.strip()!r}")
        cp.set(sec, opt, val.strip())
    for sec in cp.sections():
        if sec not in DEFAULTS:
            raise ConfigError(f"unknown config section [{sec}]")
        for opt in cp[sec]:
            if opt not in DEFAULTS[sec]:
                raise ConfigError(f"unknown config key {sec}.{opt}")
    raw = {s: dict(cp[s]) for s in cp.sections()}
    return validate(raw)


def _get(raw, sec, key, conv, default=None):
    text = raw[sec][key].strip()
    if text == "":
        return default
    try:
        return conv(text)
    except ValueError as exc:
        raise ConfigError(f"{sec}.{key}: cannot parse {text!r}") from exc


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def validate(raw: dict) -> RunConfig:
    """Check every section and the cross-field contracts; raise :class:`ConfigError`."""
    kind = raw["run"]["model_kind"].strip()
    if kind not in ROBOT_DEFAULTS:
        raise ConfigError("run.model_kind must be 'kinematic' or 'dynamic'")
    rd = ROBOT_DEFAULTS[kind]
    n = 3 if kind == "kinematic" else 5
    seed = _get(raw, "run", "seed", int, 0)
    jobs = _get(raw, "run", "jobs", int, 1)
    if jobs < 1:
        raise ConfigError("run.jobs must be >= 1")
    output = raw["run"]["output"].strip() or os.environ.get(OUTPUT_ENV, "") or "."
    dt = _get(raw, "sampling", "dt", float, rd["dt"])
    fs = _get(raw, "sampling", "fs", float, 240.0)
    try:
        factory = SamplingSpec.kinematic if kind == "kinematic" else SamplingSpec.dynamic
        sampling = factory(
            dt=dt, fs=fs, seed=seed,
            segments_per_basis=_get(raw, "sampling", "segments_per_basis", int,
                                    rd["segments_per_basis"]),
            min_steps=_get(raw, "sampling", "min_steps", int, 10),
            max_steps=_get(raw, "sampling", "max_steps", int, 100),
            noise_pos=_get(raw, "sampling", "noise_pos", float, 0.5e-3),
            noise_heading=np.deg2rad(_get(raw, "sampling", "noise_heading_deg", float, 0.1)))
        pp = PostprocessSpec(window=_get(raw, "postprocess", "window", int, rd["window"]),
                             dt=dt, fs=fs)
        reg = RegressionOptions(ridge=_get(raw, "regression", "ridge", float))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    if sampling.noise_pos < 0 or sampling.noise_heading < 0:
        raise ConfigError("sensor noise must be nonnegative")
    if sampling.segments_per_basis < 1:
        raise ConfigError("sampling.segments_per_basis must be >= 1")
    per_basis = _get(raw, "regression", "per_basis", int)
    if per_basis is not None and per_basis < 1:
        raise ConfigError("regression.per_basis must be >= 1")
    spread = _get(raw, "regression", "spread", _bool, True)
    drift = _get(raw, "regression", "drift", _bool, rd["drift"])
    dic_name = raw["model"]["dictionary"].strip() or rd["dictionary"]
    names = [d.name for d in registry()]
    if dic_name not in names:
        raise ConfigError(f"model.dictionary must be one of {names}")
    if get_dictionary(dic_name).arity != n:
        raise ConfigError(f"dictionary {dic_name} does not fit the {kind} robot")
    horizon = _get(raw, "ocp", "horizon", int, rd["horizon"])
    if horizon < 1:
        raise ConfigError("ocp.horizon must be >= 1")
    cost = raw["ocp"]["cost"].strip()
    if cost not in KINDS:
        raise ConfigError(f"ocp.cost must be one of {KINDS}")
    model = raw["ocp"]["model"].strip()
    if model not in PREDICTION_MODELS:
        raise ConfigError(f"ocp.model must be one of {PREDICTION_MODELS}")
    weights = parse_weights(raw["ocp"]["weights"])
    try:
        default_cost(cost, n, get_dictionary(dic_name), weights)
    except ValueError as exc:
        raise ConfigError(f"ocp.weights: {exc}") from exc
    max_iter = _get(raw, "ocp", "max_iter", int)
    solver = SolverOptions() if max_iter is None else SolverOptions(max_iter=max_iter)
    if solver.max_iter < 1:
        raise ConfigError("ocp.max_iter must be >= 1")
    x0 = np.array(_get(raw, "ocp", "x0", _floats, rd["x0"]), dtype=float)
    if x0.shape != (n,) or not np.all(np.isfinite(x0)):
        raise ConfigError(f"ocp.x0 needs {n} finite numbers")
    duration = _get(raw, "ocp", "duration", float, rd["duration"])
    steps = duration / dt
    if duration <= 0 or abs(steps - round(steps)) > 1e-9:
        raise ConfigError("ocp.duration must be a positive multiple of sampling.dt")
    full = _get(raw, "experiments", "full_scale", _bool, False)
    draws = 1000 if full else _get(raw, "experiments", "draws", int, 100)
    if draws < 1:
        raise ConfigError("experiments.draws must be >= 1")
    configs = []
    for c in raw["experiments"]["configs"].split(","):
        c = c.strip()
        ck, _, cm = c.partition("-")
        if ck not in KINDS or cm not in PREDICTION_MODELS:
            raise ConfigError(f"bad experiment configuration {c!r} (use cost-model, e.g. me-proj)")
        configs.append((ck, cm))
    sizes = []
    for s in raw["experiments"]["sizes"].split(","):
        s = s.strip()
        if s == "full":
            sizes.append(None)
        else:
            try:
                d = int(s)
            except ValueError as exc:
                raise ConfigError(f"bad sweep size {s!r}") from exc
            if d < 1:
                raise ConfigError("sweep sizes must be >= 1")
            sizes.append(d)
    reference = raw["experiments"]["reference"].strip()
    if reference not in ("infinity", "square"):
        raise ConfigError("experiments.reference must be 'infinity' or 'square'")
    runs = _get(raw, "experiments", "runs", int, 20)
    lookahead = _get(raw, "experiments", "lookahead", int, 20)
    if runs < 1 or lookahead < 1:
        raise ConfigError("experiments.runs and experiments.lookahead must be >= 1")
    try:
        windows = [int(w) for w in raw["experiments"]["windows"].split(",") if w.strip()]
    except ValueError as exc:
        raise ConfigError("experiments.windows must be integers") from exc
    if not windows or min(windows) < 1:
        raise ConfigError("experiments.windows must be >= 1")
    dics = [d.strip() for d in raw["experiments"]["dictionaries"].split(",") if d.strip()]
    dics = dics or [dic_name]
    for d in dics:
        if d not in names or get_dictionary(d).arity != n:
            raise ConfigError(f"experiment dictionary {d!r} does not fit the {kind} robot")
    return RunConfig(raw, kind, seed, output, jobs, sampling, pp, reg, per_basis, spread, drift,
                     dic_name, horizon, cost, model, weights, solver, x0, duration, draws,
                     configs, sizes, reference, runs, lookahead, windows, dics)


def write_config(cfg: RunConfig, path) -> None:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_dict(cfg.raw)
    with open(path, "w") as fh:
        cp.write(fh)
