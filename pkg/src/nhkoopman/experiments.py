"""Study harnesses: reference runs, open-loop error study, Monte-Carlo ECDFs, data efficiency.

All studies are deterministic given their seeds. Monte-Carlo draws are shared
across configurations so per-draw comparisons are paired.
"""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import jn_zeros

from .costs import default_cost
from .dictionaries import Dictionary
from .edmd import (KoopmanSurrogate, LabeledDataset, RegressionOptions, fit_surrogate,
                   predict_batch)
from .mpc import OcpSpec, SolverFailure, SolverOptions, closed_loop
from .postprocess import PostprocessSpec, build_dataset, estimate_trajectory
from .sampler import LINEAR, TRANSFER, RawRecording, simulate_fine, trapezoid
from .vehicles import normalize_angle, simulate

# version of the reference input scripts below; bump when they change
SCRIPT_VERSION = 1

KINEMATIC_X0 = ((-1.0, 1.0), (-1.0, 1.0))
DYNAMIC_X0 = ((0.0, 1.5), (-0.75, 0.75))

# closed-loop studies run with a reduced iteration budget, warm starts carry the rest
STUDY_SOLVER = SolverOptions(max_iter=50)


# ---------------------------------------------------------------------------
# reference trajectories


def _centered(x0, inputs, dt, center):
    path = simulate(x0, inputs, dt)
    mid = 0.5 * (path[:, :2].min(axis=0) + path[:, :2].max(axis=0))
    x0 = x0.copy()
    x0[:2] += np.asarray(center) - mid
    return x0


def infinity_script(dt: float = 0.05, speed: float = 0.2, period: float = 14.0,
                    block: int = 10, center=(0.75, 0.0)):
    """Start state and acceleration inputs tracing a figure eight.

    The turn rate follows ``A sin(2 pi t / T)`` sampled at knots ``block``
    steps apart, so the angular acceleration is piecewise constant over blocks.
    ``A T / (2 pi)`` is the first zero of ``J0``, which closes the continuous
    curve; the block-wise sampling leaves a gap of about 1.5 cm.
    """
    c = jn_zeros(0, 1)[0]
    amp = 2 * np.pi * c / period
    nb = int(round(period / dt)) // block
    knots = amp * np.sin(2 * np.pi * np.arange(nb + 1) * block * dt / period)
    alpha = np.repeat(np.diff(knots) / (block * dt), block)
    ramp = int(round(1.0 / dt))
    a = speed / (ramp * dt)
    inputs = np.vstack([np.tile([a, 0.0], (ramp, 1)),
                        np.column_stack([np.zeros_like(alpha), alpha]),
                        np.tile([-a, 0.0], (ramp, 1))])
    x0 = np.array([0.0, 0.0, np.pi / 2 - c, 0.0, 0.0])
    return _centered(x0, inputs, dt, center), inputs


def square_script(dt: float = 0.05, side: float = 0.6, center=(0.75, 0.0)):
    """Start state and inputs for a square driven with counter-clockwise turns only."""
    blocks = []
    for _ in range(4):
        tr = trapezoid(side, 0.3, 0.3, dt, 2)
        blocks.append(np.column_stack([tr, np.zeros_like(tr)]))
        blocks.append(np.zeros((5, 2)))
        rot = trapezoid(np.pi / 2, 1.0, 1.0, dt, 2)
        blocks.append(np.column_stack([np.zeros_like(rot), rot]))
        blocks.append(np.zeros((5, 2)))
    inputs = np.vstack(blocks)
    x0 = np.zeros(5)
    return _centered(x0, inputs, dt, center), inputs


def _annotate(inputs) -> np.ndarray:
    # accelerations are the inputs, so velocities stay continuous across input
    # changes (kinks only): the whole run is smoothed as a single segment
    return np.array([(0, inputs.shape[0], TRANSFER, LINEAR)], dtype=int)


def _pad_rest(inputs, steps):
    rest = np.zeros((steps, 2))
    return np.vstack([rest, inputs, rest])


def reference_runs(kind: str = "infinity", n: int = 20, noise_pos: float = 0.5e-3,
                   noise_heading: float = np.deg2rad(0.1), seed: int = 0, dt: float = 0.05,
                   fs: float = 240.0) -> list:
    """``n`` recordings of one nominal reference trajectory, each noised independently."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if kind == "infinity":
        x0, inputs = infinity_script(dt)
    elif kind == "square":
        x0, inputs = square_script(dt)
    else:
        raise ValueError("kind must be 'infinity' or 'square'")
    # one second at rest before and after the manoeuvre, as in a real recording
    inputs = _pad_rest(inputs, int(round(1.0 / dt)))
    R = int(round(fs * dt))
    truth = np.vstack([x0[None], simulate_fine(x0, inputs, R, 1.0 / fs)])
    ann = _annotate(inputs)
    rng = np.random.default_rng(seed)
    runs = []
    for i in range(n):
        poses = truth[:, :3].copy()
        if noise_pos > 0:
            poses[:, :2] += rng.normal(0.0, noise_pos, size=(poses.shape[0], 2))
        if noise_heading > 0:
            poses[:, 2] += rng.normal(0.0, noise_heading, size=poses.shape[0])
        poses[:, 2] = normalize_angle(poses[:, 2])
        meta = {"reference": kind, "script_version": SCRIPT_VERSION, "run": i, "seed": seed,
                "noise_pos": noise_pos, "noise_heading": noise_heading}
        runs.append(RawRecording("dynamic", dt, fs, np.zeros((1, 2)), poses, inputs.copy(),
                                 np.full(inputs.shape[0], TRANSFER), ann.copy(), truth.copy(),
                                 meta))
    return runs


# ---------------------------------------------------------------------------
# open-loop study

QUANTITIES = ("position", "orientation", "velocity", "turn_rate")


@dataclass
class OpenLoopReport:
    """Multi-step errors aggregated over runs.

    ``mean[(dictionary, model, quantity)]`` and ``max[...]`` are arrays indexed
    by ``(start index, steps ahead - 1)``. Quantities are position (m),
    orientation (rad) and, for the second-order robot, velocity (m/s) and turn
    rate (rad/s).
    """

    horizon: int
    starts: np.ndarray
    mean: dict
    max: dict
    meta: dict = field(default_factory=dict)

    def keys(self):
        return sorted(self.mean)

    def one_step(self, dictionary: str, model: str, quantity: str = "position",
                 agg: str = "mean") -> np.ndarray:
        return getattr(self, agg)[(dictionary, model, quantity)][:, 0]

    def worst(self, dictionary: str, model: str, quantity: str = "position",
              steps: Optional[int] = None) -> float:
        """Largest error over runs and starts at ``steps`` ahead (default: the horizon)."""
        s = self.horizon if steps is None else steps
        return float(self.max[(dictionary, model, quantity)][:, s - 1].max())

    def write_csv(self, path) -> None:
        """Rows ``dictionary,model,quantity,start,steps,mean,max``."""
        with open(path, "w", newline="") as fh:
            for k, v in self.meta.items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh)
            w.writerow(["dictionary", "model", "quantity", "start", "steps", "mean", "max"])
            for key in self.keys():
                mean, mx = self.mean[key], self.max[key]
                for i, s in enumerate(self.starts):
                    for j in range(self.horizon):
                        w.writerow([*key, int(s), j + 1, repr(float(mean[i, j])),
                                    repr(float(mx[i, j]))])

    def summary(self) -> str:
        lines = [f"open-loop study, horizon {self.horizon} steps, {len(self.starts)} starts"]
        for key in self.keys():
            if key[2] not in ("position", "orientation"):
                continue
            unit = "m" if key[2] == "position" else "deg"
            f = 1.0 if key[2] == "position" else 180 / np.pi
            lines.append(f"  {key[0]:6s} {key[1]:8s} {key[2]:11s} one-step mean "
                         f"{f * self.mean[key][:, 0].mean():.3e} {unit}, max@H "
                         f"{f * self.worst(*key):.3e} {unit}")
        return "\n".join(lines)


def _errors(pred, truth):
    out = {"position": np.linalg.norm(pred[..., :2] - truth[..., :2], axis=-1),
           "orientation": np.abs(normalize_angle(pred[..., 2] - truth[..., 2]))}
    if pred.shape[-1] == 5:
        out["velocity"] = np.abs(pred[..., 3] - truth[..., 3])
        out["turn_rate"] = np.abs(pred[..., 4] - truth[..., 4])
    return out


def _nominal_batch(x0s, inputs, dt):
    S, H, _ = inputs.shape
    out = np.empty((S, H + 1, x0s.shape[1]))
    for i in range(S):
        out[i] = simulate(x0s[i], inputs[i], dt)
    return out


def _full_window_starts(run, starts, horizon, window):
    R = run.ratio
    half = window // 2 if run.kind == "dynamic" else 0
    last = run.poses.shape[0] - 1
    ok = np.zeros(starts.size, dtype=bool)
    for i, (s, e, _, _) in enumerate(run.annotations):
        hi = last if i == len(run.annotations) - 1 else e * R - 1
        lo_j, hi_j = starts * R, (starts + horizon) * R
        ok |= (lo_j - half >= s * R) & (hi_j + half <= hi)
    return ok


def open_loop_study(runs: Sequence[RawRecording], surrogates: dict, horizon: int = 20,
                    window: int = 40, models: Sequence[str] = ("proj", "noproj", "nominal"),
                    stride: int = 1, full_window: bool = True) -> OpenLoopReport:
    """Compare multi-step predictions with the recorded (post-processed) truth.

    ``surrogates`` maps a label (usually the dictionary name) to a fitted
    surrogate; the nominal model is reported under the label ``"nominal"``.
    Predictions start at every ``stride``-th control instant with a full
    ``horizon`` of recorded inputs ahead. With ``full_window`` the start and
    every compared instant must lie in one annotated segment with a complete
    averaging window, so that truncated edge estimates do not pose as truth.
    """
    if not runs:
        raise ValueError("need at least one run")
    dt = runs[0].dt
    kind = runs[0].kind
    n = 3 if kind == "kinematic" else 5
    for name, sur in surrogates.items():
        if sur.dictionary.arity != n:
            raise ValueError(f"surrogate {name!r} lifts {sur.dictionary.arity}-dim states, "
                             f"runs carry {n}-dim states")
        if abs(sur.dt - dt) > 1e-12:
            raise ValueError(f"surrogate {name!r} has dt={sur.dt}, runs dt={dt}")
    pp = PostprocessSpec(window=window, dt=dt, fs=runs[0].fs)
    K = runs[0].inputs.shape[0]
    starts = np.arange(0, K - horizon + 1, stride)
    if full_window:
        starts = starts[_full_window_starts(runs[0], starts, horizon, window)]
    if starts.size == 0:
        raise ValueError("runs are shorter than the horizon")
    acc_sum, acc_max = {}, {}
    for run in runs:
        est = estimate_trajectory(run, pp, kind)[::run.ratio]
        inputs = np.stack([run.inputs[s:s + horizon] for s in starts])
        truth = np.stack([est[s + 1:s + horizon + 1] for s in starts])
        x0s = est[starts]
        preds = {}
        for name, sur in surrogates.items():
            for model in models:
                if model == "nominal":
                    continue
                p = predict_batch(sur, x0s, inputs, reproject_each_step=(model == "proj"))
                preds[(name, model)] = p[:, 1:]
        if "nominal" in models:
            preds[("nominal", "nominal")] = _nominal_batch(x0s, inputs, dt)[:, 1:]
        for key, p in preds.items():
            for q, e in _errors(p, truth).items():
                k3 = (*key, q)
                if k3 not in acc_sum:
                    acc_sum[k3] = np.zeros_like(e)
                    acc_max[k3] = np.zeros_like(e)
                acc_sum[k3] += e
                acc_max[k3] = np.maximum(acc_max[k3], e)
    mean = {k: v / len(runs) for k, v in acc_sum.items()}
    meta = {"runs": len(runs), "window": window, "dt": dt,
            "reference": runs[0].meta.get("reference", "")}
    return OpenLoopReport(horizon, starts, mean, acc_max, meta)


def open_loop_sweep(training: RawRecording, runs: Sequence[RawRecording],
                    dictionaries: Sequence[Dictionary], windows: Sequence[int] = (40,),
                    horizon: int = 20, opts: RegressionOptions = RegressionOptions(),
                    drift: Optional[bool] = None, **kw) -> dict:
    """Fit every dictionary at every window on ``training`` and study ``runs``.

    The reference runs are post-processed with the same window as the
    training data. Returns ``{window: OpenLoopReport}`` keyed by dictionary name.
    """
    drift = (training.kind == "dynamic") if drift is None else drift
    out = {}
    for w in windows:
        data = build_dataset(training, PostprocessSpec(window=w, dt=training.dt, fs=training.fs))
        surs = {d.name: fit_surrogate(d, data, opts, drift=drift) for d in dictionaries}
        out[w] = open_loop_study(runs, surs, horizon=horizon, window=w, **kw)
    return out


# ---------------------------------------------------------------------------
# Monte-Carlo closed loop


@dataclass
class EcdfReport:
    """Empirical distribution of ``|x2|`` at the evaluation time for one configuration.

    ``samples`` keeps draw order (failures are ``inf``); ``values`` is sorted.
    """

    label: str
    samples: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.size == 0:
            raise ValueError("an ECDF needs at least one sample")

    @property
    def values(self) -> np.ndarray:
        return np.sort(self.samples)

    @property
    def n(self) -> int:
        return self.samples.size

    @property
    def failures(self) -> int:
        return int(np.isinf(self.samples).sum())

    def cdf(self, x) -> np.ndarray:
        """Right-continuous ECDF: fraction of samples ``<= x``."""
        return np.searchsorted(self.values, np.asarray(x, dtype=float), side="right") / self.n

    def fraction_below(self, threshold: float) -> float:
        """Fraction of samples strictly below ``threshold``."""
        return float(np.mean(self.samples < threshold))

    def quantile(self, p: float) -> float:
        """Smallest sample ``x`` with ``cdf(x) >= p``."""
        if not 0 < p <= 1:
            raise ValueError("p must lie in (0, 1]")
        k = int(np.ceil(p * self.n)) - 1
        return float(self.values[max(k, 0)])

    def steps(self):
        """Jump points and ECDF levels (for plotting or checks)."""
        v = self.values
        return v, np.arange(1, self.n + 1) / self.n

    def check(self) -> bool:
        """Nondecreasing, within [0, 1], reaching 1 at the largest sample."""
        x, y = self.steps()
        levels = self.cdf(x)
        return bool(np.all(np.diff(levels) >= 0) and np.all((levels >= 0) & (levels <= 1))
                    and levels[-1] == 1.0 and np.all(np.diff(y) > 0))

    def ks_distance(self, other: "EcdfReport") -> float:
        """Two-sample Kolmogorov-Smirnov statistic (``inf`` samples included)."""
        pts = np.concatenate([self.values, other.values])
        pts = pts[np.isfinite(pts)]
        if pts.size == 0:
            return 0.0
        return float(np.max(np.abs(self.cdf(pts) - other.cdf(pts))))

    def summary(self, threshold: float = 2e-3,
                quantiles: Sequence[float] = (0.25, 0.5, 0.75, 0.9)) -> str:
        qs = ", ".join(f"q{int(round(100 * p))}={self.quantile(p):.3e}" for p in quantiles)
        return (f"{self.label}: n={self.n}, failures={self.failures}, "
                f"P(|x2|<{threshold:g})={self.fraction_below(threshold):.2f}, {qs}")


def write_ecdf_csv(reports: Sequence[EcdfReport], path, header: Optional[dict] = None) -> None:
    """Rows ``label,draw,abs_x2,ecdf`` (``ecdf`` evaluated at the row's own sample)."""
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh)
        w.writerow(["label", "draw", "abs_x2", "ecdf"])
        for rep in reports:
            levels = rep.cdf(rep.samples)
            for i, (s, lv) in enumerate(zip(rep.samples, levels)):
                w.writerow([rep.label, i, repr(float(s)), repr(float(lv))])


def draw_initial_states(model_kind: str, n: int, seed: int, box=None) -> np.ndarray:
    """Uniform draws from the admissible pose box, zero velocities for the dynamic robot."""
    if n < 1:
        raise ValueError("n must be >= 1")
    box = box or (KINEMATIC_X0 if model_kind == "kinematic" else DYNAMIC_X0)
    rng = np.random.default_rng(seed)
    (x1l, x1h), (x2l, x2h) = box
    X = np.column_stack([rng.uniform(x1l, x1h, n), rng.uniform(x2l, x2h, n),
                         normalize_angle(rng.uniform(-np.pi, np.pi, n))])
    if model_kind == "dynamic":
        X = np.column_stack([X, np.zeros((n, 2))])
    return X


@dataclass(frozen=True)
class StudyConfig:
    """One closed-loop configuration of a Monte-Carlo study."""

    cost: str = "me"
    model: str = "proj"
    weights: Optional[dict] = None

    @property
    def label(self) -> str:
        return f"{self.cost}-{self.model}"


def _study_defaults(model_kind):
    return (60, 0.1, 10.0) if model_kind == "kinematic" else (50, 0.05, 20.0)


def _one_run(args):
    spec, x0, duration = args
    try:
        res = closed_loop(spec, x0, duration)
    except SolverFailure:
        return np.inf
    x2 = abs(res.states[-1, 1])
    return x2 if np.isfinite(x2) else np.inf


def _map(fn, items, workers):
    if workers is None:
        workers = 1
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def monte_carlo_closed_loop(model_kind: str, surrogate: Optional[KoopmanSurrogate],
                            configs: Sequence[StudyConfig], n: int = 100,
                            eval_time: Optional[float] = None, seed: int = 0,
                            horizon: Optional[int] = None, dt: Optional[float] = None,
                            solver: SolverOptions = STUDY_SOLVER, workers: int = 1,
                            initial_states=None, dictionary: Optional[Dictionary] = None
                            ) -> list:
    """ECDFs of ``|x2(eval_time)|`` per configuration from shared initial draws.

    Defaults follow the robot: kinematic H=60, dt=0.1 s, 10 s; dynamic H=50,
    dt=0.05 s, 20 s. Solver failures are kept as ``inf`` samples.
    """
    H0, dt0, T0 = _study_defaults(model_kind)
    horizon = horizon or H0
    dt = dt or (surrogate.dt if surrogate is not None else dt0)
    eval_time = eval_time or T0
    n_state = 3 if model_kind == "kinematic" else 5
    X0 = (np.asarray(initial_states, dtype=float) if initial_states is not None
          else draw_initial_states(model_kind, n, seed))
    dic = dictionary or (surrogate.dictionary if surrogate is not None else None)
    reports = []
    for cfg in configs:
        cost = default_cost(cfg.cost, n_state, dic, cfg.weights)
        spec = OcpSpec(horizon=horizon, dt=dt, cost=cost, model=cfg.model,
                       surrogate=surrogate if cfg.model != "nominal" else None,
                       solver=solver, seed=seed)
        vals = _map(_one_run, [(spec, x0, eval_time) for x0 in X0], workers)
        meta = {"model_kind": model_kind, "horizon": horizon, "dt": dt,
                "eval_time": eval_time, "seed": seed, "cost": cost.describe(),
                "max_iter": solver.max_iter}
        reports.append(EcdfReport(cfg.label, np.array(vals), meta))
    return reports


def data_efficiency_sweep(model_kind: str, dataset: LabeledDataset, dictionary: Dictionary,
                          sizes: Sequence[Optional[int]], n: int = 100, seed: int = 0,
                          config: StudyConfig = StudyConfig(), spread: bool = True,
                          drift: Optional[bool] = None,
                          opts: RegressionOptions = RegressionOptions(), **mc_kw) -> dict:
    """Refit on ``d`` pairs per basis for each ``d`` in ``sizes`` and rerun the study.

    ``None`` in ``sizes`` stands for the full dataset. Returns ``{d: EcdfReport}``.
    """
    drift = (model_kind == "dynamic") if drift is None else drift
    out = {}
    for d in sizes:
        sub = dataset.truncate(d, spread=spread)
        sur = fit_surrogate(dictionary, sub, opts, drift=drift)
        rep = monte_carlo_closed_loop(model_kind, sur, [config], n=n, seed=seed, **mc_kw)[0]
        rep.label = f"{config.label}-d{d if d is not None else 'full'}"
        rep.meta["pairs_per_basis"] = d if d is not None else "full"
        out[d] = rep
    return out
