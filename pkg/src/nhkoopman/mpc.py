"""Receding-horizon control over a Koopman surrogate or the nominal model.

The optimal control problem is solved in single-shooting form: the ``H + 1``
inputs are the only decision variables, predicted states come from rolling the
chosen prediction model forward, and the box constraint is handled by
projection. Stage costs are summed over ``k = 0 .. H`` inclusive.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _ocp
from .costs import CostSpec, to_goal_frame
from .dictionaries import Dictionary
from .edmd import KoopmanSurrogate
from .vehicles import (ACCEL_BOX, GL_NODES, GL_WEIGHTS, VELOCITY_BOX, InputBox,
                       normalize_angle, zoh_step)

PREDICTION_MODELS = ("proj", "noproj", "nominal")


def _f(x) -> str:
    return repr(float(x))


class SolverFailure(RuntimeError):
    """Rollout produced a non-finite cost or a degenerate reprojection."""

    def __init__(self, step: int, where: str = "prediction"):
        self.step = step
        super().__init__(f"non-finite/degenerate {where} at step {step}")


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 300
    tol: float = 1e-8
    armijo: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 40
    cold_starts: int = 4


@dataclass(frozen=True, eq=False)
class OcpSpec:
    """Horizon, sampling interval, input box, cost and prediction model.

    ``model`` is ``"proj"`` (surrogate, reprojection every step), ``"noproj"``
    (surrogate propagated in lifted space) or ``"nominal"`` (exact ZOH map).
    """

    horizon: int
    dt: float
    cost: CostSpec
    model: str = "proj"
    surrogate: Optional[KoopmanSurrogate] = None
    box: Optional[InputBox] = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    goal: Optional[np.ndarray] = None
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.model not in PREDICTION_MODELS:
            raise ValueError(f"model must be one of {PREDICTION_MODELS}")
        if self.box is None:
            object.__setattr__(self, "box", VELOCITY_BOX if self.cost.n == 3 else ACCEL_BOX)
        if self.model != "nominal":
            if self.surrogate is None:
                raise ValueError("surrogate prediction requires a fitted surrogate")
            if not np.isclose(self.surrogate.dt, self.dt, rtol=0, atol=1e-12):
                raise ValueError(f"OCP dt {self.dt} differs from surrogate dt {self.surrogate.dt}")
            if self.surrogate.dictionary.arity != self.cost.n:
                raise ValueError("surrogate state dimension does not match the cost")
            if not self.surrogate.dictionary.compiled:
                raise ValueError("MPC needs one of the shipped dictionaries")
        if self.cost.kind == "ds" and self.cost.dictionary is None:
            raise ValueError("ds cost needs a dictionary")

    @property
    def n(self) -> int:
        return self.cost.n

    @property
    def dictionary(self) -> Optional[Dictionary]:
        if self.surrogate is not None:
            return self.surrogate.dictionary
        return self.cost.dictionary

    def label(self) -> str:
        return f"{self.cost.kind}-{self.model}"


@dataclass
class OcpSolution:
    inputs: np.ndarray
    states: np.ndarray
    value: float
    iterations: int
    converged: bool


def _kernel_args(spec: OcpSpec):
    model = PREDICTION_MODELS.index(spec.model)
    dic = spec.dictionary
    if dic is not None:
        did, rule, imap = dic.kernel_id, dic.rule, dic.index_array
        ci, si = dic.cos_idx, dic.sin_idx
    else:
        did, rule, imap, ci, si = -1, 0, np.arange(spec.n, dtype=np.int64), -1, -1
    if spec.surrogate is not None:
        K0, G = spec.surrogate.K[0], np.ascontiguousarray(spec.surrogate.gains)
    else:
        M = dic.size if dic is not None else 1
        K0, G = np.eye(M), np.zeros((2, M, M))
    c = spec.cost
    return (model, did, rule, imap, ci, si, np.ascontiguousarray(K0), G, float(spec.dt),
            GL_NODES, GL_WEIGHTS, c.kind_id, c.q, c.q_exp, c.r, c.r_exp, c.Q, c.R,
            np.ascontiguousarray(c.Q_psi), c.psi_d)


def _frame(spec: OcpSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.n,) or not np.all(np.isfinite(x)):
        raise ValueError(f"state must be {spec.n} finite numbers")
    if spec.goal is not None:
        x = to_goal_frame(x, spec.goal)
    x = x.copy()
    x[2] = normalize_angle(x[2])
    return x


def evaluate_ocp(spec: OcpSpec, x_now, inputs, gradient: bool = False):
    """Objective (and optionally its gradient) of an input sequence, no optimisation."""
    x = _frame(spec, x_now)
    U = np.ascontiguousarray(np.asarray(inputs, dtype=float).reshape(spec.horizon + 1, 2))
    grad = np.zeros_like(U)
    X = np.zeros((spec.horizon + 1, spec.n))
    val, fail = _ocp.objective(*_kernel_args(spec), x, U, gradient, grad, X)
    if fail >= 0:
        raise SolverFailure(fail)
    return (val, grad) if gradient else val


def solve_ocp(spec: OcpSpec, x_now, warm_start=None) -> OcpSolution:
    """Solve the finite-horizon problem from ``x_now``.

    Without a warm start the zero sequence and ``cold_starts`` seeded random
    in-box sequences are each optimised and the best result is kept.
    """
    x = _frame(spec, x_now)
    H1 = spec.horizon + 1
    lo, hi = spec.box.lo, spec.box.hi
    if warm_start is None:
        rng = np.random.default_rng(spec.seed)
        starts = [np.zeros((H1, 2))]
        starts += [rng.uniform(0.5 * lo, 0.5 * hi, size=(H1, 2))
                   for _ in range(spec.solver.cold_starts)]
    else:
        U0 = np.asarray(warm_start, dtype=float).reshape(H1, 2)
        if not spec.box.contains(U0.min(axis=0), 1e-12) or not spec.box.contains(U0.max(axis=0), 1e-12):
            raise ValueError("warm start leaves the input box")
        starts = [U0]
    args = _kernel_args(spec)
    so = spec.solver
    best = None
    last_fail = -1
    for U0 in starts:
        U, val, its, conv, fail, X = _ocp.solve(
            *args, x, np.ascontiguousarray(U0), lo, hi, so.max_iter, so.tol, so.armijo,
            so.shrink, so.max_backtracks)
        if fail >= 0:
            last_fail = fail
            continue
        if best is None or val < best.value:
            best = OcpSolution(U, X, float(val), int(its), bool(conv))
    if best is None:
        raise SolverFailure(last_fail)
    return best


@dataclass
class ClosedLoopResult:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    values: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    label: str = ""

    def write_csv(self, path, header: Optional[dict] = None) -> None:
        """``t,x1,x2,theta[,v,omega],u1,u2,value,iters,converged`` per control step."""
        n = self.states.shape[1]
        names = ["x1", "x2", "theta", "v", "omega"][:n]
        with open(path, "w", newline="") as fh:
            for k, v in (header or {}).items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh)
            w.writerow(["t", *names, "u1", "u2", "value", "iters", "converged"])
            N = self.inputs.shape[0]
            for k in range(self.states.shape[0]):
                if k < N:
                    tail = [*map(_f, self.inputs[k]), _f(self.values[k]),
                            int(self.iterations[k]), int(self.converged[k])]
                else:
                    tail = ["", "", "", "", ""]
                w.writerow([_f(self.times[k]), *map(_f, self.states[k]), *tail])


def closed_loop(spec: OcpSpec, x0, duration: float, plant=None) -> ClosedLoopResult:
    """Run the receding-horizon loop against the exact ZOH plant.

    ``plant`` may replace the nominal step map (signature ``(x, u, dt) -> x+``).
    Solver failures are raised as :class:`SolverFailure` with the control step.
    """
    steps = duration / spec.dt
    N = int(round(steps))
    if abs(steps - N) > 1e-9:
        raise ValueError("duration must be a multiple of dt")
    step = plant or zoh_step
    x = np.asarray(x0, dtype=float).copy()
    states = [x.copy()]
    inputs, values, iters, conv = [], [], [], []
    warm = None
    for k in range(N):
        try:
            sol = solve_ocp(spec, x, warm)
        except SolverFailure as exc:
            raise SolverFailure(k, "closed loop solve") from exc
        u = sol.inputs[0]
        x = step(x, u, spec.dt)
        x[2] = normalize_angle(x[2])
        states.append(x.copy())
        inputs.append(u.copy())
        values.append(sol.value)
        iters.append(sol.iterations)
        conv.append(sol.converged)
        warm = np.vstack([sol.inputs[1:], np.zeros((1, 2))])
    times = np.arange(N + 1) * spec.dt
    return ClosedLoopResult(times, np.array(states), np.array(inputs).reshape(-1, 2),
                            np.array(values), np.array(iters), np.array(conv, dtype=bool),
                            label=spec.label())
