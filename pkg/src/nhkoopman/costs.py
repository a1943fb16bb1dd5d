"""Stage costs for setpoint stabilization at the origin.

``me``  mixed exponents: ``q1 x1^4 + q2 x2^2 + q3 theta^4 (+ q4 v^4 + q5 omega^4) + r1 u1^4 + r2 u2^4``
``ce``  quadratic in the state: ``x' Q x + u' R u``
``ds``  quadratic in the lifted deviation: ``(psi - psi_d)' Q_psi (psi - psi_d) + u' R u``

Other setpoints are reached by expressing the state in the goal frame first,
see :func:`to_goal_frame`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .dictionaries import Dictionary

KINDS = ("me", "ce", "ds")
ME, CE, DS = 0, 1, 2

ME_STATE_EXPONENTS = {3: (4.0, 2.0, 4.0), 5: (4.0, 2.0, 4.0, 4.0, 4.0)}
ME_INPUT_EXPONENTS = (4.0, 4.0)

# experiment defaults that differ from the bare CostSpec (all q = 1, r = 0.01)
EXPERIMENT_WEIGHTS = {("me", 5): {"q": (1.0, 10.0, 1.0, 1.0, 1.0)}}


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Stage-cost selection and weights.

    ``q``/``r`` and the exponents are used by ``me``; ``Q``/``R`` by ``ce``;
    ``Q_psi``/``R`` and ``psi_d`` by ``ds``.
    """

    kind: str
    n: int
    q: np.ndarray = None
    r: np.ndarray = None
    q_exp: np.ndarray = None
    r_exp: np.ndarray = None
    Q: np.ndarray = None
    R: np.ndarray = None
    Q_psi: np.ndarray = None
    psi_d: np.ndarray = None
    dictionary: Optional[Dictionary] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"cost kind must be one of {KINDS}")
        if self.n not in ME_STATE_EXPONENTS:
            raise ValueError("state dimension must be 3 or 5")
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        n = self.n
        set_("q", np.ones(n) if self.q is None else np.asarray(self.q, float))
        set_("r", np.full(2, 0.01) if self.r is None else np.asarray(self.r, float))
        set_("q_exp", np.array(ME_STATE_EXPONENTS[n]) if self.q_exp is None
             else np.asarray(self.q_exp, float))
        set_("r_exp", np.array(ME_INPUT_EXPONENTS) if self.r_exp is None
             else np.asarray(self.r_exp, float))
        set_("Q", np.eye(n) if self.Q is None else np.asarray(self.Q, float))
        set_("R", 0.01 * np.eye(2) if self.R is None else np.asarray(self.R, float))
        if self.q.shape != (n,) or self.q_exp.shape != (n,):
            raise ValueError(f"state weights need {n} entries")
        if self.r.shape != (2,) or self.r_exp.shape != (2,):
            raise ValueError("input weights need 2 entries")
        if np.any(self.q <= 0) or np.any(self.r <= 0):
            raise ValueError("scalar weights must be positive")
        _check_spd(self.Q, "Q")
        _check_spd(self.R, "R")
        if self.kind == "ds":
            if self.dictionary is None:
                raise ValueError("the ds cost needs a dictionary")
            M = self.dictionary.size
            if self.Q_psi is None:
                Qp = np.eye(M)
                Qp[0, 0] = 0.0
                set_("Q_psi", Qp)
            else:
                set_("Q_psi", np.asarray(self.Q_psi, float))
            if self.Q_psi.shape != (M, M) or not np.allclose(self.Q_psi, self.Q_psi.T):
                raise ValueError("Q_psi must be symmetric and match the dictionary size")
            if np.linalg.eigvalsh(self.Q_psi).min() < -1e-12:
                raise ValueError("Q_psi must be positive semidefinite")
            if self.psi_d is None:
                set_("psi_d", self.dictionary.lift(np.zeros(self.dictionary.arity)))
        if self.Q_psi is None:
            set_("Q_psi", np.zeros((1, 1)))
        if self.psi_d is None:
            set_("psi_d", np.zeros(1))

    @property
    def kind_id(self) -> int:
        return KINDS.index(self.kind)

    def describe(self) -> str:
        if self.kind == "me":
            return f"me q={self.q.tolist()} r={self.r.tolist()}"
        if self.kind == "ce":
            return f"ce Q=diag{np.diag(self.Q).tolist()} R=diag{np.diag(self.R).tolist()}"
        return f"ds Q_psi=diag{np.diag(self.Q_psi).tolist()} R=diag{np.diag(self.R).tolist()}"


def _check_spd(A, name):
    if A.ndim != 2 or A.shape[0] != A.shape[1] or not np.allclose(A, A.T):
        raise ValueError(f"{name} must be a symmetric square matrix")
    if np.linalg.eigvalsh(A).min() <= 0:
        raise ValueError(f"{name} must be positive definite")


def default_cost(kind: str, n: int, dictionary: Optional[Dictionary] = None,
                 weights: Optional[dict] = None) -> CostSpec:
    """Experiment defaults, overridden entry-wise by ``weights``.

    Unit state weights and input weights 0.01, except the second-order robot's
    mixed-exponents cost, which weights ``x2`` by 10 (see ``EXPERIMENT_WEIGHTS``).
    """
    kw = dict(EXPERIMENT_WEIGHTS.get((kind, n), {}))
    kw.update(weights or {})
    return CostSpec(kind=kind, n=n, dictionary=dictionary, **kw)


def to_goal_frame(state, goal) -> np.ndarray:
    """Express ``state`` relative to ``goal`` (rotation into the goal heading)."""
    s = np.asarray(state, dtype=float).copy()
    g = np.asarray(goal, dtype=float)
    c, sn = np.cos(g[2]), np.sin(g[2])
    dx, dy = s[0] - g[0], s[1] - g[1]
    s[0] = c * dx + sn * dy
    s[1] = -sn * dx + c * dy
    s[2] = s[2] - g[2]
    if s.shape[0] == 5 and g.shape[0] == 5:
        s[3:] -= g[3:]
    return s


@numba.njit(cache=True)
def stage_kernel(kind, x, psi, u, q, qe, r, re, Q, R, Qp, psid, gx, gpsi, gu):
    """Value of one stage cost; writes gradients into ``gx``/``gpsi``/``gu``.

    ``gx`` is filled for me/ce, ``gpsi`` for ds (the other is zeroed).
    """
    val = 0.0
    gx[:] = 0.0
    gpsi[:] = 0.0
    m = u.shape[0]
    if kind == ME:
        for i in range(x.shape[0]):
            p = qe[i]
            xi = x[i]
            if p == 2.0:
                val += q[i] * xi * xi
                gx[i] = 2.0 * q[i] * xi
            elif p == 4.0:
                x2 = xi * xi
                val += q[i] * x2 * x2
                gx[i] = 4.0 * q[i] * x2 * xi
            else:
                val += q[i] * abs(xi) ** p
                gx[i] = p * q[i] * abs(xi) ** (p - 1.0) * np.sign(xi)
        for j in range(m):
            p = re[j]
            uj = u[j]
            if p == 4.0:
                u2 = uj * uj
                val += r[j] * u2 * u2
                gu[j] = 4.0 * r[j] * u2 * uj
            elif p == 2.0:
                val += r[j] * uj * uj
                gu[j] = 2.0 * r[j] * uj
            else:
                val += r[j] * abs(uj) ** p
                gu[j] = p * r[j] * abs(uj) ** (p - 1.0) * np.sign(uj)
        return val
    if kind == CE:
        n = x.shape[0]
        for i in range(n):
            acc = 0.0
            for k in range(n):
                acc += Q[i, k] * x[k]
            val += x[i] * acc
            gx[i] = 2.0 * acc
    else:
        M = psi.shape[0]
        for i in range(M):
            acc = 0.0
            for k in range(M):
                acc += Qp[i, k] * (psi[k] - psid[k])
            val += (psi[i] - psid[i]) * acc
            gpsi[i] = 2.0 * acc
    for j in range(m):
        acc = 0.0
        for k in range(m):
            acc += R[j, k] * u[k]
        val += u[j] * acc
        gu[j] = 2.0 * acc
    return val


def _args(spec: CostSpec):
    return (spec.kind_id, spec.q, spec.q_exp, spec.r, spec.r_exp, spec.Q, spec.R,
            spec.Q_psi, spec.psi_d)


def _evaluate(spec: CostSpec, state_or_lift, u):
    z = np.asarray(state_or_lift, dtype=float)
    u = np.asarray(u, dtype=float)
    if u.shape != (2,):
        raise ValueError("input must have 2 entries")
    if spec.kind == "ds":
        if z.shape != (spec.dictionary.size,):
            raise ValueError(f"ds cost takes lifted vectors of length {spec.dictionary.size}")
        x, psi = np.zeros(spec.n), z
    else:
        if z.shape != (spec.n,):
            raise ValueError(f"{spec.kind} cost takes states of length {spec.n}")
        x, psi = z, np.zeros(spec.psi_d.shape[0])
    gx, gpsi, gu = np.empty_like(x), np.empty_like(psi), np.empty(2)
    kind, q, qe, r, re, Q, R, Qp, psid = _args(spec)
    val = stage_kernel(kind, x, psi, u, q, qe, r, re, Q, R, Qp, psid, gx, gpsi, gu)
    return val, (gpsi if spec.kind == "ds" else gx), gu


def stage_cost(spec: CostSpec, state_or_lift, u) -> float:
    """Evaluate the stage cost; ``ds`` expects a lifted vector, the others a state."""
    return float(_evaluate(spec, state_or_lift, u)[0])


def stage_gradient(spec: CostSpec, state_or_lift, u):
    """Analytic gradients ``(d/d state-or-lift, d/du)``."""
    _, g, gu = _evaluate(spec, state_or_lift, u)
    return g, gu


def me_cost_on_lift(spec: CostSpec, dictionary: Dictionary, lifted, u) -> float:
    """Mixed-exponents cost of a lifted prediction, reprojecting for the heading."""
    return stage_cost(spec, dictionary.reproject(lifted), u)
