"""Observable dictionaries and reprojection rules.

A dictionary lifts a state into ``M`` observables; its reprojection rule maps a
lifted vector back to a state. Two rules exist:

``coordinate``
    every state entry is copied from a declared observable index;
``atan2``
    positions (and velocities, if any) are copied, the heading is recovered as
    ``atan2(sin-observable, cos-observable)``.

The five shipped dictionaries keep the observable order printed alongside
their definitions; saved Koopman matrices index against that order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numba
import numpy as np

from .vehicles import TWO_PI, _wrap

DEGENERATE_TOL = 1e-12

COORDINATE = 0
ATAN2 = 1


class DegenerateLiftError(ValueError):
    """Raised when both trig observables vanish so the heading is undefined."""


# ---------------------------------------------------------------------------
# compiled kernels (dictionary id switch)

D5T, D8EUL, D10M, D13T, D12F = 0, 1, 2, 3, 4


@numba.njit(cache=True)
def lift_jac_into(did, x, psi, jac, want_jac):
    """Evaluate shipped dictionary ``did`` at ``x``; optionally its Jacobian (M x n)."""
    th = x[2]
    c = np.cos(th)
    s = np.sin(th)
    if want_jac:
        jac[:, :] = 0.0
    psi[0] = 1.0
    psi[1] = x[0]
    psi[2] = x[1]
    if want_jac:
        jac[1, 0] = 1.0
        jac[2, 1] = 1.0
    if did == D5T:
        psi[3] = c
        psi[4] = s
        if want_jac:
            jac[3, 2] = -s
            jac[4, 2] = c
        return
    v = x[3]
    om = x[4]
    if did == D13T:
        psi[3] = s
        psi[4] = c
        psi[5] = v
        psi[6] = om
        psi[7] = v * c
        psi[8] = v * s
        psi[9] = om * s
        psi[10] = om * c
        psi[11] = s * c
        psi[12] = c * c
        if want_jac:
            jac[3, 2] = c
            jac[4, 2] = -s
            jac[5, 3] = 1.0
            jac[6, 4] = 1.0
            jac[7, 2] = -v * s
            jac[7, 3] = c
            jac[8, 2] = v * c
            jac[8, 3] = s
            jac[9, 2] = om * c
            jac[9, 4] = s
            jac[10, 2] = -om * s
            jac[10, 4] = c
            jac[11, 2] = c * c - s * s
            jac[12, 2] = -2.0 * s * c
        return
    # D8Eul, D10m, D12f share the leading full-state block
    psi[3] = th
    psi[4] = v
    psi[5] = om
    if want_jac:
        jac[3, 2] = 1.0
        jac[4, 3] = 1.0
        jac[5, 4] = 1.0
    if did == D8EUL:
        psi[6] = v * c
        psi[7] = v * s
        if want_jac:
            jac[6, 2] = -v * s
            jac[6, 3] = c
            jac[7, 2] = v * c
            jac[7, 3] = s
    elif did == D10M:
        psi[6] = v * om
        psi[7] = v * th ** 2
        psi[8] = v * th ** 3
        psi[9] = v * th ** 4
        if want_jac:
            jac[6, 3] = om
            jac[6, 4] = v
            jac[7, 2] = 2.0 * v * th
            jac[7, 3] = th ** 2
            jac[8, 2] = 3.0 * v * th ** 2
            jac[8, 3] = th ** 3
            jac[9, 2] = 4.0 * v * th ** 3
            jac[9, 3] = th ** 4
    else:  # D12F
        for k in range(3):
            ck = np.cos((k + 1) * th)
            sk = np.sin((k + 1) * th)
            psi[6 + 2 * k] = v * ck
            psi[7 + 2 * k] = v * sk
            if want_jac:
                jac[6 + 2 * k, 2] = -(k + 1) * v * sk
                jac[6 + 2 * k, 3] = ck
                jac[7 + 2 * k, 2] = (k + 1) * v * ck
                jac[7 + 2 * k, 3] = sk


@numba.njit(cache=True)
def reproject_into(rule, index_map, cos_idx, sin_idx, psi, x, jac, want_jac):
    """Generic reprojection; returns False on a degenerate atan2 lift.

    ``index_map[i]`` is the observable holding state entry ``i`` (ignored for the
    heading under the atan2 rule). ``jac`` is the n x M Jacobian.
    """
    n = index_map.shape[0]
    if want_jac:
        jac[:, :] = 0.0
    for i in range(n):
        if i == 2 and rule == ATAN2:
            continue
        x[i] = psi[index_map[i]]
        if want_jac:
            jac[i, index_map[i]] = 1.0
    if rule == ATAN2:
        c = psi[cos_idx]
        s = psi[sin_idx]
        if abs(c) < DEGENERATE_TOL and abs(s) < DEGENERATE_TOL:
            return False
        x[2] = _wrap(np.arctan2(s, c))
        if want_jac:
            r2 = c * c + s * s
            jac[2, cos_idx] = -s / r2
            jac[2, sin_idx] = c / r2
    else:
        x[2] = _wrap(x[2])
    return True


@numba.njit(cache=True)
def _lift_batch(did, X, M):
    out = np.empty((X.shape[0], M))
    dummy = np.empty((1, 1))
    for k in range(X.shape[0]):
        lift_jac_into(did, X[k], out[k], dummy, False)
    return out


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class Dictionary:
    """Ordered observables plus the rule mapping lifted vectors back to states.

    Shipped dictionaries carry a compiled ``kernel_id``; custom dictionaries
    supply ``eval_fn`` (batch ``(N, arity) -> (N, M)``) and optionally
    ``jac_fn`` (single state -> ``(M, arity)``).
    """

    name: str
    arity: int
    observables: tuple
    rule: int
    index_map: tuple
    cos_idx: int = -1
    sin_idx: int = -1
    kernel_id: int = -1
    eval_fn: Optional[Callable] = field(default=None, compare=False, repr=False)
    jac_fn: Optional[Callable] = field(default=None, compare=False, repr=False)

    @property
    def size(self) -> int:
        return len(self.observables)

    @property
    def compiled(self) -> bool:
        return self.kernel_id >= 0

    @property
    def index_array(self) -> np.ndarray:
        return np.array(self.index_map, dtype=np.int64)

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.arity:
            raise ValueError(
                f"dictionary {self.name} lifts {self.arity}-dim states, got {X.shape[-1]}")
        return X

    def lift(self, state) -> np.ndarray:
        """Lift one state ``(arity,)`` or a batch ``(N, arity)``."""
        X = self._check(state)
        single = X.ndim == 1
        X2 = np.atleast_2d(X)
        if self.compiled:
            out = _lift_batch(self.kernel_id, np.ascontiguousarray(X2), self.size)
        else:
            out = np.asarray(self.eval_fn(X2), dtype=float)
        return out[0] if single else out

    def lift_jacobian(self, state) -> np.ndarray:
        """Jacobian ``(M, arity)`` of the lift at one state."""
        x = self._check(state)
        if self.compiled:
            psi = np.empty(self.size)
            jac = np.empty((self.size, self.arity))
            lift_jac_into(self.kernel_id, x, psi, jac, True)
            return jac
        if self.jac_fn is None:
            raise NotImplementedError(f"dictionary {self.name} has no Jacobian")
        return np.asarray(self.jac_fn(x), dtype=float)

    def reproject(self, lifted) -> np.ndarray:
        """Map a lifted vector (or batch) back to a state with heading in (-pi, pi]."""
        P = np.asarray(lifted, dtype=float)
        if P.shape[-1] != self.size:
            raise ValueError(f"lifted vector must have {self.size} entries")
        single = P.ndim == 1
        P2 = np.atleast_2d(P)
        out = np.empty((P2.shape[0], self.arity))
        idx = self.index_array
        dummy = np.empty((1, 1))
        for k in range(P2.shape[0]):
            ok = reproject_into(self.rule, idx, self.cos_idx, self.sin_idx, P2[k], out[k],
                                dummy, False)
            if not ok:
                raise DegenerateLiftError(
                    f"{self.name}: both trig observables below {DEGENERATE_TOL:g}")
        return out[0] if single else out

    def reprojection_jacobian(self, lifted) -> np.ndarray:
        psi = np.asarray(lifted, dtype=float)
        x = np.empty(self.arity)
        jac = np.empty((self.arity, self.size))
        if not reproject_into(self.rule, self.index_array, self.cos_idx, self.sin_idx,
                              psi, x, jac, True):
            raise DegenerateLiftError(f"{self.name}: degenerate lift")
        return jac

    def roundtrip_error(self, states) -> float:
        """Largest |reproject(lift(x)) - x| with headings compared modulo 2 pi."""
        X = np.atleast_2d(self._check(states))
        R = self.reproject(self.lift(X))
        d = R - X
        d[:, 2] = np.mod(d[:, 2] + np.pi, TWO_PI) - np.pi
        return float(np.max(np.abs(d)))


def validate_dictionary(dictionary: Dictionary, states, tol: float = 1e-12) -> bool:
    """Report whether ``dictionary`` reproduces ``states`` through lift and reprojection."""
    try:
        return dictionary.roundtrip_error(states) <= tol
    except DegenerateLiftError:
        return False


def custom_dictionary(name, arity, eval_fn, index_map, *, observables=None, rule=COORDINATE,
                      cos_idx=-1, sin_idx=-1, jac_fn=None) -> Dictionary:
    """Build a user dictionary; ``eval_fn`` maps ``(N, arity)`` states to ``(N, M)``."""
    if observables is None:
        probe = np.asarray(eval_fn(np.zeros((1, arity))))
        observables = tuple(f"psi{j}" for j in range(probe.shape[1]))
    return Dictionary(name=name, arity=arity, observables=tuple(observables), rule=rule,
                      index_map=tuple(index_map), cos_idx=cos_idx, sin_idx=sin_idx,
                      eval_fn=eval_fn, jac_fn=jac_fn)


D5t = Dictionary("D5t", 3, ("1", "x1", "x2", "cos(theta)", "sin(theta)"),
                 ATAN2, (1, 2, -1), cos_idx=3, sin_idx=4, kernel_id=D5T)
D8Eul = Dictionary("D8Eul", 5, ("1", "x1", "x2", "theta", "v", "omega",
                                "v*cos(theta)", "v*sin(theta)"),
                   COORDINATE, (1, 2, 3, 4, 5), kernel_id=D8EUL)
D10m = Dictionary("D10m", 5, ("1", "x1", "x2", "theta", "v", "omega", "v*omega",
                              "v*theta^2", "v*theta^3", "v*theta^4"),
                  COORDINATE, (1, 2, 3, 4, 5), kernel_id=D10M)
D13t = Dictionary("D13t", 5, ("1", "x1", "x2", "sin(theta)", "cos(theta)", "v", "omega",
                              "v*cos(theta)", "v*sin(theta)", "omega*sin(theta)",
                              "omega*cos(theta)", "sin(theta)*cos(theta)", "cos(theta)^2"),
                  ATAN2, (1, 2, -1, 5, 6), cos_idx=4, sin_idx=3, kernel_id=D13T)
D12f = Dictionary("D12f", 5, ("1", "x1", "x2", "theta", "v", "omega",
                              "v*cos(theta)", "v*sin(theta)", "v*cos(2theta)", "v*sin(2theta)",
                              "v*cos(3theta)", "v*sin(3theta)"),
                  COORDINATE, (1, 2, 3, 4, 5), kernel_id=D12F)

_REGISTRY = (D5t, D8Eul, D10m, D13t, D12f)


def registry() -> list:
    """The five shipped dictionaries."""
    return list(_REGISTRY)


def get_dictionary(name: str) -> Dictionary:
    for d in _REGISTRY:
        if d.name.lower() == name.lower():
            return d
    raise KeyError(f"unknown dictionary {name!r}; choose from "
                   + ", ".join(d.name for d in _REGISTRY))
