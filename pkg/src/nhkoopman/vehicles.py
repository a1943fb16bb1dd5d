"""Nominal differential-drive robot models.

Two realizations are provided:

* the kinematic robot, state ``[x1, x2, theta]`` and velocity input ``[v, omega]``;
* the second-order robot with drift, state ``[x1, x2, theta, v, omega]`` and
  acceleration input ``[a, omega_dot]``.

States and inputs are plain float arrays. The zero-order-hold maps below are
exact flows of the continuous models under a constant input, and serve as the
ground-truth plant in every simulation of this package.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

TWO_PI = 2.0 * np.pi

#: |omega| below which the straight-line series branch of the kinematic flow is used.
OMEGA_EPS = 1e-8

# Gauss-Legendre rule on [0, 1] used for the position integrals of the
# second-order flow (v, omega affine in time, so the integrand is entire).
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
GL_NODES = 0.5 * (_GL_X + 1.0)
GL_WEIGHTS = 0.5 * _GL_W


@dataclass(frozen=True)
class WheelGeometry:
    """Wheel radius ``r_w`` and axle length ``axle`` in metres."""

    r_w: float
    axle: float

    def __post_init__(self):
        if not (self.r_w > 0 and self.axle > 0):
            raise ValueError("wheel radius and axle length must be positive")


@dataclass(frozen=True)
class InputBox:
    """Componentwise box ``lower <= u <= upper`` containing zero in its interior."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be 1-d and of equal length")
        if not np.all(lo < hi):
            raise ValueError("input box needs lower < upper componentwise")
        if not (np.all(lo < 0) and np.all(hi > 0)):
            raise ValueError("input box must contain the zero input in its interior")
        object.__setattr__(self, "lower", tuple(float(x) for x in lo))
        object.__setattr__(self, "upper", tuple(float(x) for x in hi))

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    def contains(self, u, tol: float = 0.0) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lo - tol) and np.all(u <= self.hi + tol))

    def project(self, u) -> np.ndarray:
        return np.clip(np.asarray(u, dtype=float), self.lo, self.hi)


#: Default velocity box for the kinematic robot (m/s, rad/s).
VELOCITY_BOX = InputBox((-0.5, -2.0), (0.5, 2.0))
#: Default acceleration box for the second-order robot (m/s^2, rad/s^2).
ACCEL_BOX = InputBox((-0.5, -2.0), (0.5, 2.0))


def wheels_to_body(wheel_speeds, geom: WheelGeometry) -> np.ndarray:
    """Map left/right wheel rates (rad/s) to ``[v, omega]`` of the axle centre."""
    w_l, w_r = (float(w) for w in wheel_speeds)
    v = geom.r_w * (w_l + w_r) / 2.0
    omega = geom.r_w * (w_r - w_l) / geom.axle
    return np.array([v, omega])


@numba.njit(cache=True)
def _wrap(theta):
    r = np.mod(theta + np.pi, TWO_PI) - np.pi
    if r <= -np.pi:
        r += TWO_PI
    return r


def normalize_angle(theta):
    """Reduce an angle (or array of angles) to the half-open interval (-pi, pi]."""
    theta = np.asarray(theta, dtype=float)
    r = np.mod(theta + np.pi, TWO_PI) - np.pi
    r = np.where(r <= -np.pi, r + TWO_PI, r)
    return float(r) if r.ndim == 0 else r


@numba.njit(cache=True)
def _sinc_terms(omega, dt):
    """S = sin(phi)/phi, C = (1 - cos phi)/phi and their phi-derivatives."""
    phi = omega * dt
    if abs(omega) <= OMEGA_EPS:
        p2 = phi * phi
        s = 1.0 - p2 / 6.0
        c = 0.5 * phi - phi * p2 / 24.0
    else:
        s = np.sin(phi) / phi
        c = 2.0 * np.sin(0.5 * phi) ** 2 / phi
    if abs(phi) < 1e-3:
        p2 = phi * phi
        ds = -phi / 3.0 + phi * p2 / 30.0 - phi * p2 * p2 / 840.0
        dc = 0.5 - p2 / 8.0 + p2 * p2 / 144.0
    else:
        ds = (phi * np.cos(phi) - np.sin(phi)) / (phi * phi)
        dc = (phi * np.sin(phi) - 2.0 * np.sin(0.5 * phi) ** 2) / (phi * phi)
    return s, c, ds, dc


@numba.njit(cache=True)
def kin_step_jac(x, u, dt, out, jx, ju):
    """Exact kinematic ZOH step written into ``out`` with Jacobians ``jx`` (3x3), ``ju`` (3x2)."""
    th = x[2]
    v = u[0]
    om = u[1]
    s, c, ds, dc = _sinc_terms(om, dt)
    ct = np.cos(th)
    st = np.sin(th)
    a1 = ct * s - st * c
    a2 = st * s + ct * c
    out[0] = x[0] + v * dt * a1
    out[1] = x[1] + v * dt * a2
    out[2] = th + om * dt
    jx[:, :] = 0.0
    jx[0, 0] = 1.0
    jx[1, 1] = 1.0
    jx[2, 2] = 1.0
    jx[0, 2] = -v * dt * a2
    jx[1, 2] = v * dt * a1
    ju[0, 0] = dt * a1
    ju[1, 0] = dt * a2
    ju[2, 0] = 0.0
    ju[0, 1] = v * dt * dt * (ct * ds - st * dc)
    ju[1, 1] = v * dt * dt * (st * ds + ct * dc)
    ju[2, 1] = dt


@numba.njit(cache=True)
def dyn_step_jac(z, u, dt, nodes, weights, out, jx, ju):
    """Exact second-order ZOH step with Jacobians ``jx`` (5x5), ``ju`` (5x2)."""
    th, v, om = z[2], z[3], z[4]
    a, al = u[0], u[1]
    dx1 = 0.0
    dx2 = 0.0
    jx[:, :] = 0.0
    ju[:, :] = 0.0
    for i in range(nodes.shape[0]):
        t = nodes[i] * dt
        w = weights[i] * dt
        vi = v + a * t
        ti = th + om * t + 0.5 * al * t * t
        ci = np.cos(ti)
        si = np.sin(ti)
        dx1 += w * vi * ci
        dx2 += w * vi * si
        # d/dv, d/domega, d/da, d/dalpha of the two position integrals
        jx[0, 3] += w * ci
        jx[1, 3] += w * si
        jx[0, 4] -= w * vi * si * t
        jx[1, 4] += w * vi * ci * t
        ju[0, 0] += w * ci * t
        ju[1, 0] += w * si * t
        ju[0, 1] -= w * vi * si * 0.5 * t * t
        ju[1, 1] += w * vi * ci * 0.5 * t * t
    out[0] = z[0] + dx1
    out[1] = z[1] + dx2
    out[2] = th + om * dt + 0.5 * al * dt * dt
    out[3] = v + a * dt
    out[4] = om + al * dt
    for k in range(5):
        jx[k, k] = 1.0
    jx[0, 2] = -dx2
    jx[1, 2] = dx1
    jx[2, 4] = dt
    ju[2, 1] = 0.5 * dt * dt
    ju[3, 0] = dt
    ju[4, 1] = dt


def kinematic_zoh_step(x, u, dt: float) -> np.ndarray:
    """Advance the kinematic robot by ``dt`` under constant ``u = [v, omega]``.

    Heading is not wrapped; call :func:`normalize_angle` before comparing poses.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    out = np.empty(3)
    kin_step_jac(np.asarray(x, float), np.asarray(u, float), float(dt), out,
                 np.empty((3, 3)), np.empty((3, 2)))
    return out


def dynamic_zoh_step(z, u, dt: float) -> np.ndarray:
    """Advance the second-order robot by ``dt`` under constant ``u = [a, omega_dot]``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    out = np.empty(5)
    dyn_step_jac(np.asarray(z, float), np.asarray(u, float), float(dt), GL_NODES, GL_WEIGHTS,
                 out, np.empty((5, 5)), np.empty((5, 2)))
    return out


def zoh_step(state, u, dt: float) -> np.ndarray:
    """Dispatch on state length: 3 -> kinematic robot, 5 -> second-order robot."""
    state = np.asarray(state, dtype=float)
    if state.shape == (3,):
        return kinematic_zoh_step(state, u, dt)
    if state.shape == (5,):
        return dynamic_zoh_step(state, u, dt)
    raise ValueError(f"state must have 3 or 5 entries, got shape {state.shape}")


def simulate(x0, inputs, dt: float, substeps: int = 1) -> np.ndarray:
    """Roll the nominal plant forward through an input sequence.

    Returns ``len(inputs) * substeps + 1`` states; with ``substeps > 1`` each
    control interval is resolved into equal sub-intervals (same constant input).
    """
    x = np.asarray(x0, dtype=float)
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    h = dt / substeps
    out = [x]
    for u in inputs:
        for _ in range(substeps):
            x = zoh_step(x, u, h)
            out.append(x)
    return np.array(out)


def vector_field(state, u) -> np.ndarray:
    """Continuous-time right-hand side for either realization."""
    state = np.asarray(state, dtype=float)
    if state.shape == (3,):
        v, om = u
        th = state[2]
        return np.array([v * np.cos(th), v * np.sin(th), om])
    th, v, om = state[2], state[3], state[4]
    return np.array([v * np.cos(th), v * np.sin(th), om, u[0], u[1]])
