"""Synthetic training data: random draws, transfer manoeuvres, open-loop basis segments.

The simulated robot repeatedly draws a target inside the admissible set, drives
there with rotate/translate/rotate manoeuvres built from trapezoidal velocity
profiles, and then applies one input basis open loop until the admissible set
would be left or the segment reaches its maximum length. The pose is recorded
at the sensor rate ``fs`` with optional Gaussian noise; commanded inputs are
recorded once per control step.

Times are kept as integer sensor indices internally (``t = j / fs``).
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import asdict, dataclass, field
from typing import Optional

import numba
import numpy as np

from .vehicles import GL_NODES, GL_WEIGHTS, dyn_step_jac, kin_step_jac, normalize_angle

KINEMATIC_BASES = ((0.0, 0.0), (0.2, -0.4), (0.2, 0.6))
DYNAMIC_BASES = ((0.0, 0.0), (0.2, 0.0), (0.0, 0.5))

CONSTANT, LINEAR = 0, 1
TRANSFER = -1


class InfeasibleSamplingError(RuntimeError):
    pass


def _f(x) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class SamplingSpec:
    """Everything that determines a recording (together with ``seed``).

    ``pose_box`` is ``((x1_lo, x1_hi), (x2_lo, x2_hi))``; headings are free.
    ``draw_velocity_box`` (dynamic only) bounds the drawn start velocities and
    ``velocity_limits`` the velocities admissible during basis segments.
    """

    kind: str = "dynamic"
    pose_box: tuple = ((0.0, 1.5), (-0.75, 0.75))
    draw_velocity_box: tuple = ((0.0, 0.4), (-1.0, 1.0))
    velocity_limits: tuple = ((-0.5, 0.5), (-2.0, 2.0))
    bases: tuple = DYNAMIC_BASES
    dt: float = 0.05
    fs: float = 240.0
    segments_per_basis: int = 5
    min_steps: int = 10
    max_steps: int = 100
    seed: int = 0
    noise_pos: float = 0.5e-3
    noise_heading: float = np.deg2rad(0.1)
    cruise_speed: float = 0.3
    cruise_accel: float = 0.3
    turn_rate: float = 1.0
    turn_accel: float = 1.0
    max_rejects: int = 2000

    def __post_init__(self):
        if self.kind not in ("kinematic", "dynamic"):
            raise ValueError("kind must be 'kinematic' or 'dynamic'")
        r = self.fs * self.dt
        if r < 1 or abs(r - round(r)) > 1e-9:
            raise ValueError("fs * dt must be a positive integer")
        for lo, hi in (*self.pose_box, *self.draw_velocity_box, *self.velocity_limits):
            if not lo < hi:
                raise ValueError("boxes must satisfy lower < upper")
        if not 1 <= self.min_steps <= self.max_steps:
            raise ValueError("need 1 <= min_steps <= max_steps")
        b = np.asarray(self.bases, dtype=float)
        if b.shape[1] != 2 or abs(np.linalg.det(b[1:3])) < 1e-12:
            raise ValueError("bases u_1, u_2 must span the input space")

    @property
    def ratio(self) -> int:
        """Sensor samples per control step."""
        return int(round(self.fs * self.dt))

    @property
    def state_dim(self) -> int:
        return 3 if self.kind == "kinematic" else 5

    @property
    def sampled_bases(self) -> list:
        """Basis indices that receive segments (``u0`` only for the drift model)."""
        return [1, 2] if self.kind == "kinematic" else [0, 1, 2]

    @classmethod
    def kinematic(cls, **kw) -> "SamplingSpec":
        base = dict(kind="kinematic", pose_box=((-1.0, 1.0), (-1.0, 1.0)), bases=KINEMATIC_BASES,
                    dt=0.1)
        base.update(kw)
        return cls(**base)

    @classmethod
    def dynamic(cls, **kw) -> "SamplingSpec":
        return cls(**kw)


@dataclass
class RawRecording:
    """Pose stream at ``fs``, input stream at ``1/dt`` and segment annotations.

    ``annotations`` rows are ``(start_step, end_step, basis, profile)`` with
    ``basis = -1`` for transfer motion; they partition ``[0, n_steps)``.
    """

    kind: str
    dt: float
    fs: float
    bases: np.ndarray
    poses: np.ndarray
    inputs: np.ndarray
    input_basis: np.ndarray
    annotations: np.ndarray
    truth: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def ratio(self) -> int:
        return int(round(self.fs * self.dt))

    @property
    def pose_times(self) -> np.ndarray:
        return np.arange(self.poses.shape[0]) / self.fs

    @property
    def input_times(self) -> np.ndarray:
        return np.arange(self.inputs.shape[0]) * self.dt

    def basis_segments(self, basis: Optional[int] = None) -> np.ndarray:
        a = self.annotations
        sel = a[:, 2] >= 0 if basis is None else a[:, 2] == basis
        return a[sel]

    def basis_step_counts(self) -> dict:
        out = {}
        for s, e, b, _ in self.basis_segments():
            out[int(b)] = out.get(int(b), 0) + int(e - s)
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.poses, self.inputs, self.annotations):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]

    def write_csv(self, path) -> None:
        """CSV: ``# key=value`` header, then ``stream,t,f1,f2,f3`` rows."""
        with open(path, "w", newline="") as fh:
            # provenance first, then the recording's own keys
            hdr = {k: self.meta[k] for k in ("tool", "config") if k in self.meta}
            hdr.update({"kind": self.kind, "dt": _f(self.dt), "fs": _f(self.fs),
                        "bases": ";".join(",".join(repr(float(x)) for x in b)
                                          for b in self.bases)})
            hdr.update({k: v for k, v in self.meta.items() if k not in hdr})
            for k, v in hdr.items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh)
            w.writerow(["stream", "t", "f1", "f2", "f3"])
            R = self.ratio
            for j, p in enumerate(self.poses):
                w.writerow(["pose", _f(j / self.fs), *map(_f, p)])
            for k, u in enumerate(self.inputs):
                w.writerow(["input", _f(k * R / self.fs), _f(u[0]), _f(u[1]),
                            int(self.input_basis[k])])
            for s, e, b, prof in self.annotations:
                w.writerow(["annot", _f(s * R / self.fs), _f(e * R / self.fs), int(b),
                            int(prof)])

    @classmethod
    def read_csv(cls, path) -> "RawRecording":
        header, poses, inputs, basis, annots = {}, [], [], [], []
        with open(path, newline="") as fh:
            lines = [ln for ln in fh]
        body = []
        for ln in lines:
            if ln.startswith("#"):
                k, _, v = ln[1:].strip().partition("=")
                header[k.strip()] = v.strip()
            else:
                body.append(ln)
        reader = csv.reader(body)
        next(reader)
        for row in reader:
            if not row:
                continue
            stream = row[0]
            vals = [float(x) for x in row[1:]]
            if stream == "pose":
                poses.append(vals)
            elif stream == "input":
                inputs.append(vals)
            elif stream == "annot":
                annots.append(vals)
            else:
                raise ValueError(f"unknown stream {stream!r}")
        try:
            dt = float(header.pop("dt"))
            fs = float(header.pop("fs"))
            kind = header.pop("kind")
            bases = np.array([[float(x) for x in b.split(",")]
                              for b in header.pop("bases").split(";")])
        except KeyError as exc:
            raise ValueError(f"recording header lacks {exc}") from exc
        R = int(round(fs * dt))
        P = np.array(poses)
        t_idx = np.rint(P[:, 0] * fs).astype(int)
        if np.any(np.diff(t_idx) <= 0):
            raise ValueError("pose timestamps must be strictly increasing")
        if t_idx[0] != 0 or np.any(np.diff(t_idx) != 1):
            raise ValueError("pose stream must be gap-free at the sensor rate")
        I = np.array(inputs)
        A = np.array(annots)
        ann = np.column_stack([np.rint(A[:, 0] * fs / R), np.rint(A[:, 1] * fs / R),
                               A[:, 2], A[:, 3]]).astype(int)
        return cls(kind, dt, fs, bases, P[:, 1:4], I[:, 1:3], I[:, 3].astype(int), ann,
                   None, header)


# ---------------------------------------------------------------------------
# simulation helpers


@numba.njit(cache=True)
def _substeps(x, u, h, count, nodes, weights):
    n = x.shape[0]
    out = np.empty((count, n))
    jx = np.empty((n, n))
    ju = np.empty((n, 2))
    cur = x.copy()
    for i in range(count):
        if n == 3:
            kin_step_jac(cur, u, h, out[i], jx, ju)
        else:
            dyn_step_jac(cur, u, h, nodes, weights, out[i], jx, ju)
        cur[:] = out[i]
    return out


def simulate_fine(x, inputs, ratio: int, h: float) -> np.ndarray:
    """States at every sensor instant over a block of control steps (start excluded)."""
    out = []
    cur = np.asarray(x, dtype=float)
    for u in np.atleast_2d(inputs):
        block = _substeps(cur, np.asarray(u, dtype=float), h, ratio, GL_NODES, GL_WEIGHTS)
        out.append(block)
        cur = block[-1]
    if not out:
        return np.empty((0, cur.shape[0]))
    return np.vstack(out)


def trapezoid(distance: float, vmax: float, amax: float, dt: float, order: int) -> np.ndarray:
    """Per-step commands moving a double integrator by ``distance`` and back to rest.

    ``order=2`` returns accelerations (+a, 0, -a pattern); ``order=1`` returns
    the step-averaged velocities of the same profile, which cover the same
    distance under zero-order hold.
    """
    D = float(distance)
    if abs(D) < 1e-12:
        return np.zeros(0)
    na_max = max(1, int(np.ceil(vmax / (amax * dt) - 1e-9)))
    if abs(D) <= amax * dt * dt * na_max ** 2:
        na = max(1, int(np.ceil(np.sqrt(abs(D) / (amax * dt * dt)) - 1e-12)))
        nc = 0
    else:
        na = na_max
        nc = max(0, int(np.ceil(abs(D) / (amax * dt * dt * na) - na - 1e-12)))
    a = D / (dt * dt * na * (na + nc))
    acc = np.concatenate([np.full(na, a), np.zeros(nc), np.full(na, -a)])
    if order == 2:
        return acc
    vel = np.concatenate([a * dt * (np.arange(na) + 0.5), np.full(nc, a * dt * na),
                          a * dt * (na - np.arange(na) - 0.5)])
    return vel


class _Recorder:
    def __init__(self, spec: SamplingSpec, x0):
        self.spec = spec
        self.x = np.asarray(x0, dtype=float)
        self.truth = [self.x.copy()]
        self.inputs = []
        self.basis = []
        self.annots = []
        self.h = 1.0 / spec.fs

    @property
    def step(self) -> int:
        return len(self.inputs)

    def apply(self, inputs, basis: int, profile=None):
        """Apply a block of per-step inputs, annotating runs of identical commands."""
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        if inputs.shape[1] == 0 or inputs.shape[0] == 0:
            return
        fine = simulate_fine(self.x, inputs, self.spec.ratio, self.h)
        self.truth.extend(fine)
        self.x = fine[-1].copy()
        start = self.step
        run_start = start
        for k, u in enumerate(inputs):
            self.inputs.append(u.copy())
            self.basis.append(basis)
            last = k == inputs.shape[0] - 1
            if last or not np.array_equal(inputs[k + 1], u):
                if profile is None:
                    prof = CONSTANT if (self.spec.kind == "kinematic" or not np.any(u)) else LINEAR
                else:
                    prof = profile
                self.annots.append((run_start, start + k + 1, basis, prof))
                run_start = start + k + 1


def _inside(states, spec: SamplingSpec) -> bool:
    (x1l, x1h), (x2l, x2h) = spec.pose_box
    ok = ((states[:, 0] >= x1l) & (states[:, 0] <= x1h)
          & (states[:, 1] >= x2l) & (states[:, 1] <= x2h))
    if spec.kind == "dynamic":
        (vl, vh), (wl, wh) = spec.velocity_limits
        ok &= ((states[:, 3] >= vl) & (states[:, 3] <= vh)
               & (states[:, 4] >= wl) & (states[:, 4] <= wh))
    return bool(np.all(ok))


def _transfer_commands(spec: SamplingSpec, x, target_pose) -> list:
    """Braking block bringing a moving robot to rest (empty for the kinematic model)."""
    blocks = []
    if spec.kind == "dynamic":
        v, om = x[3], x[4]
        nb = int(np.ceil(max(abs(v) / spec.cruise_accel, abs(om) / spec.turn_accel)
                         / spec.dt - 1e-12))
        if nb > 0:
            blocks.append(np.tile([-v / (nb * spec.dt), -om / (nb * spec.dt)], (nb, 1)))
    return blocks


def _plan_motion(spec: SamplingSpec, pose, target):
    order = 1 if spec.kind == "kinematic" else 2
    blocks = []
    d = np.asarray(target[:2]) - np.asarray(pose[:2])
    dist = float(np.hypot(*d))
    th = pose[2]
    if dist > 1e-9:
        heading = np.arctan2(d[1], d[0])
        rot = trapezoid(normalize_angle(heading - th), spec.turn_rate, spec.turn_accel,
                        spec.dt, order)
        blocks.append(np.column_stack([np.zeros_like(rot), rot]))
        tr = trapezoid(dist, spec.cruise_speed, spec.cruise_accel, spec.dt, order)
        blocks.append(np.column_stack([tr, np.zeros_like(tr)]))
        th = heading
    rot = trapezoid(normalize_angle(target[2] - th), spec.turn_rate, spec.turn_accel,
                    spec.dt, order)
    blocks.append(np.column_stack([np.zeros_like(rot), rot]))
    return blocks


def _sample(spec: SamplingSpec) -> RawRecording:
    rng = np.random.default_rng(spec.seed)
    n = spec.state_dim
    bases = np.asarray(spec.bases, dtype=float)
    (x1l, x1h), (x2l, x2h) = spec.pose_box
    x0 = np.zeros(n)
    x0[:2] = [(x1l + x1h) / 2, (x2l + x2h) / 2]
    rec = _Recorder(spec, x0)
    R = spec.ratio
    h = 1.0 / spec.fs
    order = [b for _ in range(spec.segments_per_basis) for b in spec.sampled_bases]
    rejects = 0
    for b in order:
        u_b = bases[b]
        while True:
            pose = np.array([rng.uniform(x1l, x1h), rng.uniform(x2l, x2h),
                             rng.uniform(-np.pi, np.pi)])
            start = np.zeros(n)
            start[:3] = pose
            ramp = np.zeros((0, 2))
            if spec.kind == "dynamic":
                (vl, vh), (wl, wh) = spec.draw_velocity_box
                vt, wt = rng.uniform(vl, vh), rng.uniform(wl, wh)
                na = int(np.ceil(max(abs(vt) / spec.cruise_accel, abs(wt) / spec.turn_accel)
                                 / spec.dt - 1e-12))
                if na > 0:
                    ramp = np.tile([vt / (na * spec.dt), wt / (na * spec.dt)], (na, 1))
            trial = np.vstack([ramp, np.tile(u_b, (spec.min_steps, 1))])
            fine = simulate_fine(start, trial, R, h)
            if _inside(np.vstack([start[None], fine]), spec):
                break
            rejects += 1
            if rejects > spec.max_rejects:
                raise InfeasibleSamplingError(
                    f"basis {b} could not be applied for {spec.min_steps} steps after "
                    f"{spec.max_rejects} rejected draws")
        for blk in _transfer_commands(spec, rec.x, pose):
            rec.apply(blk, TRANSFER, LINEAR)
        for blk in _plan_motion(spec, rec.x, pose):
            rec.apply(blk, TRANSFER)
        err = np.hypot(*(rec.x[:2] - pose[:2]))
        if err > 0.01 or abs(normalize_angle(rec.x[2] - pose[2])) > np.deg2rad(2.0):
            raise RuntimeError("transfer manoeuvre missed its target")
        rec.x[2] = normalize_angle(rec.x[2])
        if ramp.shape[0]:
            rec.apply(ramp, TRANSFER, LINEAR)
        count = 0
        cur = rec.x
        while count < spec.max_steps:
            nxt = simulate_fine(cur, u_b[None], R, h)
            if not _inside(nxt, spec):
                break
            cur = nxt[-1]
            count += 1
        prof = CONSTANT if (spec.kind == "kinematic" or not np.any(u_b)) else LINEAR
        rec.apply(np.tile(u_b, (count, 1)), b, prof)
    truth = np.array(rec.truth)
    poses = truth[:, :3].copy()
    if spec.noise_pos > 0:
        poses[:, :2] += rng.normal(0.0, spec.noise_pos, size=(poses.shape[0], 2))
    if spec.noise_heading > 0:
        poses[:, 2] += rng.normal(0.0, spec.noise_heading, size=poses.shape[0])
    poses[:, 2] = normalize_angle(poses[:, 2])
    meta = {k: (float(v) if isinstance(v, float) else v) for k, v in asdict(spec).items()
            if k in ("seed", "noise_pos", "noise_heading", "segments_per_basis", "min_steps",
                     "max_steps")}
    meta["rejected_draws"] = rejects
    return RawRecording(spec.kind, spec.dt, spec.fs, bases, poses, np.array(rec.inputs),
                        np.array(rec.basis, dtype=int), np.array(rec.annots, dtype=int),
                        truth, meta)


def sample_kinematic(spec: SamplingSpec) -> RawRecording:
    """Recording of the kinematic robot; only the non-zero bases are sampled."""
    if spec.kind != "kinematic":
        raise ValueError("spec is not a kinematic sampling spec")
    return _sample(spec)


def sample_dynamic(spec: SamplingSpec) -> RawRecording:
    """Recording of the second-order robot, bases applied in rotation ``u0, u1, u2``."""
    if spec.kind != "dynamic":
        raise ValueError("spec is not a dynamic sampling spec")
    return _sample(spec)
