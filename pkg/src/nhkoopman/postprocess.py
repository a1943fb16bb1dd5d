"""From position-only recordings to state/successor pairs.

Pipeline for the second-order robot: continue the heading, differentiate
positions and heading with central differences, rotate the inertial velocity
into the body frame, smooth each annotated segment on its own, then pair every
basis-segment sample with the sample ``dt`` later in the same segment. The
kinematic robot's state is the pose itself, so only the heading handling and
pairing apply.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import uniform_filter1d

from .edmd import LabeledDataset, Partition
from .sampler import RawRecording
from .vehicles import normalize_angle


@dataclass(frozen=True)
class PostprocessSpec:
    """``window`` w: centered moving average over ``w // 2`` samples on each side."""

    window: int = 40
    dt: float = 0.05
    fs: float = 240.0
    pair_stride: int = 1

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        r = self.fs * self.dt
        if r < 1 or abs(r - round(r)) > 1e-9:
            raise ValueError("fs * dt must be a positive integer")
        if self.pair_stride < 1:
            raise ValueError("pair_stride must be >= 1")

    @property
    def ratio(self) -> int:
        return int(round(self.fs * self.dt))


def central_diff(t, x) -> np.ndarray:
    """First-order central differences; one-sided at both ends.

    ``x`` may be (N,) or (N, k); differences are taken along axis 0.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if t.ndim != 1 or t.shape[0] != x.shape[0]:
        raise ValueError("t and x must have the same length")
    if t.shape[0] < 3:
        raise ValueError("need at least 3 samples")
    dtt = np.diff(t)
    if np.any(dtt == 0):
        raise ValueError("duplicate timestamps")
    if np.any(dtt < 0):
        raise ValueError("timestamps must be strictly increasing")
    out = np.empty_like(x)
    tt = t.reshape((-1,) + (1,) * (x.ndim - 1))
    out[1:-1] = (x[2:] - x[:-2]) / (tt[2:] - tt[:-2])
    out[0] = (x[1] - x[0]) / (t[1] - t[0])
    out[-1] = (x[-1] - x[-2]) / (t[-1] - t[-2])
    return out


def to_body_frame(inertial_vel, theta) -> np.ndarray:
    """Rotate ``(dx1, dx2)`` into the body frame; returns ``(v_body, v_lateral)``."""
    vel = np.asarray(inertial_vel, dtype=float)
    th = np.asarray(theta, dtype=float)
    c, s = np.cos(th), np.sin(th)
    vb = c * vel[..., 0] + s * vel[..., 1]
    vl = -s * vel[..., 0] + c * vel[..., 1]
    return np.stack([vb, vl], axis=-1)


def _smooth(x: np.ndarray, half: int) -> np.ndarray:
    """Centered average with the window shrunk symmetrically near both ends."""
    n = x.shape[0]
    if half == 0 or n < 3:
        return x.copy()
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(n)
    h = np.minimum(np.minimum(idx, n - 1 - idx), half)
    return (c[idx + h + 1] - c[idx - h]) / (2 * h + 1)


def _smooth_linear_edges(x: np.ndarray, half: int) -> np.ndarray:
    """Local linear fit over up to ``half`` samples per side.

    Equals the centered average wherever the window is symmetric; near the
    ends the window is one-sided and the fitted line is evaluated at the
    sample, which keeps linear signals exact with far less noise than the
    truncated average.
    """
    n = x.shape[0]
    if half == 0 or n < 3:
        return x.copy()
    k = np.arange(n, dtype=float)
    c0 = np.concatenate([[0.0], np.cumsum(x)])
    c1 = np.concatenate([[0.0], np.cumsum(k * x)])
    idx = np.arange(n)
    a = np.maximum(idx - half, 0)
    b = np.minimum(idx + half, n - 1) + 1
    m = (b - a).astype(float)
    s0 = c0[b] - c0[a]
    s1 = c1[b] - c1[a]
    # sums of k and k^2 over [a, b)
    sk = (b * (b - 1) - a * (a - 1)) / 2.0
    skk = ((b - 1) * b * (2 * b - 1) - (a - 1) * a * (2 * a - 1)) / 6.0
    kbar = sk / m
    var = skk - m * kbar ** 2
    slope = np.divide(s1 - kbar * s0, var, out=np.zeros(n), where=var > 0)
    return s0 / m + slope * (idx - kbar)


def smooth_segment(series, boundaries, w: int) -> np.ndarray:
    """Moving average of width ``w`` applied to each ``[start, end)`` index range separately."""
    x = np.asarray(series, dtype=float)
    out = np.empty_like(x)
    covered = 0
    for s, e in boundaries:
        if e <= s:
            raise ValueError("empty segment")
        if s != covered:
            raise ValueError("segments must partition the series")
        out[s:e] = _smooth(x[s:e], w // 2)
        covered = e
    if covered != x.shape[0]:
        raise ValueError("segments must partition the series")
    return out


def moving_average(series, w: int) -> np.ndarray:
    """Global centered moving average (edge values repeated); bleeds across segments."""
    return uniform_filter1d(np.asarray(series, dtype=float), size=2 * (w // 2) + 1,
                            mode="nearest")


def continue_angles(theta) -> np.ndarray:
    """Remove 2*pi jumps: each increment becomes its smallest 2*pi-congruent representative."""
    th = np.asarray(theta, dtype=float)
    if th.size == 0:
        return th.copy()
    inc = np.diff(th)
    inc = inc - 2 * np.pi * np.round(inc / (2 * np.pi))
    return np.concatenate([[th[0]], th[0] + np.cumsum(inc)])


def _segment_states(kind, t, pose, theta_c, lo, hi, window, trim=True, smoother=_smooth):
    """States on the sample range ``[lo, hi]`` of one segment.

    For the dynamic model the two boundary samples are dropped (``trim``)
    because their velocity estimate mixes samples from neighbouring segments.
    """
    if kind == "kinematic":
        return np.column_stack([pose[lo:hi + 1, :2], theta_c[lo:hi + 1]])
    # differentiate on a padded range so interior samples use true neighbours
    a, b = max(lo - 1, 0), min(hi + 1, len(t) - 1)
    d = central_diff(t[a:b + 1], np.column_stack([pose[a:b + 1, :2], theta_c[a:b + 1]]))
    d = d[lo - a:lo - a + hi - lo + 1]
    vb = to_body_frame(d[:, :2], theta_c[lo:hi + 1])[:, 0]
    half = window // 2
    states = np.column_stack([pose[lo:hi + 1, :2], theta_c[lo:hi + 1],
                              smoother(vb, half), smoother(d[:, 2], half)])
    # the difference quotient at a boundary straddles two input regimes
    return states[1:-1] if trim else states


def _pairs(states, R, stride):
    j = np.arange(0, states.shape[0] - R, stride)
    X = states[j].copy()
    Y = states[j + R].copy()
    shift = normalize_angle(X[:, 2]) - X[:, 2]
    X[:, 2] += shift
    Y[:, 2] += shift
    return X, Y


def lateral_velocity(recording: RawRecording) -> np.ndarray:
    """Body-frame lateral velocity at every pose sample (diagnostic, ideally zero)."""
    t = recording.pose_times
    th = continue_angles(recording.poses[:, 2])
    d = central_diff(t, recording.poses[:, :2])
    return to_body_frame(d, th)[:, 1]


def estimate_trajectory(recording: RawRecording, spec: PostprocessSpec,
                        model_kind: Optional[str] = None) -> np.ndarray:
    """States at every pose sample, each annotated segment smoothed on its own.

    Headings are returned normalized to (-pi, pi]. Used as the recorded truth
    of reference runs, where every sample matters (transfers included). Control
    instants fall on segment edges, so the window is not shrunk there: the
    edges get a one-sided local linear fit (identical to the centered average
    in the interior).
    """
    kind = model_kind or recording.kind
    if kind not in ("kinematic", "dynamic"):
        raise ValueError("model_kind must be 'kinematic' or 'dynamic'")
    ann = np.asarray(recording.annotations)
    if ann.size == 0:
        raise ValueError("recording has no annotations")
    R = recording.ratio
    N = recording.poses.shape[0]
    t = recording.pose_times
    theta_c = continue_angles(recording.poses[:, 2])
    parts = []
    for i, (s, e, _, _) in enumerate(ann):
        lo, hi = s * R, (N - 1 if i == len(ann) - 1 else e * R - 1)
        if hi < lo:
            raise ValueError("empty annotation")
        parts.append(_segment_states(kind, t, recording.poses, theta_c, lo, hi,
                                     spec.window, trim=False,
                                     smoother=_smooth_linear_edges))
    out = np.vstack(parts)
    if out.shape[0] != N:
        raise ValueError("annotations must partition the pose stream")
    out[:, 2] = normalize_angle(out[:, 2])
    return out


def build_dataset(recording: RawRecording, spec: PostprocessSpec,
                  model_kind: Optional[str] = None) -> LabeledDataset:
    """Pairs ``(X_i, Y_i)`` per input basis from annotated basis segments."""
    kind = model_kind or recording.kind
    if kind not in ("kinematic", "dynamic"):
        raise ValueError("model_kind must be 'kinematic' or 'dynamic'")
    if abs(recording.dt - spec.dt) > 1e-12 or abs(recording.fs - spec.fs) > 1e-9:
        raise ValueError(f"recording (dt={recording.dt}, fs={recording.fs}) does not match "
                         f"postprocess spec (dt={spec.dt}, fs={spec.fs})")
    ann = np.asarray(recording.annotations)
    if ann.size == 0 or not np.any(ann[:, 2] >= 0):
        raise ValueError("recording has no basis-segment annotations")
    R = spec.ratio
    n_samples = recording.poses.shape[0]
    if ann[:, 1].max() * R >= n_samples:
        raise ValueError("annotations extend beyond the pose stream")
    t = recording.pose_times
    theta_c = continue_angles(recording.poses[:, 2])
    bases = np.asarray(recording.bases, dtype=float)
    n = 3 if kind == "kinematic" else 5
    Xs = [[] for _ in bases]
    Ys = [[] for _ in bases]
    for s, e, b, _ in ann:
        if b < 0:
            continue
        if b >= len(bases):
            raise ValueError(f"annotation refers to unknown basis {b}")
        states = _segment_states(kind, t, recording.poses, theta_c, s * R, e * R, spec.window)
        X, Y = _pairs(states, R, spec.pair_stride)
        Xs[b].append(X)
        Ys[b].append(Y)
    parts = []
    for i, u in enumerate(bases):
        X = np.vstack(Xs[i]) if Xs[i] else np.zeros((0, n))
        Y = np.vstack(Ys[i]) if Ys[i] else np.zeros((0, n))
        parts.append(Partition(X, Y, u, spec.dt))
    meta = {"window": spec.window, "pair_stride": spec.pair_stride, "model_kind": kind,
            "recording": recording.digest()}
    meta.update({f"rec_{k}": v for k, v in recording.meta.items()})
    return LabeledDataset(parts, meta)


def read_external_csv(path, bases, dt: float, model_kind: str = "dynamic",
                      spec: Optional[PostprocessSpec] = None) -> LabeledDataset:
    """Ingest ``basis,t,x1,x2,theta[,v,omega]`` rows (basis ``-1`` for non-basis samples).

    Consecutive rows sharing a basis index and a uniform sensor spacing form a
    segment. When ``v``/``omega`` columns are present they are used as given;
    otherwise a dynamic state is estimated as in :func:`build_dataset`.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(ln for ln in fh if not ln.startswith("#")) if r]
    head = [h.strip() for h in rows[0]]
    if head[:5] != ["basis", "t", "x1", "x2", "theta"]:
        raise ValueError("expected columns basis,t,x1,x2,theta[,v,omega]")
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    has_vel = head[5:7] == ["v", "omega"]
    b = data[:, 0].astype(int)
    t = data[:, 1]
    dts = np.diff(t)
    if np.any(dts <= 0):
        raise ValueError("timestamps must be strictly increasing")
    fs = 1.0 / np.median(dts)
    if spec is None:
        spec = PostprocessSpec(dt=dt, fs=round(fs * dt) / dt)
    R = spec.ratio
    theta_c = continue_angles(data[:, 4])
    pose = data[:, 2:5]
    bases = np.asarray(bases, dtype=float)
    if model_kind not in ("kinematic", "dynamic"):
        raise ValueError("model_kind must be 'kinematic' or 'dynamic'")
    n = 3 if model_kind == "kinematic" else 5
    Xs = [[] for _ in bases]
    Ys = [[] for _ in bases]
    breaks = np.flatnonzero((np.diff(b) != 0) | (np.abs(dts * spec.fs - 1) > 1e-3)) + 1
    for seg in np.split(np.arange(len(t)), breaks):
        bi = b[seg[0]]
        if bi < 0 or seg.size <= R:
            continue
        lo, hi = seg[0], seg[-1]
        if has_vel and n == 5:
            st = np.column_stack([pose[lo:hi + 1, :2], theta_c[lo:hi + 1],
                                  data[lo:hi + 1, 5], data[lo:hi + 1, 6]])
        else:
            st = _segment_states(model_kind, t, pose, theta_c, lo, hi, spec.window)
        X, Y = _pairs(st, R, spec.pair_stride)
        Xs[bi].append(X)
        Ys[bi].append(Y)
    parts = [Partition(np.vstack(Xs[i]) if Xs[i] else np.zeros((0, n)),
                       np.vstack(Ys[i]) if Ys[i] else np.zeros((0, n)), u, spec.dt)
             for i, u in enumerate(bases)]
    return LabeledDataset(parts, {"source": str(path), "window": spec.window})
