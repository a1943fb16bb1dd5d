"""EDMD estimation of per-basis Koopman matrices and the bilinear surrogate.

Convention: lifted vectors are columns and Koopman matrices act from the left,
``psi(x+) ~= K @ psi(x)``. For an input ``u`` the surrogate matrix is the affine
combination ``K0 + sum_i lam_i (K_i - K0)`` with ``sum_i lam_i u_i = u``.
"""
from __future__ import annotations

import hashlib
import io
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .dictionaries import DegenerateLiftError, Dictionary, get_dictionary


class RankDeficiencyError(np.linalg.LinAlgError):
    """The lifted Gram matrix is singular and no ridge term was requested."""

    def __init__(self, deficiency: int, size: int):
        self.deficiency = deficiency
        super().__init__(
            f"lifted Gram matrix is rank deficient: {deficiency} of {size} "
            "observable directions are not excited by the data (set ridge > 0)")


@dataclass(frozen=True)
class RegressionOptions:
    """``ridge=None`` means the default ``1e-10 * trace(C) / M``."""

    ridge: Optional[float] = None
    cond_warn: float = 1e12

    def __post_init__(self):
        if self.ridge is not None and self.ridge < 0:
            raise ValueError("ridge must be nonnegative")


@dataclass
class Partition:
    """State/successor pairs recorded under one constant basis input."""

    X: np.ndarray
    Y: np.ndarray
    u: np.ndarray
    dt: float

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if self.X.shape != self.Y.shape:
            raise ValueError("X and Y must have identical shapes")

    def __len__(self):
        return self.X.shape[0]


@dataclass
class LabeledDataset:
    """Partitions indexed by basis number; partition 0 belongs to ``u0``."""

    partitions: list
    meta: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        dts = {p.dt for p in self.partitions if len(p)}
        if len(dts) != 1:
            raise ValueError(f"inconsistent sampling intervals across partitions: {sorted(dts)}")
        return dts.pop()

    @property
    def bases(self) -> np.ndarray:
        return np.array([p.u for p in self.partitions])

    def counts(self) -> list:
        return [len(p) for p in self.partitions]

    def truncate(self, d: Optional[int], stride: int = 1, spread: bool = False
                 ) -> "LabeledDataset":
        """Keep ``d`` pairs of each non-empty partition.

        By default the first ``d`` pairs at the given ``stride``; with
        ``spread=True`` ``d`` pairs evenly spaced over the whole partition.
        ``d=None`` returns the dataset unchanged.
        """
        if d is None:
            return self
        if d < 1:
            raise ValueError("d must be >= 1")
        parts = []
        for i, p in enumerate(self.partitions):
            if len(p) == 0:
                parts.append(p)
                continue
            if spread:
                if d > len(p):
                    raise ValueError(f"partition {i} holds only {len(p)} pairs, {d} requested")
                idx = np.unique(np.linspace(0, len(p) - 1, d).round().astype(int))
            else:
                idx = np.arange(0, len(p), stride)
                if d > idx.size:
                    raise ValueError(f"partition {i} holds only {idx.size} pairs at stride "
                                     f"{stride}, {d} requested")
                idx = idx[:d]
            parts.append(Partition(p.X[idx], p.Y[idx], p.u, p.dt))
        meta = dict(self.meta, truncated=d, stride=stride, spread=spread)
        return LabeledDataset(parts, meta)

    def digest(self) -> str:
        h = hashlib.sha256()
        for p in self.partitions:
            h.update(np.ascontiguousarray(p.X).tobytes())
            h.update(np.ascontiguousarray(p.Y).tobytes())
            h.update(p.u.tobytes())
        return h.hexdigest()[:16]


@dataclass
class KoopmanSurrogate:
    """Bilinear Koopman model: ``K[i]`` learned under constant input ``bases[i]``."""

    dictionary: Dictionary
    K: np.ndarray
    bases: np.ndarray
    dt: float
    drift: bool
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=float)
        self.bases = np.atleast_2d(np.asarray(self.bases, dtype=float))
        M = self.dictionary.size
        if self.K.ndim != 3 or self.K.shape[1:] != (M, M):
            raise ValueError(f"Koopman matrices must be {M}x{M}")
        if self.K.shape[0] != self.bases.shape[0]:
            raise ValueError("one basis input per Koopman matrix required")
        if not np.all(np.isfinite(self.K)):
            raise ValueError("Koopman matrices contain non-finite entries")
        B = self.bases[1:].T
        if B.shape[0] != B.shape[1]:
            raise ValueError("number of non-zero bases must equal the input dimension")
        try:
            self._binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise ValueError("basis inputs u_1..u_m are linearly dependent") from exc
        diffs = self.K[1:] - self.K[0]
        # K(u) = K0 + sum_j u_j * gains[j]
        self.gains = np.einsum("ij,iab->jab", self._binv, diffs)

    @property
    def n_inputs(self) -> int:
        return self.bases.shape[1]

    def coefficients(self, u) -> np.ndarray:
        """Solve ``[u_1 ... u_m] lam = u``."""
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.n_inputs:
            raise ValueError(f"input must have {self.n_inputs} entries")
        return u @ self._binv.T

    def matrix(self, u) -> np.ndarray:
        """Surrogate Koopman matrix for constant input ``u`` (batch-aware)."""
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.n_inputs:
            raise ValueError(f"input must have {self.n_inputs} entries")
        return self.K[0] + np.tensordot(u, self.gains, axes=(-1, 0))


def fit_autonomous(dictionary: Dictionary, X, Y, opts: RegressionOptions = RegressionOptions()
                   ) -> np.ndarray:
    """EDMD estimate of one autonomous Koopman matrix.

    Solves ``(C + ridge I) G = A`` with ``C = Psi_X Psi_X^T / d`` and
    ``A = Psi_X Psi_Y^T / d`` and returns ``K = G^T`` so that
    ``psi(Y[j]) ~= K @ psi(X[j])`` in the least-squares sense.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape != Y.shape:
        raise ValueError("X and Y must hold the same number of states")
    d = X.shape[0]
    if d < 1:
        raise ValueError("at least one sample pair is required")
    PX = dictionary.lift(X).T
    PY = dictionary.lift(Y).T
    M = PX.shape[0]
    C = PX @ PX.T / d
    A = PX @ PY.T / d
    ridge = opts.ridge
    if ridge is None:
        ridge = 1e-10 * np.trace(C) / M
    if ridge == 0.0:
        ev = np.linalg.eigvalsh(C)
        rank = int(np.sum(ev > M * np.finfo(float).eps * max(ev.max(), 1e-300)))
        if rank < M:
            raise RankDeficiencyError(M - rank, M)
    Creg = C + ridge * np.eye(M)
    cond = np.linalg.cond(Creg)
    if cond > opts.cond_warn:
        warnings.warn(f"{dictionary.name}: regularized Gram matrix condition number {cond:.3g}",
                      RuntimeWarning, stacklevel=2)
    try:
        G = scipy.linalg.solve(Creg, A, assume_a="pos")
    except np.linalg.LinAlgError:
        G = scipy.linalg.solve(Creg, A)
    return G.T


def fit_surrogate(dictionary: Dictionary, data: LabeledDataset,
                  opts: RegressionOptions = RegressionOptions(), drift: bool = True
                  ) -> KoopmanSurrogate:
    """Fit one matrix per basis partition.

    Without drift the zero input freezes every observable, so ``K0`` is the
    identity and partition 0 is not regressed.
    """
    dt = data.dt
    mats = []
    for i, p in enumerate(data.partitions):
        if i == 0 and not drift:
            mats.append(np.eye(dictionary.size))
            continue
        if len(p) == 0:
            raise ValueError(f"partition {i} (basis {p.u.tolist()}) holds no samples")
        mats.append(fit_autonomous(dictionary, p.X, p.Y, opts))
    meta = {"dataset": data.digest(), "counts": ",".join(str(c) for c in data.counts()),
            "ridge": "default" if opts.ridge is None else repr(float(opts.ridge))}
    meta.update({k: v for k, v in data.meta.items() if isinstance(v, (int, float, str))})
    return KoopmanSurrogate(dictionary, np.array(mats), data.bases, dt, drift, meta)


def combine(surrogate: KoopmanSurrogate, u) -> np.ndarray:
    """Koopman matrix for the constant input ``u``."""
    return surrogate.matrix(u)


def predict_batch(surrogate: KoopmanSurrogate, x0, inputs, reproject_each_step: bool = True
                  ) -> np.ndarray:
    """Vectorised prediction from many start states.

    ``x0`` has shape ``(S, n)``, ``inputs`` ``(S, H, m)``; returns ``(S, H+1, n)``.
    """
    dic = surrogate.dictionary
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    inputs = np.asarray(inputs, dtype=float)
    S, H = inputs.shape[:2]
    out = np.empty((S, H + 1, dic.arity))
    out[:, 0] = x0
    psi = dic.lift(x0)
    x = x0
    for k in range(H):
        Kk = surrogate.matrix(inputs[:, k])
        src = dic.lift(x) if reproject_each_step else psi
        psi = np.einsum("sab,sb->sa", Kk, src)
        x = dic.reproject(psi)
        out[:, k + 1] = x
    return out


def predict(surrogate: KoopmanSurrogate, x0, inputs, reproject_each_step: bool = True
            ) -> np.ndarray:
    """Predict states along an input sequence; returns ``len(inputs) + 1`` states.

    With reprojection each step lifts the previous reprojected state; without,
    the lifted vector is propagated and only reprojected for output.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (surrogate.dictionary.arity,):
        raise ValueError(f"x0 must have {surrogate.dictionary.arity} entries")
    inputs = np.asarray(inputs, dtype=float).reshape(-1, surrogate.n_inputs)
    if inputs.shape[0] == 0:
        return x0[None].copy()
    return predict_batch(surrogate, x0[None], inputs[None], reproject_each_step)[0]


# ---------------------------------------------------------------------------
# model file


def save_model(surrogate: KoopmanSurrogate, path, extra_header: Optional[dict] = None) -> None:
    """Write the surrogate as self-describing text (17 significant digits)."""
    buf = io.StringIO()
    buf.write("# nhkoopman-model v1\n")
    buf.write("# convention=column lifted vectors, K left-multiplies, rows written in order\n")
    buf.write(f"# dictionary={surrogate.dictionary.name}\n")
    buf.write(f"# M={surrogate.dictionary.size}\n")
    buf.write(f"# dt={surrogate.dt!r}\n")
    buf.write(f"# m={surrogate.K.shape[0] - 1}\n")
    buf.write(f"# drift={int(surrogate.drift)}\n")
    for i, b in enumerate(surrogate.bases):
        buf.write(f"# basis{i}=" + ",".join(repr(float(x)) for x in b) + "\n")
    for k, v in {**surrogate.meta, **(extra_header or {})}.items():
        buf.write(f"# {k}={v}\n")
    for i, Ki in enumerate(surrogate.K):
        buf.write(f"K{i}\n")
        for row in Ki:
            buf.write(" ".join(f"{x:.17g}" for x in row) + "\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def load_model(path) -> KoopmanSurrogate:
    header = {}
    mats = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "=" in line:
                    k, v = line[1:].strip().split("=", 1)
                    header[k.strip()] = v.strip()
            elif line.startswith("K"):
                mats.append([])
            else:
                mats[-1].append([float(x) for x in line.split()])
    dic = get_dictionary(header["dictionary"])
    m = int(header["m"])
    bases = [[float(x) for x in header[f"basis{i}"].split(",")] for i in range(m + 1)]
    known = {"dictionary", "M", "dt", "m", "drift", "convention"} | {f"basis{i}" for i in range(m + 1)}
    meta = {k: v for k, v in header.items() if k not in known}
    if int(header["M"]) != dic.size:
        raise ValueError("model file M does not match its dictionary")
    return KoopmanSurrogate(dic, np.array(mats), np.array(bases), float(header["dt"]),
                            bool(int(header["drift"])), meta)


__all__ = [
    "RankDeficiencyError", "RegressionOptions", "Partition", "LabeledDataset",
    "KoopmanSurrogate", "fit_autonomous", "fit_surrogate", "combine", "predict",
    "predict_batch", "save_model", "load_model", "DegenerateLiftError",
]
