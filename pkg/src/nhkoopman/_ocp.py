"""Compiled single-shooting objective, adjoint gradient and projected-gradient solver."""
from __future__ import annotations

import numba
import numpy as np

from .costs import DS, stage_kernel
from .dictionaries import lift_jac_into, reproject_into
from .vehicles import _wrap, dyn_step_jac, kin_step_jac

SURR_PROJ, SURR_NOPROJ, NOMINAL = 0, 1, 2


@numba.njit(cache=True)
def _apply(K0, G, u, psi, out):
    """``out = (K0 + sum_j u_j G_j) psi`` without forming the matrix."""
    M = K0.shape[0]
    m = G.shape[0]
    for a in range(M):
        acc = 0.0
        for b in range(M):
            w = K0[a, b]
            for j in range(m):
                w += u[j] * G[j, a, b]
            acc += w * psi[b]
        out[a] = acc


@numba.njit(cache=True)
def _apply_t(K0, G, u, lam, out):
    """``out = (K0 + sum_j u_j G_j)^T lam``."""
    M = K0.shape[0]
    m = G.shape[0]
    for b in range(M):
        out[b] = 0.0
    for a in range(M):
        la = lam[a]
        if la == 0.0:
            continue
        for b in range(M):
            w = K0[a, b]
            for j in range(m):
                w += u[j] * G[j, a, b]
            out[b] += w * la


@numba.njit(cache=True)
def _bilinear(A, y, x):
    """``y^T A x``."""
    acc = 0.0
    for a in range(A.shape[0]):
        ya = y[a]
        if ya == 0.0:
            continue
        row = 0.0
        for b in range(A.shape[1]):
            row += A[a, b] * x[b]
        acc += ya * row
    return acc


@numba.njit(cache=True)
def _rmatvec(A, y, out):
    n, m = A.shape
    for k in range(m):
        out[k] = 0.0
    for i in range(n):
        yi = y[i]
        if yi != 0.0:
            for k in range(m):
                out[k] += A[i, k] * yi


@numba.njit(cache=True)
def objective(model, did, rule, imap, ci, si, K0, G, dt, nodes, weights,
              kind, q, qe, r, re, Q, R, Qp, psid,
              x0, U, want_grad, grad, Xout):
    """Total cost of the input sequence ``U`` ((H+1) x m) from ``x0``.

    Returns ``(value, fail_step)``; ``fail_step >= 0`` flags a non-finite or
    degenerate rollout at that prediction step. States go to ``Xout``.
    """
    H1, m = U.shape
    n = x0.shape[0]
    M = K0.shape[0]
    X = Xout
    PSI = np.zeros((H1, M))
    PHI = np.zeros((H1, M))
    JX = np.zeros((H1, n, n))
    JU = np.zeros((H1, n, m))
    jac_l = np.empty((M, n))
    jac_r = np.empty((n, M))
    gx = np.empty(n)
    gpsi = np.empty(M)
    gu = np.empty(m)
    need_lift = model != NOMINAL or kind == DS
    value = 0.0

    X[0, :] = x0
    if model == SURR_NOPROJ:
        lift_jac_into(did, x0, PSI[0], jac_l, False)
    for k in range(H1):
        if model == SURR_NOPROJ:
            if k > 0:
                if not reproject_into(rule, imap, ci, si, PSI[k], X[k], jac_r, False):
                    return np.inf, k
        elif need_lift:
            lift_jac_into(did, X[k], PSI[k], jac_l, False)
        value += stage_kernel(kind, X[k], PSI[k], U[k], q, qe, r, re, Q, R, Qp, psid,
                              gx, gpsi, gu)
        if not np.isfinite(value):
            return np.inf, k
        if k == H1 - 1:
            break
        if model == NOMINAL:
            if n == 3:
                kin_step_jac(X[k], U[k], dt, X[k + 1], JX[k], JU[k])
            else:
                dyn_step_jac(X[k], U[k], dt, nodes, weights, X[k + 1], JX[k], JU[k])
        else:
            _apply(K0, G, U[k], PSI[k], PHI[k + 1])
            if model == SURR_NOPROJ:
                PSI[k + 1, :] = PHI[k + 1]
            elif not reproject_into(rule, imap, ci, si, PHI[k + 1], X[k + 1], jac_r, False):
                return np.inf, k + 1
        for i in range(n):
            if not np.isfinite(X[k + 1, i]):
                return np.inf, k + 1

    if not want_grad:
        return value, -1

    # adjoint sweep
    lam = np.zeros(n)       # dJ/dX[k+1]  (state models)
    lamp = np.zeros(M)      # dJ/dPSI[k+1] (lifted model)
    newlam = np.zeros(n)
    newlamp = np.zeros(M)
    mu = np.zeros(M)
    tmpM = np.zeros(M)
    tmpM2 = np.zeros(M)
    for k in range(H1 - 1, -1, -1):
        stage_kernel(kind, X[k], PSI[k], U[k], q, qe, r, re, Q, R, Qp, psid, gx, gpsi, gu)
        for j in range(m):
            grad[k, j] = gu[j]
        if model == SURR_NOPROJ:
            # dJ/dPSI[k] = Dpi^T gx (or gpsi) + Kk^T lamp
            if kind == DS:
                newlamp[:] = gpsi
            else:
                if k > 0:
                    reproject_into(rule, imap, ci, si, PSI[k], X[k], jac_r, True)
                    _rmatvec(jac_r, gx, newlamp)
                else:
                    newlamp[:] = 0.0
            if k < H1 - 1:
                _apply_t(K0, G, U[k], lamp, tmpM)
                newlamp += tmpM
                for j in range(m):
                    grad[k, j] += _bilinear(G[j], lamp, PSI[k])
            lamp[:] = newlamp
            continue
        # state-based models: dJ/dX[k]
        newlam[:] = gx
        if need_lift and (kind == DS or model == SURR_PROJ):
            lift_jac_into(did, X[k], PSI[k], jac_l, True)
        if kind == DS:
            _rmatvec(jac_l, gpsi, tmpM[:n])
            for i in range(n):
                newlam[i] += tmpM[i]
        if k < H1 - 1:
            if model == NOMINAL:
                for i in range(n):
                    acc = 0.0
                    for a in range(n):
                        acc += JX[k, a, i] * lam[a]
                    newlam[i] += acc
                for j in range(m):
                    acc = 0.0
                    for a in range(n):
                        acc += JU[k, a, j] * lam[a]
                    grad[k, j] += acc
            else:
                reproject_into(rule, imap, ci, si, PHI[k + 1], X[k + 1], jac_r, True)
                _rmatvec(jac_r, lam, mu)             # dJ/dPHI[k+1]
                _apply_t(K0, G, U[k], mu, tmpM)     # dJ/dPSI[k]
                _rmatvec(jac_l, tmpM, tmpM2[:n])     # dJ/dX[k]
                for i in range(n):
                    newlam[i] += tmpM2[i]
                for j in range(m):
                    grad[k, j] += _bilinear(G[j], mu, PSI[k])
        lam[:] = newlam
    return value, -1


@numba.njit(cache=True)
def solve(model, did, rule, imap, ci, si, K0, G, dt, nodes, weights,
          kind, q, qe, r, re, Q, R, Qp, psid,
          x0, U0, lo, hi, maxit, tol, c_armijo, shrink, max_ls):
    """Spectral projected gradient with Armijo backtracking along the projection arc.

    Variables are scaled by the box half-widths. Returns
    ``(U, value, iterations, converged, fail_step, X)``.
    """
    H1, m = U0.shape
    n = x0.shape[0]
    X = np.zeros((H1, n))
    Xt = np.zeros((H1, n))
    scale = 0.5 * (hi - lo)
    U = np.empty_like(U0)
    for k in range(H1):
        for j in range(m):
            U[k, j] = min(max(U0[k, j], lo[j]), hi[j])
    g = np.zeros_like(U)
    gt = np.zeros_like(U)
    Ut = np.empty_like(U)
    D = np.empty_like(U)
    f, fail = objective(model, did, rule, imap, ci, si, K0, G, dt, nodes, weights,
                        kind, q, qe, r, re, Q, R, Qp, psid, x0, U, True, g, X)
    if fail >= 0:
        return U, f, 0, False, fail, X
    alpha = -1.0
    it = 0
    converged = False
    while it < maxit:
        # projected gradient in scaled coordinates: w = u / scale, dJ/dw = g * scale
        pgn = 0.0
        for k in range(H1):
            for j in range(m):
                s = scale[j]
                w = U[k, j] - s * s * g[k, j]
                w = min(max(w, lo[j]), hi[j])
                pgn = max(pgn, abs(w - U[k, j]) / s)
        if pgn <= tol:
            converged = True
            break
        if alpha < 0.0:
            alpha = 1.0 / max(pgn, 1e-12)
            alpha = min(alpha, 1.0)
        gd = 0.0
        for k in range(H1):
            for j in range(m):
                s = scale[j]
                w = U[k, j] - alpha * s * s * g[k, j]
                w = min(max(w, lo[j]), hi[j])
                D[k, j] = w - U[k, j]
                gd += g[k, j] * D[k, j]
        t = 1.0
        accepted = False
        ft = np.inf
        for ls in range(max_ls):
            for k in range(H1):
                for j in range(m):
                    Ut[k, j] = U[k, j] + t * D[k, j]
            ft, fl = objective(model, did, rule, imap, ci, si, K0, G, dt, nodes, weights,
                               kind, q, qe, r, re, Q, R, Qp, psid, x0, Ut, ls == 0, gt, Xt)
            if fl < 0 and ft <= f + c_armijo * t * gd:
                accepted = True
                if ls > 0:
                    objective(model, did, rule, imap, ci, si, K0, G, dt, nodes, weights,
                              kind, q, qe, r, re, Q, R, Qp, psid, x0, Ut, True, gt, Xt)
                break
            t *= shrink
        it += 1
        if not accepted:
            break
        # Barzilai-Borwein step in scaled coordinates
        ss = 0.0
        sy = 0.0
        for k in range(H1):
            for j in range(m):
                s = scale[j]
                dw = (Ut[k, j] - U[k, j]) / s
                dy = (gt[k, j] - g[k, j]) * s
                ss += dw * dw
                sy += dw * dy
        if sy > 1e-300:
            alpha = min(max(ss / sy, 1e-12), 1e12)
        else:
            alpha = 1e12
        U[:, :] = Ut
        g[:, :] = gt
        X[:, :] = Xt
        f = ft
    return U, f, it, converged, -1, X
