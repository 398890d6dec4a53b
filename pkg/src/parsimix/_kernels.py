"""Compiled EM chain.

A loop-level twin of the array code in ``em``, ``covmodels`` and ``priors``:
same updates, same stopping rule, same failure conditions, reported through
a status code instead of exceptions. The array implementation stays the
reference; tests hold the two together.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .core import FITTED_CODES, PD_REL_TOL
from .covmodels import NK_MIN, VEI_MAX_ITER, VEI_TOL

CODE_IDS = {code: i for i, code in enumerate(FITTED_CODES)}
EII, VII, EEI, VEI, EVI, VVI, EEE, EEV, VEV, VVV = range(10)
DIAGONAL = (EII, VII, EEI, VEI, EVI, VVI)

OK = 0
EMPTY = 1
SINGULAR = 2
NONFINITE = 3

LOG_2PI = math.log(2.0 * math.pi)


@njit(cache=True)
def _cholesky(A, L):
    """Lower Cholesky factor into ``L``; False if ``A`` is not numerically PD."""
    d = A.shape[0]
    for j in range(d):
        s = A[j, j]
        for p in range(j):
            s -= L[j, p] * L[j, p]
        if not s > 0.0 or not np.isfinite(s):
            return False
        L[j, j] = math.sqrt(s)
        for i in range(j + 1, d):
            t = A[i, j]
            for p in range(j):
                t -= L[i, p] * L[j, p]
            L[i, j] = t / L[j, j]
        for i in range(j):
            L[i, j] = 0.0
    return True


@njit(cache=True)
def _forward(L, b, y):
    d = L.shape[0]
    for i in range(d):
        t = b[i]
        for p in range(i):
            t -= L[i, p] * y[p]
        y[i] = t / L[i, i]


@njit(cache=True)
def _geo_normalise(v, out):
    """Write ``v / g`` into ``out`` and return ``g``, the geometric mean of ``v``."""
    d = v.shape[0]
    s = 0.0
    for j in range(d):
        s += math.log(v[j])
    g = math.exp(s / d)
    for j in range(d):
        out[j] = v[j] / g
    return g


def features(X):
    """Per-row features ``[1, x, lower triangle of x x^T]`` of centred data.

    Sufficient statistics and Gaussian log densities are both linear in
    them, so each becomes one matrix product.
    """
    n, d = X.shape
    F = np.empty((n, 1 + d + d * (d + 1) // 2))
    F[:, 0] = 1.0
    F[:, 1 : 1 + d] = X
    q = 1 + d
    for a in range(d):
        for b in range(a + 1):
            F[:, q] = X[:, a] * X[:, b]
            q += 1
    return F


@njit(cache=True)
def _stats(F, d, w, z, nk, xbar, W):
    """Weighted counts, means and scatters; ``W = sum w z x x^T - nk xbar xbar^T``."""
    n, K = z.shape
    zw = np.empty((n, K))
    for i in range(n):
        for k in range(K):
            zw[i, k] = w[i] * z[i, k]
    S = np.dot(zw.T, F)
    for k in range(K):
        t = S[k, 0]
        nk[k] = t
        for j in range(d):
            xbar[j, k] = S[k, 1 + j] / t if t > 0.0 else 0.0
        q = 1 + d
        for a in range(d):
            for b in range(a + 1):
                v = S[k, q] - t * xbar[a, k] * xbar[b, k]
                W[k, a, b] = v
                W[k, b, a] = v
                q += 1


@njit(cache=True)
def _alternate(cnt, vals, lam, shape):
    """Volumes and common shape for VEI/VEV given per-component eigen/diagonal values."""
    K, d = vals.shape
    for k in range(K):
        s = 0.0
        for j in range(d):
            s += vals[k, j]
        lam[k] = s / (d * cnt[k])
    prev = np.inf
    acc = np.empty(d)
    for _ in range(VEI_MAX_ITER):
        for j in range(d):
            acc[j] = 0.0
            for k in range(K):
                acc[j] += vals[k, j] / lam[k]
        _geo_normalise(acc, shape)
        crit = 0.0
        for k in range(K):
            s = 0.0
            for j in range(d):
                s += vals[k, j] / shape[j]
            lam[k] = s / (d * cnt[k])
            crit += cnt[k] * d * math.log(lam[k]) + s / lam[k]
        if np.isfinite(prev) and abs(crit - prev) <= VEI_TOL * abs(crit):
            break
        prev = crit


@njit(cache=True)
def _descending_eigh(S):
    vals, vecs = np.linalg.eigh(S)
    return vals[::-1].copy(), vecs[:, ::-1].copy()


@njit(cache=True)
def _covariance(code, cnt, S, cov):
    """Constrained covariance update from counts ``cnt`` and scatters ``S``."""
    K, d = S.shape[0], S.shape[1]
    N = 0.0
    for k in range(K):
        if not (np.isfinite(cnt[k]) and cnt[k] >= NK_MIN):
            return EMPTY
        N += cnt[k]
        for a in range(d):
            for b in range(d):
                if not np.isfinite(S[k, a, b]):
                    return SINGULAR
    cov[:] = 0.0
    diag = np.empty((K, d))
    for k in range(K):
        for j in range(d):
            diag[k, j] = S[k, j, j]

    if code == EII:
        s2 = 0.0
        for k in range(K):
            for j in range(d):
                s2 += diag[k, j]
        s2 /= N * d
        if not (s2 > 0.0 and np.isfinite(s2)):
            return SINGULAR
        for k in range(K):
            for j in range(d):
                cov[k, j, j] = s2
    elif code == VII:
        for k in range(K):
            s2 = 0.0
            for j in range(d):
                s2 += diag[k, j]
            s2 /= cnt[k] * d
            if not (s2 > 0.0 and np.isfinite(s2)):
                return SINGULAR
            for j in range(d):
                cov[k, j, j] = s2
    elif code == EEI:
        for j in range(d):
            s = 0.0
            for k in range(K):
                s += diag[k, j]
            s /= N
            if not (s > 0.0 and np.isfinite(s)):
                return SINGULAR
            for k in range(K):
                cov[k, j, j] = s
    elif code == VVI:
        for k in range(K):
            for j in range(d):
                s = diag[k, j] / cnt[k]
                if not (s > 0.0 and np.isfinite(s)):
                    return SINGULAR
                cov[k, j, j] = s
    elif code == EVI:
        for k in range(K):
            for j in range(d):
                if not (diag[k, j] > 0.0 and np.isfinite(diag[k, j])):
                    return SINGULAR
        g = np.empty(K)
        shapes = np.empty((K, d))
        total = 0.0
        for k in range(K):
            g[k] = _geo_normalise(diag[k], shapes[k])
            total += g[k]
        lam = total / N
        for k in range(K):
            for j in range(d):
                cov[k, j, j] = lam * shapes[k, j]
    elif code == VEI:
        for k in range(K):
            for j in range(d):
                if not (diag[k, j] > 0.0 and np.isfinite(diag[k, j])):
                    return SINGULAR
        lam = np.empty(K)
        shape = np.empty(d)
        _alternate(cnt, diag, lam, shape)
        for k in range(K):
            for j in range(d):
                cov[k, j, j] = lam[k] * shape[j]
    elif code == EEE:
        for a in range(d):
            for b in range(d):
                s = 0.0
                for k in range(K):
                    s += S[k, a, b]
                for k in range(K):
                    cov[k, a, b] = s / N
    elif code == VVV:
        for k in range(K):
            for a in range(d):
                for b in range(d):
                    cov[k, a, b] = S[k, a, b] / cnt[k]
    else:
        omegas = np.empty((K, d))
        vecs = np.empty((K, d, d))
        for k in range(K):
            o, v = _descending_eigh(S[k])
            for j in range(d):
                if not (o[j] > 0.0 and np.isfinite(o[j])):
                    return SINGULAR
                omegas[k, j] = o[j]
            vecs[k] = v
        shape = np.empty(d)
        lam = np.empty(K)
        if code == EEV:
            acc = np.zeros(d)
            for k in range(K):
                for j in range(d):
                    acc[j] += omegas[k, j]
            g = _geo_normalise(acc, shape)
            for k in range(K):
                lam[k] = g / N
        else:
            _alternate(cnt, omegas, lam, shape)
        for k in range(K):
            for a in range(d):
                for b in range(d):
                    s = 0.0
                    for j in range(d):
                        s += vecs[k, a, j] * shape[j] * vecs[k, b, j]
                    cov[k, a, b] = lam[k] * s

    for k in range(K):
        for a in range(d):
            for b in range(a):
                m = 0.5 * (cov[k, a, b] + cov[k, b, a])
                cov[k, a, b] = m
                cov[k, b, a] = m
        tr = 0.0
        for j in range(d):
            tr += cov[k, j, j]
        if code <= VVI:
            smallest = np.inf
            for j in range(d):
                smallest = min(smallest, cov[k, j, j])
        else:
            smallest = np.linalg.eigvalsh(cov[k])[0]
        if not smallest > PD_REL_TOL * tr / d:
            return SINGULAR
    return OK


@njit(cache=True)
def _mstep(F, d, w, z, code, has_prior, mu_p, kappa, nu, lam_p, pro, mean, cov):
    K = z.shape[1]
    nk = np.empty(K)
    xbar = np.empty((d, K))
    W = np.empty((K, d, d))
    _stats(F, d, w, z, nk, xbar, W)
    total = 0.0
    for k in range(K):
        total += nk[k]
    if not has_prior:
        for k in range(K):
            if not nk[k] >= NK_MIN:
                return EMPTY
            pro[k] = nk[k] / total
            for j in range(d):
                mean[j, k] = xbar[j, k]
        return _covariance(code, nk, W, cov)
    m = np.empty(K)
    R = np.empty((K, d, d))
    diff = np.empty(d)
    for k in range(K):
        if not nk[k] > 0.0:
            return EMPTY
        pro[k] = nk[k] / total
        shrink = kappa * nk[k] / (nk[k] + kappa)
        for j in range(d):
            diff[j] = xbar[j, k] - mu_p[j]
            mean[j, k] = (xbar[j, k] * nk[k] + kappa * mu_p[j]) / (nk[k] + kappa)
        for a in range(d):
            for b in range(d):
                R[k, a, b] = lam_p[a, b] + W[k, a, b] + shrink * diff[a] * diff[b]
        m[k] = nk[k] + nu + d + 2
    return _covariance(code, m, R, cov)


@njit(cache=True)
def _estep(F, d, w, pro, mean, cov, chol, z):
    """Fill ``z`` and ``chol``; return (status, loglik).

    The log density of component k is a linear form in the row features,
    with coefficients from the precision ``P = L^-T L^-1``.
    """
    n, K = z.shape
    G = np.zeros((K, F.shape[1]))
    linv = np.zeros((d, d))
    P = np.empty((d, d))
    Pm = np.empty(d)
    e = np.zeros(d)
    col = np.empty(d)
    for k in range(K):
        if not _cholesky(cov[k], chol[k]):
            return SINGULAR, 0.0
        half_logdet = 0.0
        for j in range(d):
            half_logdet += math.log(chol[k, j, j])
        for c in range(d):
            e[:] = 0.0
            e[c] = 1.0
            _forward(chol[k], e, col)
            for j in range(d):
                linv[j, c] = col[j]
        for a in range(d):
            for b in range(d):
                t = 0.0
                for j in range(d):
                    t += linv[j, a] * linv[j, b]
                P[a, b] = t
        quad = 0.0
        for a in range(d):
            t = 0.0
            for b in range(d):
                t += P[a, b] * mean[b, k]
            Pm[a] = t
            quad += t * mean[a, k]
        G[k, 0] = math.log(pro[k]) - 0.5 * d * LOG_2PI - half_logdet - 0.5 * quad
        for a in range(d):
            G[k, 1 + a] = Pm[a]
        q = 1 + d
        for a in range(d):
            for b in range(a + 1):
                G[k, q] = -0.5 * P[a, a] if a == b else -P[a, b]
                q += 1
    logd = np.dot(F, G.T)
    ll = 0.0
    for i in range(n):
        top = -np.inf
        for k in range(K):
            if logd[i, k] > top:
                top = logd[i, k]
        if top == -np.inf:
            top = 0.0
        tot = 0.0
        for k in range(K):
            ez = math.exp(logd[i, k] - top)
            z[i, k] = ez
            tot += ez
        inv = 1.0 / tot
        for k in range(K):
            z[i, k] *= inv
        ll += w[i] * (math.log(tot) + top)
    return OK, ll


@njit(cache=True)
def _log_prior(mean, chol, mu_p, kappa, nu, chol_scale, iw_const):
    d, K = mean.shape
    r = np.empty(d)
    y = np.empty(d)
    total = 0.0
    for k in range(K):
        logdet = 0.0
        for j in range(d):
            logdet += 2.0 * math.log(chol[k, j, j])
        for j in range(d):
            r[j] = mean[j, k] - mu_p[j]
        _forward(chol[k], r, y)
        maha = 0.0
        for j in range(d):
            maha += y[j] * y[j]
        trace = 0.0
        for c in range(d):
            for j in range(d):
                r[j] = chol_scale[j, c]
            _forward(chol[k], r, y)
            for j in range(d):
                trace += y[j] * y[j]
        gauss = -0.5 * d * LOG_2PI - 0.5 * (logdet - d * math.log(kappa)) - 0.5 * kappa * maha
        iw = iw_const - 0.5 * (nu + d + 1) * logdet - 0.5 * trace
        total += gauss + iw
    return total


@njit(cache=True)
def run_chain(
    F, d, w, z, pro, mean, cov, from_params, code,
    has_prior, mu_p, kappa, nu, lam_p, chol_scale, iw_const,
    rel_tol, max_iter, trace,
):
    """EM chain in place.

    Starts from responsibilities ``z`` unless ``from_params``, in which case
    ``pro``, ``mean`` and ``cov`` are the start. Returns
    ``(status, iterations, converged, n_trace, loglik, objective)``.
    """
    K = pro.shape[0]
    chol = np.zeros((K, d, d))
    if not from_params:
        st = _mstep(F, d, w, z, code, has_prior, mu_p, kappa, nu, lam_p, pro, mean, cov)
        if st != OK:
            return st, 0, False, 0, 0.0, 0.0
    iterations = 0
    n_trace = 0
    converged = False
    prev = 0.0
    ll = 0.0
    obj = 0.0
    while True:
        st, ll = _estep(F, d, w, pro, mean, cov, chol, z)
        if st != OK:
            return st, iterations, False, n_trace, ll, obj
        obj = ll
        if has_prior:
            obj += _log_prior(mean, chol, mu_p, kappa, nu, chol_scale, iw_const)
        if not np.isfinite(obj):
            return NONFINITE, iterations, False, n_trace, ll, obj
        trace[n_trace] = obj
        n_trace += 1
        if n_trace > 1 and abs(obj - prev) / (1.0 + abs(obj)) < rel_tol:
            converged = True
            break
        if iterations >= max_iter:
            break
        prev = obj
        st = _mstep(F, d, w, z, code, has_prior, mu_p, kappa, nu, lam_p, pro, mean, cov)
        if st != OK:
            return st, iterations, False, n_trace, ll, obj
        iterations += 1
    return OK, iterations, converged, n_trace, ll, obj
