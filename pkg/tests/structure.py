"""Test-side parametrisation of constrained covariance families.

Each code is built from raw factors (log volumes, log shapes, skew
generators of rotations), independently of the package, so the number of
free parameters is the rank of the Jacobian of this map and the M-step can
be checked against a numerical optimiser over the same family.
"""

import numpy as np
from scipy.linalg import expm


def _sizes(code, d, K):
    vol, shape, orient = code
    if shape == "I":
        orient = "I"
    nv = 1 if vol == "E" else K
    ns = 0 if shape == "I" else (d if shape == "E" else K * d)
    no = 0 if orient == "I" else (d * (d - 1) // 2) * (1 if orient == "E" else K)
    return nv, ns, no


def n_raw(code, d, K):
    return sum(_sizes(code, d, K))


def _rotation(theta, d):
    A = np.zeros((d, d))
    A[np.triu_indices(d, 1)] = theta
    return expm(A - A.T)


def build(code, d, K, theta):
    """Covariances (K, d, d) from a raw parameter vector."""
    vol, shape, orient = code
    if shape == "I":
        orient = "I"
    nv, ns, no = _sizes(code, d, K)
    theta = np.asarray(theta, dtype=float)
    v, s, o = theta[:nv], theta[nv:nv + ns], theta[nv + ns:]
    lam = np.exp(np.broadcast_to(v, (K,)) if nv == 1 else v)
    if shape == "I":
        shapes = np.ones((K, d))
    else:
        raw = np.tile(s, (K, 1)) if shape == "E" else s.reshape(K, d)
        raw = raw - raw.mean(axis=1, keepdims=True)
        shapes = np.exp(raw)
    m = d * (d - 1) // 2
    out = np.empty((K, d, d))
    for k in range(K):
        if orient == "I":
            U = np.eye(d)
        elif orient == "E":
            U = _rotation(o[:m], d)
        else:
            U = _rotation(o[k * m:(k + 1) * m], d)
        out[k] = lam[k] * (U * shapes[k]) @ U.T
    return out


def jacobian_rank(code, d, K, rng, h=1e-6):
    theta = rng.normal(scale=0.5, size=n_raw(code, d, K))
    if theta.size == 0:
        return 0
    cols = []
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        cols.append(((build(code, d, K, theta + e) - build(code, d, K, theta - e)) / (2 * h)).ravel())
    J = np.array(cols).T
    s = np.linalg.svd(J, compute_uv=False)
    return int((s > 1e-7 * s[0]).sum())


def satisfies(code, covs, tol=1e-9):
    """Whether a stack of covariances has exactly the structure a code imposes."""
    K, d, _ = covs.shape
    vol, shape, orient = code
    scale = max(1.0, float(np.abs(covs).max()))
    if not np.allclose(covs, np.swapaxes(covs, 1, 2), atol=tol * scale, rtol=0):
        return False
    if np.any(np.linalg.eigvalsh(covs)[:, 0] <= 0):
        return False
    if shape == "I" or orient == "I":
        off = covs - np.array([np.diag(np.diag(c)) for c in covs])
        if np.abs(off).max() > tol * scale:
            return False
    vals = np.linalg.eigvalsh(covs)[:, ::-1]
    lam = np.exp(np.mean(np.log(vals), axis=1))
    shapes = vals / lam[:, None]
    if shape == "I" and not np.allclose(shapes, 1.0, rtol=0, atol=tol):
        return False
    if vol == "E" and not np.allclose(lam, lam[0], rtol=tol, atol=0):
        return False
    if shape == "E":
        if orient == "I":
            diag = np.diagonal(covs, axis1=1, axis2=2)
            diag = diag / np.exp(np.mean(np.log(diag), axis=1))[:, None]
            if not np.allclose(diag, diag[0], rtol=tol * 10, atol=0):
                return False
        elif not np.allclose(shapes, shapes[0], rtol=tol * 10, atol=0):
            return False
    if orient == "E" and shape != "I" and vol == "E" and shape == "E":
        if not np.allclose(covs, covs[0], rtol=0, atol=tol * scale):
            return False
    return True
