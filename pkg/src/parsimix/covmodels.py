"""Parsimonious covariance family: codes, parameter counts, eigen-decomposition, M-steps.

A component covariance is written ``lambda_k * U_k @ Delta_k @ U_k.T`` with a
volume scalar, a unit-determinant diagonal shape and an orthogonal
orientation. The three letters of a model code say whether each factor is
Equal across components, free to Vary, or the Identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    ALL_CODES,
    FITTED_CODES,
    PD_REL_TOL,
    DimensionMismatchError,
    ModelCodeError,
    SingularCovarianceError,
)

NK_MIN = 1e-10
VEI_TOL = 1e-8
VEI_MAX_ITER = 100

_DESCRIPTIONS = {
    "EII": "spherical, equal volume",
    "VII": "spherical, varying volume",
    "EEI": "diagonal, equal volume and shape",
    "VEI": "diagonal, varying volume, equal shape",
    "EVI": "diagonal, equal volume, varying shape",
    "VVI": "diagonal, varying volume and shape",
    "EEE": "ellipsoidal, equal volume, shape and orientation",
    "EVE": "ellipsoidal, equal volume and orientation",
    "VEE": "ellipsoidal, equal shape and orientation",
    "VVE": "ellipsoidal, equal orientation",
    "EEV": "ellipsoidal, equal volume and shape",
    "VEV": "ellipsoidal, equal shape",
    "EVV": "ellipsoidal, equal volume",
    "VVV": "ellipsoidal, varying volume, shape and orientation",
}


@dataclass(frozen=True)
class ModelConstraints:
    code: str
    volume: str
    shape: str
    orientation: str
    fitted: bool

    @property
    def description(self) -> str:
        return _DESCRIPTIONS[self.code]

    @property
    def diagonal(self) -> bool:
        return self.orientation == "I"

    @property
    def spherical(self) -> bool:
        return self.shape == "I"


@dataclass(frozen=True, eq=False)
class SufficientStats:
    """Weighted EM statistics: counts ``nk`` (K,), means ``xbar`` (d, K), scatters ``W`` (K, d, d)."""

    nk: np.ndarray
    xbar: np.ndarray
    W: np.ndarray

    @property
    def K(self) -> int:
        return self.nk.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]


def sufficient_stats(x: np.ndarray, z: np.ndarray, weights=None, outer=None) -> SufficientStats:
    """Sufficient statistics of an ``n x d`` array under responsibilities ``z``.

    ``weights`` are optional per-observation multipliers (weighted likelihood).
    ``outer`` may hold the precomputed row outer products ``x_i x_i^T`` as an
    (n, d*d) array; the scatter is then formed with one matrix product, which
    is only accurate when ``x`` is roughly centred.
    """
    zw = z if weights is None else z * weights[:, None]
    nk = zw.sum(axis=0)
    safe = np.where(nk > 0, nk, 1.0)
    xbar = (x.T @ zw) / safe
    xbar[:, nk <= 0] = 0.0
    if outer is None:
        diff = x[None, :, :] - xbar.T[:, None, :]
        W = np.matmul(np.swapaxes(diff * zw.T[:, :, None], 1, 2), diff)
    else:
        K, d = z.shape[1], x.shape[1]
        mt = xbar.T
        W = (zw.T @ outer).reshape(K, d, d) - nk[:, None, None] * (mt[:, :, None] * mt[:, None, :])
    W = 0.5 * (W + np.swapaxes(W, 1, 2))
    return SufficientStats(nk, xbar, W)


def parse_model_code(code: str) -> ModelConstraints:
    """Per-factor constraints of a three-letter model code.

    >>> parse_model_code("VVI").orientation
    'I'
    """
    c = str(code).upper()
    if c not in ALL_CODES:
        raise ModelCodeError(f"unknown model code {code!r}; valid codes: {', '.join(ALL_CODES)}")
    volume, shape, orientation = c
    if shape == "I":
        orientation = "I"
    return ModelConstraints(c, volume, shape, orientation, c in FITTED_CODES)


def covariance_param_count(code: str, d: int, K: int) -> int:
    c = parse_model_code(code).code
    rot = d * (d - 1) // 2
    table = {
        "EII": 1,
        "VII": K,
        "EEI": d,
        "VEI": K + (d - 1),
        "EVI": 1 + K * (d - 1),
        "VVI": K * d,
        "EEE": d * (d + 1) // 2,
        "EVE": 1 + K * (d - 1) + rot,
        "VEE": K + (d - 1) + rot,
        "VVE": K * d + rot,
        "EEV": 1 + (d - 1) + K * rot,
        "VEV": K + (d - 1) + K * rot,
        "EVV": 1 + K * (d - 1) + K * rot,
        "VVV": K * d * (d + 1) // 2,
    }
    return table[c]


def count_free_params(code: str, d: int, K: int) -> int:
    """Number of free parameters: weights, means and covariance factors."""
    if d < 1 or K < 1:
        raise ValueError("d and K must be positive")
    return (K - 1) + K * d + covariance_param_count(code, d, K)


def _canonical_eigh(sigma: np.ndarray):
    vals, vecs = np.linalg.eigh(sigma)
    d = vals.size
    for j in range(d):
        v = vecs[:, j]
        nz = np.flatnonzero(np.abs(v) > 1e-14)
        if nz.size and v[nz[0]] < 0:
            vecs[:, j] = -v
    scale = max(abs(vals[-1]), np.finfo(float).tiny)
    # decreasing eigenvalues; exact ties ordered by descending sign-fixed eigenvector
    rounded = np.round(vals / scale, 12)
    keys = [(-rounded[j],) + tuple(-vecs[:, j]) for j in range(d)]
    order = sorted(range(d), key=lambda j: keys[j])
    return vals[order], vecs[:, order]


def decompose_covariance(sigma: np.ndarray):
    """Split an SPD matrix into volume, shape and orientation.

    Returns
    -------
    lam : float
        ``det(sigma) ** (1/d)``.
    delta : ndarray (d, d)
        Diagonal of normalised eigenvalues in decreasing order, determinant 1.
    U : ndarray (d, d)
        Orthogonal eigenvectors, columns matched to ``delta``.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got shape {sigma.shape}")
    if not np.allclose(sigma, sigma.T, rtol=1e-10, atol=1e-12):
        raise SingularCovarianceError("matrix is not symmetric")
    d = sigma.shape[0]
    vals, vecs = _canonical_eigh(0.5 * (sigma + sigma.T))
    if vals[-1] <= PD_REL_TOL * np.trace(sigma) / d:
        raise SingularCovarianceError("matrix is not positive definite")
    lam = float(np.exp(np.mean(np.log(vals))))
    return lam, np.diag(vals / lam), vecs


def compose_covariance(lam: float, delta: np.ndarray, U: np.ndarray) -> np.ndarray:
    return lam * U @ delta @ U.T


def _diag_logdet_normalised(diag):
    """Return (|diag|^{1/d}, diag / |diag|^{1/d}) for a positive vector."""
    g = np.exp(np.mean(np.log(diag)))
    return g, diag / g


def _require(nk, W, code):
    bad = ~(np.isfinite(nk) & (nk >= NK_MIN))
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise SingularCovarianceError(f"{code}: component {k + 1} is empty (nk={nk[k]:.3g})", k + 1)
    if not np.isfinite(W).all():
        raise SingularCovarianceError(f"{code}: non-finite scatter")


def _positive(value, code, k=None):
    value = np.asarray(value)
    if not ((value > 0).all() and np.isfinite(value).all()):
        raise SingularCovarianceError(
            f"{code}: degenerate scatter" + (f" in component {k + 1}" if k is not None else ""),
            None if k is None else k + 1,
        )


def mstep_covariance(code: str, stats: SufficientStats, n=None) -> np.ndarray:
    """Constrained maximiser of ``sum_k -nk/2 log|S_k| - 1/2 tr(S_k^-1 W_k)``.

    ``n`` defaults to ``sum(nk)``. Returns a (K, d, d) array.
    """
    c = parse_model_code(code)
    if not c.fitted:
        raise ModelCodeError(f"model {c.code} has no closed-form M-step and is not fitted")
    nk = np.asarray(stats.nk, dtype=float)
    W = np.asarray(stats.W, dtype=float)
    K, d = W.shape[0], W.shape[1]
    n = float(nk.sum()) if n is None else float(n)
    _require(nk, W, c.code)
    eye = np.eye(d)
    out = np.empty((K, d, d))

    if c.code == "EII":
        s2 = np.trace(W.sum(axis=0)) / (n * d)
        _positive(s2, c.code)
        out[:] = s2 * eye
    elif c.code == "VII":
        s2 = np.trace(W, axis1=1, axis2=2) / (nk * d)
        _positive(s2, c.code)
        out[:] = s2[:, None, None] * eye
    elif c.code == "EEI":
        diag = np.diagonal(W.sum(axis=0)) / n
        _positive(diag, c.code)
        out[:] = np.diag(diag)
    elif c.code == "VVI":
        diags = np.diagonal(W, axis1=1, axis2=2) / nk[:, None]
        _positive(diags, c.code)
        out[:] = diags[:, :, None] * eye
    elif c.code == "EVI":
        diags = np.diagonal(W, axis1=1, axis2=2)
        _positive(diags, c.code)
        gk = np.exp(np.mean(np.log(diags), axis=1))
        lam = gk.sum() / n
        out[:] = (lam * diags / gk[:, None])[:, :, None] * eye
    elif c.code == "VEI":
        out[:] = _vei(nk, W, n)
    elif c.code == "EEE":
        S = W.sum(axis=0) / n
        out[:] = 0.5 * (S + S.T)
    elif c.code == "VVV":
        out[:] = W / nk[:, None, None]
    elif c.code == "EEV":
        omegas, vecs = _scatter_eigs(W, c.code)
        g, shape = _diag_logdet_normalised(omegas.sum(axis=0))
        out[:] = (g / n) * np.matmul(vecs * shape, np.swapaxes(vecs, 1, 2))
    elif c.code == "VEV":
        out[:] = _vev(nk, W, n)
    out = 0.5 * (out + np.swapaxes(out, 1, 2))
    if c.diagonal:
        smallest = np.diagonal(out, axis1=1, axis2=2).min(axis=1)
    else:
        smallest = np.linalg.eigvalsh(out)[:, 0]
    bad = smallest <= PD_REL_TOL * np.trace(out, axis1=1, axis2=2) / d
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise SingularCovarianceError(f"{c.code}: covariance of component {k + 1} is singular", k + 1)
    return out


def _scatter_eigs(W, code):
    vals, vecs = np.linalg.eigh(W)
    omegas = vals[:, ::-1]
    _positive(omegas, code)
    return omegas, vecs[:, :, ::-1]


def _vei(nk, W, n):
    """Alternate volumes given shape and shape given volumes until the criterion settles."""
    d = W.shape[1]
    diags = np.diagonal(W, axis1=1, axis2=2)
    _positive(diags, "VEI")
    lam = np.trace(W, axis1=1, axis2=2) / (d * nk)
    prev = np.inf
    for _ in range(VEI_MAX_ITER):
        _, shape = _diag_logdet_normalised((diags / lam[:, None]).sum(axis=0))
        lam = (diags / shape).sum(axis=1) / (d * nk)
        # complete-data criterion: sum_k nk d log(lam_k) + tr(W_k B^-1)/lam_k
        crit = float(np.sum(nk * d * np.log(lam) + (diags / shape).sum(axis=1) / lam))
        if np.isfinite(prev) and abs(crit - prev) <= VEI_TOL * abs(crit):
            break
        prev = crit
    return lam[:, None, None] * np.diag(shape)


def _vev(nk, W, n):
    d = W.shape[1]
    omegas, vecs = _scatter_eigs(W, "VEV")
    lam = omegas.sum(axis=1) / (d * nk)
    prev = np.inf
    for _ in range(VEI_MAX_ITER):
        _, shape = _diag_logdet_normalised((omegas / lam[:, None]).sum(axis=0))
        lam = (omegas / shape).sum(axis=1) / (d * nk)
        crit = float(np.sum(nk * d * np.log(lam) + (omegas / shape).sum(axis=1) / lam))
        if np.isfinite(prev) and abs(crit - prev) <= VEI_TOL * abs(crit):
            break
        prev = crit
    return lam[:, None, None] * np.matmul(vecs * shape, np.swapaxes(vecs, 1, 2))


def complete_data_criterion(covs: np.ndarray, stats: SufficientStats) -> float:
    """``sum_k -nk/2 log|S_k| - 1/2 tr(S_k^-1 W_k)``: the value an M-step maximises."""
    total = 0.0
    for k in range(covs.shape[0]):
        sign, logdet = np.linalg.slogdet(covs[k])
        total += -0.5 * stats.nk[k] * logdet - 0.5 * np.trace(np.linalg.solve(covs[k], stats.W[k]))
    return float(total)
