"""Largest singular value of a matrix-free linear map."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, LinearOperator, eigsh

from .exceptions import ConvergenceError

logger = logging.getLogger(__name__)

POWER_TOL = 1e-12
CERTIFICATE = 1e-10
MAX_ITER = 100_000
DENSE_LIMIT = 256


@dataclass(frozen=True)
class NormResult:
    value: float
    iterations: int
    residual: float

    @property
    def certified(self):
        return self.residual <= CERTIFICATE * self.value or self.value == 0.0

    def to_dict(self):
        return {"value": self.value, "iterations": self.iterations, "residual": self.residual}


def _dense(matvec, n):
    cols = [matvec(e) for e in np.eye(n)]
    return np.column_stack(cols) if cols else np.zeros((0, 0))


def _start_vector(matvec, rmatvec, n, seed):
    """Deterministic approximation of the top right singular vector."""
    if n <= DENSE_LIMIT:
        B = _dense(matvec, n)
        _, _, vt = np.linalg.svd(B)
        return vt[0]
    gram = LinearOperator((n, n), matvec=lambda x: rmatvec(matvec(x)), dtype=np.float64)
    v0 = np.random.default_rng(seed).standard_normal(n)
    try:
        _, vecs = eigsh(gram, k=1, which="LA", v0=v0, tol=1e-14, maxiter=20 * n)
        return vecs[:, 0]
    except (ArpackNoConvergence, ArpackError) as exc:  # pragma: no cover - rare
        logger.warning("Lanczos warm start failed (%s); falling back to a random start", exc)
        return v0


def top_singular_value(matvec, rmatvec, n, tol=POWER_TOL, max_iter=MAX_ITER,
                       warm_start=True, seed=0):
    """Power iteration on B^T B with a residual certificate.

    ``matvec`` applies B, ``rmatvec`` applies B^T.  Iteration stops when the
    Rayleigh quotient moves by less than ``tol`` (relative) and the residual
    ``|B^T B x - s^2 x| / s`` is at most ``1e-10 * s``.
    """
    if warm_start:
        x = _start_vector(matvec, rmatvec, n, seed)
    else:
        x = np.random.default_rng(seed).standard_normal(n)
    nx = np.linalg.norm(x)
    if nx == 0:
        x = np.ones(n)
        nx = np.linalg.norm(x)
    x = x / nx
    lam_prev = None
    for it in range(1, max_iter + 1):
        y = matvec(x)
        s = float(np.linalg.norm(y))
        if s == 0.0:
            # the start vector is the top singular vector, so this means B == 0
            return NormResult(0.0, it, 0.0)
        z = rmatvec(y)
        lam = s * s
        residual = float(np.linalg.norm(z - lam * x)) / s
        if (lam_prev is not None and abs(lam - lam_prev) <= tol * lam
                and residual <= CERTIFICATE * s):
            return NormResult(s, it, residual)
        lam_prev = lam
        x = z / np.linalg.norm(z)
    raise ConvergenceError(
        f"power iteration did not certify within {max_iter} iterations (residual {residual:.3e}, value {s:.6g})"
    )


def spectral_norm(M):
    """Dense largest singular value."""
    M = np.asarray(M, dtype=np.float64)
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))
