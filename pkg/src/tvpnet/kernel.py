"""Squared-exponential GP covariances with jittered Cholesky factors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

DEFAULT_JITTER = 1e-6
MAX_JITTER = 1e-4


class KernelError(linalg.LinAlgError):
    """Raised when a kernel cannot be factorized even at the maximum jitter."""


@dataclass(frozen=True)
class KernelMatrix:
    grid: np.ndarray
    kappa: float
    K: np.ndarray
    chol: np.ndarray
    jitter_used: float

    @property
    def n(self) -> int:
        return self.grid.shape[0]

    def whiten(self, v):
        """Return ``chol^{-1} v`` (column-wise for 2-D input)."""
        return linalg.solve_triangular(self.chol, v, lower=True, check_finite=False)

    def quad_form(self, v) -> float:
        """``v^T (K + jitter I)^{-1} v`` through the triangular factor."""
        w = self.whiten(np.asarray(v, dtype=float))
        return float(np.dot(w, w))


def se_covariance(grid, kappa: float) -> np.ndarray:
    t = np.asarray(grid, dtype=float)
    d = t[:, None] - t[None, :]
    return np.exp(-kappa * d * d)


def _condition_summary(K: np.ndarray) -> str:
    eig = np.linalg.eigvalsh(K)
    return f"min eigenvalue {eig[0]:.3e}, max eigenvalue {eig[-1]:.3e}"


def build_kernel(grid, kappa: float, jitter: float = DEFAULT_JITTER) -> KernelMatrix:
    """Build ``K_ab = exp(-kappa (t_a - t_b)^2)`` and factor ``K + jitter I``.

    On factorization failure the jitter is multiplied by 10 until it
    exceeds ``MAX_JITTER``; then :class:`KernelError` is raised.
    """
    t = np.array(grid, dtype=float).ravel()
    if t.size == 0:
        raise ValueError("time grid is empty")
    if not np.all(np.isfinite(t)):
        raise ValueError("time grid must be finite")
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise ValueError("time grid must be strictly increasing")
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    if jitter < 0:
        raise ValueError(f"jitter must be non-negative, got {jitter}")

    K = se_covariance(t, kappa)
    eye = np.eye(t.size)
    jit = float(jitter)
    while True:
        try:
            L = linalg.cholesky(K + jit * eye, lower=True, check_finite=False)
        except linalg.LinAlgError:
            L = None
        if L is not None:
            break
        jit = jit * 10.0 if jit > 0 else 1e-10
        if jit > MAX_JITTER * (1 + 1e-9):
            raise KernelError(
                f"Cholesky failed for kappa={kappa}, N={t.size} up to jitter "
                f"{MAX_JITTER:g}; {_condition_summary(K)}"
            )
    t.setflags(write=False)
    K.setflags(write=False)
    L.setflags(write=False)
    return KernelMatrix(grid=t, kappa=float(kappa), K=K, chol=L, jitter_used=jit)


def gp_draw(kernel: KernelMatrix, scale: float = 1.0, rng=None, size=None) -> np.ndarray:
    """Draw from ``N(0, scale * (K + jitter I))``.

    ``size`` adds leading dimensions, e.g. ``size=(V,)`` returns ``(V, N)``.
    """
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    rng = np.random.default_rng(rng)
    shape = (kernel.n,) if size is None else tuple(np.atleast_1d(size)) + (kernel.n,)
    z = rng.standard_normal(shape)
    return np.sqrt(scale) * (z @ kernel.chol.T)


def apply_precision(kernel: KernelMatrix, v) -> np.ndarray:
    """Solve ``(K + jitter I) x = v`` with two triangular solves."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != kernel.n:
        raise ValueError(f"vector length {v.shape[0]} does not match kernel size {kernel.n}")
    w = linalg.solve_triangular(kernel.chol, v, lower=True, check_finite=False)
    return linalg.solve_triangular(kernel.chol, w, lower=True, trans="T", check_finite=False)
