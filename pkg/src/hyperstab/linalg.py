"""Small dense symmetric matrices: Jacobi eigenvalues and definiteness tests."""

from __future__ import annotations

import numpy as np

OFF_TOL = 1e-14
MAX_SWEEPS = 100
DEFAULT_TOL = 1e-9


class ConvergenceError(RuntimeError):
    def __init__(self, sweeps: int, residual: float):
        self.sweeps = sweeps
        self.residual = residual
        super().__init__(f"Jacobi did not converge after {sweeps} sweeps (off-diagonal norm {residual:.3e})")


def sym(a) -> np.ndarray:
    """Symmetrize as (A + A^T)/2; accepts a single matrix or a stack."""
    a = np.asarray(a, dtype=float)
    if a.shape[-1] != a.shape[-2]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _off_norm(a: np.ndarray) -> np.ndarray:
    # summed directly: ||A||^2 - ||diag||^2 cancels catastrophically near convergence
    off = a * (1.0 - np.eye(a.shape[-1]))
    return np.sqrt(np.sum(off * off, axis=(-2, -1)))


def jacobi_eigenvalues(a, max_sweeps: int = MAX_SWEEPS) -> np.ndarray:
    """Eigenvalues (ascending) of a symmetric matrix or a stack of them.

    Cyclic Jacobi rotations, vectorized across the stack, until every
    off-diagonal Frobenius norm is <= 1e-14 * ||A||_F.
    """
    a = sym(a)
    single = a.ndim == 2
    a = a.reshape((-1,) + a.shape[-2:]).copy()
    n = a.shape[-1]
    fro = np.sqrt(np.sum(a * a, axis=(-2, -1)))
    target = OFF_TOL * fro
    sweeps = 0
    while True:
        off = _off_norm(a)
        if np.all(off <= target):
            break
        if sweeps >= max_sweeps:
            raise ConvergenceError(sweeps, float(np.max(off - target)))
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p, q]
                active = np.abs(apq) > 0
                if not np.any(active):
                    continue
                app, aqq = a[:, p, p], a[:, q, q]
                with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                    theta = np.where(active, (aqq - app) / (2.0 * np.where(active, apq, 1.0)), 0.0)
                    t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
                t = np.where(theta == 0, 1.0, t)
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- R^T A R on rows/columns p, q
                rp = a[:, p, :].copy()
                rq = a[:, q, :].copy()
                a[:, p, :] = c[:, None] * rp - s[:, None] * rq
                a[:, q, :] = s[:, None] * rp + c[:, None] * rq
                cp = a[:, :, p].copy()
                cq = a[:, :, q].copy()
                a[:, :, p] = c[:, None] * cp - s[:, None] * cq
                a[:, :, q] = s[:, None] * cp + c[:, None] * cq
                a[:, p, q] = 0.0
                a[:, q, p] = 0.0
    w = np.sort(np.diagonal(a, axis1=-2, axis2=-1), axis=-1)
    return w[0] if single else w


def smallest_eigenvalue(a) -> float | np.ndarray:
    w = jacobi_eigenvalues(a)
    return w[..., 0] if w.ndim > 1 else float(w[0])


def frobenius(a) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=float)))


def psd_margin(a) -> float:
    """Smallest eigenvalue scaled by max(1, ||A||_F)."""
    return smallest_eigenvalue(a) / max(1.0, frobenius(a))


def is_psd(a, tol: float = DEFAULT_TOL) -> bool:
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return smallest_eigenvalue(a) >= -tol * max(1.0, frobenius(a))


def is_pd(a, tol: float = DEFAULT_TOL) -> bool:
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return smallest_eigenvalue(a) >= tol * max(1.0, frobenius(a))


def congruence(k, w) -> np.ndarray:
    """K^T W K, symmetric by construction."""
    k = np.asarray(k, dtype=float)
    w = sym(w)
    if k.ndim != 2 or k.shape[0] != w.shape[0] or w.ndim != 2:
        raise ValueError(f"dimension mismatch: K {k.shape}, W {w.shape}")
    return sym(k.T @ w @ k)
