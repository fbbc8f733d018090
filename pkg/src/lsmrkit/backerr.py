"""Backward errors of approximate LS solutions, and dense reference solvers.

Everything here materializes matrices and is meant for testing and
diagnostics at desk scale, never for the solver's inner loop.

The dense oracles check their own post-conditions when ``check=True`` (or
when :data:`SELF_CHECK` is set, as the test suite does).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .linop import DenseMatrix, LinearOperator, to_dense

SELF_CHECK = False
SINGULAR_TOL = 1e-14
JACOBI_TOL = 1e-14
JACOBI_MAX_SWEEPS = 60
SVD_TRUNCATION = 1e-12


class OracleCheckError(ArithmeticError):
    """A dense oracle failed its own accuracy post-condition."""


class SingularMatrixError(np.linalg.LinAlgError):
    pass


class JacobiConvergenceError(np.linalg.LinAlgError):
    pass


class OracleAccuracyWarning(UserWarning):
    pass


def _array(M) -> np.ndarray:
    if isinstance(M, LinearOperator):
        return to_dense(M)
    a = np.asarray(M, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={a.ndim}")
    return a


def _checking(check: Optional[bool]) -> bool:
    return SELF_CHECK if check is None else check


class HouseholderQ:
    """Orthogonal factor of :func:`dense_qr`, kept as reflectors.

    ``Q`` is ``m x m``; the economy factor is its first ``n`` columns.
    Column signs are folded in so that ``R`` has a nonnegative diagonal.
    """

    def __init__(self, reflectors: list[np.ndarray], signs: np.ndarray, m: int):
        self.reflectors = reflectors
        self.signs = signs
        self.m = m

    def apply_qt(self, v) -> np.ndarray:
        """``Q.T @ v`` (length m)."""
        w = np.array(v, dtype=float)
        for j, h in enumerate(self.reflectors):
            w[j:] -= 2.0 * (h @ w[j:]) * h
        w[:len(self.signs)] *= self.signs
        return w

    def apply_q(self, v) -> np.ndarray:
        """``Q @ v``; ``v`` of length n is padded with zeros."""
        w = np.zeros(self.m)
        v = np.asarray(v, dtype=float)
        w[:len(v)] = v
        w[:len(self.signs)] *= self.signs
        for j in reversed(range(len(self.reflectors))):
            h = self.reflectors[j]
            w[j:] -= 2.0 * (h @ w[j:]) * h
        return w

    def economy(self) -> np.ndarray:
        n = len(self.signs)
        return np.column_stack([self.apply_q(e) for e in np.eye(n)]) if n else np.zeros((self.m, 0))


def dense_qr(M, check: Optional[bool] = None) -> tuple[HouseholderQ, np.ndarray]:
    """Householder QR of an ``m x n`` matrix with ``m >= n``.

    Returns ``(Q, R)`` with ``R`` upper triangular, ``diag(R) >= 0``.
    Rank deficiency just shows up as small diagonal entries.
    """
    a = _array(M)
    m, n = a.shape
    if m < n:
        raise ValueError(f"dense_qr needs nrows >= ncols, got {m}x{n}")
    R = a.copy()
    reflectors = []
    for j in range(n):
        x = R[j:, j]
        normx = float(np.linalg.norm(x))
        h = x.copy()
        if normx == 0.0:
            h[:] = 0.0
        else:
            alpha = -math.copysign(normx, x[0])
            h[0] -= alpha
            h /= np.linalg.norm(h)
            R[j:, j:] -= 2.0 * np.outer(h, h @ R[j:, j:])
            R[j + 1:, j] = 0.0
        reflectors.append(h)
    R = R[:n]
    signs = np.where(np.diag(R) < 0, -1.0, 1.0)
    R = signs[:, None] * R
    Q = HouseholderQ(reflectors, signs, m)
    if _checking(check):
        Qe = Q.economy()
        ortho = np.max(np.abs(Qe.T @ Qe - np.eye(n))) if n else 0.0
        if ortho > 1e-13 * max(n, 1):
            raise OracleCheckError(f"Q loses orthogonality: {ortho:.3e}")
        fro = float(np.linalg.norm(a))
        if np.linalg.norm(a - Qe @ R) > 1e-12 * fro:
            raise OracleCheckError("QR reconstruction error above 1e-12 ||M||_F")
    return Q, R


def back_substitute(R: np.ndarray, c: np.ndarray) -> np.ndarray:
    n = R.shape[0]
    x = np.zeros(n)
    for i in reversed(range(n)):
        x[i] = (c[i] - R[i, i + 1:] @ x[i + 1:]) / R[i, i]
    return x


def dense_ls_solve(M, rhs, check: Optional[bool] = None) -> np.ndarray:
    """Full-rank least squares ``min ||M x - rhs||`` by Householder QR.

    Raises
    ------
    SingularMatrixError
        If some ``|R_jj| <= 1e-14 ||M||_F``.
    """
    a = _array(M)
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (a.shape[0],):
        raise ValueError(f"rhs must have length {a.shape[0]}")
    Q, R = dense_qr(a, check=check)
    fro = float(np.linalg.norm(a))
    small = np.flatnonzero(np.abs(np.diag(R)) <= SINGULAR_TOL * fro)
    if len(small) or fro == 0.0:
        raise SingularMatrixError(f"numerically rank deficient at column {small[0] if len(small) else 0}")
    n = a.shape[1]
    x = back_substitute(R, Q.apply_qt(rhs)[:n])
    if _checking(check):
        ne = np.linalg.norm(a.T @ (rhs - a @ x))
        bound = 1e-10 * fro * fro * np.linalg.norm(x) + 1e-10 * fro * np.linalg.norm(rhs)
        if ne > bound:
            raise OracleCheckError(f"normal-equation residual {ne:.3e} exceeds {bound:.3e}")
    return x


def jacobi_svd(M, check: Optional[bool] = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``M = U diag(s) V.T`` by one-sided (Hestenes) Jacobi.

    Singular values come back in decreasing order; only values above
    ``1e-12 * s_max`` are kept, so ``U``, ``s``, ``V`` have as many columns
    as the numerical rank.
    """
    a = _array(M)
    if a.shape[0] < a.shape[1]:
        V, s, U = jacobi_svd(a.T, check=check)
        return U, s, V
    m, n = a.shape
    fro = float(np.linalg.norm(a))
    W = a.copy()
    V = np.eye(n)
    if fro == 0.0:
        return np.zeros((m, 0)), np.zeros(0), np.zeros((n, 0))
    zero_col = (JACOBI_TOL * fro) ** 2
    for _ in range(JACOBI_MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = W[:, p] @ W[:, p]
                beta = W[:, q] @ W[:, q]
                if alpha <= zero_col or beta <= zero_col:
                    continue
                gamma = W[:, p] @ W[:, q]
                if abs(gamma) <= JACOBI_TOL * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                cs = 1.0 / math.sqrt(1.0 + t * t)
                sn = cs * t
                wp = W[:, p].copy()
                W[:, p] = cs * wp - sn * W[:, q]
                W[:, q] = sn * wp + cs * W[:, q]
                vp = V[:, p].copy()
                V[:, p] = cs * vp - sn * V[:, q]
                V[:, q] = sn * vp + cs * V[:, q]
        if not rotated:
            break
    else:
        raise JacobiConvergenceError(f"one-sided Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps")
    s = np.linalg.norm(W, axis=0)
    order = np.argsort(-s, kind="stable")
    s, W, V = s[order], W[:, order], V[:, order]
    keep = s > SVD_TRUNCATION * s[0]
    s, W, V = s[keep], W[:, keep], V[:, keep]
    U = W / s
    if _checking(check):
        if np.linalg.norm(a - (U * s) @ V.T) > 1e-10 * fro:
            raise OracleCheckError("Jacobi SVD reconstruction error above 1e-10 ||M||_F")
    return U, s, V


def dense_minnorm_solve(M, rhs, check: Optional[bool] = None) -> np.ndarray:
    """Minimum-norm least-squares solution ``pinv(M) @ rhs`` (any shape or rank)."""
    a = _array(M)
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (a.shape[0],):
        raise ValueError(f"rhs must have length {a.shape[0]}")
    U, s, V = jacobi_svd(a, check=check)
    x = V @ ((U.T @ rhs) / s)
    if _checking(check) and len(s):
        scale = s[0] * s[0] * np.linalg.norm(x) + s[0] * np.linalg.norm(rhs)
        if np.linalg.norm(a.T @ (rhs - a @ x)) > 1e-10 * scale:
            raise OracleCheckError("minimum-norm solution fails the normal equation")
    return x


def stewart_e2(norm_atr: float, norm_r: float) -> float:
    """``||E2|| = ||A^T r|| / ||r||``; 0 (with a warning) when ``r = 0``."""
    if norm_r == 0.0:
        warnings.warn("zero residual: E2 undefined, reported as 0", OracleAccuracyWarning, stacklevel=2)
        return 0.0
    return norm_atr / norm_r


def stewart_e1(x, r, r_hat, rtol: float = 1e-8) -> float:
    """``||E1|| = ||r - r_hat|| / ||x||`` where ``r_hat`` is the exact LS residual.

    Since ``r_hat`` is orthogonal to ``r - r_hat``, ``||r||^2`` must equal
    ``||r_hat||^2 + ||r - r_hat||^2``; a mismatch means ``r_hat`` is
    inaccurate and triggers :class:`OracleAccuracyWarning`.
    """
    x = np.asarray(x, dtype=float)
    r = np.asarray(r, dtype=float)
    r_hat = np.asarray(r_hat, dtype=float)
    normx = float(np.linalg.norm(x))
    if normx == 0.0:
        raise ValueError("E1 is undefined for x = 0")
    e = r - r_hat
    ne2 = float(e @ e)
    lhs = float(r @ r)
    rhs = float(r_hat @ r_hat) + ne2
    if abs(lhs - rhs) > rtol * max(lhs, rhs):
        warnings.warn(f"||r||^2 = {lhs:.17g} but ||r_hat||^2 + ||e||^2 = {rhs:.17g}",
                      OracleAccuracyWarning, stacklevel=2)
    return math.sqrt(ne2) / normx


def optimal_backward_error(A, b, x) -> float:
    """Estimate ``mu~(x)`` of the smallest backward error of ``x``.

    With ``r = b - A x`` and ``eta = ||r|| / ||x||`` this is
    ``||K y|| / ||x||`` where ``y`` solves ``min ||K y - v||`` for
    ``K = [A; eta I]`` and ``v = [r; 0]``.  ``||K y||`` is read off as the
    norm of the leading ``n`` entries of ``Q.T v``.
    """
    a = _array(A)
    m, n = a.shape
    x = np.asarray(x, dtype=float)
    b = np.asarray(b, dtype=float)
    normx = float(np.linalg.norm(x))
    if normx == 0.0:
        raise ValueError("mu~ is undefined for x = 0")
    r = b - a @ x
    normr = float(np.linalg.norm(r))
    if normr == 0.0:
        return 0.0
    K = np.vstack((a, (normr / normx) * np.eye(n)))
    v = np.concatenate((r, np.zeros(n)))
    Q, _ = dense_qr(K, check=False)
    c = Q.apply_qt(v)[:n]
    return float(np.linalg.norm(c)) / normx


@dataclass(frozen=True)
class BackwardErrorReport:
    e2: float
    mu_tilde: float
    e1: Optional[float] = None

    def __post_init__(self):
        for name in ("e1", "e2", "mu_tilde"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")


def backward_errors(A, b, x, r_hat=None) -> BackwardErrorReport:
    """E2, mu~ and (when the exact LS residual ``r_hat`` is given) E1 of ``x``."""
    a = _array(A)
    x = np.asarray(x, dtype=float)
    r = np.asarray(b, dtype=float) - a @ x
    e2 = stewart_e2(float(np.linalg.norm(a.T @ r)), float(np.linalg.norm(r)))
    mu = optimal_backward_error(a, b, x)
    e1 = None if r_hat is None else stewart_e1(x, r, r_hat)
    return BackwardErrorReport(e2=e2, mu_tilde=mu, e1=e1)

