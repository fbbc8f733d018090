"""Seeded synthetic least-squares problems with a prescribed singular spectrum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linop import CsrMatrix


@dataclass
class Problem:
    A: np.ndarray
    b: np.ndarray
    singular_values: np.ndarray
    x_true: np.ndarray | None = None


def singular_spectrum(n_values: int, cond: float, rank: int | None = None) -> np.ndarray:
    """``rank`` values log-spaced from 1 down to ``1/cond``, then zeros."""
    rank = n_values if rank is None else rank
    if not 0 <= rank <= n_values:
        raise ValueError(f"rank must lie in [0, {n_values}], got {rank}")
    if cond < 1.0:
        raise ValueError(f"condition number must be >= 1, got {cond}")
    s = np.zeros(n_values)
    if rank:
        s[:rank] = np.logspace(0.0, -np.log10(cond), rank)
    return s


def random_orthonormal(rng: np.random.Generator, m: int, k: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((m, k)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def make_problem(seed: int, m: int, n: int, cond: float = 1e3, rank: int | None = None,
                 consistent: bool = False) -> Problem:
    """``A = U diag(s) V^T`` with random orthonormal ``U``, ``V``.

    With ``consistent=True`` the right-hand side is ``A x`` for a random
    ``x``, so the exact LS residual is zero; otherwise ``b`` is Gaussian.
    """
    if m < 1 or n < 1:
        raise ValueError(f"dimensions must be positive, got {m}x{n}")
    rng = np.random.default_rng(seed)
    k = min(m, n)
    s = singular_spectrum(k, cond, rank)
    U = random_orthonormal(rng, m, k)
    V = random_orthonormal(rng, n, k)
    A = (U * s) @ V.T
    if consistent:
        x = rng.standard_normal(n)
        return Problem(A, A @ x, s, x)
    return Problem(A, rng.standard_normal(m), s)


def as_csr(A: np.ndarray) -> CsrMatrix:
    return CsrMatrix.from_dense(A)
