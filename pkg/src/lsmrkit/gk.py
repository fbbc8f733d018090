"""Golub-Kahan bidiagonalization with optional reorthogonalization.

One call to :func:`gk_step` costs exactly one forward and one adjoint
product.  The bidiagonal matrix itself is never stored: callers consume the
``alpha``/``beta`` scalars as they are produced.
"""

from __future__ import annotations

import collections
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .linop import EPS, DimensionError, LinearOperator, apply, apply_adjoint

# Absolute floor in the breakdown test; keeps 0/0 away when A is tiny.
TINY = np.finfo(float).tiny
# Rounding in A v - alpha u is a few ulps of ||A||; this is the slack allowed
# before a normalization constant is declared to be exactly zero.
BREAKDOWN_FACTOR = 16.0
REORTH_PASSES = 2
DEFAULT_MEMORY_CAP = 1 << 30  # bytes


class ReorthMemoryError(MemoryError):
    """Stored reorthogonalization basis would exceed the configured cap."""


@dataclass(frozen=True)
class ReorthMode:
    """Which Golub-Kahan vectors are kept orthonormal.

    ``kind`` is one of ``none``, ``v``, ``u``, ``both``, ``local`` and
    ``restart``; the last two carry a window/period ``ell``.
    """

    kind: str = "none"
    ell: int | None = None

    _KINDS = ("none", "v", "u", "both", "local", "restart")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown reorthogonalization mode {self.kind!r}")
        if self.kind in ("local", "restart"):
            if self.ell is None or int(self.ell) < 1:
                raise ValueError(f"{self.kind} mode needs a positive integer window, got {self.ell!r}")
        elif self.ell is not None:
            raise ValueError(f"{self.kind} mode takes no window")

    @classmethod
    def local(cls, ell: int) -> "ReorthMode":
        return cls("local", int(ell))

    @classmethod
    def restart(cls, ell: int) -> "ReorthMode":
        return cls("restart", int(ell))

    @classmethod
    def parse(cls, spec: str) -> "ReorthMode":
        """Parse ``none|v|u|both|local:<L>|restart:<L>``."""
        spec = spec.strip().lower()
        m = re.fullmatch(r"(local|restart):(\d+)", spec)
        if m:
            return cls(m.group(1), int(m.group(2)))
        if spec in ("none", "v", "u", "both"):
            return cls(spec)
        raise ValueError(f"bad reorthogonalization spec {spec!r}; "
                         "expected none|v|u|both|local:<L>|restart:<L>")

    @property
    def reorth_v(self) -> bool:
        return self.kind in ("v", "both", "local")

    @property
    def reorth_u(self) -> bool:
        return self.kind in ("u", "both")

    def __str__(self) -> str:
        return self.kind if self.ell is None else f"{self.kind}:{self.ell}"


ReorthMode.NONE = ReorthMode("none")
ReorthMode.V_ONLY = ReorthMode("v")
ReorthMode.U_ONLY = ReorthMode("u")
ReorthMode.BOTH = ReorthMode("both")


@dataclass(eq=False)
class GkState:
    """Current ``u_k``, ``v_k``, ``alpha_k``, ``beta_k`` plus stored bases.

    ``av`` is the m-length product workspace.  ``stored_u``/``stored_v`` stay
    ``None`` unless the mode needs them; for ``local`` mode ``stored_v`` is a
    bounded deque.
    """

    mode: ReorthMode
    k: int
    alpha: float
    beta: float
    u: np.ndarray
    v: np.ndarray
    av: np.ndarray
    stored_u: list | None = None
    stored_v: list | collections.deque | None = None
    b_zero: bool = False
    atb_zero: bool = False
    beta_breakdown: bool = False
    alpha_breakdown: bool = False
    frob2: float = 0.0
    memory_cap: int = DEFAULT_MEMORY_CAP
    _stored_bytes: int = field(default=0, repr=False)

    @property
    def terminated(self) -> bool:
        return self.b_zero or self.atb_zero or self.beta_breakdown or self.alpha_breakdown

    def _store(self, basis, vec: np.ndarray):
        if isinstance(basis, collections.deque):
            basis.append(vec.copy())
            return
        self._stored_bytes += vec.nbytes
        if self._stored_bytes > self.memory_cap:
            raise ReorthMemoryError(
                f"reorthogonalization basis exceeds {self.memory_cap} bytes at k={self.k}")
        basis.append(vec.copy())


def reorthogonalize(w: np.ndarray, basis, passes: int = REORTH_PASSES) -> np.ndarray:
    """Remove the components of ``w`` along each vector of ``basis``.

    Modified Gram-Schmidt, repeated ``passes`` times.  ``w`` is updated in
    place and returned.
    """
    for _ in range(passes):
        for q in basis:
            w -= (q @ w) * q
    return w


def _zero_threshold(scale: float) -> float:
    return BREAKDOWN_FACTOR * EPS * scale + TINY


def gk_init(A: LinearOperator, b, mode: ReorthMode = ReorthMode.NONE,
            memory_cap: int = DEFAULT_MEMORY_CAP) -> tuple[float, GkState]:
    """Start the process: ``beta1 u1 = b``, ``alpha1 v1 = A.T u1``."""
    b = np.asarray(b, dtype=float)
    if b.shape != (A.nrows,):
        raise DimensionError(f"rhs must have length {A.nrows}, got shape {b.shape}")
    u = b.copy()
    beta = float(np.linalg.norm(u))
    state = GkState(mode=mode, k=1, alpha=0.0, beta=beta, u=u,
                    v=np.zeros(A.ncols), av=np.zeros(A.nrows), memory_cap=memory_cap)
    if mode.reorth_u:
        state.stored_u = []
    if mode.kind == "local":
        state.stored_v = collections.deque(maxlen=mode.ell)
    elif mode.reorth_v:
        state.stored_v = []
    if beta == 0.0:
        state.b_zero = True
        return beta, state
    u /= beta
    v = apply_adjoint(A, u)
    alpha = float(np.linalg.norm(v))
    state.alpha = alpha
    state.v = v
    if alpha <= TINY:
        state.alpha = 0.0
        state.atb_zero = True
        return beta, state
    v /= alpha
    state.frob2 = alpha * alpha
    if state.stored_u is not None:
        state._store(state.stored_u, u)
    if state.stored_v is not None:
        state._store(state.stored_v, v)
    return beta, state


def gk_step(A: LinearOperator, state: GkState) -> tuple[float, float]:
    """Advance from ``k`` to ``k+1``; return ``(beta_{k+1}, alpha_{k+1})``.

    A breakdown (either scalar below the rounding threshold) is reported as
    an exact zero and flagged on the state.  After a ``beta`` breakdown the
    adjoint product is skipped and ``alpha_{k+1}`` is returned as 0.
    """
    if state.terminated:
        raise RuntimeError("Golub-Kahan process has already terminated")
    scale = math.sqrt(state.frob2)
    # beta_{k+1} u_{k+1} = A v_k - alpha_k u_k
    state.av = apply(A, state.v)
    u = state.u
    u *= -state.alpha
    u += state.av
    if state.stored_u is not None:
        reorthogonalize(u, state.stored_u)
    beta = float(np.linalg.norm(u))
    state.k += 1
    if beta <= _zero_threshold(scale):
        state.beta = 0.0
        state.alpha = 0.0
        state.beta_breakdown = True
        return 0.0, 0.0
    u /= beta
    state.beta = beta
    state.frob2 += beta * beta
    if state.stored_u is not None:
        state._store(state.stored_u, u)
    # alpha_{k+1} v_{k+1} = A^T u_{k+1} - beta_{k+1} v_k
    v = apply_adjoint(A, u)
    v -= beta * state.v
    if state.stored_v is not None:
        reorthogonalize(v, state.stored_v)
    alpha = float(np.linalg.norm(v))
    state.v = v
    if alpha <= _zero_threshold(math.sqrt(state.frob2)):
        state.alpha = 0.0
        state.alpha_breakdown = True
        return beta, 0.0
    v /= alpha
    state.alpha = alpha
    state.frob2 += alpha * alpha
    if state.stored_v is not None:
        state._store(state.stored_v, v)
    return beta, alpha
