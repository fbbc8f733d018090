"""LSMR for ``min ||Ax - b||``, ``min ||x|| s.t. Ax = b`` and damped least squares.

The solver is MINRES applied to the normal equation, built on Golub-Kahan
bidiagonalization.  Every quantity used by the stopping rules
(``||r||``, ``||A^T r||``, ``||x||``, ``||A||``, ``cond(A)``) is updated with
O(1) scalar work per iteration; the only long vectors are ``x, v, h, hbar``
(length n) and ``u`` plus the product workspace (length m).

With ``lam > 0`` the problem solved is
``min || [A; lam*I] x - [b; 0] ||`` and all reported norms refer to the
stacked operator.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .gk import DEFAULT_MEMORY_CAP, GkState, ReorthMode, gk_init, gk_step
from .linop import EPS, DimensionError, LinearOperator, apply, apply_adjoint, as_operator

# Tests flip this to push lam == 0 through the general damping rotation.
LAMBDA_ZERO_FAST_PATH = True


class NonFiniteError(ArithmeticError):
    """A NaN or Inf appeared in the scalar recurrences."""

    def __init__(self, iteration: int, name: str):
        super().__init__(f"non-finite value in {name} at iteration {iteration}")
        self.iteration = iteration


class StopReason(enum.Enum):
    B_ZERO = "B_ZERO"
    BREAKDOWN_CONSISTENT = "BREAKDOWN_CONSISTENT"
    BREAKDOWN_LS = "BREAKDOWN_LS"
    S1_COMPATIBLE = "S1_COMPATIBLE"
    S2_LEAST_SQUARES = "S2_LEAST_SQUARES"
    S3_COND_LIMIT = "S3_COND_LIMIT"
    S1_EPS = "S1_EPS"
    S2_EPS = "S2_EPS"
    MAX_ITER = "MAX_ITER"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class SolveOptions:
    atol: float = 1e-6
    btol: float = 1e-6
    conlim: float = 1e8
    lam: float = 0.0
    max_iter: Optional[int] = None
    reorth: ReorthMode = ReorthMode.NONE
    diagnostics: bool = False
    memory_cap: int = DEFAULT_MEMORY_CAP

    def __post_init__(self):
        if not (0.0 <= self.atol < 1.0):
            raise ValueError(f"atol must lie in [0, 1), got {self.atol}")
        if not (0.0 <= self.btol < 1.0):
            raise ValueError(f"btol must lie in [0, 1), got {self.btol}")
        if not self.conlim > 1.0:
            raise ValueError(f"conlim must exceed 1, got {self.conlim}")
        if not (self.lam >= 0.0 and math.isfinite(self.lam)):
            raise ValueError(f"lam must be finite and nonnegative, got {self.lam}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError(f"max_iter must be positive, got {self.max_iter}")

    def iteration_limit(self, m: int, n: int) -> int:
        return self.max_iter if self.max_iter is not None else 4 * min(m, n)


@dataclass
class IterationRecord:
    k: int
    norm_r_est: float
    norm_atr_est: float
    norm_x_est: float
    norm_a_est: float
    cond_est: float
    norm_r_true: Optional[float] = None
    norm_atr_true: Optional[float] = None
    lemma31_residual: Optional[float] = None
    e2: Optional[float] = None
    x: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class SolveResult:
    x: np.ndarray
    reason: StopReason
    iterations: int
    norm_r: float
    norm_atr: float
    norm_x: float
    norm_a: float
    cond_a: float


TraceSink = Callable[[IterationRecord], None]


def sym_ortho(a: float, b: float) -> tuple[float, float, float]:
    """Plane rotation ``(c, s, r)`` with ``[c s; -s c] @ [a; b] = [r; 0]``, ``r >= 0``.

    Scaled by the larger of ``|a|``, ``|b|`` so it cannot overflow.
    ``sym_ortho(0, 0)`` is ``(1, 0, 0)``.
    """
    if b == 0.0:
        if a == 0.0:
            return 1.0, 0.0, 0.0
        return math.copysign(1.0, a), 0.0, abs(a)
    if a == 0.0:
        return 0.0, math.copysign(1.0, b), abs(b)
    if abs(b) > abs(a):
        tau = a / b
        s = math.copysign(1.0, b) / math.sqrt(1.0 + tau * tau)
        c = s * tau
        r = b / s
    else:
        tau = b / a
        c = math.copysign(1.0, a) / math.sqrt(1.0 + tau * tau)
        s = c * tau
        r = a / c
    return c, s, r


@dataclass(eq=False)
class LsmrState:
    """All scalar recurrences of one LSMR run plus the n-vectors x, h, hbar.

    Names follow the usual symbols: ``bar``/``hat``/``tilde``/``dot``/``dd``
    (double dot) suffixes mark the decorated quantity.
    """

    lam: float
    normb: float
    x: np.ndarray
    h: np.ndarray
    hbar: np.ndarray
    k: int = 0
    alpha: float = 0.0  # alpha_k, consumed by the ||B_k|| accumulator
    # main recurrence
    alphabar: float = 0.0
    alphahat: float = 0.0
    chat: float = 1.0
    shat: float = 0.0
    c: float = 1.0
    s: float = 0.0
    rho: float = 1.0
    rho_old: float = 1.0
    rhobar: float = 1.0
    rhobar_old: float = 1.0
    cbar: float = 1.0
    sbar: float = 0.0
    theta: float = 0.0  # theta_{k+1}
    theta_old: float = 0.0  # theta_k
    thetabar: float = 0.0
    rhotemp: float = 0.0  # cbar_{k-1} rho_k, not yet rotated by P-bar_k
    zeta: float = 0.0
    zetabar: float = 0.0
    # ||r|| chain
    betadd: float = 0.0
    betad: float = 0.0
    betaacute: float = 0.0
    betahat: float = 0.0
    betacheck: float = 0.0
    betatilde: float = 0.0
    d: float = 0.0
    rhodot: float = 1.0
    rhotilde: float = 1.0
    ctilde: float = 1.0
    stilde: float = 0.0
    ctilde_old: float = 1.0
    stilde_old: float = 0.0
    thetatilde: float = 0.0
    tautilde: float = 0.0
    tautilde_old: float = 0.0
    taudot: float = 0.0
    zeta_old: float = 0.0
    lemma31_max: float = 0.0
    # ||x|| chain: trailing 2x2 of the lower-bidiagonal factor, entering rows k-1, k
    xn_a: float = 0.0  # L[k-1, k-2], final
    xn_b: float = 1.0  # L[k-1, k-1]
    xn_c: float = 0.0  # L[k, k-1]
    xn_d: float = 1.0  # L[k, k]
    xn_zfinal: float = 0.0  # last finalized entry of zhat
    xn_ss: float = 0.0  # sum of squares of finalized zhat entries
    # ||A|| and cond(A)
    frob2: float = 0.0
    maxrbar: float = 0.0
    minrbar: float = math.inf
    # current estimates
    normr: float = 0.0
    normar: float = 0.0
    normx: float = 0.0
    norma: float = 0.0
    conda: float = 1.0
    breakdown_beta: bool = False
    breakdown_alpha: bool = False

    @classmethod
    def start(cls, beta1: float, alpha1: float, v1: np.ndarray, lam: float = 0.0) -> "LsmrState":
        n = len(v1)
        st = cls(lam=float(lam), normb=beta1, x=np.zeros(n), h=v1.copy(), hbar=np.zeros(n))
        st.alpha = alpha1
        st.alphabar = alpha1
        st.zetabar = alpha1 * beta1
        st.betadd = beta1
        st.normr = beta1
        st.normar = abs(st.zetabar)
        return st

    def scalars(self) -> dict:
        return {k: v for k, v in vars(self).items() if isinstance(v, float)}


def step_main_recurrence(state: LsmrState, alpha_next: float, beta_next: float,
                         v_next: np.ndarray, lam: Optional[float] = None) -> None:
    """Rotations P-hat, P, P-bar for iteration k and the x, h, hbar updates."""
    st = state
    lam = st.lam if lam is None else lam
    st.k += 1
    if lam == 0.0 and LAMBDA_ZERO_FAST_PATH:
        st.chat, st.shat, st.alphahat = 1.0, 0.0, st.alphabar
    else:
        st.chat, st.shat, st.alphahat = sym_ortho(st.alphabar, lam)

    st.rho_old = st.rho
    st.c, st.s, st.rho = sym_ortho(st.alphahat, beta_next)
    st.theta_old = st.theta
    st.theta = st.s * alpha_next
    st.alphabar = st.c * alpha_next

    st.rhobar_old = st.rhobar
    cbar_old = st.cbar
    st.thetabar = st.sbar * st.rho
    st.rhotemp = cbar_old * st.rho
    st.cbar, st.sbar, st.rhobar = sym_ortho(st.rhotemp, st.theta)
    st.zeta_old = st.zeta
    st.zeta = st.cbar * st.zetabar
    st.zetabar = -st.sbar * st.zetabar

    hbar, h = st.hbar, st.h
    hbar *= -(st.thetabar * st.rho / (st.rho_old * st.rhobar_old))
    hbar += h
    st.x += (st.zeta / (st.rho * st.rhobar)) * hbar
    h *= -(st.theta / st.rho)
    h += v_next


def step_residual_chain(state: LsmrState, lam: Optional[float] = None) -> float:
    """Estimate ``||r_k||`` (of the damped system when ``lam > 0``)."""
    st = state
    # rotations P-hat_k and P_k on the rhs
    st.betaacute = st.chat * st.betadd
    st.betacheck = -st.shat * st.betadd
    st.betahat = st.c * st.betaacute
    st.betadd = -st.s * st.betaacute

    # P-tilde_{k-1}; identity at k = 1 because thetabar_1 = 0
    thetatilde_old = st.thetatilde
    st.ctilde_old, st.stilde_old = st.ctilde, st.stilde
    st.ctilde, st.stilde, st.rhotilde = sym_ortho(st.rhodot, st.thetabar)
    st.thetatilde = st.stilde * st.rhobar
    st.rhodot = st.ctilde * st.rhobar
    st.betatilde = st.ctilde * st.betad + st.stilde * st.betahat
    st.betad = -st.stilde * st.betad + st.ctilde * st.betahat

    st.tautilde_old = st.tautilde
    st.tautilde = (st.zeta_old - thetatilde_old * st.tautilde_old) / st.rhotilde
    st.taudot = (st.zeta - st.thetatilde * st.tautilde) / st.rhodot
    if st.k >= 2:
        st.lemma31_max = max(st.lemma31_max, abs(st.tautilde - st.betatilde))

    st.d += st.betacheck * st.betacheck
    st.normr = math.sqrt(st.d + (st.betad - st.taudot) ** 2 + st.betadd * st.betadd)
    return st.normr


def atr_norm(state: LsmrState) -> float:
    """``||A^T r_k||`` estimate, i.e. ``|zetabar_{k+1}|``."""
    return abs(state.zetabar)


def step_xnorm_chain(state: LsmrState) -> float:
    """Estimate ``||x_k||`` from a fourth, right-sided QR factorization.

    ``y_k`` (with ``x_k = V_k y_k``) solves ``(Qt R) y = t~`` where ``Qt`` is
    the product of the P-tilde rotations.  Rotating columns of ``Qt R`` gives
    a lower-bidiagonal ``L`` with ``L zhat = t~`` and ``||y|| = ||zhat||``.
    Each iteration touches only the trailing rows of ``L``, so two column
    rotations update it and one more entry of ``zhat`` becomes final.
    """
    st = state
    ct, stl = st.ctilde, st.stilde  # P-tilde_{k-1}
    ct2, st2 = st.ctilde_old, st.stilde_old  # P-tilde_{k-2}
    theta_k = st.theta_old
    a, b, c, d = st.xn_a, st.xn_b, st.xn_c, st.xn_d

    # append column k of R (theta_k above rho_k), pushed through P-tilde_{k-2}
    e = theta_k * st2
    top = theta_k * ct2
    # rows k-1 and k after P-tilde_{k-1}
    r1a, r1b, r1c = ct * c, ct * d, ct * top + stl * st.rho
    r2a, r2b, r2c = -stl * c, -stl * d, -stl * top + ct * st.rho
    # columns (k-2, k): clear row k-2
    c1, s1, b_new = sym_ortho(b, e)
    r1a, r1c = c1 * r1a + s1 * r1c, -s1 * r1a + c1 * r1c
    r2a, r2c = c1 * r2a + s1 * r2c, -s1 * r2a + c1 * r2c
    # columns (k-1, k): clear row k-1
    c2, s2, d_new = sym_ortho(r1b, r1c)
    r2b, r2c = c2 * r2b + s2 * r2c, -s2 * r2b + c2 * r2c

    # forward substitution; r2a vanishes in exact arithmetic
    z_final = (st.tautilde_old - a * st.xn_zfinal) / b_new
    z_prev = (st.tautilde - r1a * z_final) / d_new
    z_last = (st.taudot - r2a * z_final - r2b * z_prev) / r2c
    st.normx = math.sqrt(st.xn_ss + z_final * z_final + z_prev * z_prev + z_last * z_last)

    st.xn_ss += z_final * z_final
    st.xn_zfinal = z_final
    st.xn_a, st.xn_b, st.xn_c, st.xn_d = r1a, d_new, r2b, r2c
    return st.normx


def step_norm_cond_chain(state: LsmrState, alpha_next: float, beta_next: float) -> tuple[float, float]:
    """``||A||`` from ``||B_k||_F`` and ``cond(A)`` from the QLP diagonals."""
    st = state
    st.frob2 += st.alpha * st.alpha + beta_next * beta_next + st.lam * st.lam
    st.alpha = alpha_next
    st.norma = math.sqrt(st.frob2)
    if st.k >= 2:
        st.maxrbar = max(st.maxrbar, st.rhobar_old)
        st.minrbar = min(st.minrbar, st.rhobar_old)
    provisional = abs(st.rhotemp)
    st.conda = max(st.maxrbar, provisional) / min(st.minrbar, provisional)
    return st.norma, st.conda


def lsmr_step(state: LsmrState, alpha_next: float, beta_next: float, v_next: np.ndarray) -> None:
    """One full iteration: main recurrence then every estimator chain."""
    step_main_recurrence(state, alpha_next, beta_next, v_next)
    step_residual_chain(state)
    state.normar = atr_norm(state)
    step_xnorm_chain(state)
    step_norm_cond_chain(state, alpha_next, beta_next)
    for name in ("rho", "rhobar", "zeta", "zetabar", "normr", "normx", "norma"):
        if not math.isfinite(getattr(state, name)):
            raise NonFiniteError(state.k, name)


def stop_rule(normr: float, normar: float, normx: float, norma: float, conda: float,
              normb: float, opts: SolveOptions) -> Optional[StopReason]:
    """Tests S1, S2, S3 and their machine-precision analogues, in priority order."""
    test1 = normr / normb
    denom = norma * normr
    if denom > 0.0:
        test2 = normar / denom
    else:
        test2 = 0.0 if normar == 0.0 else math.inf
    test3 = 1.0 / conda
    ax_over_b = norma * normx / normb
    t1 = test1 / (1.0 + ax_over_b)
    if test1 <= opts.btol + opts.atol * ax_over_b:
        return StopReason.S1_COMPATIBLE
    if test2 <= opts.atol:
        return StopReason.S2_LEAST_SQUARES
    if test3 <= 1.0 / opts.conlim:
        return StopReason.S3_COND_LIMIT
    if 1.0 + t1 <= 1.0:
        return StopReason.S1_EPS
    if 1.0 + test2 <= 1.0:
        return StopReason.S2_EPS
    if 1.0 + test3 <= 1.0:
        return StopReason.S3_COND_LIMIT
    return None


def check_stop(state: LsmrState, opts: SolveOptions, m: int, n: int) -> Optional[StopReason]:
    if state.breakdown_beta:
        # with damping an invariant Krylov space gives the damped LS solution
        return StopReason.BREAKDOWN_CONSISTENT if state.lam == 0.0 else StopReason.BREAKDOWN_LS
    if state.breakdown_alpha:
        return StopReason.BREAKDOWN_LS
    reason = stop_rule(state.normr, state.normar, state.normx, state.norma, state.conda,
                       state.normb, opts)
    if reason is None and state.k >= opts.iteration_limit(m, n):
        return StopReason.MAX_ITER
    return reason


def true_norms(A: LinearOperator, b: np.ndarray, x: np.ndarray, lam: float = 0.0) -> tuple[float, float]:
    """``(||r||, ||A^T r||)`` of the (damped) problem, by direct products."""
    r = b - apply(A, x)
    atr = apply_adjoint(A, r)
    if lam:
        atr -= lam * lam * x
        normr = math.hypot(float(np.linalg.norm(r)), lam * float(np.linalg.norm(x)))
    else:
        normr = float(np.linalg.norm(r))
    return normr, float(np.linalg.norm(atr))


@dataclass
class _Segment:
    """Context that lets a restart segment report global quantities."""

    x_offset: Optional[np.ndarray] = None
    normb: Optional[float] = None
    k_offset: int = 0
    norma_floor: float = 0.0
    b_global: Optional[np.ndarray] = None


def _validate(A, b) -> tuple[LinearOperator, np.ndarray]:
    A = as_operator(A)
    b = np.asarray(b, dtype=float)
    if b.shape != (A.nrows,):
        raise DimensionError(f"rhs must have length {A.nrows}, got shape {b.shape}")
    if not np.all(np.isfinite(b)):
        raise ValueError("rhs entries must be finite")
    return A, b


def lsmr_solve(A, b, opts: Optional[SolveOptions] = None,
               trace_sink: Optional[TraceSink] = None) -> SolveResult:
    """Solve ``min ||Ax - b||`` (or its damped form) with LSMR.

    Parameters
    ----------
    A : LinearOperator or array_like
        m x n operator, any shape and rank.
    b : array_like
        Right-hand side of length m.
    opts : SolveOptions, optional
        Tolerances, damping, iteration limit and reorthogonalization.
    trace_sink : callable, optional
        Receives one :class:`IterationRecord` per iteration.

    Returns
    -------
    SolveResult
        ``x`` together with the stop reason and the final estimates.
    """
    opts = opts or SolveOptions()
    A, b = _validate(A, b)
    if opts.reorth.kind == "restart":
        return lsmr_solve_restarted(A, b, opts, trace_sink)
    return _lsmr_core(A, b, opts, trace_sink, opts.iteration_limit(*A.shape), _Segment())


def _lsmr_core(A: LinearOperator, b: np.ndarray, opts: SolveOptions, sink: Optional[TraceSink],
               limit: int, seg: _Segment) -> SolveResult:
    m, n = A.shape
    mode = ReorthMode.V_ONLY if opts.reorth.kind == "restart" else opts.reorth
    beta1, gk = gk_init(A, b, mode, opts.memory_cap)
    normb = beta1 if seg.normb is None else seg.normb
    if gk.b_zero:
        return SolveResult(np.zeros(n), StopReason.B_ZERO, 0, 0.0, 0.0, 0.0, 0.0, 1.0)
    if gk.atb_zero:
        # x = 0 already solves the normal equation
        return SolveResult(np.zeros(n), StopReason.BREAKDOWN_LS, 0, beta1, 0.0, 0.0, 0.0, 1.0)
    st = LsmrState.start(beta1, gk.alpha, gk.v, opts.lam)
    st.normb = normb
    reason = None
    while reason is None:
        beta, alpha = gk_step(A, gk)
        lsmr_step(st, alpha, beta, gk.v)
        st.breakdown_beta, st.breakdown_alpha = gk.beta_breakdown, gk.alpha_breakdown
        st.norma = max(st.norma, seg.norma_floor)
        normx = st.normx
        if seg.x_offset is not None:
            normx = float(np.linalg.norm(seg.x_offset + st.x))
        if st.breakdown_beta or st.breakdown_alpha:
            reason = check_stop(st, opts, m, n)
        else:
            reason = stop_rule(st.normr, st.normar, normx, st.norma, st.conda, normb, opts)
            if reason is None and st.k >= limit:
                reason = StopReason.MAX_ITER
        if sink is not None:
            rec = IterationRecord(seg.k_offset + st.k, st.normr, st.normar, normx, st.norma, st.conda)
            if opts.diagnostics:
                xg = st.x if seg.x_offset is None else seg.x_offset + st.x
                bg = b if seg.b_global is None else seg.b_global
                rec.norm_r_true, rec.norm_atr_true = true_norms(A, bg, xg, opts.lam)
                rec.lemma31_residual = st.lemma31_max
                rec.e2 = st.normar / st.normr if st.normr > 0 else 0.0
                rec.x = xg.copy()
            sink(rec)
    x = st.x
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(st.k, "x")
    return SolveResult(x, reason, st.k, st.normr, st.normar, st.normx, st.norma, st.conda)


def lsmr_solve_restarted(A, b, opts: SolveOptions,
                         trace_sink: Optional[TraceSink] = None) -> SolveResult:
    """LSMR restarted every ``opts.reorth.ell`` iterations on the current residual.

    Each segment solves ``min ||A dx - r||`` with ``r = b - A x`` recomputed
    directly, keeping the segment's ``v`` vectors orthonormal.  Iteration
    numbers in the trace are cumulative; stopping tests use the global
    ``||b||`` and ``||x||``.
    """
    return run_restarted(_lsmr_core, A, b, opts, trace_sink)


def run_restarted(core, A, b, opts: SolveOptions, trace_sink: Optional[TraceSink] = None) -> SolveResult:
    """Drive a solver core through restart segments (shared by LSMR and LSQR)."""
    A, b = _validate(A, b)
    m, n = A.shape
    limit = opts.iteration_limit(m, n)
    ell = opts.reorth.ell if opts.reorth.kind == "restart" else limit
    normb = float(np.linalg.norm(b))
    x = np.zeros(n)
    if normb == 0.0:
        return SolveResult(x, StopReason.B_ZERO, 0, 0.0, 0.0, 0.0, 0.0, 1.0)
    k = 0
    norma = 0.0
    while True:
        r = b - apply(A, x) if k else b.copy()
        seg = _Segment(x_offset=x, normb=normb, k_offset=k, norma_floor=norma, b_global=b)
        res = core(A, r, opts, trace_sink, min(ell, limit - k), seg)
        x = x + res.x
        k += res.iterations
        norma = max(norma, res.norm_a)
        reason = res.reason
        if reason is StopReason.B_ZERO:
            # the residual vanished exactly
            normr, normar = 0.0, 0.0
            reason = StopReason.S1_COMPATIBLE
            break
        normr, normar = res.norm_r, res.norm_atr
        if reason is not StopReason.MAX_ITER or k >= limit:
            break
    return SolveResult(x, reason, k, normr, normar, float(np.linalg.norm(x)), norma, res.cond_a)
