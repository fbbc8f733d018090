"""LSQR on the same bidiagonalization, as a reference for LSMR.

LSQR is CG applied to the normal equation: ``||r_k||`` decreases
monotonically but ``||A^T r_k||`` need not.  :func:`run_lockstep` drives LSMR
and LSQR from a single Golub-Kahan sequence so their iterates can be compared
at equal ``k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .gk import ReorthMode, gk_init, gk_step
from .linop import LinearOperator
from .lsmr import (IterationRecord, LsmrState, NonFiniteError, SolveOptions, SolveResult,
                   StopReason, TraceSink, _Segment, _validate, lsmr_step, run_restarted,
                   stop_rule, sym_ortho, true_norms)


@dataclass(eq=False)
class LsqrState:
    lam: float
    normb: float
    x: np.ndarray
    w: np.ndarray
    k: int = 0
    alpha: float = 0.0
    rhobar: float = 0.0
    phibar: float = 0.0
    # ||x|| via an LQ factorization of the bidiagonal R
    cs2: float = -1.0
    sn2: float = 0.0
    z: float = 0.0
    xxnorm: float = 0.0
    # ||A||, cond(A), damped residual part
    frob2: float = 0.0
    ddnorm: float = 0.0
    res2: float = 0.0
    normr: float = 0.0
    normar: float = 0.0
    normx: float = 0.0
    norma: float = 0.0
    conda: float = 1.0
    breakdown_beta: bool = False
    breakdown_alpha: bool = False

    @classmethod
    def start(cls, beta1: float, alpha1: float, v1: np.ndarray, lam: float = 0.0) -> "LsqrState":
        st = cls(lam=float(lam), normb=beta1, x=np.zeros(len(v1)), w=v1.copy())
        st.alpha = alpha1
        st.rhobar = alpha1
        st.phibar = beta1
        st.normr = beta1
        st.normar = alpha1 * beta1
        return st


def lsqr_step(st: LsqrState, alpha_next: float, beta_next: float, v_next: np.ndarray) -> None:
    st.k += 1
    lam = st.lam
    st.frob2 += st.alpha * st.alpha + beta_next * beta_next + lam * lam
    st.norma = math.sqrt(st.frob2)
    if lam > 0.0:
        rhobar1 = math.hypot(st.rhobar, lam)
        cs1, sn1 = st.rhobar / rhobar1, lam / rhobar1
        psi = sn1 * st.phibar
        st.phibar = cs1 * st.phibar
    else:
        rhobar1, psi = st.rhobar, 0.0

    cs, sn, rho = sym_ortho(rhobar1, beta_next)
    theta = sn * alpha_next
    st.rhobar = -cs * alpha_next
    phi = cs * st.phibar
    st.phibar = sn * st.phibar
    tau = sn * phi

    w = st.w
    st.ddnorm += float(w @ w) / (rho * rho)
    st.x += (phi / rho) * w
    w *= -(theta / rho)
    w += v_next

    delta = st.sn2 * rho
    gambar = -st.cs2 * rho
    rhs = phi - delta * st.z
    zbar = rhs / gambar
    st.normx = math.sqrt(st.xxnorm + zbar * zbar)
    gamma = math.hypot(gambar, theta)
    st.cs2, st.sn2 = gambar / gamma, theta / gamma
    st.z = rhs / gamma
    st.xxnorm += st.z * st.z

    st.conda = st.norma * math.sqrt(st.ddnorm)
    st.res2 += psi * psi
    st.normr = math.sqrt(st.phibar * st.phibar + st.res2)
    st.normar = alpha_next * abs(tau)
    st.alpha = alpha_next
    for name in ("rhobar", "phibar", "normr", "normx", "conda"):
        if not math.isfinite(getattr(st, name)):
            raise NonFiniteError(st.k, name)


def _decide(st, opts: SolveOptions, normx: float, normb: float, limit: int) -> Optional[StopReason]:
    if st.breakdown_beta:
        return StopReason.BREAKDOWN_CONSISTENT if st.lam == 0.0 else StopReason.BREAKDOWN_LS
    if st.breakdown_alpha:
        return StopReason.BREAKDOWN_LS
    reason = stop_rule(st.normr, st.normar, normx, st.norma, st.conda, normb, opts)
    if reason is None and st.k >= limit:
        return StopReason.MAX_ITER
    return reason


def _record(st, k: int, normx: float, A, b, x, opts: SolveOptions) -> IterationRecord:
    rec = IterationRecord(k, st.normr, st.normar, normx, st.norma, st.conda)
    if opts.diagnostics:
        rec.norm_r_true, rec.norm_atr_true = true_norms(A, b, x, opts.lam)
        rec.e2 = st.normar / st.normr if st.normr > 0 else 0.0
        rec.lemma31_residual = getattr(st, "lemma31_max", None)
        rec.x = x.copy()
    return rec


def _lsqr_core(A: LinearOperator, b: np.ndarray, opts: SolveOptions, sink: Optional[TraceSink],
               limit: int, seg: _Segment) -> SolveResult:
    n = A.ncols
    mode = ReorthMode.V_ONLY if opts.reorth.kind == "restart" else opts.reorth
    beta1, gk = gk_init(A, b, mode, opts.memory_cap)
    normb = beta1 if seg.normb is None else seg.normb
    if gk.b_zero:
        return SolveResult(np.zeros(n), StopReason.B_ZERO, 0, 0.0, 0.0, 0.0, 0.0, 1.0)
    if gk.atb_zero:
        return SolveResult(np.zeros(n), StopReason.BREAKDOWN_LS, 0, beta1, 0.0, 0.0, 0.0, 1.0)
    st = LsqrState.start(beta1, gk.alpha, gk.v, opts.lam)
    reason = None
    while reason is None:
        beta, alpha = gk_step(A, gk)
        lsqr_step(st, alpha, beta, gk.v)
        st.breakdown_beta, st.breakdown_alpha = gk.beta_breakdown, gk.alpha_breakdown
        st.norma = max(st.norma, seg.norma_floor)
        xg = st.x if seg.x_offset is None else seg.x_offset + st.x
        normx = st.normx if seg.x_offset is None else float(np.linalg.norm(xg))
        reason = _decide(st, opts, normx, normb, limit)
        if sink is not None:
            bg = b if seg.b_global is None else seg.b_global
            sink(_record(st, seg.k_offset + st.k, normx, A, bg, xg, opts))
    if not np.all(np.isfinite(st.x)):
        raise NonFiniteError(st.k, "x")
    return SolveResult(st.x, reason, st.k, st.normr, st.normar, st.normx, st.norma, st.conda)


def lsqr_solve(A, b, opts: Optional[SolveOptions] = None,
               trace_sink: Optional[TraceSink] = None) -> SolveResult:
    """LSQR with the same options, stopping rules and result type as LSMR."""
    opts = opts or SolveOptions()
    A, b = _validate(A, b)
    if opts.reorth.kind == "restart":
        return run_restarted(_lsqr_core, A, b, opts, trace_sink)
    return _lsqr_core(A, b, opts, trace_sink, opts.iteration_limit(*A.shape), _Segment())


@dataclass
class LockstepRecord:
    """One row of a lockstep run; a solver's record is ``None`` once it has stopped."""

    k: int
    lsmr: Optional[IterationRecord]
    lsqr: Optional[IterationRecord]


def run_lockstep(A, b, opts: Optional[SolveOptions] = None,
                 trace_sink: Optional[Callable[[LockstepRecord], None]] = None
                 ) -> tuple[SolveResult, SolveResult]:
    """Run LSMR and LSQR on one shared bidiagonalization.

    Both consume identical ``alpha``/``beta``/``v`` at every step, so any
    difference between them comes from the solvers alone.  The process runs
    until both have stopped.  Returns ``(lsmr_result, lsqr_result)``.
    """
    opts = opts or SolveOptions()
    A, b = _validate(A, b)
    if opts.reorth.kind == "restart":
        raise ValueError("restarted reorthogonalization cannot share one bidiagonalization")
    m, n = A.shape
    limit = opts.iteration_limit(m, n)
    beta1, gk = gk_init(A, b, opts.reorth, opts.memory_cap)
    if gk.b_zero or gk.atb_zero:
        reason = StopReason.B_ZERO if gk.b_zero else StopReason.BREAKDOWN_LS
        res = SolveResult(np.zeros(n), reason, 0, beta1, 0.0, 0.0, 0.0, 1.0)
        return res, SolveResult(res.x.copy(), reason, 0, beta1, 0.0, 0.0, 0.0, 1.0)
    sm = LsmrState.start(beta1, gk.alpha, gk.v, opts.lam)
    sq = LsqrState.start(beta1, gk.alpha, gk.v, opts.lam)
    done = {"lsmr": None, "lsqr": None}
    while done["lsmr"] is None or done["lsqr"] is None:
        beta, alpha = gk_step(A, gk)
        row = LockstepRecord(gk.k - 1, None, None)
        for name, st, step in (("lsmr", sm, lsmr_step), ("lsqr", sq, lsqr_step)):
            if done[name] is not None:
                continue
            step(st, alpha, beta, gk.v)
            st.breakdown_beta, st.breakdown_alpha = gk.beta_breakdown, gk.alpha_breakdown
            done[name] = _decide(st, opts, st.normx, beta1, limit)
            setattr(row, name, _record(st, st.k, st.normx, A, b, st.x, opts))
        if trace_sink is not None:
            trace_sink(row)
    return tuple(SolveResult(st.x, done[name], st.k, st.normr, st.normar, st.normx, st.norma, st.conda)
                 for name, st in (("lsmr", sm), ("lsqr", sq)))
