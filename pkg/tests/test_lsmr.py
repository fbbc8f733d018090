import math

import numpy as np
import pytest

import lsmrkit.lsmr as lsmr_mod
from lsmrkit.backerr import dense_ls_solve, dense_minnorm_solve
from lsmrkit.gk import ReorthMemoryError, ReorthMode, gk_init, gk_step
from lsmrkit.linop import (EPS, CountingOperator, DenseMatrix, DimensionError, IdentityOperator,
                           LinearOperator)
from lsmrkit.lsmr import (LsmrState, NonFiniteError, SolveOptions, StopReason, atr_norm, check_stop,
                          lsmr_solve, step_main_recurrence, step_norm_cond_chain,
                          step_residual_chain, step_xnorm_chain, sym_ortho)

from conftest import random_problem, rel

TIGHT = dict(atol=0.0, btol=0.0, conlim=1e30)


def trace(A, b, **kw):
    recs = []
    res = lsmr_solve(A, b, SolveOptions(**kw), recs.append)
    return res, recs


# sym_ortho

def test_sym_ortho_examples():
    assert sym_ortho(3.0, 4.0) == pytest.approx((0.6, 0.8, 5.0), rel=1e-15)
    assert sym_ortho(2.5, 0.0) == (1.0, 0.0, 2.5)
    assert sym_ortho(0.0, 0.0) == (1.0, 0.0, 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_sym_ortho_properties(seed):
    rng = np.random.default_rng(seed)
    for _ in range(200):
        a, b = rng.standard_normal(2) * 10.0 ** rng.integers(-300, 300, size=2)
        c, s, r = sym_ortho(a, b)
        scale = max(abs(a), abs(b))
        assert r >= 0 and math.isfinite(r)
        assert abs(c * c + s * s - 1) <= 4 * EPS
        assert abs(c * a + s * b - r) <= 4 * EPS * scale
        assert abs(-s * a + c * b) <= 4 * EPS * scale


def test_sym_ortho_no_overflow():
    c, s, r = sym_ortho(1e308, 1e308)
    assert math.isfinite(r) and r == pytest.approx(math.sqrt(2) * 1e308)


# solver examples

def test_identity_solves_in_one_step():
    res = lsmr_solve(IdentityOperator(3), [1.0, 2.0, 3.0])
    assert res.reason is StopReason.BREAKDOWN_CONSISTENT and res.iterations == 1
    np.testing.assert_allclose(res.x, [1, 2, 3], rtol=1e-15)


def test_averaging_problem():
    res = lsmr_solve([[1.0], [1.0]], [2.0, 0.0], SolveOptions(atol=1e-8, btol=1e-8))
    assert res.reason in (StopReason.S2_LEAST_SQUARES, StopReason.BREAKDOWN_LS)
    assert res.x[0] == pytest.approx(1.0, rel=1e-14)
    assert res.norm_r == pytest.approx(math.sqrt(2), rel=1e-14)


def test_regularized_scalar():
    res = lsmr_solve([[1.0]], [1.0], SolveOptions(lam=1.0))
    assert res.x[0] == pytest.approx(0.5, rel=1e-14)


def test_singular_consistent_minimum_norm():
    res = lsmr_solve([[1.0, 1.0], [1.0, 1.0]], [2.0, 2.0])
    np.testing.assert_allclose(res.x, [1.0, 1.0], rtol=1e-14)


@pytest.mark.parametrize("seed", range(3))
def test_random_50x20_matches_dense_oracle(seed):
    A, b = random_problem(seed, 50, 20, cond=100)
    res = lsmr_solve(A, b, SolveOptions(atol=1e-12, btol=1e-12))
    assert rel(res.x, dense_ls_solve(A, b)) <= 1e-8


def test_zero_rhs():
    res = lsmr_solve(np.ones((3, 2)), np.zeros(3))
    assert res.reason is StopReason.B_ZERO and res.iterations == 0
    np.testing.assert_array_equal(res.x, 0)


def test_rhs_orthogonal_to_range():
    res = lsmr_solve([[1.0], [-1.0]], [1.0, 1.0])
    assert res.reason is StopReason.BREAKDOWN_LS and res.iterations == 0
    assert res.norm_r == pytest.approx(math.sqrt(2))


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        lsmr_solve(np.ones((3, 2)), np.ones(2))


@pytest.mark.parametrize("kw", [dict(atol=-1.0), dict(btol=1.0), dict(conlim=1.0), dict(lam=-0.1),
                                dict(max_iter=0), dict(lam=math.inf)])
def test_options_validated(kw):
    with pytest.raises(ValueError):
        SolveOptions(**kw)


def test_default_iteration_limit():
    assert SolveOptions().iteration_limit(30, 7) == 28
    A, b = random_problem(0, 30, 7, cond=1e6)
    res = lsmr_solve(A, b, SolveOptions(**TIGHT))
    assert res.iterations <= 28


def test_max_iter_reason():
    A, b = random_problem(0, 30, 20, cond=1e4)
    res = lsmr_solve(A, b, SolveOptions(max_iter=3))
    assert res.reason is StopReason.MAX_ITER and res.iterations == 3


def test_condition_limit_reason():
    A, b = random_problem(1, 40, 20, cond=1e6)
    res = lsmr_solve(A, b, SolveOptions(atol=1e-14, btol=1e-14, conlim=10.0))
    assert res.reason is StopReason.S3_COND_LIMIT


def test_memory_cap_propagates():
    A, b = random_problem(1, 40, 20)
    with pytest.raises(ReorthMemoryError):
        lsmr_solve(A, b, SolveOptions(reorth=ReorthMode.BOTH, memory_cap=1000, **TIGHT))


class _PoisonOperator(LinearOperator):
    def __init__(self, a, bad_call):
        super().__init__(*a.shape)
        self.a, self.calls, self.bad_call = a, 0, bad_call

    def _matvec(self, v):
        self.calls += 1
        out = self.a @ v
        if self.calls == self.bad_call:
            out[0] = np.nan
        return out

    def _rmatvec(self, u):
        return self.a.T @ u


def test_nonfinite_detected_with_iteration():
    A, b = random_problem(2, 20, 10)
    with pytest.raises(NonFiniteError) as info:
        lsmr_solve(_PoisonOperator(A, bad_call=3), b, SolveOptions(**TIGHT))
    assert info.value.iteration == 3


# step functions on hand-sized cases

def _start(A, b, lam=0.0, mode=ReorthMode.NONE):
    A = DenseMatrix(A) if not isinstance(A, LinearOperator) else A
    beta1, gk = gk_init(A, np.asarray(b, dtype=float), mode)
    return A, gk, LsmrState.start(beta1, gk.alpha, gk.v, lam)


def _advance(A, gk, st):
    beta, alpha = gk_step(A, gk)
    step_main_recurrence(st, alpha, beta, gk.v)
    step_residual_chain(st)
    st.normar = atr_norm(st)
    step_xnorm_chain(st)
    step_norm_cond_chain(st, alpha, beta)
    return beta, alpha


def test_lambda_zero_skips_regularization_rotation():
    A, gk, st = _start(np.diag([1.0, 2.0]), [1.0, 1.0])
    alphabar = st.alphabar
    beta, alpha = gk_step(A, gk)
    step_main_recurrence(st, alpha, beta, gk.v)
    assert (st.chat, st.shat, st.alphahat) == (1.0, 0.0, alphabar)


def test_first_rho_on_diag_example():
    # alpha1^2 = 5/2 and beta2^2 = 9/10 from the 2x2 bidiagonalization
    A, gk, st = _start(np.diag([1.0, 2.0]), [1.0, 1.0])
    beta, alpha = gk_step(A, gk)
    step_main_recurrence(st, alpha, beta, gk.v)
    assert st.rho == pytest.approx(math.sqrt(3.4), rel=1e-14)


def test_atr_norm_before_first_step():
    A, gk, st = _start(np.diag([1.0, 2.0]), [1.0, 1.0])
    assert atr_norm(st) == pytest.approx(math.sqrt(2.5) * math.sqrt(2), rel=1e-15)


@pytest.mark.parametrize("lam", [0.0, 0.3])
def test_rotation_and_positivity_invariants(lam):
    A, b = random_problem(4, 30, 12, cond=1e3)
    A, gk, st = _start(A, b, lam)
    for _ in range(12):
        zetabar = st.zetabar
        beta, _ = _advance(A, gk, st)
        for c, s in ((st.c, st.s), (st.cbar, st.sbar), (st.ctilde, st.stilde), (st.chat, st.shat)):
            assert abs(c * c + s * s - 1) <= 4 * EPS
        assert st.rho > 0 and st.rhobar > 0 and st.rhodot > 0 and st.rhotilde > 0
        assert abs(st.zetabar) == pytest.approx(abs(st.sbar) * abs(zetabar), rel=4 * EPS)
        assert abs(st.zetabar) <= abs(zetabar)
        if gk.terminated:
            break


def test_residual_base_case():
    A, b = random_problem(3, 10, 5)
    A, gk, st = _start(A, b)
    beta, alpha = gk_step(A, gk)
    step_main_recurrence(st, alpha, beta, gk.v)
    normr = step_residual_chain(st)
    assert normr == math.sqrt((st.betad - st.taudot) ** 2 + st.betadd ** 2)


def test_consistent_residual_converges_to_zero():
    A, b = random_problem(5, 30, 30, cond=10, consistent=True)
    res, recs = trace(A, b, reorth=ReorthMode.BOTH, **TIGHT)
    assert recs[-1].norm_r_est <= 1e-10 * np.linalg.norm(b)


def test_xnorm_identity_equals_rhs_norm():
    b = np.array([3.0, -1.0, 2.0])
    res, recs = trace(IdentityOperator(3), b)
    assert len(recs) == 1
    assert recs[0].norm_x_est == pytest.approx(np.linalg.norm(b), rel=1e-15)


def test_xnorm_first_iteration_exact():
    A, b = random_problem(6, 20, 8)
    _, recs = trace(A, b, max_iter=1, diagnostics=True)
    assert recs[0].norm_x_est == pytest.approx(np.linalg.norm(recs[0].x), rel=1e-14)


def test_norm_and_cond_identity():
    _, recs = trace(IdentityOperator(4), np.arange(1.0, 5.0))
    assert recs[0].norm_a_est == pytest.approx(1.0, rel=1e-15)
    assert recs[0].cond_est == pytest.approx(1.0, rel=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_norm_and_cond_bounds(seed):
    A, b = random_problem(seed, 40, 10, cond=1e3)
    res = lsmr_solve(A, b, SolveOptions(reorth=ReorthMode.BOTH, **TIGHT))
    s = np.linalg.svd(A, compute_uv=False)
    assert res.norm_a <= np.linalg.norm(A) * (1 + 1e-12)
    assert res.cond_a <= 10 * s[0] / s[-1]


@pytest.mark.parametrize("seed", range(4))
def test_estimators_track_true_norms_30x10(seed):
    A, b = random_problem(seed, 30, 10, cond=100)
    _, recs = trace(A, b, reorth=ReorthMode.BOTH, diagnostics=True, **TIGHT)
    fro = np.linalg.norm(A)
    for r in recs:
        xk = np.linalg.norm(r.x)
        assert abs(r.norm_r_est - r.norm_r_true) <= 1e-10 * (np.linalg.norm(b) + fro * xk)
        assert abs(r.norm_atr_est - r.norm_atr_true) <= 1e-8 * fro * r.norm_r_true
        assert abs(r.norm_x_est - xk) <= 1e-10 * xk


# stopping logic

def test_check_stop_zero_rhs():
    res = lsmr_solve(IdentityOperator(2), [0.0, 0.0])
    assert res.reason is StopReason.B_ZERO


def test_check_stop_averaging_s2():
    # n = 1 makes alpha_2 vanish, so clear the breakdown flag to exercise S2 itself
    A, gk, st = _start(np.array([[1.0], [1.0]]), [2.0, 0.0])
    _advance(A, gk, st)
    opts = SolveOptions(atol=1e-8, btol=1e-8)
    assert gk.alpha_breakdown
    st.breakdown_alpha = True
    assert check_stop(st, opts, 2, 1) is StopReason.BREAKDOWN_LS
    st.breakdown_alpha = False
    assert check_stop(st, opts, 2, 1) is StopReason.S2_LEAST_SQUARES
    r = np.array([2.0, 0.0]) - A.array @ st.x
    assert np.linalg.norm(A.array.T @ r) <= 1e-8 * np.linalg.norm(A.array) * np.linalg.norm(r)


def test_stop_priority_breakdown_first():
    A, gk, st = _start(np.eye(2), [1.0, 0.0])
    _advance(A, gk, st)
    st.breakdown_beta = gk.beta_breakdown
    # S1 also holds here; the breakdown must win
    assert lsmr_mod.stop_rule(st.normr, st.normar, st.normx, st.norma, st.conda, st.normb,
                              SolveOptions()) is StopReason.S1_COMPATIBLE
    assert check_stop(st, SolveOptions(), 2, 2) is StopReason.BREAKDOWN_CONSISTENT


def test_machine_precision_stop():
    A, b = random_problem(7, 30, 10, cond=10)
    res = lsmr_solve(A, b, SolveOptions(**TIGHT))
    assert res.reason in (StopReason.S2_EPS, StopReason.S1_EPS, StopReason.BREAKDOWN_LS)


# monotonicity and trace structure

@pytest.mark.parametrize("mode", ["none", "v", "u", "both", "local:3"])
@pytest.mark.parametrize("lam", [0.0, 0.5])
def test_atr_estimate_nonincreasing(mode, lam):
    A, b = random_problem(11, 40, 20, cond=1e4)
    _, recs = trace(A, b, reorth=ReorthMode.parse(mode), lam=lam, atol=1e-10, btol=1e-10)
    seq = [r.norm_atr_est for r in recs]
    assert all(y <= x for x, y in zip(seq, seq[1:]))


def test_trace_one_record_per_iteration():
    A, b = random_problem(3, 20, 10)
    res, recs = trace(A, b)
    assert [r.k for r in recs] == list(range(1, res.iterations + 1))
    assert all(r.norm_r_true is None and r.x is None for r in recs)
    _, recs = trace(A, b, diagnostics=True)
    assert all(r.norm_r_true is not None and r.lemma31_residual is not None for r in recs)


@pytest.mark.parametrize("seed", range(3))
def test_lemma_residual_tiny(seed):
    A, b = random_problem(seed, 40, 20, cond=1e3)
    _, recs = trace(A, b, diagnostics=True, **TIGHT)
    assert max(r.lemma31_residual for r in recs) <= 1e-12 * np.linalg.norm(b)


# regularization

@pytest.mark.parametrize("lam", [0.1, 1.0, 10.0])
def test_damped_equals_augmented(lam):
    A, b = random_problem(21, 20, 10, cond=100)
    opts = dict(atol=1e-12, btol=1e-12)
    damped = lsmr_solve(A, b, SolveOptions(lam=lam, **opts))
    aug = lsmr_solve(np.vstack([A, lam * np.eye(10)]), np.concatenate([b, np.zeros(10)]),
                     SolveOptions(**opts))
    assert rel(damped.x, aug.x) <= 1e-8
    assert damped.norm_r == pytest.approx(aug.norm_r, rel=1e-8)


@pytest.mark.parametrize("seed", range(3))
def test_lambda_zero_bitwise(monkeypatch, seed):
    A, b = random_problem(seed, 30, 15, cond=1e3)
    opts = SolveOptions(atol=1e-10, btol=1e-10)
    fast, fast_recs = trace(A, b, atol=1e-10, btol=1e-10)
    monkeypatch.setattr(lsmr_mod, "LAMBDA_ZERO_FAST_PATH", False)
    slow_recs = []
    slow = lsmr_solve(A, b, opts, slow_recs.append)
    np.testing.assert_array_equal(fast.x, slow.x)
    assert [(r.norm_r_est, r.norm_atr_est, r.norm_x_est) for r in fast_recs] == \
           [(r.norm_r_est, r.norm_atr_est, r.norm_x_est) for r in slow_recs]


# minimum-norm solutions

@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("consistent", [True, False])
def test_rank_deficient_minimum_norm(seed, consistent):
    A, b = random_problem(seed, 14, 10, cond=10, rank=6, consistent=consistent)
    res = lsmr_solve(A, b, SolveOptions(atol=1e-12, btol=1e-12))
    assert rel(res.x, dense_minnorm_solve(A, b)) <= 1e-6


# work and storage

def test_one_forward_one_adjoint_per_iteration():
    A, b = random_problem(2, 40, 20, cond=1e3)
    op = CountingOperator(DenseMatrix(A))
    res = lsmr_solve(op, b, SolveOptions(atol=1e-10, btol=1e-10))
    assert res.reason not in (StopReason.BREAKDOWN_CONSISTENT, StopReason.BREAKDOWN_LS)
    assert op.forward_calls == res.iterations
    assert op.adjoint_calls == res.iterations + 1


def test_long_vector_storage(monkeypatch):
    m, n = 23, 11
    A, b = random_problem(2, m, n)
    seen = {}
    real_step = lsmr_mod.lsmr_step
    real_gk_step = lsmr_mod.gk_step

    def spy_step(st, *args):
        seen["lsmr"] = st
        return real_step(st, *args)

    def spy_gk(A, st):
        seen["gk"] = st
        return real_gk_step(A, st)

    monkeypatch.setattr(lsmr_mod, "lsmr_step", spy_step)
    monkeypatch.setattr(lsmr_mod, "gk_step", spy_gk)
    lsmr_solve(A, b, SolveOptions(max_iter=5))
    arrays = [v for st in seen.values() for v in vars(st).values() if isinstance(v, np.ndarray)]
    assert sorted(len(a) for a in arrays) == [n] * 4 + [m] * 2
    assert seen["gk"].stored_u is None and seen["gk"].stored_v is None


# restart

def test_restart_long_period_matches_plain():
    b = np.array([1.0, 2.0, 3.0])
    plain = lsmr_solve(IdentityOperator(3), b)
    restarted = lsmr_solve(IdentityOperator(3), b, SolveOptions(reorth=ReorthMode.restart(10)))
    np.testing.assert_array_equal(plain.x, restarted.x)
    assert (plain.reason, plain.iterations) == (restarted.reason, restarted.iterations)


def test_restart_segments_monotone_and_cumulative():
    A, b = random_problem(3, 60, 30, cond=1e3)
    res, recs = trace(A, b, reorth=ReorthMode.restart(5), max_iter=40, atol=1e-10, btol=1e-10)
    assert [r.k for r in recs] == list(range(1, res.iterations + 1))
    for start in range(0, len(recs), 5):
        seg = [r.norm_atr_est for r in recs[start:start + 5]]
        assert all(y <= x for x, y in zip(seg, seg[1:]))


def test_restart_converges_no_faster():
    A, b = random_problem(100, 100, 50, cond=1e6)
    opts = dict(atol=1e-8, btol=1e-8, max_iter=2000)
    plain = lsmr_solve(A, b, SolveOptions(**opts))
    restarted = lsmr_solve(A, b, SolveOptions(reorth=ReorthMode.restart(5), **opts))
    assert restarted.iterations >= plain.iterations


def test_restart_reaches_solution_on_easy_problem():
    A, b = random_problem(4, 40, 10, cond=3)
    res = lsmr_solve(A, b, SolveOptions(reorth=ReorthMode.restart(4), atol=1e-12, btol=1e-12))
    assert rel(res.x, dense_ls_solve(A, b)) <= 1e-8
