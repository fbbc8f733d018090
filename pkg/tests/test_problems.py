import numpy as np
import pytest

from lsmrkit.backerr import dense_minnorm_solve, jacobi_svd
from lsmrkit.problems import make_problem, singular_spectrum


def test_deterministic():
    p, q = make_problem(42, 20, 10, 1e3), make_problem(42, 20, 10, 1e3)
    np.testing.assert_array_equal(p.A, q.A)
    np.testing.assert_array_equal(p.b, q.b)


def test_spectrum_and_condition():
    p = make_problem(1, 30, 12, cond=1e4)
    s = np.linalg.svd(p.A, compute_uv=False)
    np.testing.assert_allclose(s, p.singular_values, rtol=1e-10)
    assert s[0] / s[-1] == pytest.approx(1e4, rel=1e-8)


def test_rank_deficient():
    p = make_problem(42, 20, 10, cond=1e3, rank=5)
    _, s, _ = jacobi_svd(p.A)
    assert len(s) == 5 and np.sum(s > 1e-10 * s[0]) == 5


def test_consistent_rhs():
    p = make_problem(3, 20, 10, cond=1e3, rank=6, consistent=True)
    x = dense_minnorm_solve(p.A, p.b)
    assert np.linalg.norm(p.b - p.A @ x) <= 1e-10


@pytest.mark.parametrize("args", [(0, 0, 5), (0, 5, -1)])
def test_invalid_dimensions(args):
    with pytest.raises(ValueError):
        make_problem(*args)


def test_invalid_spectrum():
    with pytest.raises(ValueError):
        singular_spectrum(4, 0.5)
    with pytest.raises(ValueError):
        singular_spectrum(4, 10.0, rank=5)
