import numpy as np
import pytest
import scipy.sparse as sp

from hdgdirk.solvers import (BlockILU0, FunctionSystem, LinearConfig, LinearSolveError,
                             NewtonConfig, NewtonFailure, SingularMatrixError, batched_solve,
                             dense_lu_solve, gmres_ilu0, newton_solve)


def test_dense_identity_and_hand_example():
    b = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(dense_lu_solve(np.eye(3), b), b)
    np.testing.assert_allclose(dense_lu_solve([[2.0, 1.0], [1.0, 3.0]], [3.0, 4.0]), [1.0, 1.0])


def test_dense_random_residual(rng):
    a = rng.standard_normal((50, 50)) + 10 * np.eye(50)
    b = rng.standard_normal(50)
    x = dense_lu_solve(a, b)
    assert np.linalg.norm(a @ x - b) / np.linalg.norm(b) < 1e-12


def test_dense_singular():
    with pytest.raises(SingularMatrixError):
        dense_lu_solve([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0])
    with pytest.raises(ValueError):
        dense_lu_solve(np.ones((2, 3)), np.ones(2))


def test_batched_solve_names_singular_block():
    a = np.stack([np.eye(2), np.zeros((2, 2)), np.eye(2)])
    with pytest.raises(SingularMatrixError, match="element 1"):
        batched_solve(a, np.ones((3, 2)))


def test_gmres_identity():
    b = np.arange(1.0, 7.0)
    x, info = gmres_ilu0(sp.identity(6, format="csr"), b)
    np.testing.assert_allclose(x, b)
    assert info["iterations"] <= 1


def test_gmres_diagonal():
    n = 40
    a = sp.diags(np.arange(1.0, n + 1)).tocsr()
    b = np.ones(n)
    x, info = gmres_ilu0(a, b)
    assert info["relres"] <= 1e-4
    assert info["iterations"] <= n


def test_gmres_random_dominant(rng):
    n = 200
    a = sp.random(n, n, density=0.03, random_state=np.random.RandomState(3), format="csr")
    a = a + sp.diags(np.abs(a).sum(axis=1).A1 + 1.0)
    b = rng.standard_normal(n)
    x, info = gmres_ilu0(a.tocsr(), b)
    ref = np.linalg.solve(a.toarray(), b)
    assert np.linalg.norm(x - ref) / np.linalg.norm(ref) < 1e-3
    assert info["relres"] <= 1e-4


def test_ilu_exact_for_triangular_blocks(rng):
    nb, bs = 12, 3
    blocks = np.zeros((nb, nb, bs, bs))
    for i in range(nb):
        blocks[i, i] = rng.standard_normal((bs, bs)) + 4 * np.eye(bs)
        for j in range(i):
            if rng.random() < 0.4:
                blocks[i, j] = rng.standard_normal((bs, bs))
    dense = blocks.transpose(0, 2, 1, 3).reshape(nb * bs, nb * bs)
    a = sp.bsr_matrix(dense, blocksize=(bs, bs))
    b = rng.standard_normal(nb * bs)
    np.testing.assert_allclose(BlockILU0(a).solve(b), np.linalg.solve(dense, b), rtol=1e-10)
    x, info = gmres_ilu0(a, b, rtol=1e-10)
    assert info["iterations"] == 1


def test_ilu_zero_pivot():
    a = sp.bsr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]), blocksize=(1, 1))
    with pytest.raises(SingularMatrixError):
        BlockILU0(a)


def test_gmres_stagnation_is_reported():
    n = 12
    lap = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n))
    a = (sp.kron(lap, sp.identity(n)) + sp.kron(sp.identity(n), lap)).tocsr()
    with pytest.raises(LinearSolveError):
        gmres_ilu0(a, np.ones(n * n), LinearConfig(rtol=1e-12, restart=1, max_iter=1))


def test_linear_config_validation():
    with pytest.raises(ValueError):
        LinearConfig(rtol=0.0)
    with pytest.raises(ValueError):
        NewtonConfig(tol=-1.0)
    with pytest.raises(ValueError):
        NewtonConfig(max_iter=0)


def test_newton_linear_one_iteration():
    a = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, 1.0])
    sys = FunctionSystem(lambda x: a @ x - b, lambda x: a)
    x, stats = newton_solve(sys, np.array([10.0, -7.0]))
    assert stats.n_it == 1 and stats.converged
    np.testing.assert_allclose(a @ x, b)


def test_newton_square_root():
    sys = FunctionSystem(lambda x: x ** 2 - 4.0, lambda x: np.diag(2 * x))
    x, stats = newton_solve(sys, np.array([3.0]), damped=False)
    assert abs(x[0] - 2.0) < 1e-10
    assert stats.n_it <= 7


def test_newton_quadratic_tail():
    errs = []
    x = np.array([3.0])
    for _ in range(4):
        x = x - (x ** 2 - 4) / (2 * x)
        errs.append(abs(x[0] - 2))
    ratios = [errs[k + 1] / errs[k] ** 2 for k in range(2)]
    assert max(ratios) < 1.0
    sys = FunctionSystem(lambda x: x ** 2 - 4.0, lambda x: np.diag(2 * x))
    y, stats = newton_solve(sys, np.array([3.0]), NewtonConfig(max_iter=5))
    assert abs(y[0] - 2.0) < 1e-10


def test_newton_damping_handles_arctan():
    # full Newton diverges for arctan from x0 = 1.5
    sys = FunctionSystem(np.arctan, lambda x: np.diag(1 / (1 + x ** 2)))
    x, stats = newton_solve(sys, np.array([1.5]))
    assert abs(x[0]) < 1e-10
    assert stats.line_search_cuts > 0


def test_newton_failure_carries_stats():
    sys = FunctionSystem(lambda x: x ** 2 + 1.0, lambda x: np.diag(2 * x))
    with pytest.raises(NewtonFailure) as exc:
        newton_solve(sys, np.array([3.0]), NewtonConfig(max_iter=2))
    assert exc.value.stats is not None


def test_damped_merit_never_increases():
    merits = []

    class Recorder(FunctionSystem):
        def step(self, x, dx, s):
            return super().step(x, dx, s)

        def evaluate(self, x):
            ev = super().evaluate(x)
            merits.append(ev["merit"])
            return ev

    accepted = []
    sys = Recorder(np.arctan, lambda x: np.diag(1 / (1 + x ** 2)))
    orig_direction = sys.direction

    def direction(x, ev, stats):
        accepted.append(ev["merit"])
        return orig_direction(x, ev, stats)

    sys.direction = direction
    newton_solve(sys, np.array([1.5]))
    assert all(b <= a for a, b in zip(accepted, accepted[1:]))


def test_newton_started_at_the_root():
    # the mandatory first update cannot decrease a round-off residual
    sys = FunctionSystem(lambda x: np.sin(x) + 1e-17 * np.cos(3 * x), lambda x: np.diag(np.cos(x)))
    x, stats = newton_solve(sys, np.zeros(3), NewtonConfig(tol=1e-10))
    assert stats.converged and stats.n_it == 1
    assert np.abs(x).max() < 1e-15
