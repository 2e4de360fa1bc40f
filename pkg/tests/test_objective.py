import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mglasso.model import Hyperparameters, RegressionMatrix, vectorize
from mglasso.objective import (DifferenceOperator, Problem,
                               SmoothedPenaltyState, duality_gap,
                               objective_value, original_duality_gap,
                               prox_l1, smooth_gradient, smoothed_dual,
                               smoothed_fused_gradient, smoothed_fused_value)
from mglasso.solver import SolverConfig, conesta_solve

from oracles import aligned_literal, objective_literal


def _instance(rng, p, n=None):
    n = n or 2 * p
    X = rng.standard_normal((n, p))
    beta = RegressionMatrix(rng.standard_normal((p, p - 1)))
    return X, beta


def test_objective_at_zero():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((7, 4))
    val = objective_value(RegressionMatrix.zeros(4), X, Hyperparameters(2, 3))
    assert val == pytest.approx(0.5 * (X ** 2).sum(), rel=1e-14)


def test_objective_ones_example():
    X = np.ones((3, 3))
    beta = RegressionMatrix(np.full((3, 2), 0.1))
    hp = Hyperparameters(0.5, 0.7)
    # residual per entry 1 - 0.2 = 0.8, nine entries; l1 mass 0.6;
    # all rows align exactly, so the fusion term vanishes
    want = 0.5 * 9 * 0.8 ** 2 + 0.5 * 0.6
    assert objective_value(beta, X, hp) == pytest.approx(want, rel=1e-14)
    assert want == pytest.approx(objective_literal(beta.to_square(), X, 0.5, 0.7))


@pytest.mark.parametrize("seed", range(8))
def test_objective_matches_literal(seed):
    rng = np.random.default_rng(seed)
    p = 2 + seed % 5
    X, beta = _instance(rng, p)
    W = rng.uniform(0, 2, (p, p))
    W = W + W.T
    np.fill_diagonal(W, 0)
    hp = Hyperparameters(0.3, 0.9, W)
    got = objective_value(beta, X, hp)
    want = objective_literal(beta.to_square(), X, 0.3, 0.9, W)
    assert got == pytest.approx(want, rel=1e-12)


def test_objective_lambda2_zero_is_sum_of_lassos():
    rng = np.random.default_rng(3)
    X, beta = _instance(rng, 4)
    B = beta.to_square()
    total = 0.0
    for i in range(4):
        keep = [k for k in range(4) if k != i]
        r = X[:, i] - X[:, keep] @ B[i, keep]
        total += 0.5 * r @ r + 1.2 * np.abs(B[i, keep]).sum()
    assert objective_value(beta, X, Hyperparameters(1.2, 0)) == pytest.approx(total)
    plain = objective_value(beta, X, Hyperparameters(0, 0))
    R = X - X @ B.T
    assert plain == pytest.approx(0.5 * (R ** 2).sum())


def test_objective_dimension_mismatch():
    with pytest.raises(ValueError):
        objective_value(RegressionMatrix.zeros(3), np.ones((4, 4)),
                        Hyperparameters(0, 0))


def _quad(beta_vec, X, p):
    return objective_value(RegressionMatrix(beta_vec.reshape(p, p - 1)), X,
                           Hyperparameters(0, 0))


def test_smooth_gradient_finite_differences():
    rng = np.random.default_rng(5)
    X, beta = _instance(rng, 5, 8)
    g = smooth_gradient(beta, X).ravel()
    v = vectorize(beta)
    h = 1e-5
    fd = np.array([(_quad(v + h * e, X, 5) - _quad(v - h * e, X, 5)) / (2 * h)
                   for e in np.eye(v.size)])
    assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(fd)


def test_smooth_gradient_at_least_squares_and_zero():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((12, 4))
    B = np.zeros((4, 4))
    for i in range(4):
        keep = [k for k in range(4) if k != i]
        B[i, keep] = np.linalg.pinv(X[:, keep]) @ X[:, i]
    g = smooth_gradient(RegressionMatrix.from_square(B), X)
    assert np.abs(g).max() <= 1e-8
    g0 = smooth_gradient(RegressionMatrix.zeros(4), X)
    for i in range(4):
        keep = [k for k in range(4) if k != i]
        assert np.allclose(g0[i], -X[:, keep].T @ X[:, i])


def test_prox_l1_examples():
    assert prox_l1(np.array([3.0]), 1.0).tolist() == [2.0]
    assert prox_l1(np.array([-0.5]), 1.0).tolist() == [0.0]
    v = np.array([1.5, -2.0, 0.0])
    assert np.array_equal(prox_l1(v, 0.0), v)
    with pytest.raises(ValueError):
        prox_l1(v, -1)


vecs = arrays(float, 6, elements=st.floats(-50, 50))


@given(vecs, vecs, st.floats(0, 20))
def test_prox_l1_nonexpansive(u, v, t):
    assert (np.linalg.norm(prox_l1(u, t) - prox_l1(v, t))
            <= np.linalg.norm(u - v) + 1e-12)


def test_smoothed_value_branches():
    D = DifferenceOperator(2)
    assert smoothed_fused_value(np.array([3.0, 0.0]), D, 1.0) == 2.5
    assert smoothed_fused_value(np.array([0.5, 0.0]), D, 1.0) == 0.125
    assert smoothed_fused_value(np.zeros(12), DifferenceOperator(4), 0.3) == 0
    with pytest.raises(ValueError):
        smoothed_fused_value(np.zeros(2), D, 0.0)


def test_difference_operator_structure():
    p = 5
    D = DifferenceOperator(p)
    assert D.n_blocks == p * (p - 1) // 2
    M = D.matrix.toarray()
    for row in M:
        nz = np.flatnonzero(row)
        assert len(nz) == 2 and sorted(row[nz].tolist()) == [-1.0, 1.0]
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal(p * (p - 1)), rng.standard_normal(p * (p - 1))
    assert np.allclose(D.apply(2 * a - 3 * b), 2 * D.apply(a) - 3 * D.apply(b))
    for bidx, (i, j) in enumerate(D.pairs):
        B = RegressionMatrix(a.reshape(p, p - 1)).to_square()
        assert np.allclose(D.apply(a)[bidx], aligned_literal(B, i, j))


def test_difference_operator_weights():
    W = np.array([[0, 2.0, 0], [2.0, 0, 0.5], [0, 0.5, 0]])
    D = DifferenceOperator(3, W)
    assert D.n_blocks == 2
    vals = sorted(set(np.abs(D.matrix.data).tolist()))
    assert vals == [0.5, 2.0]


@given(st.integers(2, 6), st.integers(0, 10 ** 6),
       st.sampled_from([1.0, 0.1, 0.01, 0.001]))
def test_smoothing_bound_and_unit_ball(p, seed, mu):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(p * (p - 1)) * rng.choice([1e-3, 1, 10])
    D = DifferenceOperator(p)
    z = D.apply(v)
    exact = np.sqrt((z ** 2).sum(axis=1)).sum()
    smooth = smoothed_fused_value(v, D, mu)
    assert -1e-12 <= exact - smooth <= mu * D.n_blocks / 2 + 1e-12
    alpha = SmoothedPenaltyState.at(z, mu).alpha_star
    assert np.all(np.sqrt((alpha ** 2).sum(axis=1)) <= 1 + 1e-12)


@given(st.integers(2, 6), st.integers(0, 10 ** 6))
def test_smoothed_value_monotone_in_mu(p, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(p * (p - 1)) * 0.1
    D = DifferenceOperator(p)
    vals = [smoothed_fused_value(v, D, mu) for mu in (1, 0.1, 0.01, 0.001)]
    assert all(b >= a - 1e-14 for a, b in zip(vals, vals[1:]))
    z = D.apply(v)
    assert vals[-1] == pytest.approx(np.sqrt((z ** 2).sum(axis=1)).sum(),
                                     abs=0.001 * D.n_blocks / 2 + 1e-12)


def test_smoothed_gradient_finite_differences_p4():
    rng = np.random.default_rng(11)
    D = DifferenceOperator(4)
    v = rng.standard_normal(12)
    g = smoothed_fused_gradient(v, D, 0.05)
    h = 1e-6
    fd = np.array([(smoothed_fused_value(v + h * e, D, 0.05)
                    - smoothed_fused_value(v - h * e, D, 0.05)) / (2 * h)
                   for e in np.eye(12)])
    assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)
    assert np.array_equal(smoothed_fused_gradient(np.zeros(12), D, 0.05),
                          np.zeros(12))


def test_problem_matches_public_objective():
    rng = np.random.default_rng(4)
    X, beta = _instance(rng, 5)
    hp = Hyperparameters(0.4, 0.6)
    prob = Problem.from_data(X, hp)
    assert prob.value(beta.to_square()) == pytest.approx(
        objective_value(beta, X, hp), rel=1e-12)


def test_smoothed_dual_blocks_in_ball():
    rng = np.random.default_rng(8)
    X, beta = _instance(rng, 4)
    alpha = smoothed_dual(beta, X, Hyperparameters(0.1, 2.0), 0.01).alpha_star
    assert alpha.shape == (6, 3)
    assert np.all(np.linalg.norm(alpha, axis=1) <= 1 + 1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_duality_gap_nonnegative(seed):
    rng = np.random.default_rng(seed)
    X, beta = _instance(rng, 2 + seed % 4)
    hp = Hyperparameters(rng.uniform(0, 2), rng.uniform(0, 2))
    assert duality_gap(beta, X, hp, 0.1) >= 0
    assert original_duality_gap(beta, X, hp) >= 0


def test_duality_gap_positive_at_zero():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((6, 3))
    assert duality_gap(RegressionMatrix.zeros(3), X, Hyperparameters(0.1, 0.1),
                       0.1) > 0
    with pytest.raises(ValueError):
        duality_gap(RegressionMatrix.zeros(3), X, Hyperparameters(0, 0), 0)


def test_duality_gap_vanishes_at_solution():
    rng = np.random.default_rng(12)
    X = rng.standard_normal((6, 3))
    hp = Hyperparameters(0.3, 0.4)
    beta, diag = conesta_solve(X, hp, SolverConfig(eps_target=1e-12,
                                                   relative=False))
    assert diag.final_duality_gap <= 1e-6
    assert original_duality_gap(beta, X, hp) <= 1e-6
