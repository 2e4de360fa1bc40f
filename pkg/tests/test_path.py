import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mglasso.baseline import neighborhood_selection
from mglasso.evaluation import adjusted_rand_index
from mglasso.model import (Graph, Hyperparameters, Partition,
                           RegressionMatrix, graph_from_beta,
                           pairwise_distances, standardize)
from mglasso.objective import objective_value
from mglasso.path import (PathConfig, cluster_level_graph, detect_fusions,
                          init_beta, lambda1_max, mglasso_path)
from mglasso.solver import SolverConfig, conesta_solve
from mglasso.synthetic import SimConfig, simulate


def _data(seed, n, p):
    return standardize(np.random.default_rng(seed).standard_normal((n, p)))


def test_config_validation():
    for bad in (dict(kappa=1.0), dict(eps_fuse=-1), dict(max_levels=0),
                dict(lambda2_start=0.0)):
        with pytest.raises(ValueError):
            PathConfig(**bad)


def test_geometric_schedule():
    lam = PathConfig(lambda2_start=0.01, kappa=2, max_levels=5).schedule()
    assert np.allclose(lam, [0.01, 0.02, 0.04, 0.08, 0.16], rtol=1e-15)


def test_init_beta_orthonormal_columns():
    Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((12, 4)))
    assert np.abs(init_beta(Q).coeffs).max() <= 1e-12


def test_init_beta_matches_normal_equations():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((30, 5))
    B = init_beta(X).to_square()
    for i in range(5):
        keep = [k for k in range(5) if k != i]
        A = X[:, keep]
        ols = np.linalg.solve(A.T @ A, A.T @ X[:, i])
        assert np.allclose(B[i, keep], ols, atol=1e-10)


def test_init_beta_duplicated_columns():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((20, 3))
    X = np.column_stack([X, X[:, 0]])
    B = init_beta(X).to_square()
    assert np.allclose(B[0], [0, 0, 0, 1], atol=1e-10)
    assert np.allclose(B[3], [1, 0, 0, 0], atol=1e-10)
    assert np.all(np.isfinite(B))


def test_detect_fusions_examples():
    aligned = RegressionMatrix(np.full((4, 3), 0.3))
    assert detect_fusions(aligned, Partition.singletons(4), 1e-9).K == 1

    generic = RegressionMatrix(np.random.default_rng(3).standard_normal((5, 4)))
    same = detect_fusions(generic, Partition.singletons(5), 0.0)
    assert same == Partition.singletons(5)

    # rows 0, 1, 2 differ only in their weight on variable 3:
    # d(0,1) = 0.1, d(1,2) = 0.1, d(0,2) = 0.2
    B = np.zeros((4, 4))
    B[1, 3], B[2, 3] = 0.1, 0.2
    B[3] = [5, 5, 5, 0]
    beta = RegressionMatrix.from_square(B)
    D = pairwise_distances(beta)
    assert D[0, 1] == pytest.approx(0.1) and D[1, 2] == pytest.approx(0.1)
    assert D[0, 2] == pytest.approx(0.2)
    part = detect_fusions(beta, Partition.singletons(4), 0.15)
    assert part == Partition(np.array([0, 0, 0, 1]))


def test_detect_fusions_never_splits():
    beta = RegressionMatrix(np.random.default_rng(4).standard_normal((4, 3)))
    cur = Partition(np.array([0, 0, 1, 1]))
    assert detect_fusions(beta, cur, 0.0) == cur
    with pytest.raises(ValueError):
        detect_fusions(beta, Partition.singletons(3), 0.1)


@settings(max_examples=30)
@given(st.integers(0, 10 ** 6), st.integers(2, 7), st.floats(0, 3))
def test_detect_fusions_coarsens(seed, p, eps):
    rng = np.random.default_rng(seed)
    beta = RegressionMatrix(rng.standard_normal((p, p - 1)))
    cur = Partition(rng.integers(0, p, p))
    new = detect_fusions(beta, cur, eps)
    assert cur.refines(new)


def test_path_single_level():
    X = _data(5, 20, 5)
    h = mglasso_path(X, 0.5, PathConfig(lambda2_start=0.3, max_levels=1))
    assert len(h) == 1 and h.lambda2_values == [0.3]


@pytest.mark.parametrize("seed", range(5))
def test_path_two_planted_blocks(seed):
    cfg = SimConfig(p=10, n=200, model="sbm", K=2, pi=(0.5, 0.5), rho=0.5,
                    alpha_in=1.0, alpha_out=0.0, seed=seed)
    truth, X = simulate(cfg)
    Xs = standardize(X)
    h = mglasso_path(Xs, 0.05 * lambda1_max(Xs), PathConfig(max_levels=80))
    assert h.num_clusters[-1] == 1
    best = max(adjusted_rand_index(l.partition, truth.labels) for l in h.levels)
    assert best == 1.0


def test_path_monotone_and_bookkeeping():
    X = _data(6, 20, 6)
    lam1 = 0.2 * lambda1_max(X)
    levels = []
    h = mglasso_path(X, lam1, PathConfig(kappa=2.0, max_levels=15),
                     callback=levels.append)
    assert levels == list(h.levels)
    K = h.num_clusters
    assert all(b <= a for a, b in zip(K, K[1:]))
    for prev, nxt in zip(h.levels, h.levels[1:]):
        assert prev.partition.refines(nxt.partition)
        hp = Hyperparameters(lam1, nxt.lambda2)
        # the next level starts from the previous solution and never ends worse
        assert (objective_value(nxt.beta, X, hp)
                <= objective_value(prev.beta, X, hp) + 1e-9)


def test_path_complete_fusion_limit():
    X = _data(7, 30, 6)
    start = 0.01
    h = mglasso_path(X, 0.1, PathConfig(lambda2_start=start, kappa=10.0,
                                        max_levels=5))
    assert h.lambda2_values[-1] <= 1e4 * start * (1 + 1e-12)
    assert h.num_clusters[-1] == 1


def test_path_rejects_negative_lambda1():
    with pytest.raises(ValueError):
        mglasso_path(_data(0, 5, 3), -1.0)


def test_lambda2_zero_matches_neighborhood_selection():
    X = _data(8, 25, 6)
    lam = 0.3 * lambda1_max(X)
    beta, diag = conesta_solve(X, Hyperparameters(lam, 0.0),
                               SolverConfig(eps_target=1e-12, relative=False))
    mb = neighborhood_selection(X, lam, tol=1e-14)
    assert np.abs(beta.coeffs - mb.coeffs).max() <= 1e-5
    part = detect_fusions(beta, Partition.singletons(6), 1e-6)
    assert part == Partition.singletons(6)


def test_cluster_graph_singletons_identical():
    rng = np.random.default_rng(9)
    C = rng.standard_normal((6, 5))
    C[np.abs(C) < 0.8] = 0
    beta = RegressionMatrix(C)
    for rule in ("or", "and"):
        g = cluster_level_graph(beta, Partition.singletons(6), rule)
        ref = graph_from_beta(beta, rule)
        assert g.adjacency.tobytes() == ref.adjacency.tobytes()


def test_cluster_graph_zero_beta_and_single_crossing():
    part = Partition(np.array([0, 0, 1, 1]))
    assert cluster_level_graph(RegressionMatrix.zeros(4), part).n_edges == 0
    B = np.zeros((4, 4))
    B[1, 2] = 0.4
    g = cluster_level_graph(RegressionMatrix.from_square(B), part)
    assert g.n_edges == 1 and g.weights[0, 1] == pytest.approx(0.4)
    assert g.weights[1, 0] == pytest.approx(0.4)
    assert not cluster_level_graph(RegressionMatrix.from_square(B), part,
                                   "and").adjacency.any()


def test_cluster_graph_validation():
    with pytest.raises(ValueError):
        cluster_level_graph(RegressionMatrix.zeros(3), Partition.singletons(4))
    with pytest.raises(ValueError):
        cluster_level_graph(RegressionMatrix.zeros(3), Partition.singletons(3),
                            "xor")
    assert isinstance(cluster_level_graph(RegressionMatrix.zeros(3),
                                          Partition.singletons(3)), Graph)
