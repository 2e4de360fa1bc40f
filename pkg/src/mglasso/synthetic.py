"""Ground-truth graphs, precision matrices and Gaussian samples.

Three generators: a stochastic block model whose precision matrix controls
the within-block correlation, an Erdos-Renyi graph and a preferential
attachment (scale-free) graph. For the last two, edge values are drawn
uniformly on ``+-[0.2, 0.6]`` and the diagonal is made strictly dominant.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .model import DataMatrix, Graph, Partition

__all__ = ["SimConfig", "GroundTruth", "sbm_precision_values",
           "sbm_ground_truth", "erdos_ground_truth", "scale_free_ground_truth",
           "ground_truth", "sample_gaussian", "simulate"]

MODELS = ("sbm", "er", "sf")


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``K``, ``pi``, ``alpha_in``, ``alpha_out`` and ``rho`` describe the block
    model; ``alpha`` is the Erdos-Renyi density and ``num_edges`` the
    scale-free edge budget.
    """

    p: int = 40
    n: int = 80
    model: str = "sbm"
    K: int = 5
    pi: Optional[Sequence[float]] = None
    alpha_in: float = 0.75
    alpha_out: float = 0.01
    alpha: float = 0.1
    num_edges: int = 40
    rho: float = 0.3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "model", str(self.model).lower())
        if self.model not in MODELS:
            raise ValueError("model must be one of %s, got %r"
                             % (", ".join(MODELS), self.model))
        if self.p < 2:
            raise ValueError("p must be >= 2")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        for name in ("alpha_in", "alpha_out", "alpha"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError("%s must lie in [0, 1], got %r" % (name, v))
        if self.model == "sbm":
            if self.pi is None:
                raise ValueError("pi required for SBM")
            pi = tuple(float(v) for v in self.pi)
            object.__setattr__(self, "pi", pi)
            if len(pi) != self.K:
                raise ValueError("pi must have K=%d entries" % self.K)
            if any(v < 0 for v in pi) or abs(sum(pi) - 1) > 1e-12:
                raise ValueError("pi must be nonnegative and sum to 1")
        elif self.pi is not None:
            object.__setattr__(self, "pi", tuple(float(v) for v in self.pi))
        if self.model == "sf":
            if not self.p - 1 <= self.num_edges <= self.p * (self.p - 1) // 2:
                raise ValueError("num_edges must lie in [p-1, p(p-1)/2]")

    def to_dict(self):
        d = asdict(self)
        d["pi"] = None if self.pi is None else list(self.pi)
        return d


@dataclass(frozen=True)
class GroundTruth:
    """True graph, precision matrix and planted partition.

    ``adjacency`` is the support of ``precision``. For the block model,
    ``sampled_adjacency`` also keeps the between-block edges of the random
    graph, which the precision matrix ignores. ``diagonal_shift`` is the
    loading added to make ``precision`` positive definite (0 if none).
    """

    adjacency: Graph
    precision: np.ndarray
    labels: Partition
    rho: Optional[float] = None
    sampled_adjacency: Optional[Graph] = None
    diagonal_shift: float = 0.0

    @property
    def p(self):
        return self.adjacency.p

    @property
    def covariance(self):
        return np.linalg.inv(self.precision)

    def to_dict(self):
        return {
            "p": self.p,
            "edges": [list(e) for e in self.adjacency.edges()],
            "labels": self.labels.labels.tolist(),
            "rho": self.rho,
            "diagonal_shift": float(self.diagonal_shift),
        }


def sbm_precision_values(rho, size):
    """``(omega_ii, omega_ij)`` for a complete block of ``size`` variables.

    Inverting the resulting block gives a correlation matrix with all
    off-diagonal entries equal to ``rho``.
    """
    den = 1 + rho * (size - 2) - rho ** 2 * (size - 1)
    if not den > 0:
        raise ValueError("rho=%g is not admissible for a block of size %d"
                         % (rho, size))
    return (1 + rho * (size - 2)) / den, -rho / den


def _upper_bernoulli(P, rng):
    p = P.shape[0]
    iu = np.triu_indices(p, 1)
    A = np.zeros((p, p), dtype=bool)
    A[iu] = rng.random(iu[0].size) < P[iu]
    return A | A.T


def _make_pd(Omega):
    lo = float(np.linalg.eigvalsh(Omega)[0])
    if lo > 1e-10:
        return Omega, 0.0
    shift = abs(lo) + 0.01
    return Omega + shift * np.eye(Omega.shape[0]), shift


def sbm_ground_truth(cfg, rng=None):
    """Block model: latent labels, random graph, block precision matrix."""
    if cfg.model != "sbm":
        raise ValueError("configuration is not a block model")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    p, rho = cfg.p, cfg.rho
    z = rng.choice(cfg.K, size=p, p=np.asarray(cfg.pi))
    same = z[:, None] == z[None, :]
    A = _upper_bernoulli(np.where(same, cfg.alpha_in, cfg.alpha_out), rng)
    sizes = np.bincount(z, minlength=cfg.K)
    Omega = np.zeros((p, p))
    for k in range(cfg.K):
        if sizes[k] == 0:
            continue
        wii, wij = sbm_precision_values(rho, sizes[k])
        idx = np.flatnonzero(z == k)
        blk = np.where(A[np.ix_(idx, idx)], wij, 0.0)
        np.fill_diagonal(blk, wii)
        Omega[np.ix_(idx, idx)] = blk
    Omega, shift = _make_pd(Omega)
    support = (Omega != 0) & ~np.eye(p, dtype=bool)
    return GroundTruth(Graph(support), Omega, Partition(z), rho,
                       Graph(A), shift)


def _random_values(A, rng):
    p = A.shape[0]
    iu = np.triu_indices(p, 1)
    vals = rng.uniform(0.2, 0.6, iu[0].size) * rng.choice([-1.0, 1.0],
                                                           iu[0].size)
    Omega = np.zeros((p, p))
    Omega[iu] = np.where(A[iu], vals, 0.0)
    Omega = Omega + Omega.T
    np.fill_diagonal(Omega, np.abs(Omega).sum(axis=1) + 0.1)
    return Omega


def erdos_ground_truth(cfg, rng=None):
    """Erdos-Renyi graph with edge probability ``cfg.alpha``."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    p = cfg.p
    A = _upper_bernoulli(np.full((p, p), cfg.alpha), rng)
    Omega, shift = _make_pd(_random_values(A, rng))
    return GroundTruth(Graph(A), Omega, Partition(np.zeros(p, int)), None,
                       None, shift)


def _preferential_graph(p, num_edges, rng):
    A = np.zeros((p, p), dtype=bool)
    A[0, 1] = A[1, 0] = True
    deg = np.zeros(p)
    deg[:2] = 1
    for v in range(2, p):
        u = rng.choice(v, p=deg[:v] / deg[:v].sum())
        A[u, v] = A[v, u] = True
        deg[u] += 1
        deg[v] += 1
    extra = num_edges - (p - 1)
    while extra > 0:
        u = rng.integers(p)
        free = ~A[u]
        free[u] = False
        if not free.any():
            continue
        w = np.where(free, deg, 0.0)
        v = rng.choice(p, p=w / w.sum())
        A[u, v] = A[v, u] = True
        deg[u] += 1
        deg[v] += 1
        extra -= 1
    return A


def scale_free_ground_truth(cfg, rng=None):
    """Preferential attachment from a 2-node chain, one edge per new node,
    then extra degree-proportional edges until ``num_edges`` is reached."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    p = cfg.p
    if not p - 1 <= cfg.num_edges <= p * (p - 1) // 2:
        raise ValueError("edge budget %d infeasible for p=%d"
                         % (cfg.num_edges, p))
    A = _preferential_graph(p, cfg.num_edges, rng)
    Omega, shift = _make_pd(_random_values(A, rng))
    return GroundTruth(Graph(A), Omega, Partition(np.zeros(p, int)), None,
                       None, shift)


def ground_truth(cfg, rng=None):
    gen = {"sbm": sbm_ground_truth, "er": erdos_ground_truth,
           "sf": scale_free_ground_truth}[cfg.model]
    return gen(cfg, rng)


def sample_gaussian(truth, n, rng=None):
    """``n`` draws from ``N(0, Omega^{-1})`` using a Cholesky factor of
    ``Omega``: if ``Omega = L L^T`` then ``L^{-T} z`` has covariance
    ``Omega^{-1}``."""
    Omega = np.asarray(truth.precision if isinstance(truth, GroundTruth)
                       else truth, dtype=float)
    rng = np.random.default_rng() if rng is None else rng
    try:
        L = np.linalg.cholesky(Omega)
    except np.linalg.LinAlgError:
        lo = float(np.linalg.eigvalsh(Omega)[0])
        raise ValueError("precision matrix is not positive definite "
                         "(smallest eigenvalue %.3g)" % lo) from None
    Zs = rng.standard_normal((n, Omega.shape[0]))
    X = scipy.linalg.solve_triangular(L, Zs.T, lower=True, trans="T").T
    return DataMatrix(X)


def simulate(cfg, rng=None):
    """Ground truth and an ``n x p`` sample, both from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    truth = ground_truth(cfg, rng)
    return truth, sample_gaussian(truth, cfg.n, rng)
