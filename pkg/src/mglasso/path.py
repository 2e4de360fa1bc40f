"""Clustering path: sweep ``lambda2`` upwards, fuse variables, record levels.

Each level is solved by CONESTA warm-started from the previous level.
Variables whose aligned regression vectors come closer than ``eps_fuse`` are
merged, and merged clusters are never split again, so the recorded
partitions are nested.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .model import (DEFAULT_TOL, Graph, Hierarchy, Hyperparameters, Level,
                    Partition, RegressionMatrix, pairwise_distances)
from .objective import Problem, _as_values
from .solver import SolverConfig, conesta_solve

__all__ = ["PathConfig", "init_beta", "detect_fusions", "mglasso_path",
           "cluster_level_graph", "lambda2_max_heuristic", "lambda1_max"]

logger = logging.getLogger(__name__)


def lambda1_max(X):
    """Smallest ``lambda1`` for which ``beta = 0`` solves every regression
    when ``lambda2 = 0``: ``max_i ||(X^{\\i})^T X^i||_inf``."""
    Xv = _as_values(X)
    S = Xv.T @ Xv
    np.fill_diagonal(S, 0.0)
    return float(np.abs(S).max())


def lambda2_max_heuristic(X):
    """Scale of ``lambda2`` at which fusion dominates:
    ``max_i ||(X^{\\i})^T X^i||_2``."""
    Xv = _as_values(X)
    S = Xv.T @ Xv
    np.fill_diagonal(S, 0.0)
    return float(np.sqrt((S ** 2).sum(axis=0)).max())


@dataclass(frozen=True)
class PathConfig:
    """Geometric ``lambda2`` schedule and fusion rule.

    ``lambda2_start=None`` means ``1e-3 * lambda2_max_heuristic(X)``. The
    path stops after ``max_levels`` levels or once the number of clusters
    is at most ``stop_clusters``.
    """

    lambda2_start: Optional[float] = None
    kappa: float = 1.3
    eps_fuse: float = 1e-4
    max_levels: int = 50
    stop_clusters: int = 1

    def __post_init__(self):
        if self.lambda2_start is not None and not self.lambda2_start > 0:
            raise ValueError("lambda2_start must be positive")
        if not self.kappa > 1:
            raise ValueError("kappa must be > 1")
        if not self.eps_fuse >= 0:
            raise ValueError("eps_fuse must be nonnegative")
        if self.max_levels < 1:
            raise ValueError("max_levels must be >= 1")
        if self.stop_clusters < 1:
            raise ValueError("stop_clusters must be >= 1")

    def schedule(self, X=None):
        start = self.lambda2_start
        if start is None:
            if X is None:
                raise ValueError("data needed for the default lambda2_start")
            start = 1e-3 * lambda2_max_heuristic(X)
        return start * self.kappa ** np.arange(self.max_levels)


def init_beta(X):
    """Min-norm least-squares regression of each column on the others."""
    Xv = _as_values(X)
    n, p = Xv.shape
    B = np.zeros((p, p))
    for i in range(p):
        keep = np.delete(np.arange(p), i)
        B[i, keep] = np.linalg.lstsq(Xv[:, keep], Xv[:, i], rcond=None)[0]
    return RegressionMatrix.from_square(B)


def detect_fusions(beta, current, eps_fuse):
    """Merge clusters of ``current`` joined by a pair at distance < eps_fuse.

    Merging is transitive and starts from ``current``, so the result is
    always a coarsening of it.
    """
    p = beta.p
    if current.p != p:
        raise ValueError("partition has p=%d, beta has p=%d" % (current.p, p))
    D = pairwise_distances(beta)
    i, j = np.nonzero(np.triu(D < eps_fuse, 1))
    # chain members of each current cluster together
    lab = current.labels
    order = np.argsort(lab, kind="stable")
    same = lab[order[1:]] == lab[order[:-1]]
    ci, cj = order[:-1][same], order[1:][same]
    rows = np.concatenate([i, ci])
    cols = np.concatenate([j, cj])
    adj = coo_matrix((np.ones(rows.size), (rows, cols)), shape=(p, p))
    _, labels = connected_components(adj, directed=False)
    return Partition(labels)


def _merges(prev, new, lambda2):
    out = []
    for c in new.clusters():
        olds = sorted(set(prev.labels[c].tolist()))
        out.extend((float(lambda2), (olds[0], o)) for o in olds[1:])
    return out


def mglasso_path(X, lambda1, cfg=None, solver_cfg=None, weights=None,
                 beta0=None, callback=None):
    """Multiscale path for a fixed ``lambda1``.

    Parameters
    ----------
    X : DataMatrix or array, shape (n, p)
        Standardized data.
    lambda1 : float
    cfg : PathConfig, optional
    solver_cfg : SolverConfig, optional
    weights : array, shape (p, p), optional
        Fusion weights ``w_ij``.
    beta0 : RegressionMatrix, optional
        Start of the first level; :func:`init_beta` by default.
    callback : callable, optional
        Called with each new :class:`Level`.

    Returns
    -------
    Hierarchy
    """
    if lambda1 < 0:
        raise ValueError("lambda1 must be nonnegative")
    cfg = cfg or PathConfig()
    solver_cfg = solver_cfg or SolverConfig()
    Xv = _as_values(X)
    p = Xv.shape[1]
    S = Xv.T @ Xv
    beta = init_beta(Xv) if beta0 is None else beta0
    part = Partition.singletons(p)
    levels, merges = [], []
    for lam2 in cfg.schedule(Xv):
        hp = Hyperparameters(lambda1, float(lam2), weights)
        prob = Problem(S, lambda1, lam2,
                       None if weights is None else hp.weight_matrix(p))
        beta, diag = conesta_solve(Xv, hp, solver_cfg, beta0=beta,
                                   problem=prob)
        if not diag.converged:
            logger.warning("level lambda2=%.4g did not converge (gap %.3g)",
                           lam2, diag.final_duality_gap)
        new = detect_fusions(beta, part, cfg.eps_fuse)
        merges.extend(_merges(part, new, lam2))
        part = new
        level = Level(float(lam2), part, beta, diag.converged,
                      float(diag.final_duality_gap))
        levels.append(level)
        if callback is not None:
            callback(level)
        if part.K <= cfg.stop_clusters:
            break
    return Hierarchy(levels, merges, float(lambda1))


def cluster_level_graph(beta, partition, rule="or", tol=DEFAULT_TOL):
    """Graph between clusters (meta-variables).

    Clusters ``a != b`` are linked when a variable-level edge of
    :func:`graph_from_beta` joins them. The weight is the mean ``|beta|``
    over the ordered crossing pairs whose coefficient exceeds ``tol``.
    """
    if partition.p != beta.p:
        raise ValueError("partition has p=%d, beta has p=%d"
                         % (partition.p, beta.p))
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    rule = rule.lower()
    if rule not in ("or", "and"):
        raise ValueError("rule must be 'or' or 'and', got %r" % rule)
    A = np.abs(beta.to_square())
    S = A > tol
    adj = (S | S.T) if rule == "or" else (S & S.T)
    Z = np.zeros((beta.p, partition.K))
    Z[np.arange(beta.p), partition.labels] = 1.0
    cross = Z.T @ adj.astype(float) @ Z > 0
    np.fill_diagonal(cross, False)
    cnt = Z.T @ S.astype(float) @ Z
    tot = Z.T @ np.where(S, A, 0.0) @ Z
    cnt = cnt + cnt.T
    tot = tot + tot.T
    W = np.where(cross, tot / np.maximum(cnt, 1.0), 0.0)
    return Graph(cross, W)
