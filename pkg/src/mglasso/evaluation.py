"""Support recovery and clustering scores.

Graphs are compared over unordered variable pairs. ROC curves trace
``(1 - specificity, sensitivity)`` over a ``lambda1`` grid at fixed
``lambda2``; replicated curves are averaged vertically on a fixed grid of
false positive rates.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.metrics import adjusted_rand_score

from .baseline import neighborhood_selection
from .model import (DEFAULT_TOL, Graph, Hyperparameters, Partition,
                    graph_from_beta, standardize)
from .path import lambda1_max
from .solver import SolverConfig, conesta_solve
from .synthetic import GroundTruth, SimConfig, simulate

__all__ = ["ConfusionCounts", "confusion", "RocCurve", "roc_from_points",
           "roc_from_graphs", "fit_graphs", "roc_curve", "vertical_average",
           "AveragedRoc", "averaged_roc", "adjusted_rand_index",
           "lambda1_grid", "FPR_GRID"]

logger = logging.getLogger(__name__)

FPR_GRID = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class ConfusionCounts:
    """Edge confusion counts over the ``p(p-1)/2`` unordered pairs."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    @property
    def sensitivity(self):
        den = self.tp + self.fn
        if den == 0:
            logger.warning("no true edges: sensitivity set to 1")
            return 1.0
        return self.tp / den

    @property
    def specificity(self):
        den = self.tn + self.fp
        if den == 0:
            logger.warning("no true non-edges: specificity set to 1")
            return 1.0
        return self.tn / den

    @property
    def fpr(self):
        return 1.0 - self.specificity

    def to_dict(self):
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
                "sensitivity": self.sensitivity,
                "specificity": self.specificity}


def _adj(g):
    return g.adjacency if isinstance(g, Graph) else np.asarray(g, bool)


def confusion(est, truth):
    """Confusion counts of an estimated graph against the true graph."""
    E, T = _adj(est), _adj(truth)
    if E.shape != T.shape:
        raise ValueError("graphs have different sizes: %s vs %s"
                         % (E.shape, T.shape))
    iu = np.triu_indices(E.shape[0], 1)
    e, t = E[iu], T[iu]
    return ConfusionCounts(int(np.sum(e & t)), int(np.sum(e & ~t)),
                           int(np.sum(~e & ~t)), int(np.sum(~e & t)))


@dataclass(frozen=True)
class RocCurve:
    """ROC points sorted by false positive rate, endpoints included.

    ``raw`` keeps the unsorted ``(lambda1, fpr, tpr)`` triples of the fits.
    """

    points: np.ndarray
    auc: float
    raw: tuple = field(default=())

    @property
    def fpr(self):
        return self.points[:, 0]

    @property
    def tpr(self):
        return self.points[:, 1]


def roc_from_points(fpr, tpr, raw=()):
    """Sort, add ``(0, 0)`` and ``(1, 1)``, integrate by trapezoids."""
    pts = np.column_stack([np.asarray(fpr, float), np.asarray(tpr, float)])
    pts = np.vstack([[0.0, 0.0], pts, [1.0, 1.0]])
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    auc = float(np.sum(np.diff(pts[:, 0]) * (pts[1:, 1] + pts[:-1, 1]) / 2))
    return RocCurve(pts, auc, tuple(raw))


def roc_from_graphs(graphs, truth, lambdas=None):
    fpr, tpr, raw = [], [], []
    lambdas = [None] * len(graphs) if lambdas is None else lambdas
    for lam, g in zip(lambdas, graphs):
        if g is None:
            continue
        c = confusion(g, truth)
        fpr.append(c.fpr)
        tpr.append(c.sensitivity)
        raw.append((lam, c.fpr, c.sensitivity))
    return roc_from_points(fpr, tpr, raw)


def lambda1_grid(X, num=20, ratio=0.01):
    """``num`` log-spaced values from ``lambda1_max(X)`` down to
    ``ratio * lambda1_max(X)``."""
    lmax = lambda1_max(X)
    return np.geomspace(lmax, ratio * lmax, num)


def fit_graphs(X, lambdas, lambda2=0.0, method="mglasso", solver_cfg=None,
               rule="or", tol=DEFAULT_TOL):
    """Estimated graphs along a ``lambda1`` grid, warm-started from the
    sparsest end. Failed fits give ``None``."""
    lambdas = np.asarray(lambdas, float)
    order = np.argsort(-lambdas, kind="stable")
    graphs = [None] * len(lambdas)
    beta = None
    for k in order:
        lam = float(lambdas[k])
        try:
            if method == "mb":
                beta = neighborhood_selection(X, lam, beta0=beta)
            elif method == "mglasso":
                beta, _ = conesta_solve(X, Hyperparameters(lam, lambda2),
                                        solver_cfg, beta0=beta)
            else:
                raise ValueError("unknown method %r" % method)
        except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
            logger.warning("fit failed at lambda1=%g: %s", lam, exc)
            beta = None
            continue
        graphs[k] = graph_from_beta(beta, rule, tol)
    return graphs


def roc_curve(X, truth, lambdas, lambda2=0.0, method="mglasso",
              solver_cfg=None, rule="or", tol=DEFAULT_TOL):
    """ROC curve of one method on one data set over a ``lambda1`` grid."""
    if len(lambdas) == 0:
        raise ValueError("lambda1 grid is empty")
    graphs = fit_graphs(X, lambdas, lambda2, method, solver_cfg, rule, tol)
    if isinstance(truth, GroundTruth):
        truth = truth.adjacency
    return roc_from_graphs(graphs, truth, list(lambdas))


def _upper_tpr(curve, grid):
    f, t = curve.fpr, curve.tpr
    out = np.zeros(len(grid))
    for g_idx, x in enumerate(grid):
        best = 0.0
        for k in range(len(f) - 1):
            a, b = f[k], f[k + 1]
            if a <= x <= b:
                if b > a:
                    v = t[k] + (t[k + 1] - t[k]) * (x - a) / (b - a)
                else:
                    v = max(t[k], t[k + 1])
                best = max(best, v)
        out[g_idx] = best
    return out


def vertical_average(curves, grid=FPR_GRID):
    """Mean true positive rate of ``curves`` at each false positive rate of
    ``grid``; where a curve is vertical the top of the segment is used."""
    grid = np.asarray(grid, float)
    return grid, np.mean([_upper_tpr(c, grid) for c in curves], axis=0)


@dataclass
class AveragedRoc:
    """Vertically averaged ROC of one method at one ``lambda2``."""

    method: str
    lambda2: float
    fpr: np.ndarray
    tpr: np.ndarray
    aucs: list

    @property
    def auc_mean(self):
        return float(np.mean(self.aucs))

    @property
    def auc_sd(self):
        return float(np.std(self.aucs, ddof=1)) if len(self.aucs) > 1 else 0.0

    @property
    def auc_of_mean(self):
        return float(np.trapezoid(self.tpr, self.fpr)
                     if hasattr(np, "trapezoid") else np.trapz(self.tpr, self.fpr))


def _one_replication(cfg, seed, lambdas, lambda2_values, include_mb,
                     solver_cfg, num, ratio, rule, tol):
    rng = np.random.default_rng(seed)
    truth, X = simulate(cfg, rng)
    Xs = standardize(X)
    grid = lambdas if lambdas is not None else lambda1_grid(Xs, num, ratio)
    out = {}
    for lam2 in lambda2_values:
        out[("mglasso", float(lam2))] = roc_curve(
            Xs, truth.adjacency, grid, lam2, "mglasso", solver_cfg, rule, tol)
    if include_mb:
        out[("mb", 0.0)] = roc_curve(Xs, truth.adjacency, grid, 0.0, "mb",
                                     None, rule, tol)
    return out


def averaged_roc(cfg, lambdas=None, lambda2_values=(0.0,), replications=10,
                 include_mb=True, solver_cfg=None, seed=None, n_jobs=1,
                 num=20, ratio=0.01, rule="or", tol=DEFAULT_TOL):
    """Replicated ROC study.

    Every replication draws a fresh ground truth and data set from
    ``cfg`` (seeds spawned from ``seed``, ``cfg.seed`` by default), fits
    MGLasso at every ``lambda2`` and, with ``include_mb``, the neighborhood
    selection baseline. ``lambdas=None`` uses :func:`lambda1_grid` with
    ``num`` and ``ratio`` on each data set.

    Returns
    -------
    dict
        ``(method, lambda2) -> AveragedRoc``; the baseline is keyed
        ``("mb", 0.0)``.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    if not isinstance(cfg, SimConfig):
        raise TypeError("cfg must be a SimConfig")
    seeds = np.random.SeedSequence(cfg.seed if seed is None else seed
                                   ).spawn(replications)
    runs = Parallel(n_jobs=n_jobs)(
        delayed(_one_replication)(cfg, s, lambdas, lambda2_values, include_mb,
                                  solver_cfg, num, ratio, rule, tol)
        for s in seeds)
    out = {}
    for key in runs[0]:
        curves = [r[key] for r in runs]
        grid, tpr = vertical_average(curves)
        out[key] = AveragedRoc(key[0], key[1], grid, tpr,
                               [c.auc for c in curves])
    return out


def adjusted_rand_index(a, b):
    """Adjusted Rand index between two partitions of the same variables."""
    la = a.labels if isinstance(a, Partition) else np.asarray(a)
    lb = b.labels if isinstance(b, Partition) else np.asarray(b)
    if la.shape != lb.shape:
        raise ValueError("partitions have different sizes: %d vs %d"
                         % (la.size, lb.size))
    return float(adjusted_rand_score(la, lb))
