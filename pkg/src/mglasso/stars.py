"""StARS selection of ``lambda1``.

Each replicate fits the ``lambda2 = 0`` model on a random subsample of the
rows at every grid value. Edge frequencies across replicates give the edge
instabilities. Walking the grid from the sparsest end, the selected value
is the last one whose running-maximum instability stays below the
threshold.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from .baseline import neighborhood_selection
from .model import DEFAULT_TOL, Hyperparameters, graph_from_beta, standardize
from .objective import _as_values
from .path import lambda1_max
from .solver import SolverConfig, conesta_solve

__all__ = ["StarsConfig", "StarsResult", "default_grid",
           "default_subsample_size", "edge_probabilities", "instability",
           "monotonize", "select_from_instabilities", "select_lambda1",
           "NotSelectedWarning"]

logger = logging.getLogger(__name__)


class NotSelectedWarning(UserWarning):
    """No grid value meets the instability threshold."""


def default_subsample_size(n):
    """``floor(10 sqrt(n))`` capped at ``n - 1``."""
    return int(min(np.floor(10 * np.sqrt(n)), n - 1))


def default_grid(X, num=30, ratio=0.01):
    """``num`` log-spaced values from ``lambda1_max(X)`` down to
    ``ratio * lambda1_max(X)``."""
    lmax = lambda1_max(X)
    if not lmax > 0:
        raise ValueError("lambda1_max is zero: data carry no cross products")
    return np.geomspace(lmax, ratio * lmax, num)


@dataclass(frozen=True)
class StarsConfig:
    """Settings of the stability search.

    ``lambda1_grid=None`` uses :func:`default_grid` on the data;
    ``subsample_size=None`` uses :func:`default_subsample_size`. With
    ``replace=True`` replicates are bootstrap draws of size ``n``-capped
    ``b`` instead of subsamples. ``method`` picks the ``lambda2 = 0`` fit:
    ``"mb"`` (per-node lasso) or ``"mglasso"`` (the full solver).
    """

    lambda1_grid: Optional[Sequence[float]] = None
    num_subsamples: int = 20
    subsample_size: Optional[int] = None
    instability_threshold: float = 0.05
    seed: int = 0
    replace: bool = False
    method: str = "mb"
    rule: str = "or"
    tol: float = DEFAULT_TOL
    solver: Optional[SolverConfig] = field(default=None, compare=False)

    def __post_init__(self):
        if self.lambda1_grid is not None:
            g = np.asarray(self.lambda1_grid, float)
            if g.ndim != 1 or g.size == 0:
                raise ValueError("lambda1_grid must be a non-empty 1-d sequence")
            if np.any(~np.isfinite(g)) or np.any(g <= 0):
                raise ValueError("lambda1_grid must hold positive reals")
            d = np.diff(g)
            if g.size > 1 and not (np.all(d < 0) or np.all(d > 0)):
                raise ValueError("lambda1_grid must be strictly monotone")
            object.__setattr__(self, "lambda1_grid", tuple(float(v) for v in g))
        if self.num_subsamples < 1:
            raise ValueError("num_subsamples must be >= 1")
        if self.subsample_size is not None and self.subsample_size < 2:
            raise ValueError("subsample_size must be >= 2")
        if not 0 < self.instability_threshold <= 0.5:
            raise ValueError("instability_threshold must lie in (0, 0.5]")
        if self.method not in ("mb", "mglasso"):
            raise ValueError("method must be 'mb' or 'mglasso', got %r"
                             % (self.method,))

    def grid(self, X):
        """Grid sorted in decreasing order."""
        g = (default_grid(X) if self.lambda1_grid is None
             else np.asarray(self.lambda1_grid, float))
        return np.sort(g)[::-1]

    def size(self, n):
        b = default_subsample_size(n) if self.subsample_size is None \
            else int(self.subsample_size)
        if not 2 <= b < n:
            raise ValueError("subsample size must satisfy 2 <= b < n=%d, got %d"
                             % (n, b))
        return b


def _fit_adjacency(Xs, lam, cfg, beta0):
    if cfg.method == "mb":
        beta = neighborhood_selection(Xs, lam, beta0=beta0)
    else:
        beta, _ = conesta_solve(Xs, Hyperparameters(lam, 0.0), cfg.solver,
                                beta0=beta0)
    return beta, graph_from_beta(beta, cfg.rule, cfg.tol).adjacency


def _replicate(Xv, grid, cfg, seed):
    """Adjacencies of one replicate along the decreasing grid.

    Returns a ``(K, p, p)`` boolean array and a mask of successful fits.
    """
    rng = np.random.default_rng(seed)
    n, p = Xv.shape
    b = cfg.size(n)
    rows = rng.choice(n, size=b, replace=cfg.replace)
    out = np.zeros((len(grid), p, p), dtype=bool)
    ok = np.zeros(len(grid), dtype=bool)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            Xs = standardize(Xv[rows])
    except ValueError as exc:
        # a subsample can make a column constant
        logger.warning("replicate skipped: %s", exc)
        return out, ok
    beta = None
    for k, lam in enumerate(grid):
        try:
            beta, out[k] = _fit_adjacency(Xs, float(lam), cfg, beta)
            ok[k] = True
        except (ArithmeticError, RuntimeError, ValueError,
                np.linalg.LinAlgError) as exc:
            logger.warning("subsample fit failed at lambda1=%g: %s", lam, exc)
            beta = None
    return out, ok


def _run(X, grid, cfg, n_jobs):
    Xv = _as_values(X)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.num_subsamples)
    reps = Parallel(n_jobs=n_jobs)(
        delayed(_replicate)(Xv, grid, cfg, s) for s in seeds)
    counts = np.zeros((len(grid),) + (Xv.shape[1],) * 2)
    used = np.zeros(len(grid), dtype=int)
    for adj, ok in reps:
        counts += adj * ok[:, None, None]
        used += ok
    return counts, used


def _probabilities(counts, used):
    theta = np.zeros_like(counts)
    has = used > 0
    theta[has] = counts[has] / used[has, None, None]
    return theta


def edge_probabilities(X, lambda1, cfg=None, n_jobs=1):
    """Edge frequencies over the subsampled fits at a single ``lambda1``.

    Returns
    -------
    theta : ndarray, shape (p, p)
        Symmetric, zero diagonal, entries in ``[0, 1]``.
    used : int
        Number of replicates whose fit succeeded.
    """
    cfg = cfg or StarsConfig()
    counts, used = _run(X, np.array([float(lambda1)]), cfg, n_jobs)
    if used[0] == 0:
        raise RuntimeError("every subsample fit failed")
    return _probabilities(counts, used)[0], int(used[0])


def instability(theta):
    """Total instability ``sum_{s<t} 2 theta (1 - theta) / C(p, 2)``."""
    theta = np.asarray(theta, float)
    if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
        raise ValueError("theta must be a square matrix")
    if np.any(theta < 0) or np.any(theta > 1):
        raise ValueError("theta entries must lie in [0, 1]")
    p = theta.shape[0]
    if p < 2:
        raise ValueError("need p >= 2")
    iu = np.triu_indices(p, 1)
    t = theta[iu]
    return float(np.sum(2 * t * (1 - t)) / iu[0].size)


def monotonize(values):
    """Running maximum along the (decreasing) grid."""
    return np.maximum.accumulate(np.asarray(values, float))


def select_from_instabilities(grid, raw, threshold):
    """Selection rule on a decreasing grid.

    Returns ``(lambda1, index, monotonized, selected)``; when no value
    qualifies the largest ``lambda1`` is returned with ``selected=False``.
    """
    grid = np.asarray(grid, float)
    if grid.size == 0:
        raise ValueError("lambda1 grid is empty")
    if grid.size > 1 and not np.all(np.diff(grid) < 0):
        raise ValueError("grid must be strictly decreasing")
    mono = monotonize(raw)
    ok = np.flatnonzero(mono <= threshold)
    if ok.size == 0:
        return float(grid[0]), 0, mono, False
    # mono is nondecreasing, so the qualifying set is a prefix; its last
    # element is the smallest qualifying lambda1, its first the largest
    k = int(ok[-1])
    return float(grid[k]), k, mono, True


@dataclass
class StarsResult:
    """Outcome of :func:`select_lambda1`."""

    lambda1: float
    index: int
    grid: np.ndarray
    raw: np.ndarray
    monotonized: np.ndarray
    selected: bool
    failures: np.ndarray
    num_subsamples: int
    subsample_size: int
    threshold: float

    def to_dict(self):
        return {
            "grid": [float(v) for v in self.grid],
            "instability_raw": [float(v) for v in self.raw],
            "instability_monotonized": [float(v) for v in self.monotonized],
            "selected_lambda1": float(self.lambda1),
            "selected_index": int(self.index),
            "selected": bool(self.selected),
            "failures_per_lambda1": [int(v) for v in self.failures],
            "num_subsamples": int(self.num_subsamples),
            "subsample_size": int(self.subsample_size),
            "instability_threshold": float(self.threshold),
        }


def select_lambda1(X, cfg=None, n_jobs=1):
    """Stability selection of ``lambda1``.

    The instability is monotonized by a running maximum from the sparsest
    end of the grid, and the selected value is the least regularized one
    whose monotonized instability is at or below the threshold, that is the
    largest ``1 / lambda1`` in the usual StARS parametrization. Replicates
    share one subsample across the grid and are warm-started along it.

    Parameters
    ----------
    X : DataMatrix or array, shape (n, p)
    cfg : StarsConfig, optional
    n_jobs : int
        Parallel replicates.

    Returns
    -------
    StarsResult
    """
    cfg = cfg or StarsConfig()
    Xv = _as_values(X)
    grid = cfg.grid(Xv)
    b = cfg.size(Xv.shape[0])
    counts, used = _run(Xv, grid, cfg, n_jobs)
    theta = _probabilities(counts, used)
    raw = np.array([instability(t) if u else np.nan
                    for t, u in zip(theta, used)])
    if np.all(used == 0):
        raise RuntimeError("every subsample fit failed")
    # a grid value with no successful fit cannot be judged stable
    raw_for_rule = np.where(used > 0, raw, 0.5)
    lam, k, mono, ok = select_from_instabilities(
        grid, raw_for_rule, cfg.instability_threshold)
    if not ok:
        warnings.warn("no lambda1 meets instability threshold %g; returning "
                      "the largest grid value" % cfg.instability_threshold,
                      NotSelectedWarning, stacklevel=2)
    return StarsResult(lam, k, grid, raw, mono, ok,
                       cfg.num_subsamples - used, cfg.num_subsamples, b,
                       cfg.instability_threshold)
