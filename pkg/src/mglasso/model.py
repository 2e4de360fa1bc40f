"""Domain types shared across the package.

The regression matrix ``beta`` has shape ``(p, p - 1)``: row ``i`` holds the
coefficients of the regression of variable ``i`` on all the others, indexed
by the ordered set ``{0, ..., p-1} \\ {i}``. Internally most numerical code
works on the equivalent hollow ``(p, p)`` matrix ``B`` with ``B[i, k]`` the
coefficient of variable ``k`` in regression ``i`` and a zero diagonal.

All indices are 0-based.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "DataMatrix", "RegressionMatrix", "Hyperparameters", "Partition",
    "Level", "Hierarchy", "Graph", "SolveDiagnostics",
    "standardize", "vectorize", "devectorize", "offdiag_index",
    "aligned_difference", "pairwise_distances", "graph_from_beta",
    "DEFAULT_TOL",
]

DEFAULT_TOL = 1e-8


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def offdiag_index(p):
    """Flat indices of the off-diagonal entries of a ``(p, p)`` matrix,
    in row-major order. ``B.ravel()[offdiag_index(p)]`` is ``vectorize``."""
    idx = np.arange(p * p).reshape(p, p)
    return idx[~np.eye(p, dtype=bool)]


@dataclass(frozen=True)
class DataMatrix:
    """Observation matrix, rows are samples and columns are variables.

    ``scaling`` records how the columns were rescaled by :func:`standardize`
    (``None``, ``"variance"`` or ``"norm"``); ``center`` and ``scale`` hold the
    column statistics so that estimates can be mapped back to the original
    scale.
    """

    values: np.ndarray
    column_names: Optional[tuple] = None
    standardized: bool = False
    scaling: Optional[str] = None
    center: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2:
            raise ValueError("data must be a 2-d array, got shape %s"
                             % (values.shape,))
        n, p = values.shape
        if n < 2 or p < 2:
            raise ValueError("need n >= 2 and p >= 2, got n=%d, p=%d" % (n, p))
        if not np.all(np.isfinite(values)):
            raise ValueError("data contains non-finite entries")
        object.__setattr__(self, "values", values)
        if self.column_names is not None:
            names = tuple(str(c) for c in self.column_names)
            if len(names) != p:
                raise ValueError("expected %d column names, got %d"
                                 % (p, len(names)))
            object.__setattr__(self, "column_names", names)
        if self.standardized:
            means = values.mean(axis=0)
            if np.max(np.abs(means)) > 1e-10 * max(1.0, np.abs(values).max()):
                raise ValueError("columns marked standardized are not centered")

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def p(self):
        return self.values.shape[1]

    @property
    def names(self):
        if self.column_names is not None:
            return self.column_names
        return tuple("V%d" % (j + 1) for j in range(self.p))

    def gram(self):
        """Return ``X^T X``."""
        return self.values.T @ self.values


def standardize(X, scaling="variance", names=None):
    """Center columns and optionally rescale them.

    Parameters
    ----------
    X : DataMatrix or array-like, shape (n, p)
    scaling : {"variance", "norm", None}
        ``"variance"`` gives unit empirical variance (column norm ``sqrt(n)``),
        ``"norm"`` gives unit l2 norm, ``None`` only centers.

    Raises
    ------
    ValueError
        If a column has zero variance and scaling is requested.
    """
    if isinstance(X, DataMatrix):
        names = X.column_names if names is None else names
        X = X.values
    X = np.asarray(X, dtype=float)
    if scaling not in ("variance", "norm", None):
        raise ValueError("unknown scaling %r" % (scaling,))
    center = X.mean(axis=0)
    Xc = X - center
    norms = np.sqrt((Xc ** 2).sum(axis=0))
    scale = np.ones(X.shape[1])
    if scaling is not None:
        tiny = norms <= 1e-12 * max(1.0, np.abs(X).max())
        if np.any(tiny):
            j = int(np.flatnonzero(tiny)[0])
            label = names[j] if names is not None else "V%d" % (j + 1)
            raise ValueError("column %s has zero variance" % label)
        scale = norms / np.sqrt(X.shape[0]) if scaling == "variance" else norms
        Xc = Xc / scale
    # Re-centering removes the rounding residue left by the division.
    Xc = Xc - Xc.mean(axis=0)
    return DataMatrix(Xc, column_names=names, standardized=True,
                      scaling=scaling, center=_frozen(center),
                      scale=_frozen(scale))


@dataclass(frozen=True)
class RegressionMatrix:
    """Stacked nodewise regression coefficients, shape ``(p, p - 1)``."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = _frozen(self.coeffs)
        if c.ndim != 2 or c.shape[1] != c.shape[0] - 1 or c.shape[0] < 2:
            raise ValueError("regression matrix must have shape (p, p-1), got %s"
                             % (c.shape,))
        object.__setattr__(self, "coeffs", c)

    @property
    def p(self):
        return self.coeffs.shape[0]

    @classmethod
    def zeros(cls, p):
        return cls(np.zeros((p, p - 1)))

    @classmethod
    def from_square(cls, B):
        """Build from a hollow ``(p, p)`` matrix (the diagonal is ignored)."""
        B = np.asarray(B, dtype=float)
        p = B.shape[0]
        return cls(B.ravel()[offdiag_index(p)].reshape(p, p - 1))

    def to_square(self):
        """Hollow ``(p, p)`` matrix with ``B[i, k]`` = coefficient of ``k``
        in the regression of ``i``."""
        p = self.p
        B = np.zeros(p * p)
        B[offdiag_index(p)] = self.coeffs.ravel()
        return B.reshape(p, p)

    @staticmethod
    def row_indices(i, p):
        """Variables indexed by the entries of row ``i``."""
        return np.delete(np.arange(p), i)


def vectorize(beta):
    """Row-major concatenation ``(beta^0, beta^1, ..., beta^{p-1})``."""
    return np.array(beta.coeffs, copy=True).ravel()


def devectorize(vec, p=None):
    """Inverse of :func:`vectorize`."""
    vec = np.asarray(vec, dtype=float)
    if p is None:
        # m = p(p-1)  =>  p = (1 + sqrt(1 + 4m)) / 2
        p = int(round((1 + np.sqrt(1 + 4 * vec.size)) / 2))
    if vec.size != p * (p - 1):
        raise ValueError("vector of length %d is not p(p-1) for p=%d"
                         % (vec.size, p))
    return RegressionMatrix(vec.reshape(p, p - 1))


@dataclass(frozen=True)
class Hyperparameters:
    """Penalty weights; ``weights`` defaults to all ones."""

    lambda1: float
    lambda2: float
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if not (self.lambda1 >= 0 and self.lambda2 >= 0):
            raise ValueError("lambda1 and lambda2 must be nonnegative")
        if self.weights is not None:
            w = _frozen(self.weights)
            if w.ndim != 2 or w.shape[0] != w.shape[1]:
                raise ValueError("weights must be a square matrix")
            if not np.allclose(w, w.T) or np.any(w < 0):
                raise ValueError("weights must be symmetric and nonnegative")
            if np.any(np.diag(w) != 0):
                raise ValueError("weights must have a zero diagonal")
            object.__setattr__(self, "weights", w)

    def weight_matrix(self, p):
        if self.weights is None:
            return np.ones((p, p)) - np.eye(p)
        if self.weights.shape[0] != p:
            raise ValueError("weights are %dx%d but p=%d"
                             % (self.weights.shape + (p,)))
        return np.array(self.weights)


@dataclass(frozen=True)
class Partition:
    """Flat clustering of ``p`` variables.

    Labels are canonicalised so that clusters are numbered by order of first
    appearance; two partitions describing the same grouping compare equal.
    """

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.size == 0:
            raise ValueError("labels must be a non-empty 1-d array")
        _, first, inv = np.unique(labels, return_index=True,
                                  return_inverse=True)
        rank = np.empty(first.size, dtype=int)
        rank[np.argsort(first)] = np.arange(first.size)
        object.__setattr__(self, "labels", _frozen(rank[inv.ravel()], int))

    @classmethod
    def singletons(cls, p):
        return cls(np.arange(p))

    @property
    def p(self):
        return self.labels.size

    @property
    def K(self):
        return int(self.labels.max()) + 1

    def clusters(self):
        """List of index arrays, one per cluster."""
        return [np.flatnonzero(self.labels == k) for k in range(self.K)]

    def refines(self, other):
        """True if every cluster of ``self`` lies inside a cluster of
        ``other``."""
        if other.p != self.p:
            return False
        return all(np.unique(other.labels[c]).size == 1
                   for c in self.clusters())

    def __eq__(self, other):
        return (isinstance(other, Partition)
                and np.array_equal(self.labels, other.labels))

    def __hash__(self):
        return hash(self.labels.tobytes())


@dataclass(frozen=True)
class Graph:
    """Undirected graph given by a symmetric hollow boolean adjacency."""

    adjacency: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        A = _frozen(self.adjacency, bool)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("adjacency must be square")
        if not np.array_equal(A, A.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(A)):
            raise ValueError("adjacency must have an empty diagonal")
        object.__setattr__(self, "adjacency", A)
        if self.weights is not None:
            W = _frozen(self.weights)
            if W.shape != A.shape or not np.array_equal(W, W.T):
                raise ValueError("weights must be symmetric and match adjacency")
            object.__setattr__(self, "weights", W)

    @classmethod
    def empty(cls, p):
        return cls(np.zeros((p, p), dtype=bool))

    @classmethod
    def from_edges(cls, p, edges):
        A = np.zeros((p, p), dtype=bool)
        for i, j in edges:
            if i != j:
                A[i, j] = A[j, i] = True
        return cls(A)

    @property
    def p(self):
        return self.adjacency.shape[0]

    @property
    def n_edges(self):
        return int(np.triu(self.adjacency, 1).sum())

    def edges(self):
        """Edges ``(i, j)`` with ``i < j``, in row-major order."""
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(i.tolist(), j.tolist()))

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        if not np.array_equal(self.adjacency, other.adjacency):
            return False
        if self.weights is None or other.weights is None:
            return self.weights is None and other.weights is None
        return np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash(self.adjacency.tobytes())


@dataclass
class SolveDiagnostics:
    """Convergence record of one solve."""

    objective_trace: list = field(default_factory=list)
    final_duality_gap: float = np.inf
    iterations: int = 0
    mu_trace: list = field(default_factory=list)
    converged: bool = False
    gap_trace: list = field(default_factory=list)

    def to_dict(self):
        return {
            "converged": bool(self.converged),
            "final_duality_gap": float(self.final_duality_gap),
            "iterations": int(self.iterations),
            "outer_iterations": len(self.mu_trace),
            "mu_trace": [float(m) for m in self.mu_trace],
            "gap_trace": [float(g) for g in self.gap_trace],
        }


@dataclass(frozen=True)
class Level:
    """One level of the clustering path."""

    lambda2: float
    partition: Partition
    beta: RegressionMatrix
    converged: bool = True
    duality_gap: float = 0.0


@dataclass
class Hierarchy:
    """Nested partitions along an increasing ``lambda2`` sequence.

    ``merges`` lists ``(lambda2, (a, b))`` where ``a`` and ``b`` are cluster
    ids of the previous level that were merged at ``lambda2``.
    """

    levels: list = field(default_factory=list)
    merges: list = field(default_factory=list)
    lambda1: float = 0.0

    def __post_init__(self):
        lam = [lev.lambda2 for lev in self.levels]
        if any(b <= a for a, b in zip(lam, lam[1:])):
            raise ValueError("lambda2 must be strictly increasing across levels")
        for prev, cur in zip(self.levels, self.levels[1:]):
            if not prev.partition.refines(cur.partition):
                raise ValueError("partitions are not nested")

    def __len__(self):
        return len(self.levels)

    @property
    def lambda2_values(self):
        return [lev.lambda2 for lev in self.levels]

    @property
    def num_clusters(self):
        return [lev.partition.K for lev in self.levels]

    def level_nearest(self, K):
        """Level whose number of clusters is closest to ``K`` (first such)."""
        dist = [abs(k - K) for k in self.num_clusters]
        return self.levels[int(np.argmin(dist))]

    def to_dict(self, rule="or", tol=DEFAULT_TOL, names=None):
        out = {"lambda1": float(self.lambda1), "levels": [],
               "merges": [{"lambda2": float(l2), "clusters": [int(a), int(b)]}
                          for l2, (a, b) in self.merges]}
        if names is not None:
            out["variables"] = list(names)
        for lev in self.levels:
            g = graph_from_beta(lev.beta, rule=rule, tol=tol)
            out["levels"].append({
                "lambda2": float(lev.lambda2),
                "num_clusters": lev.partition.K,
                "labels": lev.partition.labels.tolist(),
                "edges": [list(e) for e in g.edges()],
                "converged": bool(lev.converged),
                "duality_gap": float(lev.duality_gap),
            })
        return out


def aligned_difference(beta, i, j):
    """``beta^i - tau_ij(beta^j)`` indexed like row ``i``.

    For every ``k`` outside ``{i, j}`` the entry compares ``beta^i_k`` with
    ``beta^j_k``; the entry at the position of ``j`` in row ``i`` compares the
    cross coefficients ``beta^i_j`` and ``beta^j_i``.
    """
    p = beta.p
    if i == j:
        raise ValueError("aligned difference needs i != j, got i = j = %d" % i)
    if not (0 <= i < p and 0 <= j < p):
        raise IndexError("variable index out of range for p=%d" % p)
    B = beta.to_square()
    d = B[i] - B[j]
    d[j] = B[i, j] - B[j, i]
    return np.delete(d, i)


def pairwise_distances(beta):
    """Matrix of ``||aligned_difference(beta, i, j)||_2`` for all pairs."""
    B = beta.to_square() if isinstance(beta, RegressionMatrix) else beta
    p = B.shape[0]
    d2 = np.empty((p, p))
    step = max(1, 2_000_000 // (p * p))
    for s in range(0, p, step):
        d2[s:s + step] = ((B[s:s + step, None, :] - B[None, :, :]) ** 2).sum(axis=2)
    # slots i and j hold beta^j_i and beta^i_j; swap in the cross difference
    d2 += (B - B.T) ** 2 - B ** 2 - B.T ** 2
    d2 = np.maximum(d2, 0.0)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def graph_from_beta(beta, rule="or", tol=DEFAULT_TOL):
    """Read the conditional independence graph off the support of ``beta``.

    Edge ``(i, j)`` is present when ``|beta^i_j| > tol`` or/and
    ``|beta^j_i| > tol``. Edge weights are the mean absolute value of the
    supporting coefficients.
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    rule = rule.lower()
    if rule not in ("or", "and"):
        raise ValueError("rule must be 'or' or 'and', got %r" % rule)
    A = np.abs(beta.to_square())
    S = A > tol
    adj = (S | S.T) if rule == "or" else (S & S.T)
    cnt = S.astype(float) + S.T
    tot = np.where(S, A, 0.0)
    tot = tot + tot.T
    W = np.where(adj, tot / np.maximum(cnt, 1.0), 0.0)
    return Graph(adj, W)
