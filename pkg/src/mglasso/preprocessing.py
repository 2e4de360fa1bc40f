"""Count-data preprocessing: sample and variable filters, CLR transform."""
from __future__ import annotations

import numpy as np

from .model import DataMatrix

__all__ = ["clr_transform", "filter_counts"]


def _counts(counts):
    names = None
    if isinstance(counts, DataMatrix):
        names = counts.column_names
        counts = counts.values
    C = np.asarray(counts, dtype=float)
    if C.ndim != 2:
        raise ValueError("counts must be a 2-d array")
    if not np.all(np.isfinite(C)):
        raise ValueError("counts contain non-finite entries")
    if np.any(C < 0):
        r, c = np.argwhere(C < 0)[0]
        raise ValueError("negative count at row %d, column %d" % (r, c))
    return C, names


def clr_transform(counts, pseudo=1.0, names=None):
    """Centered log-ratio of each row of ``log(counts + pseudo)``.

    Every output row sums to zero.
    """
    if not pseudo > 0:
        raise ValueError("pseudo must be positive")
    C, own = _counts(counts)
    Y = np.log(C + pseudo)
    Y = Y - Y.mean(axis=1, keepdims=True)
    return DataMatrix(Y, column_names=names if names is not None else own)


def filter_counts(counts, min_prevalence=0.0, min_depth=0.0, names=None):
    """Drop samples with total count below ``min_depth``, then variables
    present (count > 0) in less than a ``min_prevalence`` fraction of the
    remaining samples.

    Returns
    -------
    counts : ndarray
    names : list or None
        Names of the kept variables.
    rows : ndarray
        Indices of the kept samples.
    """
    if not 0 <= min_prevalence <= 1:
        raise ValueError("min_prevalence must lie in [0, 1]")
    if min_depth < 0:
        raise ValueError("min_depth must be nonnegative")
    C, own = _counts(counts)
    names = list(names if names is not None else own) if (
        names is not None or own is not None) else None
    rows = np.flatnonzero(C.sum(axis=1) >= min_depth)
    C = C[rows]
    if C.shape[0] == 0:
        raise ValueError("no sample reaches depth %g" % min_depth)
    keep = (C > 0).mean(axis=0) >= min_prevalence
    if not keep.any():
        raise ValueError("no variable reaches prevalence %g" % min_prevalence)
    if names is not None:
        names = [n for n, k in zip(names, keep) if k]
    return C[:, keep], names, rows
