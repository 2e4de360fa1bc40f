"""Neighborhood selection: one lasso regression per variable.

The lasso here uses the same scaling as the multiscale criterion,
``1/2 ||X^i - X^{\\i} b||^2 + lambda1 ||b||_1``. The classical form
``1/n ||.||^2 + lam ||b||_1`` corresponds to ``lambda1 = n * lam / 2``.
"""
from __future__ import annotations

import warnings

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import Lasso

from .model import RegressionMatrix
from .objective import _as_values

__all__ = ["neighborhood_selection", "lambda1_from_mb"]


def lambda1_from_mb(lam, n):
    """``lambda1`` equivalent to ``lam`` in the ``1/n``-scaled lasso."""
    return n * lam / 2.0


def neighborhood_selection(X, lambda1, tol=1e-10, max_iter=100000,
                           beta0=None):
    """Per-variable lasso fits, returned as a :class:`RegressionMatrix`.

    Parameters
    ----------
    X : DataMatrix or array, shape (n, p)
        Standardized data (no intercept is fitted).
    lambda1 : float
        Penalty on the ``1/2``-scaled residual sum of squares.
    beta0 : RegressionMatrix, optional
        Warm start.
    """
    if lambda1 < 0:
        raise ValueError("lambda1 must be nonnegative")
    Xv = _as_values(X)
    n, p = Xv.shape
    B = np.zeros((p, p))
    B0 = None if beta0 is None else beta0.to_square()
    if lambda1 == 0:
        for i in range(p):
            keep = np.delete(np.arange(p), i)
            B[i, keep] = np.linalg.lstsq(Xv[:, keep], Xv[:, i], rcond=None)[0]
        return RegressionMatrix.from_square(B)
    # sklearn minimises 1/(2n) ||y - Xw||^2 + alpha ||w||_1
    model = Lasso(alpha=lambda1 / n, fit_intercept=False, tol=tol,
                  max_iter=max_iter, warm_start=B0 is not None,
                  selection="cyclic")
    for i in range(p):
        keep = np.delete(np.arange(p), i)
        if B0 is not None:
            model.coef_ = B0[i, keep].copy()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            model.fit(Xv[:, keep], Xv[:, i])
        B[i, keep] = model.coef_
    return RegressionMatrix.from_square(B)
