"""Criterion, smoothed fusion penalty, proximal operator and duality gap.

The criterion is

    J(beta) = 1/2 sum_i ||X^i - X^{\\i} beta^i||^2 + lambda1 sum_i ||beta^i||_1
              + lambda2 sum_{i<j} w_ij ||beta^i - tau_ij(beta^j)||_2

The fusion term is the sum of block norms ``||(D beta~)_b||_2`` of a sparse
linear operator ``D`` with one block of length ``p - 1`` per pair ``i < j``.
Its Nesterov smoothing with parameter ``mu`` replaces each block norm by the
Huber-like function ``max_{||a|| <= 1} a^T z - mu/2 ||a||^2``.

The solver smooths the operator ``lambda2 * D`` (weights and ``lambda2``
folded in), so the smoothing error of the whole penalty is at most
``mu * n_blocks / 2`` whatever ``lambda2`` is.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import (DataMatrix, Hyperparameters, RegressionMatrix,
                    offdiag_index, vectorize)

__all__ = [
    "DifferenceOperator", "SmoothedPenaltyState", "objective_value",
    "smooth_gradient", "prox_l1", "smoothed_fused_value",
    "smoothed_fused_gradient", "smoothed_dual", "duality_gap",
    "original_duality_gap", "power_iteration",
]


class DifferenceOperator:
    """Stacked weighted aligned differences ``w_ij (beta^i - tau_ij(beta^j))``.

    ``matrix`` acts on the row-major vectorization of ``beta`` (length
    ``p(p-1)``); block ``b`` (rows ``b*(p-1) : (b+1)*(p-1)``) corresponds to
    ``pairs[b]``. Pairs with a zero weight are dropped.

    Parameters
    ----------
    p : int
    weights : array, shape (p, p), optional
        Symmetric nonnegative weights, all ones by default.
    scale : float
        Global factor applied to every block (the solver uses ``lambda2``).
    """

    def __init__(self, p, weights=None, scale=1.0):
        if p < 2:
            raise ValueError("p must be >= 2")
        self.p = p
        W = np.ones((p, p)) if weights is None else np.asarray(weights, float)
        iu, ju = np.triu_indices(p, 1)
        keep = W[iu, ju] > 0
        self.pairs = np.column_stack([iu[keep], ju[keep]])
        self.block_weights = scale * W[iu[keep], ju[keep]]
        self.scale = scale
        self.matrix = self._build(square=False)
        self._square = None
        self._norm2 = None

    @property
    def n_blocks(self):
        return len(self.pairs)

    @property
    def shape(self):
        return self.matrix.shape

    def _build(self, square):
        p = self.p
        m = p - 1
        nb = self.n_blocks
        if nb == 0:
            ncol = p * p if square else p * m
            return sp.csr_matrix((0, ncol))
        I = self.pairs[:, 0][:, None]
        J = self.pairs[:, 1][:, None]
        # k runs over row i's index set {0..p-1} \ {i}
        pos = np.arange(m)[None, :]
        K = pos + (pos >= I)
        cross = K == J
        # partner coefficient: beta^j_k, or beta^j_i on the cross slot
        Kj = np.where(cross, I, K)

        def col(row, var):
            if square:
                return row * p + var
            return row * m + var - (var > row)

        rows = np.arange(nb * m).reshape(nb, m)
        w = self.block_weights[:, None] * np.ones((1, m))
        r = np.concatenate([rows.ravel(), rows.ravel()])
        c = np.concatenate([np.broadcast_to(col(I, K), (nb, m)).ravel(),
                            np.broadcast_to(col(J, Kj), (nb, m)).ravel()])
        v = np.concatenate([w.ravel(), -w.ravel()])
        ncol = p * p if square else p * m
        return sp.csr_matrix((v, (r, c)), shape=(nb * m, ncol))

    @property
    def square_matrix(self):
        """Same operator acting on ``B.ravel()`` for the hollow square form."""
        if self._square is None:
            self._square = self._build(square=True)
        return self._square

    def apply(self, beta_vec):
        """Stacked blocks as an array of shape ``(n_blocks, p - 1)``."""
        return (self.matrix @ np.asarray(beta_vec, float)).reshape(-1, self.p - 1)

    def adjoint(self, blocks):
        return self.matrix.T @ np.asarray(blocks, float).ravel()

    def norm_squared(self):
        """Upper bound on ``||D||_2^2`` (cached).

        Lanczos to machine precision plus a small margin, capped by the
        Gershgorin bound on ``D^T D``.
        """
        if self._norm2 is None:
            if self.n_blocks == 0:
                self._norm2 = 0.0
            else:
                G = (self.matrix.T @ self.matrix).tocsr()
                gersh = float(abs(G).sum(axis=1).max())
                self._norm2 = min(gersh, _top_eigenvalue(G) * (1 + 1e-10))
        return self._norm2


class SmoothedPenaltyState:
    """Optimal dual blocks of the smoothed penalty at a given point."""

    def __init__(self, mu, alpha_star):
        if mu <= 0:
            raise ValueError("mu must be positive")
        self.mu = mu
        self.alpha_star = alpha_star

    @classmethod
    def at(cls, z, mu):
        norms = np.sqrt((z ** 2).sum(axis=1))
        return cls(mu, z / np.maximum(mu, norms)[:, None])


def power_iteration(matvec, dim, tol=1e-6, max_iter=500, seed=0):
    """Largest eigenvalue of a symmetric PSD operator.

    Returns ``(estimate, converged)``.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = matvec(v)
        new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0, True
        v = w / nw
        if abs(new - lam) <= tol * max(abs(new), 1e-300):
            return new, True
        lam = new
    return lam, False


def _top_eigenvalue(G):
    """Largest eigenvalue of a sparse symmetric PSD matrix."""
    n = G.shape[0]
    if n <= 500:
        return float(np.linalg.eigvalsh(G.toarray())[-1])
    v0 = np.random.default_rng(0).standard_normal(n)
    return float(spla.eigsh(G, k=1, which="LA", v0=v0, tol=0,
                            return_eigenvectors=False)[0])


def _as_values(X):
    return X.values if isinstance(X, DataMatrix) else np.asarray(X, float)


def _check_dims(beta, X):
    Xv = _as_values(X)
    if Xv.ndim != 2 or Xv.shape[1] != beta.p:
        raise ValueError("dimension mismatch: beta has p=%d, data has shape %s"
                         % (beta.p, Xv.shape))
    return Xv


def prox_l1(v, threshold):
    """Soft-thresholding ``sign(v) * max(|v| - threshold, 0)``."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)


def _huber(norms, mu):
    return np.where(norms >= mu, norms - mu / 2, norms ** 2 / (2 * mu))


def smoothed_fused_value(beta_vec, D, mu):
    """``s_mu(D beta~)``: sum over blocks of the smoothed block norm."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    z = D.apply(beta_vec)
    return float(_huber(np.sqrt((z ** 2).sum(axis=1)), mu).sum())


def smoothed_fused_gradient(beta_vec, D, mu):
    """``D^T alpha*`` with ``alpha*_b = z_b / max(mu, ||z_b||)``."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    state = SmoothedPenaltyState.at(D.apply(beta_vec), mu)
    return D.adjoint(state.alpha_star)


def objective_value(beta, X, hp):
    """Unsmoothed criterion ``J(beta)``."""
    Xv = _check_dims(beta, X)
    B = beta.to_square()
    R = Xv - Xv @ B.T
    val = 0.5 * float((R ** 2).sum()) + hp.lambda1 * float(np.abs(B).sum())
    if hp.lambda2 > 0:
        D = DifferenceOperator(beta.p, hp.weight_matrix(beta.p))
        z = D.apply(vectorize(beta))
        val += hp.lambda2 * float(np.sqrt((z ** 2).sum(axis=1)).sum())
    return val


def smooth_gradient(beta, X):
    """Gradient of the quadratic loss; row ``i`` is
    ``-(X^{\\i})^T (X^i - X^{\\i} beta^i)``."""
    Xv = _check_dims(beta, X)
    S = Xv.T @ Xv
    B = beta.to_square()
    return RegressionMatrix.from_square(B @ S - S).coeffs


class Problem:
    """Quadratic loss in Gram form plus the penalties, for one
    ``(lambda1, lambda2)`` pair. Works on hollow square matrices ``B``.
    """

    def __init__(self, S, lambda1, lambda2, weights=None):
        S = np.asarray(S, dtype=float)
        p = S.shape[0]
        self.p = p
        self.S = S
        self.lambda1 = float(lambda1)
        self.lambda2 = float(lambda2)
        self.trace = float(np.trace(S))
        self.offdiag = offdiag_index(p)
        self.op = None
        self.A = None
        if lambda2 > 0:
            self.op = DifferenceOperator(p, weights, scale=lambda2)
            if self.op.n_blocks > 0:
                self.A = self.op.square_matrix
                self.AT = self.A.T.tocsr()
        self.n_blocks = 0 if self.A is None else self.op.n_blocks
        self._pinv = None
        self._lquad = None

    @classmethod
    def from_data(cls, X, hp):
        Xv = _as_values(X)
        return cls(Xv.T @ Xv, hp.lambda1, hp.lambda2,
                   None if hp.weights is None else hp.weight_matrix(Xv.shape[1]))

    # -- pieces --------------------------------------------------------
    def blocks(self, B):
        return (self.A @ B.ravel()).reshape(-1, self.p - 1)

    def fusion_adjoint(self, alpha):
        return (self.AT @ alpha.ravel()).reshape(self.p, self.p)

    def quad_value(self, B, BS=None):
        if BS is None:
            BS = B @ self.S
        return 0.5 * (self.trace - 2 * np.trace(BS) + float((BS * B).sum()))

    def quad_gradient(self, B, BS=None):
        if BS is None:
            BS = B @ self.S
        G = BS - self.S
        np.fill_diagonal(G, 0.0)
        return G

    def smoothed_value(self, B, mu):
        val = self.quad_value(B) + self.lambda1 * float(np.abs(B).sum())
        if self.A is not None:
            z = self.blocks(B)
            val += float(_huber(np.sqrt((z ** 2).sum(axis=1)), mu).sum())
        return val

    def huber_blocks(self, B, mu, z=None):
        """Per-block smoothed fusion values (empty without fusion)."""
        if self.A is None:
            return np.zeros(0)
        if z is None:
            z = self.blocks(B)
        return _huber(np.sqrt((z ** 2).sum(axis=1)), mu)

    def value(self, B):
        val = self.quad_value(B) + self.lambda1 * float(np.abs(B).sum())
        if self.A is not None:
            z = self.blocks(B)
            val += float(np.sqrt((z ** 2).sum(axis=1)).sum())
        return val

    def smoothed_gradient(self, B, mu, z=None):
        """Gradient of quadratic loss + smoothed fusion at ``B``; ``z`` may
        pass precomputed ``blocks(B)``."""
        G = self.quad_gradient(B)
        if self.A is not None:
            if z is None:
                z = self.blocks(B)
            norms = np.sqrt((z ** 2).sum(axis=1))
            G += self.fusion_adjoint(z / np.maximum(mu, norms)[:, None])
            np.fill_diagonal(G, 0.0)
        return G

    def lipschitz_quad(self):
        """Bound on the largest eigenvalue of the block-diagonal Hessian.

        Each diagonal block is a principal submatrix of ``S``, so by
        interlacing ``lambda_max(S)`` bounds them all.
        """
        if self._lquad is None:
            top = np.linalg.eigvalsh(self.S)[-1] if self.p else 0.0
            self._lquad = max(float(top), 0.0) * (1 + 1e-10)
        return self._lquad

    def lipschitz(self, mu):
        L = self.lipschitz_quad()
        if self.A is not None:
            L += self.op.norm_squared() / mu
        return L

    def hessian_offdiag(self):
        """Dense Hessian of the quadratic loss on the vectorized ``beta``
        (block diagonal with blocks ``S[\\i, \\i]``)."""
        p = self.p
        m = p - 1
        H = np.zeros((p * m, p * m))
        for i in range(p):
            keep = np.delete(np.arange(p), i)
            H[i * m:(i + 1) * m, i * m:(i + 1) * m] = self.S[np.ix_(keep, keep)]
        return H

    def _block_pinv(self):
        if self._pinv is None:
            p = self.p
            P = np.empty((p, p - 1, p - 1))
            for i in range(p):
                keep = np.delete(np.arange(p), i)
                P[i] = np.linalg.pinv(self.S[np.ix_(keep, keep)],
                                      rcond=1e-12, hermitian=True)
            self._pinv = P
        return self._pinv

    # -- duality gap ---------------------------------------------------
    def _fused_dual(self, B, C, alpha, quad, refine=True):
        """Dual blocks for the quadratic-zone blocks by least squares.

        On the support of ``B`` stationarity reads
        ``C - A^T alpha = lambda1 sign(B)``. With the other blocks fixed at
        ``alpha*(B)``, solve it for the blocks listed in ``quad`` and clip
        them to the unit ball. Reading these blocks off ``z_b / mu`` instead
        would amplify primal errors by ``1 / mu``. With ``refine`` the blocks
        are then fitted to the full optimality conditions, off-support
        bounds included (:meth:`_fit_blocks`).
        """
        p = self.p
        m = p - 1
        sup = np.flatnonzero(B.ravel())
        fixed = alpha.copy()
        fixed[quad] = 0.0
        t = (C - self.lambda1 * np.sign(B) - self.fusion_adjoint(fixed)).ravel()
        rows = (np.flatnonzero(quad)[:, None] * m + np.arange(m)).ravel()
        if sup.size:
            Msp = self.A[rows][:, sup].T.tocsr()
            if Msp.shape[0] * Msp.shape[1] <= 250_000:
                sol = np.linalg.lstsq(Msp.toarray(), t[sup], rcond=None)[0]
            else:
                sol = spla.lsqr(Msp, t[sup], atol=1e-14, btol=1e-14,
                                iter_lim=500)[0]
            blocks = sol.reshape(-1, m)
            norms = np.sqrt((blocks ** 2).sum(axis=1))
            blocks /= np.maximum(1.0, norms)[:, None]
        else:
            blocks = np.zeros((int(quad.sum()), m))
        off = self.offdiag
        if refine:
            tt = t + (self.lambda1 * np.sign(B)).ravel()
            blocks = self._fit_blocks(self.A[rows][:, off].T.tocsr(),
                                      tt[off], np.sign(B).ravel()[off],
                                      blocks)
        out = alpha.copy()
        out[quad] = blocks
        return out

    def _fit_blocks(self, M, t, sgn, blocks, max_iter=2000):
        """Projected gradient refinement of the quadratic-zone dual blocks.

        Minimizes the squared distance of ``E = t - M a`` to the set where
        ``E = lambda1 sign(B)`` on the support and ``|E| <= lambda1`` off it,
        over ``a`` in the product of unit balls.
        """
        lam = self.lambda1
        on = sgn != 0
        m = blocks.shape[1]

        def resid(a):
            E = t - M @ a
            R = np.where(on, E - lam * sgn,
                         E - np.clip(E, -lam, lam))
            return R

        def proj(a):
            b = a.reshape(-1, m)
            nb = np.sqrt((b ** 2).sum(axis=1))
            return (b / np.maximum(1.0, nb)[:, None]).ravel()

        # ||M|| is at most the norm of the whole fusion operator
        L = self.op.norm_squared()
        if L == 0:
            return blocks
        MT = M.T.tocsr()
        a = blocks.ravel().copy()
        best = np.abs(resid(a)).max()
        if best <= 1e-15 * max(1.0, lam):
            return blocks
        y, a_old, tk = a.copy(), a.copy(), 1.0
        for it in range(1, max_iter + 1):
            a = proj(y + (MT @ resid(y)) / L)
            tn = 0.5 * (1 + np.sqrt(1 + 4 * tk * tk))
            y = a + ((tk - 1) / tn) * (a - a_old)
            a_old, tk = a, tn
            if it % 100 == 0:
                r = np.abs(resid(a)).max()
                if r <= 1e-14 * max(1.0, lam) or r > 0.9 * best:
                    break
                best = r
        return a.reshape(-1, m)

    def _duals(self, B, BS, C, rY, rr, alpha, mu):
        """Best smoothed and unsmoothed dual values for blocks ``alpha``."""
        p, S = self.p, self.S
        if alpha is None:
            c, aa, amax = 0.0, 0.0, 0.0
        else:
            c = self.fusion_adjoint(alpha)
            np.fill_diagonal(c, 0.0)
            aa = float((alpha ** 2).sum())
            amax = float(np.sqrt((alpha ** 2).sum(axis=1)).max())
        cands = [(C - c, rY, rr)]
        # residual corrected so that X~^T u matches A^T alpha blockwise
        E = (C - c).ravel()[self.offdiag].reshape(p, p - 1)
        d = np.einsum("ijk,ik->ij", self._block_pinv(), E)
        dsq = np.zeros(p * p)
        dsq[self.offdiag] = d.ravel()
        dsq = dsq.reshape(p, p)
        dS = dsq @ S
        np.fill_diagonal(dS, 0.0)
        uY = rY - float((dsq * S).sum())
        uu = max(rr - 2 * float((dsq * C).sum()) + float((dS * dsq).sum()), 0.0)
        cands.append((C - dS - c, uY, uu))

        dual_mu = dual = 0.0
        for E, uY, uu in cands:
            e = float(np.abs(E).max())
            smax = np.inf
            if e > 0:
                smax = self.lambda1 / e
            if amax > 0:
                smax = min(smax, 1.0 / amax)
            den = uu + mu * aa
            s = np.clip(uY / den, 0.0, smax) if den > 0 else 0.0
            dual_mu = max(dual_mu, s * uY - 0.5 * s * s * den)
            s0 = np.clip(uY / uu, 0.0, smax) if uu > 0 else 0.0
            dual = max(dual, s0 * uY - 0.5 * s0 * s0 * uu)
        return dual_mu, dual

    def gaps(self, B, mu, refine=2):
        """Return ``(primal_mu, gap_mu, primal, gap)``.

        ``gap_mu`` bounds the suboptimality of ``B`` for the smoothed problem,
        ``gap`` for the original problem. Dual points are built from the
        residuals (optionally corrected by a block least-squares step) and
        the smoothed dual blocks ``alpha*(B)``, then scaled into the feasible
        set ``||X~^T u - A^T alpha||_inf <= lambda1, ||alpha_b|| <= 1``.
        ``refine`` sets the effort spent on the quadratic-zone dual blocks:
        0 keeps only ``alpha*(B)`` (enough for the smoothed gap), 1 adds the
        least-squares blocks and 2 also fits them to the full optimality
        conditions.
        """
        S = self.S
        BS = B @ S
        tBS = np.trace(BS)
        rY = self.trace - tBS
        rr = max(self.trace - 2 * tBS + float((BS * B).sum()), 0.0)
        C = S - BS
        np.fill_diagonal(C, 0.0)
        l1 = self.lambda1 * float(np.abs(B).sum())
        alphas = [None]
        hub = pen = 0.0
        if self.A is not None:
            z = self.blocks(B)
            norms = np.sqrt((z ** 2).sum(axis=1))
            alpha = z / np.maximum(mu, norms)[:, None]
            hub = float(_huber(norms, mu).sum())
            pen = float(norms.sum())
            alphas = [alpha]
            quad = norms < mu
            if refine > 0 and quad.any():
                refined = self._fused_dual(B, C, alpha, quad, refine > 1)
                if refined is not None:
                    alphas.append(refined)
        primal_mu = 0.5 * rr + l1 + hub
        primal = 0.5 * rr + l1 + pen
        dual_mu = dual = 0.0
        for alpha in alphas:
            dm, d = self._duals(B, BS, C, rY, rr, alpha, mu)
            dual_mu, dual = max(dual_mu, dm), max(dual, d)
        return (primal_mu, max(primal_mu - dual_mu, 0.0),
                primal, max(primal - dual, 0.0))


def smoothed_dual(beta, X, hp, mu):
    """Dual blocks ``alpha*`` of the smoothed fusion penalty at ``beta``."""
    prob = Problem.from_data(X, hp)
    if prob.A is None:
        return SmoothedPenaltyState(mu, np.zeros((0, beta.p - 1)))
    return SmoothedPenaltyState.at(prob.blocks(beta.to_square()), mu)


def duality_gap(beta, X, hp, mu):
    """Fenchel duality gap of ``beta`` for the ``mu``-smoothed problem."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    _check_dims(beta, X)
    return Problem.from_data(X, hp).gaps(beta.to_square(), mu)[1]


def original_duality_gap(beta, X, hp, mu=1e-12):
    """Duality gap of ``beta`` for the unsmoothed problem; ``mu`` only
    selects the dual blocks ``alpha*(beta)`` used to build the dual point."""
    _check_dims(beta, X)
    return Problem.from_data(X, hp).gaps(beta.to_square(), mu)[3]
