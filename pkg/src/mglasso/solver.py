"""CONESTA: continuation over the smoothing parameter with FISTA inner loops.

For a fixed smoothing parameter ``mu`` the fusion penalty is replaced by its
Nesterov smoothing, which has a ``||lambda2 D||^2 / mu``-Lipschitz gradient,
and the resulting ``smooth + l1`` problem is solved by FISTA. The outer loop
shrinks ``mu`` geometrically, driven by the duality gap of the current
iterate, until the gap of the unsmoothed problem falls below the target.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .model import DataMatrix, RegressionMatrix, SolveDiagnostics
from .objective import DifferenceOperator, Problem, _as_values

__all__ = ["SolverConfig", "SolverDivergenceError", "lipschitz_bound",
           "fista_solve", "conesta_solve"]

logger = logging.getLogger(__name__)

try:
    import numba  # noqa: F401
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


class SolverDivergenceError(RuntimeError):
    """Raised when the objective becomes non-finite (step size too large)."""


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rules of :func:`conesta_solve`.

    ``eps_target`` bounds the duality gap of the unsmoothed problem. With
    ``relative`` (the default) it is scaled by ``max(1, J(0))`` where
    ``J(0) = 0.5 * trace(X^T X)``; otherwise it is absolute. ``gap_every``
    sets how often (in FISTA iterations) the inner loop evaluates its
    stopping gap. With ``polish`` each continuation step also runs a Newton
    solve restricted to the support and fusion pattern found so far, as
    long as that pattern leaves at most ``polish_max_dim`` free
    coefficients; the result only competes as a candidate for the best
    point. ``compiled`` runs the inner iterations in a numba kernel; the
    pure numpy loop gives the same iterates up to rounding.
    """

    eps_target: float = 1e-6
    max_outer: int = 50
    max_inner: int = 10000
    mu_floor: float = 1e-12
    continuation_factor: float = 0.5
    step_safety: float = 1.0
    gap_every: int = 20
    polish: bool = True
    polish_max_dim: int = 800
    relative: bool = True
    compiled: bool = True

    def __post_init__(self):
        if not self.eps_target > 0:
            raise ValueError("eps_target must be positive")
        if not 0 < self.continuation_factor < 1:
            raise ValueError("continuation_factor must lie in (0, 1)")
        if not 0 < self.step_safety <= 1:
            raise ValueError("step_safety must lie in (0, 1]")
        if not self.mu_floor > 0:
            raise ValueError("mu_floor must be positive")
        if self.max_outer < 1 or self.max_inner < 1 or self.gap_every < 1:
            raise ValueError("iteration counts must be positive")


def lipschitz_bound(X, D, mu):
    """Upper bound on the Lipschitz constant of the smooth part's gradient.

    Parameters
    ----------
    X : DataMatrix or array, shape (n, p)
    D : DifferenceOperator or None
        Fusion operator *including* the ``lambda2`` factor, e.g.
        ``DifferenceOperator(p, scale=lambda2)``.
    mu : float
        Smoothing parameter.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    Xv = _as_values(X)
    L = Problem(Xv.T @ Xv, 0.0, 0.0).lipschitz_quad()
    if D is not None:
        L += D.norm_squared() / mu
    return L


def _fista_numpy(prob, x, mu, step, inner_eps, max_inner, gap_every):
    lam1 = prob.lambda1
    thr = lam1 * step
    S = prob.S
    fx = prob.smoothed_value(x, mu)
    fused = prob.A is not None
    zx = prob.blocks(x) if fused else None
    hx = prob.huber_blocks(x, mu, zx)
    l1x = float(np.abs(x).sum())
    y, zy, t, y_is_x = x, zx, 1.0, True
    trace = [fx]
    gap = np.inf
    it = 0
    for it in range(1, max_inner + 1):
        G = prob.smoothed_gradient(y, mu, zy)
        v = y - step * G
        z = np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)
        zz = prob.blocks(z) if fused else None
        # objective change computed from the increment, free of the
        # cancellation that plagues differences of two full evaluations
        d = z - x
        dS = d @ S
        hz = prob.huber_blocks(z, mu, zz)
        l1z = float(np.abs(z).sum())
        delta = (float((dS * (0.5 * (z + x))).sum()) - float(np.trace(dS))
                 + lam1 * (l1z - l1x) + float((hz - hx).sum()))
        if not np.isfinite(delta):
            raise SolverDivergenceError(
                "objective became non-finite at iteration %d" % it)
        if delta > 0 and not y_is_x:
            # momentum restart; a plain proximal step from x never ascends
            y, zy, t, y_is_x = x, zx, 1.0, True
            continue
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        c = (t - 1) / t_next
        y = z + c * d
        if fused:
            zy = zz + c * (zz - zx)
        x, zx, hx, l1x, t = z, zz, hz, l1z, t_next
        y_is_x = c == 0.0
        fx += delta
        trace.append(fx)
        if it % gap_every == 0:
            gap = prob.gaps(x, mu, refine=0)[1]
            if gap <= inner_eps:
                break
    else:
        gap = prob.gaps(x, mu, refine=0)[1]
    if not np.isfinite(gap):
        gap = prob.gaps(x, mu, refine=0)[1]
    return x, trace, it, gap


def _fista_compiled(prob, x, mu, step, inner_eps, max_inner, gap_every):
    from . import _kernels

    p = prob.p
    if prob.op is not None:
        I = np.ascontiguousarray(prob.op.pairs[:, 0], dtype=np.int64)
        J = np.ascontiguousarray(prob.op.pairs[:, 1], dtype=np.int64)
        W = np.ascontiguousarray(prob.op.block_weights, dtype=float)
    else:
        I = J = np.zeros(0, dtype=np.int64)
        W = np.zeros(0)
    S = np.ascontiguousarray(prob.S)
    zx = np.empty((len(I), p))
    _kernels.blocks_full(x, I, J, W, zx)
    fx = prob.smoothed_value(x, mu)
    hx = float(_kernels._huber_sum(zx, mu))
    l1x = float(np.abs(x).sum())
    y, zy, t, y_is_x = x.copy(), zx.copy(), 1.0, True
    trace = [fx]
    buf = np.empty(gap_every)
    gap = np.inf
    it = 0
    while it < max_inner:
        k = min(gap_every, max_inner - it)
        (x, zx, y, zy, t, fx, hx, l1x, y_is_x, nt, ok) = _kernels.fista_chunk(
            S, I, J, W, mu, step, prob.lambda1, x, zx, y, zy, t, fx, hx, l1x,
            y_is_x, k, buf)
        if not ok:
            raise SolverDivergenceError(
                "objective became non-finite near iteration %d" % (it + k))
        trace.extend(buf[:nt].tolist())
        it += k
        gap = prob.gaps(x, mu, refine=0)[1]
        if gap <= inner_eps:
            break
    if not np.isfinite(gap):
        gap = prob.gaps(x, mu, refine=0)[1]
    return x, trace, it, gap


def _fista(prob, B0, mu, inner_eps, max_inner, step_safety=1.0, gap_every=10,
           compiled=True):
    L = prob.lipschitz(mu)
    step = step_safety / L
    x = np.array(B0, dtype=float)
    np.fill_diagonal(x, 0.0)
    run = _fista_compiled if compiled and _HAVE_NUMBA else _fista_numpy
    x, trace, it, gap = run(prob, x, mu, step, inner_eps, max_inner, gap_every)
    return x, {"objective_trace": trace, "iterations": it, "gap": gap,
               "converged": gap <= inner_eps, "mu": mu, "lipschitz": L}


def _structure(prob, B, mu):
    """Equality classes of the off-diagonal coefficients of ``B``.

    Blocks in the quadratic zone of the smoothed norm (``||z_b|| < mu``) are
    taken as fused: their aligned difference vanishes, which ties pairs of
    coefficients together. Classes that are mostly exact zeros are pinned
    to 0.

    Returns ``(N, zero, fused)``: the ``P x d`` sparse indicator matrix of
    the free classes, the mask of pinned coefficients and the fused-block
    mask.
    """
    p = prob.p
    off = prob.offdiag
    P = off.size
    b = B.ravel()[off]
    pos = np.full(p * p, -1)
    pos[off] = np.arange(P)
    rows, cols = [], []
    fused = np.zeros(prob.n_blocks, dtype=bool)
    if prob.A is not None:
        z = prob.blocks(B)
        fused = np.sqrt((z ** 2).sum(axis=1)) < mu
        if fused.any():
            I = prob.op.pairs[fused, 0][:, None]
            J = prob.op.pairs[fused, 1][:, None]
            K = np.arange(p)[None, :]
            ok = (K != I) & (K != J)
            rows.append(pos[(I * p + K)[ok]])
            cols.append(pos[(J * p + K)[ok]])
            rows.append(pos[I.ravel() * p + J.ravel()])
            cols.append(pos[J.ravel() * p + I.ravel()])
    r = np.concatenate(rows) if rows else np.zeros(0, int)
    c = np.concatenate(cols) if cols else np.zeros(0, int)
    graph = sp.coo_matrix((np.ones(r.size), (r, c)), shape=(P, P))
    _, lab = connected_components(graph, directed=False)
    nzero = np.bincount(lab, weights=(b == 0).astype(float))
    pinned = nzero >= 0.5 * np.bincount(lab)
    free = np.flatnonzero(~pinned)
    col = np.full(pinned.size, -1)
    col[free] = np.arange(free.size)
    keep = col[lab] >= 0
    N = sp.csr_matrix((np.ones(keep.sum()), (np.flatnonzero(keep),
                                             col[lab[keep]])),
                      shape=(P, free.size))
    return N, ~keep, fused


def _polish(prob, B, mu, max_dim=800, max_iter=30):
    """Newton solve of the criterion restricted to the current structure.

    Coefficients that are exactly zero stay zero and blocks in the quadratic
    zone of the smoothed norm are constrained to fuse exactly (see
    :func:`_structure`). On that subspace the criterion is smooth as long as
    the signs and the remaining block norms do not vanish. Returns ``None``
    when the reduced problem has more than ``max_dim`` unknowns.
    """
    p = prob.p
    off = prob.offdiag
    m = p - 1
    N, zero, fused = _structure(prob, B, mu)
    d = N.shape[1]
    if d == 0:
        return np.zeros_like(B)
    if d > max_dim:
        return None
    b = B.ravel()[off]
    NT = N.T.tocsr()
    size = np.asarray(N.sum(axis=0)).ravel()
    theta = (NT @ b) / size
    H = prob.hessian_offdiag()
    HN = np.asarray((NT @ np.asarray((NT @ H).T)).T)
    HN = 0.5 * (HN + HN.T)
    q = prob.S.ravel()[off]
    lin = prob.lambda1 * size * np.sign(theta) - NT @ q
    nonfused = np.flatnonzero(~fused)
    G = None
    if prob.A is not None and nonfused.size:
        rows = (nonfused[:, None] * m + np.arange(m)).ravel()
        G = (prob.A[rows][:, off] @ N).tocsr()
        nb = nonfused.size
        Rsum = sp.csr_matrix((np.ones(nb * m), (np.repeat(np.arange(nb), m),
                                                np.arange(nb * m))),
                             shape=(nb, nb * m))

    def f(th):
        val = 0.5 * th @ HN @ th + lin @ th
        if G is not None:
            zz = (G @ th).reshape(-1, m)
            val += np.sqrt((zz ** 2).sum(axis=1)).sum()
        return val

    fcur = f(theta)
    for _ in range(max_iter):
        g = HN @ theta + lin
        Hr = HN.copy()
        if G is not None:
            zf = G @ theta
            nz = np.maximum(np.sqrt((zf.reshape(-1, m) ** 2).sum(axis=1)),
                            1e-100)
            inv = np.repeat(1.0 / nz, m)
            g = g + G.T @ (zf * inv)
            Hr += (G.T @ sp.diags(inv) @ G).toarray()
            U = (Rsum @ sp.diags(zf * inv) @ G).toarray()
            Hr -= U.T @ (U / nz[:, None])
        Hr[np.diag_indices_from(Hr)] += 1e-14 * max(1.0, np.trace(Hr))
        try:
            step = -np.linalg.solve(Hr, g)
        except np.linalg.LinAlgError:
            break
        dec = -g @ step
        if not dec > 0:
            break
        t = 1.0
        while t > 1e-10:
            new = theta + t * step
            fnew = f(new)
            if fnew <= fcur - 1e-4 * t * dec:
                break
            t *= 0.5
        else:
            break
        theta, fold, fcur = new, fcur, fnew
        if fold - fcur <= 1e-15 * max(1.0, abs(fcur)):
            break
    vec = N @ theta
    vec[zero] = 0.0
    out = np.zeros(p * p)
    out[off] = vec
    return out.reshape(p, p)


def fista_solve(beta0, X, hp, mu, inner_eps=1e-8, max_inner=10000,
                step_safety=1.0, gap_every=10, compiled=True):
    """Minimise the ``mu``-smoothed criterion by FISTA with monotone restart.

    Each iteration takes a gradient step of length ``1/L`` on the quadratic
    loss plus smoothed fusion penalty, then soft-thresholds at
    ``lambda1 / L``. Stops when the smoothed-problem duality gap is below
    ``inner_eps`` or after ``max_inner`` iterations.

    Returns
    -------
    beta : RegressionMatrix
    info : dict
        ``objective_trace`` (smoothed objective of accepted iterates),
        ``iterations``, ``gap``, ``converged``, ``mu``, ``lipschitz``.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    prob = Problem.from_data(X, hp)
    if beta0 is None:
        beta0 = RegressionMatrix.zeros(prob.p)
    if beta0.p != prob.p:
        raise ValueError("beta0 has p=%d but data has p=%d" % (beta0.p, prob.p))
    B, info = _fista(prob, beta0.to_square(), mu, inner_eps, max_inner,
                     step_safety, gap_every, compiled)
    return RegressionMatrix.from_square(B), info


def _initial_smoothing(prob, B):
    """Gap of ``B`` and the smoothing level whose dual blocks certify it best.

    Scanning ``mu`` matters for warm starts: at a previously smoothed
    solution, fused blocks have norm of order of the old ``mu`` and only a
    comparable ``mu`` recovers useful dual blocks.
    """
    best = (np.inf, 1.0)
    for mu in np.logspace(2, -14, 33):
        g = prob.gaps(B, mu, refine=0)[3]
        if g < best[0]:
            best = (g, mu)
    return best


def conesta_solve(X, hp, cfg=None, beta0=None, problem=None):
    """Solve the criterion for fixed ``(lambda1, lambda2)``.

    Parameters
    ----------
    X : DataMatrix or array, shape (n, p)
        Data, used as given (standardize beforehand).
    hp : Hyperparameters
    cfg : SolverConfig, optional
    beta0 : RegressionMatrix, optional
        Warm start, zeros by default.
    problem : Problem, optional
        Precomputed problem for ``(X, hp)``; avoids rebuilding the operator.

    Returns
    -------
    beta : RegressionMatrix
        Iterate with the smallest certified gap.
    diagnostics : SolveDiagnostics
        ``final_duality_gap`` bounds ``J(beta) - min J``.
    """
    cfg = cfg or SolverConfig()
    prob = problem if problem is not None else Problem.from_data(X, hp)
    p = prob.p
    B = np.zeros((p, p)) if beta0 is None else beta0.to_square()
    if B.shape != (p, p):
        raise ValueError("beta0 does not match the data dimension")
    M = prob.n_blocks
    diag = SolveDiagnostics()
    target = cfg.eps_target
    if cfg.relative:
        target *= max(1.0, 0.5 * prob.trace)

    eps, mu = _initial_smoothing(prob, B) if M else (prob.gaps(B, 1.0)[3], 1.0)
    # best primal point and best lower bound on min J seen so far; the
    # smoothed dual value bounds min J_mu <= min J from below as well
    best_B, best_J = B, prob.value(B)
    lower = best_J - eps

    def offer(Bc, res):
        nonlocal best_B, best_J, lower
        pm, gm, pr, g = res
        lower = max(lower, pr - g, pm - gm)
        if pr < best_J:
            best_B, best_J = Bc, pr

    best_gap = eps
    diag.gap_trace.append(float(eps))
    diag.objective_trace.append(best_J)
    if eps <= target:
        diag.final_duality_gap = float(eps)
        diag.converged = True
        return RegressionMatrix.from_square(B), diag

    if M:
        # the scan only estimates the gap; FISTA steps shrink with mu, so
        # never start below the level the continuation rule assigns to eps
        mu = max(cfg.mu_floor, mu if beta0 is not None else 0.0, eps / M)
    inner_eps = 0.5 * eps
    for outer in range(cfg.max_outer):
        try:
            B, info = _fista(prob, B, mu, inner_eps, cfg.max_inner,
                             cfg.step_safety, cfg.gap_every, cfg.compiled)
        except SolverDivergenceError:
            logger.warning("FISTA diverged at mu=%g; returning best iterate", mu)
            break
        diag.iterations += info["iterations"]
        diag.mu_trace.append(float(mu))
        res = prob.gaps(B, mu, refine=1)
        offer(B, res)
        _, gap_mu, primal, gap = res
        if M:
            gap = min(gap, gap_mu + mu * M / 2)
        if cfg.polish and best_J - lower > target:
            # the polished point is only a candidate; FISTA carries on from
            # its own iterate so a wrong structure guess cannot trap it
            Bp = _polish(prob, B, mu, cfg.polish_max_dim)
            if Bp is not None:
                offer(Bp, prob.gaps(Bp, mu))
        stalled = best_J - lower >= best_gap
        best_gap = max(best_J - lower, 0.0)
        diag.gap_trace.append(float(best_gap))
        diag.objective_trace.append(float(primal))
        if best_gap <= target:
            diag.converged = True
            break
        eps = cfg.continuation_factor * min(gap, eps)
        inner_eps = 0.5 * eps
        if M and stalled and mu < best_gap / M:
            # no progress: mu is too small for FISTA to move; re-smooth
            mu = best_gap / M
            continue
        if M and gap - gap_mu > inner_eps:
            # Smoothing dominates the gap: shrink mu. Only blocks in the
            # quadratic zone of the smoothed norm (||z_b|| < mu) carry
            # smoothing error beyond a constant, so size mu for those.
            norms = np.sqrt((prob.blocks(B) ** 2).sum(axis=1))
            n_quad = max(1, int((norms < mu).sum()))
            mu = max(cfg.mu_floor,
                     min(cfg.continuation_factor * mu, eps / n_quad))
    diag.final_duality_gap = float(best_gap)
    if not diag.converged:
        logger.info("CONESTA stopped with gap %.3g > %.3g", best_gap,
                    target)
    return RegressionMatrix.from_square(best_B), diag
