"""Simulate block-structured data and fit one multiscale model.

Run with ``python3 demos/01_fit_one_model.py``.
"""
import numpy as np

from mglasso.model import Hyperparameters, graph_from_beta, standardize
from mglasso.objective import original_duality_gap
from mglasso.path import lambda1_max
from mglasso.solver import conesta_solve
from mglasso.synthetic import SimConfig, simulate

# Twelve variables in three planted blocks, 120 samples.
cfg = SimConfig(p=12, n=120, model="sbm", K=3, pi=(1 / 3,) * 3, rho=0.4,
                alpha_in=1.0, alpha_out=0.0, seed=1)
truth, X = simulate(cfg)
Xs = standardize(X)
print("planted blocks:", truth.labels.labels.tolist())

# The sparsity penalty is set relative to the smallest value that empties
# the graph; the fusion penalty pulls the regression rows together.
lam1 = 0.1 * lambda1_max(Xs)
hp = Hyperparameters(lam1, 2.0)
beta, diag = conesta_solve(Xs, hp)
print("converged %s after %d continuation steps, gap %.2e"
      % (diag.converged, len(diag.mu_trace), diag.final_duality_gap))
print("certified gap of the unsmoothed problem: %.2e"
      % original_duality_gap(beta, Xs, hp))

g = graph_from_beta(beta)
true_edges = set(truth.adjacency.edges())
found = set(g.edges())
print("edges: %d estimated, %d true, %d shared"
      % (len(found), len(true_edges), len(found & true_edges)))
np.set_printoptions(precision=2, suppress=True)
print("first regression row:", beta.coeffs[0])
