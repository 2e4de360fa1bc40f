"""Sweep the fusion penalty and watch variables merge into clusters.

Run with ``python3 demos/02_clustering_path.py``.
"""
from mglasso.evaluation import adjusted_rand_index
from mglasso.model import standardize
from mglasso.path import (PathConfig, cluster_level_graph, lambda1_max,
                          mglasso_path)
from mglasso.synthetic import SimConfig, simulate

# Two dense, well separated blocks of five variables each.
cfg = SimConfig(p=10, n=200, model="sbm", K=2, pi=(0.5, 0.5), rho=0.5,
                alpha_in=1.0, alpha_out=0.0, seed=2)
truth, X = simulate(cfg)
Xs = standardize(X)

# Each level warm-starts from the previous one; merged clusters stay merged.
hier = mglasso_path(Xs, 0.05 * lambda1_max(Xs), PathConfig(max_levels=80))
last = None
for level in hier.levels:
    if level.partition.K != last:
        ari = adjusted_rand_index(level.partition, truth.labels)
        print("lambda2 %8.4f  clusters %2d  ARI %.2f"
              % (level.lambda2, level.partition.K, ari))
        last = level.partition.K

# The graph between clusters at the two-cluster level, if the path has one.
two = hier.level_nearest(2)
meta = cluster_level_graph(two.beta, two.partition)
print("level with %d clusters: %d edge(s) between clusters"
      % (two.partition.K, meta.n_edges))
