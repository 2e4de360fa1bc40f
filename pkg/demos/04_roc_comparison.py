"""Compare support recovery of the fused model and plain neighborhood
selection on replicated data (a small version of the ROC study).

Run with ``python3 demos/04_roc_comparison.py``; it takes a few minutes.
"""
from mglasso.evaluation import averaged_roc
from mglasso.synthetic import SimConfig

cfg = SimConfig(p=20, n=40, model="sbm", pi=(0.2,) * 5, seed=4)
res = averaged_roc(cfg, lambda2_values=(0.0, 0.5, 2.0), replications=3,
                   num=10)
for (method, lam2), curve in sorted(res.items()):
    label = "neighborhood selection" if method == "mb" else \
        "multiscale, lambda2 = %g" % lam2
    print("%-28s mean AUC %.3f (sd %.3f)"
          % (label, curve.auc_mean, curve.auc_sd))
