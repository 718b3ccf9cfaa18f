"""Why pooling through the network helps under imbalanced traffic.

Runs PSGD and the per-segment unshrunken baseline on the 48-segment
imbalanced preset at a reduced horizon and seed count.
Run with ``python demos/04_shrinkage_vs_unshrunken.py`` (a few seconds).
"""

from sarpricing.harness import load_scenario, loglog_slope, relative_regret, run_experiment

cfg = load_scenario("setup4-imb0.8", horizon=2000, seeds=4)
res = run_experiment(cfg, ("psgd", "unshrunken"))
R_p = res.mean_trajectory("psgd")
R_u = res.mean_trajectory("unshrunken")
print(f"psgd       R_T={R_p[-1]:10.0f}  slope {loglog_slope(R_p).slope:.3f}")
print(f"unshrunken R_T={R_u[-1]:10.0f}  slope {loglog_slope(R_u).slope:.3f}")
print(f"relative regret of the baseline: {relative_regret(R_u[-1], R_p[-1]):+.1f}%")
