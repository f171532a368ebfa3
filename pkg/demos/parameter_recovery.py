"""
Recovering the generating parameters
====================================

Simulate one dataset of 60 drivers observed for 20 months, fit the mixed
two-state model and compare estimates with the truth.  A full replication
study is ``run_study`` (or ``mixhmm study`` on the command line).
"""

from mixhmm import SIMULATION_TRUTH, FitConfig, fit, simulate_shared

truth = SIMULATION_TRUTH
data = simulate_shared(truth, N=60, n=20, seed=2010)

# the generating model has no time trend, so its slope is pinned at zero
res = fit(data, FitConfig(Q=11, init=truth, fixed={"beta2": 0.0}))

print(f"converged={res.converged} after {res.outer_iters} outer iterations")
print(f"log-likelihood {res.loglik:.3f}, AIC {res.aic:.2f}\n")
print(f"{'parameter':>10} {'truth':>7} {'estimate':>9} {'se':>6}")
for name, est, se in zip(res.names, res.values, res.se):
    print(f"{name:>10} {getattr(truth, name):7.2f} {est:9.3f} {se:6.3f}")

# the restricted model without random effects, for comparison
fixed = fit(data, FitConfig(variant="fixed2", init=truth, fixed={"beta2": 0.0}, compute_se=False))
print(f"\nAIC mixed {res.aic:.1f} vs no random effect {fixed.aic:.1f}")
