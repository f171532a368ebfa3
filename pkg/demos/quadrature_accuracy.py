"""
How many quadrature points are enough?
======================================

Each driver's likelihood is an integral over a normal random effect.  Here
the adaptive Gauss-Hermite value is compared with a very fine trapezoid
for increasing rule orders.
"""

import math

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from mixhmm import SIMULATION_TRUTH, forward_pass, simulate_shared
from mixhmm.quadrature import adapt, find_adaptation, gh_rule

p = SIMULATION_TRUTH
driver = simulate_shared(p, N=1, n=20, seed=3)[0]


def cond_loglik(u):
    return forward_pass(p, driver, u).cond_loglik


# reference: 40,001-point trapezoid over +-12 prior standard deviations
u = np.linspace(-12, 12, 40001) * p.sd
ref = logsumexp(cond_loglik(u) + stats.norm.logpdf(u, scale=p.sd)) + math.log(u[1] - u[0])

# the rule is centred at the posterior mode of the random effect and
# scaled by its curvature
a = find_adaptation(cond_loglik, p.lam)
print(f"posterior mode {a.center:+.3f}, scale {a.scale:.3f}")
print(" Q   adaptive        plain")
for Q in (1, 3, 5, 11, 21):
    adaptive = adapt(gh_rule(Q), a.center, a.scale, p.lam).log_integrate(cond_loglik)
    plain = gh_rule(Q).log_integrate(lambda z: cond_loglik(p.sd * z))
    print(f"{Q:2d}   {abs(adaptive - ref):.2e}     {abs(plain - ref):.2e}")
