"""
Hidden driving states of a single simulated driver
==================================================

Simulate one driver from the fitted teen-driving model, then recover the
monthly probability of the poor-driving state and the most likely state
path.
"""

import numpy as np

from mixhmm import TEEN_DRIVING_ESTIMATES, decode, lognormal_miles, simulate_shared

# 24 months of exposure-varying data for one driver
data, states = simulate_shared(TEEN_DRIVING_ESTIMATES, N=1, n=24, miles_gen=lognormal_miles(),
                               seed=42, return_states=True)
driver = data[0]

# posterior state probabilities integrate over the driver's random effect;
# the Viterbi path conditions on its posterior mode
p_poor, path = decode(TEEN_DRIVING_ESTIMATES, driver)

print("month  miles  cnc  events  true  p(poor)  viterbi")
for j in range(len(driver)):
    print(f"{driver.t[j]:5d} {driver.miles[j]:6.0f} {driver.y[j]:4d} {driver.x[j]:7d} "
          f"{states[0, j]:5d} {p_poor[j]:8.3f} {path[j]:8d}")

print(f"\nViterbi agrees with the simulated state in {np.mean(path == states[0]):.0%} of months")
