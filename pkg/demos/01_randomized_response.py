# %% [markdown]
# # Randomized response and the correction matrices
#
# A policyholder's gender is reported through randomized response: the
# true level is kept with probability `pi`, otherwise replaced by one of the
# other levels uniformly.  The privacy budget `epsilon` and `pi` determine
# each other.

# %%
import math

import numpy as np

from ldpfair import correction, privacy

params = privacy.rr_params(math.log(9), 2)
print(params)
print("likelihood ratio bound:", privacy.ldp_ratio(params))

# %% [markdown]
# Privatizing is deterministic given the seed: record `i` always uses the
# same random block, so re-running gives the same output.

# %%
d = np.array([0, 1, 1, 0, 1, 0, 0, 1, 1, 1])
s = privacy.privatize_array(d, params, seed=42)
print("true      ", d)
print("privatized", s)

# %% [markdown]
# The observed level frequencies are a mixture of the true ones.  Inverting
# the mixing matrix recovers the true marginal, and the matrix of inverse
# conditional probabilities turns risks measured on privatized groups back
# into risks on true groups.

# %%
n = 100_000
d = (np.random.default_rng(0).random(n) < 0.3).astype(int)
s = privacy.privatize_array(d, privacy.pi_from_target(0.8, 2), seed=1)
mats, weights = correction.corrected_risk_weights(np.bincount(s), 0.8)
print("true share of level 1     :", d.mean())
print("privatized share          :", s.mean())
print("recovered share           :", mats.p_d[1])
print("C1 =", mats.c1)
print("weight table (model k, privatized level j):")
print(weights)

# %% [markdown]
# Some weights are negative.  The correction is unbiased but its variance
# grows with C1, which blows up as `pi` approaches 1/2.

# %%
for pi in (0.95, 0.9, 0.8, 0.7, 0.6, 0.55):
    print(f"pi={pi:.2f}  C1={correction.c1(pi, 2):7.3f}")
