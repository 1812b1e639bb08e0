# %% [markdown]
# # Best-estimate, unawareness and discrimination-free premiums
#
# Claim costs depend on age, smoking and gender, and smokers are mostly
# women.  A model that simply drops gender still charges smokers for it
# through the correlation.  The discrimination-free premium averages the
# gender-specific predictions with fixed weights instead.

# %%
import numpy as np

from ldpfair import fair, synth
from ldpfair.models import TrainConfig

cell = synth.analytic_premiums(30, "S")
print("analytic at age 30, smoker:", cell)

# %%
ds = synth.dgp_sample(synth.SynthConfig(n=5000, seed=0))
cfg = TrainConfig(seed=0)
gms, report = fair.mptp(ds, "net", cfg=cfg)
unaware = fair.unawareness_model(ds, "net", cfg=cfg)

point = np.array([[30.0, 1.0]])
mu = gms.predict_groups(point)[0]
print("fitted best estimates (male, female):", mu.round(1))
print("fitted unawareness premium          :", fair.predict_unaware(unaware, point).round(1))
print("fitted discrimination-free premium  :", (mu @ gms.p_hat).round(1))

# %% [markdown]
# Premiums for a whole portfolio come from `premium_report`; it never reads
# the gender column of the data it prices.

# %%
table = fair.premium_report(gms, gms.p_hat, ds, unawareness=unaware).to_frame()
print(table.head())
