# %% [markdown]
# # A seeded sweep over noise levels
#
# `run_plan` trains the benchmark, the unawareness model and one corrected
# model set per noise level and seed, and returns long-form results.  The
# same plan can be written as TOML and run with `ldpfair experiment`.

# %%
from ldpfair import experiments

plan = experiments.ExperimentPlan(pi_grid=(0.9, 0.8, 0.7), seeds=range(5), n=2000,
                                  traces=False)
results, _ = experiments.run_plan(plan)
print(results.head())

# %%
print(experiments.summarize(results)[["pi", "mean", "se", "count"]])
print(experiments.summarize(results, "benchmark_loss")[["mean", "se"]])
