# %% [markdown]
# # Closed-loop Monte-Carlo study
#
# Random initial poses, one run per configuration, and the empirical
# distribution of the final lateral offset. A small kinematic study keeps this
# script quick; the dynamic study runs the same way with `model_kind="dynamic"`.

# %%
import numpy as np

from nhkoopman.dictionaries import get_dictionary
from nhkoopman.edmd import fit_surrogate
from nhkoopman.experiments import StudyConfig, data_efficiency_sweep, monte_carlo_closed_loop
from nhkoopman.postprocess import PostprocessSpec, build_dataset
from nhkoopman.sampler import SamplingSpec, sample_kinematic

# %%
data = build_dataset(sample_kinematic(SamplingSpec.kinematic(seed=0)),
                     PostprocessSpec(window=1, dt=0.1))
D5 = get_dictionary("D5t")
sur = fit_surrogate(D5, data, drift=False)
configs = [StudyConfig("me", "proj"), StudyConfig("ce", "proj"), StudyConfig("ds", "proj")]
for rep in monte_carlo_closed_loop("kinematic", sur, configs, n=8, seed=0):
    print(rep.summary(threshold=1e-3))

# %% [markdown]
# Ten well-spread pairs per basis input already give a usable model.

# %%
for d, rep in data_efficiency_sweep("kinematic", data, D5, [10, None], n=8).items():
    print(d, rep.summary(threshold=1e-3))
