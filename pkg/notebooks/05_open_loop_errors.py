# %% [markdown]
# # Open-loop prediction errors on reference trajectories
#
# The second-order surrogate predicts 20 steps (1 s) ahead from every instant of
# noisy figure-eight and square recordings, with and without reprojection.

# %%
import numpy as np

from nhkoopman.dictionaries import get_dictionary
from nhkoopman.edmd import fit_surrogate
from nhkoopman.experiments import open_loop_study, reference_runs
from nhkoopman.postprocess import PostprocessSpec, build_dataset
from nhkoopman.sampler import SamplingSpec, sample_dynamic

# %%
rec = sample_dynamic(SamplingSpec.dynamic(seed=0, segments_per_basis=20))
sur = fit_surrogate(get_dictionary("D8Eul"), build_dataset(rec, PostprocessSpec(window=40)),
                    drift=True)

# %%
for kind in ("infinity", "square"):
    rep = open_loop_study(reference_runs(kind, 5, seed=1), {"D8Eul": sur}, horizon=20,
                          window=40)
    print(kind)
    print(rep.summary())
    print("  ratio without/with reprojection",
          round(rep.worst("D8Eul", "noproj") / rep.worst("D8Eul", "proj"), 1))
