# %% [markdown]
# # Kinematic setpoint stabilisation
#
# Receding-horizon control on the surrogate, reprojecting at every predicted
# step. The mixed-exponents cost follows the sub-Riemannian geometry of the
# robot; the quadratic costs stall short of the origin in the parallel-parking
# manoeuvre.

# %%
import numpy as np

from nhkoopman.costs import default_cost
from nhkoopman.dictionaries import get_dictionary
from nhkoopman.edmd import fit_surrogate
from nhkoopman.mpc import OcpSpec, closed_loop
from nhkoopman.postprocess import PostprocessSpec, build_dataset
from nhkoopman.sampler import SamplingSpec, sample_kinematic

# %%
rec = sample_kinematic(SamplingSpec.kinematic(seed=0, noise_pos=0.0, noise_heading=0.0))
sur = fit_surrogate(get_dictionary("D5t"), build_dataset(rec, PostprocessSpec(window=1, dt=0.1)),
                    drift=False)

# %%
for x0 in ([-1.0, -0.5, -np.pi / 6], [0.0, 0.5, 0.0]):
    for cost in ("me", "ce", "ds"):
        spec = OcpSpec(60, 0.1, default_cost(cost, 3, sur.dictionary), surrogate=sur)
        res = closed_loop(spec, x0, 10.0)
        print(x0, cost, "final state", res.states[-1].round(5))
