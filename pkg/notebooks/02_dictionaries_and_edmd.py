# %% [markdown]
# # Dictionaries and the bilinear EDMD surrogate
#
# Each dictionary lifts a state into observables and reprojects a lifted vector
# back to a state. One Koopman matrix is fitted per constant basis input, and
# the matrix for any other input is their affine combination.

# %%
import numpy as np

from nhkoopman.dictionaries import get_dictionary, registry
from nhkoopman.edmd import Partition, LabeledDataset, fit_surrogate, predict
from nhkoopman.sampler import KINEMATIC_BASES
from nhkoopman.vehicles import kinematic_zoh_step

# %%
for dic in registry():
    print(dic.name, dic.size, "observables, state dimension", dic.arity)
D5 = get_dictionary("D5t")
print(D5.lift([0.3, -0.2, np.pi / 4]))

# %% [markdown]
# Noiseless pairs under the two kinematic basis inputs. The kinematic robot does
# not move under zero input, so its drift matrix is the identity.

# %%
rng = np.random.default_rng(0)
parts = []
for u in KINEMATIC_BASES:
    X = np.column_stack([rng.uniform(-1, 1, (200, 2)), rng.uniform(-np.pi, np.pi, 200)])
    Y = np.array([kinematic_zoh_step(x, u, 0.1) for x in X])
    parts.append(Partition(X, Y, np.asarray(u, float), 0.1))
sur = fit_surrogate(D5, LabeledDataset(parts), drift=False)

# %% [markdown]
# Under a basis input the dictionary is closed, so the prediction is exact. Under
# another input the one-step error is of second order in the step size.

# %%
x0 = np.array([0.2, -0.4, 1.0])
for u in (KINEMATIC_BASES[1], [0.3, -1.2]):
    pred = predict(sur, x0, np.tile(u, (10, 1)))
    x = x0
    for _ in range(10):
        x = kinematic_zoh_step(x, u, 0.1)
    print(u, "10-step error", np.abs(pred[-1] - x).max())
