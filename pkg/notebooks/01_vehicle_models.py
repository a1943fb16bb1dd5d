# %% [markdown]
# # Vehicle models
#
# The differential-drive robot in two flavours: the kinematic unicycle driven by
# body velocities, and the second-order model driven by accelerations. Both are
# stepped with an exact zero-order hold.

# %%
import numpy as np

from nhkoopman.vehicles import (WheelGeometry, dynamic_zoh_step, kinematic_zoh_step,
                                simulate, wheels_to_body)

# %% [markdown]
# Wheel speeds map to a forward velocity and a turn rate.

# %%
geom = WheelGeometry(r_w=0.05, axle=0.2)
print(wheels_to_body([1.0, 1.0], geom), wheels_to_body([-1.0, 1.0], geom))

# %% [markdown]
# A constant input drives the kinematic robot along a circle of radius v/ω.
# Ten steps of 0.1 s equal one step of 1 s.

# %%
x0 = np.array([0.0, 0.0, 0.0])
u = np.array([0.2, 0.6])
traj = simulate(x0, np.tile(u, (10, 1)), 0.1)
print(traj[-1], kinematic_zoh_step(x0, u, 1.0))
print("radius", np.linalg.norm(traj[:, :2] - [0, 0.2 / 0.6], axis=1).round(12))

# %% [markdown]
# The second-order robot with zero acceleration keeps its velocities and follows
# the same arc.

# %%
z = dynamic_zoh_step([0, 0, 0, 0.2, 0.6], [0.0, 0.0], 1.0)
print(z)
