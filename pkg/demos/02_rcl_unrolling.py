# %% [markdown]
# # Unrolling a recurrent convolutional layer
#
# The recurrent unit reuses one feed-forward and one recurrent kernel at every
# step. Here we watch its output settle as the step count grows, and confirm
# that zeroing the recurrent kernel removes the recurrence entirely.

# %%
import numpy as np

from arnsal import RclUnit, Tensor, no_grad

rng = np.random.default_rng(1)
u = Tensor(rng.standard_normal((4, 8, 8)))

outputs = {}
for t in range(6):
    unit = RclUnit("rcl", 4, 6, t_steps=t)
    unit.init_parameters(np.random.default_rng(7))   # same weights for every t
    unit.b.data[...] = 0.1
    with no_grad():
        outputs[t] = unit(u).data

for t in range(1, 6):
    change = np.linalg.norm(outputs[t] - outputs[t - 1])
    print(f"t={t}: ||x(t) - x(t-1)|| = {change:.4f}")

# %% [markdown]
# Each extra step feeds the previous state back through w_r. With w_r = 0 the
# update has nothing to add and every step count gives the same map.

# %%
unit = RclUnit("rcl", 4, 6, t_steps=5)
unit.init_parameters(np.random.default_rng(7))
unit.b.data[...] = 0.1
unit.w_r.data[...] = 0.0
with no_grad():
    collapsed = unit(u).data
print("w_r = 0 matches t = 0 exactly:", np.array_equal(collapsed, outputs[0]))

# %% [markdown]
# Parameter count does not depend on the number of steps.

# %%
for t in (0, 3, 10):
    print(t, sum(p.size for p in RclUnit("r", 4, 6, t_steps=t).parameters()))
