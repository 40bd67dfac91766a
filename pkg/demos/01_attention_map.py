# %% [markdown]
# # Looking inside the attention module
#
# A feature map with two regions. Positions inside the same region should
# attend to each other once the query/key projections are aligned with the
# feature that separates them.

# %%
import numpy as np

from arnsal import SelfAttention, Tensor, no_grad

rng = np.random.default_rng(0)
C, H, W = 8, 6, 6
x = 0.05 * rng.standard_normal((C, H, W))
x[0, :, :3] += 1.0   # left half lights up channel 0
x[1, :, 3:] += 1.0   # right half lights up channel 1

att = SelfAttention("demo", C, c1_divisor=4)
att.init_parameters(rng)
print("C1 =", att.c1, " gamma at init =", att.gamma.data[0])

# %% [markdown]
# At initialization gamma is 0, so the module passes x through unchanged.

# %%
with no_grad():
    y = att(Tensor(x)).data
print("identity at init:", y.tobytes() == x.tobytes())

# %% [markdown]
# Hand-set projections: f and g read "left minus right", scaled up so the
# softmax is sharp.

# %%
att.w_f.data[...] = 0.0
att.w_g.data[...] = 0.0
att.w_f.data[0, 0, 0, 0], att.w_f.data[0, 1, 0, 0] = 4.0, -4.0
att.w_g.data[0, 0, 0, 0], att.w_g.data[0, 1, 0, 0] = 4.0, -4.0

with no_grad():
    beta = att.attention_map(Tensor(x)).data   # (HW) x (HW), columns sum to 1

left = np.zeros((H, W), bool)
left[:, :3] = True
left = left.ravel()
j = 0  # output position in the top-left corner
print(f"column sum for position {j}: {beta[:, j].sum():.12f}")
print(f"weight mass on the left half: {beta[left, j].sum():.3f}")
print(f"weight mass on the right half: {beta[~left, j].sum():.3f}")

# %% [markdown]
# The column of beta for one output position, laid out on the grid:

# %%
np.set_printoptions(precision=3, suppress=True)
print(beta[:, j].reshape(H, W))

# %% [markdown]
# Turning gamma on mixes the attended features back into the residual.

# %%
att.gamma.data[...] = 1.0
with no_grad():
    y = att(Tensor(x)).data
print("max |y - x| with gamma = 1:", float(np.abs(y - x).max()))
