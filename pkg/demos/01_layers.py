# %% [markdown]
# # Layer kernels by hand
# Each forward kernel is a plain numpy function; the matching backward kernel
# takes the upstream gradient and the forward inputs. Here we poke at a few of
# them and confirm a gradient against finite differences.

# %%
import numpy as np

from emofusion.nn import (
    canonical_layers,
    conv_backward,
    conv_forward,
    layer_shapes,
    lrn_forward,
    maxpool_forward,
    softmax,
)

rng = np.random.default_rng(0)

# %% [markdown]
# A 3x3 all-ones kernel over an all-ones image counts the in-bounds neighbours.

# %%
print(conv_forward(np.ones((3, 3, 1)), np.ones((3, 3, 1, 1)), np.zeros(1))[:, :, 0])

# %%
x = np.arange(1.0, 17.0).reshape(4, 4, 1)
print(maxpool_forward(x)[:, :, 0])
print(softmax(np.array([np.log(2), 0.0, 0.0])))

# LRN barely changes small activations with the default constants
a = rng.normal(size=(2, 2, 8))
print(np.abs(lrn_forward(a) - a / 2 ** 0.75).max())

# %% [markdown]
# Finite-difference check of the convolution's weight gradient.

# %%
x = rng.normal(size=(6, 6, 2))
w = rng.normal(size=(3, 3, 2, 4))
b = np.zeros(4)
proj = rng.normal(size=(6, 6, 4))
_, gw, _ = conv_backward(proj, (x, w))

h = 1e-5
numeric = np.zeros_like(w)
for idx in np.ndindex(w.shape):
    w[idx] += h
    up = (conv_forward(x, w, b) * proj).sum()
    w[idx] -= 2 * h
    down = (conv_forward(x, w, b) * proj).sum()
    w[idx] += h
    numeric[idx] = (up - down) / (2 * h)
print("max relative error", np.abs(gw - numeric).max() / np.abs(numeric).max())

# %% [markdown]
# Shapes through the face network.

# %%
for spec, shape in zip(canonical_layers(), layer_shapes(canonical_layers())):
    print(f"{spec.kind:8s} {shape}")
