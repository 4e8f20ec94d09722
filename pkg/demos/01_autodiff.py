"""Reverse-mode autodiff on numpy arrays, checked against finite differences."""

# %%
import numpy as np

from fpan.gradcheck import check_gradients
from fpan.tensor import Tensor, conv2d, conv2d_direct, mean_all, precision, relu

rng = np.random.default_rng(0)

# %% [markdown]
# A tensor records its parents and a backward closure. `backward()` walks the
# graph in reverse topological order and accumulates into `.grad`.

# %%
x = Tensor(np.array([3.0]), requires_grad=True)
(x * x).backward()
print("d(x*x)/dx at 3:", x.grad)

# %% [markdown]
# Convolution is im2col plus a matrix product. A plain loop is kept around as
# an oracle; the two agree to float32 rounding (the default precision).

# %%
a = rng.normal(size=(1, 3, 9, 9))
w = rng.normal(size=(4, 3, 6, 6))
fast = conv2d(Tensor(a), Tensor(w), stride=2, pad=2).data
slow = conv2d_direct(a, w, stride=2, pad=2)
print("strided conv", fast.shape, "max diff vs loop:", np.abs(fast - slow).max())

# %% [markdown]
# Gradient checks run in float64. The relative error below is per tensor,
# normalised by the larger of the two gradient magnitudes.

# %%
with precision("float64"):
    inp = Tensor(rng.normal(size=(2, 3, 6, 6)), requires_grad=True)
    weight = Tensor(rng.normal(size=(5, 3, 3, 3)), requires_grad=True)
    bias = Tensor(rng.normal(size=5), requires_grad=True)
    loss = lambda: mean_all(relu(conv2d(inp, weight, bias, 1, 1)))  # noqa: E731
    errors = check_gradients(loss, [("input", inp), ("weight", weight), ("bias", bias)], step=1e-6)
for name, err in errors.items():
    print(f"{name:>6}: {err:.2e}")
