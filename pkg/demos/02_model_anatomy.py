"""Walk through the network: shapes, the zero-initialised attention, cost accounting."""

# %%
import numpy as np

from fpan.metrics import count_flops, count_params
from fpan.model import FPAN, ModelConfig, preset
from fpan.tensor import Tensor, no_grad

rng = np.random.default_rng(1)

# %% [markdown]
# The desk preset: 64 channels, two blocks, four conv layers per feedback stage,
# pyramid attention over scales {1, 2, 4}.

# %%
model = FPAN(preset("desk"), seed=0)
lr = Tensor(rng.random((1, 3, 24, 24)))
with no_grad():
    feats = model.features(lr)
    out = model(lr)
print("LR", lr.shape, "-> fused features", feats.shape, "-> SR", out.shape)

# %% [markdown]
# The last projection of every attention block starts at zero, so at
# initialisation each block is just `F + FC(F)`.

# %%
block = model.blocks[0]
f = Tensor(rng.normal(size=(1, 64, 24, 24)))
with no_grad():
    y = block.feedback(f)
    same = block.attention(y).data.tobytes() == y.data.tobytes()
print("attention is the identity at init:", same)

maps = block.attention.scale_maps(f)
print("pyramid maps:", {s: m.shape[2:] for s, m in maps.items()})

# %% [markdown]
# Parameters and FLOPs (multiply-add = 2) at a 512x512 HR output (256x256 for
# the x2 tiny preset).

# %%
for name in ("tiny", "desk", "paper"):
    cfg = preset(name)
    m = FPAN(cfg)
    cost = count_flops(m, 512) if cfg.scale == 4 else count_flops(m, 256)
    print(f"{name:>5}: G={cfg.num_blocks:<2} params {count_params(m).params:>10,}  FLOPs {cost.flops / 1e9:8.2f} G")

# %%
base = preset("desk")
for ablation in ("P0", "P1", "P2", "P3", "P4"):
    m = FPAN(base.with_ablation(ablation))
    print(ablation, f"{m.store.num_elements():>9,}", m.cfg.attention, m.cfg.attention_scales)
