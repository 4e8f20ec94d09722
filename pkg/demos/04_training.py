"""Overfit the tiny network on one patch, then save and reload it."""

# %%
import tempfile
from pathlib import Path

import numpy as np

from fpan.checkpoint import load_checkpoint, save_checkpoint
from fpan.imaging import DegradationSpec, degrade
from fpan.metrics import psnr_y
from fpan.model import FPAN, preset
from fpan.training import PairDataset, TrainConfig, train

yy, xx = np.mgrid[0:32, 0:32]
hr = np.stack([128 + 60 * np.sin(xx / 4.0), 128 + 60 * np.cos(yy / 5.0), 100 + 3 * (xx + yy)], -1)
hr = np.clip(hr, 0, 255).astype(np.uint8)

spec = DegradationSpec("BI", 2)
dataset = PairDataset.from_hr([hr], spec)

# %% [markdown]
# One 16x16 LR patch, batch of one, no augmentation. The step schedule keeps
# its shape (halve every 200 epochs) with one step per epoch.

# %%
cfg = TrainConfig(batch_size=1, lr_patch=16, lr0=5e-3, epochs=500, steps_per_epoch=1, scale=2, degradation=spec, augment=False)
model = FPAN(preset("tiny"), seed=0)
result = train(model, dataset, cfg)
for step in (0, 50, 100, 200, 400, 499):
    print(f"step {step:>3}  lr {result.records[step][2]:.1e}  L1 {result.losses[step]:.4f}")

# %%
sr = model.predict(degrade(hr, spec).transpose(2, 0, 1) / 255.0)
sr_u8 = np.round(sr.transpose(1, 2, 0) * 255).astype(np.uint8)
print("PSNR on the training patch:", round(psnr_y(sr_u8, hr, 2), 2), "dB")

# %% [markdown]
# Checkpoints are a small little-endian binary format; a reload reproduces
# the forward pass bit for bit.

# %%
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "tiny.ckpt"
    save_checkpoint(model, path, with_optimizer=True)
    again = load_checkpoint(path)
    print(path.stat().st_size, "bytes; same output:", np.array_equal(again.predict(sr[:, :8, :8]), model.predict(sr[:, :8, :8])))
