# %% [markdown]
# # Training on synthetic shapes
#
# Generate a small dataset of textured backgrounds with one to three flat
# shapes, train the default desk-scale model for a few hundred Adam steps, and
# checkpoint it. Run from the repository root:
#
#     python demos/03_train_synthetic.py
#
# Artifacts go to ``demo_out/`` (about 30 s on one core).

# %%
import time
from pathlib import Path

import numpy as np

from arnsal import NetConfig, SaliencyModel, TrainConfig, save_checkpoint, train
from arnsal.datapipe import load_manifest_samples, synth_generate

out = Path("demo_out")
manifest = synth_generate(16, 64, seed=7, out_dir=out / "data")
samples = load_manifest_samples(manifest, 64)
print(len(samples), "samples; channel means", np.round(manifest.channel_means, 2))
print("foreground fractions:", np.round([s.mask.mean() for s in samples], 2))

# %%
model = SaliencyModel(NetConfig())
print(f"{model.num_parameters():,} parameters")
cfg = TrainConfig(steps=400)

t0 = time.perf_counter()
log = train(model, samples, cfg, manifest.channel_means,
            on_step=lambda s, l: print(f"step {s:4d}  loss {l:.4f}") if s % 50 == 0 else None)
print(f"{time.perf_counter() - t0:.0f}s")

# %% [markdown]
# Smoothed loss at the start and the end of the run:

# %%
losses = np.array([l for _, l in log])
print("first 10 mean:", losses[:10].mean().round(4), " last 100 mean:", losses[-100:].mean().round(4))

save_checkpoint(out / "model.ckpt", model, cfg, manifest.channel_means, cfg.steps)
print("saved", out / "model.ckpt")
