# %% [markdown]
# # Scoring saliency maps
#
# Loads the checkpoint written by ``03_train_synthetic.py``, predicts every
# training image and reports the PR sweep, max F-measure and MAE. Also shows
# the CLI route to the same numbers.

# %%
from pathlib import Path

import numpy as np

from arnsal import evaluate_set, load_checkpoint
from arnsal.datapipe import DatasetManifest, load_manifest_samples, preprocess

out = Path("demo_out")
state = load_checkpoint(out / "model.ckpt")
samples = load_manifest_samples(DatasetManifest.read(out / "data"), state.model.config.input_size)
pairs = [(state.model.predict(preprocess(s, state.channel_means)), s.mask) for s in samples]
report = evaluate_set(pairs)
print(f"max F {report.max_f:.4f} at threshold {report.max_f_threshold}")
print(f"mean F {report.mean_f:.4f}   MAE {report.mae:.4f}   ({report.n_samples} images)")

# %% [markdown]
# A coarse view of the PR curve.

# %%
for t in range(0, 256, 32):
    print(f"thr {t:3d}  P {report.precision[t]:.3f}  R {report.recall[t]:.3f}  F {report.fmeasure[t]:.3f}")

# %% [markdown]
# The same evaluation from the shell, going through 8-bit PNG maps:
#
#     arnsal infer --ckpt demo_out/model.ckpt --image demo_out/data/images --out demo_out/pred
#     arnsal eval --pred-dir demo_out/pred --mask-dir demo_out/data/masks --csv demo_out/metrics.csv

# %%
report.write_csv(out / "metrics_inprocess.csv")
print(np.round(pairs[0][0][0, ::8, ::8], 2))
