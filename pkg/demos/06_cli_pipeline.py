# %% [markdown]
# # The command-line pipeline
#
# `egmn synth`, `train`, `evaluate`, `predict` and `inspect` reproduce an experiment from a
# shell. Here they are driven through `run_cli`, which takes the same argument list; each
# call returns the process exit code.

# %%
import csv
import tempfile
from pathlib import Path

import numpy as np

from egmn.cli import run_cli

work = Path(tempfile.mkdtemp(prefix="egmn-demo-"))
world, run = work / "world", work / "run"

steps = [
    ["synth", "--out", str(world), "--n", "8000", "--users", "20", "--videos", "20", "--seed", "7"],
    ["train", "--data", str(world / "interactions.csv"), "--manifest", str(world / "manifest.ini"),
     "--out", str(run), "--k", "3", "--epochs", "4", "--hidden", "32", "16", "--batch", "512"],
    ["evaluate", "--run", str(run), "--part", "train", "--stem", "train_report"],
    ["predict", "--run", str(run), "--data", str(world / "interactions.csv"), "--out", str(work / "pred.csv"),
     "--quantiles", "0.5", "0.9"],
    ["inspect", "--run", str(run), "--user", "u4", "--video", "v11", "--oracle", str(world / "oracle.json"),
     "--context", "hour=20", "weekday=5", "device=ios", "--out", str(work / "curves")],
]
for argv in steps:
    print(f"$ egmn {' '.join(argv[:1])} ... -> exit {run_cli(argv)}")

# %%
print(sorted(p.name for p in run.iterdir()))
print((run / "report.txt").read_text())

# %% [markdown]
# The inspected density integrates to one, and sits next to the true one from the oracle.

# %%
def curve(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array(rows, dtype=float)


model, truth = curve(work / "curves" / "density.csv"), curve(work / "curves" / "oracle_density.csv")
print(f"integral of model density {np.trapezoid(model[:, 1], model[:, 0]):.5f}")
print(f"integral of true density  {np.trapezoid(truth[:, 1], truth[:, 0]):.5f}")
print(f"outputs in {work}")
