# %% [markdown]
# # Ranking, skip and calibration metrics
#
# XAUC counts correctly ordered pairs of watch times; the quick-skip AUC asks whether a
# score separates views shorter than tau; the histogram KL compares the label
# distribution with the averaged predicted densities.

# %%
import numpy as np

from egmn import EgmParams, kl_divergence, mae, roc_auc, xauc
from egmn.metrics import kl_from_masses

rng = np.random.default_rng(0)
labels = rng.exponential(12.0, 5000)
good = labels + rng.normal(0, 6, 5000)
noisy = labels + rng.normal(0, 30, 5000)
print(f"XAUC good {xauc(good, labels):.4f}  noisy {xauc(noisy, labels):.4f}  constant {xauc(np.zeros(5000), labels):.4f}")
print(f"MAE  good {mae(good, labels):.3f}  noisy {mae(noisy, labels):.3f}")

# %% [markdown]
# Only the order matters: any strictly increasing transform leaves XAUC and AUC unchanged.

# %%
print(f"XAUC of exp(score/50): {xauc(np.exp(good / 50), labels):.4f}")
skip = labels < 4
print(f"quick-skip AUC (score = -prediction): {roc_auc(-good, skip):.4f}")

# %% [markdown]
# Histogram KL: a matched exponential model scores near zero, a wrong rate does not.

# %%
n = 1
matched = EgmParams(np.full(n, 1 / 12), np.zeros((n, 0)), np.zeros((n, 0)), np.ones((n, 1)))
wrong = EgmParams(np.full(n, 1 / 4), np.zeros((n, 0)), np.zeros((n, 0)), np.ones((n, 1)))
print(f"KL matched {kl_divergence(labels, matched):.4f}  wrong rate {kl_divergence(labels, wrong):.4f}")
print(f"two-bin hand case KL([.5,.5] || [.25,.75]) = {kl_from_masses([0.5, 0.5], [0.25, 0.75]):.6f}")
