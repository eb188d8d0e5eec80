# %% [markdown]
# # Recovering known distributions from a synthetic world
#
# The synthetic generator gives every (user, video) pair a true mixture: picky users
# skip more, and videos carry one to three viewing peaks scaled by their duration.
# We train on sampled interactions and watch the per-pair KL to the truth fall.

# %%
import numpy as np

from egmn import (
    PreprocessConfig, SyntheticWorldConfig, TrainConfig, evaluate, generate_synthetic, mae, preprocess, train,
)
from egmn.distribution import pdf
from egmn.metrics import density_kl
from egmn.runner import forward_all

records, oracle = generate_synthetic(SyntheticWorldConfig(n_users=30, n_videos=30, seed=0), 30_000)
train_set, eval_set, transform = preprocess(records, PreprocessConfig(), "random", 0.8, 0)
print(f"{len(train_set)} train rows, {len(eval_set)} eval rows, "
      f"{np.mean(train_set.labels < 4):.0%} of labels below 4s")

# %% [markdown]
# One row per distinct pair is enough to compare model and truth densities.

# %%
first = {}
for i, key in enumerate(zip(eval_set.user_ids, eval_set.video_ids)):
    first.setdefault(key, i)
probe = eval_set.subset(np.array(sorted(first.values())))
truth = oracle.batch_params(list(probe.user_ids), list(probe.video_ids))


def report(epoch, weights):
    kl = np.mean(density_kl(truth, forward_all(weights, probe.features), n_grid=1001))
    print(f"epoch {epoch:2d}: mean KL(truth || model) over {len(probe)} pairs = {kl:.4f}")


weights, history = train(TrainConfig(n_gaussians=4, epochs=8, hidden=(64, 32)), train_set, eval_set, callback=report)

# %%
r = evaluate(weights, eval_set)
print(r.format())
print(f"global-mean predictor MAE {mae(np.full(len(eval_set), train_set.labels.mean()), eval_set.labels):.3f}")

# %% [markdown]
# Look at one pair's learned density next to the truth.

# %%
p_model, p_true = forward_all(weights, probe.features)[0], truth[0]
grid = np.linspace(0, float(np.max(p_true.means)) * 1.5, 16)
print(f"pair {probe.user_ids[0]}/{probe.video_ids[0]}")
for g, a, b in zip(grid, pdf(p_true, grid), pdf(p_model, grid)):
    print(f"{g:6.1f}s  true {a:.4f}  model {b:.4f}")
