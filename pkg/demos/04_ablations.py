# %% [markdown]
# # What each mixture part buys
#
# On a skew-heavy world (most views end within seconds) we train three models with the
# same seeds: the full mixture, one without the exponential skip component, and one
# with the exponential alone. The exponential matters for skips and MAE, and the
# Gaussians matter for ranking.

# %%
import numpy as np

from egmn import PreprocessConfig, SyntheticWorldConfig, TrainConfig, evaluate, generate_synthetic, preprocess, train

records, _ = generate_synthetic(SyntheticWorldConfig(pickiness_range=(0.5, 0.95), seed=0), 30_000)
train_set, eval_set, _ = preprocess(records, PreprocessConfig(), "random", 0.8, 0)
print(f"{np.mean(train_set.labels < 4):.0%} of training labels are below 4s")

variants = {
    "full": {},
    "without exponential": {"disable_exponential": True},
    "exponential only": {"disable_gaussians": True},
}
print(f"{'model':22s} {'MAE':>7s} {'XAUC':>7s} {'AUC@4s':>7s}")
for name, extra in variants.items():
    weights, _ = train(TrainConfig(n_gaussians=3, epochs=6, seed=0, shuffle_seed=100, **extra), train_set)
    r = evaluate(weights, eval_set)
    print(f"{name:22s} {r.mae:7.3f} {r.xauc:7.4f} {r.quick_skip_auc[4.0]:7.4f}")
