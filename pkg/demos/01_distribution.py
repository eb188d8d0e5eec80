# %% [markdown]
# # The exponential-Gaussian mixture
#
# A watch time is modelled as a mixture of one exponential component, for quick
# skips, and K Gaussian components, for the "watched to a natural stopping point" peaks.
# This script builds one mixture by hand and walks through everything the
# distribution module offers.

# %%
import numpy as np

from egmn import EgmParams, cdf, interval_prob, log_pdf, mean, pdf, quantile, sample

# a user who skips 40% of the time (mean skip 2 s) and otherwise watches to ~25 s or ~58 s
p = EgmParams(rate=0.5, means=[25.0, 58.0], variances=[16.0, 36.0], weights=[0.4, 0.35, 0.25])
print(p)

# %% [markdown]
# Density, log density and CDF are vectorised over times.

# %%
t = np.array([0.0, 1.0, 4.0, 25.0, 58.0, 90.0])
for ti, d, ld, c in zip(t, pdf(p, t), log_pdf(p, t), cdf(p, t)):
    print(f"t={ti:5.1f}s  pdf={d:.5f}  log_pdf={ld:8.3f}  cdf={c:.4f}")

# %% [markdown]
# The expected watch time is the point prediction; quantiles and interval masses
# answer questions a single number cannot.

# %%
print(f"expected watch time  {float(mean(p)):.2f}s")
print(f"P(skip within 4s)    {float(interval_prob(p, -np.inf, 4.0)):.3f}")
print(f"P(20s <= T <= 30s)   {float(interval_prob(p, 20.0, 30.0)):.3f}")
q = quantile(p, [0.1, 0.5, 0.9])
print("10/50/90% quantiles  " + ", ".join(f"{v:.2f}s" for v in q))

# %% [markdown]
# Sampling is seeded, and a large sample reproduces the mean.

# %%
draws = sample(p, seed=0, n=200_000)
print(f"sample mean {draws.mean():.3f}s vs analytic {float(mean(p)):.3f}s")
hist, edges = np.histogram(draws, bins=12, range=(0, 72))
for lo, n in zip(edges[:-1], hist):
    print(f"{lo:5.0f}s {'#' * int(60 * n / hist.max())}")

# %% [markdown]
# Batches work the same way: leading dimensions of the parameters broadcast.

# %%
batch = EgmParams(rate=[0.5, 2.0], means=[[25.0], [10.0]], variances=[[16.0], [4.0]],
                  weights=[[0.3, 0.7], [0.9, 0.1]])
print("batch means", mean(batch))
