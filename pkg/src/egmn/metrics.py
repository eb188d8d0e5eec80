"""Accuracy, ranking and distribution-fit metrics for watch-time models."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .distribution import EgmParams, cdf, log_pdf

__all__ = [
    "mae",
    "xauc",
    "roc_auc",
    "BinSpec",
    "binned_masses",
    "kl_from_masses",
    "kl_divergence",
    "density_kl",
    "MetricReport",
    "write_bin_masses_csv",
]


def number_text(v) -> str:
    """Round-trippable text for a number (plain Python repr, never a numpy repr)."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    return a, b


def mae(predictions, labels) -> float:
    p, y = _pair(predictions, labels)
    if p.size == 0:
        raise ValueError("mae of an empty set")
    return float(np.mean(np.abs(p - y)))


def _pair_scores(pi, pj, yi, yj):
    """1 for concordant, 0.5 for prediction ties, 0 for discordant; NaN for label ties."""
    dy = np.sign(yi - yj)
    dp = np.sign(pi - pj)
    s = np.where(dp == 0, 0.5, (dp == dy).astype(np.float64))
    return np.where(dy == 0, np.nan, s)


def xauc(predictions, labels, n_pairs: int = 1_000_000, seed: int = 0) -> float:
    """Fraction of pairs whose predicted order agrees with the label order.

    All pairs are used when there are at most ``n_pairs`` of them; otherwise
    ``n_pairs`` ordered pairs (i != j) are drawn with ``seed``. Label-tied
    pairs are skipped and prediction ties count one half.
    """
    p, y = _pair(predictions, labels)
    n = p.size
    if n < 2:
        raise ValueError("xauc needs at least two examples")
    total = n * (n - 1) // 2
    score_sum, count = 0.0, 0
    if total <= n_pairs:
        block = max(1, 2_000_000 // n)
        for start in range(0, n - 1, block):
            i = np.arange(start, min(start + block, n - 1))
            s = _pair_scores(p[i, None], p[None, :], y[i, None], y[None, :])
            s = np.where(np.arange(n)[None, :] > i[:, None], s, np.nan)
            score_sum += np.nansum(s)
            count += int(np.count_nonzero(~np.isnan(s)))
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, n_pairs)
        j = rng.integers(0, n - 1, n_pairs)
        j = j + (j >= i)
        s = _pair_scores(p[i], p[j], y[i], y[j])
        score_sum = float(np.nansum(s))
        count = int(np.count_nonzero(~np.isnan(s)))
    if count == 0:
        raise ValueError("every evaluated pair has tied labels")
    return float(score_sum / count)


def roc_auc(scores, binary_labels) -> float:
    """Mann-Whitney AUC with midranks for tied scores."""
    s, y = _pair(scores, binary_labels)
    pos = y > 0.5
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes")
    ranks = rankdata(s)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class BinSpec:
    """``count`` equal bins on [0, upper] plus one overflow bin."""

    count: int = 100
    upper: float = 1.0
    epsilon: float = 1e-9

    def __post_init__(self):
        if self.count < 2 or not self.upper > 0 or not self.epsilon > 0:
            raise ValueError(f"degenerate bin spec {self}")

    @classmethod
    def from_labels(cls, labels, count: int = 100, percentile: float = 99.5, epsilon: float = 1e-9) -> "BinSpec":
        upper = float(np.percentile(np.asarray(labels, dtype=np.float64), percentile))
        if not upper > 0:
            upper = float(np.max(labels)) if np.max(labels) > 0 else 1.0
        return cls(count, upper, epsilon)

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, self.upper, self.count + 1)


def binned_masses(labels, params: EgmParams, bins: BinSpec, chunk: int = 4096):
    """Empirical and model-averaged probability mass per bin, each of length ``count + 1``.

    Model mass below 0 goes to the first bin, above ``upper`` to the overflow bin.
    """
    y = np.asarray(labels, dtype=np.float64)
    edges = bins.edges
    inside = y <= bins.upper
    hist, _ = np.histogram(np.maximum(y[inside], 0.0), bins=edges)
    actual = np.append(hist, np.count_nonzero(~inside)).astype(np.float64)
    actual /= actual.sum()

    pred = np.zeros(bins.count + 1)
    n = len(params)
    for start in range(0, n, chunk):
        p = params[start:start + chunk]
        c = cdf(p[:, None], edges[None, :])
        m = np.diff(c, axis=1)
        m[:, 0] += c[:, 0]
        pred[:-1] += m.sum(axis=0)
        pred[-1] += np.sum(1.0 - c[:, -1])
    pred /= n
    return actual, pred


def kl_from_masses(p, q, epsilon: float = 1e-9) -> float:
    """KL(p || q) between two mass vectors after adding ``epsilon`` and renormalising."""
    p = np.asarray(p, dtype=np.float64) + epsilon
    q = np.asarray(q, dtype=np.float64) + epsilon
    p /= p.sum()
    q /= q.sum()
    return float(max(np.sum(p * np.log(p / q)), 0.0))


def kl_divergence(actual_labels, predicted: EgmParams, bins: BinSpec | None = None) -> float:
    """Histogram KL(actual || predicted) between labels and averaged model bin masses."""
    y = np.asarray(actual_labels, dtype=np.float64)
    if y.size == 0 or len(predicted) == 0:
        raise ValueError("kl_divergence needs labels and predictions")
    bins = bins or BinSpec.from_labels(y)
    actual, pred = binned_masses(y, predicted, bins)
    return kl_from_masses(actual, pred, bins.epsilon)


def _support(params: EgmParams):
    lam = params.rate
    hi = 40.0 / lam
    lo = np.zeros_like(lam)
    if params.n_gaussians:
        sd = np.sqrt(params.variances)
        live = params.weights[..., 1:] > 0
        hi = np.maximum(hi, np.max(np.where(live, params.means + 12 * sd, 0.0), axis=-1))
        lo = np.minimum(lo, np.min(np.where(live, params.means - 12 * sd, 0.0), axis=-1))
    return lo, hi


def density_kl(p: EgmParams, q: EgmParams, n_grid: int = 4001, chunk: int = 128) -> np.ndarray:
    """Continuous KL(p || q) per batch element by trapezoid quadrature.

    The grid spans the effective support of ``p`` and is split at t = 0,
    where the exponential density jumps.
    """
    if p.batch_shape != q.batch_shape or p.rate.ndim != 1:
        raise ValueError("density_kl expects two 1-d batches of equal length")
    lo, hi = _support(p)
    u = np.linspace(0.0, 1.0, n_grid)
    out = np.zeros(len(p))
    for start in range(0, len(p), chunk):
        sl = slice(start, start + chunk)
        pp, qq = p[sl][:, None], q[sl][:, None]
        total = np.zeros(pp.rate.shape[0])
        segments = [(np.zeros_like(hi[sl]), hi[sl], False)]
        if np.any(lo[sl] < 0):
            segments.append((lo[sl], np.zeros_like(lo[sl]), True))
        for a, b, negative in segments:
            grid = a[:, None] + (b - a)[:, None] * u[None, :]
            if negative:
                grid = np.minimum(grid, -1e-300)  # stay strictly left of the jump at 0
            lp = log_pdf(pp, grid)
            lq = log_pdf(qq, grid)
            dens = np.exp(lp)
            with np.errstate(invalid="ignore"):
                integrand = np.where(dens > 0, dens * (lp - lq), 0.0)
            total += np.trapezoid(integrand, grid, axis=1)
        out[sl] = total
    return np.maximum(out, 0.0)


@dataclass
class MetricReport:
    mae: float
    xauc: float
    xauc_pairs: int
    xauc_seed: int
    quick_skip_auc: dict = field(default_factory=dict)  # threshold (s) -> AUC
    kl_divergence: float = float("nan")
    bin_count: int = 100
    bin_upper: float = 1.0
    bin_epsilon: float = 1e-9
    n_examples: int = 0

    def as_dict(self) -> dict:
        d = {
            "mae": self.mae, "xauc": self.xauc, "xauc_pairs": self.xauc_pairs, "xauc_seed": self.xauc_seed,
            "kl_divergence": self.kl_divergence, "bin_count": self.bin_count, "bin_upper": self.bin_upper,
            "bin_epsilon": self.bin_epsilon, "n_examples": self.n_examples,
        }
        for tau, auc in sorted(self.quick_skip_auc.items()):
            d[f"quick_skip_auc@{tau:g}"] = auc
        return d

    def to_text(self) -> str:
        return "".join(f"{k} = {number_text(v)}\n" for k, v in self.as_dict().items())

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        kv = {}
        for line in text.splitlines():
            if line.strip():
                k, v = line.split("=", 1)
                kv[k.strip()] = v.strip()
        return cls._from_flat(kv)

    @classmethod
    def _from_flat(cls, kv: dict) -> "MetricReport":
        qs = {float(k.split("@", 1)[1]): float(v) for k, v in kv.items() if k.startswith("quick_skip_auc@")}
        return cls(
            mae=float(kv["mae"]), xauc=float(kv["xauc"]), xauc_pairs=int(kv["xauc_pairs"]),
            xauc_seed=int(kv["xauc_seed"]), quick_skip_auc=qs, kl_divergence=float(kv["kl_divergence"]),
            bin_count=int(kv["bin_count"]), bin_upper=float(kv["bin_upper"]),
            bin_epsilon=float(kv["bin_epsilon"]), n_examples=int(kv["n_examples"]),
        )

    def write(self, text_path, csv_path=None):
        with open(text_path, "w") as fh:
            fh.write(self.to_text())
        if csv_path is not None:
            d = self.as_dict()
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(list(d))
                w.writerow([number_text(v) for v in d.values()])

    @classmethod
    def read_csv(cls, path) -> "MetricReport":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        return cls._from_flat(dict(zip(rows[0], rows[1])))

    def format(self) -> str:
        """Short human-readable summary in the precision tables usually use."""
        parts = [f"MAE {self.mae:.4g}", f"XAUC {self.xauc:.4f}", f"KL {self.kl_divergence:.4f}"]
        parts += [f"AUC@{t:g}s {a:.4f}" for t, a in sorted(self.quick_skip_auc.items())]
        return "  ".join(parts)


def write_bin_masses_csv(path, bins: BinSpec, actual, predicted):
    edges = bins.edges
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "actual", "predicted"])
        for i in range(bins.count):
            w.writerow([number_text(edges[i]), number_text(edges[i + 1]), number_text(actual[i]), number_text(predicted[i])])
        w.writerow([number_text(edges[-1]), "inf", number_text(actual[-1]), number_text(predicted[-1])])
