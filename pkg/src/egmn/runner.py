"""Training loop, evaluation and prediction for the mixture network."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import Dataset
from .distribution import EgmParams, cdf, quantile, rescale
from .distribution import mean as egm_mean
from .metrics import BinSpec, MetricReport, number_text, kl_divergence, mae, roc_auc, xauc
from .network import NetworkWeights, NumericError, forward, init_weights, backward
from .objective import AdagradState, LossWeights, adagrad_step, combined_loss

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "MetricConfig",
    "Predictions",
    "train",
    "evaluate",
    "predict",
    "forward_all",
    "concat_params",
    "report_for",
    "resolve_time_scale",
]

QUICK_SKIP_THRESHOLDS = (2.0, 4.0, 6.0)


@dataclass
class TrainConfig:
    n_gaussians: int = 10
    alpha: float = 0.1
    beta: float = 1.0
    lr: float = 0.1
    batch_size: int = 2048
    epochs: int = 10
    seed: int = 0  # weight init
    shuffle_seed: int = 1
    xauc_seed: int = 0
    xauc_pairs: int = 200_000  # per-epoch history; final reports use MetricConfig
    hidden: tuple = (128, 64)
    disable_exponential: bool = False
    disable_gaussians: bool = False
    drop_mle: bool = False
    drop_entropy: bool = False
    drop_reg: bool = False
    deterministic: bool = True
    keep_best: bool = False  # return the best-eval-MAE weights instead of the last
    time_scale: float = 0.0  # seconds per model time unit; 0 = mean training label

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.disable_exponential and self.disable_gaussians:
            raise ValueError("cannot disable both the exponential and the Gaussian components")
        if self.disable_gaussians:
            self.n_gaussians = 0
        if (self.n_gaussians < 0 or self.batch_size < 1 or self.lr <= 0 or self.epochs < 0
                or not self.time_scale >= 0):
            raise ValueError(f"invalid training config {self}")
        if self.disable_exponential and self.n_gaussians == 0:
            raise ValueError("disable_exponential needs at least one Gaussian")
        if self.drop_mle and self.drop_entropy and self.drop_reg:
            raise ValueError("all loss terms dropped")

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(
            alpha=0.0 if self.drop_entropy else self.alpha,
            beta=0.0 if self.drop_reg else self.beta,
            mle=0.0 if self.drop_mle else 1.0,
        )

    @classmethod
    def from_strings(cls, kv: dict) -> "TrainConfig":
        """Build from string values (config files)."""
        out = {}
        types = {f.name: f.type for f in fields(cls)}
        for k, v in kv.items():
            if k not in types:
                raise KeyError(f"unknown training option {k!r}")
            default = getattr(cls(), k)
            if isinstance(default, bool):
                out[k] = str(v).strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(default, tuple):
                out[k] = tuple(int(x) for x in str(v).replace(",", " ").split())
            else:
                out[k] = type(default)(v)
        return cls(**out)


HISTORY_COLUMNS = (
    "epoch", "loss", "mle", "entropy", "reg", "eval_loss", "eval_mae", "eval_xauc", "eval_kl",
    "clamped", "underflow",
)


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)  # one dict per epoch, keys HISTORY_COLUMNS
    wall_time: list = field(default_factory=list)  # seconds per epoch; not part of the CSV

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HISTORY_COLUMNS)
            for r in self.rows:
                w.writerow([number_text(r[c]) for c in HISTORY_COLUMNS])

    @classmethod
    def read_csv(cls, path) -> "TrainHistory":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        out = []
        for r in rows:
            out.append({c: (int(r[c]) if c in ("epoch", "clamped", "underflow") else float(r[c]))
                        for c in HISTORY_COLUMNS})
        return cls(out)


def concat_params(parts) -> EgmParams:
    parts = list(parts)
    return EgmParams(
        np.concatenate([p.rate for p in parts]), np.concatenate([p.means for p in parts]),
        np.concatenate([p.variances for p in parts]), np.concatenate([p.weights for p in parts]),
    )


def forward_all(weights: NetworkWeights, features, chunk: int = 8192, seconds: bool = True) -> EgmParams:
    """Forward pass over a whole feature set in chunks; parameters only.

    With ``seconds`` the output is converted from model time units to seconds.
    """
    n = len(features)
    if n == 0:
        raise ValueError("no rows to run")
    params = concat_params(forward(weights, features.rows(slice(s, s + chunk)))[0] for s in range(0, n, chunk))
    if seconds and weights.time_scale != 1.0:
        params = rescale(params, weights.time_scale)
    return params


def resolve_time_scale(config: TrainConfig, labels) -> float:
    if config.time_scale > 0:
        return float(config.time_scale)
    m = float(np.mean(labels))
    return m if m > 0 else 1.0


def _eval_epoch(weights, eval_set: Dataset, config: TrainConfig) -> dict:
    params = forward_all(weights, eval_set.features, seconds=False)
    # loss in model units, comparable with the training loss
    loss, _, _ = combined_loss(params, eval_set.labels / weights.time_scale, config.loss_weights)
    params = rescale(params, weights.time_scale)
    pred = egm_mean(params)
    return {
        "eval_loss": float(loss),
        "eval_mae": mae(pred, eval_set.labels),
        "eval_xauc": xauc(pred, eval_set.labels, config.xauc_pairs, config.xauc_seed),
        "eval_kl": kl_divergence(eval_set.labels, params),
    }


def train(config: TrainConfig, train_set: Dataset, eval_set: Dataset | None = None, callback=None):
    """Minibatch Adagrad on the combined loss; returns ``(weights, history)``.

    The network works in units of ``time_scale`` seconds; reported metrics and
    :func:`forward_all` output are in seconds.

    ``callback(epoch, weights)`` runs after every epoch (epochs count from 1).
    """
    if train_set.schema is None:
        raise ValueError("training data carries no feature schema; build it through a Transform")
    weights = init_weights(
        train_set.schema, config.hidden, config.n_gaussians, config.seed,
        use_exponential=not config.disable_exponential,
    )
    weights.time_scale = resolve_time_scale(config, train_set.labels)
    labels = train_set.labels / weights.time_scale
    state = AdagradState.for_weights(weights.tensors)
    lw = config.loss_weights
    rng = np.random.default_rng(config.shuffle_seed)
    history = TrainHistory()
    best = (np.inf, None)
    n = len(train_set)
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(n)
        sums = {"loss": 0.0, "mle": 0.0, "entropy": 0.0, "reg": 0.0}
        clamped = underflow = 0
        for b, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            try:
                params, trace = forward(weights, train_set.features.rows(idx))
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} batch {b}: {exc}") from exc
            loss, g, terms = combined_loss(params, labels[idx], lw)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch} batch {b}")
            grads = backward(weights, trace, g)
            adagrad_step(weights, grads, state, config.lr)
            for k in sums:
                sums[k] += terms[k] * len(idx)
            clamped += trace.n_clamped
            underflow += terms["underflow"]
        row = {"epoch": epoch, **{k: v / n for k, v in sums.items()}}
        if eval_set is not None and len(eval_set) >= 2:
            row.update(_eval_epoch(weights, eval_set, config))
        else:
            row.update({"eval_loss": np.nan, "eval_mae": np.nan, "eval_xauc": np.nan, "eval_kl": np.nan})
        row.update({"clamped": clamped, "underflow": underflow})
        history.rows.append(row)
        history.wall_time.append(0.0 if config.deterministic else time.perf_counter() - start)
        log.info("epoch %d loss %.4f eval_mae %.4f eval_xauc %.4f eval_kl %.4f", epoch, row["loss"],
                 row["eval_mae"], row["eval_xauc"], row["eval_kl"])
        if config.keep_best and row["eval_mae"] < best[0]:
            best = (row["eval_mae"], weights.copy())
        if callback is not None:
            callback(epoch, weights)
    if config.keep_best and best[1] is not None:
        weights = best[1]
    return weights, history


@dataclass(frozen=True)
class MetricConfig:
    thresholds: tuple = QUICK_SKIP_THRESHOLDS
    n_pairs: int = 1_000_000
    xauc_seed: int = 0
    bin_count: int = 100
    bin_percentile: float = 99.5
    skip_score: str = "mean"  # "mean": -E[T]; "cdf": P(T <= tau)


def _skip_scores(params: EgmParams, expected, tau: float, mode: str):
    if mode == "mean":
        return -expected
    if mode == "cdf":
        return cdf(params, tau)
    raise ValueError(f"unknown quick-skip score mode {mode!r}")


def evaluate(weights: NetworkWeights, eval_set: Dataset, metric_config: MetricConfig = MetricConfig()) -> MetricReport:
    if eval_set.schema is not None and eval_set.schema != weights.schema:
        raise ValueError("evaluation data was encoded with a different feature schema")
    params = forward_all(weights, eval_set.features)
    return report_for(params, eval_set.labels, metric_config)


def report_for(params: EgmParams, labels, metric_config: MetricConfig = MetricConfig()) -> MetricReport:
    """Metrics for any per-example parameters (model output or an oracle)."""
    labels = np.asarray(labels, dtype=np.float64)
    pred = egm_mean(params)
    bins = BinSpec.from_labels(labels, metric_config.bin_count, metric_config.bin_percentile)
    aucs = {}
    for tau in metric_config.thresholds:
        positive = labels <= tau
        if positive.all() or not positive.any():
            log.warning("quick-skip threshold %gs has a single class; AUC skipped", tau)
            continue
        aucs[float(tau)] = roc_auc(_skip_scores(params, pred, tau, metric_config.skip_score), positive)
    return MetricReport(
        mae=mae(pred, labels),
        xauc=xauc(pred, labels, metric_config.n_pairs, metric_config.xauc_seed),
        xauc_pairs=metric_config.n_pairs,
        xauc_seed=metric_config.xauc_seed,
        quick_skip_auc=aucs,
        kl_divergence=kl_divergence(labels, params, bins),
        bin_count=bins.count,
        bin_upper=bins.upper,
        bin_epsilon=bins.epsilon,
        n_examples=int(labels.size),
    )


@dataclass
class Predictions:
    expected: np.ndarray  # (n,)
    params: EgmParams
    thresholds: tuple
    skip_prob: np.ndarray  # (n, len(thresholds)); P(T <= tau)
    levels: tuple
    quantiles: np.ndarray  # (n, len(levels))

    def write_csv(self, path, ids=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["row"] if ids is None else ["user_id", "video_id"]
            head += ["expected"] + [f"p_le_{t:g}" for t in self.thresholds] + [f"q{q:g}" for q in self.levels]
            head += ["rate", "means", "variances", "weights"]
            w.writerow(head)
            for i in range(len(self.expected)):
                lead = [i] if ids is None else list(ids[i])
                c = self.params.component(i)
                w.writerow(
                    lead + [number_text(self.expected[i])]
                    + [number_text(v) for v in self.skip_prob[i]]
                    + [number_text(v) for v in self.quantiles[i]]
                    + [number_text(c["rate"])] + [" ".join(number_text(x) for x in c[k]) for k in ("means", "variances", "weights")]
                )


def predict(weights: NetworkWeights, dataset: Dataset, thresholds=QUICK_SKIP_THRESHOLDS, levels=(0.5,)) -> Predictions:
    """Expected watch time plus quick-skip probabilities and quantiles from one forward pass."""
    params = forward_all(weights, dataset.features)
    expected = egm_mean(params)
    thresholds = tuple(float(t) for t in thresholds)
    levels = tuple(float(q) for q in levels)
    skip = np.stack([cdf(params, t) for t in thresholds], axis=1) if thresholds else np.zeros((len(expected), 0))
    qs = np.stack([quantile(params, q) for q in levels], axis=1) if levels else np.zeros((len(expected), 0))
    return Predictions(expected, params, thresholds, skip, levels, qs)


def config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["hidden"] = list(config.hidden)
    return d
