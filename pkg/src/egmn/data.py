"""Interaction logs: CSV I/O, preprocessing, splitting and a synthetic world.

The synthetic world draws watch times from known per-(user, video) EGM
parameters, so a trained model can be scored against the true conditional
distribution rather than only against samples from it.
"""

from __future__ import annotations

import configparser
import csv
import gzip
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .distribution import EgmParams, sample
from .network import EncodedFeatures, FeatureSchema

log = logging.getLogger(__name__)

__all__ = [
    "DataError",
    "SchemaError",
    "TransformError",
    "FeatureRecord",
    "ColumnMap",
    "Manifest",
    "load_csv",
    "write_csv",
    "PreprocessConfig",
    "Transform",
    "Dataset",
    "preprocess",
    "split",
    "split_indices",
    "SyntheticWorldConfig",
    "Oracle",
    "generate_synthetic",
    "oracle_params",
    "OOV_INDEX",
]

OOV_INDEX = 0


class DataError(ValueError):
    pass


class SchemaError(DataError):
    pass


class TransformError(DataError):
    pass


@dataclass
class FeatureRecord:
    user_id: str
    video_id: str
    duration: float
    watch_time: float
    timestamp: int | None = None
    context: dict = field(default_factory=dict)  # extra categorical fields
    dense: dict = field(default_factory=dict)  # extra dense fields

    def categorical_value(self, name: str) -> str:
        if name == "user_id":
            return self.user_id
        if name == "video_id":
            return self.video_id
        return self.context[name]

    def dense_value(self, name: str) -> float:
        if name == "duration":
            return self.duration
        return self.dense[name]


@dataclass(frozen=True)
class ColumnMap:
    """Maps canonical field names to CSV header names."""

    user_id: str = "user_id"
    video_id: str = "video_id"
    duration: str = "duration"
    watch_time: str = "watch_time"
    timestamp: str | None = "timestamp"
    context: tuple = ()  # canonical names; CSV header equals the name unless renamed
    dense: tuple = ()
    renames: tuple = ()  # ((canonical, header), ...) for context/dense fields

    def header_for(self, name: str) -> str:
        return dict(self.renames).get(name, name)


@dataclass
class Manifest:
    """Dataset + run configuration read from an INI-style key/value file.

    Sections: ``[columns]`` (canonical = header; ``context`` and ``dense`` take
    comma-separated lists), ``[preprocess]`` (clip_percentile), ``[split]``
    (mode, train_fraction, seed) and ``[train]`` (any TrainConfig field).
    """

    columns: ColumnMap = field(default_factory=ColumnMap)
    clip_percentile: float = 99.9
    split_mode: str = "random"
    train_fraction: float = 0.8
    split_seed: int = 0
    train: dict = field(default_factory=dict)

    @classmethod
    def read(cls, path) -> "Manifest":
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise DataError(f"cannot read manifest {path}")
        m = cls()
        if cp.has_section("columns"):
            sec = dict(cp["columns"])
            ctx = tuple(s.strip() for s in sec.pop("context", "").split(",") if s.strip())
            dense = tuple(s.strip() for s in sec.pop("dense", "").split(",") if s.strip())
            known = {f.name for f in fields(ColumnMap)} - {"context", "dense", "renames"}
            base = {k: v for k, v in sec.items() if k in known}
            if base.get("timestamp", "x").lower() in ("", "none"):
                base["timestamp"] = None
            renames = tuple((k, v) for k, v in sec.items() if k not in known)
            m.columns = ColumnMap(**base, context=ctx, dense=dense, renames=renames)
        if cp.has_section("preprocess"):
            m.clip_percentile = cp["preprocess"].getfloat("clip_percentile", m.clip_percentile)
        if cp.has_section("split"):
            s = cp["split"]
            m.split_mode = s.get("mode", m.split_mode)
            m.train_fraction = s.getfloat("train_fraction", m.train_fraction)
            m.split_seed = s.getint("seed", m.split_seed)
        if cp.has_section("train"):
            m.train = dict(cp["train"])
        return m

    def write(self, path):
        cp = configparser.ConfigParser()
        c = self.columns
        cols = {
            "user_id": c.user_id, "video_id": c.video_id, "duration": c.duration,
            "watch_time": c.watch_time, "timestamp": c.timestamp or "none",
            "context": ",".join(c.context), "dense": ",".join(c.dense),
        }
        cols.update(dict(c.renames))
        cp["columns"] = cols
        cp["preprocess"] = {"clip_percentile": repr(self.clip_percentile)}
        cp["split"] = {"mode": self.split_mode, "train_fraction": repr(self.train_fraction),
                       "seed": str(self.split_seed)}
        if self.train:
            cp["train"] = {k: str(v) for k, v in self.train.items()}
        with open(path, "w") as fh:
            cp.write(fh)


def _open_text(path, mode="r"):
    path = Path(path)
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, mode + "b"), encoding="utf-8", newline="")
    return open(path, mode, encoding="utf-8", newline="")


def load_csv(path, columns: ColumnMap = ColumnMap(), max_errors: int = 1000):
    """Read interaction rows; returns ``(records, rejected)``.

    ``rejected`` lists ``(line_number, message)`` for malformed rows. More than
    ``max_errors`` of them raises ``DataError``; a missing column raises
    ``SchemaError``.
    """
    records, rejected = [], []
    with _open_text(path) as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        required = [columns.user_id, columns.video_id, columns.duration, columns.watch_time]
        required += [columns.header_for(n) for n in columns.context + columns.dense]
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        has_ts = columns.timestamp is not None and columns.timestamp in header
        for row in reader:
            line = reader.line_num
            try:
                duration = float(row[columns.duration])
                watch = float(row[columns.watch_time])
                if not (math.isfinite(duration) and math.isfinite(watch)):
                    raise ValueError("non-finite number")
                if duration <= 0:
                    raise ValueError(f"duration must be positive, got {duration}")
                ts = int(row[columns.timestamp]) if has_ts and row[columns.timestamp] != "" else None
                dense = {}
                for n in columns.dense:
                    v = float(row[columns.header_for(n)])
                    if not math.isfinite(v):
                        raise ValueError(f"non-finite {n}")
                    dense[n] = v
            except (TypeError, ValueError) as exc:
                rejected.append((line, str(exc)))
                if len(rejected) > max_errors:
                    raise DataError(f"{path}: more than {max_errors} malformed rows") from exc
                continue
            ctx = {n: row[columns.header_for(n)] for n in columns.context}
            records.append(FeatureRecord(row[columns.user_id], row[columns.video_id], duration, watch, ts, ctx, dense))
    for line, msg in rejected[:10]:
        log.warning("%s line %d rejected: %s", path, line, msg)
    return records, rejected


def write_csv(records, path, columns: ColumnMap = ColumnMap()):
    records = list(records)
    ctx = list(records[0].context) if records else []
    dense = list(records[0].dense) if records else []
    header = [columns.user_id, columns.video_id, columns.duration, columns.watch_time]
    if columns.timestamp is not None:
        header.append(columns.timestamp)
    header += [columns.header_for(n) for n in ctx + dense]
    with _open_text(path, "w") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in records:
            row = [r.user_id, r.video_id, repr(float(r.duration)), repr(float(r.watch_time))]
            if columns.timestamp is not None:
                row.append("" if r.timestamp is None else str(r.timestamp))
            row += [r.context[n] for n in ctx] + [repr(float(r.dense[n])) for n in dense]
            w.writerow(row)


@dataclass(frozen=True)
class PreprocessConfig:
    categorical: tuple = ("user_id", "video_id")
    dense: tuple = ("duration",)
    clip_percentile: float = 99.9
    embedding_dim: int = 16


@dataclass
class Dataset:
    """Encoded, preprocessed interactions. Always the output of a ``Transform``."""

    features: EncodedFeatures
    labels: np.ndarray
    timestamps: np.ndarray | None
    user_ids: np.ndarray
    video_ids: np.ndarray
    schema: FeatureSchema | None = None
    transformed: bool = True

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.features.rows(idx), self.labels[idx],
            None if self.timestamps is None else self.timestamps[idx],
            self.user_ids[idx], self.video_ids[idx], self.schema, self.transformed,
        )


@dataclass
class Transform:
    """Frozen preprocessing state fitted on the training portion only."""

    config: PreprocessConfig
    vocabularies: dict  # field -> sorted list of known values (index = position + 1)
    dense_mean: list
    dense_std: list
    clip_upper: float

    @property
    def schema(self) -> FeatureSchema:
        return FeatureSchema(
            tuple((n, len(self.vocabularies[n]) + 1) for n in self.config.categorical),
            self.config.dense, self.config.embedding_dim,
        )

    @classmethod
    def fit(cls, records, config: PreprocessConfig = PreprocessConfig()) -> "Transform":
        records = list(records)
        if not records:
            raise DataError("cannot fit a transform on zero records")
        vocabs = {n: sorted({r.categorical_value(n) for r in records}) for n in config.categorical}
        means, stds = [], []
        for n in config.dense:
            v = np.array([r.dense_value(n) for r in records], dtype=np.float64)
            mu, sd = float(v.mean()), float(v.std())
            if sd == 0.0:
                log.warning("dense feature %r has zero variance; it will normalise to 0", n)
            means.append(mu)
            stds.append(sd)
        labels = np.array([r.watch_time for r in records], dtype=np.float64)
        upper = float(np.percentile(labels, config.clip_percentile))
        return cls(config, vocabs, means, stds, upper)

    def apply(self, records) -> Dataset:
        if isinstance(records, Dataset):
            raise TransformError("dataset is already transformed; the transform applies once")
        records = list(records)
        lookups = {n: {v: i + 1 for i, v in enumerate(vals)} for n, vals in self.vocabularies.items()}
        cfg = self.config
        cat = np.array(
            [[lookups[n].get(r.categorical_value(n), OOV_INDEX) for n in cfg.categorical] for r in records],
            dtype=np.int64,
        ).reshape(len(records), len(cfg.categorical))
        raw = np.array([[r.dense_value(n) for n in cfg.dense] for r in records], dtype=np.float64)
        raw = raw.reshape(len(records), len(cfg.dense))
        mean = np.asarray(self.dense_mean, dtype=np.float64)
        std = np.asarray(self.dense_std, dtype=np.float64)
        dense = np.where(std > 0, (raw - mean) / np.where(std > 0, std, 1.0), 0.0)
        labels = np.clip(np.array([r.watch_time for r in records], dtype=np.float64), 0.0, self.clip_upper)
        ts = [r.timestamp for r in records]
        timestamps = None if any(t is None for t in ts) or not ts else np.array(ts, dtype=np.int64)
        return Dataset(
            EncodedFeatures(cat, dense), labels, timestamps,
            np.array([r.user_id for r in records], dtype=object),
            np.array([r.video_id for r in records], dtype=object),
            self.schema,
        )

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "vocabularies": self.vocabularies,
            "dense_mean": self.dense_mean,
            "dense_std": self.dense_std,
            "clip_upper": self.clip_upper,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Transform":
        c = d["config"]
        cfg = PreprocessConfig(tuple(c["categorical"]), tuple(c["dense"]), c["clip_percentile"], c["embedding_dim"])
        return cls(cfg, d["vocabularies"], d["dense_mean"], d["dense_std"], d["clip_upper"])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "Transform":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def split_indices(n: int, mode: str = "random", train_fraction: float = 0.8, seed: int = 0, timestamps=None):
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    n_train = int(round(n * train_fraction))
    if mode == "random":
        order = np.random.default_rng(seed).permutation(n)
    elif mode == "temporal":
        if timestamps is None:
            raise DataError("temporal split needs timestamps")
        order = np.argsort(np.asarray(timestamps), kind="stable")
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def split(data, mode: str = "random", train_fraction: float = 0.8, seed: int = 0):
    """Split records (a list) or a ``Dataset`` into disjoint train / eval parts."""
    if isinstance(data, Dataset):
        tr, ev = split_indices(len(data), mode, train_fraction, seed, data.timestamps)
        return data.subset(tr), data.subset(ev)
    records = list(data)
    ts = None
    if mode == "temporal":
        ts = [r.timestamp for r in records]
        if any(t is None for t in ts):
            raise DataError("temporal split needs a timestamp on every record")
    tr, ev = split_indices(len(records), mode, train_fraction, seed, ts)
    return [records[i] for i in tr], [records[i] for i in ev]


def preprocess(records, config: PreprocessConfig = PreprocessConfig(), mode: str = "random",
               train_fraction: float = 0.8, seed: int = 0):
    """Split records, fit the transform on the train part and encode both parts.

    Returns ``(train, eval, transform)``.
    """
    records = list(records)
    if not records:
        raise DataError("no records to preprocess")
    train_recs, eval_recs = split(records, mode, train_fraction, seed)
    transform = Transform.fit(train_recs, config)
    return transform.apply(train_recs), transform.apply(eval_recs), transform


# ---------------------------------------------------------------------------
# synthetic world

# peak locations as multiples of the video duration, by number of modes
_MODE_LAYOUTS = {
    1: (1.0,),  # completion
    2: (0.35, 1.0),  # early drop-off + completion
    3: (0.35, 1.0, 2.0),  # drop-off + completion + replay
}


@dataclass(frozen=True)
class SyntheticWorldConfig:
    n_users: int = 50
    n_videos: int = 50
    pickiness_range: tuple = (0.1, 0.9)  # exponential weight per user
    skip_mean_range: tuple = (1.0, 3.0)  # mean quick-skip time; pickier users skip faster
    duration_range: tuple = (10.0, 120.0)  # log-uniform
    mode_probs: tuple = (1 / 3, 1 / 3, 1 / 3)  # P(1, 2, 3 Gaussian peaks)
    peak_sd_frac: float = 0.15  # peak standard deviation relative to its location
    weight_concentration: float = 3.0  # Dirichlet concentration of peak weights
    n_days: int = 14
    seed: int = 0

    def __post_init__(self):
        if self.n_users < 1 or self.n_videos < 1:
            raise ValueError("user and video counts must be >= 1")
        lo, hi = self.pickiness_range
        if not 0 <= lo <= hi < 1:
            raise ValueError("pickiness_range must satisfy 0 <= lo <= hi < 1")
        if min(self.skip_mean_range) <= 0 or min(self.duration_range) <= 0:
            raise ValueError("skip means and durations must be positive")
        if len(self.mode_probs) != 3 or abs(sum(self.mode_probs) - 1) > 1e-9:
            raise ValueError("mode_probs needs three probabilities summing to 1")
        if not 0 < self.peak_sd_frac < 0.3:
            raise ValueError("peak_sd_frac must lie in (0, 0.3) to keep negative mass negligible")


@dataclass
class Oracle:
    """True per-(user, video) EGM parameters of a synthetic world."""

    config: SyntheticWorldConfig
    pickiness: np.ndarray  # (U,) exponential weight
    rate: np.ndarray  # (U,)
    duration: np.ndarray  # (V,)
    n_modes: np.ndarray  # (V,)
    peak_means: np.ndarray  # (V, 3); unused slots hold the completion peak
    peak_vars: np.ndarray  # (V, 3)
    peak_weights: np.ndarray  # (V, 3); sums to 1, zero on unused slots

    @classmethod
    def build(cls, config: SyntheticWorldConfig) -> "Oracle":
        rng = np.random.default_rng([config.seed, 1])
        lo, hi = config.pickiness_range
        pick = rng.uniform(lo, hi, config.n_users)
        s_lo, s_hi = config.skip_mean_range
        frac = (pick - lo) / (hi - lo) if hi > lo else np.full_like(pick, 0.5)
        rate = 1.0 / (s_hi - (s_hi - s_lo) * frac)
        d_lo, d_hi = config.duration_range
        duration = np.exp(rng.uniform(np.log(d_lo), np.log(d_hi), config.n_videos))
        n_modes = rng.choice([1, 2, 3], size=config.n_videos, p=list(config.mode_probs))
        means = np.zeros((config.n_videos, 3))
        weights = np.zeros((config.n_videos, 3))
        for v in range(config.n_videos):
            m = n_modes[v]
            layout = np.array(_MODE_LAYOUTS[m])
            means[v, :m] = layout * duration[v]
            means[v, m:] = duration[v]
            weights[v, :m] = rng.dirichlet(np.full(m, config.weight_concentration))
        var = (config.peak_sd_frac * means) ** 2
        return cls(config, pick, rate, duration, n_modes, means, var, weights)

    def _index(self, user, video):
        u = int(user[1:]) if isinstance(user, str) else int(user)
        v = int(video[1:]) if isinstance(video, str) else int(video)
        if not (0 <= u < self.config.n_users and 0 <= v < self.config.n_videos):
            raise KeyError(f"unknown pair ({user}, {video})")
        return u, v

    def params(self, user, video) -> EgmParams:
        """Exact parameters of one pair, with as many Gaussians as the video has peaks."""
        u, v = self._index(user, video)
        m = int(self.n_modes[v])
        w = np.concatenate([[self.pickiness[u]], (1 - self.pickiness[u]) * self.peak_weights[v, :m]])
        w = w / w.sum()
        return EgmParams(self.rate[u], self.peak_means[v, :m], self.peak_vars[v, :m], w)

    def batch_params(self, users, videos) -> EgmParams:
        """Padded (K=3) parameters for arrays of user / video indices or ids."""
        u = np.array([self._index(a, b)[0] for a, b in zip(users, videos)], dtype=np.int64)
        v = np.array([self._index(a, b)[1] for a, b in zip(users, videos)], dtype=np.int64)
        p = self.pickiness[u][:, None]
        w = np.concatenate([p, (1 - p) * self.peak_weights[v]], axis=1)
        w = w / w.sum(axis=1, keepdims=True)
        return EgmParams(self.rate[u], self.peak_means[v], self.peak_vars[v], w)

    def to_dict(self) -> dict:
        out = {"config": asdict(self.config)}
        for name in ("pickiness", "rate", "duration", "n_modes", "peak_means", "peak_vars", "peak_weights"):
            out[name] = getattr(self, name).tolist()
        # per-pair table for consumers that do not rebuild params from attributes
        pairs = []
        for u in range(self.config.n_users):
            for v in range(self.config.n_videos):
                p = self.params(u, v)
                pairs.append({"user_id": f"u{u}", "video_id": f"v{v}", "rate": float(p.rate),
                              "means": p.means.tolist(), "variances": p.variances.tolist(),
                              "weights": p.weights.tolist()})
        out["pairs"] = pairs
        return out

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Oracle":
        with open(path) as fh:
            d = json.load(fh)
        c = d["config"]
        cfg = SyntheticWorldConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in c.items()})
        arr = {k: np.asarray(d[k]) for k in ("pickiness", "rate", "duration", "n_modes", "peak_means",
                                             "peak_vars", "peak_weights")}
        arr["n_modes"] = arr["n_modes"].astype(np.int64)
        return cls(cfg, **arr)


def oracle_params(oracle: Oracle, user_id, video_id) -> EgmParams:
    return oracle.params(user_id, video_id)


def generate_synthetic(config: SyntheticWorldConfig, n_samples: int):
    """Sample ``n_samples`` interactions; returns ``(records, oracle)``.

    Negative Gaussian draws are redrawn rather than clamped.
    """
    oracle = Oracle.build(config)
    rng = np.random.default_rng([config.seed, 2])
    users = rng.integers(0, config.n_users, n_samples)
    videos = rng.integers(0, config.n_videos, n_samples)
    params = oracle.batch_params(users, videos)
    t = sample(params, int(rng.integers(2**31)), 1)[:, 0]
    for _ in range(100):
        neg = t < 0
        if not neg.any():
            break
        t[neg] = sample(params[neg], int(rng.integers(2**31)), 1)[:, 0]
    t = np.maximum(t, 0.0)
    ts = np.sort(rng.integers(0, config.n_days * 86400, n_samples))
    devices = rng.choice(["android", "ios", "web"], n_samples, p=[0.55, 0.4, 0.05])
    records = [
        FeatureRecord(
            f"u{users[i]}", f"v{videos[i]}", float(oracle.duration[videos[i]]), float(t[i]), int(ts[i]),
            {"hour": str((ts[i] // 3600) % 24), "weekday": str((ts[i] // 86400) % 7), "device": str(devices[i])},
        )
        for i in range(n_samples)
    ]
    return records, oracle
