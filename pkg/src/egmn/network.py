"""Feature encoder and EGM parameter heads with hand-written backprop.

Architecture: per-field embedding lookup, concatenated with dense features,
then a ReLU MLP backbone producing the shared hidden vector ``h``. Four
affine heads read ``h``:

* rate      ``lam = softplus(W_r h + b_r)``
* means     ``mu_k = 1 / lam + softplus(W_m h + b_m)_k``
* variances ``var_k = softplus(W_v h + b_v)_k``
* weights   ``w = softmax(W_w h + b_w)``

Everything operates on a batch of rows.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np

from .distribution import EgmParams

__all__ = [
    "FeatureSchema",
    "EncodedFeatures",
    "NetworkWeights",
    "ForwardTrace",
    "ShapeError",
    "NumericError",
    "stable_softplus",
    "stable_sigmoid",
    "stable_softmax",
    "init_weights",
    "forward",
    "backward",
    "save_checkpoint",
    "load_checkpoint",
]

RATE_MIN, RATE_MAX = 1e-4, 1e4
VAR_FLOOR = 1e-6
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


def stable_softplus(z):
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def stable_sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def stable_softmax(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - np.max(v, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass(frozen=True)
class FeatureSchema:
    """Input layout: categorical fields with vocabulary sizes, then dense fields."""

    categorical: tuple = ()  # ((name, vocab_size), ...)
    dense: tuple = ()  # (name, ...)
    embedding_dim: int = 16

    def __post_init__(self):
        object.__setattr__(self, "categorical", tuple((str(n), int(v)) for n, v in self.categorical))
        object.__setattr__(self, "dense", tuple(str(n) for n in self.dense))
        names = [n for n, _ in self.categorical] + list(self.dense)
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate field names in {names}")
        if any(v < 1 for _, v in self.categorical):
            raise ValueError("vocabulary sizes must be >= 1")
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")

    @property
    def input_dim(self) -> int:
        return len(self.categorical) * self.embedding_dim + len(self.dense)

    def to_dict(self) -> dict:
        return {
            "categorical": [list(c) for c in self.categorical],
            "dense": list(self.dense),
            "embedding_dim": self.embedding_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(tuple(tuple(c) for c in d["categorical"]), tuple(d["dense"]), d["embedding_dim"])


@dataclass(frozen=True)
class EncodedFeatures:
    """A batch of encoded rows: ``cat_ids`` (n, F) ints and ``dense`` (n, D) floats."""

    cat_ids: np.ndarray
    dense: np.ndarray

    def __post_init__(self):
        cat = np.asarray(self.cat_ids, dtype=np.int64)
        dense = np.asarray(self.dense, dtype=np.float64)
        if cat.ndim == 1:
            cat = cat[None, :]
        if dense.ndim == 1:
            dense = dense[None, :]
        if cat.shape[0] != dense.shape[0]:
            raise ShapeError("cat_ids and dense disagree on the number of rows")
        object.__setattr__(self, "cat_ids", cat)
        object.__setattr__(self, "dense", dense)

    def __len__(self):
        return self.cat_ids.shape[0]

    def rows(self, idx) -> "EncodedFeatures":
        return EncodedFeatures(self.cat_ids[idx], self.dense[idx])


@dataclass
class NetworkWeights:
    schema: FeatureSchema
    hidden: tuple
    n_gaussians: int
    seed: int
    tensors: dict = field(default_factory=dict)
    use_exponential: bool = True
    time_scale: float = 1.0  # seconds per model time unit

    @property
    def n_mixture_logits(self) -> int:
        return self.n_gaussians + 1 if self.use_exponential else self.n_gaussians

    def copy(self) -> "NetworkWeights":
        return NetworkWeights(
            self.schema, self.hidden, self.n_gaussians, self.seed,
            {k: v.copy() for k, v in self.tensors.items()}, self.use_exponential, self.time_scale,
        )

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def metadata(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "schema": self.schema.to_dict(),
            "hidden": list(self.hidden),
            "n_gaussians": self.n_gaussians,
            "seed": self.seed,
            "use_exponential": self.use_exponential,
            "time_scale": self.time_scale,
            "tensor_order": list(self.tensors),
        }


@dataclass
class ForwardTrace:
    cat_ids: np.ndarray
    x: np.ndarray
    pre: list  # backbone pre-activations
    post: list  # backbone activations; post[-1] is h
    z_rate: np.ndarray
    z_mean: np.ndarray
    z_var: np.ndarray
    z_weight: np.ndarray
    params: EgmParams
    rate_clamped: np.ndarray
    var_floored: np.ndarray

    @property
    def h(self) -> np.ndarray:
        return self.post[-1] if self.post else self.x

    @property
    def n_clamped(self) -> int:
        return int(self.rate_clamped.sum() + self.var_floored.sum())


def _glorot(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_weights(schema: FeatureSchema, hidden=(128, 64), n_gaussians: int = 10, seed: int = 0,
                 use_exponential: bool = True) -> NetworkWeights:
    """Embeddings ~ U(-0.01, 0.01), affine weights Glorot-uniform, biases zero."""
    if n_gaussians < 0:
        raise ValueError("n_gaussians must be >= 0")
    if not use_exponential and n_gaussians == 0:
        raise ValueError("a mixture without the exponential needs at least one Gaussian")
    rng = np.random.default_rng(seed)
    t = {}
    for name, vocab in schema.categorical:
        t[f"emb/{name}"] = rng.uniform(-0.01, 0.01, size=(vocab, schema.embedding_dim))
    width = schema.input_dim
    for i, out in enumerate(hidden):
        t[f"layer{i}/W"] = _glorot(rng, out, width)
        t[f"layer{i}/b"] = np.zeros(out)
        width = out
    n_logits = n_gaussians + 1 if use_exponential else n_gaussians
    for head, rows in (("rate", 1), ("mean", n_gaussians), ("var", n_gaussians), ("weight", n_logits)):
        t[f"head_{head}/W"] = _glorot(rng, rows, width) if rows else np.zeros((0, width))
        t[f"head_{head}/b"] = np.zeros(rows)
    return NetworkWeights(schema, tuple(int(h) for h in hidden), n_gaussians, seed, t, use_exponential)


def _check_finite(arr, where):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite activation in {where}")


def forward(weights: NetworkWeights, x: EncodedFeatures) -> tuple:
    """Map a batch of encoded rows to EGM parameters; also return the trace for backprop."""
    schema, t = weights.schema, weights.tensors
    n = len(x)
    if x.cat_ids.shape[1] != len(schema.categorical) or x.dense.shape[1] != len(schema.dense):
        raise ShapeError(
            f"expected {len(schema.categorical)} categorical and {len(schema.dense)} dense columns, "
            f"got {x.cat_ids.shape[1]} and {x.dense.shape[1]}"
        )
    pieces = []
    for j, (name, vocab) in enumerate(schema.categorical):
        ids = x.cat_ids[:, j]
        if n and (ids.min() < 0 or ids.max() >= vocab):
            raise ShapeError(f"ids of field {name!r} outside vocabulary of size {vocab}")
        pieces.append(t[f"emb/{name}"][ids])
    pieces.append(x.dense)
    inp = np.concatenate(pieces, axis=1) if pieces else np.zeros((n, 0))
    _check_finite(inp, "input")

    pre, post = [], []
    a = inp
    for i in range(len(weights.hidden)):
        z = a @ t[f"layer{i}/W"].T + t[f"layer{i}/b"]
        a = np.maximum(z, 0.0)
        _check_finite(a, f"layer{i}")
        pre.append(z)
        post.append(a)
    h = a

    z_rate = (h @ t["head_rate/W"].T + t["head_rate/b"])[:, 0]
    z_mean = h @ t["head_mean/W"].T + t["head_mean/b"]
    z_var = h @ t["head_var/W"].T + t["head_var/b"]
    z_weight = h @ t["head_weight/W"].T + t["head_weight/b"]
    for name, z in (("head_rate", z_rate), ("head_mean", z_mean), ("head_var", z_var), ("head_weight", z_weight)):
        _check_finite(z, name)

    rate_raw = stable_softplus(z_rate)
    rate = np.clip(rate_raw, RATE_MIN, RATE_MAX)
    var_raw = stable_softplus(z_var)
    variances = np.maximum(var_raw, VAR_FLOOR)
    means = 1.0 / rate[:, None] + stable_softplus(z_mean)
    if weights.use_exponential:
        w = stable_softmax(z_weight)
    else:
        w = np.concatenate([np.zeros((n, 1)), stable_softmax(z_weight)], axis=1)
    params = EgmParams(rate, means, variances, w)
    trace = ForwardTrace(
        x.cat_ids, inp, pre, post, z_rate, z_mean, z_var, z_weight, params,
        rate_clamped=(rate_raw != rate), var_floored=(var_raw < VAR_FLOOR),
    )
    return params, trace


def backward(weights: NetworkWeights, trace: ForwardTrace, grad_params, couple_rate: bool = True) -> dict:
    """Reverse-mode gradients of a scalar loss, given its gradient w.r.t. the EGM parameters.

    ``grad_params`` needs ``rate`` (n,), ``means`` (n, K), ``variances`` (n, K)
    and ``weights`` (n, K+1). The mean head adds ``-1/lam**2 * dL/dmu_k`` to
    the rate gradient; ``couple_rate=False`` drops that term and exists only as
    a diagnostic.
    """
    t = weights.tensors
    n = trace.x.shape[0]
    K = weights.n_gaussians
    g_rate = np.asarray(grad_params.rate, dtype=np.float64)
    g_mean = np.asarray(grad_params.means, dtype=np.float64)
    g_var = np.asarray(grad_params.variances, dtype=np.float64)
    g_w = np.asarray(grad_params.weights, dtype=np.float64)
    if g_rate.shape != (n,) or g_mean.shape != (n, K) or g_var.shape != (n, K) or g_w.shape != (n, K + 1):
        raise ShapeError("parameter gradients do not match the forward trace")
    if trace.h.shape[1] != t["head_rate/W"].shape[1]:
        raise ShapeError("trace was not produced by these weights")

    rate = trace.params.rate
    dz_mean = g_mean * stable_sigmoid(trace.z_mean)
    dz_var = np.where(trace.var_floored, 0.0, g_var * stable_sigmoid(trace.z_var))
    d_rate = g_rate
    if couple_rate and K:
        d_rate = d_rate - g_mean.sum(axis=1) / rate**2
    dz_rate = np.where(trace.rate_clamped, 0.0, d_rate * stable_sigmoid(trace.z_rate))
    w = trace.params.weights
    if weights.use_exponential:
        s, gs = w, g_w
    else:
        s, gs = w[:, 1:], g_w[:, 1:]
    dz_weight = s * (gs - np.sum(s * gs, axis=1, keepdims=True))

    grads = {}
    h = trace.h
    dh = np.zeros_like(h)
    for head, dz in (("rate", dz_rate[:, None]), ("mean", dz_mean), ("var", dz_var), ("weight", dz_weight)):
        grads[f"head_{head}/W"] = dz.T @ h
        grads[f"head_{head}/b"] = dz.sum(axis=0)
        dh += dz @ t[f"head_{head}/W"]

    da = dh
    for i in reversed(range(len(weights.hidden))):
        dz = da * (trace.pre[i] > 0)
        a_in = trace.post[i - 1] if i > 0 else trace.x
        grads[f"layer{i}/W"] = dz.T @ a_in
        grads[f"layer{i}/b"] = dz.sum(axis=0)
        da = dz @ t[f"layer{i}/W"]

    dim = weights.schema.embedding_dim
    for j, (name, _) in enumerate(weights.schema.categorical):
        g = np.zeros_like(t[f"emb/{name}"])
        np.add.at(g, trace.cat_ids[:, j], da[:, j * dim:(j + 1) * dim])
        grads[f"emb/{name}"] = g
    return {k: grads[k] for k in t}


def save_checkpoint(weights: NetworkWeights, path):
    """Write weights plus metadata as a zip of ``.npy`` members.

    Member timestamps are fixed so identical weights give identical bytes.
    """
    meta = json.dumps(weights.metadata(), sort_keys=True).encode()
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr(zipfile.ZipInfo("metadata.json", date_time=(1980, 1, 1, 0, 0, 0)), meta)
        for i, (name, arr) in enumerate(weights.tensors.items()):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"t{i:03d}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_checkpoint(path) -> NetworkWeights:
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("metadata.json"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        tensors = {}
        for i, name in enumerate(meta["tensor_order"]):
            tensors[name] = np.lib.format.read_array(io.BytesIO(zf.read(f"t{i:03d}.npy")), allow_pickle=False)
    return NetworkWeights(
        FeatureSchema.from_dict(meta["schema"]), tuple(meta["hidden"]), meta["n_gaussians"],
        meta["seed"], tensors, meta["use_exponential"], float(meta.get("time_scale", 1.0)),
    )
