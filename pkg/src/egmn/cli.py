"""Command-line interface: ``egmn {synth,train,evaluate,predict,inspect}``.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    DataError,
    FeatureRecord,
    Manifest,
    Oracle,
    PreprocessConfig,
    SyntheticWorldConfig,
    Transform,
    generate_synthetic,
    load_csv,
    split,
    write_csv,
)
from .distribution import EgmParams, ParameterError, cdf, mean, pdf, quantile, write_curve_csv
from .metrics import BinSpec, binned_masses, write_bin_masses_csv
from .network import NumericError, load_checkpoint, save_checkpoint
from .runner import MetricConfig, TrainConfig, config_dict, forward_all, predict, report_for, train

log = logging.getLogger("egmn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

CHECKPOINT = "model.ckpt"
TRANSFORM = "transform.json"
RUN_FILE = "run.json"
HISTORY = "history.csv"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# shared pieces


def _setup(args) -> tuple:
    """Resolve manifest, config file and flags into (manifest, TrainConfig); flags win."""
    manifest = Manifest.read(args.manifest) if args.manifest else Manifest()
    train_kv = dict(manifest.train)
    split_kv = {"mode": manifest.split_mode, "train_fraction": manifest.train_fraction, "seed": manifest.split_seed}
    if getattr(args, "config", None):
        cp = configparser.ConfigParser()
        if not cp.read(args.config):
            raise UsageError(f"cannot read config file {args.config}")
        if cp.has_section("train"):
            train_kv.update(cp["train"])
        if cp.has_section("split"):
            split_kv.update(cp["split"])
    flag_map = {
        "k": "n_gaussians", "alpha": "alpha", "beta": "beta", "lr": "lr", "batch": "batch_size",
        "epochs": "epochs", "seed": "seed", "shuffle_seed": "shuffle_seed", "time_scale": "time_scale",
        "hidden": "hidden", "deterministic": "deterministic", "keep_best": "keep_best",
        "disable_exponential": "disable_exponential", "disable_gaussians": "disable_gaussians",
        "drop_mle": "drop_mle", "drop_entropy": "drop_entropy", "drop_reg": "drop_reg",
    }
    for flag, key in flag_map.items():
        v = getattr(args, flag, None)
        if v is None:
            continue
        if isinstance(v, list):
            v = " ".join(str(x) for x in v)
        train_kv[key] = v
    if getattr(args, "split", None):
        split_kv["mode"] = args.split
    if getattr(args, "train_frac", None) is not None:
        split_kv["train_fraction"] = args.train_frac
    if getattr(args, "split_seed", None) is not None:
        split_kv["seed"] = args.split_seed
    try:
        config = TrainConfig.from_strings(train_kv)
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"invalid training configuration: {exc}") from exc
    manifest.split_mode = str(split_kv["mode"])
    manifest.train_fraction = float(split_kv["train_fraction"])
    manifest.split_seed = int(split_kv["seed"])
    if manifest.split_mode not in ("random", "temporal"):
        raise UsageError(f"unknown split mode {manifest.split_mode!r}")
    if not 0 < manifest.train_fraction < 1:
        raise UsageError("--train-frac must lie in (0, 1)")
    return manifest, config


def _preprocess_config(manifest: Manifest) -> PreprocessConfig:
    c = manifest.columns
    return PreprocessConfig(
        categorical=("user_id", "video_id") + tuple(c.context),
        dense=("duration",) + tuple(c.dense),
        clip_percentile=manifest.clip_percentile,
    )


def _load_records(path, manifest: Manifest):
    records, rejected = load_csv(path, manifest.columns)
    if rejected:
        log.warning("%d malformed rows skipped", len(rejected))
    if not records:
        raise DataError(f"{path}: no usable rows")
    return records


def _load_run(run_dir: Path):
    for name in (CHECKPOINT, TRANSFORM, RUN_FILE):
        if not (run_dir / name).exists():
            raise FileNotFoundError(f"{run_dir / name} not found; is this a training output directory?")
    with open(run_dir / RUN_FILE) as fh:
        run = json.load(fh)
    return load_checkpoint(run_dir / CHECKPOINT), Transform.load(run_dir / TRANSFORM), run


def _run_manifest(run: dict) -> Manifest:
    m = Manifest.read(run["manifest"]) if run.get("manifest") else Manifest()
    m.split_mode = run["split"]["mode"]
    m.train_fraction = run["split"]["train_fraction"]
    m.split_seed = run["split"]["seed"]
    return m


def _metric_config(args) -> MetricConfig:
    return MetricConfig(
        thresholds=tuple(args.thresholds), n_pairs=args.pairs, xauc_seed=args.xauc_seed,
        bin_count=args.bins, skip_score=args.skip_score,
    )


def _write_report(params, labels, mc: MetricConfig, out: Path, stem: str = "report"):
    report = report_for(params, labels, mc)
    report.write(out / f"{stem}.txt", out / f"{stem}.csv")
    bins = BinSpec(report.bin_count, report.bin_upper, report.bin_epsilon)
    actual, predicted = binned_masses(labels, params, bins)
    write_bin_masses_csv(out / f"{stem}_bins.csv", bins, actual, predicted)
    return report


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    cfg = SyntheticWorldConfig(
        n_users=args.users, n_videos=args.videos, pickiness_range=tuple(args.pickiness),
        skip_mean_range=tuple(args.skip_mean), duration_range=tuple(args.duration), seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records, oracle = generate_synthetic(cfg, args.n)
    write_csv(records, out / "interactions.csv")
    oracle.save(out / "oracle.json")
    Manifest().write(out / "manifest.ini")
    labels = np.array([r.watch_time for r in records])
    print(f"wrote {len(records)} interactions to {out / 'interactions.csv'} "
          f"(mean {labels.mean():.2f}s, {np.mean(labels < 4):.1%} below 4s)")
    return EXIT_OK


def cmd_train(args) -> int:
    manifest, config = _setup(args)
    out = Path(args.out)
    records = _load_records(args.data, manifest)
    train_recs, eval_recs = split(records, manifest.split_mode, manifest.train_fraction, manifest.split_seed)
    if not eval_recs:
        raise DataError("evaluation split is empty; lower --train-frac or add data")
    transform = Transform.fit(train_recs, _preprocess_config(manifest))
    train_set, eval_set = transform.apply(train_recs), transform.apply(eval_recs)
    out.mkdir(parents=True, exist_ok=True)
    weights, history = train(config, train_set, eval_set)
    save_checkpoint(weights, out / CHECKPOINT)
    transform.save(out / TRANSFORM)
    history.write_csv(out / HISTORY)
    run = {
        "data": str(Path(args.data).resolve()),
        "manifest": str(Path(args.manifest).resolve()) if args.manifest else None,
        "split": {"mode": manifest.split_mode, "train_fraction": manifest.train_fraction,
                  "seed": manifest.split_seed},
        "train": config_dict(config),
        "time_scale": weights.time_scale,
        "n_train": len(train_set),
        "n_eval": len(eval_set),
        "version": __version__,
    }
    with open(out / RUN_FILE, "w") as fh:
        json.dump(run, fh, indent=2, sort_keys=True)
    report = _write_report(forward_all(weights, eval_set.features), eval_set.labels, _metric_config(args), out)
    print(f"trained {config.epochs} epochs on {len(train_set)} rows; eval {report.format()}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run)
    weights, transform, run = _load_run(run_dir)
    manifest = _run_manifest(run)
    data = args.data or run["data"]
    records = _load_records(data, manifest)
    if args.part == "all":
        part = records
    else:
        tr, ev = split(records, manifest.split_mode, manifest.train_fraction, manifest.split_seed)
        part = ev if args.part == "eval" else tr
    if not part:
        raise DataError(f"{args.part} split is empty")
    dataset = transform.apply(part)
    if dataset.schema != weights.schema:
        raise DataError("transform and checkpoint disagree on the feature schema")
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    report = _write_report(forward_all(weights, dataset.features), dataset.labels, _metric_config(args), out, args.stem)
    print(report.format())
    return EXIT_OK


def cmd_predict(args) -> int:
    weights, transform, run = _load_run(Path(args.run))
    manifest = _run_manifest(run)
    records = _load_records(args.data, manifest)
    dataset = transform.apply(records)
    preds = predict(weights, dataset, args.thresholds, args.quantiles)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    preds.write_csv(out, ids=list(zip(dataset.user_ids, dataset.video_ids)))
    print(f"wrote {len(dataset)} predictions to {out}")
    return EXIT_OK


def _curve_grid(params: EgmParams, n: int, t_max=None):
    """Grid over the effective support, split at 0 so the density jump is resolved."""
    hi = float(t_max) if t_max else float(quantile(params, 1 - 1e-7))
    lo = 0.0
    if params.n_gaussians:
        sd = np.sqrt(params.variances)
        live = params.weights[1:] > 0
        if live.any():
            lo = min(0.0, float(np.min((params.means - 8 * sd)[live])))
    if lo < 0:
        n_neg = max(2, int(n * -lo / (hi - lo)))
        left = np.linspace(lo, np.nextafter(0.0, -1.0), n_neg)
        return np.concatenate([left, np.linspace(0.0, hi, max(2, n - n_neg))])
    return np.linspace(0.0, hi, n)


def _single_params(weights, transform, user, video, duration, context) -> EgmParams:
    rec = FeatureRecord(user, video, duration, 0.0, None, dict(context), {})
    missing = [n for n in transform.config.categorical if n not in ("user_id", "video_id") and n not in rec.context]
    if missing:
        raise UsageError(f"missing --context values for {missing}")
    extra_dense = [n for n in transform.config.dense if n != "duration"]
    if extra_dense:
        raise UsageError(f"inspect cannot supply extra dense features {extra_dense}")
    return forward_all(weights, transform.apply([rec]).features)[0]


def cmd_inspect(args) -> int:
    weights, transform, _ = _load_run(Path(args.run))
    context = {}
    for item in args.context or []:
        if "=" not in item:
            raise UsageError(f"--context expects name=value, got {item!r}")
        k, v = item.split("=", 1)
        context[k] = v
    duration = args.duration
    oracle = Oracle.load(args.oracle) if args.oracle else None
    if duration is None:
        if oracle is None:
            raise UsageError("inspect needs --duration or --oracle to know the video duration")
        duration = float(oracle.duration[oracle._index(args.user, args.video)[1]])
    params = _single_params(weights, transform, args.user, args.video, duration, context)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = _curve_grid(params, args.points, args.t_max)
    write_curve_csv(out / "density.csv", grid, pdf(params, grid), "pdf")
    write_curve_csv(out / "cdf.csv", grid, cdf(params, grid), "cdf")
    with open(out / "params.json", "w") as fh:
        json.dump({"rate": float(params.rate), "means": params.means.tolist(),
                   "variances": params.variances.tolist(), "weights": params.weights.tolist()}, fh, indent=2)
    if oracle is not None:
        truth = oracle.params(args.user, args.video)
        write_curve_csv(out / "oracle_density.csv", grid, pdf(truth, grid), "pdf")
    print(f"{args.user}/{args.video}: expected {float(mean(params)):.3f}s; curves in {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_metric_flags(p):
    p.add_argument("--thresholds", type=float, nargs="+", default=[2.0, 4.0, 6.0],
                   help="quick-skip thresholds in seconds (default: 2 4 6)")
    p.add_argument("--pairs", type=int, default=1_000_000, help="XAUC pair budget before sampling kicks in")
    p.add_argument("--xauc-seed", type=int, default=0, help="seed for sampled XAUC pairs")
    p.add_argument("--bins", type=int, default=100, help="histogram bins for the KL metric")
    p.add_argument("--skip-score", choices=("mean", "cdf"), default="mean",
                   help="quick-skip score: negative expected watch time or cdf(tau)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="egmn", description="Exponential-Gaussian mixture network for watch-time prediction.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic interaction world with known true distributions")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=100_000, help="number of interactions")
    p.add_argument("--users", type=int, default=50, help="number of users")
    p.add_argument("--videos", type=int, default=50, help="number of videos")
    p.add_argument("--pickiness", type=float, nargs=2, default=[0.1, 0.9], metavar=("LO", "HI"),
                   help="range of per-user exponential weight")
    p.add_argument("--skip-mean", type=float, nargs=2, default=[1.0, 3.0], metavar=("LO", "HI"),
                   help="range of mean quick-skip time in seconds")
    p.add_argument("--duration", type=float, nargs=2, default=[10.0, 120.0], metavar=("LO", "HI"),
                   help="video duration range in seconds (log-uniform)")
    p.add_argument("--seed", type=int, default=0, help="world and sampling seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write checkpoint, transform, history and report")
    p.add_argument("--data", required=True, help="interaction CSV (optionally .gz)")
    p.add_argument("--manifest", help="INI file with [columns], [preprocess], [split], [train] sections")
    p.add_argument("--config", help="INI file with [train] and [split] sections; overrides the manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--k", type=int, help="number of Gaussian components (default 10)")
    p.add_argument("--alpha", type=float, help="entropy loss weight (default 0.1)")
    p.add_argument("--beta", type=float, help="regression loss weight (default 1.0)")
    p.add_argument("--lr", type=float, help="Adagrad learning rate (default 0.1)")
    p.add_argument("--batch", type=int, help="minibatch size (default 2048)")
    p.add_argument("--epochs", type=int, help="training epochs (default 10)")
    p.add_argument("--seed", type=int, help="weight initialisation seed (default 0)")
    p.add_argument("--shuffle-seed", type=int, help="minibatch shuffling seed (default 1)")
    p.add_argument("--hidden", type=int, nargs="+", help="backbone widths (default 128 64)")
    p.add_argument("--time-scale", type=float,
                   help="seconds per internal time unit; 0 uses the mean training label (default 0)")
    p.add_argument("--split", choices=("random", "temporal"), help="train/eval split mode (default random)")
    p.add_argument("--train-frac", type=float, help="training fraction (default 0.8)")
    p.add_argument("--split-seed", type=int, help="seed of the random split (default 0)")
    for name, text in [
        ("disable-exponential", "drop the exponential component"),
        ("disable-gaussians", "drop all Gaussian components (forces K=0)"),
        ("drop-mle", "remove the likelihood loss"),
        ("drop-entropy", "remove the entropy regulariser"),
        ("drop-reg", "remove the mean-regression loss"),
        ("keep-best", "keep the weights of the epoch with the lowest eval MAE"),
    ]:
        p.add_argument(f"--{name}", action="store_true", default=None, help=text)
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None,
                   help="bit-reproducible outputs; wall times are recorded as 0 (default on)")
    _add_metric_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a trained run on its evaluation split or other data")
    p.add_argument("--run", required=True, help="training output directory")
    p.add_argument("--data", help="interaction CSV (default: the training data, split as in training)")
    p.add_argument("--part", choices=("eval", "train", "all"), default="eval",
                   help="which split of the data to score (default eval)")
    p.add_argument("--out", help="output directory (default: the run directory)")
    p.add_argument("--stem", default="report", help="file name stem for the report files")
    _add_metric_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="write per-record expected watch time, skip probabilities and quantiles")
    p.add_argument("--run", required=True, help="training output directory")
    p.add_argument("--data", required=True, help="interaction CSV; the label column may hold any number")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--thresholds", type=float, nargs="*", default=[2.0, 4.0, 6.0],
                   help="quick-skip thresholds in seconds")
    p.add_argument("--quantiles", type=float, nargs="*", default=[0.5], help="quantile levels in (0, 1)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("inspect", help="export density and CDF curves for one user/video pair")
    p.add_argument("--run", required=True, help="training output directory")
    p.add_argument("--user", required=True, help="user id as written in the data")
    p.add_argument("--video", required=True, help="video id as written in the data")
    p.add_argument("--duration", type=float, help="video duration in seconds")
    p.add_argument("--context", nargs="*", metavar="NAME=VALUE", help="context feature values")
    p.add_argument("--oracle", help="oracle.json from synth; adds the true density and supplies the duration")
    p.add_argument("--points", type=int, default=4001, help="grid points")
    p.add_argument("--t-max", type=float, help="right end of the grid (default: the 1-1e-7 quantile)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_inspect)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ParameterError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(run_cli())
