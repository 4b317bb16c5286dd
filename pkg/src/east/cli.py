"""``east`` command line: train, eval, grid, verify, data.

Exit status: 0 success, 2 usage or configuration error, 3 runtime failure
(including failed verification checks).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import warnings
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import model as mlp
from . import trainer, verify
from .data import DataError, Dataset, Standardizer, gen_synthetic, load_csv, save_csv, \
    shannon_equitability, split, write_manifest
from .metrics import KINDS, MetricSpec, evaluate, summary
from .softset import confusion, predict_soft

log = logging.getLogger("east")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
OUT_ENV = "EAST_OUT_DIR"
MANIFEST_NAME = "manifest.json"
TABLE_COLUMNS = ("F1", "Acc", "MCC")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# config and manifest helpers

def git_blob_hash(content: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(content) + content).hexdigest()


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=float).encode()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def load_config(path) -> dict:
    if path is None:
        return {"schema": trainer.CONFIG_SCHEMA}
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    schema = doc.get("schema", trainer.CONFIG_SCHEMA)
    if schema != trainer.CONFIG_SCHEMA:
        raise UsageError(f"unsupported config schema {schema!r}; expected {trainer.CONFIG_SCHEMA!r}")
    return doc


def parse_betas(text: str) -> tuple[float, ...] | float:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--betas expects comma-separated numbers, got {text!r}") from None
    return values[0] if len(values) == 1 else values


def parse_seed_range(text: str) -> list[int]:
    lo, sep, hi = text.partition("..")
    try:
        a, b = int(lo), int(hi)
    except ValueError:
        raise UsageError(f"--seeds expects A..B, got {text!r}") from None
    if not sep or b < a:
        raise UsageError(f"--seeds expects A..B with A <= B, got {text!r}")
    return list(range(a, b + 1))


def train_config(doc: dict, args) -> trainer.TrainConfig:
    """Config-file training section overlaid with command-line flags."""
    section = dict(doc.get("train", {}))
    if getattr(args, "loss", None):
        section["loss"] = args.loss
    metric = dict(section.get("metric", {}))
    if getattr(args, "metric", None):
        metric["kind"] = args.metric
    if getattr(args, "betas", None):
        metric["betas"] = parse_betas(args.betas)
    if metric:
        section["metric"] = metric
    if getattr(args, "temperature_0", None) is not None:
        section["T0"] = args.temperature_0
    if getattr(args, "decay", None) is not None:
        section["r"] = args.decay
    if getattr(args, "seed", None) is not None:
        section["seed"] = args.seed
    try:
        return trainer.TrainConfig.from_dict(section)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training config: {exc}") from None


def load_dataset(doc: dict, args) -> tuple[Dataset, bytes]:
    """Dataset named by ``--data`` or the config, plus the bytes that identify it."""
    spec = dict(doc.get("data", {}))
    if getattr(args, "data", None):
        spec = {"path": args.data, "label_column": spec.get("label_column", "label")}
    if "path" in spec:
        path = Path(spec["path"])
        if not path.is_file():
            raise UsageError(f"dataset not found: {path}")
        ds = load_csv(path, spec.get("label_column", "label"))
        return ds, path.read_bytes()
    if "synthetic" in spec:
        syn = dict(spec["synthetic"])
        try:
            ds = gen_synthetic(int(syn["d"]), int(syn["n"]), syn["class_weights"],
                               float(syn.get("cluster_separation", 1.5)), int(syn.get("seed", 0)),
                               syn.get("n_features"))
        except KeyError as exc:
            raise UsageError(f"synthetic data spec is missing {exc}") from None
        return ds, canonical_json(syn)
    raise UsageError("no dataset: pass --data PATH or set data.path / data.synthetic in the config")


def out_dir(args, command: str, fingerprint: str) -> Path:
    if args.out:
        path = Path(args.out)
    else:
        path = Path(os.environ.get(OUT_ENV, "east-runs")) / f"{command}-{fingerprint[:12]}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(verify._jsonable(obj), indent=2, default=float))
    return path


def write_manifest_file(directory: Path, command: str, config: dict, seeds, input_hash: str,
                        outputs: list[Path], started: str) -> Path:
    return write_json(directory / MANIFEST_NAME, {
        "command": command,
        "config": config,
        "seeds": seeds,
        "input_hash": input_hash,
        "outputs": sorted(str(p.relative_to(directory)) for p in outputs),
        "started": started,
        "finished": _now(),
    })


def metric_row(m: dict) -> dict:
    return {"F1": m["f1"], "Acc": m["accuracy"], "MCC": m["mcc"]}


def format_table(rows: list[tuple[str, dict]]) -> str:
    lines = [f"{'run':<12}" + "".join(f"{c:>10}" for c in TABLE_COLUMNS)]
    for label, row in rows:
        lines.append(f"{label:<12}" + "".join(f"{row[c]:>10.4f}" for c in TABLE_COLUMNS))
    return "\n".join(lines)


def write_table_csv(path: Path, rows: list[tuple[str, dict]]) -> Path:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", *TABLE_COLUMNS])
        for label, row in rows:
            writer.writerow([label, *(repr(float(row[c])) for c in TABLE_COLUMNS)])
    return path


# --------------------------------------------------------------------------
# commands

def _prepared(doc: dict, args):
    ds, data_bytes = load_dataset(doc, args)
    split_seed = int(doc.get("split_seed", 0))
    try:
        splits, scaler = trainer.prepare(ds, split_seed)
    except DataError as exc:
        raise UsageError(str(exc)) from None
    return ds, data_bytes, split_seed, splits, scaler


def cmd_train(args) -> int:
    started = _now()
    doc = load_config(args.config)
    config = train_config(doc, args)
    seeds = parse_seed_range(args.seeds) if args.seeds else [config.seed]
    ds, data_bytes, split_seed, splits, scaler = _prepared(doc, args)
    full_config = {**doc, "train": config.to_dict(), "split_seed": split_seed}
    input_hash = git_blob_hash(canonical_json(full_config) + canonical_json(seeds) + data_bytes)
    root = out_dir(args, "train", input_hash)

    outputs, rows, per_seed = [], [], []
    for seed in seeds:
        run_config = replace(config, seed=seed)
        directory = root if len(seeds) == 1 else root / f"seed-{seed}"
        directory.mkdir(parents=True, exist_ok=True)
        log.info("training seed %d (loss=%s, metric=%s)", seed, run_config.loss, run_config.metric.name)
        result = trainer.fit(run_config, splits)
        result.params.meta = {"class_names": ds.class_names, "feature_names": ds.feature_names}
        outputs += [
            mlp.save(result.params, directory / "model.bin"),
            write_json(directory / "scaler.json", scaler.to_dict()),
            write_json(directory / "history.json", result.history.to_dict()),
            result.history.write_csv(directory / "history.csv"),
            write_json(directory / "metrics.json", {"test": result.test_metrics,
                                                    "best_val_loss": result.history.best_val_loss,
                                                    "best_T": result.history.best_T,
                                                    "stop_reason": result.history.stop_reason}),
            trainer.write_report(result, directory / "report.json"),
        ]
        rows.append((f"seed {seed}", metric_row(result.test_metrics)))
        per_seed.append(result.test_metrics)

    if len(seeds) > 1:
        values = np.array([[r[c] for c in TABLE_COLUMNS] for _, r in rows])
        mean, std = values.mean(axis=0), values.std(axis=0, ddof=1)
        rows += [("mean", dict(zip(TABLE_COLUMNS, mean))), ("std", dict(zip(TABLE_COLUMNS, std)))]
        outputs.append(write_json(root / "summary.json", {
            "seeds": seeds, "mean": dict(zip(TABLE_COLUMNS, mean)), "std": dict(zip(TABLE_COLUMNS, std)),
            "per_seed": per_seed,
        }))
    outputs.append(write_table_csv(root / "metrics.csv", rows))
    write_manifest_file(root, "train", full_config, seeds, input_hash, outputs, started)
    print(format_table(rows))
    if len(seeds) > 1:
        m, s = rows[-2][1], rows[-1][1]
        print("  ".join(f"{c} {m[c]:.4f} ± {s[c]:.4f}" for c in TABLE_COLUMNS))
    print(f"outputs in {root}")
    return EXIT_OK


def cmd_eval(args) -> int:
    started = _now()
    doc = load_config(args.config)
    try:
        params = mlp.load(args.model)
    except FileNotFoundError:
        raise UsageError(f"checkpoint not found: {args.model}") from None
    except (ValueError, KeyError, OSError) as exc:
        raise UsageError(f"cannot read checkpoint {args.model}: {exc}") from None
    ds, data_bytes = load_dataset(doc, args)
    scaler_path = Path(args.scaler) if args.scaler else Path(args.model).with_name("scaler.json")
    if scaler_path.is_file():
        ds = Standardizer.from_dict(json.loads(scaler_path.read_text())).apply(ds)
    elif args.scaler:
        raise UsageError(f"scaler not found: {scaler_path}")
    if args.split != "all":
        ds = dict(zip(("train", "val", "test"), split(ds, args.split_seed)))[args.split]
    if ds.input_dim != params.input_dim or ds.d != params.n_classes:
        raise UsageError(f"checkpoint expects {params.input_dim} features / {params.n_classes} classes, "
                         f"data has {ds.input_dim} / {ds.d}")
    spec = MetricSpec(args.metric or "macro_f_beta", parse_betas(args.betas) if args.betas else 1.0)
    betas = spec.beta_vector(ds.d) if spec.kind == "macro_f_beta" else 1.0
    p = mlp.predict_proba(params, ds.X)
    hard = trainer.hard_metrics(params, ds, betas)
    C_T = confusion(ds.y, predict_soft(p, args.temperature), ds.d)
    report = {
        "metric": spec.to_dict(),
        "hard": hard,
        "target_metric": evaluate(spec, np.asarray(hard["confusion"])),
        "soft": {"T": args.temperature, "confusion": C_T.tolist(), "target_metric": evaluate(spec, C_T),
                 **{k: v for k, v in summary(C_T, betas).items() if k != "per_class"}},
    }
    settings = {k: v for k, v in vars(args).items() if k != "func"}
    fingerprint = git_blob_hash(Path(args.model).read_bytes() + data_bytes + canonical_json(settings))
    directory = out_dir(args, "eval", fingerprint)
    rows = [("eval", metric_row(hard))]
    outputs = [write_json(directory / "metrics.json", report), write_table_csv(directory / "metrics.csv", rows)]
    write_manifest_file(directory, "eval", {**doc, "eval": settings}, None, fingerprint, outputs, started)
    print(format_table(rows))
    print(f"{spec.name}: hard {report['target_metric']:.4f}  soft@T={args.temperature:g} "
          f"{report['soft']['target_metric']:.4f}")
    print(f"{'class':>6}{'precision':>11}{'recall':>9}{'beta':>7}{'F_beta':>9}")
    for row in hard["per_class"]:
        print(f"{row['class']:>6}{row['precision']:>11.4f}{row['recall']:>9.4f}{row['beta']:>7g}"
              f"{row['f_beta']:>9.4f}")
    return EXIT_OK


def cmd_grid(args) -> int:
    started = _now()
    doc = load_config(args.config)
    grid = doc.get("grid")
    if args.grid:
        grid = load_config(args.grid).get("grid")
    if not grid or any(not isinstance(v, list) or not v for v in grid.values()):
        raise UsageError("grid must map config fields to nonempty lists")
    base = train_config(doc, args)
    unknown = set(grid) - set(base.to_dict())
    if unknown:
        raise UsageError(f"unknown grid fields: {sorted(unknown)}")
    grid = {k: [tuple(x) if isinstance(x, list) else x for x in v] for k, v in grid.items()}
    ds, data_bytes, split_seed, splits, _ = _prepared(doc, args)
    full_config = {**doc, "train": base.to_dict(), "split_seed": split_seed}
    input_hash = git_blob_hash(canonical_json(full_config) + data_bytes)
    directory = out_dir(args, "grid", input_hash)
    try:
        result = trainer.grid_search(base, grid, splits, parallel=args.parallel)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid grid: {exc}") from None
    ranked = result.ranked()
    csv_path = directory / "grid_results.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "grid_index", *grid, "best_val_loss", "epochs", "test_F1", "test_Acc",
                         "test_MCC"])
        for row in ranked:
            tm = row["test_metrics"]
            writer.writerow([row["rank"], row["grid_index"], *(row["config"][k] for k in grid),
                             repr(row["best_val_loss"]), row["epochs"], tm["f1"], tm["accuracy"], tm["mcc"]])
    outputs = [write_json(directory / "grid_results.json", ranked), csv_path,
               write_json(directory / "best_config.json",
                          {"schema": trainer.CONFIG_SCHEMA, "data": doc.get("data", {}),
                           "split_seed": split_seed, "train": result.best_config.to_dict()})]
    write_manifest_file(directory, "grid", {**full_config, "grid": grid}, [base.seed], input_hash, outputs,
                        started)
    for row in ranked:
        print(f"#{row['rank']:<3} val_loss {row['best_val_loss']:.6f}  " +
              " ".join(f"{k}={row['config'][k]}" for k in grid))
    print(f"best config written to {directory / 'best_config.json'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    started = _now()
    names = [args.check]
    settings = {"check": args.check, "seed": args.seed, "n": args.n, "delta": args.delta,
                "population_size": args.population_size}
    fingerprint = git_blob_hash(canonical_json(settings))
    try:
        reports = verify.run_checks(names, args.seed, args.population_size, args.n, args.delta)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    directory = out_dir(args, "verify", fingerprint)
    outputs = [r.write(directory) for r in reports]
    write_manifest_file(directory, "verify", settings, [args.seed], fingerprint, outputs, started)
    for r in reports:
        print(r.line())
    print(f"reports in {directory}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_RUNTIME


def cmd_data(args) -> int:
    if args.action == "gen-synth":
        try:
            weights = [float(w) for w in args.weights.split(",")]
        except ValueError:
            raise UsageError(f"--weights expects comma-separated numbers, got {args.weights!r}") from None
        d = args.d or len(weights)
        try:
            ds = gen_synthetic(d, args.n, weights, args.separation, args.seed, args.n_features)
        except DataError as exc:
            raise UsageError(str(exc)) from None
        path = Path(args.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_csv(ds, path)
        manifest = write_manifest(ds, path.with_suffix(".manifest.json"), extra={
            "generator": {"d": d, "n": args.n, "class_weights": weights,
                          "cluster_separation": args.separation, "seed": args.seed,
                          "n_features": args.n_features}})
        print(f"wrote {path} and {manifest}")
        return EXIT_OK
    if not Path(args.path).is_file():
        raise UsageError(f"dataset not found: {args.path}")
    ds = load_csv(args.path, args.label_column)
    info = {
        "n": ds.n, "d": ds.d, "input_dim": ds.input_dim,
        "class_counts": dict(zip(ds.class_names, ds.class_counts().tolist())),
        "shannon_equitability": shannon_equitability(ds.y, ds.d),
    }
    if args.json:
        print(json.dumps(info, indent=2))
    else:
        print(f"n={info['n']} d={info['d']} features={info['input_dim']}")
        for name, count in info["class_counts"].items():
            print(f"  class {name}: {count}")
        print(f"Shannon equitability: {info['shannon_equitability']:.4f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config (schema east-config-v1)")
    p.add_argument("--data", help="CSV dataset; overrides data in the config")
    p.add_argument("--seed", type=int, help="training seed")
    p.add_argument("--loss", choices=trainer.LOSSES)
    p.add_argument("--metric", choices=KINDS)
    p.add_argument("--betas", help="comma-separated per-class betas (or one shared value)")
    p.add_argument("--temperature-0", dest="temperature_0", type=float, help="initial temperature (default 0.2)")
    p.add_argument("--decay", type=float, help="temperature decay factor r")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command>-<hash>)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="east", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and report test metrics")
    _add_train_flags(p)
    p.add_argument("--seeds", help="inclusive seed range A..B; reports mean ± std")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--scaler", help="scaler.json (default: next to the checkpoint when present)")
    p.add_argument("--split", choices=("all", "train", "val", "test"), default="all")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--metric", choices=KINDS)
    p.add_argument("--betas")
    p.add_argument("--temperature", type=float, default=0.2, help="temperature for soft diagnostics")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="grid search over training hyperparameters")
    _add_train_flags(p)
    p.add_argument("--grid", help="JSON file with a 'grid' object (default: the config's grid)")
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("verify", help="run numerical verification checks")
    p.add_argument("check", choices=(*verify.CHECKS, "all"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=500, help="sample size for the concentration check")
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--population-size", type=int, default=verify.POPULATION_SIZE)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("data", help="generate or inspect datasets")
    dsub = p.add_subparsers(dest="action", required=True)
    g = dsub.add_parser("gen-synth", help="write synthetic Gaussian blobs to CSV")
    g.add_argument("--weights", required=True, help="comma-separated class weights summing to 1")
    g.add_argument("--d", type=int)
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--separation", type=float, default=1.5)
    g.add_argument("--n-features", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--output", required=True)
    i = dsub.add_parser("inspect", help="class counts and balance of a CSV")
    i.add_argument("path")
    i.add_argument("--label-column", default="label")
    i.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    warnings.simplefilter("default")
    try:
        return args.func(args)
    except (UsageError, DataError) as exc:
        print(f"east: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001  runtime failures map to one exit status
        log.debug("runtime failure", exc_info=True)
        print(f"east: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
