"""Command-line experiment runner: ``qgcn prepare | train | evaluate``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .dataset import (
    ArtifactError,
    IdxFormatError,
    InsufficientSamplesError,
    build_sampleset,
    load_idx,
    read_artifact,
    write_artifact,
)
from .model import QGCN, ModelSpec, classify
from .training import DivergenceError, TrainConfig, accuracy, train

EXIT_OK = 0
EXIT_DATA = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIVERGED = 4

PARAMS_VERSION = 1
DATASET_FILE = "dataset.qgcn"
METRICS_COLUMNS = ("iteration", "train_loss", "train_accuracy", "test_accuracy", "wall_time_s")
GRAD_ALIASES = {"shift": "parameter-shift", "adjoint": "adjoint", "fd": "finite-diff"}

DEFAULTS = {
    "seed": 0,
    "nodes": "0,2,3",
    "conv": 1,
    "pool": 1,
    "mode": "compiled",
    "iterations": 1000,
    "batch": 16,
    "lr": 0.01,
    "optimizer": "adam",
    "grad": "adjoint",
    "out": ".",
    "workers": 1,
    "eval_every": 10,
    "train_size": 480,
    "test_size": 120,
    "balanced": True,
}

log = logging.getLogger("qgcn")


class ConfigError(ValueError):
    pass


def read_config(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment, dashes in keys become underscores."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(key: str, value):
    if not isinstance(value, str):
        return value
    default = DEFAULTS.get(key)
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def resolve(args: argparse.Namespace) -> dict:
    """Merge built-in defaults < config file < explicit flags (< QGCN_WORKERS only when --workers is absent)."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        file_values = read_config(args.config)
        settings.update({k: _coerce(k, v) for k, v in file_values.items()})
    if "workers" not in vars(args) or args.workers is None:
        env = os.environ.get("QGCN_WORKERS")
        if env:
            settings["workers"] = int(env)
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "config", "func"):
            settings[key] = value
    return settings


def parse_nodes(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(t) for t in text)
    return tuple(int(t) for t in str(text).split(","))


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def metrics_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for r in records:
        w.writerow([r.iteration, _fmt(r.train_loss), _fmt(r.train_accuracy), _fmt(r.test_accuracy), f"{r.wall_time:.6f}"])
    return buf.getvalue()


def read_metrics_csv(path: str | Path) -> list[dict]:
    rows = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            rows.append(
                {
                    "iteration": int(row["iteration"]),
                    "train_loss": float(row["train_loss"]),
                    "train_accuracy": float(row["train_accuracy"]) if row["train_accuracy"] else None,
                    "test_accuracy": float(row["test_accuracy"]) if row["test_accuracy"] else None,
                    "wall_time_s": float(row["wall_time_s"]),
                }
            )
    return rows


def params_document(spec: ModelSpec, node_selection, bindings: dict[str, int], values) -> str:
    names = sorted(bindings, key=bindings.get)
    doc = {
        "format_version": PARAMS_VERSION,
        "model_spec": spec.to_dict(),
        "node_selection": list(node_selection),
        "slots": names,
        "values": [float(v) for v in values],
    }
    return json.dumps(doc, indent=2) + "\n"


def read_params(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != PARAMS_VERSION:
        raise ArtifactError(f"{path}: params format {doc.get('format_version')!r}, expected {PARAMS_VERSION}")
    if len(doc["slots"]) != len(doc["values"]):
        raise ArtifactError(f"{path}: {len(doc['slots'])} slots but {len(doc['values'])} values")
    return doc


def _out_dir(settings) -> Path:
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(settings, key, flag):
    if not settings.get(key):
        raise ConfigError(f"missing {flag}")
    return settings[key]


def cmd_prepare(settings: dict) -> int:
    nodes = parse_nodes(settings["nodes"])
    train_raw = load_idx(_require(settings, "train_images", "--train-images"), _require(settings, "train_labels", "--train-labels"))
    n_train, n_test = settings["train_size"], settings["test_size"]
    seed, balanced = settings["seed"], settings["balanced"]
    if settings.get("test_images") or settings.get("test_labels"):
        test_raw = load_idx(_require(settings, "test_images", "--test-images"), _require(settings, "test_labels", "--test-labels"))
        train_set, _ = build_sampleset(train_raw, nodes, seed, (n_train, 0), balanced=balanced)
        _, test_set = build_sampleset(test_raw, nodes, seed, (0, n_test), balanced=balanced)
        source = "train/test IDX pairs"
    else:
        train_set, test_set = build_sampleset(train_raw, nodes, seed, (n_train, n_test), balanced=balanced)
        source = "single IDX pair, disjoint draw"

    out = _out_dir(settings)
    write_artifact(out / DATASET_FILE, train_set, test_set, {"source": source, "balanced": bool(balanced)})
    lines = [
        f"dataset artifact: {out / DATASET_FILE}",
        f"source: {source}",
        f"seed: {seed}",
        f"node selection (patch ids): {list(nodes)}",
        f"edges (node indices): {[list(e) for e in train_set.edges]}",
    ]
    for s in (train_set, test_set):
        c = s.class_counts()
        lines.append(f"{s.split}: {len(s)} samples (+1: {c[1]}, -1: {c[-1]})")
    summary = "\n".join(lines) + "\n"
    (out / "dataset_summary.txt").write_text(summary)
    sys.stdout.write(summary)
    return EXIT_OK


def _model_for(train_set, spec: ModelSpec) -> QGCN:
    return QGCN.for_graph(train_set.graph(0), spec)


def cmd_train(settings: dict) -> int:
    train_set, test_set, _ = read_artifact(_require(settings, "data", "--data"))
    spec = ModelSpec(settings["conv"], settings["pool"], settings["mode"])
    config = TrainConfig(
        iterations=settings["iterations"],
        batch_size=settings["batch"],
        learning_rate=settings["lr"],
        optimizer=settings["optimizer"],
        seed=settings["seed"],
        gradient_mode=GRAD_ALIASES.get(settings["grad"], settings["grad"]),
        eval_every=settings["eval_every"],
        workers=settings["workers"],
    )
    model = _model_for(train_set, spec)
    test_states = model.encode(test_set.features) if len(test_set) else None
    params, records = train(model, model.encode(train_set.features), train_set.labels, config, test_states, test_set.labels)

    out = _out_dir(settings)
    (out / "metrics.csv").write_text(metrics_csv(records))
    (out / "params.json").write_text(params_document(spec, train_set.node_selection, params.bindings, params.values))
    last = records[-1]
    print(f"trained {model.n_params} parameters for {config.iterations} iterations")
    print(f"final: train_loss={last.train_loss:.6f} train_acc={last.train_accuracy:.4f} test_acc={_fmt(last.test_accuracy) or 'n/a'}")
    print(f"wrote {out / 'metrics.csv'} and {out / 'params.json'}")
    return EXIT_OK


def evaluation_report(expectations, labels) -> dict:
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("empty evaluation set: no samples to score")
    pred = classify(expectations)
    report = {
        "n_samples": int(len(labels)),
        "accuracy": accuracy(expectations, labels),
        "per_class_accuracy": {},
        "confusion": {
            "true_pos": int(np.sum((pred == 1) & (labels == 1))),
            "false_neg": int(np.sum((pred == -1) & (labels == 1))),
            "false_pos": int(np.sum((pred == 1) & (labels == -1))),
            "true_neg": int(np.sum((pred == -1) & (labels == -1))),
        },
    }
    for c in (1, -1):
        mask = labels == c
        report["per_class_accuracy"][str(c)] = float(np.mean(pred[mask] == c)) if mask.any() else None
    return report


def cmd_evaluate(settings: dict) -> int:
    doc = read_params(_require(settings, "params", "--params"))
    train_set, test_set, _ = read_artifact(_require(settings, "data", "--data"))
    if tuple(doc["node_selection"]) != tuple(train_set.node_selection):
        raise ValueError(f"params were trained on nodes {doc['node_selection']}, artifact has {list(train_set.node_selection)}")
    spec = ModelSpec.from_dict(doc["model_spec"])
    model = _model_for(train_set, spec)
    names = sorted(model.template.bindings, key=model.template.bindings.get)
    if names != doc["slots"]:
        raise ValueError(f"params file has {len(doc['slots'])} slots, model built from artifact has {len(names)}")
    subset = test_set if settings.get("split", "test") == "test" else train_set
    if len(subset) == 0:
        raise ValueError(f"empty evaluation set: the artifact's {subset.split} split has no samples")
    f = model.expectations(np.array(doc["values"]), model.encode(subset.features))
    report = evaluation_report(f, subset.labels)
    report["split"] = subset.split
    c = report["confusion"]
    print(f"{subset.split} accuracy: {report['accuracy']:.4f} over {report['n_samples']} samples")
    for k, v in report["per_class_accuracy"].items():
        print(f"  class {k:>2}: {'n/a' if v is None else f'{v:.4f}'}")
    print(f"  confusion: TP={c['true_pos']} FN={c['false_neg']} FP={c['false_pos']} TN={c['true_neg']}")
    out = _out_dir(settings)
    (out / "evaluation.json").write_text(json.dumps(report, indent=2) + "\n")
    (out / "evaluation.txt").write_text(
        f"{subset.split} accuracy {report['accuracy']:.4f} ({report['n_samples']} samples)\n"
        + "".join(f"class {k}: {v}\n" for k, v in report["per_class_accuracy"].items())
        + "".join(f"{k}: {v}\n" for k, v in c.items())
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qgcn", description="Quantum graph convolutional network experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value settings file; flags override it")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("prepare", help="build the patch-graph dataset artifact from IDX files")
    common(sp)
    sp.add_argument("--train-images")
    sp.add_argument("--train-labels")
    sp.add_argument("--test-images")
    sp.add_argument("--test-labels")
    sp.add_argument("--nodes", help="three patch ids, e.g. 0,2,3")
    sp.add_argument("--train-size", type=int)
    sp.add_argument("--test-size", type=int)
    sp.add_argument("--unbalanced", dest="balanced", action="store_const", const=False)
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train", help="train a model on a dataset artifact")
    common(sp)
    sp.add_argument("--data", help="dataset artifact path")
    sp.add_argument("--conv", type=int)
    sp.add_argument("--pool", type=int)
    sp.add_argument("--mode", choices=("compiled", "edge-register"))
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--batch", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--optimizer", choices=("adam", "sgd"))
    sp.add_argument("--grad", choices=tuple(GRAD_ALIASES))
    sp.add_argument("--eval-every", type=int)
    sp.add_argument("--workers", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="score a params file on a dataset artifact")
    common(sp)
    sp.add_argument("--params", help="params.json written by train")
    sp.add_argument("--data", help="dataset artifact path")
    sp.add_argument("--split", choices=("test", "train"))
    sp.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    verbose = args.verbose
    del args.verbose
    try:
        settings = resolve(args)
        return args.func(settings)
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FileNotFoundError, IsADirectoryError, PermissionError) as e:
        print(f"error: {e.filename or ''}: {e.strerror}", file=sys.stderr)
        return EXIT_IO
    except (IdxFormatError, ArtifactError, InsufficientSamplesError, ConfigError, ValueError) as e:
        if verbose:
            log.exception("failed")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
