"""Command-line interface: ``nigptree {train,eval,predict,synth}``.

Run configs are JSON objects. Keys:

- ``train_data`` (required): CSV or packed feature file
- ``model`` (required): where the model file is written
- ``report``: where the training report goes (default ``<model>.report.json``)
- ``task``: free-form name echoed into the report
- any ``TrainConfig`` field (``epochs``, ``learning_rate``, ``n_inducing``,
  ``kernel``, ``alpha``, ``lengthscale``, ``output_scale``, ``ard``, ``noisy``,
  ``denoiser``, ``train_on_denoised``, ``sweeps_per_epoch``, ``seed``)

Relative paths are resolved against the config file's directory.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field, fields

import numpy as np
from threadpoolctl import threadpool_limits

from .data import DataFormatError, load_features, save_features, split, split_sequential, synth_blobs
from .kernels import DimensionError
from .metrics import compute_metrics
from .model_io import ModelFile, ModelFormatError, load_model, save_model, write_atomic
from .tree import TrainConfig, _n_threads, train

logger = logging.getLogger("nigptree")

_RUN_KEYS = ("task", "train_data", "model", "report")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train_data: str
    model: str
    report: str
    task: str = ""
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_dict(cls, d, base_dir="."):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = set(_RUN_KEYS) | {f.name for f in fields(TrainConfig)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        for key in ("train_data", "model"):
            if not isinstance(d.get(key), str):
                raise ConfigError(f"config needs a string {key!r}")

        def resolve(p):
            return os.path.abspath(os.path.join(base_dir, p))

        model = resolve(d["model"])
        report = resolve(d["report"]) if d.get("report") else f"{model}.report.json"
        train_cfg = TrainConfig.from_dict({k: v for k, v in d.items() if k not in _RUN_KEYS})
        return cls(resolve(d["train_data"]), model, report, str(d.get("task", "")), train_cfg)

    def validate(self):
        try:
            self.train.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not os.path.isfile(self.train_data):
            raise ConfigError(f"training data not found: {self.train_data}")
        for p in (self.model, self.report):
            if not os.path.isdir(os.path.dirname(p) or "."):
                raise ConfigError(f"output directory does not exist: {os.path.dirname(p)}")
        return self

    def to_dict(self):
        out = {"task": self.task, "train_data": self.train_data, "model": self.model,
               "report": self.report}
        out.update(self.train.to_dict())
        return out


def load_run_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    try:
        return RunConfig.from_dict(raw, os.path.dirname(os.path.abspath(path))).validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


# -- commands --------------------------------------------------------------

def cmd_train(config_path):
    run = load_run_config(config_path)
    ds = load_features(run.train_data)
    t0 = time.perf_counter()
    result = train(ds.features, ds.labels, run.train, groups=ds.groups)
    train_seconds = time.perf_counter() - t0
    tree = result.tree
    names = ds.class_names + [str(c) for c in range(len(ds.class_names), tree.n_classes)]
    save_model(ModelFile(tree, run.train, names[: tree.n_classes]), run.model)
    metrics = compute_metrics(ds.labels, tree.predict(result.X, noise=tree.noise), tree.n_classes)
    report = {
        "task": run.task,
        "config": run.to_dict(),
        "elbo_history": result.elbo_history,
        "train_accuracy_history": result.accuracy_history,
        "train_seconds": train_seconds,
        "train_metrics": metrics.to_dict(),
        "sigma_x": result.sigma_x.tolist(),
        "sigma_x_mean": float(np.mean(result.sigma_x)),
    }
    write_atomic(run.report, json.dumps(report, indent=1) + "\n")
    print(f"model written to {run.model}")
    print(f"report written to {run.report}")
    print(f"train time {train_seconds:.3f}s, final ELBO {result.elbo_history[-1]:.6f}, "
          f"train accuracy {metrics.accuracy:.4f}")
    return report


def _load_compatible(model_path, data_path):
    model = load_model(model_path)
    ds = load_features(data_path)
    if ds.d != model.input_dim:
        raise DimensionError(f"data has d={ds.d} features but the model expects d={model.input_dim}")
    declared = not str(data_path).lower().endswith(".csv")
    if (declared and ds.C != model.n_classes) or ds.labels.max() >= model.n_classes:
        raise DimensionError(f"data has C={ds.C} classes but the model has C={model.n_classes}")
    return model, ds


def cmd_eval(model_path, data_path, report_path=None):
    model, ds = _load_compatible(model_path, data_path)
    t0 = time.perf_counter()
    pred = model.tree.predict(ds.features, noise=model.tree.noise)
    test_seconds = time.perf_counter() - t0
    metrics = compute_metrics(ds.labels, pred, model.n_classes)
    print(metrics.format(model.class_names))
    print(f"test time        {test_seconds:.3f}s")
    if report_path:
        out = dict(metrics.to_dict(), test_seconds=test_seconds)
        write_atomic(report_path, json.dumps(out, indent=1) + "\n")
    return metrics


def cmd_predict(model_path, data_path, out_path):
    model, ds = _load_compatible(model_path, data_path)
    probs = model.tree.class_probabilities(ds.features, noise=model.tree.noise)
    labels = np.argmax(probs, axis=1)
    tmp = f"{out_path}.tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"p_{name}" for name in model.class_names])
        for label, row in zip(labels, probs):
            w.writerow([int(label)] + [repr(float(p)) for p in row])
    os.replace(tmp, out_path)
    print(f"{ds.n} predictions written to {out_path}")
    return labels, probs


def cmd_synth(args):
    ds = synth_blobs(args.classes, args.per_class, args.dim, args.separation,
                     args.noise, seed=args.seed, seq_len=args.seq_len,
                     smoothness=args.smoothness)
    if args.test_out:
        if args.train_frames is not None:
            train_ds, test_ds = split_sequential(ds, args.train_frames, args.test_frames)
        else:
            train_ds, test_ds = split(ds, args.test_fraction, seed=args.seed)
        save_features(train_ds, args.out, args.format)
        save_features(test_ds, args.test_out, args.format)
        print(f"wrote {train_ds.n} rows to {args.out} and {test_ds.n} rows to {args.test_out}")
    else:
        save_features(ds, args.out, args.format)
        print(f"wrote {ds.n} rows to {args.out}")


# -- entry point -----------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="nigptree", description="NIGP-Tree classifier")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON run config")
    p.add_argument("--config", required=True)

    p = sub.add_parser("eval", help="evaluate a model on a labelled feature file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", help="also write the metrics as JSON")

    p = sub.add_parser("predict", help="write predicted labels and class probabilities")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", help="generate synthetic Gaussian-blob features")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=60)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--separation", type=float, default=6.0)
    p.add_argument("--noise", type=float, default=0.2, help="observation noise std")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seq-len", type=int, help="emit smooth sequences of this length")
    p.add_argument("--smoothness", type=float, default=2.0)
    p.add_argument("--format", choices=("csv", "packed"))
    p.add_argument("--out", required=True)
    p.add_argument("--test-out", help="also write a held-out split here")
    p.add_argument("--test-fraction", type=float, default=0.5)
    p.add_argument("--train-frames", type=int,
                   help="sequential split: first N rows of each sequence train")
    p.add_argument("--test-frames", type=int)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=_n_threads()):
            if args.command == "train":
                cmd_train(args.config)
            elif args.command == "eval":
                cmd_eval(args.model, args.data, args.report)
            elif args.command == "predict":
                cmd_predict(args.model, args.data, args.out)
            else:
                cmd_synth(args)
    except (ConfigError, DataFormatError, ModelFormatError, ValueError, OSError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"nigptree {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
