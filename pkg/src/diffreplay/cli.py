"""Command-line interface.

Verbs: run (one experiment), sweep (beta sweep), report (render a finished
run), sample (ad-hoc generation from a checkpoint), probe (representation
probes over a run's checkpoints). Exit codes: 0 success, 1 configuration
error, 2 runtime failure.
"""

import argparse
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import experiments
from .diffusion import ddim_sample
from .metrics import CLASSIFIER_PENULTIMATE, H_SPACE, knn_drift_probe, linear_probe
from .trainer import ABLATIONS, METHODS, TrainConfig, load_checkpoint
from .utils import torch_generator

_TRAIN_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


class _Parser(argparse.ArgumentParser):
    """Argparse variant whose usage errors exit with code 1 (config error)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_seeds(text):
    return tuple(int(s) for s in str(text).split(",") if s != "")


def _parse_channels(text):
    return tuple(int(c) for c in str(text).split(",") if c != "")


def _load_config_file(path):
    import yaml

    payload = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(payload, dict):
        raise ValueError(f"config file {path} must hold a mapping")
    return payload


def _build_experiment_config(args):
    payload = _load_config_file(args.config) if args.config else {}
    train_payload = dict(payload.pop("train", {}))
    config = experiments.ExperimentConfig()

    for key, value in payload.items():
        if not hasattr(config, key):
            raise ValueError(f"unknown config key {key!r}")
        setattr(config, key, value)
    for key in ("dataset_id", "method", "output_dir"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(config, key, value)
    for key in ("num_tasks", "label_ratio", "per_class_train", "per_class_test",
                "num_classes"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(config, key, value)
    if args.seeds is not None:
        config.seeds = _parse_seeds(args.seeds)
    if getattr(args, "ablation", None):
        config.ablations = tuple(args.ablation)
    config.seeds = tuple(int(s) for s in config.seeds)
    config.ablations = tuple(config.ablations)

    train = TrainConfig()
    for key, value in train_payload.items():
        if key not in _TRAIN_FIELD_TYPES:
            raise ValueError(f"unknown train config key {key!r}")
        setattr(train, key, value)
    overrides = {}
    for name in _TRAIN_FIELD_TYPES:
        value = getattr(args, f"train_{name}", None)
        if value is not None:
            overrides[name] = value
    if overrides:
        train = replace(train, **overrides)
    train.channels = tuple(train.channels)
    config.train = train
    return config.validate()


def _add_experiment_arguments(parser):
    parser.add_argument("--config", help="YAML experiment config; flags override it")
    parser.add_argument("--dataset-id", dest="dataset_id",
                        help="dataset identifier (e.g. toy-shapes-8, toy-gauss-2d, cifar10)")
    parser.add_argument("--num-tasks", dest="num_tasks", type=int)
    parser.add_argument("--label-ratio", dest="label_ratio", type=float)
    parser.add_argument("--method", choices=METHODS)
    parser.add_argument("--ablation", action="append", choices=ABLATIONS,
                        help="repeatable; only valid with the joint replay method")
    parser.add_argument("--output-dir", dest="output_dir")
    parser.add_argument("--seeds", help="comma-separated master seeds")
    parser.add_argument("--per-class-train", dest="per_class_train", type=int)
    parser.add_argument("--per-class-test", dest="per_class_test", type=int)
    parser.add_argument("--num-classes", dest="num_classes", type=int)
    group = parser.add_argument_group("training overrides")
    for name, typ in _TRAIN_FIELD_TYPES.items():
        if name == "seed":
            continue
        flag = "--" + name.replace("_", "-")
        if name == "channels":
            group.add_argument(flag, dest=f"train_{name}", type=_parse_channels)
        elif typ in ("bool", bool):
            group.add_argument(flag, dest=f"train_{name}", type=lambda s: s.lower() == "true")
        elif typ in ("int", int):
            group.add_argument(flag, dest=f"train_{name}", type=int)
        elif typ in ("float", float):
            group.add_argument(flag, dest=f"train_{name}", type=float)
        else:
            group.add_argument(flag, dest=f"train_{name}")


def _cmd_run(args):
    config = _build_experiment_config(args)
    report = experiments.run(config)
    print(report.to_json())
    print(f"# experiment dir: {config.experiment_dir()}", file=sys.stderr)
    return 0


def _cmd_sweep(args):
    config = _build_experiment_config(args)
    betas = [float(b) for b in args.betas.split(",")]
    table = experiments.beta_sweep(config, betas)
    print(json.dumps(table, indent=2))
    return 0


def _cmd_report(args):
    written = experiments.render_report(args.run_dir)
    for path in written:
        print(path)
    return 0


def _cmd_sample(args):
    import torch

    model, schedule, _ = load_checkpoint(args.checkpoint)
    model.eval()
    gen = torch_generator(args.seed)
    images = ddim_sample(model, schedule, args.ddim_steps, args.num,
                         tuple(model.config.image_shape), generator=gen)
    payload = {"images": images}
    if model.classifier is not None:
        with torch.no_grad():
            payload["labels"] = model.classify(images).logits.argmax(dim=1)
    torch.save(payload, args.out)
    print(args.out)
    return 0


def _cmd_probe(args):
    config = experiments.ExperimentConfig(
        dataset_id=args.dataset_id, num_tasks=args.num_tasks,
        per_class_train=args.per_class_train, per_class_test=args.per_class_test)
    stream = experiments.build_stream(config, args.seed)
    root = Path(args.checkpoints)
    models = []
    for tau in range(1, args.num_tasks + 1):
        model, _, _ = load_checkpoint(root / f"task_{tau}" / "global.ckpt")
        model.eval()
        models.append(model)
    task1 = stream.tasks[0]
    result = {
        "drift_h_space": knn_drift_probe(models, task1, k=args.k, feature_source=H_SPACE),
        "drift_classifier_penultimate": knn_drift_probe(
            models, task1, k=args.k, feature_source=CLASSIFIER_PENULTIMATE),
        "linear_probe_task1": linear_probe(models[-1], task1),
    }
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def build_parser():
    parser = _Parser(prog="diffreplay",
                     description="Continual learning with a self-replaying joint "
                                 "diffusion classifier.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config")
    _add_experiment_arguments(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a beta sweep around a base config")
    _add_experiment_arguments(p_sweep)
    p_sweep.add_argument("--betas", required=True, help="comma-separated beta values")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_report = sub.add_parser("report", help="render plots/tables for a finished run")
    p_report.add_argument("run_dir")
    p_report.set_defaults(func=_cmd_report)

    p_sample = sub.add_parser("sample", help="generate images from a checkpoint")
    p_sample.add_argument("--checkpoint", required=True)
    p_sample.add_argument("--num", type=int, default=64)
    p_sample.add_argument("--ddim-steps", dest="ddim_steps", type=int, default=40)
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.add_argument("--out", default="samples.pt")
    p_sample.set_defaults(func=_cmd_sample)

    p_probe = sub.add_parser("probe", help="representation probes over run checkpoints")
    p_probe.add_argument("--checkpoints", required=True,
                         help="directory holding task_*/global.ckpt")
    p_probe.add_argument("--dataset-id", dest="dataset_id", required=True)
    p_probe.add_argument("--num-tasks", dest="num_tasks", type=int, required=True)
    p_probe.add_argument("--seed", type=int, default=0)
    p_probe.add_argument("--k", type=int, default=5)
    p_probe.add_argument("--per-class-train", dest="per_class_train", type=int, default=256)
    p_probe.add_argument("--per-class-test", dest="per_class_test", type=int, default=128)
    p_probe.set_defaults(func=_cmd_probe)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args) or 0
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - surface anything else as runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
