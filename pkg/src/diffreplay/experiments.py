"""Config-driven experiment harness: named methods and ablations, per-seed
orchestration with idempotent resume, the beta sweep, and report rendering.
"""

from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np

from .data import build_class_incremental_splits, subsample_labels
from .metrics import MetricsReport
from .trainer import (ABLATIONS, JOINT_ORACLE, JOINT_REPLAY, METHODS, TrainConfig,
                      load_checkpoint, run_task_sequence)
from .utils import canonical_json, config_hash, derive_seed


@dataclass
class ExperimentConfig:
    dataset_id: str = "toy-shapes-8"
    num_tasks: int = 5
    label_ratio: float = 1.0
    method: str = JOINT_REPLAY
    ablations: tuple = ()
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs"
    seeds: tuple = (0,)
    per_class_train: int = 256
    per_class_test: int = 128
    num_classes: int = 0  # 0 -> dataset default
    shuffle_classes: bool = False

    def validate(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        unknown = set(self.ablations) - set(ABLATIONS)
        if unknown:
            raise ValueError(f"unknown ablations {sorted(unknown)}; choose from {ABLATIONS}")
        if self.ablations and self.method != JOINT_REPLAY:
            raise ValueError("ablation flags are only valid with the joint replay method")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if not 0.0 < self.label_ratio <= 1.0:
            raise ValueError(f"label_ratio must lie in (0, 1], got {self.label_ratio}")
        self.train.validate()
        return self

    def canonical(self):
        """Canonical serializable form; excludes output_dir so moving artifacts
        does not change the run identity."""
        payload = asdict(self)
        payload.pop("output_dir")
        payload["ablations"] = sorted(self.ablations)
        payload["seeds"] = sorted(int(s) for s in self.seeds)
        payload["train"] = self.train.to_dict()
        payload["train"].pop("seed")
        return payload

    def experiment_hash(self):
        return config_hash(self.canonical())

    def experiment_dir(self):
        return Path(self.output_dir) / f"exp-{self.experiment_hash()}"

    def seed_dir(self, seed):
        return self.experiment_dir() / f"seed_{int(seed)}"


def build_stream(config, seed):
    """Materialize the task stream for one seed of an experiment."""
    stream = build_class_incremental_splits(
        config.dataset_id,
        config.num_tasks,
        derive_seed(seed, "data-split"),
        num_classes=config.num_classes or None,
        per_class_train=config.per_class_train,
        per_class_test=config.per_class_test,
        shuffle_classes=config.shuffle_classes,
    )
    if config.label_ratio < 1.0:
        stream = subsample_labels(stream, config.label_ratio, derive_seed(seed, "label-mask"))
    return stream


def _run_one_seed(config, seed):
    seed_dir = config.seed_dir(seed)
    seed_dir.mkdir(parents=True, exist_ok=True)
    canonical = canonical_json(config.canonical())
    config_path = seed_dir / "config.json"
    if config_path.exists():
        if config_path.read_text() != canonical:
            raise ValueError(
                f"{config_path} holds a different config with the same hash "
                f"{config.experiment_hash()}; refusing to overwrite")
    else:
        config_path.write_text(canonical)

    report_path = seed_dir / "report.json"
    if report_path.exists():
        return MetricsReport.from_json(report_path.read_text())

    stream = build_stream(config, seed)
    train_cfg = replace(config.train, seed=seed)
    _, report = run_task_sequence(
        stream, train_cfg, method=config.method, ablations=config.ablations,
        output_dir=seed_dir, run_name="checkpoints", keep_models=False)
    report_path.write_text(report.to_json())
    return report


def _aggregate(config, reports):
    def nanmean(values):
        arr = np.asarray(values, dtype=np.float64)
        return float(np.nanmean(arr)) if not np.all(np.isnan(arr)) else float("nan")

    report = MetricsReport(
        avg_accuracy=float(np.mean([r.avg_accuracy for r in reports])),
        avg_forgetting=float(np.mean([r.avg_forgetting for r in reports])),
        fwt=nanmean([r.fwt for r in reports]),
        bwt=nanmean([r.bwt for r in reports]),
        accuracy_matrix=reports[0].accuracy_matrix,
        task_curves={"per_seed_avg_accuracy": [r.avg_accuracy for r in reports]},
        metadata={
            "method": config.method,
            "ablations": sorted(config.ablations),
            "dataset": config.dataset_id,
            "num_tasks": config.num_tasks,
            "label_ratio": config.label_ratio,
            "seeds": sorted(int(s) for s in config.seeds),
            "experiment_hash": config.experiment_hash(),
            "per_seed_matrices": [r.accuracy_matrix for r in reports],
        },
    )
    if config.method == JOINT_ORACLE:
        report.metadata["role"] = "oracle"
    return report


def run(config):
    """Execute an experiment for every seed, persisting checkpoints and reports.

    Finished seeds are loaded from disk instead of retrained, so reruns (and
    interrupted runs) are cheap. Returns the seed-aggregated report, which is
    also written to the experiment directory.
    """
    config.validate()
    reports = [_run_one_seed(config, seed) for seed in config.seeds]
    aggregate = _aggregate(config, reports)
    config.experiment_dir().mkdir(parents=True, exist_ok=True)
    (config.experiment_dir() / "report.json").write_text(aggregate.to_json())
    return aggregate


def load_phase_models(config, seed):
    """Load the per-phase global model checkpoints of one finished seed run."""
    models = []
    for tau in range(1, config.num_tasks + 1):
        path = config.seed_dir(seed) / "checkpoints" / f"task_{tau}" / "global.ckpt"
        model, _, _ = load_checkpoint(path)
        model.eval()
        models.append(model)
    return models


BASE_BETA = 0.01


def beta_sweep(base, betas):
    """Run the experiment once per beta; report accuracy deltas vs beta=0.01."""
    base.validate()
    if base.method != JOINT_REPLAY:
        raise ValueError("beta sweep applies to the joint replay method")
    base_config = replace(base, train=replace(base.train, beta=BASE_BETA))
    base_acc = run(base_config).avg_accuracy
    table = []
    for beta in betas:
        if beta == BASE_BETA:
            acc = base_acc
        else:
            acc = run(replace(base, train=replace(base.train, beta=float(beta)))).avg_accuracy
        table.append({"beta": float(beta), "avg_accuracy": acc, "delta": acc - base_acc})
    return table


def _render_heatmap(matrix_rows, path, title):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    T = len(matrix_rows)
    grid = np.full((T, T), np.nan)
    for i, row in enumerate(matrix_rows):
        grid[i, : len(row)] = row
    fig, ax = plt.subplots(figsize=(4, 3.2))
    im = ax.imshow(grid, vmin=0, vmax=100, cmap="viridis")
    ax.set_xlabel("task")
    ax.set_ylabel("after phase")
    ax.set_title(title)
    ax.set_xticks(range(T), [str(i + 1) for i in range(T)])
    ax.set_yticks(range(T), [str(i + 1) for i in range(T)])
    for i, row in enumerate(matrix_rows):
        for j, v in enumerate(row):
            ax.text(j, i, f"{v:.0f}", ha="center", va="center", fontsize=7, color="white")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": "diffreplay"})
    plt.close(fig)


def _render_curves(curves, path, xlabel, ylabel):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 3))
    for name, (xs, ys) in curves.items():
        ax.plot(xs, ys, marker="o", markersize=3, label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": "diffreplay"})
    plt.close(fig)


def render_report(run_dir):
    """Render plots and a metrics table from a stored report; pure function of
    the stored records, so rendering twice produces identical files."""
    run_dir = Path(run_dir)
    report_path = run_dir / "report.json"
    if not report_path.exists():
        raise FileNotFoundError(f"no report.json under {run_dir}")
    report = MetricsReport.from_json(report_path.read_text())
    if not report.accuracy_matrix:
        raise ValueError("report carries no accuracy matrix; nothing to render")

    render_dir = run_dir / "render"
    render_dir.mkdir(parents=True, exist_ok=True)
    written = []

    heatmap_path = render_dir / "accuracy_matrix.png"
    _render_heatmap(report.accuracy_matrix, heatmap_path,
                    str(report.metadata.get("method", "run")))
    written.append(heatmap_path)

    lines = [
        "metric                value",
        f"avg_accuracy          {report.avg_accuracy:10.4f}",
        f"avg_forgetting        {report.avg_forgetting:10.4f}",
        f"fwt (DER-style)       {report.fwt:10.4f}",
        f"bwt                   {report.bwt:10.4f}",
        "final row             " + " ".join(f"{v:7.2f}" for v in report.accuracy_matrix[-1]),
    ]
    for name, values in sorted(report.task_curves.items()):
        if all(isinstance(v, (int, float)) for v in values):
            lines.append(f"{name:<21} " + " ".join(f"{float(v):7.2f}" for v in values))
    table_path = render_dir / "metrics.txt"
    table_path.write_text("\n".join(lines) + "\n")
    written.append(table_path)

    drift = {name[len("drift_"):]: (list(range(1, len(vals) + 1)), vals)
             for name, vals in report.task_curves.items() if name.startswith("drift_")}
    if drift:
        drift_path = render_dir / "drift_curves.png"
        _render_curves(drift, drift_path, "phase", "kNN accuracy")
        written.append(drift_path)
    motivation = {name[len("motivation_"):]: (report.metadata.get("motivation_steps", []), vals)
                  for name, vals in report.task_curves.items()
                  if name.startswith("motivation_")}
    if motivation and report.metadata.get("motivation_steps"):
        curve_path = render_dir / "degradation_curves.png"
        _render_curves(motivation, curve_path, "continuation step", "accuracy")
        written.append(curve_path)
    return [str(p) for p in written]
