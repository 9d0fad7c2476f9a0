"""Task-by-task training orchestration: local-stage finetuning, rehearsal
generation, global-stage distillation with warmup gating, checkpointing/resume,
the fine-tuning and continual-joint reference loops, and the joint-vs-separate
degradation experiment.
"""

import json
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import torch
import torch.nn.functional as F

from .augment import DIFFUSION, STRONG, apply_augmentation, make_policy
from .data import UNLABELED, labeled_split
from .diffusion import (NoiseSchedule, diffusion_loss, forward_noise, make_linear_schedule,
                        sample_timesteps)
from .distill import cl_loss, freeze_teacher, kd_joint_loss
from .metrics import AccuracyMatrix, MetricsReport, evaluate_accuracy
from .model import (ConvClassifier, JointModel, JointModelConfig, POOLED_CLASSIFIER,
                    classification_loss, joint_loss)
from .replay import SyntheticDataset, generate_labeled_samples, merge_rehearsal
from .semi import ssl_joint_loss
from .utils import config_hash, derive_seed, spawn_seed, torch_generator

JOINT_REPLAY = "joint_replay"
SEPARATE_REPLAY = "separate_replay"
FINE_TUNING = "fine_tuning"
JOINT_ORACLE = "joint_oracle"
METHODS = (JOINT_REPLAY, SEPARATE_REPLAY, FINE_TUNING, JOINT_ORACLE)

NO_KD = "no_kd"
NO_TWO_STAGE = "no_two_stage"
NO_JOINT = "no_joint"
ABLATIONS = (NO_JOINT, NO_KD, NO_TWO_STAGE)


@dataclass
class TrainConfig:
    """Step budgets, loss scales, and model-size knobs for one run.

    Defaults are desk-scale; the loss-scale ratios follow the published setup
    but alpha/alpha_kd are raised so the classifier trains within the much
    shorter step budgets.
    """

    steps_first_task: int = 1000
    steps_later_tasks: int = 600
    global_steps: int = 0  # 0 -> use steps_later_tasks
    warmup_steps_no_class_loss: int = 100
    lr: float = 2e-4
    weight_decay: float = 0.01
    batch_size: int = 64
    alpha: float = 1.0
    alpha_kd: float = 1.0
    beta: float = 0.01
    quota_per_class: int = 128
    ddim_steps: int = 40
    sample_batch_size: int = 64
    timesteps: int = 400
    beta_start: float = 1e-4
    beta_end: float = 0.02
    tau: float = 0.95
    unlabeled_ratio: int = 7
    augment: bool = False
    augment_global: bool = False
    channels: tuple = (16, 32)
    time_emb_dim: int = 32
    head_hidden_dim: int = 128
    attn_dim: int = 64
    classifier: str = POOLED_CLASSIFIER
    seed: int = 0

    def validate(self):
        steps = self.effective_global_steps
        if min(self.steps_first_task, self.steps_later_tasks) < 1:
            raise ValueError("step budgets must be >= 1")
        if not 0 <= self.warmup_steps_no_class_loss < steps:
            raise ValueError(
                f"warmup ({self.warmup_steps_no_class_loss}) must be < global steps ({steps})")
        for name in ("lr", "alpha", "alpha_kd", "beta", "weight_decay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.batch_size < 1 or self.quota_per_class < 1 or self.ddim_steps < 1:
            raise ValueError("batch_size, quota_per_class, ddim_steps must be >= 1")
        if self.ddim_steps > self.timesteps:
            raise ValueError("ddim_steps cannot exceed the schedule length")
        return self

    @property
    def effective_global_steps(self):
        return self.global_steps if self.global_steps > 0 else self.steps_later_tasks

    def to_dict(self):
        payload = asdict(self)
        payload["channels"] = list(self.channels)
        return payload

    def model_config(self, image_shape, num_classes):
        return JointModelConfig(
            image_shape=tuple(image_shape),
            num_classes=num_classes,
            channels=tuple(self.channels),
            time_emb_dim=self.time_emb_dim,
            head_hidden_dim=self.head_hidden_dim,
            attn_dim=self.attn_dim,
            classifier=self.classifier,
            alpha=self.alpha,
        )

    def schedule(self):
        return make_linear_schedule(self.timesteps, self.beta_start, self.beta_end)


@dataclass
class TrainerState:
    global_model: JointModel
    task_index: int
    history: list = field(default_factory=list)
    accuracy_matrix: AccuracyMatrix = None
    models: list = field(default_factory=list)


def _draw(images, labels, batch_size, generator):
    idx = torch.randint(0, images.shape[0], (min(batch_size, images.shape[0]),),
                        generator=generator)
    return images[idx], labels[idx]


def _make_optimizer(model, config):
    return torch.optim.AdamW(model.parameters(), lr=config.lr,
                             weight_decay=config.weight_decay)


def train_local(global_model, task, config, schedule, *, steps=None, generator=None):
    """Finetune a copy of the global model on the new task only (the global
    model itself is untouched). Falls back to the semi-supervised objective
    whenever the task carries unlabeled examples."""
    local = global_model.clone()
    if steps is None:
        steps = config.steps_first_task if task.task_index == 1 else config.steps_later_tasks
    if generator is None:
        generator = torch_generator(derive_seed(config.seed, "local", task.task_index))
    opt = _make_optimizer(local, config)
    mask = task.labels != UNLABELED
    unlabeled = task.images[~mask]
    x_lab, y_lab = task.images[mask], task.labels[mask]
    use_ssl = unlabeled.shape[0] > 0
    diff_policy = make_policy(DIFFUSION, task.images.shape[1:]) if config.augment else None
    strong_policy = make_policy(STRONG, task.images.shape[1:]) if config.augment else None

    for _ in range(steps):
        if use_ssl:
            xb, yb = _draw(x_lab, y_lab, config.batch_size, generator)
            ub, _ = _draw(unlabeled, torch.zeros(unlabeled.shape[0], dtype=torch.int64),
                          config.batch_size * config.unlabeled_ratio, generator)
            loss = ssl_joint_loss(local, xb, yb, ub, schedule, alpha=config.alpha,
                                  tau=config.tau, generator=generator).total
        else:
            xb, yb = _draw(task.images, task.labels, config.batch_size, generator)
            x_class = None
            if config.augment:
                x_class = apply_augmentation(xb, strong_policy, spawn_seed(generator))
                xb = apply_augmentation(xb, diff_policy, spawn_seed(generator))
            loss = joint_loss(local, xb, yb, schedule, alpha=config.alpha,
                              generator=generator, x_class=x_class).total
        opt.zero_grad()
        loss.backward()
        opt.step()
    return local


def train_global(
    prev_global,
    local,
    s_old,
    s_new,
    config,
    schedule,
    *,
    task_index,
    steps=None,
    generator=None,
    no_kd=False,
    real_task_data=None,
):
    """Consolidate old and new knowledge into a fresh global model.

    The student starts from the previous global weights (from the local weights
    on task 1, where there is no previous knowledge to preserve) and is
    optimized with the two-teacher distillation objective. During the first
    ``warmup_steps_no_class_loss`` steps every classification term is dropped.

    ``no_kd`` trains on the merged synthetic data with the plain joint loss.
    ``real_task_data`` (a TaskSpec) activates the single-stage variant: no local
    teacher, the new-task term becomes a full-weight joint loss on real data.
    """
    if s_new is None and real_task_data is None:
        raise ValueError("global stage needs rehearsal data or real task data")
    if generator is None:
        generator = torch_generator(derive_seed(config.seed, "global", task_index))
    if steps is None:
        steps = config.effective_global_steps

    if task_index == 1:
        student = (local if local is not None else prev_global).clone()
    else:
        student = prev_global.clone()
    p_f = freeze_teacher(prev_global) if task_index > 1 else None
    p_n = freeze_teacher(local) if local is not None else None
    opt = _make_optimizer(student, config)

    augment_fn = None
    if config.augment_global:
        policy = make_policy(DIFFUSION, student.config.image_shape)
        augment_fn = lambda x: apply_augmentation(x, policy, spawn_seed(generator))
    merged = merge_rehearsal(s_old, s_new) if no_kd else None

    for step in range(steps):
        include_class = step >= config.warmup_steps_no_class_loss
        if no_kd:
            xb, yb = _draw(merged.images, merged.labels, config.batch_size, generator)
            if augment_fn is not None:
                xb = augment_fn(xb)
            loss = joint_loss(student, xb, yb, schedule, alpha=config.alpha,
                              generator=generator, include_classification=include_class).total
        elif real_task_data is not None:
            loss = torch.zeros(())
            if p_f is not None and s_old is not None and len(s_old):
                x_old, _ = _draw(s_old.images, s_old.labels, config.batch_size, generator)
                loss = kd_joint_loss(student, p_f, x_old, schedule, alpha_kd=config.alpha_kd,
                                     generator=generator, include_class_terms=include_class)
            xb, yb = _draw(real_task_data.images, real_task_data.labels,
                           config.batch_size, generator)
            loss = loss + joint_loss(student, xb, yb, schedule, alpha=config.alpha,
                                     generator=generator,
                                     include_classification=include_class).total
            if config.beta > 0 and s_old is not None and len(s_old):
                union_x = torch.cat([s_old.images, real_task_data.images])
                union_y = torch.cat([s_old.labels, real_task_data.labels])
                xu, yu = _draw(union_x, union_y, config.batch_size, generator)
                loss = loss + config.beta * joint_loss(
                    student, xu, yu, schedule, alpha=config.alpha, generator=generator,
                    include_classification=include_class).total
        else:
            loss = cl_loss(student, p_f, p_n, s_old, s_new, schedule, beta=config.beta,
                           alpha=config.alpha, alpha_kd=config.alpha_kd, generator=generator,
                           batch_size=config.batch_size, include_class_terms=include_class,
                           augment_fn=augment_fn)
        opt.zero_grad()
        loss.backward()
        opt.step()

    if p_f is not None:
        p_f.verify_frozen()
    if p_n is not None:
        p_n.verify_frozen()
    return student


def save_checkpoint(path, model, schedule, task_index, kind):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "model_config": asdict(model.config),
        "state_dict": model.state_dict(),
        "schedule": schedule.serializable(),
        "task_index": task_index,
        "kind": kind,
    }, path)
    return str(path)


def load_checkpoint(path):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    cfg = payload["model_config"]
    cfg["image_shape"] = tuple(cfg["image_shape"])
    cfg["channels"] = tuple(cfg["channels"])
    model = JointModel(JointModelConfig(**cfg))
    model.load_state_dict(payload["state_dict"])
    schedule = NoiseSchedule.from_serialized(payload["schedule"])
    return model, schedule, payload["task_index"]


def _labeled_task(task):
    """Restrict a task to its labeled examples (for label-blind baselines)."""
    (images, labels), _ = labeled_split(task.images, task.labels)
    return replace(task, images=images, labels=labels)


def _real_data_fallback(task, quota, generator):
    """Stand-in rehearsal set from real task data, used only when rejection
    sampling returns nothing (possible under degenerate tiny step budgets)."""
    import warnings

    warnings.warn(f"rehearsal sampler produced no samples for task {task.task_index}; "
                  "falling back to real task data")
    (images, labels), _ = labeled_split(task.images, task.labels)
    keep = torch.randperm(images.shape[0], generator=generator)
    keep = keep[: quota * len(task.class_ids)]
    return SyntheticDataset(
        images=images[keep], labels=labels[keep], class_set=tuple(task.class_ids),
        source_task_range=(task.task_index, task.task_index), per_class_quota=quota,
        provenance=("real-fallback",) * keep.shape[0],
        fill_rates={}, warnings=("sampler starvation fallback",))


def _evaluate_row(matrix, model, stream, task_index):
    for j, seen in enumerate(stream.tasks[:task_index]):
        matrix.record(task_index - 1, j,
                      evaluate_accuracy(model, seen.test_images, seen.test_labels))


def _state_path(run_dir):
    return Path(run_dir) / "state.json"


def _write_state(run_dir, cfg_hash, matrix, history, completed):
    payload = {
        "config_hash": cfg_hash,
        "completed_tasks": completed,
        "matrix_rows": [matrix.row(i) for i in range(completed)],
        "history": history,
    }
    _state_path(run_dir).write_text(json.dumps(payload, indent=2, sort_keys=True))


def run_task_sequence(stream, config, *, method=JOINT_REPLAY, ablations=(),
                      output_dir=None, run_name=None, keep_models=True):
    """Train through the whole task stream and return state plus metrics.

    With an ``output_dir`` the run checkpoints after every task and resumes
    from the last completed task on rerun; resuming with a different config is
    an error. ``keep_models`` retains an in-memory frozen snapshot per phase
    (needed by the representation probes).
    """
    config.validate()
    ablations = frozenset(ablations)
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if ablations and method != JOINT_REPLAY:
        raise ValueError("ablation flags only apply to the joint replay method")
    unknown = ablations - set(ABLATIONS)
    if unknown:
        raise ValueError(f"unknown ablations: {sorted(unknown)}")
    if NO_JOINT in ablations:
        return run_separate_replay(stream, config, with_kd=NO_KD not in ablations,
                                   output_dir=output_dir, run_name=run_name)
    if method == SEPARATE_REPLAY:
        return run_separate_replay(stream, config, with_kd=False,
                                   output_dir=output_dir, run_name=run_name)

    schedule = config.schedule()
    num_tasks = len(stream.tasks)
    image_shape = tuple(stream.tasks[0].images.shape[1:])
    model_cfg = config.model_config(image_shape, stream.num_classes)
    cfg_hash = config_hash({"train": config.to_dict(), "method": method,
                            "ablations": sorted(ablations), "dataset": stream.dataset_id,
                            "num_tasks": num_tasks})
    run_dir = None
    if output_dir is not None:
        run_dir = Path(output_dir) / (run_name or f"{method}-{cfg_hash}")
        run_dir.mkdir(parents=True, exist_ok=True)

    matrix = AccuracyMatrix(num_tasks)
    history = []
    models = []
    start_task = 1
    global_model = None

    if run_dir is not None and _state_path(run_dir).exists():
        saved = json.loads(_state_path(run_dir).read_text())
        if saved["config_hash"] != cfg_hash:
            raise ValueError(
                f"resume config mismatch: checkpoint {saved['config_hash']}, current {cfg_hash}")
        completed = saved["completed_tasks"]
        for i, row in enumerate(saved["matrix_rows"]):
            for j, v in enumerate(row):
                matrix.record(i, j, v)
        history = list(saved["history"])
        if completed > 0:
            global_model, _, _ = load_checkpoint(run_dir / f"task_{completed}" / "global.ckpt")
            if keep_models:
                for t in range(1, completed + 1):
                    m, _, _ = load_checkpoint(run_dir / f"task_{t}" / "global.ckpt")
                    m.eval()
                    models.append(m)
        start_task = completed + 1

    if global_model is None:
        torch.manual_seed(derive_seed(config.seed, "init"))
        global_model = JointModel(model_cfg)

    for task in stream.tasks[start_task - 1:]:
        tau = task.task_index
        prev_global = global_model
        local = None
        ckpts = {}

        if method == FINE_TUNING:
            train_task = _labeled_task(task) if stream.label_ratio < 1.0 else task
            gen = torch_generator(derive_seed(config.seed, "finetune", tau))
            steps = config.steps_first_task if tau == 1 else config.steps_later_tasks
            global_model = train_local(prev_global, train_task, config, schedule,
                                       steps=steps, generator=gen)
        elif method == JOINT_ORACLE:
            seen = stream.tasks[:tau]
            pool = replace(
                task,
                images=torch.cat([t.images for t in seen]),
                labels=torch.cat([t.labels for t in seen]),
            )
            if stream.label_ratio < 1.0:
                pool = _labeled_task(pool)
            gen = torch_generator(derive_seed(config.seed, "oracle", tau))
            steps = config.steps_first_task if tau == 1 else config.steps_later_tasks
            global_model = train_local(prev_global, pool, config, schedule,
                                       steps=steps, generator=gen)
        elif NO_TWO_STAGE in ablations:
            s_old = None
            if tau > 1:
                gen_s = torch_generator(derive_seed(config.seed, "sample-old", tau))
                s_old = generate_labeled_samples(
                    prev_global, schedule, stream.classes_up_to(tau - 1),
                    config.quota_per_class, ddim_steps=config.ddim_steps,
                    batch_size=config.sample_batch_size, generator=gen_s,
                    provenance=f"global-{tau - 1}", source_task_range=(1, tau - 1),
                    warn=False)
            gen = torch_generator(derive_seed(config.seed, "global", tau))
            steps = config.steps_first_task if tau == 1 else None
            global_model = train_global(prev_global, None, s_old, None, config, schedule,
                                        task_index=tau, steps=steps, generator=gen,
                                        real_task_data=task)
        else:
            local = train_local(prev_global, task, config, schedule)
            gen_new = torch_generator(derive_seed(config.seed, "sample-new", tau))
            s_new = generate_labeled_samples(
                local, schedule, task.class_ids, config.quota_per_class,
                ddim_steps=config.ddim_steps, batch_size=config.sample_batch_size,
                generator=gen_new, provenance=f"local-{tau}",
                source_task_range=(tau, tau), warn=False)
            if len(s_new) == 0:
                s_new = _real_data_fallback(task, config.quota_per_class, gen_new)
            s_old = None
            if tau > 1:
                gen_old = torch_generator(derive_seed(config.seed, "sample-old", tau))
                s_old = generate_labeled_samples(
                    prev_global, schedule, stream.classes_up_to(tau - 1),
                    config.quota_per_class, ddim_steps=config.ddim_steps,
                    batch_size=config.sample_batch_size, generator=gen_old,
                    provenance=f"global-{tau - 1}", source_task_range=(1, tau - 1),
                    warn=False)
            global_model = train_global(prev_global, local, s_old, s_new, config, schedule,
                                        task_index=tau, no_kd=NO_KD in ablations)

        _evaluate_row(matrix, global_model, stream, tau)
        if run_dir is not None:
            if local is not None:
                ckpts["local"] = save_checkpoint(run_dir / f"task_{tau}" / "local.ckpt",
                                                 local, schedule, tau, "local")
            ckpts["global"] = save_checkpoint(run_dir / f"task_{tau}" / "global.ckpt",
                                              global_model, schedule, tau, "global")
            history.append(ckpts)
            _write_state(run_dir, cfg_hash, matrix, history, tau)
        if keep_models:
            snapshot = global_model.clone()
            snapshot.eval()
            models.append(snapshot)

    report = MetricsReport.from_matrix(matrix, metadata={
        "method": method, "ablations": sorted(ablations), "seed": config.seed,
        "dataset": stream.dataset_id, "config_hash": cfg_hash,
    })
    state = TrainerState(global_model=global_model, task_index=num_tasks,
                         history=history, accuracy_matrix=matrix, models=models)
    return state, report


def _soft_kd_loss(student_logits, teacher_logits):
    probs_teacher = torch.softmax(teacher_logits, dim=1)
    return -(probs_teacher * F.log_softmax(student_logits, dim=1)).sum(dim=1).mean()


def run_separate_replay(stream, config, *, with_kd, output_dir=None, run_name=None):
    """Generative replay with a separate generator and classifier.

    Mirrors the joint pipeline's structure but keeps the diffusion model and
    the classifier as disjoint parameter sets; ``with_kd`` adds denoising and
    soft-target distillation from the previous frozen pair on rehearsal data.
    Returns (TrainerState, MetricsReport) with classifier snapshots per phase.
    """
    config.validate()
    schedule = config.schedule()
    num_tasks = len(stream.tasks)
    image_shape = tuple(stream.tasks[0].images.shape[1:])
    torch.manual_seed(derive_seed(config.seed, "init-separate"))
    g_cfg = config.model_config(image_shape, stream.num_classes)
    generator_model = JointModel(replace(g_cfg, classifier="none"))
    classifier = ConvClassifier(image_shape, stream.num_classes, channels=tuple(config.channels),
                                hidden_dim=config.head_hidden_dim)
    opt_g = _make_optimizer(generator_model, config)
    opt_c = _make_optimizer(classifier, config)

    matrix = AccuracyMatrix(num_tasks)
    models = []
    for task in stream.tasks:
        tau = task.task_index
        steps = config.steps_first_task if tau == 1 else config.steps_later_tasks
        gen = torch_generator(derive_seed(config.seed, "separate", tau))
        synthetic = None
        frozen_g = frozen_c = None
        if tau > 1:
            frozen_g = freeze_teacher(generator_model)
            frozen_c = freeze_teacher(classifier)
            gen_s = torch_generator(derive_seed(config.seed, "separate-sample", tau))
            synthetic = generate_labeled_samples(
                frozen_g, schedule, stream.classes_up_to(tau - 1), config.quota_per_class,
                ddim_steps=config.ddim_steps, batch_size=config.sample_batch_size,
                generator=gen_s, classifier=frozen_c, provenance=f"separate-{tau - 1}",
                source_task_range=(1, tau - 1), warn=False)
            images = torch.cat([task.images, synthetic.images])
            labels = torch.cat([task.labels, synthetic.labels])
        else:
            images, labels = task.images, task.labels

        for _ in range(steps):
            xb, yb = _draw(images, labels, config.batch_size, gen)
            t = sample_timesteps(xb.shape[0], schedule.T, gen)
            noised = forward_noise(xb, t, schedule, gen)
            loss_g = diffusion_loss(noised.eps,
                                    generator_model.predict_noise(noised.x_t, noised.t))
            loss_c = classification_loss(classifier.classify(xb).logits, yb)
            if with_kd and synthetic is not None and len(synthetic):
                xs, _ = _draw(synthetic.images, synthetic.labels, config.batch_size, gen)
                ts = sample_timesteps(xs.shape[0], schedule.T, gen)
                noised_s = forward_noise(xs, ts, schedule, gen)
                loss_g = loss_g + torch.mean(
                    (frozen_g.predict_noise(noised_s.x_t, noised_s.t)
                     - generator_model.predict_noise(noised_s.x_t, noised_s.t)) ** 2)
                loss_c = loss_c + config.alpha_kd * _soft_kd_loss(
                    classifier.classify(xs).logits, frozen_c.classify(xs).logits)
            opt_g.zero_grad()
            loss_g.backward()
            opt_g.step()
            if loss_c.requires_grad:
                opt_c.zero_grad()
                loss_c.backward()
                opt_c.step()

        _evaluate_row(matrix, classifier, stream, tau)
        snapshot = classifier
        models.append(freeze_teacher(snapshot).module)

    report = MetricsReport.from_matrix(matrix, metadata={
        "method": NO_JOINT if with_kd else SEPARATE_REPLAY, "seed": config.seed,
        "dataset": stream.dataset_id,
    })
    state = TrainerState(global_model=classifier, task_index=num_tasks, history=[],
                         accuracy_matrix=matrix, models=models)
    return state, report


def run_motivation_experiment(task, config, *, steps_pretrain, steps_continue, with_kd,
                              seeds, eval_every=50):
    """Joint model vs separate classifier degradation under self-generated data.

    Pretrains both on the real task, samples a labeled synthetic set from the
    joint model, then continues training both on that synthetic data only —
    optionally with distillation from their frozen pretrained selves (the
    classifier receives only the classification term). Returns step-indexed
    accuracy curves on the real test split, averaged over seeds.
    """
    schedule = config.schedule()
    image_shape = tuple(task.images.shape[1:])
    num_classes = int(task.labels.max()) + 1
    eval_steps = list(range(0, steps_continue + 1, eval_every))
    if eval_steps[-1] != steps_continue:
        eval_steps.append(steps_continue)
    joint_curves, cls_curves = [], []

    for seed in seeds:
        torch.manual_seed(derive_seed(seed, "motivation-init"))
        joint = JointModel(config.model_config(image_shape, num_classes))
        classifier = ConvClassifier(image_shape, num_classes,
                                    channels=tuple(config.channels),
                                    hidden_dim=config.head_hidden_dim)
        opt_j = _make_optimizer(joint, config)
        opt_c = _make_optimizer(classifier, config)
        gen = torch_generator(derive_seed(seed, "motivation-pretrain"))
        for _ in range(steps_pretrain):
            xb, yb = _draw(task.images, task.labels, config.batch_size, gen)
            loss_j = joint_loss(joint, xb, yb, schedule, alpha=config.alpha,
                                generator=gen).total
            loss_c = classification_loss(classifier.classify(xb).logits, yb)
            opt_j.zero_grad()
            loss_j.backward()
            opt_j.step()
            opt_c.zero_grad()
            loss_c.backward()
            opt_c.step()

        teacher_j = freeze_teacher(joint)
        teacher_c = freeze_teacher(classifier)
        gen_s = torch_generator(derive_seed(seed, "motivation-sample"))
        synthetic = generate_labeled_samples(
            teacher_j, schedule, sorted(set(task.labels.tolist())), config.quota_per_class,
            ddim_steps=config.ddim_steps, batch_size=config.sample_batch_size,
            generator=gen_s, provenance="motivation", source_task_range=(1, 1), warn=False)

        curve_j = [evaluate_accuracy(joint, task.test_images, task.test_labels)]
        curve_c = [evaluate_accuracy(classifier, task.test_images, task.test_labels)]
        gen_c = torch_generator(derive_seed(seed, "motivation-continue"))
        for step in range(1, steps_continue + 1):
            xb, yb = _draw(synthetic.images, synthetic.labels, config.batch_size, gen_c)
            loss_j = joint_loss(joint, xb, yb, schedule, alpha=config.alpha,
                                generator=gen_c).total
            loss_c = classification_loss(classifier.classify(xb).logits, yb)
            if with_kd:
                loss_j = loss_j + kd_joint_loss(joint, teacher_j, xb, schedule,
                                                alpha_kd=config.alpha_kd, generator=gen_c)
                loss_c = loss_c + config.alpha_kd * _soft_kd_loss(
                    classifier.classify(xb).logits, teacher_c.classify(xb).logits)
            opt_j.zero_grad()
            loss_j.backward()
            opt_j.step()
            opt_c.zero_grad()
            loss_c.backward()
            opt_c.step()
            if step in eval_steps:
                curve_j.append(evaluate_accuracy(joint, task.test_images, task.test_labels))
                curve_c.append(evaluate_accuracy(classifier, task.test_images,
                                                 task.test_labels))
        joint_curves.append(curve_j)
        cls_curves.append(curve_c)

    def mean_curve(curves):
        return [float(sum(c[i] for c in curves)) / len(curves)
                for i in range(len(curves[0]))]

    joint_mean = mean_curve(joint_curves)
    cls_mean = mean_curve(cls_curves)
    return {
        "steps": eval_steps,
        "joint": joint_mean,
        "classifier": cls_mean,
        "joint_drop": joint_mean[0] - joint_mean[-1],
        "classifier_drop": cls_mean[0] - cls_mean[-1],
        "with_kd": with_kd,
    }
