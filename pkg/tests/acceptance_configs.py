"""Frozen experiment configurations backing the acceptance tests.

These are shared between the acceptance suite and any ad-hoc reruns so that the
content-addressed run cache under .cache/ is reused instead of recomputed.
"""

import os

from diffreplay.experiments import ExperimentConfig
from diffreplay.trainer import TrainConfig

CACHE_ROOT = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), ".cache")
ACCEPT_DIR = os.path.join(CACHE_ROOT, "acceptance")
REPEAT_DIR = os.path.join(CACHE_ROOT, "acceptance-repeat")

SPLIT_SEEDS = (0, 1)


def shapes_train_config(**overrides):
    """Desk-scale training recipe for the 8x8 shapes benchmark."""
    kwargs = dict(
        steps_first_task=800,
        steps_later_tasks=500,
        global_steps=800,
        warmup_steps_no_class_loss=100,
        lr=1e-3,
        weight_decay=0.01,
        batch_size=64,
        alpha=1.0,
        alpha_kd=1.0,
        beta=0.01,
        quota_per_class=128,
        ddim_steps=40,
        sample_batch_size=128,
        timesteps=400,
        channels=(16, 32),
        time_emb_dim=32,
        head_hidden_dim=128,
        classifier="pooled",
    )
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


def split_benchmark_config(method="joint_replay", ablations=(), output_dir=ACCEPT_DIR):
    return ExperimentConfig(
        dataset_id="toy-shapes-8",
        num_tasks=5,
        method=method,
        ablations=tuple(ablations),
        train=shapes_train_config(),
        output_dir=output_dir,
        seeds=SPLIT_SEEDS,
        per_class_train=256,
        per_class_test=128,
    )


SPLIT_BENCHMARK = {
    "full": split_benchmark_config(),
    "no_kd": split_benchmark_config(ablations=("no_kd",)),
    "no_two_stage": split_benchmark_config(ablations=("no_two_stage",)),
    "no_joint": split_benchmark_config(ablations=("no_joint",)),
    "fine_tuning": split_benchmark_config(method="fine_tuning"),
    "oracle": split_benchmark_config(method="joint_oracle"),
}

REPEAT_RUN = split_benchmark_config(output_dir=REPEAT_DIR)


def gauss_train_config(**overrides):
    """Recipe for the 2-D Gaussian mixture experiments."""
    kwargs = dict(
        steps_first_task=5000,
        steps_later_tasks=1500,
        global_steps=1500,
        warmup_steps_no_class_loss=50,
        lr=1e-3,
        weight_decay=0.01,
        batch_size=128,
        alpha=1.0,
        alpha_kd=1.0,
        beta=0.01,
        quota_per_class=256,
        ddim_steps=50,
        sample_batch_size=512,
        timesteps=400,
        channels=(32, 64),
        time_emb_dim=32,
        head_hidden_dim=64,
        classifier="pooled",
    )
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


# Single-task sampler-fidelity model: trained with train_local for exactly
# steps_first_task steps on a two-mode mixture, checkpoint cached by hash.
GAUSS_FIDELITY_TRAIN = gauss_train_config(seed=0)
GAUSS_FIDELITY_NUM_CLASSES = 2
GAUSS_FIDELITY_PER_CLASS = 2048

SSL_TRAIN = gauss_train_config(
    steps_first_task=700,
    steps_later_tasks=500,
    global_steps=600,
    quota_per_class=192,
    unlabeled_ratio=3,
    channels=(16, 32),
)

SSL_JOINT = ExperimentConfig(
    dataset_id="toy-gauss-2d",
    num_tasks=2,
    label_ratio=0.1,
    method="joint_replay",
    train=SSL_TRAIN,
    output_dir=ACCEPT_DIR,
    seeds=(0,),
    per_class_train=512,
    per_class_test=256,
)

SSL_FINE_TUNING = ExperimentConfig(
    dataset_id="toy-gauss-2d",
    num_tasks=2,
    label_ratio=0.1,
    method="fine_tuning",
    train=SSL_TRAIN,
    output_dir=ACCEPT_DIR,
    seeds=(0,),
    per_class_train=512,
    per_class_test=256,
)

MOTIVATION_TRAIN = shapes_train_config(
    quota_per_class=48,
    ddim_steps=10,
    sample_batch_size=128,
)
MOTIVATION_SEEDS = (0, 1, 2)
MOTIVATION_STEPS_PRETRAIN = 300
MOTIVATION_STEPS_CONTINUE = 2000
MOTIVATION_EVAL_EVERY = 250


def gauss_fidelity_checkpoint_path():
    from diffreplay.utils import config_hash

    key = config_hash({
        "train": GAUSS_FIDELITY_TRAIN.to_dict(),
        "k": GAUSS_FIDELITY_NUM_CLASSES,
        "per_class": GAUSS_FIDELITY_PER_CLASS,
        "kind": "gauss-fidelity",
    })
    return os.path.join(CACHE_ROOT, f"gauss-fidelity-{key}.ckpt")


def gauss_fidelity_stream():
    from diffreplay.data import build_class_incremental_splits
    from diffreplay.utils import derive_seed

    return build_class_incremental_splits(
        "toy-gauss-2d", 1, derive_seed(0, "data-split"),
        num_classes=GAUSS_FIDELITY_NUM_CLASSES,
        per_class_train=GAUSS_FIDELITY_PER_CLASS, per_class_test=512)


def gauss_fidelity_model():
    """Train (or reload) the sampler-fidelity model; returns (model, schedule, task)."""
    import torch

    from diffreplay.model import JointModel
    from diffreplay.trainer import load_checkpoint, save_checkpoint, train_local
    from diffreplay.utils import derive_seed, torch_generator

    cfg = GAUSS_FIDELITY_TRAIN
    stream = gauss_fidelity_stream()
    task = stream.tasks[0]
    path = gauss_fidelity_checkpoint_path()
    if os.path.exists(path):
        model, schedule, _ = load_checkpoint(path)
    else:
        import json
        import time

        schedule = cfg.schedule()
        torch.manual_seed(derive_seed(cfg.seed, "gauss-fidelity-init"))
        model = JointModel(cfg.model_config(tuple(task.images.shape[1:]), stream.num_classes))
        start = time.monotonic()
        model = train_local(model, task, cfg, schedule,
                            generator=torch_generator(derive_seed(cfg.seed, "gauss-fidelity")))
        elapsed = time.monotonic() - start
        os.makedirs(CACHE_ROOT, exist_ok=True)
        save_checkpoint(path, model, schedule, 1, "gauss-fidelity")
        with open(path + ".meta.json", "w") as handle:
            json.dump({"train_seconds": elapsed}, handle)
    model.eval()
    return model, schedule, task


def motivation_cache_path(with_kd):
    from diffreplay.utils import config_hash

    key = config_hash({
        "train": MOTIVATION_TRAIN.to_dict(),
        "steps_pretrain": MOTIVATION_STEPS_PRETRAIN,
        "steps_continue": MOTIVATION_STEPS_CONTINUE,
        "eval_every": MOTIVATION_EVAL_EVERY,
        "seeds": list(MOTIVATION_SEEDS),
        "with_kd": bool(with_kd),
        "kind": "motivation",
    })
    return os.path.join(CACHE_ROOT, f"motivation-{key}.json")


def run_motivation_cached(with_kd):
    import json

    from diffreplay.data import build_class_incremental_splits
    from diffreplay.trainer import run_motivation_experiment

    path = motivation_cache_path(with_kd)
    if os.path.exists(path):
        with open(path) as handle:
            return json.load(handle)
    task = build_class_incremental_splits("toy-shapes-8", 1, 0).tasks[0]
    result = run_motivation_experiment(
        task, MOTIVATION_TRAIN,
        steps_pretrain=MOTIVATION_STEPS_PRETRAIN,
        steps_continue=MOTIVATION_STEPS_CONTINUE,
        with_kd=with_kd, seeds=MOTIVATION_SEEDS,
        eval_every=MOTIVATION_EVAL_EVERY)
    os.makedirs(CACHE_ROOT, exist_ok=True)
    with open(path, "w") as handle:
        json.dump(result, handle)
    return result
