"""Synthetic rehearsal data: unconditional sampling, classifier labeling, and
per-class quota balancing via rejection sampling, plus the classic separate
generator/classifier replay loop used as a baseline.
"""

import warnings as _warnings
from dataclasses import dataclass, field

import torch

from .diffusion import ddim_sample, diffusion_loss, forward_noise, sample_timesteps
from .metrics import AccuracyMatrix, evaluate_accuracy
from .model import classification_loss
from .utils import derive_seed, torch_generator


@dataclass
class SyntheticDataset:
    """Generated images with classifier-assigned labels and fill bookkeeping.

    ``source_task_range`` is the inclusive 1-based span of tasks whose classes
    the dataset covers; ``provenance`` records, per example, which frozen model
    produced it.
    """

    images: torch.Tensor
    labels: torch.Tensor
    class_set: tuple
    source_task_range: tuple
    per_class_quota: int
    provenance: tuple
    fill_rates: dict = field(default_factory=dict)
    warnings: tuple = ()

    def __len__(self):
        return int(self.images.shape[0])

    def class_counts(self):
        return {c: int((self.labels == c).sum()) for c in self.class_set}

    def validate(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images/labels length mismatch")
        if len(self.provenance) != self.images.shape[0]:
            raise ValueError("one provenance entry per example required")
        if len(self) and not set(self.labels.tolist()) <= set(self.class_set):
            raise ValueError("labels outside the declared class set")
        for c, n in self.class_counts().items():
            if n > self.per_class_quota:
                raise ValueError(f"class {c} exceeds quota: {n} > {self.per_class_quota}")
        if len(self) and (self.images.min() < -1.0 - 1e-6 or self.images.max() > 1.0 + 1e-6):
            raise ValueError("images must lie in [-1, 1]")
        return self


def empty_synthetic_dataset(image_shape, source_task_range=(0, 0)):
    return SyntheticDataset(
        images=torch.zeros((0, *image_shape)),
        labels=torch.zeros((0,), dtype=torch.int64),
        class_set=(),
        source_task_range=source_task_range,
        per_class_quota=0,
        provenance=(),
    )


def _unwrap(model_or_teacher):
    return getattr(model_or_teacher, "module", model_or_teacher)


@torch.no_grad()
def generate_labeled_samples(
    model,
    schedule,
    class_set,
    quota_per_class,
    *,
    ddim_steps,
    batch_size=64,
    max_attempts=None,
    generator=None,
    classifier=None,
    provenance="synthetic",
    source_task_range=(0, 0),
    warn=True,
):
    """Fill a per-class quota by rejection sampling from an unconditional sampler.

    Batches are drawn with DDIM, labeled by the classifier's argmax (the model's
    own head unless a separate ``classifier`` is given), and kept only while the
    assigned class is in ``class_set`` and under quota. Stops after
    ``max_attempts`` batches, recording under-filled classes as warnings rather
    than failing.
    """
    if quota_per_class < 1:
        raise ValueError(f"quota_per_class must be >= 1, got {quota_per_class}")
    class_set = tuple(sorted(set(int(c) for c in class_set)))
    if not class_set:
        raise ValueError("class_set must be non-empty")
    sampler = _unwrap(model)
    labeler = _unwrap(classifier) if classifier is not None else sampler
    image_shape = tuple(sampler.config.image_shape)
    needed = quota_per_class * len(class_set)
    if max_attempts is None:
        max_attempts = 20 * max(1, (needed + batch_size - 1) // batch_size)

    counts = {c: 0 for c in class_set}
    kept_images, kept_labels = [], []
    attempts = 0
    while attempts < max_attempts and any(counts[c] < quota_per_class for c in class_set):
        x = ddim_sample(sampler, schedule, ddim_steps, batch_size, image_shape,
                        generator=generator)
        pred = labeler.classify(x).logits.argmax(dim=1)
        for i in range(x.shape[0]):
            c = int(pred[i])
            if c in counts and counts[c] < quota_per_class:
                counts[c] += 1
                kept_images.append(x[i])
                kept_labels.append(c)
        attempts += 1

    if kept_images:
        images = torch.stack(kept_images)
        labels = torch.tensor(kept_labels, dtype=torch.int64)
    else:
        images = torch.zeros((0, *image_shape))
        labels = torch.zeros((0,), dtype=torch.int64)
    fill_rates = {c: counts[c] / quota_per_class for c in class_set}
    notes = tuple(
        f"class {c}: filled {counts[c]}/{quota_per_class}"
        for c in class_set if counts[c] < quota_per_class
    )
    if notes and warn:
        _warnings.warn("quota not reached within max_attempts: " + "; ".join(notes))
    return SyntheticDataset(
        images=images,
        labels=labels,
        class_set=class_set,
        source_task_range=tuple(source_task_range),
        per_class_quota=quota_per_class,
        provenance=(provenance,) * images.shape[0],
        fill_rates=fill_rates,
        warnings=notes,
    ).validate()


def merge_rehearsal(s_old, s_new):
    """Concatenate two rehearsal sets covering disjoint task ranges."""
    if s_old is None or len(s_old) == 0:
        return s_new
    if s_new is None or len(s_new) == 0:
        return s_old
    lo_old, hi_old = s_old.source_task_range
    lo_new, hi_new = s_new.source_task_range
    if hi_old >= lo_new and hi_new >= lo_old:
        raise ValueError(
            f"source task ranges overlap: {s_old.source_task_range} vs {s_new.source_task_range}"
        )
    merged_fill = dict(s_old.fill_rates)
    merged_fill.update(s_new.fill_rates)
    return SyntheticDataset(
        images=torch.cat([s_old.images, s_new.images]),
        labels=torch.cat([s_old.labels, s_new.labels]),
        class_set=tuple(sorted(set(s_old.class_set) | set(s_new.class_set))),
        source_task_range=(min(lo_old, lo_new), max(hi_old, hi_new)),
        per_class_quota=max(s_old.per_class_quota, s_new.per_class_quota),
        provenance=s_old.provenance + s_new.provenance,
        fill_rates=merged_fill,
        warnings=s_old.warnings + s_new.warnings,
    ).validate()


def _train_pair_on(generator_model, classifier_model, images, labels, schedule, steps, lr,
                   batch_size, generator):
    """Joint optimization loop for the separate-model baseline: denoising MSE for
    the generator, cross-entropy for the classifier, both on the same batches."""
    opt_g = torch.optim.AdamW(generator_model.parameters(), lr=lr)
    opt_c = torch.optim.AdamW(classifier_model.parameters(), lr=lr)
    n = images.shape[0]
    for _ in range(steps):
        idx = torch.randint(0, n, (min(batch_size, n),), generator=generator)
        x, y = images[idx], labels[idx]
        t = sample_timesteps(x.shape[0], schedule.T, generator)
        noised = forward_noise(x, t, schedule, generator)
        loss_g = diffusion_loss(noised.eps, generator_model.predict_noise(noised.x_t, noised.t))
        opt_g.zero_grad()
        loss_g.backward()
        opt_g.step()
        loss_c = classification_loss(classifier_model.classify(x).logits, y)
        if loss_c.requires_grad:
            opt_c.zero_grad()
            loss_c.backward()
            opt_c.step()


def baseline_generative_replay(G, C, stream, config, schedule, *, oracle_replay=False):
    """Reference replay loop with separate generator and classifier.

    Trains both on task 1; for every later task, samples a labeled rehearsal set
    from the generator (labels from the classifier) and trains both on the union
    of current real data and rehearsal data. With ``oracle_replay`` the sampled
    set is replaced by real data from earlier tasks, giving an upper-bound run.
    Returns the accuracy matrix of the classifier over all seen tasks.
    """
    num_tasks = len(stream.tasks)
    matrix = AccuracyMatrix(num_tasks)
    for task in stream.tasks:
        idx = task.task_index
        if idx == 1:
            images, labels = task.images, task.labels
            steps = config.steps_first_task
        else:
            prev_classes = stream.classes_up_to(idx - 1)
            gen = torch_generator(derive_seed(config.seed, "baseline-sample", idx))
            if oracle_replay:
                parts = [(p.images, p.labels) for p in stream.tasks[: idx - 1]]
                s_images = torch.cat([p[0] for p in parts])
                s_labels = torch.cat([p[1] for p in parts])
                keep = torch.randperm(s_images.shape[0], generator=gen)
                keep = keep[: config.quota_per_class * len(prev_classes)]
                s_images, s_labels = s_images[keep], s_labels[keep]
            else:
                synthetic = generate_labeled_samples(
                    G, schedule, prev_classes, config.quota_per_class,
                    ddim_steps=config.ddim_steps, generator=gen, classifier=C,
                    provenance=f"baseline-task-{idx}", source_task_range=(1, idx - 1),
                    warn=False,
                )
                s_images, s_labels = synthetic.images, synthetic.labels
            images = torch.cat([task.images, s_images])
            labels = torch.cat([task.labels, s_labels])
            steps = config.steps_later_tasks
        gen = torch_generator(derive_seed(config.seed, "baseline-train", idx))
        _train_pair_on(G, C, images, labels, schedule, steps, config.lr, config.batch_size, gen)
        for j, seen in enumerate(stream.tasks[:idx]):
            matrix.record(idx - 1, j, evaluate_accuracy(C, seen.test_images, seen.test_labels))
    return matrix
