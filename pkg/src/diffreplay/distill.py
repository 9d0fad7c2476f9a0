"""Knowledge-distillation losses and the composed continual-learning objective.

Teachers are frozen snapshots; the same noised batch (x_t, t, eps) feeds both
teacher and student, so a student that equals its teacher incurs exactly zero
denoising distillation loss.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .diffusion import forward_noise, sample_timesteps
from .model import joint_loss
from .utils import param_hash


@dataclass
class TeacherRef:
    """Read-only handle to a frozen teacher model."""

    module: torch.nn.Module
    fingerprint: str

    def predict_noise(self, x, t):
        with torch.no_grad():
            return self.module.predict_noise(x, t)

    def classify(self, x, t=None):
        with torch.no_grad():
            return self.module.classify(x, t)

    def verify_frozen(self):
        """Raise if any teacher parameter changed since the snapshot was taken."""
        current = param_hash(self.module)
        if current != self.fingerprint:
            raise RuntimeError("teacher parameters were modified after freezing")


def freeze_teacher(model):
    """Deep-copy a model into an eval-mode, gradient-free teacher snapshot."""
    frozen = model.clone()
    frozen.eval()
    for p in frozen.parameters():
        p.requires_grad_(False)
    return TeacherRef(module=frozen, fingerprint=param_hash(frozen))


def kd_diffusion_loss(student, teacher, x0, schedule, generator=None):
    """MSE between teacher and student noise predictions on one shared noised batch."""
    t = sample_timesteps(x0.shape[0], schedule.T, generator).to(x0.device)
    noised = forward_noise(x0, t, schedule, generator)
    eps_teacher = teacher.predict_noise(noised.x_t, noised.t)
    eps_student = student.predict_noise(noised.x_t, noised.t)
    return torch.mean((eps_teacher - eps_student) ** 2)


def kd_classification_loss(student, teacher, x0):
    """Soft-target cross-entropy −Σ_k φ^f_k log φ_k, averaged over the batch."""
    probs_teacher = torch.softmax(teacher.classify(x0).logits, dim=1)
    log_probs_student = F.log_softmax(student.classify(x0).logits, dim=1)
    return -(probs_teacher * log_probs_student).sum(dim=1).mean()


def kd_joint_loss(student, teacher, x0, schedule, *, alpha_kd=0.001, generator=None,
                  include_class_terms=True):
    """Denoising distillation plus alpha_kd-weighted soft-target classification."""
    if alpha_kd < 0:
        raise ValueError(f"alpha_kd must be >= 0, got {alpha_kd}")
    loss = kd_diffusion_loss(student, teacher, x0, schedule, generator)
    if include_class_terms and alpha_kd > 0:
        loss = loss + alpha_kd * kd_classification_loss(student, teacher, x0)
    return loss


def _draw_batch(images, labels, size, generator):
    idx = torch.randint(0, images.shape[0], (int(size),), generator=generator)
    return images[idx], labels[idx]


def _split_batch_size(batch_size, n_old, n_new):
    """Sizes for the two KD minibatches, proportional to the dataset sizes."""
    n_from_old = int(round(batch_size * n_old / (n_old + n_new)))
    n_from_old = min(max(n_from_old, 1), batch_size - 1)
    return n_from_old, batch_size - n_from_old


def cl_loss(
    student,
    p_f,
    p_n,
    s_old,
    s_new,
    schedule,
    *,
    beta=0.01,
    alpha=0.001,
    alpha_kd=0.001,
    generator=None,
    batch_size=32,
    include_class_terms=True,
    augment_fn=None,
):
    """One-step estimate of the global continual objective.

    Distills the previous global teacher ``p_f`` on rehearsal data ``s_old`` and
    the local teacher ``p_n`` on current-task data ``s_new``, plus ``beta`` times
    the plain joint loss on a minibatch from their union. ``s_old`` may be None
    or empty on the first task, which drops the ``p_f`` term. Datasets are any
    objects exposing ``images`` and ``labels`` tensors. ``augment_fn`` is applied
    to every drawn image minibatch (teacher and student see the same view).
    """
    n_old = 0 if s_old is None else s_old.images.shape[0]
    n_new = s_new.images.shape[0]
    if n_new == 0:
        raise ValueError("s_new must be non-empty")
    augment_fn = augment_fn or (lambda x: x)

    if n_old > 0:
        b_old, b_new = _split_batch_size(batch_size, n_old, n_new)
        x_old, _ = _draw_batch(s_old.images, s_old.labels, b_old, generator)
        loss = kd_joint_loss(student, p_f, augment_fn(x_old), schedule, alpha_kd=alpha_kd,
                             generator=generator, include_class_terms=include_class_terms)
    else:
        b_new = batch_size
        loss = torch.zeros((), dtype=s_new.images.dtype)

    x_new, _ = _draw_batch(s_new.images, s_new.labels, b_new, generator)
    loss = loss + kd_joint_loss(student, p_n, augment_fn(x_new), schedule, alpha_kd=alpha_kd,
                                generator=generator, include_class_terms=include_class_terms)

    if beta != 0.0:
        if n_old > 0:
            union_images = torch.cat([s_old.images, s_new.images])
            union_labels = torch.cat([s_old.labels, s_new.labels])
        else:
            union_images, union_labels = s_new.images, s_new.labels
        x_u, y_u = _draw_batch(union_images, union_labels, batch_size, generator)
        joint = joint_loss(student, augment_fn(x_u), y_u, schedule, alpha=alpha,
                           generator=generator, include_classification=include_class_terms)
        loss = loss + beta * joint.total
    return loss
