"""Semi-supervised local-stage extension: confidence-thresholded pseudo-labels
from weakly augmented views, a consistency loss on strongly augmented views, and
the combined objective whose diffusion term consumes labeled and unlabeled
images alike.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .augment import WEAK, STRONG, apply_augmentation, make_policy
from .diffusion import diffusion_loss, forward_noise, sample_timesteps
from .model import classification_loss
from .utils import spawn_seed

DEFAULT_TAU = 0.95


@dataclass
class PseudoLabelBatch:
    """Weak-view predictions with their confidence mask at threshold tau."""

    weak_probs: torch.Tensor
    hard_labels: torch.Tensor
    mask: torch.Tensor
    tau: float

    def retained_fraction(self):
        return float(self.mask.float().mean()) if self.mask.numel() else 0.0

    def validate(self):
        max_probs = self.weak_probs.max(dim=1)
        if not torch.equal(self.mask, max_probs.values >= self.tau):
            raise ValueError("mask inconsistent with max-probability threshold")
        if not torch.equal(self.hard_labels, self.weak_probs.argmax(dim=1)):
            raise ValueError("hard labels are not the argmax of weak_probs")
        return self


def pseudo_label(model, u0, tau=DEFAULT_TAU, generator=None):
    """Classify weakly augmented unlabeled images; keep argmax labels whose
    confidence reaches tau (boundary included)."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    policy = make_policy(WEAK, u0.shape[1:])
    weak = apply_augmentation(u0, policy, spawn_seed(generator))
    with torch.no_grad():
        probs = torch.softmax(model.classify(weak).logits, dim=1)
    max_probs, hard = probs.max(dim=1)
    return PseudoLabelBatch(weak_probs=probs, hard_labels=hard,
                            mask=max_probs >= tau, tau=tau)


def ssl_loss(model, plb, u0, generator=None):
    """Cross-entropy of strong-view predictions against retained pseudo-labels.

    Masked-out examples contribute zero and the mean runs over the full
    unlabeled batch, so an all-masked batch gives exactly 0.
    """
    if plb.mask.shape[0] != u0.shape[0]:
        raise ValueError("pseudo-label batch does not match the unlabeled batch")
    if u0.shape[0] == 0:
        return torch.zeros(())
    policy = make_policy(STRONG, u0.shape[1:])
    strong = apply_augmentation(u0, policy, spawn_seed(generator))
    logits = model.classify(strong).logits
    per_example = F.cross_entropy(logits, plb.hard_labels, reduction="none")
    return (per_example * plb.mask.to(per_example.dtype)).mean()


@dataclass
class SSLLossOutput:
    total: torch.Tensor
    diffusion: torch.Tensor
    classification: torch.Tensor
    consistency: torch.Tensor
    retained_fraction: float


def ssl_joint_loss(model, x0, labels, u0, schedule, *, alpha=None, tau=DEFAULT_TAU,
                   generator=None):
    """Combined semi-supervised objective for local-stage training.

    Diffusion MSE over the concatenation of labeled and unlabeled images, plus
    alpha times both the supervised cross-entropy and the pseudo-label
    consistency term. With an empty unlabeled batch this consumes the generator
    exactly like joint_loss and matches its value.
    """
    alpha = model.config.alpha if alpha is None else alpha
    union = torch.cat([x0, u0]) if u0.shape[0] else x0
    t = sample_timesteps(union.shape[0], schedule.T, generator).to(union.device)
    noised = forward_noise(union, t, schedule, generator)
    l_diff = diffusion_loss(noised.eps, model.predict_noise(noised.x_t, noised.t))
    l_cls = classification_loss(model.classify(x0).logits, labels)
    if u0.shape[0]:
        plb = pseudo_label(model, u0, tau, generator)
        l_ssl = ssl_loss(model, plb, u0, generator)
        retained = plb.retained_fraction()
    else:
        l_ssl = torch.zeros((), dtype=x0.dtype, device=x0.device)
        retained = 0.0
    total = l_diff + alpha * l_cls + alpha * l_ssl
    return SSLLossOutput(total=total, diffusion=l_diff, classification=l_cls,
                         consistency=l_ssl, retained_fraction=retained)
