"""Shared builders and stub models for the test suite."""

import torch

from diffreplay import JointModel, JointModelConfig, make_linear_schedule
from diffreplay.model import ClassifierOutput


def tiny_config(**overrides):
    """A sub-500-parameter joint model config for gradient and identity checks."""
    kwargs = dict(
        image_shape=(1, 4, 4),
        num_classes=2,
        channels=(1, 2),
        time_emb_dim=4,
        head_hidden_dim=3,
        attn_dim=3,
        classifier="pooled",
        alpha=0.7,
    )
    kwargs.update(overrides)
    return JointModelConfig(**kwargs)


def tiny_model(seed=0, dtype=torch.float64, **overrides):
    torch.manual_seed(seed)
    model = JointModel(tiny_config(**overrides))
    return model.to(dtype)


def small_schedule(T=10):
    return make_linear_schedule(T)


def rand_images(n, shape=(1, 4, 4), seed=0, dtype=torch.float64):
    gen = torch.Generator().manual_seed(seed)
    return torch.randn((n, *shape), generator=gen, dtype=dtype).clamp(-1.0, 1.0)


class FixedLogitClassifier(torch.nn.Module):
    """Stub whose classify() returns preset logits regardless of the input."""

    def __init__(self, logits):
        super().__init__()
        self.register_buffer("logits", torch.as_tensor(logits, dtype=torch.float64))

    def classify(self, x, t=None):
        logits = self.logits
        if logits.dim() == 1:
            logits = logits.unsqueeze(0).expand(x.shape[0], -1)
        return ClassifierOutput(logits=logits, penultimate=logits, pooled=logits)


class ZeroNoiseModel(torch.nn.Module):
    """Predicts zero noise; classify() buckets images by their mean pixel."""

    def __init__(self, num_classes=4, scale=8.0, image_shape=(1, 2, 2)):
        super().__init__()
        self.num_classes = num_classes
        self.scale = scale
        self.config = JointModelConfig(
            image_shape=image_shape, num_classes=num_classes,
            channels=(1, 2), time_emb_dim=4, head_hidden_dim=3,
        )
        self.dummy = torch.nn.Parameter(torch.zeros(1))

    def predict_noise(self, x, t):
        return torch.zeros_like(x)

    forward = predict_noise

    def classify(self, x, t=None):
        means = x.mean(dim=tuple(range(1, x.dim())))
        bucket = ((means + 1.0) * 0.5 * self.num_classes).floor().long()
        bucket = bucket.clamp(0, self.num_classes - 1)
        logits = torch.nn.functional.one_hot(bucket, self.num_classes).double() * self.scale
        return ClassifierOutput(logits=logits, penultimate=logits, pooled=logits)

    def clone(self):
        import copy

        return copy.deepcopy(self)


def numerical_gradient(loss_fn, model, eps=1e-5):
    """Central finite differences of loss_fn() w.r.t. every model parameter."""
    grads = []
    with torch.no_grad():
        for p in model.parameters():
            flat = p.view(-1)
            g = torch.zeros_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
                g[i] = (up - down) / (2.0 * eps)
            grads.append(g.view_as(p))
    return grads


def analytic_gradient(loss_fn, model):
    model.zero_grad(set_to_none=True)
    loss = loss_fn()
    loss.backward()
    return [
        p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        for p in model.parameters()
    ]


def max_rel_error(analytic, numeric):
    """Worst-case error relative to the gradient's overall scale.

    Components are compared at their own magnitude, floored at 1e-6 of the
    largest gradient entry so that numerically-zero components (dead paths)
    are held to an absolute rather than a relative standard.
    """
    scale = max(
        max((float(a.abs().max()) for a in analytic if a.numel()), default=0.0),
        max((float(n.abs().max()) for n in numeric if n.numel()), default=0.0),
        1e-12,
    )
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = (a.abs() + n.abs()).clamp_min(1e-6 * scale)
        worst = max(worst, float(((a - n).abs() / denom).max()))
    return worst
