"""Joint diffusion-plus-classifier model.

A small UNet denoiser whose encoder doubles as the feature extractor for a
classifier head. The head consumes the per-level encoder feature maps (spatially
pooled, or via an attention chain), so one set of weights serves both the
generative and the discriminative objective.
"""

import copy
import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import UNLABELED
from .diffusion import diffusion_loss, forward_noise, sample_timesteps

POOLED_CLASSIFIER = "pooled"
ATTENTION_CLASSIFIER = "attention"
NO_CLASSIFIER = "none"


def sinusoidal_embedding(t, dim):
    """Transformer-style sin/cos embedding of integer timesteps; ``dim`` must be even."""
    if dim < 2 or dim % 2 != 0:
        raise ValueError(f"embedding dim must be even and >= 2, got {dim}")
    half = dim // 2
    scale = math.log(10000.0) / max(half - 1, 1)
    freqs = torch.exp(-scale * torch.arange(half, dtype=torch.float64))
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    return emb


class ResidualBlock(nn.Module):
    """3x3 conv residual block with optional additive timestep conditioning."""

    def __init__(self, channels, time_dim=None):
        super().__init__()
        self.norm1 = nn.GroupNorm(1, channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm2 = nn.GroupNorm(1, channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, channels) if time_dim else None

    def forward(self, x, temb=None):
        h = self.conv1(F.silu(self.norm1(x)))
        if self.time_proj is not None and temb is not None:
            h = h + self.time_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


def _downsample_plan(image_shape, num_levels):
    """Which of the num_levels-1 transitions may halve the spatial size."""
    h, w = image_shape[1], image_shape[2]
    plan, sizes = [], [(h, w)]
    for _ in range(num_levels - 1):
        can = min(h, w) >= 2
        plan.append(can)
        if can:
            h, w = (h + 1) // 2, (w + 1) // 2
        sizes.append((h, w))
    return plan, sizes


class UNetEncoder(nn.Module):
    """Conv stem plus a residual block per depth level, downsampling in between."""

    def __init__(self, image_shape, channels, time_dim):
        super().__init__()
        self.stem = nn.Conv2d(image_shape[0], channels[0], 3, padding=1)
        self.blocks = nn.ModuleList(ResidualBlock(c, time_dim) for c in channels)
        plan, self.level_sizes = _downsample_plan(image_shape, len(channels))
        self.downs = nn.ModuleList(
            nn.Conv2d(channels[i], channels[i + 1], 3, stride=2 if plan[i] else 1, padding=1)
            for i in range(len(channels) - 1)
        )

    def forward(self, x, temb):
        """Returns the per-level feature maps, shallow to deep."""
        h = self.stem(x)
        features = []
        for i, block in enumerate(self.blocks):
            h = block(h, temb)
            features.append(h)
            if i < len(self.downs):
                h = self.downs[i](h)
        return features


class UNetDecoder(nn.Module):
    """Mirror of the encoder with skip connections; maps features back to noise."""

    def __init__(self, image_shape, channels, time_dim):
        super().__init__()
        n = len(channels)
        self.ups = nn.ModuleList(
            nn.Conv2d(channels[i + 1], channels[i], 3, padding=1) for i in reversed(range(n - 1))
        )
        self.fuses = nn.ModuleList(
            nn.Conv2d(2 * channels[i], channels[i], 3, padding=1) for i in reversed(range(n - 1))
        )
        self.blocks = nn.ModuleList(
            ResidualBlock(channels[i], time_dim) for i in reversed(range(n - 1))
        )
        self.out_norm = nn.GroupNorm(1, channels[0])
        self.out_conv = nn.Conv2d(channels[0], image_shape[0], 3, padding=1)

    def forward(self, features, temb):
        h = features[-1]
        for j, (up, fuse, block) in enumerate(zip(self.ups, self.fuses, self.blocks)):
            skip = features[-2 - j]
            if h.shape[-2:] != skip.shape[-2:]:
                h = F.interpolate(h, size=skip.shape[-2:], mode="nearest")
            h = up(h)
            h = fuse(torch.cat([h, skip], dim=1))
            h = block(h, temb)
        return self.out_conv(F.silu(self.out_norm(h)))


@dataclass
class ClassifierOutput:
    logits: torch.Tensor
    penultimate: torch.Tensor
    pooled: torch.Tensor


class PoolingClassifier(nn.Module):
    """Spatially pool each level feature map, concatenate, and apply a 2-layer head."""

    def __init__(self, channel_dims, num_classes, hidden_dim=1024):
        super().__init__()
        self.fc1 = nn.Linear(sum(channel_dims), hidden_dim)
        self.act = nn.LeakyReLU()
        self.fc2 = nn.Linear(hidden_dim, num_classes)

    def forward(self, features):
        pooled = torch.cat([f.mean(dim=(2, 3)) for f in features], dim=1)
        hidden = self.act(self.fc1(pooled))
        return ClassifierOutput(logits=self.fc2(hidden), penultimate=hidden, pooled=pooled)


class AttentionClassifier(nn.Module):
    """Chain of single-head scaled dot-product attention blocks over the level features.

    A learned query attends to the shallowest feature map's spatial tokens; the
    attended output becomes the query for the next deeper level, and the final
    query vector feeds the linear head.
    """

    def __init__(self, channel_dims, num_classes, attn_dim=64):
        super().__init__()
        self.attn_dim = attn_dim
        self.query0 = nn.Parameter(torch.randn(attn_dim) * attn_dim**-0.5)
        self.key_projs = nn.ModuleList(nn.Linear(c, attn_dim) for c in channel_dims)
        self.value_projs = nn.ModuleList(nn.Linear(c, attn_dim) for c in channel_dims)
        self.head = nn.Linear(attn_dim, num_classes)

    def forward(self, features):
        batch = features[0].shape[0]
        q = self.query0.expand(batch, -1)
        pooled = torch.cat([f.mean(dim=(2, 3)) for f in features], dim=1)
        for f, kp, vp in zip(features, self.key_projs, self.value_projs):
            tokens = f.flatten(2).transpose(1, 2)
            keys, values = kp(tokens), vp(tokens)
            scores = torch.einsum("bd,bnd->bn", q, keys) / self.attn_dim**0.5
            q = q + torch.einsum("bn,bnd->bd", torch.softmax(scores, dim=1), values)
        return ClassifierOutput(logits=self.head(q), penultimate=q, pooled=pooled)


@dataclass
class JointModelConfig:
    image_shape: tuple = (3, 32, 32)
    num_classes: int = 10
    channels: tuple = (32, 64)
    time_emb_dim: int = 32
    head_hidden_dim: int = 1024
    attn_dim: int = 64
    classifier: str = POOLED_CLASSIFIER
    alpha: float = 0.001

    def validate(self):
        if len(self.image_shape) != 3 or any(s < 1 for s in self.image_shape):
            raise ValueError(f"image_shape must be (C, H, W) positive, got {self.image_shape}")
        if len(self.channels) < 2:
            raise ValueError("need at least two depth levels")
        if self.num_classes < 2 and self.classifier != NO_CLASSIFIER:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.time_emb_dim < 2 or self.time_emb_dim % 2:
            raise ValueError("time_emb_dim must be even and >= 2")
        if self.classifier not in (POOLED_CLASSIFIER, ATTENTION_CLASSIFIER, NO_CLASSIFIER):
            raise ValueError(f"unknown classifier kind {self.classifier!r}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        return self


class JointModel(nn.Module):
    """UNet denoiser with a classifier head reading the encoder's level features."""

    def __init__(self, config):
        super().__init__()
        config.validate()
        self.config = config
        self.time_mlp = nn.Sequential(
            nn.Linear(config.time_emb_dim, config.time_emb_dim),
            nn.SiLU(),
            nn.Linear(config.time_emb_dim, config.time_emb_dim),
        )
        self.encoder = UNetEncoder(config.image_shape, config.channels, config.time_emb_dim)
        self.decoder = UNetDecoder(config.image_shape, config.channels, config.time_emb_dim)
        if config.classifier == POOLED_CLASSIFIER:
            self.classifier = PoolingClassifier(config.channels, config.num_classes,
                                                config.head_hidden_dim)
        elif config.classifier == ATTENTION_CLASSIFIER:
            self.classifier = AttentionClassifier(config.channels, config.num_classes,
                                                  config.attn_dim)
        else:
            self.classifier = None

    def _embed_time(self, t, like):
        emb = sinusoidal_embedding(t, self.config.time_emb_dim).to(like.dtype)
        return self.time_mlp(emb)

    def encode(self, x, t=None):
        if t is None:
            t = torch.zeros(x.shape[0], dtype=torch.int64, device=x.device)
        return self.encoder(x, self._embed_time(t, x))

    def predict_noise(self, x, t):
        temb = self._embed_time(t, x)
        return self.decoder(self.encoder(x, temb), temb)

    def forward(self, x, t):
        return self.predict_noise(x, t)

    def classify(self, x, t=None):
        """Classifier output; by default conditions the encoder on timestep 0."""
        if self.classifier is None:
            raise RuntimeError("model was built without a classifier head")
        return self.classifier(self.encode(x, t))

    def pooled_features(self, x, t=None):
        features = self.encode(x, t)
        return torch.cat([f.mean(dim=(2, 3)) for f in features], dim=1)

    def bottleneck_features(self, x, t=None):
        """Spatially pooled deepest encoder feature map."""
        return self.encode(x, t)[-1].mean(dim=(2, 3))

    def penultimate_features(self, x, t=None):
        return self.classify(x, t).penultimate

    def parameter_groups(self):
        groups = {
            "encoder": list(self.encoder.parameters()) + list(self.time_mlp.parameters()),
            "decoder": list(self.decoder.parameters()),
        }
        if self.classifier is not None:
            groups["classifier"] = list(self.classifier.parameters())
        return groups

    def clone(self):
        return copy.deepcopy(self)


class ConvClassifier(nn.Module):
    """Standalone image classifier with the same conv trunk shape as the encoder.

    It takes (and ignores) a timestep argument so it can stand in wherever a
    time-conditioned classifier is expected.
    """

    def __init__(self, image_shape, num_classes, channels=(32, 64), hidden_dim=1024):
        super().__init__()
        self.encoder = UNetEncoder(image_shape, channels, time_dim=2)
        self.head = PoolingClassifier(channels, num_classes, hidden_dim)
        self.num_classes = num_classes

    def classify(self, x, t=None):
        temb = torch.zeros(x.shape[0], 2, dtype=x.dtype, device=x.device)
        return self.head(self.encoder(x, temb))

    def forward(self, x, t=None):
        return self.classify(x, t).logits

    def penultimate_features(self, x, t=None):
        return self.classify(x, t).penultimate

    def clone(self):
        return copy.deepcopy(self)


def classification_loss(logits, labels):
    """Cross-entropy over the labeled examples; zero if none are labeled."""
    mask = labels != UNLABELED
    if not bool(mask.any()):
        return logits.sum() * 0.0
    return F.cross_entropy(logits[mask], labels[mask])


@dataclass
class JointLossOutput:
    total: torch.Tensor
    diffusion: torch.Tensor
    classification: torch.Tensor


def joint_loss(model, x0, labels, schedule, *, alpha=None, generator=None,
               include_classification=True, x_class=None):
    """Denoising MSE plus alpha-weighted cross-entropy on the clean images.

    Timesteps and noise are drawn from ``generator``, so the value is a
    deterministic function of (model, batch, generator state). ``x_class``
    optionally supplies a differently augmented view for the classifier path
    (the denoiser path always consumes ``x0``).
    """
    alpha = model.config.alpha if alpha is None else alpha
    t = sample_timesteps(x0.shape[0], schedule.T, generator).to(x0.device)
    noised = forward_noise(x0, t, schedule, generator)
    l_diff = diffusion_loss(noised.eps, model.predict_noise(noised.x_t, noised.t))
    if include_classification and model.classifier is not None:
        view = x0 if x_class is None else x_class
        l_cls = classification_loss(model.classify(view).logits, labels)
    else:
        l_cls = torch.zeros((), dtype=x0.dtype, device=x0.device)
    return JointLossOutput(total=l_diff + alpha * l_cls, diffusion=l_diff, classification=l_cls)
