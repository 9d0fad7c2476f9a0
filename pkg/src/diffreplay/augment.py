"""The three augmentation policies: diffusion, weak, and strong.

All policies take batches in [-1, 1], work internally in [0, 1], and end by
renormalizing to [-1, 1]. Randomness comes from an explicit per-call seed, so
augmentation is a pure function of (batch, policy, seed). Point datasets
(1x1 spatial) get identity policies: photometric/geometric ops are undefined
for them.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .utils import torch_generator

DIFFUSION = "diffusion"
WEAK = "weak"
STRONG = "strong"
POLICY_KINDS = (DIFFUSION, WEAK, STRONG)
OUTPUT_RANGE = (-1.0, 1.0)


@dataclass(frozen=True)
class AugmentationPolicy:
    kind: str
    ops: tuple
    num_rand_ops: int = 2
    magnitude: int = 10


def make_policy(kind, image_shape):
    """Build the policy for one of the three kinds, adapted to the data shape."""
    if kind not in POLICY_KINDS:
        raise ValueError(f"unknown policy kind {kind!r}")
    _, h, w = image_shape
    if h * w == 1:  # point data: nothing to flip or crop
        return AugmentationPolicy(kind=kind, ops=("normalize",))
    if kind == "diffusion":
        ops = ("hflip", "resized_crop", "normalize")
    elif kind == "weak":
        ops = ("hflip", "shift_crop", "normalize")
    else:
        ops = ("hflip", "shift_crop", "randaugment", "normalize")
    return AugmentationPolicy(kind=kind, ops=ops)


def apply_augmentation(batch, policy, seed):
    """Apply a policy to a batch ([-1,1] in, [-1,1] out), deterministically per seed."""
    if batch.dim() != 4:
        raise ValueError(f"expected (B,C,H,W) batch, got shape {tuple(batch.shape)}")
    gen = torch_generator(seed)
    x = (batch.clone() + 1.0) * 0.5
    for op in policy.ops:
        if op == "hflip":
            x = _hflip(x, gen)
        elif op == "shift_crop":
            x = _shift_crop(x, gen)
        elif op == "resized_crop":
            x = _resized_crop(x, gen)
        elif op == "randaugment":
            x = _randaugment(x, policy.num_rand_ops, policy.magnitude, gen)
        elif op == "normalize":
            x = (x * 2.0 - 1.0).clamp(*OUTPUT_RANGE)
        else:
            raise ValueError(f"unknown augmentation op {op!r}")
    return x


def _hflip(x, gen):
    flip = torch.rand(x.shape[0], generator=gen) < 0.5
    if flip.any():
        x[flip] = torch.flip(x[flip], dims=[-1])
    return x


def _shift_crop(x, gen, pad=1):
    """Random pad-and-crop translation by at most ``pad`` pixels."""
    b, _, h, w = x.shape
    padded = F.pad(x, (pad, pad, pad, pad), mode="replicate")
    dy = torch.randint(0, 2 * pad + 1, (b,), generator=gen)
    dx = torch.randint(0, 2 * pad + 1, (b,), generator=gen)
    out = torch.empty_like(x)
    for oy in range(2 * pad + 1):
        for ox in range(2 * pad + 1):
            sel = (dy == oy) & (dx == ox)
            if sel.any():
                out[sel] = padded[sel, :, oy : oy + h, ox : ox + w]
    return out


def _resized_crop(x, gen, min_scale=0.75):
    """Random square crop at scale >= min_scale, resized back to full size."""
    b, _, h, w = x.shape
    scales = min_scale + (1.0 - min_scale) * torch.rand(b, generator=gen)
    crop_h = (scales * h).round().long().clamp(1, h)
    out = torch.empty_like(x)
    for size in crop_h.unique():
        sel = crop_h == size
        ch = int(size)
        cw = max(1, int(round(ch * w / h)))
        top = torch.randint(0, h - ch + 1, (int(sel.sum()),), generator=gen)
        left = torch.randint(0, w - cw + 1, (int(sel.sum()),), generator=gen)
        crops = []
        for i, idx in enumerate(torch.nonzero(sel, as_tuple=True)[0]):
            crops.append(x[idx : idx + 1, :, top[i] : top[i] + ch, left[i] : left[i] + cw])
        resized = F.interpolate(torch.cat(crops), size=(h, w), mode="bilinear", align_corners=False)
        out[sel] = resized
    return out.clamp(0.0, 1.0)


# ---------------------------------------------------------------------------
# tensor RandAugment (operates on a single image in [0, 1])
# ---------------------------------------------------------------------------

_MAX_MAGNITUDE = 30.0


def _op_identity(img, frac, gen):
    return img


def _op_autocontrast(img, frac, gen):
    lo = img.amin(dim=(-2, -1), keepdim=True)
    hi = img.amax(dim=(-2, -1), keepdim=True)
    span = (hi - lo).clamp_min(1e-6)
    return torch.where(hi - lo > 1e-6, (img - lo) / span, img)


def _signed(frac, gen):
    sign = 1.0 if torch.rand((), generator=gen) < 0.5 else -1.0
    return sign * frac


def _op_brightness(img, frac, gen):
    return (img + _signed(frac, gen) * 0.9).clamp(0.0, 1.0)


def _op_contrast(img, frac, gen):
    mean = img.mean(dim=(-2, -1), keepdim=True)
    factor = 1.0 + _signed(frac, gen) * 0.9
    return (mean + (img - mean) * factor).clamp(0.0, 1.0)


def _op_solarize(img, frac, gen):
    threshold = 1.0 - 0.9 * frac
    return torch.where(img >= threshold, 1.0 - img, img)


def _op_posterize(img, frac, gen):
    levels = max(2, int(round(8 - 6 * frac)))
    return torch.floor(img * levels).clamp(0, levels - 1) / (levels - 1)


def _op_sharpness(img, frac, gen):
    kernel = torch.full((img.shape[0], 1, 3, 3), 1.0 / 9.0, dtype=img.dtype)
    blurred = F.conv2d(F.pad(img.unsqueeze(0), (1, 1, 1, 1), mode="replicate"),
                       kernel, groups=img.shape[0]).squeeze(0)
    return (img + _signed(frac, gen) * 0.9 * (img - blurred)).clamp(0.0, 1.0)


def _op_translate_x(img, frac, gen):
    shift = int(round(_signed(frac, gen) * 0.45 * img.shape[-1]))
    return torch.roll(img, shifts=shift, dims=-1)


def _op_translate_y(img, frac, gen):
    shift = int(round(_signed(frac, gen) * 0.45 * img.shape[-2]))
    return torch.roll(img, shifts=shift, dims=-2)


def _op_cutout(img, frac, gen):
    h, w = img.shape[-2:]
    size = max(1, int(round(0.5 * frac * min(h, w))))
    top = int(torch.randint(0, h - size + 1, (), generator=gen))
    left = int(torch.randint(0, w - size + 1, (), generator=gen))
    out = img.clone()
    out[..., top : top + size, left : left + size] = 0.5
    return out


RANDAUGMENT_OPS = (
    _op_identity,
    _op_autocontrast,
    _op_brightness,
    _op_contrast,
    _op_solarize,
    _op_posterize,
    _op_sharpness,
    _op_translate_x,
    _op_translate_y,
    _op_cutout,
)


def _randaugment(x, num_ops, magnitude, gen):
    frac = min(magnitude, _MAX_MAGNITUDE) / _MAX_MAGNITUDE
    out = []
    for img in x:
        picks = torch.randint(0, len(RANDAUGMENT_OPS), (num_ops,), generator=gen)
        for pick in picks:
            img = RANDAUGMENT_OPS[int(pick)](img, frac, gen)
        out.append(img)
    return torch.stack(out)
