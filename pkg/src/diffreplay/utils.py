"""Shared helpers: seed derivation, content hashing, parameter accounting."""

import hashlib
import json

import torch


def derive_seed(master: int, *tags) -> int:
    """Stable 63-bit child seed from a master seed and a tag path.

    One master seed fans out into independent sub-seeds for data splits,
    initialization, noise draws and augmentation, so that resuming a run
    mid-stream reproduces the exact same random streams per stage.
    """
    for tag in tags:
        if not isinstance(tag, (str, int)):
            raise TypeError(f"seed tags must be str or int, got {type(tag).__name__}")
    key = ":".join([str(int(master))] + [str(t) for t in tags])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & (2**63 - 1)


def torch_generator(seed: int, device="cpu") -> torch.Generator:
    gen = torch.Generator(device=device)
    gen.manual_seed(int(seed))
    return gen


def spawn_seed(generator: torch.Generator) -> int:
    """Draw a fresh sub-seed from a torch generator."""
    return int(torch.randint(0, 2**62, (1,), generator=generator).item())


def param_hash(module: torch.nn.Module) -> str:
    """Content hash of all parameters and buffers; detects any mutation."""
    h = hashlib.sha256()
    state = module.state_dict()
    for name in sorted(state):
        h.update(name.encode("utf-8"))
        tensor = state[name].detach().cpu().contiguous()
        h.update(str(tensor.dtype).encode("utf-8"))
        h.update(tensor.numpy().tobytes())
    return h.hexdigest()


def count_parameters(module: torch.nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    """Short content hash of a JSON-serializable config."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:12]
