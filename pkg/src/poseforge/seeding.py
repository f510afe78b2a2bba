"""Deterministic seed derivation and parameter initialization.

All randomness in the package flows from explicit seeds through these
helpers; nothing reads or writes global RNG state, so results are identical
across runs, platforms, and worker counts.
"""

from __future__ import annotations

import hashlib

import torch


def stable_hash(*parts) -> int:
    """64-bit hash of the given parts, stable across processes and platforms."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(base_seed: int, *scope) -> int:
    """Derive an independent sub-seed for a named scope."""
    return stable_hash(base_seed, *scope) & 0x7FFFFFFF


def seed_parameters(module: torch.nn.Module, generator: torch.Generator,
                    std: float | None = None) -> None:
    """Init weight matrices N(0, 1/sqrt(fan_in)) (or a fixed std when given),
    biases and other 1-d params zero, all from one explicit generator.

    Fan-in scaling keeps activations alive through plain conv stacks, where a
    small fixed std would shrink the signal exponentially with depth.
    """
    with torch.no_grad():
        for p in module.parameters():
            if p.ndim > 1:
                scale = std if std is not None else (
                    1.0 / (p.numel() / p.shape[0]) ** 0.5)
                p.copy_(torch.randn(p.shape, generator=generator,
                                    dtype=p.dtype) * scale)
            else:
                p.zero_()
