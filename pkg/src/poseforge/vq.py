"""Motion VQ-VAE: temporal conv encoder, codebook quantization, mirror decoder.

The quantization bottleneck uses the straight-through estimator; the codebook
learns from its own loss term (plus a commitment term) rather than EMA so the
whole loss stays expressible as a smooth function of the parameters once the
code assignments are frozen (see ``gradcheck_loss``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import checkpoint as ckpt
from .errors import ConfigError, DataError, NumericError
from .motion_repr import MotionRepr, ReprLayout
from .seeding import seed_parameters

DEFAULT_CODES = 64
DEFAULT_CODE_DIM = 512
DEFAULT_DOWNSAMPLE = 4


@dataclass(frozen=True)
class TokenSequence:
    """Quantized code indices, each in [0, vocab)."""

    indices: tuple
    vocab: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        for i in idx:
            if not (0 <= i < self.vocab):
                raise DataError(f"token {i} out of range [0, {self.vocab})")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    def __add__(self, other: "TokenSequence") -> "TokenSequence":
        if other.vocab != self.vocab:
            raise DataError("cannot concatenate token sequences with different vocabs")
        return TokenSequence(self.indices + other.indices, self.vocab)


@dataclass(frozen=True)
class Codebook:
    """Q learned code vectors of dimension d_code."""

    codes: np.ndarray

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.float64)
        if codes.ndim != 2 or codes.shape[0] < 2:
            raise DataError("codebook must be (Q >= 2, d_code)")
        if not np.isfinite(codes).all():
            raise DataError("codebook has non-finite entries")
        object.__setattr__(self, "codes", codes)

    @property
    def size(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1]


def _nearest_code_indices(latents: torch.Tensor, codes: torch.Tensor) -> torch.Tensor:
    """L2-nearest code per latent; ties resolved to the smallest index."""
    if codes.shape[0] == 0:
        raise DataError("empty codebook")
    d = torch.cdist(latents, codes, p=2.0)
    dmin = d.min(dim=1, keepdim=True).values
    # Weight earlier indices higher so argmax lands on the first minimum.
    q = codes.shape[0]
    pick = (d <= dmin).to(torch.int64) * torch.arange(q, 0, -1, device=d.device)
    return pick.argmax(dim=1)


def quantize(codebook: Codebook, latents: np.ndarray) -> TokenSequence:
    """Map each latent to the index of its L2-nearest code."""
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != codebook.dim:
        raise DataError(f"latents must be (M, {codebook.dim}), got {z.shape}")
    idx = _nearest_code_indices(torch.from_numpy(z), torch.from_numpy(codebook.codes))
    return TokenSequence(tuple(int(i) for i in idx), codebook.size)


class _ResBlock(nn.Module):
    # SiLU keeps the loss smooth in every parameter, which the
    # finite-difference gradient checks rely on.
    def __init__(self, width: int):
        super().__init__()
        self.conv1 = nn.Conv1d(width, width, 3, padding=1)
        self.conv2 = nn.Conv1d(width, width, 1)

    def forward(self, x):
        h = torch.nn.functional.silu(self.conv1(x))
        return x + self.conv2(h)


class MotionVqvae(nn.Module):
    """Encoder/decoder pair around a learned codebook.

    Temporal downsampling factor r must be a power of two; each stage halves
    (encoder) or doubles (decoder) the frame count exactly.
    """

    def __init__(self, layout: ReprLayout, codes: int = DEFAULT_CODES,
                 code_dim: int = DEFAULT_CODE_DIM, width: int = 64,
                 downsample: int = DEFAULT_DOWNSAMPLE,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        stages = int(round(math.log2(downsample))) if downsample > 1 else 0
        if 2 ** stages != downsample or downsample < 1:
            raise ConfigError(f"downsample must be a power of two >= 1, got {downsample}")
        self.layout = layout
        self.downsample = downsample
        self.commitment_weight = 0.25

        enc = [nn.Conv1d(layout.dim, width, 3, padding=1), nn.SiLU()]
        for _ in range(stages):
            enc += [nn.Conv1d(width, width, 4, stride=2, padding=1),
                    _ResBlock(width)]
        enc += [nn.Conv1d(width, code_dim, 3, padding=1)]
        self.encoder = nn.Sequential(*enc)

        dec = [nn.Conv1d(code_dim, width, 3, padding=1), nn.SiLU()]
        for _ in range(stages):
            dec += [_ResBlock(width),
                    nn.ConvTranspose1d(width, width, 4, stride=2, padding=1)]
        dec += [nn.Conv1d(width, layout.dim, 3, padding=1)]
        self.decoder = nn.Sequential(*dec)

        self.codebook = nn.Parameter(torch.empty(codes, code_dim))
        nn.init.normal_(self.codebook, std=0.02)
        # per-feature normalization fitted on the training set
        self.register_buffer("feat_mean", torch.zeros(layout.dim))
        self.register_buffer("feat_std", torch.ones(layout.dim))
        self.to(dtype)

    def set_normalization(self, mean: np.ndarray, std: np.ndarray) -> None:
        dtype = self.feat_mean.dtype
        with torch.no_grad():
            self.feat_mean.copy_(torch.as_tensor(mean, dtype=dtype))
            self.feat_std.copy_(torch.as_tensor(std, dtype=dtype).clamp(min=1e-3))

    @property
    def code_count(self) -> int:
        return self.codebook.shape[0]

    @property
    def code_dim(self) -> int:
        return self.codebook.shape[1]

    def codebook_view(self) -> Codebook:
        return Codebook(self.codebook.detach().cpu().numpy().astype(np.float64))

    def _pad_frames(self, frames: torch.Tensor) -> torch.Tensor:
        # (B, T, D) -> repeat last frame until T divides the downsample factor
        t = frames.shape[1]
        r = self.downsample
        pad = (-t) % r
        if pad:
            frames = torch.cat([frames, frames[:, -1:].expand(-1, pad, -1)], dim=1)
        return frames

    def _normalize(self, frames: torch.Tensor) -> torch.Tensor:
        return (frames - self.feat_mean) / self.feat_std

    def _denormalize(self, frames: torch.Tensor) -> torch.Tensor:
        return frames * self.feat_std + self.feat_mean

    def encode(self, frames: torch.Tensor) -> torch.Tensor:
        """(B, T, D) -> (B, M_ceil, code_dim) latents."""
        x = self._normalize(self._pad_frames(frames)).transpose(1, 2)
        return self.encoder(x).transpose(1, 2)

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        """(B, M, code_dim) -> (B, M*r, D)."""
        out = self.decoder(latents.transpose(1, 2)).transpose(1, 2)
        return self._denormalize(out)

    def decode_normalized(self, latents: torch.Tensor) -> torch.Tensor:
        return self.decoder(latents.transpose(1, 2)).transpose(1, 2)

    def forward_train(self, frames: torch.Tensor):
        """Training pass in normalized feature space; returns
        (recon, z, dec_in, indices, loss parts)."""
        target = self._normalize(self._pad_frames(frames))
        z = self.encode(frames)
        flat = z.reshape(-1, self.code_dim)
        idx = _nearest_code_indices(flat.detach(), self.codebook.detach())
        q = self.codebook[idx].view_as(z)
        dec_in = z + (q - z).detach()  # straight-through
        recon = self.decode_normalized(dec_in)
        loss_recon = torch.mean((recon - target) ** 2)
        loss_codebook = torch.mean((q - z.detach()) ** 2)
        loss_commit = torch.mean((z - q.detach()) ** 2)
        return recon, z, dec_in, idx, (loss_recon, loss_codebook, loss_commit)


def encode_latents(model: MotionVqvae, repr_: MotionRepr) -> np.ndarray:
    """Encode a feature matrix to M latent vectors, M = max(1, T // r).

    The encoder pads to a whole number of windows and the trailing
    padding-dominated latent is cropped off.
    """
    if repr_.layout.dim != model.layout.dim:
        raise DataError(
            f"repr dim {repr_.layout.dim} != model dim {model.layout.dim}")
    t = repr_.t_steps
    m = max(1, t // model.downsample)
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        frames = torch.as_tensor(repr_.frames, dtype=dtype).unsqueeze(0)
        z = model.encode(frames)[0]
    return z[:m].cpu().numpy().astype(np.float64)


def decode_tokens(model: MotionVqvae, tokens: TokenSequence) -> MotionRepr:
    """Look up code vectors and decode to a feature matrix of M*r frames.

    Foot-contact features are clipped into [0, 1]; the decoder itself is
    unconstrained there.
    """
    if len(tokens) < 1:
        raise DataError("token sequence is empty")
    if tokens.vocab != model.code_count:
        raise DataError("token vocab does not match codebook size")
    idx = torch.tensor(tokens.indices, dtype=torch.long)
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        latents = model.codebook[idx].to(dtype).unsqueeze(0)
        out = model.decode(latents)[0].cpu().numpy().astype(np.float64)
    sl = model.layout.sl_contacts
    out[:, sl] = np.clip(out[:, sl], 0.0, 1.0)
    return MotionRepr(out, model.layout)


def gradcheck_loss(model: MotionVqvae, frames: torch.Tensor,
                   frozen_indices: torch.Tensor) -> torch.Tensor:
    """Reconstruction + commitment loss with a frozen code assignment.

    With indices held fixed the loss is smooth in every parameter, so central
    finite differences are valid; the straight-through/stop-gradient
    decomposition used in training is not finite-difference checkable because
    its numeric value and its gradient path intentionally differ.
    """
    target = model._normalize(model._pad_frames(frames))
    z = model.encode(frames)
    q = model.codebook[frozen_indices].view_as(z)
    recon = model.decode_normalized(q)
    return (torch.mean((recon - target) ** 2)
            + model.commitment_weight * torch.mean((z - q) ** 2))


@dataclass
class VqTrainConfig:
    steps: int = 300
    batch_size: int = 16
    lr: float = 8e-3
    commitment_weight: float = 0.25
    reset_interval: int = 50  # steps between dead-code checks ("epoch")
    width: int = 64
    codes: int = DEFAULT_CODES
    code_dim: int = DEFAULT_CODE_DIM
    downsample: int = DEFAULT_DOWNSAMPLE
    grad_clip: float = 1.0
    # >1 shrinks the stored std of root/position channels, which upweights
    # them in the normalized reconstruction loss
    position_bias: float = 1.0
    # optional separate codebook timescale (1.0 = shared learning rate)
    codebook_lr_scale: float = 1.0


def train_vqvae(dataset, config: VqTrainConfig, seed: int,
                layout: ReprLayout | None = None,
                log_every: int = 0) -> tuple:
    """Train on an iterable of MotionRepr; returns (model, per-step losses).

    Deterministic given the seed: init, shuffling and dead-code resets all
    draw from one explicit generator; no global RNG state is touched.
    """
    reprs = list(dataset)
    if not reprs:
        raise DataError("training dataset is empty")
    layout = layout or reprs[0].layout
    t0 = reprs[0].t_steps
    for r in reprs:
        if r.t_steps != t0 or r.layout.dim != layout.dim:
            raise DataError("all training reprs must share T and layout")

    gen = torch.Generator().manual_seed(seed)
    model = MotionVqvae(layout, codes=config.codes, code_dim=config.code_dim,
                        width=config.width, downsample=config.downsample)
    model.commitment_weight = config.commitment_weight
    seed_parameters(model, gen)
    with torch.no_grad():
        model.codebook.copy_(torch.randn(model.codebook.shape, generator=gen,
                                         dtype=model.codebook.dtype) * 0.02)

    stacked = np.stack([r.frames for r in reprs])
    flat = stacked.reshape(-1, layout.dim)
    std = flat.std(axis=0)
    if config.position_bias != 1.0:
        for sl in (layout.sl_rot_vel, layout.sl_lin_vel, layout.sl_root_y,
                   layout.sl_positions):
            std[sl] = std[sl] / config.position_bias
    model.set_normalization(flat.mean(axis=0), std)

    data = torch.as_tensor(stacked, dtype=torch.float32)

    # codebook starts on actual encoder outputs, not blind noise
    with torch.no_grad():
        probe = data[torch.randperm(data.shape[0], generator=gen)[:config.batch_size]]
        lat = model.encode(probe).reshape(-1, model.code_dim)
        pick = torch.randint(lat.shape[0], (model.code_count,), generator=gen)
        jitter = torch.randn((model.code_count, model.code_dim), generator=gen,
                             dtype=lat.dtype) * 0.01
        model.codebook.copy_(lat[pick] + jitter)
    n = data.shape[0]
    net_params = [p for name, p in model.named_parameters() if name != "codebook"]
    opt = torch.optim.Adam(
        [{"params": net_params, "lr": config.lr},
         {"params": [model.codebook],
          "lr": config.lr * config.codebook_lr_scale}])
    losses = []
    usage = torch.zeros(model.code_count, dtype=torch.long)
    order = torch.randperm(n, generator=gen)
    cursor = 0

    for step in range(config.steps):
        take = min(config.batch_size, n)
        if cursor + take > n:
            order = torch.randperm(n, generator=gen)
            cursor = 0
        batch = data[order[cursor:cursor + take]]
        cursor += take

        recon, z, dec_in, idx, (l_rec, l_cb, l_commit) = model.forward_train(batch)
        loss = l_rec + l_cb + config.commitment_weight * l_commit
        if not torch.isfinite(loss):
            raise NumericError(
                f"non-finite loss at step {step}: recon={float(l_rec)} "
                f"codebook={float(l_cb)} commit={float(l_commit)}")
        opt.zero_grad()
        loss.backward()
        if config.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
        opt.step()
        losses.append(float(loss.detach()))
        usage.scatter_add_(0, idx, torch.ones_like(idx))

        if config.reset_interval and (step + 1) % config.reset_interval == 0:
            dead = (usage == 0).nonzero(as_tuple=True)[0]
            if len(dead) > 0:
                flat = z.detach().reshape(-1, model.code_dim)
                pick = torch.randint(flat.shape[0], (len(dead),), generator=gen)
                noise = torch.randn((len(dead), model.code_dim), generator=gen,
                                    dtype=flat.dtype) * 1e-3
                with torch.no_grad():
                    model.codebook[dead] = flat[pick] + noise
            usage.zero_()
        if log_every and (step + 1) % log_every == 0:
            print(f"vqvae step {step + 1}/{config.steps} loss {losses[-1]:.6f}")

    model.eval()
    return model, losses


def save_vqvae(model: MotionVqvae, path, extra_meta: dict | None = None) -> None:
    layout = model.layout
    meta = {
        "codes": model.code_count,
        "code_dim": model.code_dim,
        "width": model.encoder[0].out_channels,
        "downsample": model.downsample,
        "commitment_weight": model.commitment_weight,
        "layout": {
            "joint_count": layout.joint_count,
            "parents": list(layout.parents),
            "rest_offsets": [list(map(float, o)) for o in layout.rest_offsets],
            "contact_joints": list(layout.contact_joints),
            "contact_threshold": layout.contact_threshold,
            "left_hip": layout.left_hip,
            "right_hip": layout.right_hip,
            "spine": layout.spine,
        },
    }
    if extra_meta:
        meta.update(extra_meta)
    tensors = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    ckpt.save_checkpoint(path, "vqvae", meta, tensors)


def layout_from_meta(m: dict) -> ReprLayout:
    return ReprLayout(
        joint_count=int(m["joint_count"]),
        parents=tuple(m["parents"]),
        rest_offsets=np.array(m["rest_offsets"]),
        contact_joints=tuple(m["contact_joints"]),
        contact_threshold=float(m["contact_threshold"]),
        left_hip=m.get("left_hip"), right_hip=m.get("right_hip"),
        spine=m.get("spine"),
    )


def load_vqvae(path) -> MotionVqvae:
    kind, meta, tensors = ckpt.load_checkpoint(path)
    if kind != "vqvae":
        raise DataError(f"{path}: expected a vqvae checkpoint, got {kind!r}")
    layout = layout_from_meta(meta["layout"])
    model = MotionVqvae(layout, codes=int(meta["codes"]),
                        code_dim=int(meta["code_dim"]), width=int(meta["width"]),
                        downsample=int(meta["downsample"]))
    model.commitment_weight = float(meta["commitment_weight"])
    state = {k: torch.as_tensor(v) for k, v in tensors.items()}
    model.load_state_dict(state)
    model.eval()
    return model
