"""Autoregressive prior over motion tokens, conditioned on a text embedding
and a forced token prefix.

The text embedding is projected to a single condition token prepended to the
sequence; generation continues the given prefix until an END token or the
token budget.  A hashed bag-of-words embedder stands in for a learned text
encoder, with a file-backed provider for precomputed vectors.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import checkpoint as ckpt
from .errors import ConfigError, DataError, NumericError
from .geometry import Pose3D
from .motion_repr import MotionSequence, decode_repr, make_initial_repr
from .seeding import seed_parameters
from .skeleton import body_to_motion_joints
from .vq import MotionVqvae, TokenSequence, decode_tokens, encode_latents, quantize

TEXT_DIM = 512


# ---------------------------------------------------------------------------
# Text embeddings


@dataclass(frozen=True)
class TextEmbedding:
    """Unit-norm caption embedding."""

    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        norm = float(np.linalg.norm(v))
        if not np.isfinite(v).all() or abs(norm - 1.0) > 1e-6:
            raise DataError(f"embedding must be unit-norm (got |e| = {norm})")
        object.__setattr__(self, "vector", v)

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def normalize_caption_tokens(caption: str) -> list:
    return _TOKEN_RE.findall(caption.lower())


def caption_key(caption: str) -> str:
    """Stable lookup key for precomputed-embedding files."""
    norm = " ".join(normalize_caption_tokens(caption))
    return hashlib.sha256(norm.encode("utf-8")).hexdigest()


class HashedBagOfWordsEmbedder:
    """Deterministic feature-hashing embedder: token -> signed bucket."""

    def __init__(self, dim: int = TEXT_DIM):
        self.dim = dim

    def embed(self, caption: str) -> np.ndarray:
        tokens = normalize_caption_tokens(caption)
        if not tokens:
            raise DataError("caption has no usable tokens")
        v = np.zeros(self.dim)
        for tok in tokens:
            digest = hashlib.sha256(tok.encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:8], "little") % self.dim
            sign = 1.0 if digest[8] & 1 else -1.0
            v[bucket] += sign
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise DataError("caption hashed to the zero vector")
        return v / norm


class PrecomputedEmbeddingFile:
    """Caption-keyed embedding lookup from a JSON file of key -> vector."""

    def __init__(self, path):
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in raw.items()}
        self.path = path

    def embed(self, caption: str) -> np.ndarray:
        key = caption_key(caption)
        if key not in self.table:
            raise DataError(
                f"caption {caption!r} (key {key[:12]}...) not in {self.path}")
        return self.table[key]


def embed_text(provider, caption: str) -> TextEmbedding:
    if not caption or not caption.strip():
        raise DataError("caption must be nonempty")
    return TextEmbedding(provider.embed(caption))


# ---------------------------------------------------------------------------
# Model


class _CausalSelfAttention(nn.Module):
    def __init__(self, width: int, heads: int, max_len: int):
        super().__init__()
        if width % heads:
            raise ConfigError(f"width {width} not divisible by heads {heads}")
        self.heads = heads
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)
        mask = torch.tril(torch.ones(max_len, max_len, dtype=torch.bool))
        self.register_buffer("mask", mask, persistent=False)

    def forward(self, x):
        b, t, c = x.shape
        q, k, v = self.qkv(x).split(c, dim=2)
        hs = c // self.heads
        q = q.view(b, t, self.heads, hs).transpose(1, 2)
        k = k.view(b, t, self.heads, hs).transpose(1, 2)
        v = v.view(b, t, self.heads, hs).transpose(1, 2)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(hs)
        att = att.masked_fill(~self.mask[:t, :t], float("-inf"))
        att = torch.softmax(att, dim=-1)
        y = (att @ v).transpose(1, 2).contiguous().view(b, t, c)
        return self.proj(y)


class _Block(nn.Module):
    def __init__(self, width: int, heads: int, max_len: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(width)
        self.attn = _CausalSelfAttention(width, heads, max_len)
        self.ln2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(nn.Linear(width, 4 * width), nn.GELU(),
                                 nn.Linear(4 * width, width))

    def forward(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


class MotionTokenPrior(nn.Module):
    """Causal transformer over code tokens plus END, with one condition token.

    Input vocabulary is Q codes + END + PAD; the output head scores Q codes
    + END (PAD is never predicted).
    """

    def __init__(self, codes: int, d_text: int = TEXT_DIM, width: int = 128,
                 heads: int = 4, layers: int = 2, max_len: int = 64,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.codes = codes
        self.end_token = codes
        self.pad_token = codes + 1
        self.d_text = d_text
        self.max_len = max_len
        self.token_emb = nn.Embedding(codes + 2, width)
        self.cond_proj = nn.Linear(d_text, width)
        self.pos_emb = nn.Parameter(torch.zeros(max_len, width))
        self.blocks = nn.ModuleList(_Block(width, heads, max_len)
                                    for _ in range(layers))
        self.ln_f = nn.LayerNorm(width)
        self.head = nn.Linear(width, codes + 1, bias=False)
        nn.init.zeros_(self.head.weight)  # uniform next-token dist at init
        self.to(dtype)

    @property
    def width(self) -> int:
        return self.pos_emb.shape[1]

    def forward(self, cond: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        """cond (B, d_text), tokens (B, S) -> logits (B, S + 1, codes + 1).

        logits[:, i] is the distribution of the token at position i given the
        condition and tokens[:, :i].
        """
        b, s = tokens.shape
        if s + 1 > self.max_len:
            raise ConfigError(f"sequence length {s + 1} exceeds context {self.max_len}")
        cond_tok = self.cond_proj(cond).unsqueeze(1)
        x = torch.cat([cond_tok, self.token_emb(tokens)], dim=1)
        x = x + self.pos_emb[: s + 1]
        for block in self.blocks:
            x = block(x)
        return self.head(self.ln_f(x))


def _cond_tensor(model: MotionTokenPrior, e: TextEmbedding) -> torch.Tensor:
    if e.dim != model.d_text:
        raise DataError(f"embedding dim {e.dim} != model d_text {model.d_text}")
    dtype = next(model.parameters()).dtype
    return torch.as_tensor(e.vector, dtype=dtype).unsqueeze(0)


def _token_tensor(model: MotionTokenPrior, tokens) -> torch.Tensor:
    idx = list(tokens.indices) if isinstance(tokens, TokenSequence) else list(tokens)
    for i in idx:
        if not (0 <= int(i) < model.codes + 2):
            raise DataError(f"token {i} outside vocabulary of {model.codes + 2}")
    return torch.tensor([idx], dtype=torch.long)


def prior_logprob(model: MotionTokenPrior, e: TextEmbedding, prefix,
                  continuation) -> float:
    """Teacher-forced log p(continuation, END | condition, prefix)."""
    pre = list(prefix.indices) if isinstance(prefix, TokenSequence) else list(prefix)
    cont = (list(continuation.indices) if isinstance(continuation, TokenSequence)
            else list(continuation))
    tokens = _token_tensor(model, pre + cont)
    with torch.no_grad():
        logits = model(_cond_tensor(model, e), tokens)[0]
        logp = torch.log_softmax(logits.double(), dim=-1)
    total = 0.0
    for offset, tok in enumerate(cont):
        total += float(logp[len(pre) + offset, int(tok)])
    total += float(logp[len(pre) + len(cont), model.end_token])
    return total


@dataclass(frozen=True)
class GenerationConfig:
    max_tokens: int = 49
    temperature: float = 1.0
    top_k: int | None = None  # None = full vocabulary
    seed: int = 0

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ConfigError("max_tokens must be >= 1")
        if self.temperature < 0.0:
            raise ConfigError("temperature must be >= 0 (0 selects argmax)")
        if self.top_k is not None and self.top_k < 1:
            raise ConfigError("top_k must be >= 1")


def generate(model: MotionTokenPrior, e: TextEmbedding, prefix: TokenSequence,
             cfg: GenerationConfig) -> TokenSequence:
    """Sample a continuation of the prefix; returns prefix ++ generated codes.

    Stops on the END token (not included in the output) or after max_tokens.
    Deterministic given cfg.seed; temperature 0 selects the argmax path.
    """
    if prefix.vocab != model.codes:
        raise DataError(f"prefix vocab {prefix.vocab} != model codes {model.codes}")
    if len(prefix) + cfg.max_tokens + 1 > model.max_len:
        raise ConfigError(
            f"prefix {len(prefix)} + max_tokens {cfg.max_tokens} exceeds "
            f"context {model.max_len}")
    gen = torch.Generator().manual_seed(cfg.seed)
    cond = _cond_tensor(model, e)
    seq = list(prefix.indices)
    model.eval()
    with torch.no_grad():
        for _ in range(cfg.max_tokens):
            tokens = torch.tensor([seq], dtype=torch.long)
            logits = model(cond, tokens)[0, -1].double()
            if cfg.temperature == 0.0:
                nxt = int(torch.argmax(logits))
            else:
                logits = logits / cfg.temperature
                k = cfg.top_k if cfg.top_k is not None else logits.shape[0]
                k = min(k, logits.shape[0])
                kth = torch.topk(logits, k).values[-1]
                logits = logits.masked_fill(logits < kth, float("-inf"))
                probs = torch.softmax(logits, dim=-1)
                nxt = int(torch.multinomial(probs, 1, generator=gen))
            if nxt == model.end_token:
                break
            seq.append(nxt)
    return TokenSequence(tuple(seq), prefix.vocab)


# ---------------------------------------------------------------------------
# Training


@dataclass
class PriorTrainConfig:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-3
    width: int = 128
    heads: int = 4
    layers: int = 2
    max_len: int = 64
    d_text: int = TEXT_DIM


def train_prior(corpus, config: PriorTrainConfig, seed: int, codes: int,
                log_every: int = 0) -> tuple:
    """Train on (TextEmbedding, prefix tokens, target tokens) triples.

    Cross-entropy over the target tokens plus a final END; prefix positions
    (and padding) are masked out of the loss.  Returns (model, per-step
    losses); deterministic per seed.
    """
    items = [(e, list(p.indices if isinstance(p, TokenSequence) else p),
              list(t.indices if isinstance(t, TokenSequence) else t))
             for e, p, t in corpus]
    if not items:
        raise DataError("prior training corpus is empty")

    gen = torch.Generator().manual_seed(seed)
    model = MotionTokenPrior(codes, d_text=config.d_text, width=config.width,
                             heads=config.heads, layers=config.layers,
                             max_len=config.max_len)
    seed_parameters(model, gen)
    with torch.no_grad():
        model.head.weight.zero_()
        for block in model.blocks:
            for ln in (block.ln1, block.ln2):
                ln.weight.fill_(1.0)
        model.ln_f.weight.fill_(1.0)

    longest = max(len(p) + len(t) for _, p, t in items)
    if longest + 1 > config.max_len:
        raise ConfigError(f"corpus sequence length {longest} exceeds context")

    conds, inputs, labels = [], [], []
    for e, p, t in items:
        seq = p + t
        inputs.append(seq + [model.pad_token] * (longest - len(seq)))
        lab = [-100] * len(p) + t + [model.end_token]
        lab += [-100] * (longest + 1 - len(lab))
        labels.append(lab)
        conds.append(e.vector)
    conds = torch.as_tensor(np.stack(conds), dtype=torch.float32)
    inputs = torch.tensor(inputs, dtype=torch.long)
    labels = torch.tensor(labels, dtype=torch.long)

    n = len(items)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    losses = []
    order = torch.randperm(n, generator=gen)
    cursor = 0
    for step in range(config.steps):
        take = min(config.batch_size, n)
        if cursor + take > n:
            order = torch.randperm(n, generator=gen)
            cursor = 0
        sel = order[cursor:cursor + take]
        cursor += take
        logits = model(conds[sel], inputs[sel])
        loss = nn.functional.cross_entropy(
            logits.reshape(-1, logits.shape[-1]), labels[sel].reshape(-1),
            ignore_index=-100)
        if not torch.isfinite(loss):
            raise NumericError(f"non-finite prior loss at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
        if log_every and (step + 1) % log_every == 0:
            print(f"prior step {step + 1}/{config.steps} loss {losses[-1]:.6f}")

    model.eval()
    return model, losses


def prior_loss(model: MotionTokenPrior, e: TextEmbedding, prefix, target) -> torch.Tensor:
    """Differentiable training loss for one sequence (used by gradient checks)."""
    pre = list(prefix.indices) if isinstance(prefix, TokenSequence) else list(prefix)
    tgt = list(target.indices) if isinstance(target, TokenSequence) else list(target)
    tokens = _token_tensor(model, pre + tgt)
    logits = model(_cond_tensor(model, e), tokens)[0]
    labels = torch.tensor([-100] * len(pre) + tgt + [model.end_token],
                          dtype=torch.long)
    return nn.functional.cross_entropy(logits, labels, ignore_index=-100)


# ---------------------------------------------------------------------------
# End-to-end synthesis


def synthesize_motion(vqvae: MotionVqvae, prior: MotionTokenPrior, pose: Pose3D,
                      caption: str, provider, cfg: GenerationConfig,
                      t_steps: int = 30) -> MotionSequence:
    """Pose + caption -> motion: tile/encode/quantize the pose into prefix
    tokens, autoregressively extend them, then decode through the VQ-VAE."""
    if prior.codes != vqvae.code_count:
        raise ConfigError(
            f"prior vocab {prior.codes} != codebook size {vqvae.code_count}")
    joints = pose.joints
    if pose.joint_count == 24 and vqvae.layout.joint_count == 22:
        joints = body_to_motion_joints(joints)
    p = Pose3D.all_visible(joints)
    repr0 = make_initial_repr(p, t_steps, vqvae.layout)
    latents = encode_latents(vqvae, repr0)
    prefix = quantize(vqvae.codebook_view(), latents)
    e = embed_text(provider, caption)
    tokens = generate(prior, e, prefix, cfg)
    decoded = decode_tokens(vqvae, tokens)
    return decode_repr(decoded)


def save_prior(model: MotionTokenPrior, path, extra_meta: dict | None = None) -> None:
    meta = {
        "codes": model.codes, "d_text": model.d_text, "width": model.width,
        "heads": model.blocks[0].attn.heads, "layers": len(model.blocks),
        "max_len": model.max_len,
    }
    if extra_meta:
        meta.update(extra_meta)
    tensors = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    ckpt.save_checkpoint(path, "prior", meta, tensors)


def load_prior(path) -> MotionTokenPrior:
    kind, meta, tensors = ckpt.load_checkpoint(path)
    if kind != "prior":
        raise DataError(f"{path}: expected a prior checkpoint, got {kind!r}")
    model = MotionTokenPrior(int(meta["codes"]), d_text=int(meta["d_text"]),
                             width=int(meta["width"]), heads=int(meta["heads"]),
                             layers=int(meta["layers"]), max_len=int(meta["max_len"]))
    model.load_state_dict({k: torch.as_tensor(v) for k, v in tensors.items()})
    model.eval()
    return model
