"""Flat key-value configuration files with include support.

Format: one ``key = value`` per line, ``#`` comments, and
``include <relative-path>`` directives resolved against the including file.
Later assignments override earlier ones (so an including file can override
its includes).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError


def parse_config_text(text: str, base_dir: Path | None = None,
                      _depth: int = 0) -> dict:
    if _depth > 8:
        raise ConfigError("config include depth exceeded (circular include?)")
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("include "):
            target = line[len("include "):].strip()
            if base_dir is None:
                raise ConfigError(f"line {lineno}: include used without a base path")
            out.update(load_config_file(base_dir / target, _depth=_depth + 1))
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config_file(path, _depth: int = 0) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, base_dir=path.parent, _depth=_depth)


def config_hash(mapping: dict) -> str:
    canon = "\n".join(f"{k}={mapping[k]}" for k in sorted(mapping))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass
class PipelineConfig:
    """Every stage knob with its conventional default.

    Counts and thresholds follow the standard configuration for this
    pipeline: 500 challenging / 200 non-challenging samples, 30 time steps at
    temporal downsampling 4 (7 prefix tokens), 512-dim codes, and an error
    threshold of 120 (mm).
    """

    # mining
    k_challenging: int = 500
    k_nonchallenging: int = 200
    mining_norm: str = "l1"
    focal: float = 5000.0
    # motion representation / tokenizer
    t_steps: int = 30
    downsample: int = 4
    codes: int = 64
    code_dim: int = 512
    vq_width: int = 64
    vq_steps: int = 300
    vq_batch: int = 16
    vq_lr: float = 2e-3
    vq_position_bias: float = 1.0
    commitment_weight: float = 0.25
    # prior
    prior_width: int = 128
    prior_heads: int = 4
    prior_layers: int = 2
    prior_steps: int = 1500
    prior_batch: int = 8
    prior_lr: float = 1e-3
    context_len: int = 64
    # generation
    temperature: float = 1.0
    top_k: int = 0  # 0 = full vocabulary
    max_tokens: int = 9
    sequences_per_pose: int = 2
    # corruption + estimator
    p_artifact: float = 0.3
    sigma_artifact_mm: float = 80.0
    noise_sigma_mm: float = 10.0
    k_neighbors: int = 4
    # filtering
    tau: float = 120.0
    tau_units: str = "mm"
    filter_norm: str = "l1"
    filter_reduce: str = "sum"
    # execution
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.k_challenging < 0 or self.k_nonchallenging < 0:
            raise ConfigError("split sizes must be >= 0")
        if self.t_steps < 2:
            raise ConfigError("t_steps must be >= 2")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.sequences_per_pose < 1:
            raise ConfigError("sequences_per_pose must be >= 1")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "PipelineConfig":
        kwargs = {}
        known = {f.name: f.type for f in fields(cls)}
        for key, raw in mapping.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            base = cls.__dataclass_fields__[key].default
            try:
                if isinstance(base, bool):
                    kwargs[key] = raw.lower() in ("1", "true", "yes")
                elif isinstance(base, int):
                    kwargs[key] = int(raw)
                elif isinstance(base, float):
                    kwargs[key] = float(raw)
                else:
                    kwargs[key] = raw
            except ValueError as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from exc
        return cls(**kwargs)

    def to_mapping(self) -> dict:
        return {f.name: str(getattr(self, f.name)) for f in fields(self)}

    # execution knobs that cannot change results stay out of the hash
    _UNHASHED = ("workers",)

    @property
    def hash(self) -> str:
        mapping = {k: v for k, v in self.to_mapping().items()
                   if k not in self._UNHASHED}
        return config_hash(mapping)

    def write_snapshot(self, path) -> None:
        lines = ["# pipeline config snapshot"]
        for key in sorted(self.to_mapping()):
            lines.append(f"{key} = {self.to_mapping()[key]}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
