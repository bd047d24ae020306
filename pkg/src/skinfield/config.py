"""Configuration dataclasses and JSON config files.

Precedence: built-in defaults < config file < CLI flags.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field as dc_field, fields


class ConfigError(Exception):
    pass


@dataclass
class FieldConfig:
    """Canonical field + conditioning architecture."""

    pe_frequencies: int = 10          # L; encoding dim is 3 + 6L
    mlp1_layers: int = 8
    mlp1_width: int = 256
    mlp2_hidden_layers: int = 2
    mlp2_width: int = 256
    skip_layer: int = 4               # encoding re-injected at this mlp1 layer
    color_widen_eps: float = 0.001
    feature_dim: int = 64             # fused feature dimension
    attn_dim: int = 64                # attention embed/query/key/value width
    encoder_channels: tuple = (16, 32, 32)
    canonical_margin: float = 0.1     # meters around the canonical mesh box

    def __post_init__(self):
        self.encoder_channels = tuple(self.encoder_channels)
        if self.mlp1_width <= 0 or self.mlp2_width <= 0:
            raise ConfigError("MLP widths must be positive")
        if not (0.0 < self.color_widen_eps <= 0.01):
            raise ConfigError("color_widen_eps must be in (0, 0.01]")
        if not (0 < self.skip_layer < self.mlp1_layers):
            raise ConfigError("skip_layer must be inside mlp1")

    @property
    def encoding_dim(self):
        return 3 + 6 * self.pe_frequencies


@dataclass
class TrainConfig:
    """Optimization schedule and loss weights."""

    lr0: float = 5e-4
    decay_factor: float = 0.5
    decay_every: int = 30_000
    max_iters: int = 120_000
    rays_per_batch: int = 350
    seed: int = 0
    lambda_mask: float = 1.0
    lambda_smooth: float = 0.1
    lambda_shape: float = 0.1
    smooth_perturb: float = 0.01      # meters; bound of the normal-probe offset
    shape_dist_max: float = 0.05      # meters; near-surface threshold
    smooth_points: int = 128          # per-batch subsample for the smoothness term
    shape_points: int = 128           # cap on near-surface points per batch
    samples_per_ray: int = 64
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_abort_norm: float = 1e4
    ckpt_every: int = 2000
    log_every: int = 25
    input_views: tuple | None = None      # fixed conditioning views, else defaults
    input_view_counts: tuple | None = None  # randomize conditioning subset sizes

    def __post_init__(self):
        if self.input_views is not None:
            self.input_views = tuple(int(v) for v in self.input_views)
        if self.input_view_counts is not None:
            self.input_view_counts = tuple(int(v) for v in self.input_view_counts)
        if min(self.lr0, self.decay_factor) <= 0 or self.max_iters <= 0:
            raise ConfigError("learning rate schedule values must be positive")
        if self.decay_every <= 0 or self.decay_every > self.max_iters:
            raise ConfigError("decay_every must be in (0, max_iters]")
        if min(self.lambda_mask, self.lambda_smooth, self.lambda_shape) < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass
class RenderConfig:
    samples_per_ray: int = 128
    bbox_margin: float = 0.05         # meters around the posed mesh
    background: tuple = (0.0, 0.0, 0.0)
    chunk_rays: int = 1024
    threads: int = 1

    def __post_init__(self):
        self.background = tuple(float(c) for c in self.background)
        if self.samples_per_ray < 2:
            raise ConfigError("samples_per_ray must be >= 2")


@dataclass
class PipelineConfig:
    field: FieldConfig = dc_field(default_factory=FieldConfig)
    train: TrainConfig = dc_field(default_factory=TrainConfig)
    render: RenderConfig = dc_field(default_factory=RenderConfig)

    def to_json(self):
        return {"field": asdict(self.field), "train": asdict(self.train),
                "render": asdict(self.render)}


def _build(cls, overrides, where):
    known = {f.name for f in fields(cls)}
    bad = set(overrides) - known
    if bad:
        raise ConfigError(f"unknown key(s) {sorted(bad)} in config section '{where}'")
    return cls(**overrides)


def load_config(path=None, overrides=None):
    """Build a PipelineConfig from an optional JSON file plus override dict."""
    data = {}
    if path is not None:
        with open(path) as f:
            data = json.load(f)
    if overrides:
        for section, vals in overrides.items():
            data.setdefault(section, {}).update(vals)
    return PipelineConfig(
        field=_build(FieldConfig, data.get("field", {}), "field"),
        train=_build(TrainConfig, data.get("train", {}), "train"),
        render=_build(RenderConfig, data.get("render", {}), "render"),
    )
