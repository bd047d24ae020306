"""Unified model state: all learnable parameters plus the canonical domain."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import FieldConfig
from .features import init_encoder_params, init_fusion_params
from .field import CanonicalDomain, init_field_params


@dataclass
class SkinFieldModel:
    """Encoder + fusion + field parameters with their architecture config."""

    params: dict
    field_cfg: FieldConfig
    domain: CanonicalDomain

    @classmethod
    def create(cls, field_cfg, body_model, seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        params = {}
        params.update(init_encoder_params(field_cfg, rng, dtype=dtype))
        params.update(init_fusion_params(field_cfg, rng, dtype=dtype))
        params.update(init_field_params(field_cfg, rng, dtype=dtype))
        domain = CanonicalDomain.from_model(body_model, margin=field_cfg.canonical_margin)
        return cls(params=params, field_cfg=field_cfg, domain=domain)

    def save(self, path, extra_meta=None):
        meta = {
            "field_cfg": asdict(self.field_cfg),
            "canonical_domain": self.domain.to_json(),
        }
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, self.params, meta=meta)

    @classmethod
    def load(cls, path, requires_grad=True):
        params, meta = load_checkpoint(path, requires_grad=requires_grad)
        cfg = FieldConfig(**meta["field_cfg"])
        domain = CanonicalDomain.from_json(meta["canonical_domain"])
        return cls(params=params, field_cfg=cfg, domain=domain), meta

    def parameter_names(self):
        return sorted(self.params)

    def zero_grads(self):
        for t in self.params.values():
            t.grad = None
