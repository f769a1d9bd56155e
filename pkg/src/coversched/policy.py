"""Policy container: encoder + decoder parameters under one config.

Provides ordered parameter access for the optimizer and checkpoints, a
detached view for gradient-free rollouts, and the parameter count the CLI
prints for a given configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .autodiff import Tensor
from .decoder import DecoderParams
from .encoder import EncoderParams


@dataclass(frozen=True)
class PolicyConfig:
    """Architecture hyperparameters; `paper` preset mirrors the full model."""

    d1: int = 128
    d2: int = 128
    d3: int = 128
    num_layers: int = 3
    heads: int = 8
    clip: float = 10.0
    lanes: int = 5

    @classmethod
    def preset(cls, name: str) -> "PolicyConfig":
        presets = {
            "paper": cls(),
            "small": cls(d1=16, d2=16, d3=16, num_layers=2, heads=4),
            "tiny": cls(d1=8, d2=8, d3=8, num_layers=1, heads=2),
        }
        if name not in presets:
            raise ValueError(f"unknown config preset {name!r}; options: {sorted(presets)}")
        return presets[name]

    def to_dict(self) -> dict:
        return {
            "d1": self.d1,
            "d2": self.d2,
            "d3": self.d3,
            "num_layers": self.num_layers,
            "heads": self.heads,
            "clip": self.clip,
            "lanes": self.lanes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class PolicyParams:
    """All trainable tensors of one policy."""

    encoder: EncoderParams
    decoder: DecoderParams
    config: PolicyConfig = field(default_factory=PolicyConfig)

    @classmethod
    def init(cls, config: PolicyConfig, seed: int = 0) -> "PolicyParams":
        rng = np.random.default_rng(seed)
        enc = EncoderParams.init(config.d1, config.num_layers, rng)
        dec = DecoderParams.init(
            config.d1, config.d2, config.d3, rng, heads=config.heads, clip=config.clip
        )
        return cls(encoder=enc, decoder=dec, config=config)

    def named_parameters(self) -> dict[str, Tensor]:
        """Stable name -> tensor mapping; iteration order is the
        serialization order."""
        out: dict[str, Tensor] = {
            "encoder.node_proj_w": self.encoder.node_proj_w,
            "encoder.node_proj_b": self.encoder.node_proj_b,
            "encoder.edge_proj_w": self.encoder.edge_proj_w,
            "encoder.edge_proj_b": self.encoder.edge_proj_b,
        }
        for i, layer in enumerate(self.encoder.layers):
            prefix = f"encoder.layers.{i}."
            out[prefix + "U"] = layer.U
            out[prefix + "V"] = layer.V
            out[prefix + "A"] = layer.A
            out[prefix + "B"] = layer.B
            out[prefix + "C"] = layer.C
            out[prefix + "bn_h_gamma"] = layer.bn_h_gamma
            out[prefix + "bn_h_beta"] = layer.bn_h_beta
            out[prefix + "bn_e_gamma"] = layer.bn_e_gamma
            out[prefix + "bn_e_beta"] = layer.bn_e_beta
        dec = self.decoder
        for name in (
            "W_F", "W_C1", "W_A1", "W_A2", "W_Q1", "W_K1", "v_first", "v_last",
            "W_C2", "W_lam", "W_lam1", "W_lam2", "W_Q2", "W_K2",
            "W_C3", "W_psi1", "W_psi2", "W_Q3", "W_K3",
        ):
            out[f"decoder.{name}"] = getattr(dec, name)
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def detached(self) -> "PolicyParams":
        """Gradient-free view sharing the same arrays (no graph building)."""
        enc = self.encoder
        dec = self.decoder
        d_enc = EncoderParams(
            node_proj_w=enc.node_proj_w.detach(),
            node_proj_b=enc.node_proj_b.detach(),
            edge_proj_w=enc.edge_proj_w.detach(),
            edge_proj_b=enc.edge_proj_b.detach(),
            layers=[
                type(layer)(
                    **{
                        f: getattr(layer, f).detach()
                        for f in (
                            "U", "V", "A", "B", "C",
                            "bn_h_gamma", "bn_h_beta", "bn_e_gamma", "bn_e_beta",
                        )
                    }
                )
                for layer in enc.layers
            ],
        )
        tensor_fields = (
            "W_F", "W_C1", "W_A1", "W_A2", "W_Q1", "W_K1", "v_first", "v_last",
            "W_C2", "W_lam", "W_lam1", "W_lam2", "W_Q2", "W_K2",
            "W_C3", "W_psi1", "W_psi2", "W_Q3", "W_K3",
        )
        d_dec = DecoderParams(
            **{f: getattr(dec, f).detach() for f in tensor_fields},
            heads=dec.heads,
            clip=dec.clip,
        )
        return PolicyParams(encoder=d_enc, decoder=d_dec, config=self.config)

    def clone(self) -> "PolicyParams":
        """Deep copy with fresh arrays, still trainable (baseline snapshots)."""
        copy = PolicyParams.init(self.config, seed=0)
        for name, p in copy.named_parameters().items():
            p.data[...] = self.named_parameters()[name].data
        return copy


def parameter_breakdown(config: PolicyConfig) -> dict[str, int]:
    """Per-group parameter counts for a configuration, without allocating."""
    d1, d2, d3, L = config.d1, config.d2, config.d3, config.num_layers
    enc_proj = d1 * 8 + d1 + d1 * 1 + d1
    enc_layers = L * (5 * d1 * d1 + 4 * d1)
    dec_area = d1 * 3 * d1 + 5 * d1 * d1 + 2 * d1
    dec_corner = 4 * d2 * 2 + 2 * d2 * d2
    dec_pattern = 3 * d3 * 2 + d3 * d3 + d3 * 2
    return {
        "encoder.projections": enc_proj,
        "encoder.layers": enc_layers,
        "decoder.area": dec_area,
        "decoder.corner": dec_corner,
        "decoder.pattern": dec_pattern,
        "total": enc_proj + enc_layers + dec_area + dec_corner + dec_pattern,
    }
