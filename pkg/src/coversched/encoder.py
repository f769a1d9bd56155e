"""Gated graph convolutional encoder over the complete area graph.

Nodes start as linear projections of the 8 corner coordinates, edges as
projections of the scalar center distance. Each layer refines both with a
gated, residual update:

    h'_i = h_i + ReLU(BN(U h_i + mean_{j != i}(sigma(e_ij) * V h_j)))
    e'_ij = e_ij + ReLU(BN(A e_ij + B h_i + C h_j))

Batch norm here is graph norm: statistics are taken over the node (or node
pair) dimension of the single input graph, in both training and eval, so
encoding is a pure function of (map, parameters).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeMismatch
from .mapgen import AreaMap

NODE_FEATURES = 8


def uniform_init(rng: np.random.Generator, *shape: int) -> np.ndarray:
    """uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), fan_in = trailing dim."""
    bound = 1.0 / np.sqrt(shape[-1])
    return rng.uniform(-bound, bound, size=shape)


def _param(rng, *shape) -> Tensor:
    return Tensor(uniform_init(rng, *shape), requires_grad=True)


@dataclass
class LayerParams:
    """One message-passing layer: five mixing matrices plus two BN affines."""

    U: Tensor
    V: Tensor
    A: Tensor
    B: Tensor
    C: Tensor
    bn_h_gamma: Tensor
    bn_h_beta: Tensor
    bn_e_gamma: Tensor
    bn_e_beta: Tensor

    @classmethod
    def init(cls, d1: int, rng: np.random.Generator) -> "LayerParams":
        return cls(
            U=_param(rng, d1, d1),
            V=_param(rng, d1, d1),
            A=_param(rng, d1, d1),
            B=_param(rng, d1, d1),
            C=_param(rng, d1, d1),
            bn_h_gamma=Tensor(np.ones(d1), requires_grad=True),
            bn_h_beta=Tensor(np.zeros(d1), requires_grad=True),
            bn_e_gamma=Tensor(np.ones(d1), requires_grad=True),
            bn_e_beta=Tensor(np.zeros(d1), requires_grad=True),
        )


@dataclass
class EncoderParams:
    """Input projections plus L message-passing layers."""

    node_proj_w: Tensor
    node_proj_b: Tensor
    edge_proj_w: Tensor
    edge_proj_b: Tensor
    layers: list[LayerParams] = field(default_factory=list)

    @property
    def d1(self) -> int:
        return self.node_proj_w.shape[0]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @classmethod
    def init(cls, d1: int, num_layers: int, rng: np.random.Generator) -> "EncoderParams":
        return cls(
            node_proj_w=_param(rng, d1, NODE_FEATURES),
            node_proj_b=Tensor(np.zeros(d1), requires_grad=True),
            edge_proj_w=_param(rng, d1, 1),
            edge_proj_b=Tensor(np.zeros(d1), requires_grad=True),
            layers=[LayerParams.init(d1, rng) for _ in range(num_layers)],
        )


@dataclass
class Embeddings:
    """Encoder output: per-area vectors and per-pair edge vectors."""

    nodes: Tensor  # (n, d1)
    edges: Tensor  # (n, n, d1)

    @property
    def n(self) -> int:
        return self.nodes.shape[0]


def init_embeddings(
    area_map: AreaMap, params: EncoderParams, features: Tensor | None = None
) -> tuple[Tensor, Tensor]:
    """Project corner features to h0 and center distances to e0.

    `features` substitutes the map's raw corner features, letting callers
    feed pre-transformed inputs (the critic does) through the same layers.
    """
    feats = Tensor(area_map.features) if features is None else features
    if feats.shape[1] != params.node_proj_w.shape[1]:
        raise ShapeMismatch("init_embeddings", feats.shape, params.node_proj_w.shape)
    h0 = ad.linear(feats, params.node_proj_w, params.node_proj_b)
    pos = area_map.positions
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))[..., None]  # (n, n, 1)
    e0 = ad.linear(Tensor(dist), params.edge_proj_w, params.edge_proj_b)
    return h0, e0


def ggcn_layer(h: Tensor, e: Tensor, layer: LayerParams) -> tuple[Tensor, Tensor]:
    """One gated residual message-passing step on a complete graph."""
    n, d1 = h.shape
    if e.shape != (n, n, d1):
        raise ShapeMismatch("ggcn_layer", h.shape, e.shape)

    uh = ad.linear(h, layer.U)
    vh = ad.linear(h, layer.V)
    if n > 1:
        gates = ad.sigmoid(e)  # (n, n, d1)
        messages = ad.mul(gates, ad.reshape(vh, (1, n, d1)))
        off_diag = (1.0 - np.eye(n))[..., None]  # drop self-loop contributions
        agg = ad.mul(
            ad.sum_(ad.mul(messages, Tensor(off_diag)), axis=1),
            Tensor(1.0 / (n - 1)),
        )
        h_pre = ad.add(uh, agg)
    else:
        h_pre = uh
    h_new = ad.add(h, ad.relu(ad.batch_norm(h_pre, layer.bn_h_gamma, layer.bn_h_beta)))

    ae = ad.matmul(e, ad.transpose(layer.A))
    bh = ad.reshape(ad.linear(h, layer.B), (n, 1, d1))
    ch = ad.reshape(ad.linear(h, layer.C), (1, n, d1))
    e_pre = ad.add(ad.add(ae, bh), ch)
    e_new = ad.add(e, ad.relu(ad.batch_norm(e_pre, layer.bn_e_gamma, layer.bn_e_beta)))
    return h_new, e_new


def encode(
    area_map: AreaMap, params: EncoderParams, features: Tensor | None = None
) -> Embeddings:
    """Run the input projections and all layers; edges are computed but not
    consumed downstream (they only shape nodes through the gates)."""
    h, e = init_embeddings(area_map, params, features=features)
    for layer in params.layers:
        h, e = ggcn_layer(h, e, layer)
    return Embeddings(nodes=h, edges=e)
