"""Autoregressive three-stage decoder: next area, entry corner, pattern.

Each step conditions on a context of (graph mean, first visited area, last
visited area) node embeddings, refines it with multi-head attention over
all areas, and scores candidates with clipped-tanh compatibilities:

    logit = M * tanh(q . k / sqrt(d))

Stage one masks already-visited areas to -1e9 so their softmax mass is
exactly zero. Stage two attends over the chosen area's four corners from
the agent's current location; stage three over the stop points the three
patterns would produce. The product of the three stage probabilities is
the step's action probability; the rollout accumulates its log.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from .autodiff import Tensor
from .encoder import Embeddings, uniform_init
from .errors import AllVisited
from .geometry import Decision, Pattern, Schedule, build_schedule, pattern_exit_point
from .mapgen import AreaMap

MASK_LOGIT = -1e9


def _param(rng, *shape) -> Tensor:
    return Tensor(uniform_init(rng, *shape), requires_grad=True)


@dataclass
class DecoderParams:
    """Weights for the three selection networks plus the clip constant M."""

    # network I: next area
    W_F: Tensor        # (d1, 3*d1)
    W_C1: Tensor       # (d1, d1)
    W_A1: Tensor
    W_A2: Tensor
    W_Q1: Tensor
    W_K1: Tensor
    v_first: Tensor    # (d1,) learned placeholder, step 1 "first visited"
    v_last: Tensor     # (d1,) learned placeholder, step 1 "last visited"
    # network II: start corner
    W_C2: Tensor       # (d2, 2)
    W_lam: Tensor      # (d2, 2)
    W_lam1: Tensor     # (d2, 2)
    W_lam2: Tensor     # (d2, 2)
    W_Q2: Tensor       # (d2, d2)
    W_K2: Tensor       # (d2, d2)
    # network III: coverage pattern
    W_C3: Tensor       # (d3, 2)
    W_psi1: Tensor     # (d3, 2)
    W_psi2: Tensor     # (d3, 2)
    W_Q3: Tensor       # (d3, d3)
    W_K3: Tensor       # (d3, 2)
    heads: int = 8
    clip: float = 10.0

    @property
    def d1(self) -> int:
        return self.W_C1.shape[0]

    @property
    def d2(self) -> int:
        return self.W_C2.shape[0]

    @property
    def d3(self) -> int:
        return self.W_C3.shape[0]

    @classmethod
    def init(
        cls,
        d1: int,
        d2: int,
        d3: int,
        rng: np.random.Generator,
        heads: int = 8,
        clip: float = 10.0,
    ) -> "DecoderParams":
        return cls(
            W_F=_param(rng, d1, 3 * d1),
            W_C1=_param(rng, d1, d1),
            W_A1=_param(rng, d1, d1),
            W_A2=_param(rng, d1, d1),
            W_Q1=_param(rng, d1, d1),
            W_K1=_param(rng, d1, d1),
            v_first=_param(rng, d1),
            v_last=_param(rng, d1),
            W_C2=_param(rng, d2, 2),
            W_lam=_param(rng, d2, 2),
            W_lam1=_param(rng, d2, 2),
            W_lam2=_param(rng, d2, 2),
            W_Q2=_param(rng, d2, d2),
            W_K2=_param(rng, d2, d2),
            W_C3=_param(rng, d3, 2),
            W_psi1=_param(rng, d3, 2),
            W_psi2=_param(rng, d3, 2),
            W_Q3=_param(rng, d3, d3),
            W_K3=_param(rng, d3, 2),
            heads=heads,
            clip=clip,
        )


@dataclass
class DecodeState:
    """Progress of one rollout: tour so far, mask, agent location."""

    visited: np.ndarray                      # (n,) bool
    tour: list[Decision] = field(default_factory=list)
    location: np.ndarray | None = None       # (2,), None before the first step

    @property
    def step(self) -> int:
        return len(self.tour) + 1

    @classmethod
    def fresh(cls, n: int) -> "DecodeState":
        return cls(visited=np.zeros(n, dtype=bool))


def _clipped_logits(q: Tensor, keys: Tensor, dim: int, clip: float) -> Tensor:
    """M * tanh(q keys^T / sqrt(dim)) for q (1, d), keys (m, d) -> (m,)."""
    scores = ad.mul(ad.matmul(q, ad.transpose(keys)), Tensor(1.0 / np.sqrt(dim)))
    return ad.reshape(ad.mul(ad.tanh(scores), Tensor(clip)), (keys.shape[0],))


def area_context(embeddings: Embeddings, state: DecodeState, params: DecoderParams) -> Tensor:
    """Graph-mean, first-visited, last-visited embeddings fused by W_F."""
    nodes = embeddings.nodes
    h_g = ad.mean(nodes, axis=0, keepdims=True)  # (1, d1)
    if state.tour:
        first = ad.reshape(ad.take(nodes, state.tour[0].area, axis=0), (1, params.d1))
        last = ad.reshape(ad.take(nodes, state.tour[-1].area, axis=0), (1, params.d1))
    else:
        first = ad.reshape(params.v_first, (1, params.d1))
        last = ad.reshape(params.v_last, (1, params.d1))
    ctx = ad.concat([h_g, first, last], axis=1)  # (1, 3*d1)
    return ad.linear(ctx, params.W_F)  # (1, d1)


def select_area(
    embeddings: Embeddings, state: DecodeState, params: DecoderParams
) -> Tensor:
    """Probability vector over areas; visited entries carry exactly zero."""
    if state.visited.all():
        raise AllVisited("every area is already scheduled")
    nodes = embeddings.nodes
    ctx = area_context(embeddings, state, params)
    q1 = ad.linear(ctx, params.W_C1)
    k1 = ad.linear(nodes, params.W_A1)
    v1 = ad.linear(nodes, params.W_A2)
    h_c = ad.multi_head_attention(q1, k1, v1, heads=params.heads)
    logits = _clipped_logits(
        ad.linear(h_c, params.W_Q1), ad.linear(nodes, params.W_K1), params.d1, params.clip
    )
    mask = np.where(state.visited, MASK_LOGIT, 0.0)
    return ad.softmax(ad.add(logits, Tensor(mask)), axis=-1)


def select_start(location, corners, params: DecoderParams) -> Tensor:
    """Probability vector over the four entry corners of the chosen area."""
    loc = Tensor(np.asarray(location, dtype=np.float64).reshape(1, 2))
    cor = Tensor(np.asarray(corners, dtype=np.float64))
    h_st = ad.linear(loc, params.W_C2)
    k2 = ad.linear(cor, params.W_lam1)
    v2 = ad.linear(cor, params.W_lam2)
    h_st_c = ad.scaled_dot_attention(h_st, k2, v2)
    corner_keys = ad.linear(ad.linear(cor, params.W_lam), params.W_K2)
    logits = _clipped_logits(
        ad.linear(h_st_c, params.W_Q2), corner_keys, params.d2, params.clip
    )
    return ad.softmax(logits, axis=-1)


def select_pattern(corner_point, stop_points, params: DecoderParams) -> Tensor:
    """Probability vector over patterns given their would-be stop points."""
    pt = Tensor(np.asarray(corner_point, dtype=np.float64).reshape(1, 2))
    stops = Tensor(np.asarray(stop_points, dtype=np.float64))
    q0 = ad.linear(pt, params.W_C3)
    k3 = ad.linear(stops, params.W_psi1)
    v3 = ad.linear(stops, params.W_psi2)
    h_k_c = ad.scaled_dot_attention(q0, k3, v3)
    logits = _clipped_logits(
        ad.linear(h_k_c, params.W_Q3), ad.linear(stops, params.W_K3), params.d3, params.clip
    )
    return ad.softmax(logits, axis=-1)


@dataclass
class StepTrace:
    """Recorded stage distributions and the choice taken at one step."""

    area_probs: np.ndarray
    corner_probs: np.ndarray
    pattern_probs: np.ndarray
    decision: Decision


@dataclass
class RolloutResult:
    schedule: Schedule
    log_prob: Tensor
    trace: list[StepTrace] | None = None


def _choose(probs: np.ndarray, mode: str, rng: np.random.Generator | None) -> int:
    if mode == "greedy":
        return int(np.argmax(probs))  # first max wins ties
    if mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng")
        return int(rng.choice(len(probs), p=probs / probs.sum()))
    raise ValueError(f"unknown rollout mode {mode!r}")


def rollout(
    area_map: AreaMap,
    policy,
    mode: str = "greedy",
    rng: np.random.Generator | None = None,
    lambda_intra: float = 0.0,
    closed: bool = True,
    patterns: Sequence[Pattern] | None = None,
    forced: Sequence[Decision] | None = None,
    record_trace: bool = False,
) -> RolloutResult:
    """Encode once, then decode one (area, corner, pattern) triple per step.

    `mode` picks each stage's argmax ("greedy") or samples it ("sample");
    `forced` replays a fixed decision sequence instead, which keeps the
    log-probability differentiable along a chosen trajectory. The first
    step's agent location is the chosen area's center; afterwards it is the
    exit point of the pattern just flown.
    """
    from .encoder import encode  # local import to avoid cycle at module load

    patterns = geo.default_patterns() if patterns is None else patterns
    n = area_map.n
    embeddings = encode(area_map, policy.encoder)
    state = DecodeState.fresh(n)
    log_prob = Tensor(np.zeros(()))
    trace: list[StepTrace] | None = [] if record_trace else None

    for t in range(n):
        area_probs = select_area(embeddings, state, policy.decoder)
        j = forced[t].area if forced is not None else _choose(area_probs.data, mode, rng)
        area = area_map.areas[j]

        location = area.center if state.location is None else state.location
        corner_probs = select_start(location, area.corners, policy.decoder)
        k = forced[t].corner if forced is not None else _choose(corner_probs.data, mode, rng)

        corner_pt = area.corner(k)
        stops = np.array([pattern_exit_point(area, k, p) for p in patterns])
        pattern_probs = select_pattern(corner_pt, stops, policy.decoder)
        z = forced[t].pattern if forced is not None else _choose(pattern_probs.data, mode, rng)

        step_lp = ad.add(
            ad.add(ad.log(ad.take(area_probs, j)), ad.log(ad.take(corner_probs, k))),
            ad.log(ad.take(pattern_probs, z)),
        )
        log_prob = ad.add(log_prob, step_lp)

        decision = Decision(area=j, corner=k, pattern=z)
        state.tour.append(decision)
        state.visited[j] = True
        state.location = pattern_exit_point(area, k, patterns[z])
        if trace is not None:
            trace.append(
                StepTrace(
                    area_probs=area_probs.data.copy(),
                    corner_probs=corner_probs.data.copy(),
                    pattern_probs=pattern_probs.data.copy(),
                    decision=decision,
                )
            )

    schedule = build_schedule(
        area_map, state.tour, lambda_intra=lambda_intra, closed=closed, patterns=patterns
    )
    return RolloutResult(schedule=schedule, log_prob=log_prob, trace=trace)
