"""REINFORCE training loop with greedy-rollout and critic baselines.

The loss is mean((L - b) * log p) with the advantage (L - b) held
constant, so gradient descent on it is the standard policy-gradient
estimator for minimizing expected tour cost: trajectories worse than the
baseline get their probability pushed down and vice versa.

Training is strictly single-threaded; per-instance RNG streams are
derived from (seed, purpose, step, index) so runs are bitwise
reproducible and the stream layout would survive parallel dispatch.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor
from .checkpoint import save_arrays, save_policy
from .decoder import rollout
from .encoder import EncoderParams, encode
from .errors import EmptyBatch
from .mapgen import generate_map, load_maps
from .policy import PolicyConfig, PolicyParams


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for one training run; architecture fields mirror PolicyConfig."""

    epochs: int = 1
    steps_per_epoch: int = 1000
    batch_size: int = 128
    n_areas: int = 20
    lr: float = 1e-4
    d1: int = 128
    d2: int = 128
    d3: int = 128
    num_layers: int = 3
    heads: int = 8
    clip: float = 10.0
    lanes: int = 5
    baseline: str = "rollout"
    baseline_interval: int = 1000
    seed: int = 0
    lambda_intra: float = 0.0
    closed: bool = True
    grad_clip: float = 1.0
    checkpoint_interval: int | None = None
    radius_min: float = 0.01
    radius_max: float = 0.03

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        for name in ("steps_per_epoch", "batch_size", "n_areas", "baseline_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr <= 0.0:
            raise ValueError("lr must be > 0")
        if self.baseline not in ("rollout", "critic"):
            raise ValueError(f"baseline must be 'rollout' or 'critic', got {self.baseline!r}")

    @property
    def policy_config(self) -> PolicyConfig:
        return PolicyConfig(
            d1=self.d1,
            d2=self.d2,
            d3=self.d3,
            num_layers=self.num_layers,
            heads=self.heads,
            clip=self.clip,
            lanes=self.lanes,
        )

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)


METRICS_COLUMNS = ["step", "epoch", "mean_cost", "mean_advantage", "grad_norm", "wall_ms"]


def reinforce_loss(
    log_probs: Sequence[Tensor],
    costs: Sequence[float],
    baselines: Sequence[float],
) -> Tensor:
    """Policy-gradient surrogate: mean advantage-weighted log-likelihood.

    The advantage enters as a constant, so backward() produces exactly the
    score-function estimator and no gradient flows into the baseline.

    Raises:
        EmptyBatch: on an empty rollout batch.
    """
    if len(log_probs) == 0:
        raise EmptyBatch("reinforce_loss needs at least one rollout")
    if not (len(log_probs) == len(costs) == len(baselines)):
        raise ValueError("log_probs, costs, and baselines must align")
    advantages = np.asarray(costs, dtype=np.float64) - np.asarray(
        baselines, dtype=np.float64
    )
    stacked = ad.concat([ad.reshape(lp, (1,)) for lp in log_probs], axis=0)
    return ad.mean(ad.mul(stacked, Tensor(advantages)))


def rollout_baseline(
    area_map,
    frozen_policy: PolicyParams,
    lambda_intra: float = 0.0,
    closed: bool = True,
) -> float:
    """Greedy rollout cost under a frozen policy snapshot."""
    with ad.no_grad():
        result = rollout(
            area_map,
            frozen_policy,
            mode="greedy",
            lambda_intra=lambda_intra,
            closed=closed,
        )
    return result.schedule.total_cost


# ---------------------------------------------------------------------------
# critic baseline


@dataclass
class CriticParams:
    """Value head: input linear, a full encoder, two output linears."""

    input_w: Tensor
    input_b: Tensor
    encoder: EncoderParams
    out1_w: Tensor
    out1_b: Tensor
    out2_w: Tensor
    out2_b: Tensor

    @classmethod
    def init(cls, config: PolicyConfig, seed: int = 0) -> "CriticParams":
        from .encoder import NODE_FEATURES, _param

        rng = np.random.default_rng(seed)
        d = config.d1
        return cls(
            input_w=_param(rng, NODE_FEATURES, NODE_FEATURES),
            input_b=_param(rng, NODE_FEATURES),
            encoder=EncoderParams.init(config.d1, config.num_layers, rng=rng),
            out1_w=_param(rng, d, d),
            out1_b=_param(rng, d),
            out2_w=_param(rng, 1, d),
            out2_b=_param(rng, 1),
        )

    def named_parameters(self) -> dict[str, Tensor]:
        named = {"critic.input_w": self.input_w, "critic.input_b": self.input_b}
        named["critic.node_proj_w"] = self.encoder.node_proj_w
        named["critic.node_proj_b"] = self.encoder.node_proj_b
        named["critic.edge_proj_w"] = self.encoder.edge_proj_w
        named["critic.edge_proj_b"] = self.encoder.edge_proj_b
        for i, layer in enumerate(self.encoder.layers):
            for attr in ("U", "V", "A", "B", "C",
                         "bn_h_gamma", "bn_h_beta", "bn_e_gamma", "bn_e_beta"):
                named[f"critic.layer{i}.{attr}"] = getattr(layer, attr)
        named["critic.out1_w"] = self.out1_w
        named["critic.out1_b"] = self.out1_b
        named["critic.out2_w"] = self.out2_w
        named["critic.out2_b"] = self.out2_b
        return named

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())


def critic_value(area_map, critic: CriticParams) -> Tensor:
    """Differentiable scalar value estimate for one map."""
    feats = ad.linear(Tensor(area_map.features), critic.input_w, critic.input_b)
    embeddings = encode(area_map, critic.encoder, features=feats)
    pooled = ad.mean(embeddings.nodes, axis=0, keepdims=True)  # (1, d)
    hidden = ad.relu(ad.linear(pooled, critic.out1_w, critic.out1_b))
    return ad.mean(ad.linear(hidden, critic.out2_w, critic.out2_b))


def critic_baseline(area_map, critic: CriticParams) -> float:
    """b(s) = v(s); detached scalar for advantage computation."""
    with ad.no_grad():
        return critic_value(area_map, critic).item()


def critic_mse(values: Sequence[Tensor], costs: Sequence[float]) -> Tensor:
    """Mean squared error of value estimates against realized costs."""
    if len(values) == 0:
        raise EmptyBatch("critic_mse needs at least one value")
    stacked = ad.concat([ad.reshape(v, (1,)) for v in values], axis=0)
    err = ad.sub(stacked, Tensor(np.asarray(costs, dtype=np.float64)))
    return ad.mean(ad.mul(err, err))


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    policy: PolicyParams
    metrics: list[dict] = field(default_factory=list)
    checkpoint_path: str = ""
    metrics_path: str = ""
    critic: CriticParams | None = None


def _instance_rng(seed: int, purpose: int, step: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, purpose, step, index])


def _batch_maps(config: TrainConfig, step: int, pool) -> list:
    maps = []
    for i in range(config.batch_size):
        if pool is not None:
            maps.append(pool[(step * config.batch_size + i) % len(pool)])
        else:
            maps.append(
                generate_map(
                    config.n_areas,
                    radius_min=config.radius_min,
                    radius_max=config.radius_max,
                    rng=_instance_rng(config.seed, 2, step, i),
                    map_id=step * config.batch_size + i,
                )
            )
    return maps


def train(
    config: TrainConfig,
    out_dir: str,
    dataset: str | None = None,
    progress: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Run REINFORCE; writes metrics.csv and checkpoints under out_dir.

    Checkpoints are written atomically, so an I/O failure mid-run leaves
    the previous checkpoint intact. With epochs=0 only the initial
    checkpoint and the metrics header are produced.
    """
    os.makedirs(out_dir, exist_ok=True)
    policy = PolicyParams.init(config.policy_config, seed=config.seed)
    params = policy.parameters()
    adam = AdamState.for_params(params, lr=config.lr)

    critic = None
    critic_adam = None
    snapshot = None
    if config.baseline == "critic":
        critic = CriticParams.init(config.policy_config, seed=config.seed + 1)
        critic_adam = AdamState.for_params(critic.parameters(), lr=config.lr)
    else:
        snapshot = policy.clone().detached()

    ckpt_interval = config.checkpoint_interval or config.steps_per_epoch
    extra = {"train": config.to_dict()}
    initial_path = os.path.join(out_dir, "checkpoint-000000.ckpt")
    save_policy(initial_path, policy, step=0, seed=config.seed, extra_config=extra)
    last_ckpt = initial_path

    metrics_path = os.path.join(out_dir, "metrics.csv")
    metrics_rows: list[dict] = []
    pool = list(load_maps(dataset)) if dataset is not None else None

    with open(metrics_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
        global_step = 0
        for epoch in range(1, config.epochs + 1):
            for _ in range(config.steps_per_epoch):
                t0 = time.perf_counter()
                global_step += 1
                maps = _batch_maps(config, global_step - 1, pool)

                log_probs, costs, baselines, values = [], [], [], []
                for i, m in enumerate(maps):
                    res = rollout(
                        m,
                        policy,
                        mode="sample",
                        rng=_instance_rng(config.seed, 1, global_step - 1, i),
                        lambda_intra=config.lambda_intra,
                        closed=config.closed,
                    )
                    log_probs.append(res.log_prob)
                    costs.append(res.schedule.total_cost)
                    if critic is not None:
                        v = critic_value(m, critic)
                        values.append(v)
                        baselines.append(v.item())
                    else:
                        baselines.append(
                            rollout_baseline(
                                m, snapshot, config.lambda_intra, config.closed
                            )
                        )

                loss = reinforce_loss(log_probs, costs, baselines)
                ad.zero_grads(params)
                ad.backward(loss, params=params)
                grads = [p.grad for p in params]
                grad_norm = ad.clip_grads(grads, config.grad_clip)
                ad.adam_step(params, grads, adam)

                if critic is not None:
                    c_loss = critic_mse(values, costs)
                    c_params = critic.parameters()
                    ad.zero_grads(c_params)
                    ad.backward(c_loss, params=c_params)
                    c_grads = [p.grad for p in c_params]
                    ad.clip_grads(c_grads, config.grad_clip)
                    ad.adam_step(c_params, c_grads, critic_adam)

                if snapshot is not None and global_step % config.baseline_interval == 0:
                    snapshot = policy.clone().detached()

                advantages = np.asarray(costs) - np.asarray(baselines)
                row = {
                    "step": global_step,
                    "epoch": epoch,
                    "mean_cost": float(np.mean(costs)),
                    "mean_advantage": float(np.mean(advantages)),
                    "grad_norm": grad_norm,
                    "wall_ms": (time.perf_counter() - t0) * 1000.0,
                }
                writer.writerow(row)
                fh.flush()
                metrics_rows.append(row)
                if progress is not None:
                    progress(row)

                if global_step % ckpt_interval == 0:
                    path = os.path.join(out_dir, f"checkpoint-{global_step:06d}.ckpt")
                    save_policy(
                        path, policy, step=global_step, seed=config.seed,
                        extra_config=extra,
                    )
                    last_ckpt = path

    final_path = os.path.join(out_dir, "final.ckpt")
    save_policy(final_path, policy, step=global_step if config.epochs else 0,
                seed=config.seed, extra_config=extra)
    if critic is not None:
        save_arrays(
            os.path.join(out_dir, "critic.ckpt"),
            {name: t.data for name, t in critic.named_parameters().items()},
            config=config.policy_config.to_dict(),
            step=global_step if config.epochs else 0,
            seed=config.seed,
        )
    last_ckpt = final_path
    return TrainResult(
        policy=policy,
        metrics=metrics_rows,
        checkpoint_path=last_ckpt,
        metrics_path=metrics_path,
        critic=critic,
    )
