"""Randomized sample generation and the optimization loop."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import ChannelConfig, ChannelRealization, generate_realization
from .interference import DEFAULT_P10, InterferenceMask, apply_mask, dtmc_for_target, generate_mask
from .losses import LossBreakdown, LossWeights, composite_loss
from .model import FeatureGrid, ModelConfig, ParameterStore, forward_tensors, init_params, save_checkpoint
from .numerics import derive_stream

log = logging.getLogger(__name__)

# first stream-id component; keeps training, evaluation and init draws disjoint
TRAIN_DOMAIN = 0
EVAL_DOMAIN = 1
INIT_DOMAIN = 2


@dataclass
class Sample:
    features: FeatureGrid
    truth: np.ndarray
    mask: InterferenceMask
    realization: ChannelRealization
    velocity: float
    pi_busy: float


def make_sample(channel: ChannelConfig, pi_busy: float, seed: int, domain: int, index: int, p10: float = DEFAULT_P10) -> Sample:
    """Realization and mask drawn from two independent streams keyed by ``index``.

    Channel and mask use separate streams, so the mask for a given index
    does not depend on the channel parameters (and vice versa).
    """
    real = generate_realization(channel, derive_stream(seed, domain, index, 1), seed=(seed, domain, index))
    mask = generate_mask(dtmc_for_target(pi_busy, p10), channel.T, channel.nb, channel.fb, derive_stream(seed, domain, index, 2))
    masked = apply_mask(real.cfr, mask)
    return Sample(FeatureGrid.from_observation(masked, mask), real.cfr, mask, real, channel.velocity, pi_busy)


@dataclass
class TrainConfig:
    epochs: int = 70
    steps_per_epoch: int = 5000
    lr: float = 1e-3
    weight_decay: float = 1e-4
    clip_norm: float = 1.0
    v_min: float = 0.5
    v_max: float = 30.0
    pi_min: float = 0.1
    pi_max: float = 0.9
    p10: float = DEFAULT_P10
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.epochs < 1 or self.steps_per_epoch < 1:
            raise ValueError("epochs and steps_per_epoch must be >= 1")
        if not 0 <= self.v_min <= self.v_max:
            raise ValueError("need 0 <= v_min <= v_max")
        if not 0 <= self.pi_min <= self.pi_max < 1:
            raise ValueError("need 0 <= pi_min <= pi_max < 1")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")
        c, m = self.channel, self.model
        if (c.T, c.nb, c.fb) != (m.T, m.nb, m.fb):
            raise ValueError(f"model geometry {(m.T, m.nb, m.fb)} differs from channel geometry {(c.T, c.nb, c.fb)}")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch


def draw_training_sample(cfg: TrainConfig, step_index: int) -> Sample:
    """Sample with velocity and occupancy drawn uniformly from the configured ranges."""
    rng = derive_stream(cfg.seed, TRAIN_DOMAIN, step_index, 0)
    v = float(rng.uniform(cfg.v_min, cfg.v_max)) if cfg.v_max > cfg.v_min else float(cfg.v_min)
    pi = float(rng.uniform(cfg.pi_min, cfg.pi_max)) if cfg.pi_max > cfg.pi_min else float(cfg.pi_min)
    return make_sample(cfg.channel.with_(velocity=v), pi, cfg.seed, TRAIN_DOMAIN, step_index, cfg.p10)


# ---------------------------------------------------------------------------
# optimizer pieces


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    lr: float = 0.0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8


def adamw_step(params: ParameterStore, state: OptimizerState, lr: float, weight_decay: float) -> OptimizerState:
    """Decoupled-weight-decay Adam update; clears gradients afterwards.

    Decay is applied to matrices only (not to biases or LayerNorm vectors).
    """
    b1, b2 = state.betas
    for name, t in params.items():
        if t.grad is not None and not np.isfinite(t.grad).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
    state.step += 1
    state.lr = lr
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, t in params.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay and t.data.ndim >= 2:
            t.data *= 1.0 - lr * weight_decay
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        t.data -= update.astype(t.data.dtype)
        t.grad = None
    return state


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return max(0.0, lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps)))


def global_grad_norm(params: ParameterStore) -> float:
    total = 0.0
    for _, t in params.items():
        if t.grad is not None:
            total += float(np.sum(np.square(t.grad, dtype=np.float64)))
    return math.sqrt(total)


def clip_gradients(params: ParameterStore, max_norm: float) -> float:
    """Rescale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = global_grad_norm(params)
    if norm > max_norm:
        for _, t in params.items():
            if t.grad is not None:
                # shave two ulps so per-element rounding cannot push the norm past max_norm
                scale = max_norm / norm * (1.0 - 2.0 * np.finfo(t.grad.dtype).eps)
                t.grad = t.grad * t.grad.dtype.type(scale)
    return norm


# ---------------------------------------------------------------------------
# loop


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainResult:
    checkpoint: Path
    epoch_losses: list
    params: ParameterStore
    epoch_checkpoints: list


def checkpoint_name(seed: int, epoch: int | None, tag: str = "cfrt") -> str:
    when = "final" if epoch is None else f"epoch{epoch:03d}"
    return f"{tag}_seed{seed}_{when}.ckpt"


def train_step(params: ParameterStore, cfg: TrainConfig, sample: Sample) -> tuple[LossBreakdown, float]:
    est = forward_tensors(sample.features, params, cfg.model)
    total, breakdown = composite_loss(est, sample.truth, cfg.weights)
    if not np.isfinite(breakdown.total):
        return breakdown, float("nan")
    total.backward()
    return breakdown, clip_gradients(params, cfg.clip_norm)


def train(cfg: TrainConfig, out_dir, log_every: int = 0, tag: str = "cfrt") -> TrainResult:
    """Run the full loop, checkpointing after each epoch and at the end.

    The learning rate follows one cosine arc over all optimizer steps. One
    JSON record per step is written to ``logs/<tag>_seed<seed>.jsonl``;
    checkpoints go to ``checkpoints/<tag>_seed<seed>_{epochNNN,final}.ckpt``.
    """
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    params = init_params(cfg.model, derive_stream(cfg.seed, INIT_DOMAIN), np.float32)
    state = OptimizerState()
    total = cfg.total_steps
    extra = {"seed": cfg.seed}
    epoch_losses, epoch_ckpts = [], []
    log_path = out / "logs" / f"{tag}_seed{cfg.seed}.jsonl"
    t0 = time.time()
    with open(log_path, "w") as logf:
        for epoch in range(cfg.epochs):
            running = 0.0
            for s in range(cfg.steps_per_epoch):
                k = epoch * cfg.steps_per_epoch + s
                sample = draw_training_sample(cfg, k)
                breakdown, norm = train_step(params, cfg, sample)
                if not (np.isfinite(breakdown.total) and np.isfinite(norm)):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch + 1} step {s}; last good checkpoint: "
                        f"{epoch_ckpts[-1] if epoch_ckpts else 'none'}"
                    )
                lr = cosine_lr(k, total, cfg.lr)
                adamw_step(params, state, lr, cfg.weight_decay)
                running += breakdown.total
                record = {
                    "epoch": epoch + 1,
                    "step": k,
                    "velocity": sample.velocity,
                    "pi_busy": sample.pi_busy,
                    **{f"loss_{key}": val for key, val in breakdown.as_dict().items()},
                    "grad_norm": norm,
                    "lr": lr,
                }
                logf.write(json.dumps(record) + "\n")
                if log_every and (k + 1) % log_every == 0:
                    log.info("step %d/%d loss %.4f (%.1fs)", k + 1, total, breakdown.total, time.time() - t0)
            epoch_losses.append(running / cfg.steps_per_epoch)
            path = out / "checkpoints" / checkpoint_name(cfg.seed, epoch + 1, tag)
            save_checkpoint(path, params, cfg.model, {**extra, "epoch": epoch + 1, "mean_loss": epoch_losses[-1]})
            epoch_ckpts.append(path)
            log.info("epoch %d mean loss %.5f", epoch + 1, epoch_losses[-1])
    final = out / "checkpoints" / checkpoint_name(cfg.seed, None, tag)
    save_checkpoint(final, params, cfg.model, {**extra, "epoch": cfg.epochs, "epoch_losses": epoch_losses})
    return TrainResult(final, epoch_losses, params, epoch_ckpts)
