"""Objective, learning-rate schedule, training loop and checkpoints."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .model import ModelConfig, Prediction, Sample, SEMNet
from .supervision import InvalidAnnotation

log = logging.getLogger(__name__)

TRAIN_SCHEMA_VERSION = 1
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    lambda_row: float = 1.0
    lambda_col: float = 1.0
    lambda_merge: float = 1.0
    lr_max: float = 1e-4
    lr_min: float = 1e-6
    t_max: int | None = None  # iterations; derived from epochs when unset
    epochs: int = 10
    batch_size: int = 4
    optimizer: str = "adam"  # or "adadelta"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-9
    grad_clip: float | None = None
    # probability of drawing the merger's lattice lines uniformly inside the separator bands
    lattice_jitter: float = 0.0
    # train each step on a random left-right / top-bottom mirror of the sample
    flip_augment: bool = False
    seed: int = 0
    log_every: int = 50
    version: int = TRAIN_SCHEMA_VERSION

    def __post_init__(self):
        if not self.lr_min < self.lr_max:
            raise ValueError("lr_min must be below lr_max")
        if self.t_max is not None and self.t_max <= 0:
            raise ValueError("t_max must be positive")
        if not 0.0 <= self.lattice_jitter <= 1.0:
            raise ValueError("lattice_jitter must be a probability")
        if self.optimizer not in ("adam", "adadelta"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


class TrainingDiverged(RuntimeError):
    pass


def objective(losses: Sequence, cfg: TrainConfig):
    l_row, l_col, l_m = losses
    return cfg.lambda_row * l_row + cfg.lambda_col * l_col + cfg.lambda_merge * l_m


def lr_schedule(t: int, cfg: TrainConfig, t_max: int | None = None) -> float:
    """Cosine annealing from lr_max at t=0 to lr_min at t=t_max, flat afterwards."""
    t_max = t_max or cfg.t_max
    if t_max is None:
        raise ValueError("t_max is not set")
    if t >= t_max:
        return cfg.lr_min
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1 + math.cos(t / t_max * math.pi))


def make_optimizer(params, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "adadelta":
        return torch.optim.Adadelta(params, lr=cfg.lr_max, rho=cfg.beta1, eps=cfg.eps)
    return torch.optim.Adam(params, lr=cfg.lr_max, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)


@dataclass
class TrainHistory:
    steps: list[dict] = field(default_factory=list)
    seconds: float = 0.0


def train(samples: Sequence[Sample], model: SEMNet, cfg: TrainConfig, out_dir=None,
          callback: Callable[[int, dict], None] | None = None) -> TrainHistory:
    """Optimize ``model`` in place on prepared samples.

    Images have different sizes, so a batch is a set of per-sample forward
    passes whose gradients are accumulated before one optimizer step.
    """
    if not samples:
        raise ValueError("empty training set")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    steps_per_epoch = math.ceil(len(samples) / cfg.batch_size)
    t_max = cfg.t_max or cfg.epochs * steps_per_epoch
    opt = make_optimizer(model.parameters(), cfg)
    history = TrainHistory()
    start = time.time()
    model.train()
    flips: dict = {}
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(samples))
        for b in range(steps_per_epoch):
            if step >= t_max:
                break
            batch = [samples[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            if cfg.flip_augment:
                batch = [_flipped(model, s, int(rng.integers(4)), flips) for s in batch]
            lr = lr_schedule(step, cfg, t_max)
            for group in opt.param_groups:
                group["lr"] = lr
            opt.zero_grad(set_to_none=True)
            totals = np.zeros(4)
            for s in batch:
                lattice = s.jittered_lattice(rng) if rng.random() < cfg.lattice_jitter else None
                losses = model.losses(s, lattice)
                obj = objective(losses, cfg)
                if not torch.isfinite(obj):
                    _dump_divergence(out_dir, step, s, losses)
                    raise TrainingDiverged(f"non-finite loss at step {step} on {s.annotation.image_id!r}")
                (obj / len(batch)).backward()
                totals += [obj.item(), *(float(v.detach()) for v in losses)]
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            rec = dict(zip(("objective", "row", "col", "merge"), (totals / len(batch)).tolist()),
                       step=step, epoch=epoch, lr=lr)
            history.steps.append(rec)
            if callback is not None:
                callback(step, rec)
            if cfg.log_every and step % cfg.log_every == 0:
                log.info("step %d epoch %d lr %.2e obj %.4f row %.4f col %.4f merge %.4f",
                         step, epoch, lr, rec["objective"], rec["row"], rec["col"], rec["merge"])
            step += 1
        if out_dir is not None:
            save_checkpoint(Path(out_dir) / "checkpoint.pt", model, cfg, history)
    history.seconds = time.time() - start
    model.eval()
    return history


def _flipped(model: SEMNet, sample: Sample, k: int, cache: dict) -> Sample:
    """Mirror ``k`` of ``sample`` (bit 0 left-right, bit 1 top-bottom), built once and cached."""
    if k == 0:
        return sample
    key = (id(sample), k)
    if key not in cache:
        try:
            cache[key] = model.flip_sample(sample, bool(k & 1), bool(k & 2))
        except InvalidAnnotation:
            cache[key] = sample
    return cache[key]


def _dump_divergence(out_dir, step, sample: Sample, losses) -> None:
    if out_dir is None:
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"diverged_step{step}.json").write_text(json.dumps({
        "step": step, "image_id": sample.annotation.image_id,
        "losses": [float(v.detach()) for v in losses],
        "image_shape": list(sample.image.shape), "grid_shape": list(sample.lattice.shape),
    }, indent=2))


def save_checkpoint(path, model: SEMNet, train_cfg: TrainConfig | None = None, history: TrainHistory | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "version": CHECKPOINT_VERSION,
        "model_config": model.cfg.to_dict(),
        "train_config": train_cfg.to_dict() if train_cfg else None,
        "state_dict": model.state_dict(),
        "history": history.steps if history else [],
    }, path)


def load_checkpoint(path) -> SEMNet:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if ckpt.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {ckpt.get('version')}")
    model = SEMNet(ModelConfig.from_dict(ckpt["model_config"]))
    model.load_state_dict(ckpt["state_dict"])
    model.eval()
    return model


def predict(image, checkpoint, tokens=None) -> Prediction:
    """Full inference from a checkpoint path or a loaded model."""
    model = checkpoint if isinstance(checkpoint, SEMNet) else load_checkpoint(checkpoint)
    model.eval()
    return model.predict(image, tokens)
