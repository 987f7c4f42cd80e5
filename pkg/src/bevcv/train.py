"""Joint training of the two projection heads on frozen branch features."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBatch, ShapeMismatch, ValidationError
from .loss import LossConfig, batch_triplet_loss, ntxent_loss
from .net.heads import head_backward, head_forward, pool_features, trainable_names
from .net.model import init_head_weights

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainerConfig:
    lr: float = 1e-4
    epochs: int = 80
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    plateau_threshold: float = 1e-4
    min_lr: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValidationError("lr", f"lr must be > 0, got {self.lr}")
        if self.epochs < 1:
            raise ValidationError("epochs", "epochs must be >= 1")
        if self.batch_size < 2:
            raise ValidationError("batch_size", "batch_size must be >= 2")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("beta1", "Adam betas must lie in [0, 1)")
        if not 0 < self.plateau_factor < 1:
            raise ValidationError("plateau_factor", "plateau_factor must lie in (0, 1)")
        if self.plateau_patience < 0:
            raise ValidationError("plateau_patience", "plateau_patience must be >= 0")


class Adam:
    def __init__(self, params: dict, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class ReduceLROnPlateau:
    """Multiplies the learning rate by ``factor`` after ``patience`` epochs without relative improvement."""

    def __init__(self, factor=0.5, patience=5, threshold=1e-4, min_lr=0.0):
        self.factor, self.patience, self.threshold, self.min_lr = factor, patience, threshold, min_lr
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, metric: float, lr: float) -> float:
        if not np.isfinite(self.best) or metric < self.best - abs(self.best) * self.threshold:
            self.best = metric
            self.bad_epochs = 0
            return lr
        self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            self.bad_epochs = 0
            return max(lr * self.factor, self.min_lr)
        return lr


@dataclass
class TrainResult:
    weights: dict
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)

    def trace_rows(self):
        return [(i + 1, loss, lr) for i, (loss, lr) in enumerate(zip(self.losses, self.lrs))]


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    b = min(batch_size, n)
    out = [order[i:i + b] for i in range(0, n, b)]
    if len(out) > 1 and len(out[-1]) < 2:  # a single leftover pair has no negatives
        out[-2] = np.concatenate([out[-2], out[-1]])
        out.pop()
    return out


def train_heads(pov_feats, aer_feats, cfg: TrainerConfig = TrainerConfig(),
                loss_cfg: LossConfig = LossConfig(), weights: dict | None = None,
                embed_dim: int = 512) -> TrainResult:
    """Train both projection heads jointly.

    ``pov_feats`` / ``aer_feats`` are (N, C, H, W) feature batches (or already
    pooled (N, C) arrays).  Heads start from ``weights`` when given, else from
    seeded random weights.  The shuffle order is drawn from ``cfg.seed``.
    """
    pov = pool_features(pov_feats) if np.ndim(pov_feats) == 4 else np.asarray(pov_feats, np.float64)
    aer = pool_features(aer_feats) if np.ndim(aer_feats) == 4 else np.asarray(aer_feats, np.float64)
    if len(pov) != len(aer):
        raise ShapeMismatch(f"{len(pov)} pov features for {len(aer)} aerial features")
    if len(pov) < 2:
        raise DegenerateBatch(f"training needs at least 2 pairs, got {len(pov)}")
    rng = np.random.default_rng(cfg.seed)
    if weights is None:
        weights = init_head_weights(np.random.default_rng(cfg.seed), embed_dim, aer.shape[1])
    weights = {k: np.array(v, dtype=np.float64) if k.startswith("proj_") else v for k, v in weights.items()}
    names = trainable_names("pov") + trainable_names("aer")
    params = {k: weights[k] for k in names}
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    sched = ReduceLROnPlateau(cfg.plateau_factor, cfg.plateau_patience, cfg.plateau_threshold, cfg.min_lr)
    result = TrainResult(weights)

    for epoch in range(cfg.epochs):
        batch_losses = []
        for idx in _batches(len(pov), cfg.batch_size, rng):
            ep, cp = head_forward(pov[idx], weights, "pov", training=True)
            ea, ca = head_forward(aer[idx], weights, "aer", training=True)
            if loss_cfg.kind == "triplet":
                loss, gp, ga = batch_triplet_loss(ep, ea, loss_cfg.margin)
            else:
                loss, gp, ga = ntxent_loss(ep, ea, loss_cfg)
            grads = head_backward(cp, weights, "pov", gp)
            grads.update(head_backward(ca, weights, "aer", ga))
            opt.step(params, grads)
            for k, v in {**cp["running"], **ca["running"]}.items():
                weights[k] = v
            batch_losses.append(loss)
        epoch_loss = float(np.mean(batch_losses))
        result.losses.append(epoch_loss)
        result.lrs.append(opt.lr)
        opt.lr = sched.step(epoch_loss, opt.lr)
        log.debug("epoch %d loss %.6f lr %.2e", epoch + 1, epoch_loss, opt.lr)

    result.weights = {k: (v.astype(np.float32) if k.startswith("proj_") else v) for k, v in weights.items()}
    return result
