"""Deterministic mini-batch training with the split block update."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .diffkernel import Model, env_pass, from_vector
from .errors import EmptySplit, NonFiniteLoss, Unsupported, ValidationError
from .objectives import ObjectiveSpec, dro_reweight, env_losses, hardmax_weights, total_objective
from .scm import EnvironmentData


@dataclass(frozen=True)
class EarlyStop:
    fraction: float = 0.2
    patience: int = 10

    def __post_init__(self):
        if not 0.0 <= self.fraction < 1.0:
            raise ValidationError("must be in [0, 1)", key="train.early_stop.fraction")
        if self.patience < 1:
            raise ValidationError("must be >= 1", key="train.early_stop.patience")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 100
    batch_size: int = 128
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    early_stop: EarlyStop | None = None
    l2_reg: float = 0.0

    def __post_init__(self):
        if not self.learning_rate >= 0 or not math.isfinite(self.learning_rate):
            raise ValidationError("must be finite and >= 0", key="train.learning_rate")
        if self.epochs < 1:
            raise ValidationError("must be >= 1", key="train.epochs")
        if self.batch_size < 1:
            raise ValidationError("must be >= 1", key="train.batch_size")
        if self.optimizer not in ("sgd", "adam"):
            raise ValidationError("must be 'sgd' or 'adam'", key="train.optimizer")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ValidationError("invalid Adam constants", key="train.adam")
        if self.l2_reg < 0:
            raise ValidationError("must be >= 0", key="train.l2_reg")


@dataclass
class TrainTrace:
    env_ids: tuple[str, ...]
    feature_names: tuple[str, ...]
    losses: list = field(default_factory=list)
    penalty: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    coefs: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)
    best_epoch: int | None = None

    def __len__(self):
        return len(self.lam)

    def same_run(self, other: "TrainTrace") -> bool:
        """Equality of everything except wall-clock timings."""
        return (
            self.env_ids == other.env_ids
            and np.array_equal(np.array(self.losses), np.array(other.losses))
            and self.penalty == other.penalty
            and self.lam == other.lam
            and np.array_equal(np.array(self.coefs), np.array(other.coefs))
            and self.val_loss == other.val_loss
        )

    def rows(self):
        for epoch in range(len(self)):
            for e, env_id in enumerate(self.env_ids):
                coefs = list(self.coefs[epoch]) if self.coefs[epoch] is not None else []
                yield [epoch, env_id, self.losses[epoch][e], self.penalty[epoch], self.lam[epoch], *coefs]

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        has_coefs = bool(self.coefs) and self.coefs[0] is not None
        header = ["epoch", "env_id", "loss", "penalty", "lambda"]
        if has_coefs:
            header += [f"coef_{f}" for f in self.feature_names]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in self.rows():
                w.writerow([c if isinstance(c, (int, str)) else f"{c:.17g}" for c in row])
        return path


class _Adam:
    def __init__(self, cfg: TrainConfig, size: int):
        self.cfg = cfg
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta, grad):
        c = self.cfg
        self.t += 1
        self.m = c.adam_beta1 * self.m + (1 - c.adam_beta1) * grad
        self.v = c.adam_beta2 * self.v + (1 - c.adam_beta2) * grad * grad
        mhat = self.m / (1 - c.adam_beta1 ** self.t)
        vhat = self.v / (1 - c.adam_beta2 ** self.t)
        return theta - c.learning_rate * mhat / (np.sqrt(vhat) + c.adam_eps)


class _SGD:
    def __init__(self, cfg: TrainConfig, size: int):
        self.lr = cfg.learning_rate

    def step(self, theta, grad):
        return theta - self.lr * grad


def pooled_validation_split(envs: Sequence[EnvironmentData], fraction: float, seed: int):
    """Hold out ``round(fraction * n_e)`` rows of every environment.

    Returns ``(train_envs, validation_env)`` where the validation environment
    pools the held-out rows in environment order.
    """
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"fraction must be in (0, 1), got {fraction}", key="fraction")
    train, held = [], []
    for e, env in enumerate(envs):
        k = int(round(fraction * env.n))
        if k >= env.n:
            raise EmptySplit(f"environment {env.env_id!r} would lose all {env.n} rows")
        perm = np.random.Generator(np.random.Philox([seed, e])).permutation(env.n)
        train.append(env.subset(np.sort(perm[k:])))
        held.append(env.subset(np.sort(perm[:k])))
    n_val = sum(h.n for h in held)
    if n_val == 0:
        raise EmptySplit("validation split is empty")
    val = EnvironmentData(
        np.concatenate([h.x for h in held]), np.concatenate([h.y for h in held]), "validation", envs[0].feature_names
    )
    return train, val


def effective_coefficients(model: Model) -> np.ndarray:
    """Head weights of an identity-representation model, one per input feature."""
    if model.n_hidden:
        raise Unsupported("effective coefficients need a model without hidden layers")
    return model.head_w.copy()


def _l2_mask(model: Model) -> np.ndarray:
    mask = []
    for name, n in zip((e[0] for e in model.layout.entries), model.layout.sizes):
        mask.append(np.full(n, 1.0 if name.endswith(".W") or name == "beta.w" else 0.0))
    return np.concatenate(mask)


def train(init: Model, envs: Sequence[EnvironmentData], objective: ObjectiveSpec, config: TrainConfig):
    """Train ``init`` on ``envs``; returns ``(model, trace)``.

    Each step draws one batch of ``K = min(batch_size, min_e n_e)`` rows from
    every environment (without replacement, reshuffled each epoch from the
    run seed).  With early stopping the returned model is the one with the
    lowest pooled validation loss.
    """
    if not envs:
        raise ValidationError("at least one environment required", key="envs")
    val_env = None
    if config.early_stop is not None and config.early_stop.fraction > 0:
        envs, val_env = pooled_validation_split(envs, config.early_stop.fraction, config.seed)
    for e in envs:
        env_pass(init, e.subset(slice(0, 1)))  # dimension and label checks
    layout = init.layout
    link = init.link
    theta = init.to_vector()
    opt = (_Adam if config.optimizer == "adam" else _SGD)(config, theta.size)
    l2 = 2.0 * config.l2_reg * _l2_mask(init) if config.l2_reg > 0 else None
    rng = np.random.Generator(np.random.Philox(config.seed))
    n_min = min(e.n for e in envs)
    K = min(config.batch_size, n_min)
    full_batch = all(e.n == K for e in envs)
    steps = n_min // K
    q = np.full(len(envs), 1.0 / len(envs))

    trace = TrainTrace(tuple(e.env_id for e in envs), envs[0].feature_names)
    best = (math.inf, theta, None)
    since_best = 0
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        if full_batch:
            batches = [envs] * steps
        else:
            perms = [rng.permutation(e.n) for e in envs]
            batches = [[e.subset(p[j * K:(j + 1) * K]) for e, p in zip(envs, perms)] for j in range(steps)]
        ep_losses = np.zeros(len(envs))
        ep_pen = 0.0
        for batch in batches:
            model = from_vector(layout, theta, link)
            if objective.kind == "GroupDRO":
                losses = env_losses(model, batch)
                q = hardmax_weights(losses) if objective.dro_mode == "hardmax" else dro_reweight(q, losses, objective.dro_step)
            # overflow shows up as a non-finite value and is reported below
            with np.errstate(over="ignore", invalid="ignore"):
                value, rep = total_objective(model, batch, objective, epoch, dro_weights=q)
            if not np.isfinite(value) or not np.all(np.isfinite(rep.grad)):
                raise NonFiniteLoss(f"non-finite objective at epoch {epoch}", trace=trace)
            grad = rep.grad if l2 is None else rep.grad + l2 * theta
            theta = opt.step(theta, grad)
            ep_losses += rep.env_losses
            ep_pen += rep.penalty
        model = from_vector(layout, theta, link)
        trace.losses.append(ep_losses / steps)
        trace.penalty.append(ep_pen / steps)
        trace.lam.append(objective.lam(epoch))
        trace.coefs.append(None if model.n_hidden else model.head_w.copy())
        trace.wall_clock.append(time.perf_counter() - t0)
        if val_env is not None:
            vl = env_pass(model, val_env).loss
            trace.val_loss.append(vl)
            if vl < best[0]:
                best = (vl, theta, epoch)
                since_best = 0
            else:
                since_best += 1
                if since_best >= config.early_stop.patience:
                    break
    if val_env is not None:
        theta = best[1]
        trace.best_epoch = best[2]
    return from_vector(layout, theta, link), trace
