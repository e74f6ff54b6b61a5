"""Training objectives (ERM, GroupDRO, IRM, REx, DIRM) and affine worst cases."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .diffkernel import (
    GRID_SCALES,
    Model,
    Penalty,
    dirm_statistic,
    env_pass,
    loss_terms,
    penalty_terms,
    penalty_value,
)
from .errors import Unsupported, ValidationError
from .scm import EnvironmentData

KINDS = ("ERM", "GroupDRO", "IRM", "REx", "DIRM")
UPDATE_RULES = ("auto", "split", "joint")


@dataclass(frozen=True)
class ObjectiveSpec:
    """Which objective to train and how its penalty weight is scheduled.

    ``update`` selects how gradients reach the two parameter blocks:
    ``split`` sends only the mean loss to the head and loss + penalty to the
    representation; ``joint`` sends loss + penalty to both.  ``auto`` is
    ``split`` for models with hidden layers and ``joint`` for identity
    representations, where ``split`` would leave the penalty without any
    parameter to act on.
    """

    kind: str = "ERM"
    lambda_final: float = 0.0
    warmup_epochs: int = 0
    dirm_norm_mode: str = "point"
    dro_step: float = 0.01
    dirm_form: str = "sqnorm"
    schedule: str = "step"
    update: str = "auto"
    dro_mode: str = "exponentiated"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"must be one of {KINDS}", key="objective.kind")
        if not (self.lambda_final >= 0 and math.isfinite(self.lambda_final)):
            raise ValidationError("must be finite and >= 0", key="objective.lambda")
        if self.warmup_epochs < 0:
            raise ValidationError("must be >= 0", key="objective.warmup_epochs")
        if not self.dro_step > 0:
            raise ValidationError("must be > 0", key="objective.dro_step")
        if self.schedule not in ("step", "linear"):
            raise ValidationError("must be 'step' or 'linear'", key="objective.schedule")
        if self.update not in UPDATE_RULES:
            raise ValidationError(f"must be one of {UPDATE_RULES}", key="objective.update")
        if self.dro_mode not in ("exponentiated", "hardmax"):
            raise ValidationError("must be 'exponentiated' or 'hardmax'", key="objective.dro_mode")
        self.penalty  # validates form / mode

    @property
    def penalty(self) -> Penalty | None:
        if self.kind == "DIRM":
            return Penalty("dirm", self.dirm_form, self.dirm_norm_mode)
        if self.kind in ("IRM", "REx"):
            return Penalty(self.kind.lower())
        return None

    def lam(self, epoch: int) -> float:
        """Penalty weight at ``epoch`` (0-based)."""
        if self.penalty is None:
            return 0.0
        if self.schedule == "linear" and self.warmup_epochs > 0:
            return self.lambda_final * min(1.0, epoch / self.warmup_epochs)
        return self.lambda_final if epoch >= self.warmup_epochs else 0.0

    def rule_for(self, model: Model) -> str:
        if self.update != "auto":
            return self.update
        return "joint" if model.n_hidden == 0 else "split"


@dataclass
class GradReport:
    value: float
    grad_beta: np.ndarray
    grad_phi: np.ndarray
    env_losses: np.ndarray
    penalty: float = 0.0
    lam: float = 0.0
    per_env: dict = field(default_factory=dict)

    @property
    def grad(self) -> np.ndarray:
        """Gradient in ParamVector order (phi block, then beta block)."""
        return np.concatenate([self.grad_phi, self.grad_beta])


# -- penalties as plain functions ---------------------------------------------

def dirm_penalty(model: Model, envs: Sequence[EnvironmentData], form: str = "sqnorm") -> float:
    """Population variance of squared head-gradient norms at the current head."""
    return penalty_value(model, envs, Penalty("dirm", form, "point"))


def dirm_penalty_grid(model: Model, envs: Sequence[EnvironmentData], form: str = "sqnorm") -> float:
    """Mean of the point penalty over heads scaled by 0.25, 0.5, 1, 2 and 4."""
    return penalty_value(model, envs, Penalty("dirm", form, "scaled_grid"))


def dirm_penalty_from_grads(grads, form: str = "sqnorm") -> float:
    return dirm_statistic(np.asarray(grads, dtype=float), form)[0]


def irm_penalty(model: Model, envs: Sequence[EnvironmentData]) -> float:
    """Sum over environments of (d/dt L_e(t * score) at t = 1) squared."""
    return penalty_value(model, envs, Penalty("irm"))


def rex_penalty(model: Model, envs: Sequence[EnvironmentData]) -> float:
    return penalty_value(model, envs, Penalty("rex"))


def env_losses(model: Model, envs: Sequence[EnvironmentData]) -> np.ndarray:
    return np.array([env_pass(model, e).loss for e in envs])


def dro_reweight(weights, losses, step: float) -> np.ndarray:
    """Exponentiated-gradient ascent step on the group weights."""
    if not step > 0:
        raise ValidationError("step must be > 0", key="dro_step")
    w = np.asarray(weights, dtype=float)
    losses = np.asarray(losses, dtype=float)
    with np.errstate(divide="ignore"):
        logits = np.log(w) + step * losses
    logits -= logits.max()
    out = np.exp(logits)
    return out / out.sum()


def hardmax_weights(losses) -> np.ndarray:
    losses = np.asarray(losses, dtype=float)
    out = np.zeros_like(losses)
    out[int(np.argmax(losses))] = 1.0
    return out


def moment_residual(model: Model, env: EnvironmentData) -> np.ndarray:
    """Mean of grad_beta f * (y - f) over the environment (head block order)."""
    if model.link != "identity":
        raise Unsupported("moment_residual requires the identity link")
    return -0.5 * env_pass(model, env).g(model.head_bias)


def moment_residual_samples(model: Model, env: EnvironmentData) -> np.ndarray:
    """Per-sample terms whose mean is :func:`moment_residual` (n x p)."""
    if model.link != "identity":
        raise Unsupported("moment_residual requires the identity link")
    p = env_pass(model, env)
    return p.zt(model.head_bias) * (-0.5 * p.r)[:, None]


# -- total objective -----------------------------------------------------------

def total_objective(model: Model, envs: Sequence[EnvironmentData], spec: ObjectiveSpec, epoch: int = 0,
                    dro_weights=None) -> tuple[float, GradReport]:
    """Objective value and block gradients for one step.

    Value is the mean environment loss plus ``lam(epoch) * penalty``; for
    GroupDRO it is the ``dro_weights``-weighted sum of environment losses.
    """
    if not envs:
        raise ValidationError("at least one environment required", key="envs")
    passes = [env_pass(model, e) for e in envs]
    weights = None
    if spec.kind == "GroupDRO":
        weights = np.full(len(envs), 1.0 / len(envs)) if dro_weights is None else np.asarray(dro_weights, float)
    base, ct = loss_terms(model, passes, weights)
    losses = np.array([p.loss for p in passes])
    lam = spec.lam(epoch)
    pen = 0.0
    per_env = {}
    if spec.penalty is not None and lam > 0.0:
        pen, pct, per_env = penalty_terms(model, passes, spec.penalty)
        if spec.rule_for(model) == "joint":
            ct = ct.axpy(lam, pct)
            grad_beta = ct.beta
        else:
            grad_beta = ct.beta
            ct = ct.axpy(lam, pct)
        grad_phi = ct.phi(model, passes)
    else:
        grad_beta = ct.beta
        grad_phi = ct.phi(model, passes)
    value = base + lam * pen
    return value, GradReport(value, grad_beta, grad_phi, losses, pen, lam, per_env)


# -- affine worst case -----------------------------------------------------------

def affine_sup(losses, eta: float) -> float:
    """Supremum of sum(alpha_e * L_e) over {alpha_e >= -eta, sum alpha = 1}."""
    losses = np.asarray(losses, dtype=float)
    if losses.size < 1:
        raise ValidationError("at least one loss required", key="losses")
    if not eta >= 0:
        raise ValidationError("eta must be >= 0", key="eta")
    n = losses.size
    return float((1.0 + n * eta) * losses.max() - eta * losses.sum())


def affine_excess(losses, eta: float) -> float:
    """``(1 + n eta) * (max L - mean L)``; equals ``affine_sup - mean L``."""
    losses = np.asarray(losses, dtype=float)
    return float((1.0 + losses.size * eta) * (losses.max() - losses.mean()))


__all__ = [
    "GRID_SCALES",
    "GradReport",
    "KINDS",
    "ObjectiveSpec",
    "affine_excess",
    "affine_sup",
    "dirm_penalty",
    "dirm_penalty_from_grads",
    "dirm_penalty_grid",
    "dro_reweight",
    "env_losses",
    "hardmax_weights",
    "irm_penalty",
    "moment_residual",
    "moment_residual_samples",
    "rex_penalty",
    "total_objective",
]
