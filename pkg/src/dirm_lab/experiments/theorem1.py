"""Worst case over affine mixtures of environment losses, checked against vertex enumeration."""

from __future__ import annotations

from itertools import combinations
from typing import Sequence

import numpy as np

from ..errors import ValidationError
from ..objectives import affine_sup
from .report import ExperimentReport

REL_TOL = 1e-10


def vertex_oracle(losses, eta: float) -> float:
    """max of alpha . losses over {alpha_e >= -eta, sum alpha = 1} by enumerating vertices.

    A vertex has n - 1 active bound constraints; each candidate is solved as a
    linear system and kept if feasible.
    """
    losses = np.asarray(losses, dtype=float)
    n = losses.size
    best = -np.inf
    for active in combinations(range(n), n - 1):
        A = np.zeros((n, n))
        b = np.empty(n)
        for row, e in enumerate(active):
            A[row, e] = 1.0
            b[row] = -eta
        A[-1] = 1.0
        b[-1] = 1.0
        alpha = np.linalg.solve(A, b)
        if np.all(alpha >= -eta - 1e-12):
            best = max(best, float(alpha @ losses))
    return best


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def random_env_losses(rng: np.random.Generator, n_envs: int, d: int = 3, n: int = 16) -> np.ndarray:
    """Squared-error losses of one random linear model on ``n_envs`` shifted environments."""
    beta_true = rng.standard_normal(d)
    beta = beta_true + rng.standard_normal(d)
    out = np.empty(n_envs)
    for e in range(n_envs):
        x = rng.normal(rng.normal(0, 1, d), rng.uniform(0.5, 2.0, d), size=(n, d))
        y = x @ beta_true + rng.normal(rng.normal(), rng.uniform(0.5, 2.0), n)
        out[e] = np.mean((y - x @ beta) ** 2)
    return out


def run_theorem1_check(n_envs: Sequence[int] = (2, 3, 4), eta_grid: Sequence[float] = (0.0, 0.5, 1.0, 5.0),
                       trials: int = 1000, seed: int = 0) -> ExperimentReport:
    """Per trial and eta: affine_sup, vertex oracle, and both sides of sup - mean = (1 + n eta)(max - mean)."""
    if trials < 1:
        raise ValidationError("trials must be >= 1", key="trials")
    n_envs = tuple(int(k) for k in n_envs)
    eta_grid = tuple(float(e) for e in eta_grid)
    if not n_envs or min(n_envs) < 1 or not eta_grid or min(eta_grid) < 0:
        raise ValidationError("need n_envs >= 1 and eta >= 0", key="grid")
    rng = np.random.Generator(np.random.Philox(seed))
    report = ExperimentReport(
        "theorem1",
        {"n_envs": n_envs, "eta": eta_grid},
        ("objective", "seed", "trial", "n_envs", "eta", "affine_sup", "oracle", "mean_loss", "max_loss",
         "excess", "excess_formula", "rel_err_oracle", "rel_err_identity", "ok"),
        seeds=(seed,),
        provenance={"trials": trials, "rel_tol": REL_TOL, "loss": "squared error of a random linear model"},
    )
    for t in range(trials):
        k = int(rng.choice(n_envs))
        L = random_env_losses(rng, k)
        mean, mx = float(L.mean()), float(L.max())
        for eta in eta_grid:
            sup = affine_sup(L, eta)
            orc = vertex_oracle(L, eta)
            excess = sup - mean
            formula = (1.0 + k * eta) * (mx - mean)
            e1 = _rel(sup, orc)
            # the excess is exactly zero only when all losses tie; fall back to the loss scale then
            e2 = _rel(excess, formula) if formula != 0 else abs(excess) / max(abs(mean), 1e-300)
            report.rows.append(("affine_sup", seed, t, k, eta, sup, orc, mean, mx, excess, formula, e1, e2,
                                bool(e1 < REL_TOL and e2 < REL_TOL)))
    return report


def all_ok(report: ExperimentReport) -> bool:
    return all(report.values("ok"))
