"""Shared preset constants, seed derivation and the grid-cell runner."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from typing import Callable, Iterable, Sequence

import numpy as np

from ..diffkernel import Model, linear_model
from ..objectives import ObjectiveSpec
from ..scm import NO_INTERVENTION, EnvironmentData, SCMSpec, intro_example_spec, sample, scm_to_dict
from ..trainer import TrainConfig, train

# Training settings shared by the intro-example presets.  Full-batch Adam;
# the penalty is switched on after an ERM warm-up so that large weights start
# from the pooled least-squares fit.
INTRO_N = 10_000
INTRO_TEST_N = 10_000
INTRO_SIGMA2 = (1.0, 2.0)
INTRO_EPOCHS = 5000
INTRO_WARMUP = 1000
INTRO_LR = 1e-2
LARGE_LAMBDA = 1e4
FIG1_LAMBDAS = (0.0, 0.1, 1.0, 10.0, 100.0, 1e4)
SHIFT_GRID = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)


def env_seed(seed: int, *path: int) -> int:
    """Independent 32-bit seed for a sub-stream (environment, test set, ...)."""
    return int(np.random.SeedSequence([int(seed), *map(int, path)]).generate_state(1)[0])


def intro_config(n: int, seed: int, epochs: int = INTRO_EPOCHS) -> TrainConfig:
    return TrainConfig(learning_rate=INTRO_LR, epochs=epochs, batch_size=n, optimizer="adam", seed=seed)


def dirm_objective(lam: float, form: str = "vector", warmup: int = INTRO_WARMUP, mode: str = "point") -> ObjectiveSpec:
    return ObjectiveSpec("DIRM", lambda_final=lam, warmup_epochs=warmup if lam > 0 else 0,
                         dirm_form=form, dirm_norm_mode=mode)


def intro_envs(confounded: bool, n: int, seed: int, sigma2: Sequence[float] = INTRO_SIGMA2) -> list[EnvironmentData]:
    """Training environments differing in the variance of E_X1 and E_X2."""
    return [
        sample(intro_example_spec(confounded, s), NO_INTERVENTION, n, env_seed(seed, k), env_id=f"sigma2={s:g}")
        for k, s in enumerate(sigma2)
    ]


def zero_linear(d: int, head_bias: bool = False) -> Model:
    return linear_model(np.zeros(d), 0.0, head_bias=head_bias)


def fit(envs, objective: ObjectiveSpec, config: TrainConfig, head_bias: bool = False) -> Model:
    model, _ = train(zero_linear(envs[0].x.shape[1], head_bias), envs, objective, config)
    return model


def pooled_ols(envs: Sequence[EnvironmentData]) -> np.ndarray:
    x = np.concatenate([e.x for e in envs])
    y = np.concatenate([e.y for e in envs])
    return np.linalg.lstsq(x, y, rcond=None)[0]


def mse_of(coef, env: EnvironmentData) -> float:
    resid = env.y - env.x @ np.asarray(coef, dtype=float)
    return float(np.mean(resid * resid))


def run_cells(fn: Callable, cells: Iterable, threads: int = 1) -> list:
    """Evaluate ``fn`` on each cell; results come back in cell order."""
    cells = list(cells)
    if threads <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, cells))


def describe(obj) -> dict:
    """Plain-dict description of a dataclass preset for manifests."""
    return {k: v for k, v in asdict(obj).items() if v is not None}


def scm_summary(spec: SCMSpec) -> dict:
    return scm_to_dict(spec)
