"""Feature-selection reproducibility on a synthetic multi-study classification task.

Generator (per study, rows independent):

* ``n_stable`` planted features ``S ~ N(0, 1)`` enter the logit with the same
  coefficients in every study;
* a study-level confounder ``C ~ N(0, 1)`` enters the logit with a
  study-specific weight and drives ``n_spurious`` features with
  study-specific loadings, so those features predict the label inside a
  study but not consistently across studies;
* ``n_noise`` features are pure noise.

Columns are standardized within each study.  Feature order is stable,
spurious, noise; names are ``f00``, ``f01``, ...
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..diffkernel import env_pass, linear_model
from ..errors import ValidationError
from ..objectives import ObjectiveSpec
from ..scm import EnvironmentData
from ..trainer import TrainConfig, pooled_validation_split, train
from .common import env_seed, run_cells
from .report import ExperimentReport, PlotSpec

STABLE_COEFS = (1.2, -1.0, 0.9, -0.8, 0.7)
SIGNIFICANCE = 0.1
LAMBDA_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
RUN_LEVEL = 0.8


@dataclass(frozen=True)
class StudyGenerator:
    n_stable: int = 5
    n_spurious: int = 5
    n_noise: int = 10
    n_per_study: int = 400
    confounder_scale: float = 1.5
    loading_scale: float = 1.0

    @property
    def n_features(self) -> int:
        return self.n_stable + self.n_spurious + self.n_noise

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(f"f{j:02d}" for j in range(self.n_features))

    @property
    def stable(self) -> tuple[str, ...]:
        return self.feature_names[: self.n_stable]

    def coefs(self) -> np.ndarray:
        reps = -(-self.n_stable // len(STABLE_COEFS))
        return np.tile(STABLE_COEFS, reps)[: self.n_stable]

    def study(self, seed: int, index: int) -> EnvironmentData:
        rng = np.random.Generator(np.random.Philox(env_seed(seed, 300, index)))
        n = self.n_per_study
        S = rng.standard_normal((n, self.n_stable))
        C = rng.standard_normal(n)
        a = rng.normal(0.0, self.confounder_scale)
        load = rng.normal(0.0, self.loading_scale, self.n_spurious)
        logit = S @ self.coefs() + a * C
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-logit))).astype(float)
        spur = np.outer(C, load) + rng.standard_normal((n, self.n_spurious))
        noise = rng.standard_normal((n, self.n_noise))
        x = np.hstack([S, spur, noise])
        x = (x - x.mean(axis=0)) / x.std(axis=0)
        return EnvironmentData(x, y, f"study{index}", self.feature_names)

    def studies(self, seed: int, n_studies: int) -> list[EnvironmentData]:
        return [self.study(seed, k) for k in range(n_studies)]


def feature_config(seed: int, n: int, epochs: int = 300) -> TrainConfig:
    return TrainConfig(learning_rate=0.05, epochs=epochs, batch_size=n, optimizer="adam", seed=seed)


def logistic_fit(envs, objective: ObjectiveSpec, config: TrainConfig):
    init = linear_model(np.zeros(envs[0].x.shape[1]), 0.0, link="logistic", head_bias=True)
    return train(init, envs, objective, config)[0]


def feature_objective(lam: float, mode: str = "point", warmup: int = 100) -> ObjectiveSpec:
    if lam == 0:
        return ObjectiveSpec("ERM")
    return ObjectiveSpec("DIRM", lambda_final=lam, warmup_epochs=warmup, dirm_form="vector", dirm_norm_mode=mode)


def select_top(scores: np.ndarray, top_k: int, threshold: float = SIGNIFICANCE) -> np.ndarray:
    """Boolean mask of the ``top_k`` largest scores among those >= threshold (ties by index)."""
    order = sorted(range(scores.size), key=lambda j: (-scores[j], j))
    chosen = [j for j in order if scores[j] >= threshold][:top_k]
    mask = np.zeros(scores.size, dtype=bool)
    mask[chosen] = True
    return mask


def run_feature_stability(n_studies: int = 20, pairs: int = 100, lambda_grid: Sequence[float] = LAMBDA_GRID,
                          top_k: int = 10, seeds=(0,), generator: StudyGenerator = StudyGenerator(),
                          epochs: int = 300, threads: int = 1) -> ExperimentReport:
    """ERM vs DIRM feature selection over random pairs of studies.

    ERM scores features by ``|coef|``.  DIRM scores by the smallest ``|coef|``
    across ``lambda_grid``, so a feature is significant only if it stays above
    the threshold for every penalty weight.
    """
    lambda_grid = tuple(float(v) for v in lambda_grid)
    if top_k < 1 or top_k > generator.n_features:
        raise ValidationError(f"top_k must be in [1, {generator.n_features}]", key="top_k")
    if not lambda_grid or min(lambda_grid) < 0:
        raise ValidationError("lambda grid must be non-empty and >= 0", key="lambda_grid")
    all_pairs = [(i, j) for i in range(n_studies) for j in range(i + 1, n_studies)]
    if pairs < 1 or pairs > len(all_pairs):
        raise ValidationError(f"pairs must be in [1, {len(all_pairs)}]", key="pairs")
    seeds = tuple(int(s) for s in ((seeds,) if isinstance(seeds, int) else seeds))
    names = generator.feature_names

    def cell(args):
        seed, run, (i, j), studies = args
        envs = [studies[i], studies[j]]
        cfg = feature_config(env_seed(seed, 400, run), generator.n_per_study, epochs)
        fits = {lam: np.abs(logistic_fit(envs, feature_objective(lam), cfg).head_w) for lam in sorted({0.0, *lambda_grid})}
        erm = fits[0.0]
        dirm = np.min([fits[lam] for lam in lambda_grid], axis=0)
        rows = []
        for obj, score in (("ERM", erm), ("DIRM", dirm)):
            top = select_top(score, top_k)
            for f, name in enumerate(names):
                rows.append((obj, seed, run, f"{i}-{j}", name, float(score[f]), bool(score[f] >= SIGNIFICANCE),
                             bool(top[f])))
        return rows

    cells = []
    for seed in seeds:
        studies = generator.studies(seed, n_studies)
        rng = np.random.Generator(np.random.Philox(env_seed(seed, 500)))
        chosen = rng.choice(len(all_pairs), size=pairs, replace=False)
        cells += [(seed, run, all_pairs[c], studies) for run, c in enumerate(chosen)]

    report = ExperimentReport(
        "features",
        {"feature": names},
        ("objective", "seed", "run", "pair", "feature", "score", "significant", "in_top_k"),
        seeds=seeds,
        provenance={"n_studies": n_studies, "pairs": pairs, "lambda_grid": list(lambda_grid), "top_k": top_k,
                    "threshold": SIGNIFICANCE, "generator": generator.__dict__, "stable_features": list(generator.stable),
                    "dirm_form": "vector", "epochs": epochs},
        plots=(PlotSpec("intersection_curve", "runs", "features", "objective"),),
    )
    for rows in run_cells(cell, cells, threads):
        report.rows.extend(rows)
    report.tables["intersections"] = intersection_table(report)
    return report


def selection_counts(report: ExperimentReport, objective: str) -> dict[str, int]:
    """Number of runs in which each feature made the top-k."""
    counts = {f: 0 for f in report.axes["feature"]}
    for rec in report.records(objective=objective):
        counts[rec["feature"]] += int(rec["in_top_k"])
    return counts


def n_runs(report: ExperimentReport) -> int:
    return len({(r["seed"], r["run"]) for r in report.records(objective="ERM")})


def intersection_count(report: ExperimentReport, objective: str, level: float = RUN_LEVEL) -> int:
    """Features selected in at least ``level`` of all runs."""
    need = level * n_runs(report)
    return sum(c >= need for c in selection_counts(report, objective).values())


def intersection_table(report: ExperimentReport):
    """For r = 1..runs, the number of features selected in at least r runs."""
    total = n_runs(report)
    rows = []
    counts = {o: selection_counts(report, o) for o in ("ERM", "DIRM")}
    for r in range(1, total + 1):
        rows.append((r, *(sum(c >= r for c in counts[o].values()) for o in ("ERM", "DIRM"))))
    return ("runs", "ERM", "DIRM"), rows


def run_penalty_modes(seeds=range(10), lam: float = 1.0, n_studies: int = 2,
                      generator: StudyGenerator = StudyGenerator(), epochs: int = 300,
                      fraction: float = 0.2, threads: int = 1) -> ExperimentReport:
    """Validation accuracy of DIRM with the point and the scaled-grid penalty."""
    seeds = tuple(int(s) for s in ((seeds,) if isinstance(seeds, int) else seeds))

    def cell(seed):
        studies = generator.studies(seed, n_studies)
        train_envs, val = pooled_validation_split(studies, fraction, seed)
        n = min(e.n for e in train_envs)
        rows = []
        for mode in ("point", "scaled_grid"):
            model = logistic_fit(train_envs, feature_objective(lam, mode), feature_config(seed, n, epochs))
            p = env_pass(model, val)
            acc = float(np.mean((p.s > 0) == (val.y > 0.5)))
            rows.append(("DIRM", seed, mode, lam, 100.0 * acc))
        return rows

    report = ExperimentReport(
        "penalty-modes",
        {"mode": ("point", "scaled_grid")},
        ("objective", "seed", "mode", "lambda", "val_accuracy"),
        seeds=seeds,
        provenance={"lambda": lam, "n_studies": n_studies, "validation_fraction": fraction, "epochs": epochs,
                    "generator": generator.__dict__, "dirm_form": "vector"},
    )
    for rows in run_cells(cell, seeds, threads):
        report.rows.extend(rows)
    return report
