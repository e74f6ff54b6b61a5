"""Acceptance criteria, each run at its stated tolerance.

Every test prints (and records for the terminal summary) one line of the
form ``PASS criterion k: ...`` or ``FAIL criterion k: ...`` before asserting.
These runs use the full presets and take several minutes in total.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from dirm_lab.diffkernel import LINKS, MAX_HIDDEN, fd_battery, linear_model, random_case
from dirm_lab.experiments import features, synthetic, theorem1
from dirm_lab.experiments.common import FIG1_LAMBDAS
from dirm_lab.objectives import ObjectiveSpec, dirm_penalty, dirm_penalty_grid, moment_residual_samples
from dirm_lab.scm import NO_INTERVENTION, intro_example_spec, sample, variance_intervention
from dirm_lab.trainer import TrainConfig, train

SEEDS = range(10)
TOL_COEF = 0.15


def record(k: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


# -- 1, 2: coefficient recovery --------------------------------------------------

@pytest.fixture(scope="module")
def coeffs_confounded():
    t0 = time.perf_counter()
    rep = synthetic.run_coeff_tables(True, seeds=SEEDS)
    return rep, time.perf_counter() - t0


def median_coefs(rep, objective):
    return rep.median("coef_X1", objective=objective), rep.median("coef_X2", objective=objective)


def test_criterion_1_coefficients_confounded(coeffs_confounded):
    rep, seconds = coeffs_confounded
    d1, d2 = median_coefs(rep, "DIRM")
    e1, e2 = median_coefs(rep, "ERM")
    ok = abs(d1) <= TOL_COEF and abs(d2 - 1) <= TOL_COEF and e1 >= 0.5 and e2 <= -0.5 and seconds < 300
    record(1, ok, f"DIRM median ({d1:.3f}, {d2:.3f}) needs |c1|<=0.15, |c2-1|<=0.15; "
                  f"ERM median ({e1:.3f}, {e2:.3f}) needs c1>=0.5, c2<=-0.5; runtime {seconds:.0f}s < 300s")


def test_criterion_2_coefficients_unconfounded():
    rep = synthetic.run_coeff_tables(False, seeds=SEEDS)
    d1, d2 = median_coefs(rep, "DIRM")
    e1, _ = median_coefs(rep, "ERM")
    ok = abs(d1) <= TOL_COEF and abs(d2 - 1) <= TOL_COEF and abs(e1) >= 0.3
    record(2, ok, f"DIRM median ({d1:.3f}, {d2:.3f}) within 0.15 of (0, 1); ERM |c1| = {abs(e1):.3f} >= 0.3")


# -- 3: interpolation over the penalty weight ------------------------------------------

def test_criterion_3_interpolation(coeffs_confounded):
    tol = 0.05
    problems = []
    reports = {axis: synthetic.run_fig1("confounded", axis, lambdas=FIG1_LAMBDAS, seeds=SEEDS)
               for axis in ("observed", "hidden")}
    path = synthetic.fig1_coefficient_path(reports["observed"])
    c1 = [c for _, c, _ in path]
    ols = reports["observed"].median("coef_X1", objective="OLS")
    if abs(c1[0] - ols) > tol:
        problems.append(f"c1(lambda=0)={c1[0]:.3f} vs pooled OLS {ols:.3f}")
    if any(b > a + tol for a, b in zip(c1, c1[1:])):
        problems.append("c1 path not monotone")
    if abs(c1[-1]) > TOL_COEF:
        problems.append(f"c1(lambda=1e4)={c1[-1]:.3f} not near 0")
    worst = {}
    for axis, rep in reports.items():
        curves = synthetic.fig1_curves(rep)
        mags = rep.axes["magnitude"]
        for j, m in enumerate(mags):
            lo = min(curves["OLS"][1][j], curves["causal"][1][j])
            hi = max(curves["OLS"][1][j], curves["causal"][1][j])
            for lam in rep.axes["lambda"]:
                v = curves[f"DIRM lambda={lam:g}"][1][j]
                gap = max(lo - v, v - hi, 0.0)
                if gap > worst.get(axis, (0.0,))[0]:
                    worst[axis] = (gap, lam, m, v, lo, hi)
        if axis in worst and worst[axis][0] > tol:
            gap, lam, m, v, lo, hi = worst[axis]
            problems.append(f"{axis} shift: DIRM(lambda={lam:g}) MSE {v:.3f} outside [{lo:.3f}, {hi:.3f}] "
                            f"at magnitude {m:g} by {gap:.3f}")
    path_text = ", ".join(f"{lam:g}:{c:.3f}" for lam, c, _ in path)
    record(3, not problems, f"c1 path {{{path_text}}}; pooled OLS c1 {ols:.3f}; "
                            + ("; ".join(problems) if problems else "envelope holds within 0.05"))


# -- 4: stability under mean shifts ------------------------------------------------------

def test_criterion_4_stability():
    parts, ok = [], True
    for target in synthetic.STABILITY_TARGETS:
        rep = synthetic.run_stability(target, 5.0, seeds=SEEDS)
        erm = synthetic.stability_increase(rep, "ERM")
        dirm = synthetic.stability_increase(rep, "DIRM")
        this = dirm <= synthetic.STABILITY_RATIO * erm
        ok &= this
        parts.append(f"{target}: DIRM +{dirm:.4f} vs ERM +{erm:.4f} ({'ok' if this else 'too large'})")
    record(4, ok, "; ".join(parts) + f"; bound {synthetic.STABILITY_RATIO} x ERM")


# -- 5: affine worst case ------------------------------------------------------------------

def test_criterion_5_theorem1_identity():
    t0 = time.perf_counter()
    rep = theorem1.run_theorem1_check((2, 3, 4), (0.0, 0.5, 1.0, 5.0), trials=1000, seed=0)
    seconds = time.perf_counter() - t0
    e1, e2 = max(rep.values("rel_err_oracle")), max(rep.values("rel_err_identity"))
    ok = theorem1.all_ok(rep) and e1 < 1e-10 and e2 < 1e-10 and seconds < 1.0
    record(5, ok, f"{len(rep.rows)} checks, max rel err vs oracle {e1:.1e}, identity {e2:.1e} (< 1e-10); "
                  f"runtime {seconds:.2f}s < 1s")


# -- 6: moment invariance ---------------------------------------------------------------------

def test_criterion_6_moment_invariance():
    n = 10**6
    spec = intro_example_spec(True)
    envs = [sample(spec, NO_INTERVENTION, n, 61, "sigma2=1"),
            sample(spec, variance_intervention(["E_X1", "E_X2"], 2.0), n, 62, "sigma2=2")]

    def stats(model):
        terms = [moment_residual_samples(model, e) for e in envs]
        means = [t.mean(axis=0) for t in terms]
        ses = [t.std(axis=0) / np.sqrt(t.shape[0]) for t in terms]
        pooled = np.sqrt(ses[0] ** 2 + ses[1] ** 2)
        return means, ses, np.abs(means[0] - means[1]) / pooled

    causal = linear_model([0.0, 1.0], head_bias=False)
    means, ses, z_causal = stats(causal)
    z_value = [np.abs(m - [4.0, -3.0]) / s for m, s in zip(means, ses)]
    ols = linear_model(np.linalg.lstsq(envs[0].x, envs[0].y, rcond=None)[0], head_bias=False)
    _, _, z_ols = stats(ols)
    ok = np.all(z_causal < 3) and all(np.all(z < 3) for z in z_value) and np.max(z_ols) > 10
    record(6, ok, f"causal head: cross-env diff {np.round(z_causal, 2).tolist()} SE (< 3), "
                  f"vs (4, -3) {[np.round(z, 2).tolist() for z in z_value]} SE (< 3); "
                  f"env-1 OLS head: cross-env diff {np.max(z_ols):.1f} SE (> 10)")


# -- 7: gradient exactness ----------------------------------------------------------------------

def test_criterion_7_gradient_battery():
    t0 = time.perf_counter()
    rows = fd_battery(cases=100)
    seconds = time.perf_counter() - t0
    beta = max(r[4] for r in rows)
    phi = max(r[5] for r in rows)
    archs = {(r[0], r[1]) for r in rows}
    ok = beta < 1e-4 and phi < 1e-4 and seconds < 30 and len(archs) == (MAX_HIDDEN + 1) * len(LINKS)
    record(7, ok, f"{len(rows)} cases over {len(archs)} architecture/link pairs: max rel err beta {beta:.1e}, "
                  f"phi-penalty {phi:.1e} (< 1e-4); runtime {seconds:.1f}s < 30s")


# -- 8: reductions ---------------------------------------------------------------------------------

def test_criterion_8_reductions():
    mismatches = []
    for n_hidden in range(MAX_HIDDEN + 1):
        model, envs = random_case(n_hidden, "identity", seed=80 + n_hidden, n=40)
        cfg = TrainConfig(epochs=20, batch_size=16, seed=8)
        ref, ref_trace = train(model, envs, ObjectiveSpec("ERM"), cfg)
        for kind in ("DIRM", "IRM", "REx"):
            out, trace = train(model, envs, ObjectiveSpec(kind, lambda_final=0.0), cfg)
            if not (np.array_equal(out.to_vector(), ref.to_vector())
                    and np.array_equal(np.array(trace.losses), np.array(ref_trace.losses))):
                mismatches.append(f"{kind}/hidden={n_hidden}")
    grid_gap = 0.0
    for seed in range(20):
        model, envs = random_case(0, "identity", seed=seed)
        zero = linear_model(np.zeros(model.width), 0.0)
        for form in ("sqnorm", "norm", "vector"):
            a, b = dirm_penalty_grid(zero, envs, form), dirm_penalty(zero, envs, form)
            grid_gap = max(grid_gap, abs(a - b) / max(abs(b), 1e-300))
    ok = not mismatches and grid_gap < 1e-12
    record(8, ok, f"lambda=0 trajectories identical to ERM for DIRM/IRM/REx x 0-2 hidden layers "
                  f"({'all bit-equal' if not mismatches else 'mismatch: ' + ', '.join(mismatches)}); "
                  f"grid vs point at beta=0 rel gap {grid_gap:.1e}")


# -- 9: penalty approximation agreement -----------------------------------------------------------

def test_criterion_9_penalty_modes():
    rep = features.run_penalty_modes(seeds=SEEDS)
    point = rep.median("val_accuracy", mode="point")
    grid = rep.median("val_accuracy", mode="scaled_grid")
    ok = abs(point - grid) <= 1.5
    record(9, ok, f"median validation accuracy point {point:.2f}% vs scaled_grid {grid:.2f}% "
                  f"(|diff| {abs(point - grid):.2f} <= 1.5)")


# -- 10: feature-selection reproducibility ----------------------------------------------------------

def test_criterion_10_feature_selection():
    rep = features.run_feature_stability(n_studies=20, pairs=100, top_k=10, seeds=(0,))
    erm = features.intersection_count(rep, "ERM")
    dirm = features.intersection_count(rep, "DIRM")
    runs = features.n_runs(rep)
    counts = features.selection_counts(rep, "DIRM")
    planted = {f: counts[f] / runs for f in rep.provenance["stable_features"]}
    ok = dirm >= erm and all(v >= 0.8 for v in planted.values())
    record(10, ok, f"{runs} study pairs: features in >=80% of runs DIRM {dirm} vs ERM {erm}; "
                   f"planted-feature DIRM selection rates {[round(v, 2) for v in planted.values()]} (>= 0.8)")
