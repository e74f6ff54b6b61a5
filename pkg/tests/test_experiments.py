import math

import numpy as np
import pytest

from dirm_lab.errors import ValidationError
from dirm_lab.experiments import features, synthetic, theorem1
from dirm_lab.experiments.common import env_seed, run_cells
from dirm_lab.experiments.report import ExperimentReport, PlotSpec


# -- report plumbing ------------------------------------------------------------

def toy_report():
    rep = ExperimentReport("toy", {"x": (0.0, 1.0)}, ("objective", "seed", "x", "y"), seeds=(0, 1),
                           provenance={"note": "toy", "nan": math.nan},
                           plots=(PlotSpec("y_vs_x", "x", "y"),))
    for seed in (0, 1):
        for x in (0.0, 1.0):
            rep.add(objective="A", seed=seed, x=x, y=x + 0.1 * seed)
            rep.add(objective="B", seed=seed, x=x, y=2 * x)
    return rep


def test_report_requires_tag_columns():
    with pytest.raises(ValidationError):
        ExperimentReport("bad", {"x": (0,)}, ("seed", "x"))


def test_report_queries():
    rep = toy_report()
    assert rep.median("y", objective="A", x=1.0) == pytest.approx(1.05)
    assert rep.distinct("objective") == ["A", "B"]
    with pytest.raises(ValidationError):
        rep.median("y", objective="C")


def test_report_write_and_read(tmp_path):
    rep = toy_report()
    target = rep.write(tmp_path, svg=True)
    assert (target / "report.csv").exists() and (target / "manifest.toml").exists()
    svg = (target / "y_vs_x.svg").read_text()
    assert svg.startswith("<svg") and svg.count("<polyline") == 2
    back = ExperimentReport.read(target)
    assert back.rows == rep.rows and back.seeds == rep.seeds
    assert back.provenance["nan"] == "nan"


def test_run_cells_keeps_order():
    assert run_cells(lambda c: c * c, range(20), threads=4) == [c * c for c in range(20)]


def test_env_seed_streams_are_distinct():
    seeds = {env_seed(0, k) for k in range(100)} | {env_seed(1, k) for k in range(100)}
    assert len(seeds) == 200


# -- fig1 ------------------------------------------------------------------------

def test_fig1_orderings_at_large_shift():
    kw = dict(lambdas=(0.0,), seeds=(0, 1, 2), epochs=1, magnitudes=(0.0, 5.0))
    hidden = synthetic.run_fig1("confounded", "hidden", **kw)
    assert hidden.median("test_mse", objective="OLS", magnitude=5.0) < hidden.median(
        "test_mse", objective="causal", magnitude=5.0)
    observed = synthetic.run_fig1("confounded", "observed", **kw)
    assert observed.median("test_mse", objective="causal", magnitude=5.0) < observed.median(
        "test_mse", objective="OLS", magnitude=5.0)


def test_fig1_zero_lambda_reduces_to_ols():
    rep = synthetic.run_fig1("confounded", "observed", magnitudes=(0.0,), lambdas=(0.0,), seeds=(0,),
                             n=2000, epochs=3000)
    erm = rep.values("test_mse", objective="DIRM")[0]
    ols = rep.values("test_mse", objective="OLS")[0]
    assert erm == pytest.approx(ols, rel=0.01)


def test_fig1_grid_shape_and_reproducibility():
    kw = dict(magnitudes=(1.0, 2.0), lambdas=(0.0, 10.0), seeds=(0, 1), n=300, epochs=50)
    a = synthetic.run_fig1("no_confounding", "observed_variance", **kw)
    b = synthetic.run_fig1("no_confounding", "observed_variance", **kw, threads=2)
    assert a.rows == b.rows
    # 2 seeds x 2 magnitudes x (OLS, causal, 2 lambdas)
    assert len(a.rows) == 2 * 2 * 4
    path = synthetic.fig1_coefficient_path(a)
    assert [p[0] for p in path] == [0.0, 10.0]
    with pytest.raises(ValidationError):
        synthetic.run_fig1("confounded", "sideways", **kw)


# -- stability ----------------------------------------------------------------------

def test_stability_targets_share_grid_shape():
    shapes = set()
    for target in synthetic.STABILITY_TARGETS:
        rep = synthetic.run_stability(target, 5.0, seeds=(0,), n=400, epochs=20)
        shapes.add((len(rep.rows), tuple(rep.axes["magnitude"])))
        assert rep.distinct("objective") == ["ERM", "DIRM"]
    assert len(shapes) == 1


def test_stability_erm_is_best_in_distribution():
    rep = synthetic.run_stability("E_Y", 5.0, seeds=(0, 1, 2), n=2000, epochs=2000)
    erm = rep.median("test_mse", objective="ERM", magnitude=0.0)
    dirm = rep.median("test_mse", objective="DIRM", magnitude=0.0)
    assert erm <= dirm * 1.02


def test_stability_rejects_unknown_target():
    with pytest.raises(ValidationError):
        synthetic.run_stability("E_Z", seeds=(0,))


# -- coefficient tables ------------------------------------------------------------------

def test_coeff_table_layout():
    rep = synthetic.run_coeff_tables(True, seeds=(0,), n=300, epochs=30)
    cols, rows = rep.tables["table"]
    assert cols == ("parameter", "truth", "ERM", "IRM", "DIRM", "DIRM-sqnorm")
    assert [r[0] for r in rows] == ["X1", "X2"]
    assert [r[1] for r in rows] == [0.0, 1.0]


# -- assumption-2 tagging ------------------------------------------------------------------

def test_assumption_tag_never_applies_to_hidden_shifts():
    assert synthetic.assumption_tag(["E_X1", "E_X2"]) == synthetic.ASSUMPTION_TAG
    assert synthetic.assumption_tag(["E_H"]) == ""
    for _, names in synthetic.FIG1_AXES.values():
        if "E_H" in names:
            assert synthetic.assumption_tag(names) == ""
    kw = dict(magnitudes=(1.0,), lambdas=(0.0,), seeds=(0,), n=100, epochs=1)
    for axis in synthetic.FIG1_AXES:
        prov = synthetic.run_fig1("confounded", axis, **kw).provenance
        assert (prov["tag"] == synthetic.ASSUMPTION_TAG) == ("E_H" not in prov["intervened"])


# -- theorem1 ------------------------------------------------------------------------------

def test_theorem1_small_run():
    rep = theorem1.run_theorem1_check(trials=50, seed=3)
    assert theorem1.all_ok(rep)
    for t in range(50):
        sups = rep.values("affine_sup", trial=t)
        assert all(b >= a - 1e-12 for a, b in zip(sups, sups[1:]))
        assert rep.values("affine_sup", trial=t, eta=0.0) == rep.values("max_loss", trial=t, eta=0.0)


def test_theorem1_preconditions():
    with pytest.raises(ValidationError):
        theorem1.run_theorem1_check(trials=0)


def test_vertex_oracle_hand_case():
    assert theorem1.vertex_oracle([1.0, 3.0], 0.5) == pytest.approx(4.0)
    assert theorem1.vertex_oracle([1.0, 3.0, 2.0], 0.0) == pytest.approx(3.0)


# -- feature stability -----------------------------------------------------------------------

def test_study_generator():
    gen = features.StudyGenerator(n_per_study=300)
    a = gen.study(0, 1)
    assert a.x.shape == (300, 20) and set(np.unique(a.y)) <= {0.0, 1.0}
    assert np.allclose(a.x.mean(axis=0), 0.0, atol=1e-12) and np.allclose(a.x.std(axis=0), 1.0)
    assert np.array_equal(a.x, gen.study(0, 1).x)
    assert not np.array_equal(a.x, gen.study(0, 2).x)
    assert gen.stable == ("f00", "f01", "f02", "f03", "f04")


def test_select_top():
    scores = np.array([0.5, 0.05, 0.9, 0.5, 0.2])
    assert features.select_top(scores, 2).tolist() == [True, False, True, False, False]
    assert features.select_top(scores, 10).tolist() == [True, False, True, True, True]


def test_zero_lambda_grid_reduces_to_erm():
    rep = features.run_feature_stability(n_studies=4, pairs=3, lambda_grid=(0.0,), epochs=30)
    erm = [(r["run"], r["feature"], r["in_top_k"]) for r in rep.records(objective="ERM")]
    dirm = [(r["run"], r["feature"], r["in_top_k"]) for r in rep.records(objective="DIRM")]
    assert erm == dirm


def test_feature_preconditions():
    with pytest.raises(ValidationError):
        features.run_feature_stability(n_studies=4, pairs=2, top_k=21)
    with pytest.raises(ValidationError):
        features.run_feature_stability(n_studies=4, pairs=7)


def test_intersection_table_is_non_increasing():
    rep = features.run_feature_stability(n_studies=5, pairs=4, lambda_grid=(0.0, 1.0), epochs=30)
    cols, rows = rep.tables["intersections"]
    assert cols == ("runs", "ERM", "DIRM") and len(rows) == 4
    for obj in (1, 2):
        counts = [r[obj] for r in rows]
        assert counts == sorted(counts, reverse=True)


def test_penalty_modes_small_run():
    rep = features.run_penalty_modes(seeds=(0,), epochs=20)
    assert sorted(rep.distinct("mode")) == ["point", "scaled_grid"]
    assert all(0 <= v <= 100 for v in rep.values("val_accuracy"))
