import numpy as np
import pytest

from dirm_lab.diffkernel import init_model, linear_model, random_case
from dirm_lab.errors import EmptySplit, NonFiniteLoss, Unsupported, ValidationError
from dirm_lab.experiments.common import intro_config, intro_envs, pooled_ols, zero_linear
from dirm_lab.objectives import ObjectiveSpec
from dirm_lab.scm import EnvironmentData, intro_example_spec, population_ols, variance_intervention, NO_INTERVENTION
from dirm_lab.trainer import (
    EarlyStop,
    TrainConfig,
    effective_coefficients,
    pooled_validation_split,
    train,
)


def small_case(seed=0, n=64):
    return random_case(1, "identity", seed, n=n)


def test_erm_matches_mixture_population_ols():
    envs = intro_envs(True, 10_000, seed=0)
    model, _ = train(zero_linear(2), envs, ObjectiveSpec("ERM"), intro_config(10_000, 0, epochs=3000))
    spec = intro_example_spec()
    oracle = population_ols(spec, [NO_INTERVENTION, variance_intervention(["E_X1", "E_X2"], 2.0)])
    assert np.allclose(effective_coefficients(model), oracle, atol=0.05)
    # and it has converged to the sample least-squares fit
    assert np.allclose(effective_coefficients(model), pooled_ols(envs), atol=1e-3)


@pytest.mark.parametrize("kind", ["DIRM", "IRM", "REx"])
@pytest.mark.parametrize("n_hidden", [0, 1])
def test_zero_lambda_reproduces_erm_bit_for_bit(kind, n_hidden):
    model, envs = random_case(n_hidden, "identity", seed=1, n=50)
    cfg = TrainConfig(epochs=15, batch_size=16, seed=3)
    erm, t_erm = train(model, envs, ObjectiveSpec("ERM"), cfg)
    other, t_other = train(model, envs, ObjectiveSpec(kind, lambda_final=0.0, warmup_epochs=2), cfg)
    assert np.array_equal(erm.to_vector(), other.to_vector())
    assert np.array_equal(np.array(t_erm.losses), np.array(t_other.losses))


def test_zero_learning_rate_leaves_parameters_unchanged():
    model, envs = small_case()
    for opt in ("adam", "sgd"):
        out, trace = train(model, envs, ObjectiveSpec("DIRM", lambda_final=1.0), TrainConfig(0.0, 5, 16, opt))
        assert np.array_equal(out.to_vector(), model.to_vector())
        assert len(trace) == 5


def test_training_is_deterministic():
    model, envs = small_case(2)
    cfg = TrainConfig(epochs=10, batch_size=8, seed=9)
    spec = ObjectiveSpec("DIRM", lambda_final=2.0, warmup_epochs=3)
    a, ta = train(model, envs, spec, cfg)
    b, tb = train(model, envs, spec, cfg)
    assert np.array_equal(a.to_vector(), b.to_vector()) and ta.same_run(tb)
    c, _ = train(model, envs, spec, TrainConfig(epochs=10, batch_size=8, seed=10))
    assert not np.array_equal(a.to_vector(), c.to_vector())


def test_sgd_matches_closed_form_quadratic():
    """Full-batch gradient descent on least squares follows theta <- (I - 2 lr X'X/n) theta + 2 lr X'y/n."""
    rng = np.random.default_rng(5)
    x = rng.normal(size=(30, 2))
    y = x @ [1.0, -0.5] + 0.1 * rng.normal(size=30)
    env = EnvironmentData(x, y, "e", ("a", "b"))
    lr, epochs = 0.05, 40
    model, _ = train(linear_model([0.0, 0.0], head_bias=False), [env], ObjectiveSpec("ERM"),
                     TrainConfig(lr, epochs, 30, "sgd"))
    theta = np.zeros(2)
    A, b = x.T @ x / 30, x.T @ y / 30
    for _ in range(epochs):
        theta = theta - lr * 2 * (A @ theta - b)
    assert np.allclose(model.head_w, theta, rtol=1e-12, atol=1e-14)


def test_l2_regularisation_shrinks_weights():
    model, envs = small_case(3)
    cfg = TrainConfig(epochs=40, batch_size=64, seed=0)
    plain, _ = train(model, envs, ObjectiveSpec("ERM"), cfg)
    reg, _ = train(model, envs, ObjectiveSpec("ERM"), TrainConfig(epochs=40, batch_size=64, seed=0, l2_reg=1.0))
    assert np.linalg.norm(reg.head_w) < np.linalg.norm(plain.head_w)


def test_groupdro_trains():
    model, envs = small_case(4)
    out, trace = train(model, envs, ObjectiveSpec("GroupDRO", dro_step=0.5), TrainConfig(epochs=20, batch_size=32))
    assert max(trace.losses[-1]) < max(trace.losses[0])


# -- validation split and early stopping -----------------------------------------------

def test_split_arithmetic():
    _, envs = random_case(0, "identity", seed=0, n=100)
    train_envs, val = pooled_validation_split(envs, 0.2, seed=1)
    assert val.n == 40 and [e.n for e in train_envs] == [80, 80]
    assert val.env_id == "validation"
    again = pooled_validation_split(envs, 0.2, seed=1)
    assert np.array_equal(again[1].x, val.x)
    # every held-out row comes from its environment and none is used for training
    for e, t in zip(envs, train_envs):
        rows = {tuple(r) for r in e.x}
        assert {tuple(r) for r in t.x} <= rows
    held = {tuple(r) for r in val.x}
    assert not held & {tuple(r) for t in train_envs for r in t.x}


def test_split_preconditions():
    _, envs = random_case(0, "identity", seed=0, n=4)
    with pytest.raises(ValidationError):
        pooled_validation_split(envs, 0.0, 0)
    with pytest.raises(EmptySplit):
        pooled_validation_split(envs, 0.9, 0)


def test_early_stop_trace_length_and_best_model():
    model, envs = random_case(1, "identity", seed=6, n=60)
    cfg = TrainConfig(learning_rate=0.2, epochs=300, batch_size=8, early_stop=EarlyStop(0.25, 3))
    out, trace = train(model, envs, ObjectiveSpec("ERM"), cfg)
    assert len(trace) == len(trace.val_loss) == len(trace.losses) <= 300
    assert trace.best_epoch == int(np.argmin(trace.val_loss))
    assert len(trace) < 300


def test_non_finite_loss_raises_with_partial_trace():
    model, envs = small_case(7)
    with pytest.raises(NonFiniteLoss) as info:
        train(model, envs, ObjectiveSpec("ERM"), TrainConfig(1e300, 5, 64, "sgd"))
    assert info.value.trace is not None


def test_config_validation():
    with pytest.raises(ValidationError, match="train.batch_size"):
        TrainConfig(batch_size=0)
    with pytest.raises(ValidationError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ValidationError):
        EarlyStop(fraction=1.0)


# -- trace and coefficients ----------------------------------------------------------------

def test_trace_csv(tmp_path):
    envs = intro_envs(True, 200, seed=0)
    _, trace = train(zero_linear(2), envs, ObjectiveSpec("DIRM", lambda_final=1.0, warmup_epochs=2),
                     TrainConfig(epochs=4, batch_size=50))
    lines = trace.to_csv(tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "epoch,env_id,loss,penalty,lambda,coef_X1,coef_X2"
    assert len(lines) == 1 + 4 * 2
    assert [float(line.split(",")[4]) for line in lines[1::2]] == [0.0, 0.0, 1.0, 1.0]


def test_effective_coefficients():
    assert effective_coefficients(linear_model([0.0, 1.0])).tolist() == [0.0, 1.0]
    with pytest.raises(Unsupported):
        effective_coefficients(init_model(2, (3,)))
