import numpy as np
import pytest

from conftest import make_dataset
from quantrules.adaptation import (AdaptationConfig, adapt, forward_batch,
                                   grad_check, hinge, iterations_for_epochs,
                                   rule_loss, total_loss, write_trace)
from quantrules.dataset import BOOLEAN, NUMERIC, Minibatch
from quantrules.errors import DivergenceError
from quantrules.model import SoftmaxModel
from quantrules.schema import AbstractRule, ConcreteRule, Literal
from quantrules.violations import check_rule

INF = float("inf")


def tiny_setup(n=16, seed=0, spread=1.0):
    """A 2-feature 2-class model over a small dataset with a boolean column."""
    rng = np.random.default_rng(seed)
    X = rng.normal(0, spread, (n, 2))
    ds = make_dataset({
        "x0": (NUMERIC, X[:, 0]),
        "x1": (NUMERIC, X[:, 1]),
        "flag": (BOOLEAN, (rng.random(n) < 0.5).astype(float)),
        "v": (NUMERIC, rng.uniform(0, 1, n)),
    })
    model = SoftmaxModel(["x0", "x1"], ["a", "b"],
                         scale=np.ones(2), shift=np.zeros(2),
                         weights=np.array([[0.8, -0.8], [-0.5, 0.5]]),
                         bias=np.array([0.1, -0.1]))
    return ds, model


def data_rule(lo, hi, sided="two", column="v"):
    return ConcreteRule(rule=AbstractRule(kind="conditional", sided=sided,
                                          statistic=column),
                        lo=lo, hi=hi, delta=0.02)


def const_output(value):
    """Batch output whose data column v is a single constant value."""
    ds = make_dataset({"x0": (NUMERIC, [0.0]), "x1": (NUMERIC, [0.0]),
                       "v": (NUMERIC, [value])})
    model = SoftmaxModel(["x0", "x1"], ["a", "b"], np.ones(2), np.zeros(2),
                         np.zeros((2, 2)), np.zeros(2))
    return forward_batch(model, ds, [0])


# -- loss arithmetic -------------------------------------------------------------

def test_loss_zero_when_satisfied():
    out = const_output(0.5)
    assert rule_loss(data_rule(0.0, 1.0), out) == 0.0


def test_one_sided_linear_loss():
    # lower bound 2, value 1.5 -> min{2 - 1.5, 1} = 0.5
    out = const_output(1.5)
    assert rule_loss(data_rule(2.0, INF, sided="lower"), out) == 0.5


def test_two_sided_quadratic_loss():
    # bounds [0, 1], value 1.5 -> min{(0 - 1.5)(1 - 1.5), 1} = 0.75
    out = const_output(1.5)
    assert rule_loss(data_rule(0.0, 1.0), out) == 0.75


def test_loss_clips_at_one():
    out = const_output(100.0)
    assert rule_loss(data_rule(0.0, 1.0), out) == 1.0
    assert rule_loss(data_rule(200.0, INF, sided="lower"), out) == 1.0


def test_total_loss_is_mean():
    out = const_output(1.5)
    half = data_rule(2.0, INF, sided="lower")   # loss 0.5
    ok = data_rule(0.0, 2.0)                    # loss 0
    assert total_loss([half, ok], out) == 0.25
    assert total_loss([half] * 7, out) == pytest.approx(0.5)


def test_total_loss_rejects_empty_rule_list():
    with pytest.raises(ValueError):
        total_loss([], const_output(0.5))


def test_hinge_slope_signs():
    loss, slope = hinge(1.5, 2.0, INF)
    assert (loss, slope) == (0.5, -1.0)
    loss, slope = hinge(3.0, -INF, 2.5)
    assert (loss, slope) == (0.5, 1.0)
    loss, slope = hinge(1.5, 0.0, 1.0)
    assert loss == 0.75 and slope == pytest.approx(2 * 1.5 - 0.0 - 1.0)
    assert hinge(0.5, 0.0, 1.0) == (0.0, 0.0)


def test_loss_zero_iff_check_satisfied_randomized():
    rng = np.random.default_rng(7)
    ds, model = tiny_setup(n=32, seed=1)
    out = forward_batch(model, ds, np.arange(32))
    batch = Minibatch(out.dataset, np.arange(32))
    for _ in range(200):
        lo = rng.uniform(-0.5, 1.0)
        hi = lo + rng.uniform(0.05, 1.0)
        rule = data_rule(lo, hi)
        loss = rule_loss(rule, out)
        result = check_rule(rule, batch, label_column="pred")
        assert (loss == 0.0) == (result.evaluated and not result.violated)


# -- gradient checks ------------------------------------------------------------------

def batch_of(ds, n):
    return Minibatch(ds, np.arange(n))


def mean_score_rule(lo, hi, sided="two", cls="b"):
    return ConcreteRule(rule=AbstractRule(kind="conditional", sided=sided,
                                          statistic=f"mean(score_{cls})"),
                        lo=lo, hi=hi, delta=0.02)


def test_grad_check_quadratic_region():
    ds, model = tiny_setup(n=24, seed=2)
    out = forward_batch(model, ds, np.arange(24))
    phi = float(out.probs[:, 1].mean())
    rule = mean_score_rule(phi + 0.05, phi + 0.3)  # violated below lower bound
    err = grad_check(model, [rule], batch_of(ds, 24), step=1e-5)
    assert err <= 1e-4


def test_grad_check_linear_one_sided_region():
    ds, model = tiny_setup(n=24, seed=3)
    out = forward_batch(model, ds, np.arange(24))
    phi = float(out.probs[:, 1].mean())
    rule = mean_score_rule(phi + 0.2, INF, sided="lower")
    err = grad_check(model, [rule], batch_of(ds, 24), step=1e-5)
    assert err <= 1e-5


def test_grad_check_surrogate_f1_rule():
    ds, model = tiny_setup(n=40, seed=4)
    out = forward_batch(model, ds, np.arange(40))
    from quantrules.statistics import surrogate_f1, antecedent_values
    ante, _ = antecedent_values(
        AbstractRule(kind="logic", statistic="f1", consequent="b",
                     literals=(Literal("flag"),)), out.dataset, np.arange(40))
    phi = surrogate_f1(ante, out.probs[:, 1], 1.0)
    rule = ConcreteRule(
        rule=AbstractRule(kind="logic", statistic="f1", consequent="b",
                          literals=(Literal("flag"),)),
        lo=phi + 0.1, hi=phi + 0.4, delta=0.02)
    err = grad_check(model, [rule], batch_of(ds, 40), step=1e-5)
    assert err <= 1e-4


def test_grad_check_flat_at_clip_plateau():
    ds, model = tiny_setup(n=24, seed=5)
    out = forward_batch(model, ds, np.arange(24))
    phi = float(out.probs[:, 1].mean())
    rule = mean_score_rule(phi + 2.0, phi + 3.0)  # loss pinned at the clip
    assert total_loss([rule], out) == 1.0
    err = grad_check(model, [rule], batch_of(ds, 24), step=1e-5)
    assert err == 0.0


def test_grad_check_per_sample_score_rule():
    ds, model = tiny_setup(n=24, seed=6)
    out = forward_batch(model, ds, np.arange(24))
    top = float(out.probs[:, 1].max())
    rule = ConcreteRule(rule=AbstractRule(kind="conditional", statistic="score_b"),
                        lo=top + 0.05, hi=top + 0.35, delta=0.02)
    err = grad_check(model, [rule], batch_of(ds, 24), step=1e-5)
    assert err <= 1e-4


def test_grad_check_requires_positive_loss():
    ds, model = tiny_setup()
    with pytest.raises(ValueError, match="positive"):
        grad_check(model, [data_rule(-10.0, 10.0)], batch_of(ds, 16))
    with pytest.raises(ValueError, match="step"):
        grad_check(model, [data_rule(-10.0, 10.0)], batch_of(ds, 16), step=0.5)


# -- adapt loop ---------------------------------------------------------------------

def test_adapt_zero_loss_leaves_parameters_unchanged():
    ds, model = tiny_setup()
    rules = [data_rule(-100.0, 100.0)]
    adapted, trace = adapt(model, rules, ds,
                           AdaptationConfig(iterations=5, batch_size=8, seed=0))
    assert np.array_equal(adapted.scale, model.scale)
    assert np.array_equal(adapted.shift, model.shift)
    assert all(row.loss == 0.0 and row.update_norm == 0.0 for row in trace)


def test_adapt_zero_learning_rate_records_losses():
    ds, model = tiny_setup()
    out = forward_batch(model, ds, np.arange(16))
    phi = float(out.probs[:, 1].mean())
    rules = [mean_score_rule(phi + 0.1, phi + 0.4)]
    adapted, trace = adapt(model, rules, ds,
                           AdaptationConfig(iterations=5, batch_size=16,
                                            learning_rate=0.0, seed=0))
    assert np.array_equal(adapted.scale, model.scale)
    assert any(row.loss > 0.0 for row in trace)
    assert all(row.update_norm == 0.0 for row in trace)


def test_adapt_preserves_frozen_parameters_and_reduces_loss():
    ds, model = tiny_setup(n=64, seed=9, spread=3.0)
    out = forward_batch(model, ds, np.arange(64))
    phi = float(out.probs[:, 1].mean())
    rules = [mean_score_rule(phi + 0.05, phi + 0.15)]
    adapted, trace = adapt(model, rules, ds,
                           AdaptationConfig(iterations=300, batch_size=64,
                                            learning_rate=0.05, seed=1))
    assert adapted.frozen_checksum() == model.frozen_checksum()
    assert not np.array_equal(adapted.scale, model.scale)
    assert trace[-1].loss < trace[0].loss


def test_adapt_is_deterministic():
    ds, model = tiny_setup(n=32, seed=10)
    out = forward_batch(model, ds, np.arange(32))
    phi = float(out.probs[:, 1].mean())
    rules = [mean_score_rule(phi + 0.05, phi + 0.3)]
    cfg = AdaptationConfig(iterations=50, batch_size=16, learning_rate=0.02, seed=3)
    a1, t1 = adapt(model, rules, ds, cfg)
    a2, t2 = adapt(model, rules, ds, cfg)
    assert t1 == t2
    assert np.array_equal(a1.scale, a2.scale)
    assert np.array_equal(a1.shift, a2.shift)


def test_adapt_rejects_precomputed_model_columns():
    ds, model = tiny_setup()
    ds = ds.with_columns([("score_a", "numeric", np.zeros(16))])
    with pytest.raises(ValueError, match="score_a"):
        adapt(model, [data_rule(0, 1)], ds, AdaptationConfig(iterations=1, batch_size=4))


def test_adapt_divergence_keeps_partial_trace():
    rng = np.random.default_rng(11)
    ds = make_dataset({
        "x0": (NUMERIC, rng.uniform(1e120, 2e120, 8)),
        "x1": (NUMERIC, rng.uniform(-2e120, -1e120, 8)),
    })
    model = SoftmaxModel(["x0", "x1"], ["a", "b"], np.ones(2) * 1e-120, np.zeros(2),
                         np.array([[0.8, -0.8], [-0.5, 0.5]]), np.zeros(2))
    out = forward_batch(model, ds, np.arange(8))
    phi = float(out.probs[:, 1].mean())
    rules = [mean_score_rule(phi + 0.1, phi + 0.3)]
    with pytest.raises(DivergenceError) as excinfo:
        adapt(model, rules, ds,
              AdaptationConfig(iterations=10, batch_size=8, learning_rate=1e300, seed=0))
    assert len(excinfo.value.trace) >= 1


def test_trace_csv_round_trip(tmp_path):
    ds, model = tiny_setup()
    adapted, trace = adapt(model, [data_rule(-10, 10)], ds,
                           AdaptationConfig(iterations=3, batch_size=4, seed=0))
    path = tmp_path / "trace.csv"
    write_trace(trace, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "iteration,loss,batch_violations,update_norm"
    assert len(lines) == 4


def test_iterations_for_epochs():
    assert iterations_for_epochs(60, 1000, 128) == 60 * 8
    assert iterations_for_epochs(1, 128, 128) == 1
