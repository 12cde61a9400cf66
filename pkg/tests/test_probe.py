import math

import numpy as np
import pytest

from conftest import random_linear
from malt.data import Dataset
from malt.errors import ConfigError
from malt.linalg import SeededRng
from malt.models import LinearModel, MlpModel, SmoothLeakyActivation, TwoLayerNet, forward
from malt.probe import (
    DirectionSpec,
    TheoryConfig,
    ZeroGradientError,
    gradient_difference_bound,
    gradient_norm_bound,
    linearity_stats,
    linearity_trace,
    theory_suite,
    theory_trial,
    trend_config,
    write_trace_csv,
)

# independent high-precision evaluations of the two closed-form bounds at
# d=256, p=64, m=512, R=4, beta=0.1 (L=0.45), delta=0.05
DIFF_BOUND_REF = 8.10556516837755360999599673409
NORM_BOUND_REF = 0.0885238782574913135920766062904

WIDE = (-100.0, 100.0)


def test_direction_spec_validation():
    with pytest.raises(ConfigError):
        DirectionSpec(epsilon=0.0)
    with pytest.raises(ConfigError):
        DirectionSpec(steps=0)
    with pytest.raises(ConfigError):
        DirectionSpec(kind="orthogonal")
    assert DirectionSpec().steps == 100


@pytest.mark.parametrize("kind", ["random_sign", "gradient"])
def test_linear_model_nullity(kind):
    rng = np.random.default_rng(0)
    for seed in range(10):
        m = random_linear(rng, 4, 6)
        x0 = rng.uniform(0, 1, 6)
        tr = linearity_trace(m, x0, DirectionSpec(kind, epsilon=float(rng.uniform(0.01, 0.5)), steps=30, seed=seed))
        assert np.max(tr.alpha) <= 1e-12 and np.max(tr.alpha_part) <= 1e-12
        assert np.max(np.abs(tr.logits_actual - tr.logits_linear)) <= 1e-12
        assert tr.alpha.shape == (30,) and tr.alpha_part.shape == (29,)


def test_linear_logits_are_affine_in_step():
    m = MlpModel.init([5, 16, 3], SeededRng(1), SmoothLeakyActivation(0.1))
    tr = linearity_trace(m, np.full(5, 0.5), DirectionSpec("random_sign", 0.2, steps=40, seed=2))
    assert np.max(np.abs(np.diff(tr.logits_linear, n=2, axis=0))) <= 1e-12


def test_two_layer_alpha_matches_closed_form():
    beta = 0.1
    W = np.array([[1.0, -0.5], [0.3, 2.0]])
    u = np.array([1.0, -1.0]) / math.sqrt(2)
    net = TwoLayerNet(W, u, SmoothLeakyActivation(beta))
    x0 = np.array([0.2, -0.4])

    def dsig(z):
        return ((1 + beta) + (1 - beta) * z / math.sqrt(z * z + 1)) / 2

    for kind in ("random_sign", "gradient"):
        tr = linearity_trace(net, x0, DirectionSpec(kind, epsilon=0.7, steps=25, box=WIDE, seed=3))
        v = tr.direction
        g0 = sum(u[i] * W[i] * dsig(W[i] @ x0) for i in range(2))
        diff = sum(u[i] * W[i] * (dsig(W[i] @ x0) - dsig(W[i] @ (x0 + v))) for i in range(2))
        assert tr.alpha[-1] == pytest.approx(np.linalg.norm(diff) / np.linalg.norm(g0), rel=1e-12)


def test_gradient_direction_normalization():
    net = TwoLayerNet.init(4, 8, SeededRng(4))
    x0 = np.zeros(4)
    tr = linearity_trace(net, x0, DirectionSpec("gradient", 0.05, box=WIDE))
    assert np.max(np.abs(tr.direction)) == pytest.approx(0.05, rel=1e-14)
    tr2 = linearity_trace(net, x0, DirectionSpec("gradient", 0.05, box=WIDE, norm="l2"))
    assert np.linalg.norm(tr2.direction) == pytest.approx(0.05, rel=1e-14)


def test_direction_truncated_to_box():
    m = LinearModel(np.eye(3), np.zeros(3))
    x0 = np.array([0.99, 0.5, 0.01])
    tr = linearity_trace(m, x0, DirectionSpec("random_sign", 0.1, steps=5, seed=1))
    assert np.all(x0 + tr.direction <= 1.0) and np.all(x0 + tr.direction >= 0.0)


def test_taylor_remainder_is_quadratic():
    net = MlpModel.init([6, 24, 24, 4], SeededRng(5), SmoothLeakyActivation(0.1))
    x0 = SeededRng(6).generator.uniform(0, 1, 6)
    tr = linearity_trace(net, x0, DirectionSpec("random_sign", 0.02, steps=100, box=WIDE, seed=7))
    i = np.arange(1, 21)
    err = np.max(np.abs(tr.logits_actual[:20] - tr.logits_linear[:20]), axis=1)
    norms = i / 100 * np.linalg.norm(tr.direction)
    slope = np.polyfit(np.log(norms), np.log(err), 1)[0]
    assert 1.8 <= slope <= 2.2


def test_zero_gradient_is_an_error():
    m = LinearModel(np.zeros((2, 3)), np.array([1.0, 0.0]))
    with pytest.raises(ZeroGradientError):
        linearity_trace(m, np.zeros(3), DirectionSpec())


def test_stats_on_single_example_equal_trace():
    net = MlpModel.init([5, 16, 3], SeededRng(8), SmoothLeakyActivation(0.1))
    x0 = np.full(5, 0.3)
    spec = DirectionSpec("gradient", 0.1, steps=20)
    stats = linearity_stats(net, Dataset(x0[None], np.array([0]), 3), spec)
    tr = linearity_trace(net, x0, spec)
    assert np.array_equal(stats.alpha_mean, tr.alpha)
    assert np.array_equal(stats.alpha_part_mean, tr.alpha_part)
    assert np.all(stats.alpha_std == 0) and np.all(stats.alpha_part_std == 0)


def test_stats_on_linear_model_are_zero_and_skip_counted():
    rng = np.random.default_rng(9)
    m = random_linear(rng, 3, 4)
    X = rng.uniform(0, 1, (15, 4))
    stats = linearity_stats(m, Dataset(X, np.zeros(15, dtype=int), 3), DirectionSpec(steps=10))
    assert np.max(stats.alpha_mean) <= 1e-12 and np.max(stats.alpha_std) <= 1e-12
    assert (stats.used, stats.skipped) == (15, 0)
    flat = LinearModel(np.zeros((2, 4)), np.array([1.0, 0.0]))
    with pytest.raises(ZeroGradientError):
        linearity_stats(flat, Dataset(X, np.zeros(15, dtype=int), 2), DirectionSpec(steps=10))


def test_cumulative_alpha_dominates_consecutive(desk):
    model, data = desk
    sub = Dataset(data.inputs[:100], data.labels[:100], data.num_classes)
    stats = linearity_stats(model, sub, DirectionSpec("gradient", 0.06, steps=100))
    assert stats.alpha_part_mean[-1] < stats.alpha_mean[-1]


def test_trace_csv_layout(tmp_path):
    m = LinearModel(np.eye(2), np.zeros(2))
    tr = linearity_trace(m, np.array([0.7, 0.2]), DirectionSpec(steps=3))
    write_trace_csv(tr, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "step_i,alpha,alpha_part,logit_0,logit_1,lin_logit_0,lin_logit_1"
    assert len(lines) == 4 and lines[-1].split(",")[2] == ""


def test_bounds_match_reference_values():
    assert gradient_difference_bound(0.45, 4.0, 512, 192, 0.05) == pytest.approx(DIFF_BOUND_REF, rel=1e-14)
    assert gradient_norm_bound(0.1, 256, 0.05) == pytest.approx(NORM_BOUND_REF, rel=1e-14)
    rep = theory_trial(TheoryConfig(n_direction_samples=8, train_steps=5), seed=0)
    assert rep.L == pytest.approx(0.45, rel=1e-15)
    assert rep.thm41_bound == pytest.approx(DIFF_BOUND_REF, rel=1e-14)
    assert rep.thm42_bound == pytest.approx(NORM_BOUND_REF, rel=1e-14)


def test_small_trial_properties():
    cfg = TheoryConfig(d=32, p=8, m=48, num_points=16, train_steps=50, n_direction_samples=16)
    for seed in range(5):
        rep = theory_trial(cfg, seed)
        assert rep.q == 24
        assert rep.lemmaA2_drift <= 1e-9
        assert rep.measured_sup_grad_diff > 0 and rep.measured_grad_norm > 0
        assert rep.violates_thm41 == (rep.measured_sup_grad_diff > rep.thm41_bound)
    again = theory_trial(cfg, 4)
    assert again == rep


def test_theory_config_errors():
    with pytest.raises(ConfigError):
        TheoryConfig(delta=1.0).validate()
    with pytest.raises(ConfigError):
        TheoryConfig(d=4, p=1, delta=0.05).validate()  # 4 < 2 log 20
    with pytest.raises(ConfigError, match="data_dim"):
        TheoryConfig(d=8, p=8).validate()
    with pytest.raises(ConfigError):
        gradient_norm_bound(0.1, 8, 0.05)


def test_suite_shapes_and_job_independence():
    small = dict(num_points=8, train_steps=10, n_direction_samples=4)
    cfgs = [TheoryConfig(d=16, p=4, m=16, **small)]
    trend = [trend_config(16, **small), trend_config(32, **small)]
    a = theory_suite(cfgs, 20, trend, 3, seed=1, jobs=1)
    b = theory_suite(cfgs, 20, trend, 3, seed=1, jobs=3)
    assert a.trials == b.trials and a.trend == b.trend and a.violations == b.violations
    assert len(a.trials) == 20 and len(a.trend) == 2
    assert a.trend[1]["m"] == 2 * (32 - 8)
    with pytest.raises(ConfigError):
        theory_suite(cfgs, 19)
