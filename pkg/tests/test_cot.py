import dataclasses
import math

import numpy as np
import pytest

from cotwave.cot import CotConfig, auto_sample_sizes, estimate_cot, estimate_cw_between_models, fit_conditional_model, pooled_w2sq
from cotwave.density import EstimatorConfig
from cotwave.errors import ArgumentError, ConfigurationError
from cotwave.simbench import builtin_scenario, generate


def _location_1d(rng, n, shift=0.0):
    z = rng.random((n, 1))
    y = 0.3 + 0.1 * z + 0.05 * rng.standard_normal((n, 1)) + shift
    return y, z


def test_auto_sample_sizes():
    assert auto_sample_sizes(100, 100, 2) == (int(100 * math.log(100)),) * 2
    assert auto_sample_sizes(100, 200, 1) == auto_sample_sizes(200, 200, 1)
    assert auto_sample_sizes(100, 100, 8)[1] == int(100 ** 2 * math.log(100))
    with pytest.raises(ArgumentError):
        auto_sample_sizes(1, 10, 1)


def test_caps_apply_only_to_auto():
    cfg = CotConfig(n_z_cap=50, n_y_cap=20)
    assert cfg.sample_sizes(1000, 1000, 2) == (50, 20)
    assert dataclasses.replace(cfg, n_z=70, n_y=90).sample_sizes(1000, 1000, 2) == (70, 90)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        CotConfig(n_z=0)
    with pytest.raises(ConfigurationError):
        CotConfig(n_y="many")
    with pytest.raises(ConfigurationError):
        CotConfig(solver="simplex")
    assert CotConfig().to_dict()["log_base"] == "e"


def test_value_is_mean_of_inner_solves(rng):
    ctrl, trt = _location_1d(rng, 400), _location_1d(rng, 400, 0.1)
    est = estimate_cot(ctrl, trt, CotConfig(n_z=40, n_y=30))
    assert est.per_z_values.shape == (40,)
    assert abs(est.value - est.per_z_values.mean()) < 1e-12
    assert est.value >= 0
    assert est.diagnostics["solver"] == "sorted"
    assert est.mc_std_error == pytest.approx(est.per_z_values.std(ddof=1) / math.sqrt(40))


def test_pure_translation_recovers_squared_shift():
    rng = np.random.default_rng(11)
    values = []
    for s in range(3):
        ctrl, trt = _location_1d(rng, 4000), _location_1d(rng, 4000, 0.2)
        values.append(estimate_cot(ctrl, trt, CotConfig(n_z=300, n_y=300, seed=s)).value)
    # across replicates the spread is ~3e-4
    assert np.mean(values) == pytest.approx(0.04, abs=2e-3)


def test_identical_arms_near_zero_and_below_shifted():
    rng = np.random.default_rng(12)
    ctrl, same, shifted = _location_1d(rng, 2000), _location_1d(rng, 2000), _location_1d(rng, 2000, 0.1)
    cfg = CotConfig(n_z=200, n_y=200)
    v0 = estimate_cot(ctrl, same, cfg).value
    v1 = estimate_cot(ctrl, shifted, cfg).value
    assert v0 < 1e-3
    assert v0 < v1


def _model(seed=0, n=300, d_y=1, grid=16):
    rng = np.random.default_rng(seed)
    ctrl = (rng.random((n, d_y)), rng.random((n, 1)))
    trt = (rng.random((n, d_y)), rng.random((n, 1)))
    est = EstimatorConfig(J_joint=2, grid_ny=grid, grid_nz=grid)
    return fit_conditional_model(ctrl, trt, est)


def test_identical_tables_give_jitter_scale_value():
    model = _model(d_y=2)
    model = dataclasses.replace(model, conditionals=(model.conditionals[0], model.conditionals[0]))
    est = estimate_cw_between_models(model, CotConfig(n_z=30, n_y=60))
    diameter_sq = 2 * (1 / 16) ** 2
    assert 0 < est.value < 2 * diameter_sq


def test_point_mass_conditionals():
    model = _model(grid=16)
    ta = np.zeros_like(model.conditionals[0])
    tb = np.zeros_like(ta)
    ta[:, 2] = 1.0
    tb[:, 11] = 1.0
    model = dataclasses.replace(model, conditionals=(ta, tb))
    est = estimate_cw_between_models(model, CotConfig(n_z=20, n_y=50))
    h = 1 / 16
    gap = 9 * h
    assert (gap - h) ** 2 <= est.value <= (gap + h) ** 2


def test_swapped_groups_give_identical_inner_values():
    model = _model(d_y=2, grid=12)
    cfg = CotConfig(n_z=25, n_y=40, seed=3)
    a = estimate_cw_between_models(model, cfg)
    b = estimate_cw_between_models(model.swapped(), cfg)
    assert np.allclose(a.per_z_values, b.per_z_values, rtol=1e-13, atol=0)


def test_deterministic_and_thread_independent(rng):
    data = generate(builtin_scenario("s1"), 300, rng)
    cfg = CotConfig(n_z=30, n_y=25, seed=5)
    a = estimate_cot(data.control, data.treated, cfg)
    b = estimate_cot(data.control, data.treated, cfg)
    c = estimate_cot(data.control, data.treated, dataclasses.replace(cfg, threads=3))
    assert np.array_equal(a.per_z_values, b.per_z_values)
    assert np.array_equal(a.per_z_values, c.per_z_values)
    assert a.value == c.value


def test_mc_error_scales_with_nz():
    model = _model(seed=2, d_y=1, grid=32)
    ratios = []
    for seed in range(20):
        small = estimate_cw_between_models(model, CotConfig(n_z=100, n_y=40, seed=seed)).mc_std_error
        large = estimate_cw_between_models(model, CotConfig(n_z=200, n_y=40, seed=seed)).mc_std_error
        ratios.append(small ** 2 / large ** 2)
    assert 1.0 < np.mean(ratios) < 4.0


def test_conditional_dominates_pooled():
    model = _model(seed=4, d_y=2, grid=16)
    cfg = CotConfig(n_z=150, n_y=150, seed=1)
    est = estimate_cw_between_models(model, cfg)
    assert est.value >= pooled_w2sq(model, 150, cfg) - 3 * est.mc_std_error


def test_dimension_mismatch(rng):
    with pytest.raises(ArgumentError):
        estimate_cot((rng.random((20, 2)), rng.random((20, 1))), (rng.random((20, 1)), rng.random((20, 1))))
    with pytest.raises(ArgumentError):
        estimate_cot((rng.random((20, 1)), rng.random((19, 1))), (rng.random((20, 1)), rng.random((20, 1))))


def test_sorted_solver_needs_1d(rng):
    data = generate(builtin_scenario("s1"), 100, rng)
    with pytest.raises(ConfigurationError):
        estimate_cot(data.control, data.treated, CotConfig(n_z=5, n_y=5, solver="sorted"))


def test_assignment_and_sorted_agree_in_1d(rng):
    ctrl, trt = _location_1d(rng, 300), _location_1d(rng, 300, 0.05)
    a = estimate_cot(ctrl, trt, CotConfig(n_z=20, n_y=30, solver="assignment"))
    b = estimate_cot(ctrl, trt, CotConfig(n_z=20, n_y=30, solver="sorted"))
    assert np.allclose(a.per_z_values, b.per_z_values, rtol=1e-12, atol=1e-15)
