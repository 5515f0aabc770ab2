import dataclasses

import numpy as np
import pytest

from cotwave.density import (
    EstimatorConfig,
    build_conditional_model,
    default_resolution,
    draw_z,
    fit_density,
    sample_conditional,
    sample_marginal_z,
    soft_threshold,
)
from cotwave.errors import ArgumentError, ConfigurationError, DataError
from cotwave.simbench import builtin_scenario, generate

HAAR = EstimatorConfig(wavelet_order=1, J_joint=0)


def _fit_pair(name="s1", n=800, seed=0, **kw):
    data = generate(builtin_scenario(name), n, np.random.default_rng(seed))
    cfg = EstimatorConfig(**kw)
    dims = (data.control.y.shape[1], data.control.z.shape[1])
    p = fit_density(data.control.joint(), cfg, dims)
    q = fit_density(data.treated.joint(), cfg, dims)
    return data, p, q


@pytest.mark.parametrize("n,s,d,expected", [(1024, 2, 3, 1), (2, 10, 1, 0), (2 ** 21, 1, 5, 3), (4096, 2, 2, 2)])
def test_default_resolution(n, s, d, expected):
    assert default_resolution(n, s, d) == expected


def test_default_resolution_floor_at_j0():
    assert default_resolution(8, 2.0, 3, j0=2) == 2


def test_haar_level_zero_is_flat(rng):
    est = fit_density(rng.beta(2, 5, size=(37, 1)), HAAR)
    assert est.raw_coeffs.ravel().tolist() == [1.0]
    assert np.all(est.grid_values == 1.0)
    assert est.evaluate(np.array([[0.0], [0.37], [1.0]])).tolist() == [1.0, 1.0, 1.0]


def test_haar_detail_coefficient_by_hand():
    est = fit_density(np.array([0.1, 0.2, 0.3, 0.8]), EstimatorConfig(wavelet_order=1, J_joint=1))
    blocks = est.blocks(raw=True)
    assert blocks.scaling.ravel()[0] == pytest.approx(1.0, abs=1e-15)
    assert blocks.details[(0, (1,))].ravel()[0] == pytest.approx(0.5, abs=1e-15)


def test_clipping_idempotent_on_nonnegative_projection():
    x = (np.arange(64) + 0.5) / 64
    est = fit_density(x, EstimatorConfig(wavelet_order=1, J_joint=3))
    assert est.clipped_mass == 0.0
    assert est.normalizing_constant == pytest.approx(1.0, rel=1e-14)
    pts = np.linspace(0, 1, 101)[:, None]
    assert np.allclose(est.evaluate(pts), est.raw_evaluate(pts), rtol=1e-14, atol=0)


def test_coefficient_linearity(rng):
    a = rng.random((150, 2))
    b = rng.random((250, 2))
    cfg = EstimatorConfig(J_joint=3)
    fa, fb = fit_density(a, cfg), fit_density(b, cfg)
    fab = fit_density(np.vstack([a, b]), cfg)
    assert np.allclose(fab.raw_coeffs, (150 * fa.raw_coeffs + 250 * fb.raw_coeffs) / 400, rtol=0, atol=1e-12)


def test_coefficients_match_direct_tensor_sum(rng):
    x = rng.random((20, 2))
    cfg = EstimatorConfig(J_joint=2)
    est = fit_density(x, cfg)
    basis = est.basis
    direct = np.array(
        [[np.mean([basis.eval_tensor(2, [k0, k1], [0, 0], xi) for xi in x]) for k1 in range(4)] for k0 in range(4)]
    )
    assert np.allclose(est.raw_coeffs, direct, atol=1e-12)


def test_grid_value_matches_pointwise_evaluate():
    _, p, _ = _fit_pair(n=600)
    idx = (3, 50, 77)
    node = np.array([p.nodes()[a][i] for a, i in enumerate(idx)])
    assert p.evaluate(node) == pytest.approx(p.grid_values[idx], rel=1e-10, abs=1e-12)


def test_mass_and_nonnegativity():
    _, p, q = _fit_pair(n=1000)
    for est in (p, q):
        assert est.grid_values.min() >= 0
        assert est.cell_masses().sum() == pytest.approx(1.0, abs=1e-9)
    pts = np.random.default_rng(3).random((10_000, 3))
    assert p.evaluate(pts).min() >= 0


def test_threshold_kills_details_when_large(rng):
    x = rng.random(300)
    cfg = EstimatorConfig(wavelet_order=1, J_joint=3, threshold=10.0)
    est = fit_density(x, cfg)
    blocks = est.blocks()
    assert all(np.max(np.abs(b)) < 1e-14 for b in blocks.details.values())
    assert np.allclose(est.grid_values, 1.0)


def test_threshold_per_level_length_checked(rng):
    with pytest.raises(ConfigurationError):
        fit_density(rng.random(50), EstimatorConfig(J_joint=3, threshold=(0.1, 0.2)))


def test_soft_threshold():
    beta = np.array([-2.0, -0.5, 0.0, 0.3, 1.5])
    assert soft_threshold(beta, 0.5).tolist() == [-1.5, 0.0, 0.0, 0.0, 1.0]


def test_rejects_points_outside_cube_naming_row():
    x = np.array([[0.2, 0.3], [0.5, 1.2], [0.1, 0.1]])
    with pytest.raises(DataError, match="row 1"):
        fit_density(x)


def test_boundary_slack_clamped():
    est = fit_density(np.array([[-1e-13], [1 + 1e-13], [0.5]]), EstimatorConfig(J_joint=2))
    assert np.isfinite(est.grid_values).all()


def test_needs_two_points():
    with pytest.raises(DataError):
        fit_density(np.array([[0.5, 0.5]]))


def test_config_invariants():
    with pytest.raises(ConfigurationError):
        EstimatorConfig(j0=3, J_joint=2)
    with pytest.raises(ConfigurationError):
        EstimatorConfig(grid_ny=4)


def test_uniform_fits_give_uniform_model(rng):
    cfg = EstimatorConfig(wavelet_order=1, J_joint=0)
    p = fit_density(rng.random((40, 2)), cfg, (1, 1))
    q = fit_density(rng.random((40, 2)), cfg, (1, 1))
    model = build_conditional_model(p, q)
    assert np.allclose(model.r_hat, 1.0 / model.n_z_cells, rtol=0, atol=1e-15)
    assert np.allclose(model.conditional("control"), 1.0 / np.prod(model.y_shape), rtol=0, atol=1e-15)
    assert model.marginal_z("control") is model.marginal_z("treatment")


def test_alignment_and_row_normalization():
    _, p, q = _fit_pair(n=1000)
    model = build_conditional_model(p, q)
    pz = p.cell_masses().reshape(np.prod(model.y_shape), -1).sum(axis=0)
    qz = q.cell_masses().reshape(np.prod(model.y_shape), -1).sum(axis=0)
    assert np.allclose(model.r_hat, (pz + qz) / 2, atol=1e-15)
    assert model.r_hat.sum() == pytest.approx(1.0, abs=1e-9)
    for g in ("control", "treatment"):
        table = model.conditional(g)
        assert table.min() >= 0
        assert np.allclose(table.sum(axis=1), 1.0, atol=1e-9)
        assert np.allclose(model.joint_masses(g).sum(axis=1), model.r_hat, rtol=1e-12, atol=0)


def test_conditional_mean_tracks_generator():
    # s1 control: E[Y1 | z] = 0.35 + 0.10 z
    _, p, q = _fit_pair(n=4000, seed=4)
    model = build_conditional_model(p, q)
    y1 = (np.arange(model.y_shape[0]) + 0.5) / model.y_shape[0]
    table = model.conditional(0).reshape(model.n_z_cells, *model.y_shape)
    mean1 = (table.sum(axis=2) * y1).sum(axis=1)
    z = model.z_cell_centers()[:, 0]
    inner = (z > 0.15) & (z < 0.85)
    slope = np.polyfit(z[inner], mean1[inner], 1)[0]
    assert 0.03 < slope < 0.2


def test_degenerate_rows_become_uniform(rng):
    cfg = EstimatorConfig(wavelet_order=1, J_joint=1, grid_ny=8, grid_nz=8)
    p = fit_density(np.column_stack([rng.random(50), rng.random(50) * 0.45]), cfg, (1, 1))
    q = fit_density(rng.random((50, 2)), cfg, (1, 1))
    model = build_conditional_model(p, q)
    assert model.degenerate_rows[0] == 4
    assert np.allclose(model.conditional(0)[4:], 1 / 8)


def _point_mass_model(rng, cell=5):
    cfg = EstimatorConfig(wavelet_order=1, J_joint=1, grid_ny=8, grid_nz=8)
    p = fit_density(rng.random((30, 2)), cfg, (1, 1))
    model = build_conditional_model(p, p)
    table = np.zeros((8, 8))
    table[:, cell] = 1.0
    r = np.zeros(8)
    r[2] = 1.0
    return dataclasses.replace(model, conditionals=(table, table), r_hat=r)


def test_sample_conditional_point_mass(rng):
    model = _point_mass_model(rng)
    y = sample_conditional(model, "control", 3, 500, np.random.default_rng(1))
    assert y.shape == (500, 1)
    assert np.all((y >= 5 / 8) & (y < 6 / 8))


def test_sample_marginal_z_point_mass(rng):
    model = _point_mass_model(rng)
    cells, z = draw_z(model, 200, np.random.default_rng(2))
    assert np.all(cells == 2)
    assert np.all((z >= 2 / 8) & (z < 3 / 8))


def test_sampling_uniform_frequencies(rng):
    cfg = EstimatorConfig(wavelet_order=1, J_joint=0, grid_ny=8, grid_nz=8)
    p = fit_density(rng.random((30, 2)), cfg, (1, 1))
    model = build_conditional_model(p, p)
    n = 100_000
    for pts in (
        sample_conditional(model, 1, 0, n, np.random.default_rng(5))[:, 0],
        sample_marginal_z(model, n, np.random.default_rng(6))[:, 0],
    ):
        counts = np.bincount((pts * 8).astype(int), minlength=8)
        sigma = np.sqrt(n * (1 / 8) * (7 / 8))
        assert np.all(np.abs(counts - n / 8) < 4 * sigma)


def test_sampling_deterministic(rng):
    _, p, q = _fit_pair(n=300)
    model = build_conditional_model(p, q)
    a = sample_conditional(model, 0, 17, 50, np.random.default_rng(9))
    b = sample_conditional(model, 0, 17, 50, np.random.default_rng(9))
    assert np.array_equal(a, b)
    with pytest.raises(ArgumentError):
        sample_conditional(model, 0, model.n_z_cells, 5, np.random.default_rng(0))
    with pytest.raises(ArgumentError):
        model.conditional("placebo")


def test_separate_z_marginal_option():
    _, p, q = _fit_pair(n=600, z_marginal="separate", J_z=5)
    model = build_conditional_model(p, q)
    assert np.allclose(model.r_hat, (p.z_marginal_masses + q.z_marginal_masses) / 2, atol=1e-15)
    assert model.r_hat.sum() == pytest.approx(1.0, abs=1e-12)
