"""Wavelet density estimates on the unit cube and the aligned conditional model.

A joint sample of ``(y, z)`` points is projected onto the periodized wavelet
space at resolution ``J``; the projection is evaluated on a cell-centred grid,
clipped at zero and renormalized by grid quadrature.  Two such estimates
(control and treated) are turned into conditional ``Y | Z`` tables that share
one averaged ``Z`` marginal, which is what the transport step samples from.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ArgumentError, ConfigurationError, DataError
from .wavelet import (
    WaveletBasis,
    WaveletCoefficients,
    build_filter,
    decompose,
    reconstruct,
)

BOUNDARY_SLACK = 1e-12
DEGENERATE_MASS = 1e-12
GRID_CELL_BUDGET = 2 ** 20
MAX_DIM = 5

Group = Union[str, int]


@dataclass(frozen=True)
class EstimatorConfig:
    """Options for the joint density fit.

    ``J_joint`` is the finest scaling level kept: the estimate lives in the
    span of level-``J_joint`` scaling functions, i.e. the coarse block at
    ``j0`` plus detail levels ``j0 .. J_joint - 1``.  ``None`` selects the
    rate-driven rule :func:`default_resolution`.
    """

    wavelet_order: int = 4
    j0: int = 0
    J_joint: Optional[int] = 4
    J_z: int = 6
    smoothness: float = 2.0
    threshold: Union[None, float, Tuple[float, ...]] = None
    nonnegativity: bool = True
    renormalize: bool = True
    grid_ny: Optional[int] = None
    grid_nz: Optional[int] = None
    cascade_depth: int = 10
    z_marginal: str = "joint"

    def __post_init__(self):
        if self.j0 < 0:
            raise ConfigurationError("j0 must be nonnegative")
        if self.J_joint is not None and self.J_joint < self.j0:
            raise ConfigurationError(f"J_joint={self.J_joint} is below j0={self.j0}")
        if self.J_z < self.j0:
            raise ConfigurationError(f"J_z={self.J_z} is below j0={self.j0}")
        if self.smoothness <= 0:
            raise ConfigurationError("smoothness must be positive")
        for name in ("grid_ny", "grid_nz"):
            value = getattr(self, name)
            if value is not None and value < 8:
                raise ConfigurationError(f"{name} must be at least 8, got {value}")
        if self.z_marginal not in ("joint", "separate"):
            raise ConfigurationError("z_marginal must be 'joint' or 'separate'")
        if isinstance(self.threshold, list):
            object.__setattr__(self, "threshold", tuple(self.threshold))

    def resolution(self, n: int, d: int) -> int:
        if self.J_joint is not None:
            return self.J_joint
        return default_resolution(n, self.smoothness, d, self.j0)

    def grid_sizes(self, d_y: int, d_z: int, J: int) -> Tuple[int, int]:
        """Per-axis grid sizes for Y and Z coordinates.

        Unset sizes default to ``2**(J+3)`` nodes per axis (eight nodes per
        finest-level translate) capped so the joint grid stays near
        ``GRID_CELL_BUDGET`` cells, never below 8.
        """
        auto = max(8, min(2 ** (J + 3), int(math.floor(GRID_CELL_BUDGET ** (1.0 / (d_y + d_z)) + 1e-9))))
        return (self.grid_ny or auto, self.grid_nz or auto)


def default_resolution(n: int, s: float, d: int, j0: int = 0) -> int:
    """``floor(log2(n) / (2 s + d))`` floored at ``j0``."""
    if n < 2 or s <= 0 or d < 1:
        raise ArgumentError(f"need n >= 2, s > 0, d >= 1 (got n={n}, s={s}, d={d})")
    return max(j0, int(math.floor(math.log2(n) / (2.0 * s + d))))


def cell_centers(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def _check_points(x: np.ndarray, what: str = "sample") -> np.ndarray:
    x = np.array(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    bad = ~np.all((x >= -BOUNDARY_SLACK) & (x <= 1.0 + BOUNDARY_SLACK), axis=1)
    if np.any(bad):
        row = int(np.flatnonzero(bad)[0])
        raise DataError(f"{what} row {row} lies outside the unit cube: {x[row].tolist()}")
    return np.clip(x, 0.0, 1.0)


def _tensor_entries(basis: WaveletBasis, j: int, x: np.ndarray):
    """Flat coefficient indices and product weights of all nonzero tensor terms."""
    m, d = x.shape
    period = 2 ** j
    flat = np.zeros((m, 1), dtype=np.int64)
    weight = np.ones((m, 1))
    for r in range(d):
        shift, value = basis.sparse_1d("scaling", j, x[:, r])
        flat = (flat[:, :, None] * period + shift[:, None, :]).reshape(m, -1)
        weight = (weight[:, :, None] * value[:, None, :]).reshape(m, -1)
    return flat, weight


def _chunks(m: int, width: int):
    step = max(1, 2 ** 22 // max(width, 1))
    for start in range(0, m, step):
        yield slice(start, min(m, start + step))


def projection_coefficients(basis: WaveletBasis, x: np.ndarray, j: int) -> np.ndarray:
    """Empirical level-``j`` scaling coefficients ``(1/n) sum_i Phi_{j,k}(x_i)``."""
    n, d = x.shape
    size = 2 ** (j * d)
    width = (basis.filter.length - 1) ** d
    total = np.zeros(size)
    for sl in _chunks(n, width):
        flat, weight = _tensor_entries(basis, j, x[sl])
        total += np.bincount(flat.ravel(), weights=weight.ravel(), minlength=size)
    return (total / n).reshape((2 ** j,) * d)


def _evaluate_series(basis: WaveletBasis, coeffs: np.ndarray, j: int, x: np.ndarray) -> np.ndarray:
    flat_coeffs = coeffs.ravel()
    width = (basis.filter.length - 1) ** x.shape[1]
    out = np.empty(x.shape[0])
    for sl in _chunks(x.shape[0], width):
        flat, weight = _tensor_entries(basis, j, x[sl])
        out[sl] = np.sum(flat_coeffs[flat] * weight, axis=1)
    return out


def _evaluate_on_grid(basis: WaveletBasis, coeffs: np.ndarray, j: int, nodes: Sequence[np.ndarray]) -> np.ndarray:
    out = coeffs
    for axis, pts in enumerate(nodes):
        E = basis.basis_matrix("scaling", j, pts)
        out = np.moveaxis(np.tensordot(E, out, axes=(1, axis)), 0, axis)
    return out


def soft_threshold(beta: np.ndarray, lam: float) -> np.ndarray:
    """``sign(beta) * max(|beta| - lam, 0)``."""
    return np.sign(beta) * np.maximum(np.abs(beta) - lam, 0.0)


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    """Clipped, renormalized wavelet projection of a sample on ``[0,1]^d``.

    The series is stored as level-``J`` scaling coefficients, which span the
    same space as the multilevel hierarchy; :meth:`blocks` returns the
    hierarchy (coarse block at ``j0`` and one block per detail level and type).
    """

    basis: WaveletBasis
    raw_coeffs: np.ndarray
    coeffs: np.ndarray
    dims: Tuple[int, int]
    n_obs: int
    grid_shape: Tuple[int, ...]
    grid_values: np.ndarray
    normalizing_constant: float
    clipped_mass: float
    config: EstimatorConfig
    z_marginal_masses: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def level(self) -> int:
        return self.basis.J

    def blocks(self, raw: bool = False) -> WaveletCoefficients:
        return decompose(self.raw_coeffs if raw else self.coeffs, self.basis.filter, self.basis.j0)

    def raw_evaluate(self, x) -> np.ndarray:
        """Unclipped series value at points of the cube."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = x.reshape(1, -1) if single else x
        if pts.shape[1] != self.dim:
            raise ArgumentError(f"expected points of dimension {self.dim}, got {pts.shape[1]}")
        if np.any((pts < 0.0) | (pts > 1.0)):
            raise ArgumentError("evaluation points must lie in the unit cube")
        values = _evaluate_series(self.basis, self.coeffs, self.level, pts)
        return values[0] if single else values

    def evaluate(self, x) -> np.ndarray:
        """Density value after clipping and renormalization."""
        raw = self.raw_evaluate(x)
        if self.config.nonnegativity:
            raw = np.maximum(raw, 0.0)
        return raw / self.normalizing_constant

    def cell_masses(self) -> np.ndarray:
        """Probability of each grid cell (sums to one when renormalized)."""
        return self.grid_values / self.grid_values.size

    def nodes(self) -> Tuple[np.ndarray, ...]:
        return tuple(cell_centers(n) for n in self.grid_shape)


def _apply_threshold(raw: np.ndarray, basis: WaveletBasis, threshold) -> np.ndarray:
    hierarchy = decompose(raw, basis.filter, basis.j0)
    levels = range(basis.j0, basis.J)
    if np.isscalar(threshold):
        lams = {j: float(threshold) for j in levels}
    else:
        if len(threshold) != len(levels):
            raise ConfigurationError(
                f"threshold needs one value per detail level ({len(levels)}), got {len(threshold)}"
            )
        lams = dict(zip(levels, map(float, threshold)))
    for (j, l), block in hierarchy.details.items():
        hierarchy.details[(j, l)] = soft_threshold(block, lams[j])
    return reconstruct(hierarchy, basis.filter)


def fit_density(
    sample,
    config: EstimatorConfig = EstimatorConfig(),
    dims: Optional[Tuple[int, int]] = None,
) -> DensityEstimate:
    """Fit the wavelet density estimate of an ``(n, d)`` sample in the unit cube.

    ``dims = (d_y, d_z)`` records which leading coordinates are outcomes; the
    default treats every coordinate as an outcome.
    """
    x = _check_points(sample)
    n, d = x.shape
    if n < 2:
        raise DataError(f"need at least 2 observations, got {n}")
    if dims is None:
        dims = (d, 0)
    d_y, d_z = dims
    if d_y + d_z != d:
        raise ArgumentError(f"dims {dims} do not match sample dimension {d}")
    if d > MAX_DIM:
        raise ConfigurationError(f"joint dimension {d} exceeds the supported maximum {MAX_DIM}")
    J = config.resolution(n, d)
    basis = WaveletBasis(build_filter(config.wavelet_order), d, config.j0, J, config.cascade_depth)

    raw = projection_coefficients(basis, x, J)
    coeffs = raw if config.threshold is None else _apply_threshold(raw, basis, config.threshold)

    ny, nz = config.grid_sizes(d_y, d_z, J)
    grid_shape = (ny,) * d_y + (nz,) * d_z
    values = _evaluate_on_grid(basis, coeffs, J, [cell_centers(m) for m in grid_shape])
    negative = np.minimum(values, 0.0)
    clipped_mass = float(-negative.mean() / max(np.abs(values).mean(), 1e-300))
    if config.nonnegativity:
        values = np.maximum(values, 0.0)
    constant = float(values.mean()) if config.renormalize else 1.0
    if not constant > 0:
        raise DataError("density estimate has no positive mass on the grid")
    values = values / constant

    z_masses = None
    if config.z_marginal == "separate" and d_z > 0:
        z_masses = _separate_z_marginal(x[:, d_y:], config, nz)

    return DensityEstimate(
        basis=basis,
        raw_coeffs=raw,
        coeffs=coeffs,
        dims=(d_y, d_z),
        n_obs=n,
        grid_shape=grid_shape,
        grid_values=values,
        normalizing_constant=constant,
        clipped_mass=clipped_mass,
        config=config,
        z_marginal_masses=z_masses,
    )


def _separate_z_marginal(z: np.ndarray, config: EstimatorConfig, nz: int) -> np.ndarray:
    d_z = z.shape[1]
    basis = WaveletBasis(build_filter(config.wavelet_order), d_z, config.j0, config.J_z, config.cascade_depth)
    coeffs = projection_coefficients(basis, z, config.J_z)
    values = _evaluate_on_grid(basis, coeffs, config.J_z, [cell_centers(nz)] * d_z)
    values = np.maximum(values, 0.0).ravel()
    return values / values.sum()


# -- conditional model ----------------------------------------------------------

def _group_index(group: Group) -> int:
    if group in (0, "control", "c", "0"):
        return 0
    if group in (1, "treatment", "treated", "t", "1"):
        return 1
    raise ArgumentError(f"unknown group {group!r}; use 'control' or 'treatment'")


@dataclass(frozen=True, eq=False)
class ConditionalModel:
    """Aligned pair ``(P_dagger, Q_dagger)`` on the estimation grid.

    Both joints are rebuilt as ``conditional(y | z) * r_hat(z)`` with the same
    ``r_hat``: the average of the two estimated ``Z`` marginals.
    """

    p_hat: DensityEstimate
    q_hat: DensityEstimate
    r_hat: np.ndarray
    y_shape: Tuple[int, ...]
    z_shape: Tuple[int, ...]
    conditionals: Tuple[np.ndarray, np.ndarray]
    degenerate_rows: Tuple[int, int]
    stream_ids: Tuple[int, int] = (0, 1)
    _cdfs: Tuple[np.ndarray, np.ndarray] = field(default=None, repr=False)
    _r_cdf: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_cdfs", tuple(np.cumsum(c, axis=1) for c in self.conditionals))
        object.__setattr__(self, "_r_cdf", np.cumsum(self.r_hat))

    @property
    def d_y(self) -> int:
        return len(self.y_shape)

    @property
    def d_z(self) -> int:
        return len(self.z_shape)

    @property
    def n_z_cells(self) -> int:
        return self.r_hat.size

    def marginal_z(self, group: Group) -> np.ndarray:
        """Z-marginal cell masses of the aligned joint; the same array for both groups."""
        _group_index(group)
        return self.r_hat

    def conditional(self, group: Group) -> np.ndarray:
        """``(n_z_cells, n_y_cells)`` table of conditional Y-cell probabilities."""
        return self.conditionals[_group_index(group)]

    def joint_masses(self, group: Group) -> np.ndarray:
        return self.conditional(group) * self.r_hat[:, None]

    def z_cell_centers(self) -> np.ndarray:
        idx = np.stack(np.unravel_index(np.arange(self.n_z_cells), self.z_shape), axis=1)
        return (idx + 0.5) / np.array(self.z_shape)

    def swapped(self) -> "ConditionalModel":
        """Model with the groups exchanged, keeping each group's random stream."""
        return ConditionalModel(
            p_hat=self.q_hat,
            q_hat=self.p_hat,
            r_hat=self.r_hat,
            y_shape=self.y_shape,
            z_shape=self.z_shape,
            conditionals=(self.conditionals[1], self.conditionals[0]),
            degenerate_rows=(self.degenerate_rows[1], self.degenerate_rows[0]),
            stream_ids=(self.stream_ids[1], self.stream_ids[0]),
        )


def _conditional_table(masses: np.ndarray, n_y_cells: int) -> Tuple[np.ndarray, np.ndarray, int]:
    table = masses.reshape(n_y_cells, -1)
    pz = table.sum(axis=0)
    degenerate = pz < DEGENERATE_MASS
    cond = np.empty((table.shape[1], n_y_cells))
    ok = ~degenerate
    cond[ok] = (table[:, ok] / pz[ok]).T
    cond[degenerate] = 1.0 / n_y_cells
    cond /= cond.sum(axis=1, keepdims=True)
    return cond, pz, int(degenerate.sum())


def build_conditional_model(p_hat: DensityEstimate, q_hat: DensityEstimate) -> ConditionalModel:
    """Align two joint estimates on their averaged Z marginal."""
    if p_hat.dims != q_hat.dims:
        raise ArgumentError(f"estimates disagree on (d_y, d_z): {p_hat.dims} vs {q_hat.dims}")
    if p_hat.grid_shape != q_hat.grid_shape:
        raise ArgumentError("estimates were evaluated on different grids")
    d_y, d_z = p_hat.dims
    if d_z == 0:
        raise ArgumentError("conditional model needs at least one covariate")
    y_shape = p_hat.grid_shape[:d_y]
    z_shape = p_hat.grid_shape[d_y:]
    n_y_cells = int(np.prod(y_shape))
    cond_p, pz, deg_p = _conditional_table(p_hat.cell_masses(), n_y_cells)
    cond_q, qz, deg_q = _conditional_table(q_hat.cell_masses(), n_y_cells)
    if p_hat.z_marginal_masses is not None and q_hat.z_marginal_masses is not None:
        pz, qz = p_hat.z_marginal_masses, q_hat.z_marginal_masses
    r_hat = (pz + qz) / 2.0
    r_hat = r_hat / r_hat.sum()
    return ConditionalModel(
        p_hat=p_hat,
        q_hat=q_hat,
        r_hat=r_hat,
        y_shape=tuple(y_shape),
        z_shape=tuple(z_shape),
        conditionals=(cond_p, cond_q),
        degenerate_rows=(deg_p, deg_q),
    )


def _draw_cells(cdf: np.ndarray, count: int, rng: np.random.Generator, uniforms: Optional[np.ndarray] = None) -> np.ndarray:
    u = (rng.random(count) if uniforms is None else uniforms) * cdf[-1]
    return np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)


def _jitter(cells: np.ndarray, shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    idx = np.stack(np.unravel_index(cells, shape), axis=1).astype(float)
    return (idx + rng.random(idx.shape)) / np.array(shape, dtype=float)


def sample_conditional(
    model: ConditionalModel,
    group: Group,
    z_cell: int,
    count: int,
    rng: np.random.Generator,
    uniforms: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Draw ``count`` outcome points from the conditional table row of ``z_cell``.

    Cells are drawn by inverting the row's cumulative distribution at
    ``uniforms`` (fresh draws from ``rng`` when omitted) and each point is
    placed uniformly inside its cell using ``rng``.
    """
    if not 0 <= z_cell < model.n_z_cells:
        raise ArgumentError(f"z_cell {z_cell} outside [0, {model.n_z_cells})")
    if uniforms is not None and np.shape(uniforms) != (count,):
        raise ArgumentError(f"need {count} uniforms, got shape {np.shape(uniforms)}")
    cdf = model._cdfs[_group_index(group)][z_cell]
    cells = _draw_cells(cdf, count, rng, uniforms)
    return _jitter(cells, model.y_shape, rng)


def draw_z(model: ConditionalModel, count: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Z-grid cells drawn from ``r_hat`` together with jittered points inside them."""
    cells = _draw_cells(model._r_cdf, count, rng)
    return cells, _jitter(cells, model.z_shape, rng)


def sample_marginal_z(model: ConditionalModel, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` covariate points from the aligned marginal ``r_hat``."""
    return draw_z(model, count, rng)[1]
