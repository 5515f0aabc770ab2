"""Wavelet-based conditional optimal transport (COT) estimate.

Pipeline: fit the control and treated joint densities, align them on the
averaged covariate marginal, draw covariate cells from that marginal, and at
each drawn cell solve an empirical transport problem between outcome samples
of the two conditionals.  The estimate is the average over drawn cells.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Dict, NamedTuple, Optional, Tuple, Union

import numpy as np

from ._streams import Y_DRAW, Z_DRAW, map_ordered, substream
from .density import (
    ConditionalModel,
    EstimatorConfig,
    build_conditional_model,
    draw_z,
    fit_density,
    sample_conditional,
)
from .errors import ArgumentError, ConfigurationError, DataError
from .ot import CostSpec, empirical_w2sq, sorted_w2sq_1d

SOLVERS = ("auto", "assignment", "sorted")


class GroupSample(NamedTuple):
    """Outcomes ``y`` (n, d_y) and covariates ``z`` (n, d_z) of one treatment arm."""

    y: np.ndarray
    z: np.ndarray

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def joint(self) -> np.ndarray:
        return np.hstack([self.y, self.z])

    def take(self, idx: np.ndarray) -> "GroupSample":
        return GroupSample(self.y[idx], self.z[idx])


def as_group(sample) -> GroupSample:
    y, z = sample
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    y = y[:, None] if y.ndim == 1 else y
    z = z[:, None] if z.ndim == 1 else z
    if y.shape[0] != z.shape[0]:
        raise ArgumentError(f"y has {y.shape[0]} rows but z has {z.shape[0]}")
    if y.shape[0] == 0:
        raise DataError("sample is empty")
    return GroupSample(y, z)


def auto_sample_sizes(n: int, m: int, d_y: int) -> Tuple[int, int]:
    """Monte Carlo sizes ``N_Z = floor(N log N)`` and ``N_Y = floor(N^{max(d_y/4, 1)} log N)``.

    ``N = max(n, m)`` and ``log`` is the natural logarithm.
    """
    if n < 2 or m < 2:
        raise ArgumentError("both samples need at least 2 observations")
    N = max(n, m)
    n_z = max(1, int(math.floor(N * math.log(N))))
    n_y = max(1, int(math.floor(N ** max(d_y / 4.0, 1.0) * math.log(N))))
    return n_z, n_y


@dataclass(frozen=True)
class CotConfig:
    """Monte Carlo and solver options; ``estimator`` configures the density fits."""

    n_z: Union[int, str] = "auto"
    n_y: Union[int, str] = "auto"
    cost: CostSpec = field(default_factory=CostSpec)
    seed: int = 0
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    n_z_cap: int = 5000
    n_y_cap: int = 500
    solver: str = "auto"
    threads: int = 1

    def __post_init__(self):
        for name in ("n_z", "n_y"):
            value = getattr(self, name)
            if value != "auto" and (not isinstance(value, (int, np.integer)) or value < 1):
                raise ConfigurationError(f"{name} must be a positive integer or 'auto', got {value!r}")
        if self.solver not in SOLVERS:
            raise ConfigurationError(f"solver must be one of {SOLVERS}")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")

    def sample_sizes(self, n: int, m: int, d_y: int) -> Tuple[int, int]:
        auto_z, auto_y = auto_sample_sizes(n, m, d_y)
        n_z = min(auto_z, self.n_z_cap) if self.n_z == "auto" else int(self.n_z)
        n_y = min(auto_y, self.n_y_cap) if self.n_y == "auto" else int(self.n_y)
        return n_z, n_y

    def with_seed(self, seed: int) -> "CotConfig":
        return dataclasses.replace(self, seed=int(seed))

    def to_dict(self) -> Dict[str, Any]:
        est = dataclasses.asdict(self.estimator)
        return {
            "n_z": self.n_z,
            "n_y": self.n_y,
            "n_z_cap": self.n_z_cap,
            "n_y_cap": self.n_y_cap,
            "cost": self.cost.describe(),
            "solver": self.solver,
            "seed": self.seed,
            "log_base": "e",
            "estimator": est,
        }


@dataclass(frozen=True, eq=False)
class CotEstimate:
    """Estimated COT value with its per-covariate-draw transport values."""

    value: float
    per_z_values: np.ndarray
    mc_std_error: float
    config: Dict[str, Any]
    diagnostics: Dict[str, Any]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "value": self.value,
            "mc_std_error": self.mc_std_error,
            "n_z": int(self.per_z_values.size),
        }


def fit_conditional_model(control, treated, estimator: EstimatorConfig = EstimatorConfig()) -> ConditionalModel:
    control = as_group(control)
    treated = as_group(treated)
    if control.y.shape[1] != treated.y.shape[1] or control.z.shape[1] != treated.z.shape[1]:
        raise ArgumentError(
            "control and treated disagree on dimensions: "
            f"(d_y, d_z) = {(control.y.shape[1], control.z.shape[1])} vs {(treated.y.shape[1], treated.z.shape[1])}"
        )
    dims = (control.y.shape[1], control.z.shape[1])
    p_hat = fit_density(control.joint(), estimator, dims)
    q_hat = fit_density(treated.joint(), estimator, dims)
    return build_conditional_model(p_hat, q_hat)


def _transport_fn(config: CotConfig, d_y: int):
    use_sorted = config.solver == "sorted" or (
        config.solver == "auto" and d_y == 1 and config.cost.is_quadratic
    )
    if use_sorted:
        if not config.cost.is_quadratic or d_y != 1:
            raise ConfigurationError("the sorted solver needs 1D outcomes and quadratic cost")
        return sorted_w2sq_1d, "sorted"
    return (lambda a, b: empirical_w2sq(a, b, config.cost)), "assignment"


def estimate_cw_between_models(
    model: ConditionalModel,
    config: CotConfig = CotConfig(),
    sizes: Optional[Tuple[int, int]] = None,
) -> CotEstimate:
    """Monte Carlo COT value between the two aligned conditionals of ``model``.

    ``sizes`` gives ``(n, m)`` for the automatic Monte Carlo rules and
    defaults to the sample sizes the densities were fitted on.
    """
    n, m = sizes if sizes is not None else (model.p_hat.n_obs, model.q_hat.n_obs)
    n_z, n_y = config.sample_sizes(n, m, model.d_y)
    transport, solver = _transport_fn(config, model.d_y)

    cells, _ = draw_z(model, n_z, substream(config.seed, Z_DRAW))
    sid0, sid1 = model.stream_ids

    def inner(tau: int) -> float:
        # both arms invert their conditional CDFs at the same uniforms; each
        # arm is still an i.i.d. sample, and the shared draws cut Monte Carlo noise
        u = substream(config.seed, Y_DRAW, tau).random(n_y)
        a = sample_conditional(model, 0, int(cells[tau]), n_y, substream(config.seed, Y_DRAW, tau, sid0), u)
        b = sample_conditional(model, 1, int(cells[tau]), n_y, substream(config.seed, Y_DRAW, tau, sid1), u)
        return transport(a, b)

    values = np.empty(n_z)
    chunk = max(1, n_z // (4 * config.threads))
    blocks = [range(s, min(n_z, s + chunk)) for s in range(0, n_z, chunk)]

    def run_block(block: range) -> None:
        for tau in block:
            values[tau] = inner(tau)

    map_ordered(run_block, blocks, config.threads)

    value = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n_z)) if n_z > 1 else float("nan")
    diagnostics = {
        "n_z": n_z,
        "n_y": n_y,
        "solver": solver,
        "degenerate_rows_control": model.degenerate_rows[0],
        "degenerate_rows_treated": model.degenerate_rows[1],
        "clipped_mass_control": model.p_hat.clipped_mass,
        "clipped_mass_treated": model.q_hat.clipped_mass,
        "grid_shape": list(model.p_hat.grid_shape),
        "resolution": model.p_hat.level,
    }
    return CotEstimate(value, values, se, config.to_dict(), diagnostics)


def estimate_cot(control, treated, config: CotConfig = CotConfig()) -> CotEstimate:
    """Wavelet-based COT estimate between a control and a treated sample.

    Each sample is a ``(y, z)`` pair of arrays with coordinates in ``[0, 1]``.
    The result is deterministic given ``config.seed``.
    """
    control = as_group(control)
    treated = as_group(treated)
    model = fit_conditional_model(control, treated, config.estimator)
    return estimate_cw_between_models(model, config, (control.n, treated.n))


def pooled_w2sq(model: ConditionalModel, n_points: int, config: CotConfig = CotConfig()) -> float:
    """Transport value between the outcome marginals of the two aligned joints.

    Each group gets ``n_points`` outcomes drawn as ``z ~ r_hat`` then
    ``y ~ conditional(. | z)``; covariates are then discarded.
    """
    transport, _ = _transport_fn(config, model.d_y)
    clouds = []
    for g in (0, 1):
        rng = substream(config.seed, Y_DRAW, 2 ** 31 - 1, model.stream_ids[g])
        cells, _ = draw_z(model, n_points, rng)
        cdf = model._cdfs[g][cells]
        u = rng.random(n_points) * cdf[:, -1]
        idx = np.minimum((cdf <= u[:, None]).sum(axis=1), cdf.shape[1] - 1)
        pts = np.stack(np.unravel_index(idx, model.y_shape), axis=1).astype(float)
        clouds.append((pts + rng.random(pts.shape)) / np.array(model.y_shape, dtype=float))
    return float(transport(clouds[0], clouds[1]))
