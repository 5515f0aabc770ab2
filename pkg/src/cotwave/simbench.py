"""Gaussian conditional simulation models, their closed-form COT value, and experiment drivers.

In every model ``Y(w) | Z = z ~ N(mu_w(z), Sigma_w(z))`` with ``Z`` uniform on
the unit cube, so the population COT value under quadratic cost is the
``Z``-average of Gaussian transport values.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from ._streams import BOOTSTRAP, DATA, REPLICATE, derive_seed, map_ordered, substream
from .cot import CotConfig, GroupSample, estimate_cot
from .errors import ArgumentError, ConfigurationError
from .infer import BootstrapConfig, ConfidenceInterval, bootstrap_ci, interval_from_sd
from .ot import gelbrich_w2sq

KINDS = ("location", "quadratic", "scale")

REPORT_COLUMNS = (
    "scenario",
    "n",
    "rep",
    "estimate",
    "true_value",
    "error",
    "ci_lower",
    "ci_upper",
    "covered",
    "seed",
)


@dataclass(frozen=True, eq=False)
class GroupParams:
    """Parameters of one arm.

    location:  mu(z) = intercept + slope @ z,            Sigma(z) = cov
    quadratic: mu(z) = quad @ (z - center)**2 + intercept, Sigma(z) = cov
    scale:     mu(z) = intercept,                        Sigma(z) = (scale . z) * cov
    """

    intercept: np.ndarray
    cov: np.ndarray
    slope: Optional[np.ndarray] = None
    quad: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class GaussianCondModel:
    kind: str
    d_y: int
    d_z: int
    groups: tuple
    name: str = "custom"
    from_paper: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown model kind {self.kind!r}")
        if len(self.groups) != 2:
            raise ConfigurationError("need parameters for exactly two groups")
        for w, g in enumerate(self.groups):
            cov = np.asarray(g.cov, dtype=float)
            if cov.shape != (self.d_y, self.d_y) or np.max(np.abs(cov - cov.T)) > 1e-14:
                raise ConfigurationError(f"group {w} covariance must be a symmetric {self.d_y}x{self.d_y} matrix")
            if np.min(np.linalg.eigvalsh(cov)) <= 0:
                raise ConfigurationError(f"group {w} covariance is not positive definite")
            if np.asarray(g.intercept).shape != (self.d_y,):
                raise ConfigurationError(f"group {w} intercept must have length {self.d_y}")
            if self.kind == "location" and np.asarray(g.slope).shape != (self.d_y, self.d_z):
                raise ConfigurationError(f"group {w} slope must be {self.d_y}x{self.d_z}")
            if self.kind == "quadratic":
                if np.asarray(g.quad).shape != (self.d_y, self.d_z) or np.asarray(g.center).shape != (self.d_z,):
                    raise ConfigurationError(f"group {w} quadratic parameters have the wrong shape")
            if self.kind == "scale":
                zeta = np.asarray(g.scale, dtype=float)
                if zeta.shape != (self.d_z,):
                    raise ConfigurationError(f"group {w} scale vector must have length {self.d_z}")
                # zeta . z > 0 on the cube away from the origin iff every entry is positive
                if np.any(zeta <= 0):
                    raise ConfigurationError(f"group {w} scale vector must be positive so zeta.z > 0 on the cube")

    def mean(self, w: int, z: np.ndarray) -> np.ndarray:
        g = self.groups[w]
        z = np.atleast_2d(z)
        if self.kind == "location":
            return g.intercept + z @ np.asarray(g.slope).T
        if self.kind == "quadratic":
            return g.intercept + ((z - g.center) ** 2) @ np.asarray(g.quad).T
        return np.broadcast_to(g.intercept, (z.shape[0], self.d_y)).copy()

    def cov_factor(self, w: int, z: np.ndarray) -> np.ndarray:
        """Scalar multiplier of the base covariance at each ``z`` (one except in the scale model)."""
        z = np.atleast_2d(z)
        if self.kind == "scale":
            return z @ np.asarray(self.groups[w].scale, dtype=float)
        return np.ones(z.shape[0])

    def describe(self) -> Dict[str, Any]:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "name": self.name,
            "kind": self.kind,
            "d_y": self.d_y,
            "d_z": self.d_z,
            "from_paper": self.from_paper,
            "groups": [{k: arr(getattr(g, k)) for k in ("intercept", "slope", "quad", "center", "scale", "cov")} for g in self.groups],
        }


def _cov_pair(d_y: int):
    s0 = [0.05, 0.03, 0.04][:d_y]
    cov0 = np.diag(np.square(s0))
    cov1 = np.diag(np.square([0.07, 0.04, 0.05][:d_y]))
    if d_y > 1:
        cov1[0, 1] = cov1[1, 0] = 0.01 * 0.07 * 0.04
    return cov0, cov1


def _location(name: str, intercept0, slope0, shift, dslope, from_paper=True) -> GaussianCondModel:
    intercept0 = np.array(intercept0, dtype=float)
    slope0 = np.array(slope0, dtype=float)
    d_y, d_z = slope0.shape
    cov0, cov1 = _cov_pair(d_y)
    g0 = GroupParams(intercept=intercept0, slope=slope0, cov=cov0)
    g1 = GroupParams(intercept=intercept0 + np.array(shift, dtype=float), slope=slope0 + np.array(dslope, dtype=float), cov=cov1)
    return GaussianCondModel("location", d_y, d_z, (g0, g1), name, from_paper)


def builtin_scenario(name: str) -> GaussianCondModel:
    """Built-in simulation models.

    ``s1_dy2_dz1``, ``s2_dy2_dz2`` and ``s3_dy3_dz2`` are the published
    inference scenarios.  ``loc_dy1_dz1``, ``quad`` and ``scale`` are
    one-dimensional stand-ins (``from_paper=False``) for the estimation
    studies whose constants were not published.
    """
    key = SCENARIO_ALIASES.get(name, name)
    if key == "s1_dy2_dz1":
        return _location(key, [0.35, 0.55], [[0.10], [-0.05]], [0.12, -0.08], [[0.10], [0.02]])
    if key == "s2_dy2_dz2":
        return _location(
            key, [0.35, 0.55], [[0.20, -0.10], [0.05, 0.15]], [0.12, -0.08], [[0.10, 0.04], [0.02, 0.06]]
        )
    if key == "s3_dy3_dz2":
        return _location(
            key,
            [0.35, 0.55, 0.45],
            [[0.20, -0.10], [0.05, 0.15], [-0.12, 0.08]],
            [0.12, -0.08, 0.05],
            [[0.10, 0.04], [0.02, 0.06], [-0.03, 0.01]],
        )
    if key == "loc_dy1_dz1":
        return _location(key, [0.35], [[0.10]], [0.12], [[0.10]], from_paper=False)
    if key == "quad":
        g0 = GroupParams(intercept=np.array([0.35]), quad=np.array([[0.40]]), center=np.array([0.5]), cov=np.array([[0.05 ** 2]]))
        g1 = GroupParams(intercept=np.array([0.45]), quad=np.array([[0.60]]), center=np.array([0.4]), cov=np.array([[0.07 ** 2]]))
        return GaussianCondModel("quadratic", 1, 1, (g0, g1), key, False)
    if key == "scale":
        g0 = GroupParams(intercept=np.array([0.45]), scale=np.array([1.0]), cov=np.array([[0.05 ** 2]]))
        g1 = GroupParams(intercept=np.array([0.55]), scale=np.array([2.0]), cov=np.array([[0.04 ** 2]]))
        return GaussianCondModel("scale", 1, 1, (g0, g1), key, False)
    raise ConfigurationError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")


SCENARIOS = ("s1_dy2_dz1", "s2_dy2_dz2", "s3_dy3_dz2", "loc_dy1_dz1", "quad", "scale")
SCENARIO_ALIASES = {"s1": "s1_dy2_dz1", "s2": "s2_dy2_dz2", "s3": "s3_dy3_dz2", "loc": "loc_dy1_dz1"}


class SimulatedData(NamedTuple):
    control: GroupSample
    treated: GroupSample
    clamp_fraction: float


def generate(model: GaussianCondModel, n: int, rng: np.random.Generator) -> SimulatedData:
    """Independent control and treated samples of size ``n``; outcomes clamped to ``[0, 1]``."""
    if n < 1:
        raise ArgumentError("n must be positive")
    groups = []
    clamped = 0
    for w in (0, 1):
        z = rng.random((n, model.d_z))
        mu = model.mean(w, z)
        chol = np.linalg.cholesky(np.asarray(model.groups[w].cov, dtype=float))
        noise = rng.standard_normal((n, model.d_y)) @ chol.T
        y = mu + noise * np.sqrt(model.cov_factor(w, z))[:, None]
        outside = (y < 0.0) | (y > 1.0)
        clamped += int(outside.sum())
        groups.append(GroupSample(np.clip(y, 0.0, 1.0), z))
    return SimulatedData(groups[0], groups[1], clamped / (2.0 * n * model.d_y))


class OracleValue(NamedTuple):
    value: float
    std_error: float
    M: int


def conditional_w2sq(model: GaussianCondModel, z: np.ndarray) -> np.ndarray:
    """Gaussian transport value between the two conditionals at each row of ``z``."""
    z = np.atleast_2d(z)
    m0, m1 = model.mean(0, z), model.mean(1, z)
    S0 = np.asarray(model.groups[0].cov, dtype=float)
    S1 = np.asarray(model.groups[1].cov, dtype=float)
    if model.kind != "scale":
        return np.sum((m0 - m1) ** 2, axis=1) + gelbrich_w2sq(np.zeros(model.d_y), S0, np.zeros(model.d_y), S1)
    c0 = model.cov_factor(0, z)[:, None, None]
    c1 = model.cov_factor(1, z)[:, None, None]
    return gelbrich_w2sq(m0, c0 * S0, m1, c1 * S1)


def true_cw2(model: GaussianCondModel, M: int = 100_000, seed: int = 0, chunk: int = 200_000) -> OracleValue:
    """Population COT value by Monte Carlo quadrature over uniform ``z``."""
    if M < 1000:
        raise ArgumentError("oracle quadrature needs M >= 1000")
    rng = substream(seed, DATA, 7)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < M:
        k = min(chunk, M - done)
        vals = conditional_w2sq(model, rng.random((k, model.d_z)))
        total += float(vals.sum())
        total_sq += float(np.sum(vals ** 2))
        done += k
    mean = total / M
    var = max(total_sq / M - mean ** 2, 0.0) * M / (M - 1)
    if var < 1e-28 * max(mean ** 2, 1e-300):
        var = 0.0
    return OracleValue(mean, math.sqrt(var / M), M)


# -- experiments ----------------------------------------------------------------

@dataclass(eq=False)
class ExperimentReport:
    """Per-replicate rows plus aggregates recomputed from them."""

    scenario: str
    mode: str
    rows: List[Dict[str, Any]]
    true_value: float
    true_value_se: float
    config: Dict[str, Any] = field(default_factory=dict)

    def errors_by_n(self) -> Dict[int, np.ndarray]:
        out: Dict[int, List[float]] = {}
        for row in self.rows:
            out.setdefault(int(row["n"]), []).append(float(row["error"]))
        return {n: np.array(v) for n, v in sorted(out.items())}

    def mean_errors(self) -> Dict[int, Dict[str, float]]:
        agg = {}
        for n, errs in self.errors_by_n().items():
            se = float(np.std(errs, ddof=1) / math.sqrt(errs.size)) if errs.size > 1 else float("nan")
            agg[n] = {"mean_error": float(np.mean(errs)), "se": se, "reps": int(errs.size)}
        return agg

    def slope(self) -> Optional[float]:
        """Least-squares slope of log mean error against log n; ``None`` with fewer than two sizes."""
        agg = self.mean_errors()
        if len(agg) < 2:
            return None
        ns = np.array(list(agg), dtype=float)
        errs = np.array([a["mean_error"] for a in agg.values()])
        if np.any(errs <= 0):
            return None
        return float(np.polyfit(np.log(ns), np.log(errs), 1)[0])

    def coverage(self) -> Optional[float]:
        flags = [row["covered"] for row in self.rows if row["covered"] is not None]
        if not flags:
            return None
        return sum(bool(f) for f in flags) / len(flags)

    def aggregates(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario,
            "mode": self.mode,
            "true_value": self.true_value,
            "true_value_se": self.true_value_se,
            "by_n": {str(n): v for n, v in self.mean_errors().items()},
            "slope": self.slope(),
            "coverage": self.coverage(),
            "replicates": len(self.rows),
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: _csv_cell(row[k]) for k in REPORT_COLUMNS})

    def write_plot_data(self, path) -> None:
        """Tidy long-format table of per-size aggregates."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["scenario", "n", "metric", "value"])
            for n, agg in self.mean_errors().items():
                for metric in ("mean_error", "se", "reps"):
                    writer.writerow([self.scenario, n, metric, _csv_cell(agg[metric])])
            if self.mode == "coverage":
                for n in sorted({int(r["n"]) for r in self.rows}):
                    rows = [r for r in self.rows if int(r["n"]) == n]
                    writer.writerow([self.scenario, n, "coverage", _csv_cell(sum(bool(r["covered"]) for r in rows) / len(rows))])

    def to_json(self) -> Dict[str, Any]:
        return {"aggregates": self.aggregates(), "config": self.config}


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _replicate_seed(seed: int, n_index: int, rep: int) -> int:
    return derive_seed(seed, REPLICATE, n_index, rep)


def run_rate_experiment(
    model: GaussianCondModel,
    n_list: Sequence[int],
    reps: int,
    cot_config: CotConfig = CotConfig(),
    seed: int = 0,
    oracle_M: int = 100_000,
    threads: int = 1,
) -> ExperimentReport:
    """Estimation error of the COT estimate across sample sizes."""
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ArgumentError("n_list must be strictly increasing")
    truth = true_cw2(model, oracle_M, seed)
    jobs = [(i, n, rep) for i, n in enumerate(n_list) for rep in range(reps)]

    def run(job):
        i, n, rep = job
        s = _replicate_seed(seed, i, rep)
        data = generate(model, n, substream(s, DATA))
        est = estimate_cot(data.control, data.treated, cot_config.with_seed(s))
        return {
            "scenario": model.name,
            "n": n,
            "rep": rep,
            "estimate": est.value,
            "true_value": truth.value,
            "error": abs(est.value - truth.value),
            "ci_lower": None,
            "ci_upper": None,
            "covered": None,
            "seed": s,
        }

    rows = map_ordered(run, jobs, threads)
    config = {
        "scenario": model.describe(),
        "mode": "rates",
        "n_list": n_list,
        "reps": reps,
        "seed": seed,
        "oracle_M": oracle_M,
        "cot": cot_config.to_dict(),
    }
    return ExperimentReport(model.name, "rates", rows, truth.value, truth.std_error, config)


def run_coverage_experiment(
    model: GaussianCondModel,
    n: int,
    reps: int,
    cot_config: CotConfig = CotConfig(),
    boot_config: BootstrapConfig = BootstrapConfig(),
    seed: int = 0,
    oracle_M: int = 100_000,
    sd_override: Optional[float] = None,
    threads: int = 1,
) -> ExperimentReport:
    """Coverage of bootstrap normal intervals for the population COT value.

    ``sd_override`` skips the bootstrap and builds every interval from the
    given standard deviation (``inf`` gives the whole line).
    """
    if reps < 10:
        raise ArgumentError("coverage experiments need at least 10 replicates")
    truth = true_cw2(model, oracle_M, seed)

    def run(rep: int):
        s = _replicate_seed(seed, 0, rep)
        data = generate(model, n, substream(s, DATA))
        cfg = cot_config.with_seed(s)
        if sd_override is None:
            boot = dataclasses.replace(boot_config, seed=derive_seed(s, BOOTSTRAP))
            ci = bootstrap_ci(data.control, data.treated, cfg, boot)
        else:
            point = estimate_cot(data.control, data.treated, cfg).value
            ci = interval_from_sd(point, sd_override, boot_config.level, 0)
        return {
            "scenario": model.name,
            "n": n,
            "rep": rep,
            "estimate": ci.point,
            "true_value": truth.value,
            "error": abs(ci.point - truth.value),
            "ci_lower": ci.lower,
            "ci_upper": ci.upper,
            "covered": bool(ci.lower <= truth.value <= ci.upper),
            "seed": s,
            "sd_hat": ci.sd_hat,
        }

    rows = map_ordered(run, range(reps), threads)
    config = {
        "scenario": model.describe(),
        "mode": "coverage",
        "n": n,
        "reps": reps,
        "seed": seed,
        "oracle_M": oracle_M,
        "sd_override": sd_override,
        "cot": cot_config.to_dict(),
        "bootstrap": dataclasses.asdict(boot_config),
    }
    return ExperimentReport(model.name, "coverage", rows, truth.value, truth.std_error, config)
