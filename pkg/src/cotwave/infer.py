"""Two-sample bootstrap confidence intervals for the COT estimate."""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Optional

import numpy as np

from ._streams import BOOTSTRAP, derive_seed, map_ordered, substream
from .cot import CotConfig, as_group, estimate_cot
from .errors import ArgumentError, ConfigurationError

METHODS = ("normal", "percentile")

_STD_NORMAL = NormalDist()


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ArgumentError(f"quantile level must lie in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    # evaluate in the lower tail so that q(p) = -q(1 - p) holds exactly
    if p > 0.5:
        return -_STD_NORMAL.inv_cdf(1.0 - p)
    return _STD_NORMAL.inv_cdf(p)


@dataclass(frozen=True)
class BootstrapConfig:
    B: int = 100
    level: float = 0.95
    seed: int = 0
    method: str = "normal"
    threads: int = 1

    def __post_init__(self):
        if not isinstance(self.B, (int, np.integer)) or self.B < 2:
            raise ConfigurationError(f"B must be an integer >= 2, got {self.B!r}")
        if not 0.0 < float(self.level) < 1.0:
            raise ConfigurationError(f"level must lie in (0, 1), got {self.level}")
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")


@dataclass(frozen=True, eq=False)
class ConfidenceInterval:
    point: float
    lower: float
    upper: float
    sd_hat: float
    B_used: int
    level: float = 0.95
    method: str = "normal"
    replicates: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {
            "point": self.point,
            "lower": self.lower,
            "upper": self.upper,
            "sd_hat": self.sd_hat,
            "B_used": self.B_used,
            "level": self.level,
            "method": self.method,
        }


def interval_from_sd(point: float, sd: float, level: float = 0.95, B_used: int = 0) -> ConfidenceInterval:
    """Normal interval ``point +/- z_{(1+level)/2} sd``; ``sd = inf`` gives the whole line."""
    if sd < 0 or math.isnan(sd):
        raise ArgumentError(f"sd must be nonnegative, got {sd}")
    if math.isinf(sd):
        return ConfidenceInterval(point, -math.inf, math.inf, sd, B_used, level)
    half = normal_quantile((1.0 + level) / 2.0) * sd
    return ConfidenceInterval(point, point - half, point + half, sd, B_used, level)


def replicate_sd(values) -> float:
    """Sample standard deviation (ddof 1), accumulated in sorted order."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size < 2:
        raise ArgumentError("need at least two replicates")
    mean = math.fsum(v) / v.size
    return math.sqrt(math.fsum((v - mean) ** 2) / (v.size - 1))


def bootstrap_replicates(control, treated, cot_config: CotConfig, boot_config: BootstrapConfig) -> np.ndarray:
    """COT estimates on ``B`` group-wise resamples; replicate ``b`` depends only on ``(seed, b)``."""
    control = as_group(control)
    treated = as_group(treated)

    def run(b: int) -> float:
        rng = substream(boot_config.seed, BOOTSTRAP, b)
        c = control.take(rng.integers(0, control.n, control.n))
        t = treated.take(rng.integers(0, treated.n, treated.n))
        cfg = cot_config.with_seed(derive_seed(boot_config.seed, BOOTSTRAP, b, 1))
        return estimate_cot(c, t, cfg).value

    return np.array(map_ordered(run, range(boot_config.B), boot_config.threads))


def bootstrap_ci(
    control,
    treated,
    cot_config: CotConfig = CotConfig(),
    boot_config: BootstrapConfig = BootstrapConfig(),
) -> ConfidenceInterval:
    """Point estimate on the original data with a bootstrap interval.

    Each group is resampled with replacement at its own size and the whole
    pipeline (density fits and Monte Carlo transport) is rerun with a fresh
    seed.  ``method="normal"`` gives ``point +/- z sd_hat``;
    ``method="percentile"`` uses the empirical replicate quantiles.
    """
    point = estimate_cot(control, treated, cot_config).value
    reps = bootstrap_replicates(control, treated, cot_config, boot_config)
    sd = replicate_sd(reps)
    if boot_config.method == "normal":
        ci = interval_from_sd(point, sd, boot_config.level, boot_config.B)
        lower, upper = ci.lower, ci.upper
    else:
        alpha = 1.0 - boot_config.level
        lower, upper = (float(q) for q in np.quantile(reps, [alpha / 2.0, 1.0 - alpha / 2.0]))
    return ConfidenceInterval(point, lower, upper, sd, boot_config.B, boot_config.level, boot_config.method, reps)
