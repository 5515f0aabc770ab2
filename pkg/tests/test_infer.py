import math

import numpy as np
import pytest

import cotwave.infer as infer
from cotwave.cot import CotConfig
from cotwave.errors import ArgumentError, ConfigurationError
from cotwave.infer import (
    BootstrapConfig,
    bootstrap_ci,
    bootstrap_replicates,
    interval_from_sd,
    normal_quantile,
    replicate_sd,
)
from cotwave.ot import CostSpec
from cotwave.simbench import builtin_scenario, generate


def _phi(x):
    return 0.5 * math.erfc(-x / math.sqrt(2))


def test_quantile_center_and_975():
    assert normal_quantile(0.5) == 0.0
    assert normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)


@pytest.mark.parametrize("p", [1e-10, 0.001, 0.025, 0.3, 0.6, 0.9, 0.999])
def test_quantile_inverts_erf_cdf(p):
    q = normal_quantile(p)
    # one Newton step against the erf-based CDF should not move q
    step = (_phi(q) - p) / (math.exp(-q * q / 2) / math.sqrt(2 * math.pi))
    assert abs(step) < 1e-8


@pytest.mark.parametrize("p", [0.01, 0.2, 0.4999, 0.025])
def test_quantile_symmetry(p):
    assert abs(normal_quantile(p) + normal_quantile(1 - p)) < 1e-12


@pytest.mark.parametrize("p", [0.0, 1.0, -0.2, 1.5, float("nan")])
def test_quantile_domain(p):
    with pytest.raises(ArgumentError):
        normal_quantile(p)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        BootstrapConfig(B=1)
    with pytest.raises(ConfigurationError):
        BootstrapConfig(level=1.5)
    with pytest.raises(ConfigurationError):
        BootstrapConfig(method="bca")


def test_interval_half_width():
    for level in (0.8, 0.9, 0.95, 0.99):
        ci = interval_from_sd(0.3, 0.02, level)
        assert abs((ci.upper - ci.lower) / 2 - normal_quantile((1 + level) / 2) * 0.02) < 1e-12
        assert ci.lower <= ci.point <= ci.upper
    whole = interval_from_sd(0.3, math.inf)
    assert whole.lower == -math.inf and whole.upper == math.inf


def test_replicate_sd_order_invariant(rng):
    v = rng.random(101) * 1e-3 + 5.0
    ref = replicate_sd(v)
    for _ in range(5):
        assert replicate_sd(rng.permutation(v)) == ref
    assert ref == pytest.approx(np.std(v, ddof=1), rel=1e-9)


def _small_data(seed=0, n=150):
    return generate(builtin_scenario("s1"), n, np.random.default_rng(seed))


SMALL = CotConfig(n_z=15, n_y=15)


def test_degenerate_replicates_give_point_interval():
    data = _small_data()
    zero = CostSpec("custom", lambda a, b: np.zeros((len(a), len(b))))
    ci = bootstrap_ci(data.control, data.treated, CotConfig(n_z=5, n_y=5, cost=zero), BootstrapConfig(B=4))
    assert ci.sd_hat == 0.0
    assert ci.lower == ci.point == ci.upper == 0.0


def test_replicates_reproducible_per_index():
    data = _small_data(1)
    a = bootstrap_replicates(data.control, data.treated, SMALL, BootstrapConfig(B=3, seed=7))
    b = bootstrap_replicates(data.control, data.treated, SMALL, BootstrapConfig(B=5, seed=7))
    c = bootstrap_replicates(data.control, data.treated, SMALL, BootstrapConfig(B=5, seed=7, threads=2))
    assert np.array_equal(a, b[:3])
    assert np.array_equal(b, c)


def test_resampling_preserves_group_sizes(monkeypatch):
    data = generate(builtin_scenario("s1"), 90, np.random.default_rng(2))
    treated = data.treated.take(np.arange(70))
    seen = []
    real = infer.estimate_cot

    def spy(c, t, cfg):
        seen.append((len(c.y), len(t.y)))
        return real(c, t, cfg)

    monkeypatch.setattr(infer, "estimate_cot", spy)
    bootstrap_ci(data.control, treated, SMALL, BootstrapConfig(B=3))
    assert seen == [(90, 70)] * 4


def test_normal_interval_brackets_point():
    data = _small_data(3)
    ci = bootstrap_ci(data.control, data.treated, SMALL, BootstrapConfig(B=6, seed=1))
    assert ci.lower <= ci.point <= ci.upper
    assert ci.B_used == 6 and ci.replicates.shape == (6,)
    assert ci.sd_hat == replicate_sd(ci.replicates)
    assert abs((ci.upper - ci.lower) / 2 - 1.959963984540054 * ci.sd_hat) < 1e-12


def test_percentile_interval():
    data = _small_data(4)
    ci = bootstrap_ci(data.control, data.treated, SMALL, BootstrapConfig(B=8, method="percentile"))
    assert ci.replicates.min() <= ci.lower <= ci.upper <= ci.replicates.max()


@pytest.mark.slow
def test_interval_width_shrinks_with_n():
    model = builtin_scenario("s1")
    cfg = CotConfig(n_z=120, n_y=120)
    widths = {}
    for n in (1000, 4000):
        w = []
        for rep in range(30):
            data = generate(model, n, np.random.default_rng(1000 * n + rep))
            ci = bootstrap_ci(data.control, data.treated, cfg.with_seed(rep), BootstrapConfig(B=30, seed=rep))
            w.append(ci.upper - ci.lower)
        widths[n] = np.median(w)
    assert widths[4000] < widths[1000]
