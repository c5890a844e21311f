import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lsrs.stats import (
    binom_test_two_sided,
    clopper_pearson_lower,
    std_normal_cdf,
    std_normal_quantile,
)
from oracles import (
    bisect_quantile,
    clopper_pearson_bisect,
    erf_series_cdf,
    exact_two_sided_binom_p,
)


def test_cdf_against_series():
    for x in np.linspace(-4, 4, 33):
        assert std_normal_cdf(x) == pytest.approx(erf_series_cdf(x), abs=1e-13)


def test_quantile_known_values():
    assert std_normal_quantile(0.5) == 0.0
    assert std_normal_quantile(0.99) == pytest.approx(bisect_quantile(0.99, erf_series_cdf), abs=1e-9)
    assert std_normal_quantile(0.99) == pytest.approx(2.3263479, abs=1e-7)
    assert std_normal_quantile(0.9) == pytest.approx(1.2815516, abs=1e-7)


@pytest.mark.parametrize("p", [0.01, 0.1, 0.3, 1e-7, 0.4999])
def test_quantile_antisymmetry(p):
    assert abs(std_normal_quantile(1 - p) + std_normal_quantile(p)) <= 1e-10


def test_quantile_roundtrip_grid():
    ps = np.concatenate([np.logspace(-9, -1, 200), np.linspace(0.1, 0.9, 200),
                         1 - np.logspace(-9, -1, 200)])
    worst = max(abs(std_normal_cdf(std_normal_quantile(p)) - p) for p in ps)
    assert worst <= 1e-9


@given(st.floats(1e-9, 1 - 1e-9))
def test_quantile_roundtrip_property(p):
    assert abs(std_normal_cdf(std_normal_quantile(p)) - p) <= 1e-9


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, math.nan])
def test_quantile_domain(p):
    with pytest.raises(ValueError):
        std_normal_quantile(p)


def test_clopper_pearson_edges():
    assert clopper_pearson_lower(0, 100, 0.001) == 0.0
    assert clopper_pearson_lower(100, 100, 0.001) == pytest.approx(math.exp(math.log(0.001) / 100),
                                                                  abs=1e-10)
    assert clopper_pearson_lower(100, 100, 0.001) == pytest.approx(0.93325, abs=1e-5)


@pytest.mark.parametrize("k, n, alpha", [(992, 1000, 0.001), (50, 100, 0.05), (1, 10, 0.01),
                                         (9990, 10000, 0.001), (7, 7, 0.2)])
def test_clopper_pearson_matches_tail_oracle(k, n, alpha):
    assert clopper_pearson_lower(k, n, alpha) == pytest.approx(clopper_pearson_bisect(k, n, alpha),
                                                               abs=1e-8)


def test_clopper_pearson_monotone():
    lows = [clopper_pearson_lower(k, 200, 0.01) for k in range(201)]
    assert all(b >= a for a, b in zip(lows, lows[1:]))
    by_alpha = [clopper_pearson_lower(150, 200, a) for a in (1e-4, 1e-3, 1e-2, 0.1, 0.5)]
    assert all(b >= a for a, b in zip(by_alpha, by_alpha[1:]))


@pytest.mark.parametrize("k, n, alpha", [(-1, 10, 0.1), (11, 10, 0.1), (5, 10, 0.0),
                                         (5, 10, 1.0), (0, 0, 0.1)])
def test_clopper_pearson_domain(k, n, alpha):
    with pytest.raises(ValueError):
        clopper_pearson_lower(k, n, alpha)


@pytest.mark.parametrize("n", [1, 2, 5, 17, 50, 101, 200])
def test_binomial_test_matches_exact(n):
    for k in range(n + 1):
        assert binom_test_two_sided(k, n) == pytest.approx(exact_two_sided_binom_p(k, n), abs=1e-9)


def test_binomial_test_symmetry():
    assert binom_test_two_sided(50, 100) == 1.0
    assert binom_test_two_sided(30, 100) == pytest.approx(binom_test_two_sided(70, 100), abs=1e-15)
