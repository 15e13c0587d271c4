import math

import numpy as np
import pytest
from scipy import stats

from blocksparse.core import RandomSeed
from blocksparse.theory import (
    DegenerateThresholdError,
    EpsilonTooLargeError,
    InvalidCoveringParamsError,
    InvalidSpecError,
    MgfSpec,
    ThresholdParams,
    beta_opt,
    bound_report,
    chi_mean,
    condition_26_holds,
    covering_constant_c,
    derived_constants,
    entropy_H,
    ln_xi,
    log_mgf_quadrature,
    mgf_asymptotic,
    mgf_monte_carlo,
    mgf_quadrature,
    min_block_length,
    min_block_length_bound,
)


@pytest.fixture
def params():
    return derived_constants(0.01, 3.0, 10**6, delta=0.05)


def test_covering_constant_large_eta():
    assert covering_constant_c(3, 10) == pytest.approx(1 / (1 - 10 / 162), rel=1e-15)
    assert covering_constant_c(3, 10) == pytest.approx(1.0658, abs=1e-4)
    assert covering_constant_c(3, 10) == covering_constant_c(3, 10**6)
    # same ballpark as the sqrt(9/8) radius quoted for 3^(D-1) points
    assert abs(covering_constant_c(3, 10) - math.sqrt(9 / 8)) < 0.01


def test_covering_constant_small_eta():
    expected = 1 / ((1 - math.log(1.2)) * math.sqrt(2 * math.log(1.2) - math.log(99) / 99))
    assert covering_constant_c(1.2, 100) == pytest.approx(expected, rel=1e-14)
    assert covering_constant_c(1.2, 100) == pytest.approx(2.168, abs=1e-3)
    with pytest.raises(InvalidCoveringParamsError):
        covering_constant_c(1.01, 10)
    with pytest.raises(InvalidCoveringParamsError):
        covering_constant_c(1.0, 10)


def test_derived_constants(params):
    assert params.c == pytest.approx(1.0658, abs=1e-4)
    assert params.f == pytest.approx(0.010658, abs=1e-6)
    assert params.g == pytest.approx(0.989292, abs=1e-6)
    assert params.b == pytest.approx(1.0000068, abs=1e-7)
    tiny = derived_constants(1e-9, 3.0, 100)
    assert (tiny.b, tiny.f, tiny.g) == pytest.approx((1, 0, 1), abs=1e-8)
    assert params.b >= params.g and params.f < params.b


def test_epsilon_too_large():
    c = covering_constant_c(3, 10)
    eps_edge = 1 / math.sqrt(1 + c * c)  # c eps = sqrt(1 - eps^2)
    with pytest.raises(EpsilonTooLargeError):
        derived_constants(eps_edge * (1 + 1e-12), 3.0, 10)
    with pytest.raises(EpsilonTooLargeError):
        derived_constants(0.9, 3.0, 10)


def test_beta_opt(params):
    assert beta_opt(params) == pytest.approx(0.4946, abs=5e-4)
    assert beta_opt(params) == pytest.approx(0.494601, abs=2e-6)
    half = ThresholdParams(0.1, 0.05, 3.0, 1.0, b=0.9, f=0.0, g=0.9)
    assert beta_opt(half) == 0.5
    assert abs(params.linear_coefficient(beta_opt(params))) <= 1e-12
    with pytest.raises(DegenerateThresholdError):
        beta_opt(ThresholdParams(0.1, 0.05, 3.0, 1.0, b=1.0, f=0.5, g=0.4))


@pytest.mark.parametrize("eps", [1e-3, 1e-2])
def test_beta_opt_deviation(eps):
    p = derived_constants(eps, 3.0, 10**6)
    ce = p.c * eps
    approx = (1 - 2 * ce) / (2 - 2 * ce)
    assert beta_opt(p) == pytest.approx(approx, abs=eps**2 * 10)
    assert 0.5 - approx <= ce / (2 - 2 * ce) + 1e-15
    assert 0.5 - beta_opt(p) <= ce / (2 - 2 * ce) + eps**2 * 10


def test_entropy():
    assert entropy_H(0.5) == pytest.approx(-math.log(2), rel=1e-15)
    assert entropy_H(0.0) == 0 and entropy_H(1.0) == 0
    assert entropy_H(0.1) == pytest.approx(-0.325083, abs=1e-6)


def test_ln_xi_without_delta():
    p = derived_constants(0.01, 3.0, 10**6, delta=0.0)
    for beta in (0.1, 0.3, 0.49):
        assert ln_xi(1.0, beta, 100, p) == pytest.approx(-entropy_H(beta), rel=1e-14)
        assert ln_xi(1.0, beta, 100, p) > 0


def test_ln_xi_decreasing_in_alpha(params):
    vals = [ln_xi(a, 0.3, 50, params) for a in np.linspace(0.1, 0.99, 30)]
    assert np.all(np.diff(vals) < 0)


def test_ln_xi_regression(params):
    # at alpha = 0.99 the covering term d(1-alpha)ln(eta/eps) outweighs the
    # Chernoff gain, so ln xi grows with d and never turns negative
    vals = {d: ln_xi(0.99, 0.4, d, params) for d in (64, 128, 256)}
    assert vals[64] == pytest.approx(3.8824303327634615, rel=1e-12)
    assert vals[128] == pytest.approx(7.091848998517667, rel=1e-12)
    assert vals[256] == pytest.approx(13.510686330026076, rel=1e-12)
    assert not any(condition_26_holds(0.99, 0.4, d, params) for d in range(1, 20000, 37))
    # at alpha = 0.999 there is a crossover
    cross = next(d for d in range(1, 5000) if ln_xi(0.999, 0.4, d, params) < 0)
    assert cross == 568


def test_condition_26_matches_ln_xi(params):
    for alpha in (0.9, 0.999, 0.9999):
        for beta in (0.2, 0.4, 0.45):
            for d in (1, 10, 100, 567, 568, 1000, 5000):
                assert condition_26_holds(alpha, beta, d, params) == (ln_xi(alpha, beta, d, params) < 0)


def test_condition_26_sign_analysis(params):
    bo = beta_opt(params)
    for beta in (bo, bo + 0.001, 0.49, 0.5):
        if beta < bo:
            continue
        assert not any(condition_26_holds(0.9999, beta, d, params) for d in (1, 10, 10**3, 10**6))
    nodelta = derived_constants(0.01, 3.0, 10**6, delta=0.0)
    assert not condition_26_holds(0.95, 0.3, 100, nodelta)


def test_condition_26_monotone_in_d(params):
    for alpha in (0.99, 0.999, 0.9999):
        for beta in (0.1, 0.3, 0.45):
            flags = [condition_26_holds(alpha, beta, d, params) for d in range(1, 4000, 7)]
            first = flags.index(True) if True in flags else len(flags)
            assert all(flags[first:])


def test_min_block_length_regression(params):
    assert min_block_length_bound(0.45, params) == pytest.approx(1448.6637071656446, rel=1e-12)
    # 1449 blocks would need alpha > 1 - 1/1449
    assert min_block_length(0.999, 0.45, params) is None
    assert min_block_length(0.9995, 0.45, params) == 1449
    assert min_block_length(0.999, 0.4, params) == 682


def test_min_block_length_none_at_or_above_beta_opt(params):
    bo = beta_opt(params)
    for beta in (bo, bo + 1e-9, 0.495, 0.6):
        assert min_block_length(0.999999, beta, params) is None
    # approaching beta_opt from below pushes the requirement to infinity
    assert min_block_length(0.999, bo - 1e-9, params) is None
    assert min_block_length_bound(bo - 1e-9, params) > 1e9


def test_min_block_length_monotone_in_gap(params):
    bo = beta_opt(params)
    gaps = np.linspace(1e-4, bo - 1e-3, 200)
    for alpha in (0.99, 0.999, 0.99999):
        ds = [min_block_length(alpha, bo - g, params) for g in gaps]
        as_num = [math.inf if d is None else d for d in ds]
        assert all(a >= b for a, b in zip(as_num, as_num[1:]))


def test_min_block_length_grows_as_eps_shrinks():
    out = []
    for eps in (1e-2, 1e-3):
        p = derived_constants(eps, 3.0, 10**6, delta=0.05)
        out.append(min_block_length(1 - 1e-6, beta_opt(p) - 0.05, p))
    assert out == [1292, 1741]
    assert out[1] > out[0]


def test_bound_report(params):
    rep = bound_report(0.999, 0.4, params, d=1000)
    assert rep.condition_26_holds and rep.ln_xi < 0
    assert rep.d_min == 682
    assert rep.beta_opt == beta_opt(params)
    assert bound_report(0.5, 0.4, params).ln_xi is None


# --- MGFs -------------------------------------------------------------------

def test_mgf_spec_validation():
    with pytest.raises(InvalidSpecError):
        MgfSpec(0, 0.1, 1.0)
    with pytest.raises(InvalidSpecError):
        MgfSpec(2, math.nan, 1.0)
    with pytest.raises(InvalidSpecError):
        MgfSpec(2, 0.1, -1.0)
    with pytest.raises(InvalidSpecError):
        MgfSpec(2, 0.1, 1.0, sign=0)


@pytest.mark.parametrize("d", [1, 2, 7, 128, 5000])
def test_mgf_zero_delta(d):
    spec = MgfSpec(d, 0.0, 0.7)
    assert mgf_quadrature(spec) == 1.0
    assert mgf_asymptotic(spec) == 1.0
    assert mgf_monte_carlo(spec, 10, RandomSeed(0)) == 1.0


@pytest.mark.parametrize("d", [1, 3, 10, 200])
def test_quadrature_normalisation(d):
    # a vanishing rate integrates the chi density itself
    assert mgf_quadrature(MgfSpec(d, 1e-14, 1.0)) == pytest.approx(1.0, rel=1e-10)


def half_normal_mgf(t):
    return 2 * math.exp(t * t / 2) * stats.norm.cdf(t)


@pytest.mark.parametrize("delta,scale", [(0.05, 1.0), (0.3, 0.7), (1.0, 2.0), (0.01, 0.5)])
@pytest.mark.parametrize("sign", [1, -1])
def test_quadrature_d1_closed_form(delta, scale, sign):
    spec = MgfSpec(1, delta, scale, sign)
    assert mgf_quadrature(spec) == pytest.approx(half_normal_mgf(spec.rate), rel=1e-10)


@pytest.mark.parametrize("sign", [1, -1])
def test_quadrature_vs_monte_carlo_d4(sign):
    mu = math.sqrt(7) * math.sqrt(2)
    spec = MgfSpec(4, 0.1 / mu, 1.0, sign)  # mu * scale = 0.1
    mc = mgf_monte_carlo(spec, 10**6, RandomSeed(10))
    assert mc == pytest.approx(mgf_quadrature(spec), rel=0.01)


@pytest.mark.parametrize("d", [2, 5, 30])
@pytest.mark.parametrize("delta,scale", [(0.02, 1.0), (0.1, 0.5)])
@pytest.mark.parametrize("sign", [1, -1])
def test_monte_carlo_within_three_standard_errors(d, delta, scale, sign):
    spec = MgfSpec(d, delta, scale, sign)
    mean, se = mgf_monte_carlo(spec, 2 * 10**5, RandomSeed(d), return_stderr=True)
    assert abs(mean - mgf_quadrature(spec)) <= 3 * se


def test_monte_carlo_deterministic():
    spec = MgfSpec(6, 0.1, 0.9, -1)
    assert mgf_monte_carlo(spec, 1000, RandomSeed(3)) == mgf_monte_carlo(spec, 1000, RandomSeed(3))


def test_asymptotic_forms():
    spec = MgfSpec(64, 0.05, 0.98, -1)
    t = 0.05 * 0.98
    assert mgf_asymptotic(spec) == pytest.approx(math.exp(64 * (t * t - t)), rel=1e-15)
    assert mgf_asymptotic(MgfSpec(64, 0.05, 0.98, 1)) == pytest.approx(math.exp(64 * (t * t + t)), rel=1e-15)


@pytest.mark.parametrize("d", [1, 4, 16, 128])
@pytest.mark.parametrize("scale", [0.3, 1.0])
def test_jensen_bounds(d, scale):
    delta = 0.05
    plus = MgfSpec(d, delta, scale, 1)
    minus = MgfSpec(d, delta, scale, -1)
    mean_norm = scale * chi_mean(d)
    assert log_mgf_quadrature(plus) >= plus.mu * mean_norm - 1e-12
    assert log_mgf_quadrature(minus) >= -minus.mu * mean_norm - 1e-12
    assert mgf_quadrature(minus) <= 1.0


def test_chi_mean():
    assert chi_mean(1) == pytest.approx(math.sqrt(2 / math.pi))
    assert chi_mean(3) == pytest.approx(2 * math.sqrt(2 / math.pi))
    assert chi_mean(10**4) == pytest.approx(math.sqrt(10**4 - 0.5), rel=1e-6)


def test_mgf_monotone():
    for d in (1, 8, 64):
        deltas = np.linspace(0.01, 0.2, 15)
        plus = [log_mgf_quadrature(MgfSpec(d, dl, 0.8, 1)) for dl in deltas]
        minus = [log_mgf_quadrature(MgfSpec(d, dl, 0.8, -1)) for dl in deltas]
        assert np.all(np.diff(plus) > 0) and np.all(np.diff(minus) < 0)
        scales = np.linspace(0.1, 2.0, 15)
        plus = [log_mgf_quadrature(MgfSpec(d, 0.05, s, 1)) for s in scales]
        minus = [log_mgf_quadrature(MgfSpec(d, 0.05, s, -1)) for s in scales]
        assert np.all(np.diff(plus) > 0) and np.all(np.diff(minus) < 0)


def test_quadrature_large_d_finite():
    v = log_mgf_quadrature(MgfSpec(10**4, 0.05, 1.0, 1))
    assert math.isfinite(v) and v > 0


@pytest.mark.parametrize("n,k,d", [(4, 1, 2), (6, 2, 3), (5, 2, 1)])
def test_chernoff_product_bound(n, k, d):
    rng = np.random.default_rng(n * 100 + k * 10 + d)
    eps, delta = 0.2, 0.3
    p = derived_constants(eps, 3.0, 10**6, delta)
    samples = 10**5
    B = np.linalg.norm(rng.standard_normal((samples, k, d)) * p.b, axis=2).sum(axis=1)
    G = np.linalg.norm(rng.standard_normal((samples, n - k, d)) * p.g, axis=2)
    F = np.linalg.norm(rng.standard_normal((samples, n - k, d)) * p.f, axis=2)
    prob = np.mean(B >= (G - F).sum(axis=1))
    bound = (
        mgf_quadrature(MgfSpec(d, delta, p.b, 1)) ** k
        * mgf_quadrature(MgfSpec(d, delta, p.g, -1)) ** (n - k)
        * mgf_quadrature(MgfSpec(d, delta, p.f, 1)) ** (n - k)
    )
    assert prob <= bound
    # the bound stays non-vacuous at these sizes, so the check has teeth
    assert bound < 2.0
