import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_simplex, simplex_points
from rqe.errors import ConvergenceError, InvalidInputError
from rqe.risk import OracleConfig, RiskSpec, dual_risk, entropic_risk, inner_max_oracle, tv_risk_value

SPECS = [RiskSpec.kl(0.7), RiskSpec.kl(5.0), RiskSpec.rkl(0.5), RiskSpec.rkl(3.0), RiskSpec.tv(0.0),
         RiskSpec.tv(0.4)]
payoffs = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3).map(np.array)


def test_spec_validation():
    with pytest.raises(InvalidInputError):
        RiskSpec.kl(0)
    with pytest.raises(InvalidInputError):
        RiskSpec.rkl(-1)
    with pytest.raises(InvalidInputError):
        RiskSpec.tv(-0.1)
    with pytest.raises(InvalidInputError):
        RiskSpec("cvar", 1)
    assert RiskSpec("Kullback-Leibler", 2).kind == "kl"
    assert RiskSpec.kl(4).weight == 0.25
    assert RiskSpec.tv(0.3).weight == 0.3
    assert RiskSpec.tv(0.3).lipschitz == 0.3


@pytest.mark.parametrize("spec", SPECS, ids=str)
def test_zero_payoff_has_zero_risk(spec, rng):
    for _ in range(10):
        pi = random_simplex(rng, 4, floor=1e-3)
        assert dual_risk(np.zeros(4), pi, spec).value == pytest.approx(0, abs=1e-12)


@pytest.mark.parametrize("spec", SPECS, ids=str)
@given(X=payoffs, pi=simplex_points(3), m=st.floats(-5, 5))
def test_translation_invariance(spec, X, pi, m):
    a = dual_risk(X + m, pi, spec).value
    b = dual_risk(X, pi, spec).value
    assert abs(a - (b - m)) <= 1e-8 * max(1, abs(b))


@pytest.mark.parametrize("spec", SPECS, ids=str)
@given(X=payoffs, pi=simplex_points(3), bump=st.lists(st.floats(0, 3), min_size=3, max_size=3))
def test_monotone_in_payoff(spec, X, pi, bump):
    Y = X + np.asarray(bump)
    assert dual_risk(Y, pi, spec).value <= dual_risk(X, pi, spec).value + 1e-8
    # a uniform increase strictly lowers the risk
    assert dual_risk(X + 0.5, pi, spec).value < dual_risk(X, pi, spec).value


@pytest.mark.parametrize("spec", SPECS, ids=str)
@given(X=payoffs, Y=payoffs, pi=simplex_points(3), lam=st.floats(0, 1))
def test_convex_in_payoff(spec, X, Y, pi, lam):
    mid = dual_risk(lam * X + (1 - lam) * Y, pi, spec).value
    ends = lam * dual_risk(X, pi, spec).value + (1 - lam) * dual_risk(Y, pi, spec).value
    assert mid <= ends + 1e-8


def test_entropic_examples():
    assert entropic_risk(np.zeros(3), [0.2, 0.3, 0.5], 2.0) == 0
    v = entropic_risk([0.0, 1.0], [0.5, 0.5], 10.0)
    assert v == pytest.approx(0.1 * math.log(0.5 + 0.5 * math.exp(-10)), abs=1e-15)
    assert v == pytest.approx(-0.06931, abs=5e-6)
    assert dual_risk(np.array([0.0, 1.0]), np.array([0.5, 0.5]), RiskSpec.kl(10)).value == pytest.approx(v, abs=1e-12)


def test_entropic_risk_neutral_limit(rng):
    for _ in range(200):
        d = rng.integers(2, 8)
        X, pi = rng.uniform(-10, 10, d), random_simplex(rng, d)
        assert abs(entropic_risk(X, pi, 1e-6) + pi @ X) <= 1e-4


def test_entropic_no_overflow():
    assert math.isfinite(entropic_risk([-1e4, 1e4], [0.5, 0.5], 20.0))


def test_rkl_and_tv_closed_forms_match_oracle(rng):
    for spec in (RiskSpec.rkl(0.8), RiskSpec.rkl(4.0), RiskSpec.tv(0.25), RiskSpec.tv(2.0)):
        for _ in range(10):
            d = rng.integers(2, 6)
            X, pi = rng.uniform(-3, 3, d), random_simplex(rng, d, floor=1e-2)
            exact = dual_risk(X, pi, spec)
            orc = dual_risk(X, pi, spec, method="oracle")
            assert not orc.exact and exact.exact
            assert abs(exact.value - orc.value) <= 1e-6


def test_tv_value_formula():
    y = np.array([3.0, 1.0, -2.0])
    pi = np.array([0.2, 0.5, 0.3])
    # lambda = 1 moves mass from every outcome more than 2 below the max
    assert tv_risk_value(y, pi, 1.0) == pytest.approx(0.2 * 3 + 0.5 * 1 + 0.3 * 1)


def test_oracle_linear_objective_hits_best_vertex(rng):
    c = rng.normal(size=5)
    ev = inner_max_oracle(lambda p: float(c @ p), lambda p: c, (5,))
    assert ev.value == pytest.approx(c.max(), abs=1e-7)
    assert np.argmax(ev.maximizer.parts[0]) == np.argmax(c)
    assert ev.gap <= 1e-7


def test_oracle_kl_penalized_matches_entropic(rng):
    for _ in range(20):
        d = rng.integers(2, 7)
        X, pi, tau = rng.uniform(-5, 5, d), random_simplex(rng, d, floor=1e-3), rng.uniform(0.1, 10)
        ev = dual_risk(X, pi, RiskSpec.kl(tau), method="oracle")
        assert abs(ev.value - entropic_risk(X, pi, tau)) <= 1e-6


def test_oracle_tv_matches_grid_search(rng):
    lam = 0.35
    spec = RiskSpec.tv(lam)
    step = 1e-3
    k = np.arange(0, 1001)
    a, b = np.meshgrid(k, k, indexing="ij")
    mask = a + b <= 1000
    P = np.stack([a[mask], b[mask], 1000 - a[mask] - b[mask]], axis=1) * step
    for _ in range(3):
        y, pi = rng.uniform(-2, 2, 3), random_simplex(rng, 3)
        grid = (P @ y - lam * np.abs(P - pi).sum(axis=1)).max()
        ev = dual_risk(-y, pi, spec, method="oracle")
        assert abs(ev.value - grid) <= 2e-3
        # the oracle is never worse than the grid beyond its certified gap
        assert ev.value >= grid - ev.gap - 1e-12


def test_oracle_product_of_simplices(rng):
    c1, c2 = rng.normal(size=3), rng.normal(size=4)
    ev = inner_max_oracle(lambda p: float(c1 @ p[:3] + c2 @ p[3:]), lambda p: np.concatenate([c1, c2]), (3, 4))
    assert ev.value == pytest.approx(c1.max() + c2.max(), abs=1e-7)
    assert ev.maximizer.sizes == (3, 4)


def test_oracle_is_deterministic(rng):
    X, pi = rng.uniform(-2, 2, 5), random_simplex(rng, 5)
    cfg = OracleConfig(init="random", seed=3)
    a = dual_risk(X, pi, RiskSpec.rkl(2.0), method="oracle", config=cfg)
    b = dual_risk(X, pi, RiskSpec.rkl(2.0), method="oracle", config=cfg)
    assert a.value == b.value
    np.testing.assert_array_equal(a.maximizer.flat, b.maximizer.flat)


def test_oracle_non_convergence_carries_best_iterate():
    c = np.array([1.0, 0.3, -0.5, 2.0])
    with pytest.raises(ConvergenceError) as info:
        inner_max_oracle(lambda p: float(c @ p) - 0.01 * float(np.abs(p - 0.25).sum()),
                         lambda p: c - 0.01 * np.sign(p - 0.25), (4,),
                         OracleConfig(tolerance=1e-15, max_iters=3))
    assert info.value.best is not None
    assert info.value.residual > 0


def test_dimension_mismatch_rejected():
    with pytest.raises(InvalidInputError):
        dual_risk(np.zeros(3), np.full(2, 0.5), RiskSpec.kl(1))
    with pytest.raises(InvalidInputError):
        dual_risk(np.array([np.inf, 0.0]), np.full(2, 0.5), RiskSpec.kl(1))
