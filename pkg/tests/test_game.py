import math

import numpy as np
import pytest

from conftest import random_simplex
from rqe.errors import InvalidInputError
from rqe.game import (
    MatrixGameSpec,
    RationalitySpec,
    action_dependent_risk_loss,
    aggregate_risk_loss,
    best_response,
    expected_utility,
    pairwise_blocks,
    regularized_loss,
    risk_loss,
    rqe_gap,
)
from rqe.risk import RiskSpec, dual_risk, entropic_risk

LB = RationalitySpec("logbarrier", 1.0)
NE = RationalitySpec("negentropy", 1.0)


def random_game(rng, A=(2, 2), risk=RiskSpec.kl(1.0), rat=LB, mode="aggregate"):
    return MatrixGameSpec(tuple(rng.uniform(-1, 1, A) for _ in A), risk, rat, mode)


def profile(rng, A, floor=1e-3):
    return [random_simplex(rng, a, floor=floor) for a in A]


def test_spec_validation():
    with pytest.raises(InvalidInputError):
        MatrixGameSpec((np.zeros((2, 2)), np.zeros((2, 3))))
    with pytest.raises(InvalidInputError):
        MatrixGameSpec((np.zeros(2), np.zeros(2)))
    with pytest.raises(InvalidInputError):
        MatrixGameSpec((np.array([[np.nan, 0], [0, 0]]), np.zeros((2, 2))))
    with pytest.raises(InvalidInputError):
        RationalitySpec("logbarrier", 0.0)
    with pytest.raises(InvalidInputError):
        MatrixGameSpec((np.zeros((2, 2)),) * 2, risk_mode="worst")
    with pytest.raises(InvalidInputError):
        MatrixGameSpec((np.zeros((2, 2)),) * 2, risk=(RiskSpec.kl(1),) * 3)


def test_expected_utility_examples(rng):
    R = rng.normal(size=(2, 3))
    g = MatrixGameSpec((R, -R))
    assert expected_utility(g, 0, [np.eye(2)[1], np.eye(3)[2]]) == R[1, 2]
    p, q = random_simplex(rng, 2), random_simplex(rng, 3)
    assert expected_utility(g, 0, [p, q]) == pytest.approx(p @ R @ q, abs=1e-14)
    S = rng.normal(size=(2, 2))
    g2 = MatrixGameSpec((S, S))
    assert expected_utility(g2, 1, [np.full(2, 0.5)] * 2) == pytest.approx(S.mean(), abs=1e-15)
    with pytest.raises(InvalidInputError):
        expected_utility(g, 2, [p, q])


def test_pairwise_blocks_exact_for_two_players_and_additive_tensors(rng):
    R = rng.normal(size=(3, 4))
    (B,) = pairwise_blocks(R, 0)
    np.testing.assert_array_equal(B, R)
    (B2,) = pairwise_blocks(R, 1)
    np.testing.assert_allclose(B2, R.T)
    # additive three-player payoff: the blocks reproduce the multilinear expectation
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 4))
    T = a[:, :, None] + b[:, None, :]
    g = MatrixGameSpec((T, T, T))
    strat = profile(rng, (2, 3, 4))
    blocks = pairwise_blocks(T, 0)
    flat = sum(strat[0] @ Bj @ strat[j] for Bj, j in zip(blocks, (1, 2)))
    assert flat == pytest.approx(expected_utility(g, 0, strat), abs=1e-12)


def test_zero_payoff_losses_vanish(rng):
    for spec in (RiskSpec.kl(2.0), RiskSpec.rkl(1.0), RiskSpec.tv(0.3)):
        g = MatrixGameSpec((np.zeros((3, 2)), np.zeros((3, 2))), spec, LB)
        strat = profile(rng, (3, 2))
        assert risk_loss(g, 0, strat) == pytest.approx(0, abs=1e-12)
        assert risk_loss(g.with_params(risk_mode="action_dependent"), 1, strat) == pytest.approx(0, abs=1e-12)


def test_example_composition_with_identity_payoff(rng):
    R = np.eye(2)
    for tau2 in (0.5, 1.0, 5.0):
        g = MatrixGameSpec((R, -R), (RiskSpec.kl(10.0), RiskSpec.kl(tau2)), LB)
        for _ in range(20):
            p1, p2 = random_simplex(rng, 2), random_simplex(rng, 2)
            f1 = 0.1 * math.log(sum(p2[j] * math.exp(-10 * (R @ p1)[j]) for j in range(2)))
            f2 = math.log(sum(p1[j] * math.exp(tau2 * (R.T @ p2)[j]) for j in range(2))) / tau2
            assert aggregate_risk_loss(g, 0, [p1, p2]) == pytest.approx(f1, abs=1e-10)
            assert aggregate_risk_loss(g, 1, [p1, p2]) == pytest.approx(f2, abs=1e-10)
            assert aggregate_risk_loss(g, 0, [p1, p2]) == pytest.approx(entropic_risk(R.T @ p1, p2, 10.0), abs=1e-12)


def test_risk_neutral_limit(rng):
    for _ in range(30):
        A = tuple(rng.integers(2, 5, 2))
        g = random_game(rng, A, RiskSpec.kl(1e-6))
        strat = profile(rng, A)
        for i in range(2):
            assert abs(aggregate_risk_loss(g, i, strat) + expected_utility(g, i, strat)) <= 1e-4


def test_action_dependent_loss_is_linear_in_own_strategy(rng):
    for spec in (RiskSpec.kl(2.0), RiskSpec.rkl(0.5), RiskSpec.tv(0.2)):
        g = random_game(rng, (3, 2), spec, mode="action_dependent")
        strat = profile(rng, (3, 2))
        a, b = random_simplex(rng, 3), random_simplex(rng, 3)
        lam = rng.random()
        mix = action_dependent_risk_loss(g, 0, [lam * a + (1 - lam) * b, strat[1]])
        ends = lam * action_dependent_risk_loss(g, 0, [a, strat[1]]) + \
            (1 - lam) * action_dependent_risk_loss(g, 0, [b, strat[1]])
        assert mix == pytest.approx(ends, abs=1e-9)


def test_action_dependent_matches_per_row_risks(rng):
    g = random_game(rng, (3, 2), RiskSpec.kl(1.5), mode="action_dependent")
    strat = profile(rng, (3, 2))
    rows = [dual_risk(g.payoffs[0][a], strat[1], g.risk[0]).value for a in range(3)]
    assert action_dependent_risk_loss(g, 0, strat) == pytest.approx(strat[0] @ rows, abs=1e-12)


def test_single_action_player_modes_agree(rng):
    A = (1, 3)
    g = random_game(rng, A, RiskSpec.kl(3.0))
    strat = [np.ones(1), random_simplex(rng, 3)]
    agg = aggregate_risk_loss(g, 0, strat)
    act = action_dependent_risk_loss(g.with_params(risk_mode="action_dependent"), 0, strat)
    assert agg == pytest.approx(act, abs=1e-12)


def test_loss_mode_mismatch_rejected(rng):
    g = random_game(rng)
    with pytest.raises(InvalidInputError):
        action_dependent_risk_loss(g, 0, profile(rng, (2, 2)))
    with pytest.raises(InvalidInputError):
        aggregate_risk_loss(g.with_params(risk_mode="action_dependent"), 0, profile(rng, (2, 2)))
    with pytest.raises(InvalidInputError):
        risk_loss(MatrixGameSpec(g.payoffs), 0, profile(rng, (2, 2)))


def test_regularized_loss_components(rng):
    g = random_game(rng, (3, 3), RiskSpec.kl(2.0), RationalitySpec("negentropy", 0.4))
    strat = profile(rng, (3, 3))
    nu = np.sum(strat[1] * np.log(strat[1]))
    assert regularized_loss(g, 1, strat) == pytest.approx(risk_loss(g, 1, strat) + 0.4 * nu, abs=1e-13)
    uniform = [np.full(3, 1 / 3), strat[1]]
    assert regularized_loss(g, 0, uniform) - risk_loss(g, 0, uniform) == pytest.approx(-0.4 * math.log(3), abs=1e-13)
    tiny = g.with_params(rationality=RationalitySpec("logbarrier", 1e-9))
    assert regularized_loss(tiny, 0, strat) == pytest.approx(risk_loss(tiny, 0, strat), abs=1e-7)
    assert regularized_loss(g.with_params(rationality=LB), 0, [np.array([1.0, 0, 0]), strat[1]]) == math.inf


@pytest.mark.parametrize("rat", [NE, LB], ids=["negentropy", "logbarrier"])
def test_best_response_to_zero_game_is_uniform(rat, rng):
    g = MatrixGameSpec((np.zeros((4, 3)), np.zeros((4, 3))), RiskSpec.kl(1.0), rat)
    pi, _ = best_response(g, 0, profile(rng, (4, 3)))
    np.testing.assert_allclose(pi, np.full(4, 0.25), atol=1e-6)


@pytest.mark.parametrize("spec", [RiskSpec.kl(2.0), RiskSpec.rkl(1.0), RiskSpec.tv(0.3)], ids=str)
@pytest.mark.parametrize("mode", ["aggregate", "action_dependent"])
def test_best_response_matches_grid(spec, mode, rng):
    g = random_game(rng, (2, 2), spec, RationalitySpec("negentropy", 0.3), mode)
    strat = profile(rng, (2, 2))
    _, value = best_response(g, 0, strat)
    grid = min(regularized_loss(g, 0, [np.array([x, 1 - x]), strat[1]]) for x in np.linspace(1e-4, 1 - 1e-4, 9999))
    assert value <= grid + 1e-9
    assert value >= grid - 1e-6


def test_aggregate_loss_convex_in_own_strategy(rng):
    for spec in (RiskSpec.kl(3.0), RiskSpec.rkl(0.7), RiskSpec.tv(0.5)):
        g = random_game(rng, (3, 3), spec)
        for _ in range(50):
            opp = random_simplex(rng, 3)
            a, b, lam = random_simplex(rng, 3), random_simplex(rng, 3), rng.random()
            mid = aggregate_risk_loss(g, 0, [lam * a + (1 - lam) * b, opp])
            ends = lam * aggregate_risk_loss(g, 0, [a, opp]) + (1 - lam) * aggregate_risk_loss(g, 0, [b, opp])
            assert mid <= ends + 1e-8


def test_gap_at_uniform_for_zero_game():
    g = MatrixGameSpec((np.zeros((2, 2)), np.zeros((2, 2))), RiskSpec.kl(1.0), NE)
    assert rqe_gap(g, [np.full(2, 0.5)] * 2).max() <= 1e-8


def test_gap_recomposes_and_is_nonnegative(rng):
    g = random_game(rng, (3, 2), RiskSpec.kl(1.0), LB)
    strat = profile(rng, (3, 2))
    gaps = rqe_gap(g, strat)
    assert gaps.min() >= -1e-8
    for i in range(2):
        again = regularized_loss(g, i, strat) - best_response(g, i, strat)[1]
        assert abs(gaps[i] - again) <= 1e-10


def test_perturbed_equilibrium_has_positive_gap():
    g = MatrixGameSpec((np.zeros((2, 2)), np.zeros((2, 2))), RiskSpec.kl(1.0), NE)
    gaps = rqe_gap(g, [np.array([0.6, 0.4]), np.array([0.5, 0.5])])
    assert gaps[0] > 1e-3
