import json

import numpy as np
import pytest

from rqe.envs import (
    BenchmarkId,
    GridWorld,
    all_matrix_benchmarks,
    cliff_walk,
    grid_world,
    make_benchmark,
    matching_pennies,
    parse_benchmark,
    random_game,
    tiny_markov_game,
)
from rqe.errors import InvalidInputError
from rqe.game import MatrixGameSpec, RationalitySpec
from rqe.io import dumps, game_from_dict, game_to_dict
from rqe.markov import MarkovGameSpec, PolicyProfile, occupancy
from rqe.risk import RiskSpec

UP, DOWN, LEFT, RIGHT = range(4)


def cells(game):
    """(U,L), (U,R), (D,L), (D,R) as (row payoff, column payoff) pairs."""
    R1, R2 = game.payoffs
    return [(R1[a, b], R2[a, b]) for a in range(2) for b in range(2)]


@pytest.mark.parametrize("bench, expected", [
    ("bench:ghp4", [(200, 160), (160, 10), (370, 200), (10, 370)]),
    ("bench:sc1", [(10, 10), (0, 18), (9, 9), (10, 8)]),
    ("bench:sc12", [(7, 3), (3, 9), (3, 5), (10, 0)]),
])
def test_table_entries(bench, expected):
    assert cells(matching_pennies(bench)) == expected


def test_all_tables_are_two_by_two():
    ids = all_matrix_benchmarks()
    assert len(ids) == 13
    for b in ids:
        g = matching_pennies(b)
        assert g.action_counts == (2, 2)
        assert g.risk is None


@pytest.mark.parametrize("text", ["sc0", "sc13", "ghp3", "ghp", "maze", "bench:cliff-kl7", ""])
def test_parse_rejects(text):
    with pytest.raises(InvalidInputError):
        parse_benchmark(text)


def test_parse_accepts_spellings():
    assert parse_benchmark("bench:sc3") == BenchmarkId("sc", 3)
    assert parse_benchmark("SC-3") == BenchmarkId("sc", 3)
    assert parse_benchmark("bench:cliff_kl").family == "cliff-kl"
    assert str(parse_benchmark("ghp4")) == "bench:ghp4"
    with pytest.raises(InvalidInputError):
        matching_pennies("bench:tiny")


def local_row(world, state, actions):
    """Next-state distribution of the joint kernel at a joint state."""
    K = world.transition_matrix()
    return K[state * 16 + actions[0] * 4 + actions[1]].toarray().ravel()


def test_interior_move_probabilities():
    w = grid_world("kl")
    a, b = w.cell((2, 2)), w.cell((0, 5))
    s = w.encode(a, b)
    row = local_row(w, s, (UP, UP))
    # marginalize agent 2 out
    m1 = row.reshape(w.n_local, w.n_local).sum(axis=1)
    assert m1[w.cell((1, 2))] == pytest.approx(0.9, abs=1e-12)
    for rc in ((3, 2), (2, 1), (2, 3)):
        assert m1[w.cell(rc)] == pytest.approx(0.1 / 3, abs=1e-12)
    assert m1[w.cell((1, 2))] + 3 * m1[w.cell((3, 2))] == pytest.approx(1.0)


def test_adjacent_agents_slow_down():
    w = grid_world("kl")
    a, b = w.cell((2, 2)), w.cell((1, 3))  # diagonal neighbours
    row = local_row(w, w.encode(a, b), (UP, UP)).reshape(w.n_local, w.n_local)
    assert row.sum(axis=1)[w.cell((1, 2))] == pytest.approx(0.5, abs=1e-12)
    assert row.sum(axis=0)[w.cell((0, 3))] == pytest.approx(0.5, abs=1e-12)


def test_off_grid_moves_stay_put():
    w = grid_world("kl")
    a = w.cell((0, 0))
    row = local_row(w, w.encode(a, w.cell((3, 5))), (UP, UP)).reshape(w.n_local, w.n_local).sum(axis=1)
    # up and left both bump into the wall
    assert row[a] == pytest.approx(0.9 + 0.1 / 3, abs=1e-12)


def test_cliff_and_goal_are_one_time():
    w = GridWorld(width=4, height=4, horizon=5)
    cliff = w.cell(w.cliff[0])
    goal = w.cell(w.goals[0])
    for x in (cliff, goal):
        row = local_row(w, w.encode(x, w.cell(w.starts[1])), (LEFT, LEFT)).reshape(w.n_local, w.n_local)
        assert row.sum(axis=1)[w.done] == pytest.approx(1.0)
    r = w.local_rewards(0)
    assert r[cliff] == -2 and r[goal] == 1 and r[w.done] == 0
    # the other agent's goal is an ordinary cell for agent 1
    assert r[w.cell(w.goals[1])] == w.step_reward


@pytest.mark.parametrize("variant, overrides", [("kl", {}), ("l1", {}), ("kl", dict(width=4, height=4, horizon=20)),
                                                 ("l1", dict(width=4, height=4, horizon=20))])
def test_cliff_specs_are_valid(variant, overrides):
    g = cliff_walk(variant, **overrides)
    assert isinstance(g, MarkovGameSpec)
    K = g.kernel(0)
    np.testing.assert_allclose(np.asarray(K.sum(axis=1)).ravel(), 1.0, atol=1e-12)
    assert K.data.min() >= 0
    w = overrides.get("width", 6)
    assert g.n_states == (w * w + 1) ** 2
    assert g.horizon == overrides.get("horizon", 200 if variant == "kl" else 100)
    assert g.env_risk[0].kind == ("kl" if variant == "kl" else "tv")


def test_variant_defaults():
    kl, l1 = grid_world("kl"), grid_world("l1")
    assert (kl.cliff_reward, kl.step_reward, kl.goal_reward, kl.horizon) == (-2, 0, 1, 200)
    assert (l1.cliff_reward, l1.step_reward, l1.goal_reward, l1.horizon) == (-100, -0.1, 20, 100)
    assert kl.p_move == 0.9 and kl.p_near == 0.5
    g = cliff_walk("kl", tau=0.7, env_tau=3.0, width=3, height=3, horizon=2)
    assert g.pol_risk[0].tau == 0.7 and g.env_risk[0].tau == 3.0


def test_invalid_overrides():
    for bad in (dict(width=1), dict(horizon=0), dict(p_move=1.5), dict(cliff=((9, 9),)),
                dict(goals=((5, 1), (5, 0)))):
        with pytest.raises(InvalidInputError):
            grid_world("kl", **bad)
    with pytest.raises(InvalidInputError):
        grid_world("maze")
    with pytest.raises(TypeError):
        grid_world("kl", colour="red")


def test_episode_mass_is_conserved():
    g = cliff_walk("kl", width=4, height=4, horizon=6)
    w = grid_world("kl", width=4, height=4, horizon=6)
    occ = occupancy(g, PolicyProfile.uniform(g), w.start_state)
    np.testing.assert_allclose(occ.sum(axis=1), 1.0, atol=1e-12)
    assert occ[0, w.start_state] == 1.0


def test_random_games_are_seeded():
    a, b = random_game("matrix", (3, 4), seed=2), random_game("matrix", (3, 4), seed=2)
    for x, y in zip(a.payoffs, b.payoffs):
        np.testing.assert_array_equal(x, y)
        assert x.min() >= 0 and x.max() <= 1
    m1, m2 = random_game("markov", (4, (2, 3), 4), seed=5), random_game("markov", (4, (2, 3), 4), seed=5)
    np.testing.assert_array_equal(m1.rewards, m2.rewards)
    for K1, K2 in zip(m1.transitions, m2.transitions):
        np.testing.assert_array_equal(K1, K2)
        np.testing.assert_allclose(K1.sum(axis=1), 1.0, atol=1e-12)
    assert not np.array_equal(random_game("matrix", (3, 4), seed=3).payoffs[0], a.payoffs[0])
    with pytest.raises(InvalidInputError):
        random_game("tree", (2, 2))


def test_tiny_game_setup():
    g = tiny_markov_game()
    assert (g.n_states, g.action_counts, g.horizon) == (3, (2, 2), 3)
    assert g.env_risk[0] == RiskSpec.tv(0.5)


@pytest.mark.parametrize("bench", all_matrix_benchmarks())
def test_tables_round_trip_bit_exactly(bench):
    g = make_benchmark(bench).with_params(RiskSpec.kl(0.3), RationalitySpec("logbarrier", 0.1 + 0.2))
    back = game_from_dict(json.loads(dumps(game_to_dict(g))))
    assert isinstance(back, MatrixGameSpec)
    for x, y in zip(g.payoffs, back.payoffs):
        assert x.tobytes() == y.tobytes()
    assert back.rationality[0].epsilon == 0.1 + 0.2
    assert back.risk == g.risk


def test_markov_benchmarks_round_trip():
    g = make_benchmark("bench:cliff-l1", width=3, height=3, horizon=4)
    back = game_from_dict(json.loads(dumps(game_to_dict(g))))
    assert back.rewards.tobytes() == g.rewards.tobytes()
    assert (back.kernel(0) != g.kernel(0)).nnz == 0
    assert back.env_risk == g.env_risk
