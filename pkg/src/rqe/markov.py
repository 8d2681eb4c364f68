"""Finite-horizon risk-averse Markov games.

States and joint actions are flattened: transition row ``s * prod(A) + a``
holds the next-state distribution after joint action ``a`` (C order over
players) in state ``s``. Values are losses: V is the policy risk of the
stage payoff table Q, and Q adds the reward to a robust (environment-risk)
backup of the continuation.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInputError, UnsupportedCombinationError
from .game import MatrixGameSpec, RationalitySpec, best_response, risk_terms
from .risk import RiskSpec, dual_risk
from .simplex import check_strategy
from .solver import SolveConfig, solve_many

log = logging.getLogger(__name__)

RECURSION_MODES = ("utility", "literal")
ROW_TOL = 1e-9


def _as_kernel(K, rows, S, h):
    if sp.issparse(K):
        K = sp.csr_matrix(K, dtype=float)
        dense_sums = np.asarray(K.sum(axis=1)).ravel()
        neg = K.data.min(initial=0.0) < 0
    else:
        K = np.array(K, dtype=float)
        dense_sums = K.sum(axis=1) if K.ndim == 2 else None
        neg = K.ndim == 2 and (K < 0).any()
    if K.shape != (rows, S):
        raise InvalidInputError(f"transition kernel for step {h} has shape {K.shape}, expected {(rows, S)}")
    if neg:
        raise InvalidInputError(f"transition kernel for step {h} has negative entries")
    bad = np.flatnonzero(np.abs(dense_sums - 1.0) > ROW_TOL)
    if bad.size:
        raise InvalidInputError(f"transition row {bad[0]} at step {h} sums to {dense_sums[bad[0]]!r}")
    if not sp.issparse(K):
        K.setflags(write=False)
    return K


@dataclass(frozen=True, eq=False)
class MarkovGameSpec:
    """Finite-horizon game.

    ``rewards`` has shape (n, H, S, *A). ``transitions`` holds one kernel of
    shape (S * prod(A), S) per step, or a single kernel shared by all steps.
    """

    horizon: int
    n_states: int
    action_counts: tuple
    rewards: np.ndarray
    transitions: tuple
    env_risk: tuple
    pol_risk: tuple
    rationality: tuple
    recursion_mode: str = "utility"

    def __post_init__(self):
        H, S = int(self.horizon), int(self.n_states)
        if H < 1 or S < 1:
            raise InvalidInputError("horizon and state count must be >= 1")
        A = tuple(int(a) for a in self.action_counts)
        if not A or min(A) < 1:
            raise InvalidInputError("every player needs at least one action")
        n = len(A)
        R = np.array(self.rewards, dtype=float)
        if R.shape != (n, H, S) + A:
            raise InvalidInputError(f"rewards have shape {R.shape}, expected {(n, H, S) + A}")
        if not np.all(np.isfinite(R)):
            raise InvalidInputError("rewards must be finite")
        R.setflags(write=False)
        trans = self.transitions
        if sp.issparse(trans) or (isinstance(trans, np.ndarray) and trans.ndim == 2):
            trans = (trans,)
        trans = tuple(trans)
        if len(trans) not in (1, H):
            raise InvalidInputError(f"need 1 or {H} transition kernels, got {len(trans)}")
        rows = S * math.prod(A)
        trans = tuple(_as_kernel(K, rows, S, h) for h, K in enumerate(trans))

        def per_player(x, cls, name):
            if isinstance(x, cls):
                x = (x,) * n
            x = tuple(x)
            if len(x) != n or not all(isinstance(v, cls) for v in x):
                raise InvalidInputError(f"{name} needs one {cls.__name__} per player")
            return x

        env = per_player(self.env_risk, RiskSpec, "env_risk")
        for r in env:
            if r.kind not in ("kl", "tv"):
                raise UnsupportedCombinationError(f"environment risk {r.kind} has no exact backup")
        mode = str(self.recursion_mode).lower()
        mode = {"utilityconsistent": "utility", "paperliteral": "literal"}.get(mode.replace("_", ""), mode)
        if mode not in RECURSION_MODES:
            raise InvalidInputError(f"recursion_mode must be one of {RECURSION_MODES}")
        for name, val in (("horizon", H), ("n_states", S), ("action_counts", A), ("rewards", R),
                          ("transitions", trans), ("env_risk", env),
                          ("pol_risk", per_player(self.pol_risk, RiskSpec, "pol_risk")),
                          ("rationality", per_player(self.rationality, RationalitySpec, "rationality")),
                          ("recursion_mode", mode)):
            object.__setattr__(self, name, val)

    @property
    def n(self):
        return len(self.action_counts)

    @property
    def n_joint(self):
        return math.prod(self.action_counts)

    def kernel(self, h):
        """Transition kernel used at step h (0-based)."""
        return self.transitions[h if len(self.transitions) > 1 else 0]

    def replace(self, **changes):
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return MarkovGameSpec(**fields)

    def stage_game(self, Q, h, s):
        """Matrix game whose payoffs are the stage tables Q[:, h, s]."""
        return MatrixGameSpec(tuple(Q[i, h, s] for i in range(self.n)), self.pol_risk, self.rationality, "aggregate")


@dataclass
class PolicyProfile:
    """``probs[i][h, s]`` is player i's mixed strategy at step h in state s."""

    probs: tuple

    def __post_init__(self):
        self.probs = tuple(np.asarray(p, dtype=float) for p in self.probs)
        for i, p in enumerate(self.probs):
            if p.ndim != 3:
                raise InvalidInputError(f"policy of player {i} must have shape (H, S, A_i)")
            if np.any(p < 0) or np.any(np.abs(p.sum(axis=2) - 1.0) > 1e-9):
                raise InvalidInputError(f"policy of player {i} has invalid distributions")

    def at(self, h, s):
        return [p[h, s] for p in self.probs]

    @classmethod
    def uniform(cls, game):
        return cls(tuple(np.full((game.horizon, game.n_states, a), 1.0 / a) for a in game.action_counts))


@dataclass
class ValueTables:
    V: np.ndarray      # (n, H + 1, S), V[:, H] = 0
    Q: np.ndarray      # (n, H, S, *A)
    V_eps: np.ndarray  # (n, H, S)


def env_backup(K, W, spec):
    """inf over P~ of P~ . W + D(P~, P) for every row P of kernel K."""
    m = W.min()
    if spec.kind == "kl":
        tau = spec.tau
        inner = K @ np.exp(-tau * (W - m))
        return m - np.log(inner) / tau
    if spec.kind == "tv":
        return K @ np.minimum(W, m + 2.0 * spec.tau)
    raise UnsupportedCombinationError(f"no exact environment backup for {spec.kind}")


def env_risk_operator(R, P, W, spec):
    """R + inf over P~ of [P~ . W + D(P~, P)].

    KL has the log-sum-exp closed form. For TV, moving a unit of mass costs
    2 lambda in l1 distance, so every state worse than min W + 2 lambda
    sends its mass to the best state.
    """
    P = check_strategy(P, "transition row")
    W = np.asarray(W, dtype=float)
    if W.shape != P.shape:
        raise InvalidInputError(f"continuation shape {W.shape} does not match {P.shape}")
    return float(R + env_backup(P[None, :], W, spec)[0])


def policy_risk_operator(Q, strategies, i, pol_risk, rationality=None):
    """Policy risk of flattened stage payoffs Q (A_i x sum_{j != i} A_j).

    Adds eps nu(pi_i) when ``rationality`` is given.
    """
    Q = np.asarray(Q, dtype=float)
    strategies = [check_strategy(s, f"strategy {k}") for k, s in enumerate(strategies)]
    sizes = [len(s) for k, s in enumerate(strategies) if k != i]
    if Q.shape != (len(strategies[i]), sum(sizes)):
        raise InvalidInputError(f"stage payoff shape {Q.shape} does not match strategies")
    blocks = np.split(Q, np.cumsum(sizes)[:-1], axis=1)
    opponents = [k for k in range(len(strategies)) if k != i]
    value = sum(dual_risk(B.T @ strategies[i], strategies[j], pol_risk).value for j, B in zip(opponents, blocks))
    if rationality is not None:
        value += rationality.value(strategies[i])
    return value


def _continuation(game, V_next):
    sign = -1.0 if game.recursion_mode == "utility" else 1.0
    return sign * V_next


def _q_table(game, h, V_next):
    """Q[i, h] for all states and joint actions given V[:, h + 1]."""
    S = game.n_states
    K = game.kernel(h)
    out = np.empty((game.n, S) + game.action_counts)
    for i in range(game.n):
        backup = env_backup(K, _continuation(game, V_next[i]), game.env_risk[i])
        out[i] = game.rewards[i, h] + backup.reshape((S,) + game.action_counts)
    return out


def _stage_values(game, Q, h, strategies_by_state, V, V_eps):
    for s in range(game.n_states):
        stage = game.stage_game(Q, h, s)
        strat = strategies_by_state[s]
        for i in range(game.n):
            V[i, h, s] = risk_terms(stage, i, strat)[0]
            V_eps[i, h, s] = V[i, h, s] + game.rationality[i].value(strat[i])


@dataclass
class MarkovSolveConfig:
    solver: SolveConfig = None
    # stage-game exploitability is recomputed afterwards by markov_rqe_gap
    stage_gaps: bool = False

    def __post_init__(self):
        if self.solver is None:
            self.solver = SolveConfig(compute_gaps=False)


def backward_induction(game, config=None):
    """Solve stage games from the last step backwards.

    Returns (PolicyProfile, ValueTables). All states of one step are solved
    as a single compiled batch.
    """
    config = config or MarkovSolveConfig()
    if isinstance(config, SolveConfig):
        config = MarkovSolveConfig(config)
    H, S, n = game.horizon, game.n_states, game.n
    V = np.zeros((n, H + 1, S))
    V_eps = np.zeros((n, H, S))
    Q = np.zeros((n, H, S) + game.action_counts)
    probs = [np.zeros((H, S, a)) for a in game.action_counts]
    solver_cfg = config.solver
    if config.stage_gaps != solver_cfg.compute_gaps:
        solver_cfg = SolveConfig(**{**solver_cfg.to_dict(), "compute_gaps": config.stage_gaps})
    for h in reversed(range(H)):
        Q[:, h] = _q_table(game, h, V[:, h + 1])
        stages = [game.stage_game(Q, h, s) for s in range(S)]
        try:
            reports = solve_many(stages, solver_cfg)
        except Exception as exc:
            raise type(exc)(f"stage solve failed at step {h + 1}: {exc}") from exc
        strategies = []
        for s, rep in enumerate(reports):
            for i in range(n):
                probs[i][h, s] = rep.strategies[i]
            strategies.append(rep.strategies)
            if rep.gaps is not None and rep.max_gap > 1e-2:
                log.warning("stage game (h=%d, s=%d) gap %.3g", h + 1, s, rep.max_gap)
        _stage_values(game, Q, h, strategies, V, V_eps)
        log.info("step %d/%d solved (%d states)", h + 1, H, S)
    return PolicyProfile(tuple(probs)), ValueTables(V, Q, V_eps)


def evaluate_policy(game, policy):
    """Tables V, Q, V^eps of a fixed policy (no solving)."""
    H, S, n = game.horizon, game.n_states, game.n
    _check_policy(game, policy)
    V = np.zeros((n, H + 1, S))
    V_eps = np.zeros((n, H, S))
    Q = np.zeros((n, H, S) + game.action_counts)
    for h in reversed(range(H)):
        Q[:, h] = _q_table(game, h, V[:, h + 1])
        _stage_values(game, Q, h, [policy.at(h, s) for s in range(S)], V, V_eps)
    return ValueTables(V, Q, V_eps)


def _check_policy(game, policy):
    if len(policy.probs) != game.n:
        raise InvalidInputError("policy player count does not match the game")
    for i, (p, a) in enumerate(zip(policy.probs, game.action_counts)):
        if p.shape != (game.horizon, game.n_states, a):
            raise InvalidInputError(f"policy of player {i} has shape {p.shape}")


def markov_rqe_gap(game, policy, tables=None):
    """Per-(i, h, s) gain from deviating at that step and state only.

    A one-step deviation leaves the continuation untouched, so this is the
    stage game's exploitability with the policy's own Q table.
    """
    tables = tables or evaluate_policy(game, policy)
    gaps = np.zeros((game.n, game.horizon, game.n_states))
    for h in range(game.horizon):
        for s in range(game.n_states):
            stage = game.stage_game(tables.Q, h, s)
            strat = policy.at(h, s)
            for i in range(game.n):
                gaps[i, h, s] = tables.V_eps[i, h, s] - best_response(stage, i, strat)[1]
    return gaps


def rollout(game, policy, start, n_rollouts, seed=0):
    """Monte-Carlo episodes of the policy from ``start``.

    ``start`` is a state index or a distribution over states. Returns the
    per-player cumulative rewards (n_rollouts, n) and the visited states
    (n_rollouts, H).
    """
    rng = np.random.default_rng(seed)
    S, H, n = game.n_states, game.horizon, game.n
    if np.isscalar(start):
        states = np.full(n_rollouts, int(start))
    else:
        states = rng.choice(S, size=n_rollouts, p=check_strategy(start, "start"))
    totals = np.zeros((n_rollouts, n))
    visited = np.empty((n_rollouts, H), dtype=np.int64)
    for h in range(H):
        visited[:, h] = states
        joint = np.zeros(n_rollouts, dtype=np.int64)
        acts = []
        for i in range(n):
            cdf = policy.probs[i][h, states].cumsum(axis=1)
            a = (cdf < rng.random(n_rollouts)[:, None] * cdf[:, -1:]).sum(axis=1)
            a = np.minimum(a, game.action_counts[i] - 1)
            acts.append(a)
            joint = joint * game.action_counts[i] + a
        for i in range(n):
            totals[:, i] += game.rewards[i, h][(states,) + tuple(acts)]
        states = _sample_next(game.kernel(h), states * game.n_joint + joint, rng)
    return totals, visited


def occupancy(game, policy, start):
    """Exact state distribution at every step, shape (H, S)."""
    S = game.n_states
    d = np.zeros(S)
    if np.isscalar(start):
        d[int(start)] = 1.0
    else:
        d[:] = check_strategy(start, "start")
    out = np.empty((game.horizon, S))
    for h in range(game.horizon):
        out[h] = d
        joint = policy.probs[0][h]
        for p in policy.probs[1:]:
            joint = (joint[:, :, None] * p[h][:, None, :]).reshape(S, -1)
        weights = (d[:, None] * joint).ravel()
        K = game.kernel(h)
        d = np.asarray(K.T @ weights).ravel()
    return out


def _sample_next(K, rows, rng):
    u = rng.random(len(rows))
    if sp.issparse(K):
        sub = K[rows].toarray()
    else:
        sub = K[rows]
    cdf = sub.cumsum(axis=1)
    nxt = (cdf < u[:, None] * cdf[:, -1:]).sum(axis=1)
    return np.minimum(nxt, K.shape[1] - 1)


def risk_neutral_value(game, policy, start, n_rollouts=10_000, seed=0):
    """Mean cumulative reward per player and its standard error."""
    totals, _ = rollout(game, policy, start, n_rollouts, seed)
    return totals.mean(axis=0), totals.std(axis=0, ddof=1) / np.sqrt(n_rollouts)
