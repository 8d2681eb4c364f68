"""Model-based solving from generative-model samples."""

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq

from .errors import InvalidInputError
from .markov import MarkovSolveConfig, backward_induction, markov_rqe_gap


def _dense_row(K, r):
    if sp.issparse(K):
        return K.getrow(r).toarray().ravel()
    return np.asarray(K[r])


@dataclass
class GenerativeModel:
    """Simulator for a known game.

    Every (h, s, a) cell owns a Philox stream keyed by the master seed and
    the cell coordinates, so draws do not depend on visiting order.
    """

    game: object
    seed: int = 0

    def cell_rng(self, h, s, a, seed=None):
        key = (int(h), int(s), int(a))
        ss = np.random.SeedSequence(self.seed if seed is None else seed, spawn_key=key)
        return np.random.Generator(np.random.Philox(ss))

    def _joint_index(self, a):
        if np.isscalar(a):
            return int(a)
        return int(np.ravel_multi_index(tuple(int(x) for x in a), self.game.action_counts))

    def draw(self, s, a, h, size=None, rng=None):
        """Next state(s) after joint action ``a`` in state ``s`` at step ``h`` plus the rewards."""
        g = self.game
        ja = self._joint_index(a)
        row = _dense_row(g.kernel(h), s * g.n_joint + ja)
        rng = rng or self.cell_rng(h, s, ja)
        nxt = rng.choice(g.n_states, size=size, p=row)
        acts = np.unravel_index(ja, g.action_counts)
        return nxt, g.rewards[(slice(None), h, s) + acts].copy()


@dataclass
class EmpiricalModel:
    rewards: np.ndarray
    counts: tuple       # one (S * prod(A), S) integer array per step
    n_samples: int

    @property
    def transitions(self):
        return tuple(c / self.n_samples for c in self.counts)

    def game(self, template):
        """The empirical game: ``template`` with estimated rewards and kernels."""
        return template.replace(rewards=self.rewards, transitions=self.transitions)


def sample_model(gen, n_samples, seed=None):
    """N draws per (s, a, h) cell, kept as next-state counts.

    Counts come from one multinomial draw per cell, which has the same law
    as N independent categorical draws.
    """
    if int(n_samples) != n_samples or n_samples < 1:
        raise InvalidInputError(f"samples per cell must be a positive integer, got {n_samples}")
    N = int(n_samples)
    g = gen.game
    counts = []
    for h in range(g.horizon):
        K = g.kernel(h)
        C = np.zeros((g.n_states * g.n_joint, g.n_states), dtype=np.int64)
        for r in range(C.shape[0]):
            s, ja = divmod(r, g.n_joint)
            row = _dense_row(K, r)
            C[r] = gen.cell_rng(h, s, ja, seed).multinomial(N, row / row.sum())
        counts.append(C)
    # rewards are deterministic, so the first observation is the reward itself
    return EmpiricalModel(np.array(g.rewards), tuple(counts), N)


def max_l1_error(game, model_or_game):
    other = model_or_game.transitions
    worst = 0.0
    for h in range(game.horizon):
        K = game.kernel(h)
        K = K.toarray() if sp.issparse(K) else np.asarray(K)
        Kh = other[h if len(other) > 1 else 0]
        Kh = Kh.toarray() if sp.issparse(Kh) else np.asarray(Kh)
        worst = max(worst, float(np.abs(K - Kh).sum(axis=1).max()))
    return worst


def env_lipschitz(game):
    """Largest l1-Lipschitz constant of the environment penalties (inf if unbounded)."""
    out = 0.0
    for r in game.env_risk:
        out = max(out, r.lipschitz if r.lipschitz is not None else math.inf)
    return out


@dataclass
class Diagnostics:
    n_samples: int
    seed: int
    max_l1_error: float
    true_gap: float
    empirical_gap: float
    full_info_gap: float
    lipschitz: float
    bound_term: float
    runtime_ms: float
    gaps: np.ndarray = field(default=None, repr=False)

    @property
    def excess_gap(self):
        return self.true_gap - self.full_info_gap

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "gaps"}


def full_information_gap(game, config=None):
    policy, tables = backward_induction(game, config)
    return float(markov_rqe_gap(game, policy, tables).max())


def model_based_solve(gen, n_samples, solver_config=None, seed=None, full_info_gap=None, empirical_gap=False,
                      model=None):
    """Solve the empirical game, then score its policy on the true game.

    ``model`` injects a ready EmpiricalModel (or any object with
    ``transitions``/``rewards``) instead of sampling.
    """
    start = time.perf_counter()
    game = gen.game
    emp = model if model is not None else sample_model(gen, n_samples, seed)
    emp_game = emp.game(game) if isinstance(emp, EmpiricalModel) else emp
    policy, emp_tables = backward_induction(emp_game, solver_config)
    gaps = markov_rqe_gap(game, policy)
    d = max_l1_error(game, emp_game)
    L = env_lipschitz(game)
    diag = Diagnostics(
        n_samples=int(n_samples),
        seed=gen.seed if seed is None else seed,
        max_l1_error=d,
        true_gap=float(gaps.max()),
        empirical_gap=float(markov_rqe_gap(emp_game, policy, emp_tables).max()) if empirical_gap else math.nan,
        full_info_gap=math.nan if full_info_gap is None else float(full_info_gap),
        lipschitz=L,
        bound_term=game.horizon * L * d,
        runtime_ms=(time.perf_counter() - start) * 1e3,
        gaps=gaps,
    )
    return policy, diag


def concentration_bound(n_states, action_counts, horizon, n_samples, delta):
    """High-probability l1 radius of one empirical transition row."""
    cells = 2 * n_states * math.prod(action_counts) * horizon
    return math.sqrt(14 * n_states / n_samples * math.log(cells / delta))


def _bound_excess(N, n_states, action_counts, horizon, lipschitz, delta):
    log_term = math.log(2 * n_states * horizon * math.prod(action_counts) / delta)
    return 8 * horizon * lipschitz * math.sqrt(n_states / N * log_term) - delta


def sample_bound(n_states, action_counts, horizon, lipschitz, delta):
    """Smallest integer N with 8 H L sqrt(S/N log(2 S H prod(A) / delta)) <= delta."""
    if not 0 < delta < 1:
        raise InvalidInputError("delta must lie in (0, 1)")
    if lipschitz <= 0:
        raise InvalidInputError("Lipschitz constant must be positive")
    log_term = math.log(2 * n_states * horizon * math.prod(action_counts) / delta)
    N = max(1, math.ceil(64 * horizon ** 2 * lipschitz ** 2 * n_states * log_term / delta ** 2))
    args = (n_states, action_counts, horizon, lipschitz, delta)
    # guard the ceiling against rounding in either direction
    while _bound_excess(N, *args) > 0:
        N += 1
    while N > 1 and _bound_excess(N - 1, *args) <= 0:
        N -= 1
    return N


def sample_bound_numeric(n_states, action_counts, horizon, lipschitz, delta):
    """Independent route: bracket and root-find the continuous N, then round up."""
    args = (n_states, action_counts, horizon, lipschitz, delta)
    hi = 1.0
    while _bound_excess(hi, *args) > 0:
        hi *= 2
    root = brentq(lambda n: _bound_excess(n, *args), hi / 2 if hi > 1 else 1e-12, hi, xtol=1e-9, rtol=1e-15)
    N = math.ceil(root)
    return N if _bound_excess(N, *args) <= 0 else N + 1


@dataclass
class ExperimentResult:
    rows: list
    full_info_gap: float
    slope: float
    mean_excess: dict

    HEADER = ("seed", "N", "max_l1_error", "true_gap", "empirical_gap", "runtime_ms")


def loglog_slope(ns, values):
    ns, values = np.asarray(ns, float), np.asarray(values, float)
    ok = values > 0
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(ns[ok]), np.log(values[ok]), 1)[0])


def run_experiment(game, n_grid, seeds, solver_config=None, empirical_gap=False, progress=None):
    """Error-vs-N sweep: one model_based_solve per (seed, N)."""
    solver_config = solver_config or MarkovSolveConfig()
    fi = full_information_gap(game, solver_config)
    rows = []
    for seed in seeds:
        gen = GenerativeModel(game, seed)
        for N in n_grid:
            _, diag = model_based_solve(gen, N, solver_config, full_info_gap=fi, empirical_gap=empirical_gap)
            rows.append(diag)
            if progress:
                progress(diag)
    mean_excess = {N: float(np.mean([r.excess_gap for r in rows if r.n_samples == N])) for N in n_grid}
    slope = loglog_slope(list(mean_excess), list(mean_excess.values()))
    return ExperimentResult(rows, fi, slope, mean_excess)
