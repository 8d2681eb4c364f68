"""Built-in benchmark games."""

import math
import re
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInputError
from .game import MatrixGameSpec, RationalitySpec
from .markov import MarkovGameSpec
from .risk import RiskSpec

# (row player, column player) payoffs for (U,L), (U,R), (D,L), (D,R)
_SC_TABLES = {
    1: ((10, 10), (0, 18), (9, 9), (10, 8)),
    2: ((9, 4), (0, 13), (6, 7), (8, 5)),
    3: ((8, 6), (0, 14), (7, 7), (10, 4)),
    4: ((7, 4), (0, 11), (5, 6), (9, 2)),
    5: ((7, 2), (0, 9), (4, 5), (8, 1)),
    6: ((7, 1), (1, 7), (3, 5), (8, 0)),
    7: ((10, 12), (4, 22), (9, 9), (14, 8)),
    8: ((9, 7), (3, 16), (6, 7), (11, 5)),
    9: ((8, 9), (3, 17), (7, 7), (13, 4)),
    10: ((7, 6), (2, 13), (5, 6), (11, 2)),
    11: ((7, 4), (2, 11), (4, 5), (10, 1)),
    12: ((7, 3), (3, 9), (3, 5), (10, 0)),
}
_GHP_TABLES = {4: ((200, 160), (160, 10), (370, 200), (10, 370))}


@dataclass(frozen=True)
class BenchmarkId:
    family: str
    index: int = None
    params: dict = field(default_factory=dict)

    def __str__(self):
        if self.family in ("ghp", "sc"):
            return f"bench:{self.family}{self.index}"
        return f"bench:{self.family}"


_FAMILIES = {"ghp": "ghp", "sc": "sc", "cliffkl": "cliff-kl", "cliffl1": "cliff-l1",
             "randommatrix": "random-matrix", "randommarkov": "random-markov", "tiny": "tiny"}


def parse_benchmark(text):
    """Parse ``bench:sc3``, ``bench:ghp4``, ``bench:cliff-kl`` and friends."""
    if isinstance(text, BenchmarkId):
        return text
    body = str(text)
    if body.startswith("bench:"):
        body = body[len("bench:"):]
    whole = body.strip().lower().replace("-", "").replace("_", "")
    if whole in _FAMILIES:
        # family names may end in a digit (cliff-l1)
        key, digits = whole, ""
    else:
        m = re.fullmatch(r"([A-Za-z][A-Za-z_\-]*?)[\-_]?(\d*)", body.strip())
        if not m:
            raise InvalidInputError(f"unknown benchmark id {text!r}")
        key = m.group(1).lower().replace("-", "").replace("_", "")
        digits = m.group(2)
    if key not in _FAMILIES:
        raise InvalidInputError(f"unknown benchmark family in {text!r}")
    family = _FAMILIES[key]
    index = int(digits) if digits else None
    if family == "sc" and index not in _SC_TABLES:
        raise InvalidInputError(f"SC game index must be in 1..12, got {digits or 'none'}")
    if family == "ghp" and index != 4:
        raise InvalidInputError(f"only GHP game 4 is available, got {digits or 'none'}")
    if family not in ("sc", "ghp") and index is not None:
        raise InvalidInputError(f"benchmark {family} takes no index")
    return BenchmarkId(family, index)


def matching_pennies(bench):
    """Payoff-only 2x2 game from the published tables (actions U/D, L/R)."""
    bench = parse_benchmark(bench)
    tables = {"sc": _SC_TABLES, "ghp": _GHP_TABLES}.get(bench.family)
    if tables is None:
        raise InvalidInputError(f"{bench} is not a matrix benchmark")
    cells = np.array(tables[bench.index], dtype=float)
    return MatrixGameSpec((cells[:, 0].reshape(2, 2), cells[:, 1].reshape(2, 2)))


def all_matrix_benchmarks():
    return ["bench:ghp4"] + [f"bench:sc{k}" for k in range(1, 13)]


MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
MOVE_NAMES = ("up", "down", "left", "right")


@dataclass
class GridWorld:
    """Two-agent cliff walk on a width x height grid.

    Each agent's local state is a cell index ``row * width + col`` or the
    extra ``done`` index ``width * height``. Standing on a cliff cell or on
    the own goal pays that cell's reward for one step; the agent then leaves
    for ``done`` and collects nothing more. Moves succeed with ``p_move``
    and otherwise go uniformly in one of the three other directions;
    off-grid moves stay put. While both agents are on the grid and within
    Chebyshev distance 1, the success probability drops to ``p_near``.
    """

    width: int = 6
    height: int = 6
    horizon: int = 200
    cliff: tuple = None
    starts: tuple = None
    goals: tuple = None
    step_reward: float = 0.0
    cliff_reward: float = -2.0
    goal_reward: float = 1.0
    p_move: float = 0.9
    p_near: float = 0.5

    def __post_init__(self):
        w, h = int(self.width), int(self.height)
        if w < 2 or h < 2:
            raise InvalidInputError("grid needs width and height >= 2")
        if int(self.horizon) < 1:
            raise InvalidInputError("horizon must be >= 1")
        for name in ("p_move", "p_near"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise InvalidInputError(f"{name} must lie in [0, 1]")
        self.width, self.height, self.horizon = w, h, int(self.horizon)
        mid = w // 2 - 1 if w > 2 else 0
        if self.cliff is None:
            self.cliff = tuple((h - 1, c) for c in range(1, w - 1))
        if self.starts is None:
            self.starts = ((h - 2, mid), (max(0, h - 5), mid))
        if self.goals is None:
            self.goals = ((h - 1, w - 1), (h - 1, 0))
        self.cliff = tuple(tuple(int(x) for x in c) for c in self.cliff)
        self.starts = tuple(tuple(int(x) for x in c) for c in self.starts)
        self.goals = tuple(tuple(int(x) for x in c) for c in self.goals)
        if len(self.starts) != 2 or len(self.goals) != 2:
            raise InvalidInputError("need one start and one goal per agent")
        for cell in self.cliff + self.starts + self.goals:
            if not (0 <= cell[0] < h and 0 <= cell[1] < w):
                raise InvalidInputError(f"cell {cell} lies outside the {h}x{w} grid")
        if set(self.goals) & set(self.cliff):
            raise InvalidInputError("a goal cell cannot be a cliff cell")

    @property
    def n_cells(self):
        return self.width * self.height

    @property
    def done(self):
        return self.n_cells

    @property
    def n_local(self):
        return self.n_cells + 1

    @property
    def n_states(self):
        return self.n_local ** 2

    def cell(self, rc):
        return rc[0] * self.width + rc[1]

    def encode(self, local1, local2):
        return local1 * self.n_local + local2

    def decode(self, s):
        return divmod(int(s), self.n_local)

    @property
    def start_state(self):
        return self.encode(self.cell(self.starts[0]), self.cell(self.starts[1]))

    def _terminal(self, agent):
        return {self.cell(c) for c in self.cliff} | {self.cell(self.goals[agent])}

    def _local_kernel(self, agent, p):
        """(n_local, 4, n_local) move probabilities for one agent."""
        L = self.n_local
        T = np.zeros((L, 4, L))
        T[self.done, :, self.done] = 1.0
        terminal = self._terminal(agent)
        for r in range(self.height):
            for c in range(self.width):
                x = self.cell((r, c))
                if x in terminal:
                    T[x, :, self.done] = 1.0
                    continue
                for a in range(4):
                    for d, (dr, dc) in enumerate(MOVES):
                        prob = p if d == a else (1.0 - p) / 3.0
                        rr, cc = r + dr, c + dc
                        y = self.cell((rr, cc)) if 0 <= rr < self.height and 0 <= cc < self.width else x
                        T[x, a, y] += prob
        return T

    def near(self, local1, local2):
        if local1 == self.done or local2 == self.done:
            return False
        (r1, c1), (r2, c2) = divmod(local1, self.width), divmod(local2, self.width)
        return max(abs(r1 - r2), abs(c1 - c2)) <= 1

    def transition_matrix(self):
        """Sparse (S * 16, S) kernel over joint states and joint actions."""
        L = self.n_local
        far = [self._local_kernel(k, self.p_move) for k in range(2)]
        close = [self._local_kernel(k, self.p_near) for k in range(2)]
        rows, cols, vals = [], [], []
        for x1 in range(L):
            for x2 in range(L):
                T1, T2 = (close if self.near(x1, x2) else far)
                s = self.encode(x1, x2)
                for a1 in range(4):
                    n1 = np.flatnonzero(T1[x1, a1])
                    for a2 in range(4):
                        n2 = np.flatnonzero(T2[x2, a2])
                        r = s * 16 + a1 * 4 + a2
                        rows.append(np.full(n1.size * n2.size, r))
                        cols.append((n1[:, None] * L + n2[None, :]).ravel())
                        vals.append(np.outer(T1[x1, a1, n1], T2[x2, a2, n2]).ravel())
        K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(self.n_states * 16, self.n_states))
        K.sum_duplicates()
        return K

    def local_rewards(self, agent):
        r = np.full(self.n_local, float(self.step_reward))
        r[self.done] = 0.0
        for c in self.cliff:
            r[self.cell(c)] = self.cliff_reward
        r[self.cell(self.goals[agent])] = self.goal_reward
        return r

    def reward_tensor(self):
        """Rewards of shape (2, H, S, 4, 4); they depend on the state only."""
        r1, r2 = self.local_rewards(0), self.local_rewards(1)
        per_state = np.stack([np.repeat(r1, self.n_local), np.tile(r2, self.n_local)])
        R = np.broadcast_to(per_state[:, None, :, None, None], (2, self.horizon, self.n_states, 4, 4))
        return np.ascontiguousarray(R)

    def cliff_states(self, agent=None):
        """Joint states in which the given agent (default: either) stands on a cliff cell."""
        cliff = np.zeros(self.n_local, dtype=bool)
        cliff[[self.cell(c) for c in self.cliff]] = True
        a, b = np.meshgrid(cliff, cliff, indexing="ij")
        mask = {None: a | b, 0: a, 1: b}[agent]
        return np.flatnonzero(mask.ravel())

    def game(self, env_risk, pol_risk, rationality, recursion_mode="utility"):
        return MarkovGameSpec(self.horizon, self.n_states, (4, 4), self.reward_tensor(),
                              (self.transition_matrix(),), env_risk, pol_risk, rationality, recursion_mode)


CLIFF_DEFAULTS = {
    "kl": dict(cliff_reward=-2.0, step_reward=0.0, goal_reward=1.0, horizon=200),
    "l1": dict(cliff_reward=-100.0, step_reward=-0.1, goal_reward=20.0, horizon=100),
}


def _variant(name):
    key = str(name).lower().replace("cliff-", "").replace("tv", "l1")
    if key not in CLIFF_DEFAULTS:
        raise InvalidInputError(f"cliff variant must be 'kl' or 'l1', got {name!r}")
    return key


def grid_world(variant="kl", **overrides):
    return GridWorld(**{**CLIFF_DEFAULTS[_variant(variant)], **overrides})


def cliff_walk(variant="kl", tau=1.0, epsilon=1.0, env_tau=None, env_lambda=None, recursion_mode="utility",
               **overrides):
    """Cliff-walk Markov game with KL policy risk and log-barrier rationality.

    The KL variant reuses the policy risk level for the environment; the
    l1 variant uses a TV environment penalty of weight ``env_lambda``.
    """
    world = grid_world(variant, **overrides)
    pol = RiskSpec.kl(tau)
    if _variant(variant) == "l1":
        env = RiskSpec.tv(1.0 if env_lambda is None else env_lambda)
    else:
        env = RiskSpec.kl(tau if env_tau is None else env_tau)
    return world.game(env, pol, RationalitySpec("logbarrier", epsilon), recursion_mode)


def random_matrix_game(action_counts, seed=0):
    rng = np.random.default_rng(seed)
    A = tuple(int(a) for a in action_counts)
    return MatrixGameSpec(tuple(rng.random(A) for _ in A))


def random_markov_game(n_states, action_counts, horizon, env_risk, pol_risk, rationality, seed=0,
                       recursion_mode="utility"):
    """Uniform [0, 1] rewards and Dirichlet(1) transition rows, one kernel per step."""
    rng = np.random.default_rng(seed)
    A = tuple(int(a) for a in action_counts)
    rows = n_states * math.prod(A)
    R = rng.random((len(A), horizon, n_states) + A)
    P = tuple(rng.dirichlet(np.ones(n_states), size=rows) for _ in range(horizon))
    return MarkovGameSpec(horizon, n_states, A, R, P, env_risk, pol_risk, rationality, recursion_mode)


def random_game(kind, dims, seed=0, **params):
    """``kind`` is 'matrix' (dims = action counts) or 'markov' (dims = (S, action counts, H))."""
    if kind == "matrix":
        return random_matrix_game(dims, seed)
    if kind == "markov":
        S, A, H = dims
        defaults = dict(env_risk=RiskSpec.kl(1.0), pol_risk=RiskSpec.kl(1.0),
                        rationality=RationalitySpec("logbarrier", 1.0))
        return random_markov_game(S, A, H, seed=seed, **{**defaults, **params})
    raise InvalidInputError(f"random game kind must be 'matrix' or 'markov', got {kind!r}")


def tiny_markov_game(seed=7, recursion_mode="utility"):
    """Three states, two players with two actions, three steps, TV environment risk 0.5."""
    return random_game("markov", (3, (2, 2), 3), seed=seed, env_risk=RiskSpec.tv(0.5), pol_risk=RiskSpec.kl(1.0),
                       rationality=RationalitySpec("logbarrier", 2.0), recursion_mode=recursion_mode)


def make_benchmark(text, **params):
    """Build any ``bench:`` game; matrix benchmarks come back payoff-only."""
    bench = parse_benchmark(text)
    if bench.family in ("sc", "ghp"):
        return matching_pennies(bench)
    if bench.family.startswith("cliff"):
        return cliff_walk(bench.family.split("-")[1], **params)
    if bench.family == "tiny":
        return tiny_markov_game(**params)
    if bench.family == "random-matrix":
        return random_matrix_game(params.get("action_counts", (2, 2)), params.get("seed", 0))
    return random_game("markov", params.pop("dims", (3, (2, 2), 3)), **params)
