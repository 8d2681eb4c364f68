"""Equilibrium computation through the auxiliary player/adversary game.

Each player i is paired with an adversary choosing distributions over the
opponents' actions. Player i's loss is

    J_i = -pi_i^T R_i p_i - D_i(p_i, pi_-i) + eps_i nu_i(pi_i)

and adversary i's loss is

    Jbar_i = pi_i^T R_i p_i + D_i(p_i, pi_-i) - sum_j xi_ij nu_j(pi_j).

All 2n agents run projected gradient descent simultaneously; the time
averages of the players' strategies approximate an equilibrium whenever the
coupling condition of ``check_tractability`` holds.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _kernel
from .errors import DivergenceError, InvalidInputError, UnsupportedCombinationError
from .game import MatrixGameSpec, RationalitySpec, _logbarrier_linear_minimizer, rqe_gap
from .risk import rkl_maximizer
from .simplex import REGULARIZERS

log = logging.getLogger(__name__)

# pairings whose concavity threshold is exactly 1/tau
CLOSED_FORM_PAIRS = {("kl", "logbarrier"), ("rkl", "negentropy")}
PROBE_SEGMENTS = 10_000
PROBE_TOL = 1e-8


# ---------------------------------------------------------------------------
# concavity threshold xi*


def _sample_probes(dim, n_segments, rng, interior=False):
    """Reference distributions p and segments [a, b] used by concavity probes.

    p mixes exact vertices with sparse Dirichlet draws so that near-extreme
    references (where thresholds bind) are well represented; segment ends mix
    flat and sparse draws so that small coordinates appear. ``interior``
    floors p away from the boundary instead (reverse KL is infinite there).
    """
    p = rng.dirichlet(np.full(dim, 0.1), size=n_segments)
    vertex = rng.random(n_segments) < 0.3
    p[vertex] = np.eye(dim)[rng.integers(0, dim, vertex.sum())]
    if interior:
        p = np.maximum(p, 1e-9)
        p /= p.sum(axis=1, keepdims=True)
    alpha = np.where(rng.random((n_segments, 1)) < 0.5, 1.0, 0.3)
    a = np.array([rng.dirichlet(np.full(dim, al)) for al in alpha[:, 0]])
    b = np.array([rng.dirichlet(np.full(dim, al)) for al in alpha[:, 0]])
    # a share of very short segments exposes kinks, whose defect is first
    # order in the segment length while a smooth regularizer's is second order
    shrink = np.where(rng.random((n_segments, 1)) < 0.2, 1e-3, 1.0)
    b = a + shrink * (b - a)
    a = np.maximum(a, 1e-9)
    b = np.maximum(b, 1e-9)
    a /= a.sum(axis=1, keepdims=True)
    b /= b.sum(axis=1, keepdims=True)
    return p, a, b


def _row_divergence(kind, p, q):
    if kind == "kl":
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(p > 0, p * np.log(p / q), 0.0)
        return t.sum(axis=-1)
    if kind == "rkl":
        return (q * np.log(q / p)).sum(axis=-1) if np.all(p > 0) else _rkl_rows(p, q)
    return np.abs(p - q).sum(axis=-1)


def _rkl_rows(p, q):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(q > 0, q * (np.log(q) - np.log(p)), 0.0).sum(axis=-1)


def _row_nu(kind, x):
    if kind == "negentropy":
        return (x * np.log(x)).sum(axis=-1)
    return -np.log(x).sum(axis=-1)


def _jensen_gaps(risk, reg_kind, p, a, b):
    """Midpoint Jensen gaps of the penalty and of the regularizer, per probe.

    Probes with non-finite gaps are dropped: reverse KL is +inf along the
    whole segment when the reference p misses part of the support, so those
    probes say nothing about concavity.
    """
    mid = 0.5 * (a + b)
    with np.errstate(invalid="ignore"):
        d_pen = risk.weight * (0.5 * (_row_divergence(risk.kind, p, a) + _row_divergence(risk.kind, p, b))
                               - _row_divergence(risk.kind, p, mid))
    d_nu = 0.5 * (_row_nu(reg_kind, a) + _row_nu(reg_kind, b)) - _row_nu(reg_kind, mid)
    keep = np.isfinite(d_pen) & np.isfinite(d_nu)
    return d_pen[keep], d_nu[keep]


def midpoint_defects(risk, reg_kind, xi, n_segments=PROBE_SEGMENTS, seed=0, dims=(2, 3, 4)):
    """Midpoint concavity defects of q -> D(p, q) - xi nu(q) on random segments.

    The defect is (H(a) + H(b))/2 - H((a+b)/2); positive values beyond
    roundoff falsify concavity. Returns one defect per informative probe.
    """
    rng = np.random.default_rng(seed)
    out = []
    per = n_segments // len(dims)
    for k, dim in enumerate(dims):
        m = per if k < len(dims) - 1 else n_segments - per * (len(dims) - 1)
        d_pen, d_nu = _jensen_gaps(risk, reg_kind, *_sample_probes(dim, m, rng, risk.kind == "rkl"))
        out.append(d_pen - xi * d_nu)
    return np.concatenate(out)


def concavity_holds(risk, reg_kind, xi, n_segments=PROBE_SEGMENTS, seed=0, tol=PROBE_TOL):
    return bool(np.all(midpoint_defects(risk, reg_kind, xi, n_segments, seed) <= tol))


def numeric_xi_star(risk, reg_kind, n_segments=PROBE_SEGMENTS, seed=0, tol=1e-6, cap=1e6):
    """Smallest xi passing every probe.

    Each probe's defect is affine in xi (penalty part minus xi times the
    regularizer's Jensen gap), so the threshold over the probe set is a
    maximum of ratios; this is the exact limit of bisecting on xi.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    per = n_segments // 3
    for dim in (2, 3, 4):
        d_pen, d_nu = _jensen_gaps(risk, reg_kind, *_sample_probes(dim, per, rng, risk.kind == "rkl"))
        ok = d_nu > 1e-14
        need = np.where(ok, (d_pen - tol) / np.where(ok, d_nu, 1.0), 0.0)
        if np.any(~ok & (d_pen > tol)):
            worst = np.inf
        worst = max(worst, float(need.max(initial=0.0)))
    if not np.isfinite(worst) or worst > cap:
        raise UnsupportedCombinationError(
            f"no finite coupling weight makes {risk.kind} minus {reg_kind} concave on the probes"
        )
    return max(worst, 0.0)


def xi_star(risk, reg_kind, allow_numeric=False):
    """Smallest xi with D(p, q) - xi nu(q) concave in q for every p.

    Closed form 1/tau for KL with the log barrier and reverse KL with negative
    entropy; other pairings need ``allow_numeric``.
    """
    reg_kind = RationalitySpec(reg_kind, 1.0).kind if isinstance(reg_kind, str) else reg_kind.kind
    if (risk.kind, reg_kind) in CLOSED_FORM_PAIRS:
        return 1.0 / risk.tau
    if not allow_numeric:
        raise UnsupportedCombinationError(
            f"no closed-form coupling weight for {risk.kind} with {reg_kind}; enable numeric search"
        )
    return numeric_xi_star(risk, reg_kind)


def _action_dependent_self_xi(game, i, xi_row, n_probe=2000, seed=0):
    """Own-strategy coupling weight for an action-dependent adversary.

    With per-row adversaries, Jbar_i mixes the rows by pi_i, which couples
    pi_i to the opponents' strategies. Holding the opponent weights at their
    pairwise thresholds, this finds the smallest weight on nu_i keeping
    Jbar_i concave in the joint strategy along random segments, using vertex
    rows for the adversary (the binding case: the Hessian is affine in p).
    """
    rng = np.random.default_rng(seed)
    A = game.action_counts
    risk = game.risk[i]
    reg = game.rationality
    worst = 0.0
    for _ in range(n_probe):
        a = [np.maximum(rng.dirichlet(np.full(k, rng.choice([0.3, 1.0]))), 1e-9) for k in A]
        b = [np.maximum(rng.dirichlet(np.full(k, rng.choice([0.3, 1.0]))), 1e-9) for k in A]
        a = [x / x.sum() for x in a]
        b = [x / x.sum() for x in b]
        mid = [0.5 * (x + y) for x, y in zip(a, b)]
        rows = {j: np.eye(A[j])[rng.integers(0, A[j], A[i])] for j in range(game.n) if j != i}
        if risk.kind == "rkl":
            # vertex rows make every divergence infinite
            rows = {j: _sample_probes(A[j], A[i], rng, interior=True)[0] for j in rows}

        def coupled(strat):
            # penalty part of Jbar_i (the payoff part is linear in pi_i and p)
            total = 0.0
            for j, P in rows.items():
                for r in range(A[i]):
                    total += strat[i][r] * risk.weight * _row_divergence(risk.kind, P[r], strat[j])
            total -= sum(xi_row[j] * reg[j].nu(strat[j]) for j in range(game.n) if j != i)
            return total

        with np.errstate(invalid="ignore"):
            d_c = 0.5 * (coupled(a) + coupled(b)) - coupled(mid)
        d_nu = 0.5 * (reg[i].nu(a[i]) + reg[i].nu(b[i])) - reg[i].nu(mid[i])
        if not np.isfinite(d_c):
            continue
        if d_c > PROBE_TOL:
            if d_nu <= 1e-14:
                raise UnsupportedCombinationError("own-strategy coupling cannot restore concavity")
            worst = max(worst, (d_c - PROBE_TOL) / d_nu)
    return worst


def coupling_matrix(game, allow_numeric=False):
    """xi[i, j]: weight of nu_j in adversary i's loss. Returns (xi, numeric flag)."""
    game.require_params()
    n = game.n
    xi = np.zeros((n, n))
    numeric = False
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            pair = (game.risk[i].kind, game.rationality[j].kind)
            numeric |= pair not in CLOSED_FORM_PAIRS
            xi[i, j] = xi_star(game.risk[i], game.rationality[j], allow_numeric=allow_numeric)
    if game.risk_mode == "action_dependent":
        numeric = True
        for i in range(n):
            xi[i, i] = _action_dependent_self_xi(game, i, xi[i])
    return xi, numeric


@dataclass
class TractabilityRecord:
    holds: bool
    condition: str
    margins: np.ndarray
    xi: np.ndarray
    numeric: bool

    def to_dict(self):
        return {
            "holds": self.holds,
            "condition": self.condition,
            "margins": [float(m) for m in self.margins],
            "xi": self.xi.tolist(),
            "numeric": self.numeric,
        }


MARGIN_TOL = 1e-12


def check_tractability(game, allow_numeric=True):
    """Coupling condition under which averaged gradient play yields an RQE.

    Two players, aggregate risk: eps_1 / xi_1 >= xi_2 / eps_2, where xi_1
    couples adversary 1 to player 2's regularizer and vice versa. More
    players: each eps_i must cover the total weight the adversaries put on
    nu_i. Action-dependent risk adds each adversary's weight on its own
    player's regularizer to that total.
    """
    xi, numeric = coupling_matrix(game, allow_numeric=allow_numeric)
    eps = np.array([r.epsilon for r in game.rationality])
    if game.n == 2 and game.risk_mode == "aggregate":
        x1, x2 = xi[0, 1], xi[1, 0]
        margins = np.array([eps[0] / x1 - x2 / eps[1], eps[1] / x2 - x1 / eps[0]])
        condition = "two_player"
        scale = np.array([eps[0] / x1 + x2 / eps[1], eps[1] / x2 + x1 / eps[0]])
    else:
        load = xi.sum(axis=0)
        margins = eps - load
        condition = "n_player" if game.risk_mode == "aggregate" else "action_dependent"
        scale = eps + load
    holds = bool(np.all(margins >= -MARGIN_TOL * np.maximum(scale, 1.0)))
    return TractabilityRecord(holds, condition, margins, xi, numeric)


# ---------------------------------------------------------------------------
# auxiliary game (reference implementation in plain numpy)


@dataclass
class AuxiliaryGame:
    """The 2n-agent game. Adversary i's strategy is ``p[i][r][k]``: row r
    (always 0 for aggregate risk), k-th opponent in increasing player order."""

    base: MatrixGameSpec
    xi: np.ndarray
    tractability: TractabilityRecord = None

    @property
    def n_agents(self):
        return 2 * self.base.n

    @property
    def rows(self):
        return 1 if self.base.risk_mode == "aggregate" else None

    def adversary_rows(self, i):
        return 1 if self.base.risk_mode == "aggregate" else self.base.action_counts[i]

    def uniform_profile(self):
        A = self.base.action_counts
        pi = [np.full(a, 1.0 / a) for a in A]
        p = [[[np.full(A[j], 1.0 / A[j]) for j in range(self.base.n) if j != i]
              for _ in range(self.adversary_rows(i))] for i in range(self.base.n)]
        return pi, p

    def _parts(self, i):
        flat = self.base.flattened[i]
        return flat.opponents, flat.blocks

    def player_loss(self, i, pi, p):
        g = self.base
        risk, reg = g.risk[i], g.rationality[i]
        opps, blocks = self._parts(i)
        total = 0.0
        for r, row in enumerate(p[i]):
            wt = 1.0 if g.risk_mode == "aggregate" else pi[i][r]
            for k, (j, B) in enumerate(zip(opps, blocks)):
                lin = pi[i] @ B @ row[k] if g.risk_mode == "aggregate" else B[r] @ row[k]
                total += wt * (-lin - risk.penalty(row[k], pi[j]))
        return total + reg.value(pi[i])

    def adversary_loss(self, i, pi, p):
        g = self.base
        risk = g.risk[i]
        opps, blocks = self._parts(i)
        total = 0.0
        for r, row in enumerate(p[i]):
            wt = 1.0 if g.risk_mode == "aggregate" else pi[i][r]
            for k, (j, B) in enumerate(zip(opps, blocks)):
                lin = pi[i] @ B @ row[k] if g.risk_mode == "aggregate" else B[r] @ row[k]
                total += wt * (lin + risk.penalty(row[k], pi[j]))
        total -= sum(self.xi[i, j] * g.rationality[j].nu(pi[j]) for j in range(g.n))
        return total

    def player_grad(self, i, pi, p):
        g = self.base
        risk, reg = g.risk[i], g.rationality[i]
        opps, blocks = self._parts(i)
        grad = reg.epsilon * reg.nu_grad(pi[i])
        for k, (j, B) in enumerate(zip(opps, blocks)):
            if g.risk_mode == "aggregate":
                grad = grad - B @ p[i][0][k]
            else:
                for r in range(len(pi[i])):
                    grad[r] -= B[r] @ p[i][r][k] + risk.penalty(p[i][r][k], pi[j])
        return grad

    def adversary_grad(self, i, pi, p):
        """Gradient of Jbar_i in adversary i's own strategy, same nesting as p[i]."""
        g = self.base
        risk = g.risk[i]
        opps, blocks = self._parts(i)
        out = []
        for r, row in enumerate(p[i]):
            wt = 1.0 if g.risk_mode == "aggregate" else pi[i][r]
            parts = []
            for k, (j, B) in enumerate(zip(opps, blocks)):
                lin = B.T @ pi[i] if g.risk_mode == "aggregate" else B[r]
                parts.append(wt * (lin + risk.penalty_grad(row[k], pi[j])))
            out.append(parts)
        return out


def build_auxiliary(game, allow_numeric=True):
    """Pair every player with an adversary; warns when the coupling condition fails."""
    game.require_params()
    record = check_tractability(game, allow_numeric=allow_numeric)
    if not record.holds:
        log.warning("tractability condition fails (%s, margins %s); no convergence guarantee",
                    record.condition, np.array2string(record.margins, precision=4))
    return AuxiliaryGame(game, record.xi, record)


# ---------------------------------------------------------------------------
# learning dynamics


@dataclass
class NoRegretConfig:
    step_size: float = 5e-4
    iterations: int = 10_000
    seed: int = 0
    init: str = "uniform"
    # iterations before this index are excluded from the time averages
    average_from: int = 0
    record_trajectory: bool = False
    track_regret: bool = True
    # iterations at which regret snapshots are kept (besides the last one)
    checkpoints: tuple = ()

    def __post_init__(self):
        if not self.step_size > 0:
            raise InvalidInputError("step_size must be > 0")
        if int(self.iterations) < 1:
            raise InvalidInputError("iterations must be >= 1")
        if self.init not in ("uniform", "random"):
            raise InvalidInputError("init must be 'uniform' or 'random'")
        if not 0 <= self.average_from < self.iterations:
            raise InvalidInputError("average_from must lie in [0, iterations)")


@dataclass
class LearnerTrajectory:
    average_pi: list
    average_p: list
    last_pi: list
    last_p: list
    iterations: int
    regrets: np.ndarray = None
    # (T, regrets) snapshots, regrets ordered as players then adversaries
    regret_history: list = field(default_factory=list)
    iterates_pi: np.ndarray = None
    iterates_p: np.ndarray = None
    diverged_at: int = -1


class _Batch:
    """Padded kernel state for a list of games sharing player count and risk mode."""

    def __init__(self, games, configs):
        g0 = games[0]
        self.games = games
        self.n = n = g0.n
        self.mode = g0.risk_mode
        for g in games:
            g.require_params()
            if g.n != n or g.risk_mode != self.mode:
                raise InvalidInputError("batched games need equal player counts and risk modes")
        B = len(games)
        self.Amax = Amax = max(max(g.action_counts) for g in games)
        self.rows = 1 if self.mode == "aggregate" else Amax
        self.A = np.array([g.action_counts for g in games], dtype=np.int64)
        self.R = np.zeros((B, n, n, Amax, Amax))
        for b, g in enumerate(games):
            for i, flat in enumerate(g.flattened):
                for j, blk in zip(flat.opponents, flat.blocks):
                    self.R[b, i, j, : blk.shape[0], : blk.shape[1]] = blk
        self.pen_kind = np.array([[_kernel.PEN_CODES[r.kind] for r in g.risk] for g in games], dtype=np.int64)
        self.pen_w = np.array([[r.weight for r in g.risk] for g in games])
        self.reg_kind = np.array([[_kernel.REG_CODES[r.kind] for r in g.rationality] for g in games], dtype=np.int64)
        self.eps = np.array([[r.epsilon for r in g.rationality] for g in games])
        self.configs = configs
        self.step = np.array([c.step_size for c in configs], dtype=float)
        self.reset()

    def reset(self, which=None):
        B, n, Amax, rows = len(self.games), self.n, self.Amax, self.rows
        if which is None:
            self.pi = np.zeros((B, n, Amax))
            self.p = np.zeros((B, n, rows, n, Amax))
            self.pi_sum = np.zeros_like(self.pi)
            self.p_sum = np.zeros_like(self.p)
            self.n_avg = np.zeros(B, dtype=np.int64)
            self.scale0 = np.ones(B)
            self.diverged = np.full(B, -1, dtype=np.int64)
            self.c_sum = np.zeros((B, n, Amax))
            self.real_pi = np.zeros((B, n))
            self.lin = np.zeros((B, n, rows, n, Amax))
            self.wsum = np.zeros((B, n, rows))
            self.lq = np.zeros_like(self.lin)
            self.q1 = np.zeros_like(self.lin)
            self.cq = np.zeros((B, n, rows, n))
            self.real_p = np.zeros((B, n))
            self.n_reg = np.zeros(B, dtype=np.int64)
            which = range(B)
        for b in which:
            for arr in (self.pi, self.p, self.pi_sum, self.p_sum, self.c_sum, self.real_pi, self.lin,
                        self.wsum, self.lq, self.q1, self.cq, self.real_p):
                arr[b] = 0.0
            self.n_avg[b] = 0
            self.n_reg[b] = 0
            self.diverged[b] = -1
            self.scale0[b] = 1.0
            cfg = self.configs[b]
            rng = np.random.default_rng(cfg.seed)
            A = self.A[b]
            for i in range(self.n):
                if cfg.init == "uniform":
                    self.pi[b, i, : A[i]] = 1.0 / A[i]
                else:
                    self.pi[b, i, : A[i]] = _random_start(rng, A[i])
                for r in range(1 if self.rows == 1 else A[i]):
                    for j in range(self.n):
                        if j == i:
                            continue
                        if cfg.init == "uniform":
                            self.p[b, i, r, j, : A[j]] = 1.0 / A[j]
                        else:
                            self.p[b, i, r, j, : A[j]] = _random_start(rng, A[j])

    def advance(self, t_start, t_stop, avg_start, track_regret, record=False):
        B = len(self.games)
        if record:
            rec_pi = np.zeros((B, t_stop - t_start) + self.pi.shape[1:])
            rec_p = np.zeros((B, t_stop - t_start) + self.p.shape[1:])
        else:
            rec_pi = np.zeros((B, 0) + self.pi.shape[1:])
            rec_p = np.zeros((B, 0) + self.p.shape[1:])
        _kernel.run_batch(
            self.R, self.A, self.pen_kind, self.pen_w, self.reg_kind, self.eps, self.step,
            self.pi, self.p, self.pi_sum, self.p_sum, self.n_avg,
            t_start, t_stop, avg_start, self.scale0, self.diverged,
            self.c_sum, self.real_pi, self.lin, self.wsum, self.lq, self.q1, self.cq, self.real_p,
            self.n_reg, track_regret, rec_pi, rec_p,
        )
        return rec_pi, rec_p

    def unpack_pi(self, b, arr):
        return [arr[i, : self.A[b, i]].copy() for i in range(self.n)]

    def unpack_p(self, b, arr):
        A = self.A[b]
        return [[[arr[i, r, j, : A[j]].copy() for j in range(self.n) if j != i]
                 for r in range(1 if self.rows == 1 else A[i])] for i in range(self.n)]

    def averages(self, b):
        k = max(self.n_avg[b], 1)
        pi = [x / x.sum() for x in self.unpack_pi(b, self.pi_sum[b] / k)]
        p = [[[x / x.sum() for x in row] for row in adv] for adv in self.unpack_p(b, self.p_sum[b] / k)]
        return pi, p

    def regrets(self, b):
        """External regrets of the played sequence: players, then adversaries."""
        g = self.games[b]
        T = self.n_reg[b]
        n = self.n
        A = self.A[b]
        out = np.full(2 * n, np.nan)
        if T == 0:
            return out
        for i in range(n):
            reg = g.rationality[i]
            C = self.c_sum[b, i, : A[i]]
            if reg.kind == "negentropy":
                best = -T * reg.epsilon * logsumexp(-C / (T * reg.epsilon))
            else:
                x = _logbarrier_linear_minimizer(C / T, reg.epsilon)
                best = C @ x + T * reg.epsilon * REGULARIZERS["logbarrier"][0](x)
            out[i] = self.real_pi[b, i] - best
        for i in range(n):
            risk = g.risk[i]
            if risk.kind == "tv":
                continue
            w = risk.weight
            best = 0.0
            for r in range(1 if self.rows == 1 else A[i]):
                W = self.wsum[b, i, r]
                if W <= 0:
                    continue
                for j in range(n):
                    if j == i:
                        continue
                    lin = self.lin[b, i, r, j, : A[j]]
                    if risk.kind == "kl":
                        a = lin - w * self.lq[b, i, r, j, : A[j]]
                        best += -w * W * logsumexp(-a / (w * W))
                    else:
                        Q = self.q1[b, i, r, j, : A[j]]
                        q = Q / Q.sum()
                        x = rkl_maximizer(-lin, q, 1.0 / (w * W))
                        best += lin @ x + w * (self.cq[b, i, r, j] - Q @ np.log(x))
            out[n + i] = self.real_p[b, i] - best
        return out


def _random_start(rng, k):
    """Even mix of a flat Dirichlet draw and the uniform strategy.

    Keeps random starts well inside the simplex, where barrier gradients are
    moderate, while still spreading runs across it.
    """
    return 0.5 * rng.dirichlet(np.ones(k)) + 0.5 / k


def _run(games, configs, record=False):
    """Run gradient play for a batch; returns (batch, regret histories)."""
    batch = _Batch(games, configs)
    T = int(configs[0].iterations)
    if any(int(c.iterations) != T or c.average_from != configs[0].average_from for c in configs):
        raise InvalidInputError("batched runs need equal iteration counts and averaging windows")
    track = bool(configs[0].track_regret)
    marks = sorted({int(m) for m in configs[0].checkpoints if 0 < m < T} | {T}) if track else [T]
    history = [[] for _ in games]
    rec = None
    t = 0
    for m in marks:
        rp = batch.advance(t, m, configs[0].average_from, track, record)
        if record:
            rec = rp if rec is None else tuple(np.concatenate([x, y], axis=1) for x, y in zip(rec, rp))
        t = m
        if track:
            for b in range(len(games)):
                if batch.diverged[b] < 0:
                    history[b].append((m, batch.regrets(b)))
    return batch, history, rec


def _trajectory(batch, b, history, rec):
    avg_pi, avg_p = batch.averages(b)
    traj = LearnerTrajectory(
        average_pi=avg_pi,
        average_p=avg_p,
        last_pi=batch.unpack_pi(b, batch.pi[b]),
        last_p=batch.unpack_p(b, batch.p[b]),
        iterations=int(batch.n_reg[b]) if batch.n_reg[b] else int(batch.configs[b].iterations),
        regrets=history[b][-1][1] if history[b] else None,
        regret_history=history[b],
        diverged_at=int(batch.diverged[b]),
    )
    if rec is not None:
        traj.iterates_pi = rec[0][b]
        traj.iterates_p = rec[1][b]
    return traj


def run_no_regret(aux, config=None):
    """Simultaneous projected gradient descent for all 2n agents.

    Raises DivergenceError when gradients blow up (try a smaller step).
    """
    config = config or NoRegretConfig()
    game = aux.base if isinstance(aux, AuxiliaryGame) else aux
    batch, history, rec = _run([game], [config], record=config.record_trajectory)
    if batch.diverged[0] >= 0:
        raise DivergenceError(
            f"gradient play diverged at iteration {batch.diverged[0]} with step {config.step_size}; "
            "try a smaller step size"
        )
    return _trajectory(batch, 0, history, rec)


@dataclass
class SolveConfig:
    step_size: float = 5e-4
    iterations: int = 10_000
    seed: int = 0
    init: str = "uniform"
    average_from: int = 0
    retries: int = 3
    record_trajectory: bool = False
    compute_gaps: bool = True
    # when set, a run whose max gap exceeds this is repeated with half the
    # step, twice the iterations and averaging over the second half
    target_gap: float = None

    def learner(self, step=None, iterations=None, average_from=None):
        return NoRegretConfig(
            step_size=self.step_size if step is None else step,
            iterations=self.iterations if iterations is None else iterations,
            seed=self.seed,
            init=self.init,
            average_from=self.average_from if average_from is None else average_from,
            record_trajectory=self.record_trajectory,
            track_regret=False,
        )

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class SolveReport:
    strategies: list
    gaps: np.ndarray
    iterations: int
    step_size: float
    retries_used: int
    tractability: TractabilityRecord
    seed: int
    adversaries: list = None
    average_from: int = 0

    @property
    def max_gap(self):
        return float(np.max(self.gaps)) if self.gaps is not None else float("nan")

    def to_dict(self):
        return {
            "strategies": [s.tolist() for s in self.strategies],
            "gaps": None if self.gaps is None else [float(g) for g in self.gaps],
            "max_gap": self.max_gap,
            "iterations": self.iterations,
            "step_size": self.step_size,
            "average_from": self.average_from,
            "retries_used": self.retries_used,
            "tractability": self.tractability.to_dict() if self.tractability else None,
            "seed": self.seed,
        }


def solve_many(games, config=None, tractability=True):
    """Solve a list of same-shape games in compiled batches.

    A game whose gradients blow up is rerun with half the step; with
    ``config.target_gap`` set, a game that misses the target is rerun with
    half the step, twice the iterations and second-half averaging. At most
    ``config.retries`` reruns per game; the best finished run is reported.
    """
    config = config or SolveConfig()
    games = list(games)
    if not games:
        return []
    records = [check_tractability(g) if tractability else None for g in games]
    for k, rec in enumerate(records):
        if rec is not None and not rec.holds:
            log.warning("game %d: tractability condition fails (margins %s); no convergence guarantee",
                        k, np.round(rec.margins, 6).tolist())
    want_gaps = config.compute_gaps or config.target_gap is not None
    plan = {k: (config.step_size, int(config.iterations), int(config.average_from)) for k in range(len(games))}
    best = [None] * len(games)
    pending = list(range(len(games)))
    last_diverged = {}
    for attempt in range(config.retries + 1):
        groups = {}
        for k in pending:
            groups.setdefault(plan[k][1:], []).append(k)
        retry = []
        for (iters, avg_from), ks in groups.items():
            cfgs = [config.learner(plan[k][0], iters, avg_from) for k in ks]
            batch, history, rec = _run([games[k] for k in ks], cfgs, record=config.record_trajectory)
            for pos, k in enumerate(ks):
                step = plan[k][0]
                if batch.diverged[pos] >= 0:
                    log.info("game %d diverged with step %g; halving", k, step)
                    last_diverged[k] = step
                    plan[k] = (step * 0.5, iters, avg_from)
                    retry.append(k)
                    continue
                traj = _trajectory(batch, pos, history, rec)
                gaps = rqe_gap(games[k], traj.average_pi) if want_gaps else None
                report = SolveReport(traj.average_pi, gaps, iters, step, attempt, records[k],
                                     config.seed, traj.average_p, avg_from)
                if best[k] is None or (gaps is not None and report.max_gap < best[k].max_gap):
                    best[k] = report
                if config.target_gap is not None and report.max_gap > config.target_gap:
                    log.info("game %d gap %.3g above target; refining", k, report.max_gap)
                    plan[k] = (step * 0.5, 2 * iters, iters)
                    retry.append(k)
        pending = [k for k in retry if attempt < config.retries]
        if not pending:
            break
    failed = [k for k in range(len(games)) if best[k] is None]
    if failed:
        raise DivergenceError(
            f"gradient play diverged for {len(failed)} game(s) even at step {last_diverged[failed[0]]}; "
            "try a smaller step size"
        )
    if not config.compute_gaps:
        for r in best:
            r.gaps = None
    return best


def solve_rqe(game, config=None):
    """Approximate RQE of ``game`` from time-averaged gradient play."""
    return solve_many([game], config)[0]
