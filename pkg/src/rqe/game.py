"""Normal-form games with risk-adjusted, regularized losses."""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from .errors import InvalidInputError
from .risk import OracleConfig, RiskSpec, dual_risk, entropic_risk, inner_max_oracle, kl_maximizer
from .simplex import REGULARIZERS, check_strategy, logit_response

REG_ALIASES = {"negentropy": "negentropy", "entropy": "negentropy", "logbarrier": "logbarrier", "barrier": "logbarrier"}
RISK_MODES = ("aggregate", "action_dependent")


def canonical_regularizer(name):
    key = str(name).lower().replace("_", "").replace("-", "").replace(" ", "")
    if key not in REG_ALIASES:
        raise InvalidInputError(f"unknown regularizer kind {name!r}")
    return REG_ALIASES[key]


@dataclass(frozen=True)
class RationalitySpec:
    """Regularizer nu and bounded-rationality weight epsilon."""

    kind: str
    epsilon: float

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_regularizer(self.kind))
        eps = float(self.epsilon)
        if not (np.isfinite(eps) and eps > 0):
            raise InvalidInputError(f"epsilon must be positive and finite, got {self.epsilon}")
        object.__setattr__(self, "epsilon", eps)

    def nu(self, pi):
        return REGULARIZERS[self.kind][0](pi)

    def nu_grad(self, pi):
        return REGULARIZERS[self.kind][1](pi)

    def nu_hess_diag(self, pi):
        return REGULARIZERS[self.kind][2](pi)

    def value(self, pi):
        return self.epsilon * self.nu(pi)

    def to_dict(self):
        return {"kind": self.kind, "epsilon": self.epsilon}


def _as_tuple(x, n, name):
    if x is None:
        return None
    if not isinstance(x, (list, tuple)):
        x = (x,) * n
    x = tuple(x)
    if len(x) != n:
        raise InvalidInputError(f"{name} needs one entry per player ({n}), got {len(x)}")
    return x


@dataclass(frozen=True)
class FlattenedPayoff:
    """Own actions as rows against the concatenated opponent actions."""

    player: int
    opponents: tuple
    blocks: tuple

    @property
    def matrix(self):
        return np.hstack(self.blocks)


def pairwise_blocks(tensor, i):
    """Best additive (polymatrix) fit of a payoff tensor from player i's view.

    Block j is the payoff of i against j with the remaining opponents playing
    uniformly, minus a share of the all-uniform baseline chosen so that
    sum_j pi_i^T B_j pi_j reproduces the multilinear expectation exactly for
    two players and for any tensor that is additive across opponents.
    """
    n = tensor.ndim
    T = np.moveaxis(tensor, i, 0)
    others = [k for k in range(n) if k != i]
    if n == 1:
        return ()
    base = T.reshape(T.shape[0], -1).mean(axis=1)
    share = (n - 2) / (n - 1)
    blocks = []
    for pos, j in enumerate(others):
        axes = tuple(1 + q for q in range(len(others)) if q != pos)
        B = T.mean(axis=axes) if axes else T
        blocks.append(B - share * base[:, None])
    return tuple(blocks)


@dataclass(frozen=True, eq=False)
class MatrixGameSpec:
    """n-player normal-form game.

    ``payoffs[i]`` is player i's reward tensor indexed by the joint action.
    Risk and rationality specs may be left empty for a payoff-only game and
    filled in later with ``with_params``.
    """

    payoffs: tuple
    risk: tuple = None
    rationality: tuple = None
    risk_mode: str = "aggregate"

    def __post_init__(self):
        payoffs = tuple(np.array(R, dtype=float) for R in self.payoffs)
        if not payoffs:
            raise InvalidInputError("game needs at least one player")
        n = len(payoffs)
        shape = payoffs[0].shape
        if len(shape) != n:
            raise InvalidInputError(f"payoff tensors must have {n} axes, got shape {shape}")
        for k, R in enumerate(payoffs):
            if R.shape != shape:
                raise InvalidInputError(f"payoff tensor {k} has shape {R.shape}, expected {shape}")
            if not np.all(np.isfinite(R)):
                raise InvalidInputError(f"payoff tensor {k} has non-finite entries")
            R.setflags(write=False)
        if min(shape) < 1:
            raise InvalidInputError("every player needs at least one action")
        object.__setattr__(self, "payoffs", payoffs)
        risk = _as_tuple(self.risk, n, "risk")
        if risk is not None and not all(isinstance(r, RiskSpec) for r in risk):
            raise InvalidInputError("risk entries must be RiskSpec")
        rat = _as_tuple(self.rationality, n, "rationality")
        if rat is not None and not all(isinstance(r, RationalitySpec) for r in rat):
            raise InvalidInputError("rationality entries must be RationalitySpec")
        object.__setattr__(self, "risk", risk)
        object.__setattr__(self, "rationality", rat)
        mode = str(self.risk_mode).lower().replace("-", "_")
        if mode not in RISK_MODES:
            raise InvalidInputError(f"risk_mode must be one of {RISK_MODES}, got {self.risk_mode!r}")
        object.__setattr__(self, "risk_mode", mode)

    @property
    def n(self):
        return len(self.payoffs)

    @property
    def action_counts(self):
        return tuple(self.payoffs[0].shape)

    def with_params(self, risk=None, rationality=None, risk_mode=None):
        return MatrixGameSpec(
            self.payoffs,
            risk if risk is not None else self.risk,
            rationality if rationality is not None else self.rationality,
            risk_mode or self.risk_mode,
        )

    @cached_property
    def flattened(self):
        return tuple(
            FlattenedPayoff(i, tuple(j for j in range(self.n) if j != i), pairwise_blocks(self.payoffs[i], i))
            for i in range(self.n)
        )

    def require_params(self):
        if self.risk is None or self.rationality is None:
            raise InvalidInputError("game has no risk/rationality parameters; use with_params")


def flattened_payoff(game, i):
    _check_player(game, i)
    return game.flattened[i]


def _check_player(game, i):
    if not (isinstance(i, (int, np.integer)) and 0 <= i < game.n):
        raise InvalidInputError(f"player index {i} out of range for {game.n} players")


def check_profile(game, strategies):
    if len(strategies) != game.n:
        raise InvalidInputError(f"expected {game.n} strategies, got {len(strategies)}")
    out = []
    for k, (s, a) in enumerate(zip(strategies, game.action_counts)):
        s = check_strategy(s, f"strategy of player {k}")
        if s.size != a:
            raise InvalidInputError(f"player {k} has {a} actions, strategy has {s.size}")
        out.append(s)
    return out


def expected_utility(game, i, strategies):
    """Multilinear expectation of player i's reward under independent mixing."""
    _check_player(game, i)
    strategies = check_profile(game, strategies)
    T = game.payoffs[i]
    for s in reversed(strategies):
        T = T @ s
    return float(T)


def risk_terms(game, i, strategies, own=None):
    """Risk loss of player i and its gradient in the own strategy.

    ``own`` replaces player i's strategy (used when searching deviations).
    """
    risk = game.risk[i]
    pi_i = strategies[i] if own is None else own
    flat = game.flattened[i]
    A = game.action_counts[i]
    value = 0.0
    grad = np.zeros(A)
    if game.risk_mode == "aggregate":
        for j, B in zip(flat.opponents, flat.blocks):
            X = B.T @ pi_i
            q = strategies[j]
            if risk.kind == "kl":
                value += entropic_risk(X, q, risk.tau)
                p = kl_maximizer(-X, q, risk.tau)
            else:
                ev = dual_risk(X, q, risk)
                value += ev.value
                p = ev.maximizer.parts[0]
            grad -= B @ p
        return value, grad
    # action-dependent: one adversary per own action, loss linear in pi_i
    for j, B in zip(flat.opponents, flat.blocks):
        q = strategies[j]
        for a in range(A):
            grad[a] += dual_risk(B[a], q, risk).value
    return float(grad @ pi_i), grad


def aggregate_risk_loss(game, i, strategies):
    _check_player(game, i)
    game.require_params()
    if game.risk_mode != "aggregate":
        raise InvalidInputError("aggregate_risk_loss needs risk_mode='aggregate'")
    strategies = check_profile(game, strategies)
    return risk_terms(game, i, strategies)[0]


def action_dependent_risk_loss(game, i, strategies):
    _check_player(game, i)
    game.require_params()
    if game.risk_mode != "action_dependent":
        raise InvalidInputError("action_dependent_risk_loss needs risk_mode='action_dependent'")
    strategies = check_profile(game, strategies)
    return risk_terms(game, i, strategies)[0]


def risk_loss(game, i, strategies):
    _check_player(game, i)
    game.require_params()
    return risk_terms(game, i, check_profile(game, strategies))[0]


def regularized_loss(game, i, strategies):
    """Risk loss plus epsilon_i nu_i(pi_i); +inf on the boundary for the log barrier."""
    _check_player(game, i)
    game.require_params()
    strategies = check_profile(game, strategies)
    reg = game.rationality[i]
    nu = reg.value(strategies[i])
    if not np.isfinite(nu):
        return float("inf")
    return risk_terms(game, i, strategies)[0] + nu


def _logbarrier_linear_minimizer(c, eps):
    """argmin <c, pi> - eps sum log pi over the simplex: pi_k = eps / (c_k + mu)."""
    c = c - c.min()
    A = c.size
    # mu in (0, eps*A]: at mu = eps the first term alone is 1; at eps*A the sum is <= 1
    def excess(mu):
        return np.sum(eps / (c + mu)) - 1.0

    lo, hi = eps, eps * A
    if excess(hi) > 0 or excess(lo) < 0:
        mu = lo if abs(excess(lo)) < abs(excess(hi)) else hi
    else:
        mu = brentq(excess, lo, hi, xtol=1e-16 * max(1.0, hi), rtol=4 * np.finfo(float).eps, maxiter=500)
    pi = eps / (c + mu)
    return pi / pi.sum()


BR_TOLERANCE = 1e-10


def best_response(game, i, strategies, tolerance=BR_TOLERANCE, max_iters=100_000):
    """Minimize player i's regularized loss against fixed opponents.

    Returns ``(strategy, value)``. The action-dependent loss is linear in the
    own strategy, so the minimizer has a closed form (up to a scalar root for
    the log barrier). The aggregate loss goes through the certified
    inner-maximization oracle applied to the negated objective.
    """
    _check_player(game, i)
    game.require_params()
    strategies = check_profile(game, strategies)
    reg = game.rationality[i]
    A = game.action_counts[i]
    if A == 1:
        one = np.ones(1)
        return one, regularized_loss(game, i, [one if k == i else s for k, s in enumerate(strategies)])
    if game.risk_mode == "action_dependent":
        _, c = risk_terms(game, i, strategies)
        if reg.kind == "negentropy":
            pi = logit_response(c, reg.epsilon)
        else:
            pi = _logbarrier_linear_minimizer(c, reg.epsilon)
        own = [pi if k == i else s for k, s in enumerate(strategies)]
        return pi, regularized_loss(game, i, own)

    eps = reg.epsilon

    def neg_obj(x):
        nu = reg.nu(x)
        if not np.isfinite(nu):
            return -np.inf
        return -(risk_terms(game, i, strategies, own=x)[0] + eps * nu)

    def neg_grad(x):
        return -(risk_terms(game, i, strategies, own=x)[1] + eps * reg.nu_grad(x))

    ev = inner_max_oracle(neg_obj, neg_grad, (A,), OracleConfig(tolerance=tolerance, max_iters=max_iters))
    pi = ev.maximizer.parts[0]
    own = [pi if k == i else s for k, s in enumerate(strategies)]
    return pi, regularized_loss(game, i, own)


def rqe_gap(game, strategies):
    """Per-player regularized loss minus best-response loss."""
    game.require_params()
    strategies = check_profile(game, strategies)
    gaps = np.empty(game.n)
    for i in range(game.n):
        gaps[i] = regularized_loss(game, i, strategies) - best_response(game, i, strategies)[1]
    return gaps
