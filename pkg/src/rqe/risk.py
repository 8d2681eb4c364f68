"""Convex risk measures in dual (penalty) form.

A risk spec names a penalty ``D(p, q)`` and its level. The induced risk of a
payoff vector ``X`` under reference ``q`` is ``sup_p E_p[-X] - D(p, q)``.
Closed forms cover the built-in penalties; ``inner_max_oracle`` handles any
concave objective over a product of simplices.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, linprog
from scipy.special import logsumexp, softmax

from .errors import ConvergenceError, InvalidInputError
from .simplex import ProductStrategy, floor_interior, kl, kl_grad, project_simplex, reverse_kl, reverse_kl_grad, total_variation

PENALTY_ALIASES = {
    "kl": "kl",
    "kullbackleibler": "kl",
    "rkl": "rkl",
    "reversekl": "rkl",
    "tv": "tv",
    "l1": "tv",
    "totalvariation": "tv",
}


def canonical_penalty(name):
    key = str(name).lower().replace("_", "").replace("-", "").replace(" ", "")
    if key not in PENALTY_ALIASES:
        raise InvalidInputError(f"unknown penalty kind {name!r}")
    return PENALTY_ALIASES[key]


@dataclass(frozen=True)
class RiskSpec:
    """Penalty kind plus level.

    For ``kl`` and ``rkl`` the level is the risk aversion tau and the penalty
    weight is 1/tau. For ``tv`` the level is the weight lambda itself.
    """

    kind: str
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_penalty(self.kind))
        tau = float(self.tau)
        if not np.isfinite(tau):
            raise InvalidInputError("risk level must be finite")
        if self.kind == "tv":
            if tau < 0:
                raise InvalidInputError("TV weight must be >= 0")
        elif tau <= 0:
            raise InvalidInputError("tau must be > 0")
        object.__setattr__(self, "tau", tau)

    @classmethod
    def kl(cls, tau):
        return cls("kl", tau)

    @classmethod
    def rkl(cls, tau):
        return cls("rkl", tau)

    @classmethod
    def tv(cls, lam):
        return cls("tv", lam)

    @property
    def weight(self):
        return self.tau if self.kind == "tv" else 1.0 / self.tau

    @property
    def lipschitz(self):
        """l1-Lipschitz constant of the penalty in its reference argument, if finite."""
        return self.tau if self.kind == "tv" else None

    def divergence(self, p, q):
        """Unweighted divergence."""
        if self.kind == "kl":
            return kl(p, q)
        if self.kind == "rkl":
            return reverse_kl(p, q)
        return total_variation(p, q)

    def penalty(self, p, q):
        return self.weight * self.divergence(p, q)

    def penalty_grad(self, p, q):
        """Gradient (subgradient for TV) of the weighted penalty in ``p``."""
        if self.kind == "kl":
            g = kl_grad(p, q)[0]
        elif self.kind == "rkl":
            g = reverse_kl_grad(p, q)[0]
        else:
            g = np.sign(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))
        return self.weight * g

    def to_dict(self):
        return {"kind": self.kind, "tau": self.tau}


@dataclass
class RiskEvaluation:
    value: float
    maximizer: ProductStrategy
    exact: bool
    # certified optimality gap for oracle results; 0 for closed forms
    gap: float = 0.0
    iterations: int = 0


def entropic_risk(X, pi, tau):
    """(1/tau) log sum_j pi_j exp(-tau X_j)."""
    X = np.asarray(X, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if not tau > 0:
        raise InvalidInputError("tau must be > 0")
    return float(logsumexp(-tau * X, b=pi) / tau)


def _check_pair(X, pi):
    X = np.asarray(X, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if X.shape != pi.shape or X.ndim != 1:
        raise InvalidInputError(f"payoff shape {X.shape} does not match reference {pi.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("payoffs must be finite")
    return X, pi


def kl_maximizer(y, pi, tau):
    """Gibbs tilt attaining sup_p <p, y> - KL(p, pi)/tau."""
    with np.errstate(divide="ignore"):
        logits = np.log(pi) + tau * y
    return softmax(logits)


def rkl_maximizer(y, pi, tau):
    """Maximizer of <p, y> - (1/tau) sum pi log(pi/p) over the simplex.

    Stationarity gives p_k = pi_k / (tau (mu - y_k)) on the support of pi; the
    multiplier mu solves sum_k p_k = 1 (monotone in mu, bracketed below).
    Mass outside the support only goes to an unsupported outcome whose payoff
    exceeds mu.
    """
    support = pi > 0
    ys = y[support]
    ps = pi[support]
    top = ys.max()
    gaps = tau * (top - ys)

    def excess(t):
        return np.sum(ps / (t + gaps)) - 1.0

    m = np.argmax(ys)
    lo = ps[m]
    # the root sits at an endpoint when pi has one supported outcome or y is flat on the support
    if lo >= 1.0 or excess(1.0) >= 0:
        t = 1.0
    elif excess(lo) <= 0:
        t = lo
    else:
        t = brentq(excess, lo, 1.0, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500)
    p = np.zeros_like(pi)
    mu = top + t / tau
    outside = ~support
    if outside.any() and y[outside].max() > mu:
        # an unsupported outcome beats the interior multiplier: cap mu there
        k = np.flatnonzero(outside)[np.argmax(y[outside])]
        mu = y[k]
        p[support] = ps / (tau * (mu - ys))
        p[k] = max(0.0, 1.0 - p[support].sum())
    else:
        p[support] = ps / (t + gaps)
    return p / p.sum()


def tv_maximizer(y, pi, lam):
    """Move mass from outcomes worse than ``max(y) - 2 lam`` onto the best outcome."""
    best = int(np.argmax(y))
    p = np.array(pi, dtype=float)
    moved = y < y[best] - 2.0 * lam
    p[best] += p[moved].sum()
    p[moved] = 0.0
    return p


def tv_risk_value(y, pi, lam):
    return float(np.dot(pi, np.maximum(y, y.max() - 2.0 * lam)))


def dual_risk(X, pi, spec, method="auto", config=None):
    """sup over p of E_p[-X] - D(p, pi)."""
    X, pi = _check_pair(X, pi)
    y = -X
    if method == "oracle":
        def objective(p):
            return float(p @ y) - spec.penalty(p, pi)

        def supergradient(p):
            return y - spec.penalty_grad(p, pi)

        return inner_max_oracle(objective, supergradient, (len(pi),), config)
    if method != "auto":
        raise InvalidInputError(f"unknown method {method!r}")
    if spec.kind == "kl":
        p = kl_maximizer(y, pi, spec.tau)
    elif spec.kind == "rkl":
        p = rkl_maximizer(y, pi, spec.tau)
    else:
        p = tv_maximizer(y, pi, spec.tau)
        return RiskEvaluation(tv_risk_value(y, pi, spec.tau), ProductStrategy((p,)), True)
    value = float(p @ y) - spec.penalty(p, pi)
    return RiskEvaluation(value, ProductStrategy((p,)), True)


@dataclass
class OracleConfig:
    tolerance: float = 1e-7
    max_iters: int = 50_000
    seed: int = 0
    init: str = "uniform"
    # how often the cutting-plane certificate is refreshed
    lp_every: int = 10
    max_cuts: int = 400
    extra: dict = field(default_factory=dict)


def _project_blocks(x, bounds):
    out = np.empty_like(x)
    for a, b in bounds:
        out[a:b] = floor_interior(project_simplex(x[a:b]))
    return out


def _mirror_step(x, g, step, bounds):
    """Entropic (multiplicative-weights) step, block by block."""
    out = np.empty_like(x)
    for a, b in bounds:
        z = np.log(x[a:b]) + step * g[a:b]
        out[a:b] = floor_interior(softmax(z))
    return out


def _center(g, bounds):
    """Remove per-block means; inner products with zero-sum directions are
    unchanged but no longer drown in the rounding of a large common offset."""
    out = np.array(g, dtype=float)
    for a, b in bounds:
        out[a:b] -= out[a:b].mean()
    return out


def _block_max(g, bounds):
    return sum(g[a:b].max() for a, b in bounds)


def _cut_model(cuts_c, cuts_g, bounds, d):
    """Upper-bound the concave objective from its collected linearizations.

    The LP maximizes min_t (c_t + <g_t, z>) over the product of simplices. Its
    dual weights form a convex combination of cuts; the bound is re-evaluated
    exactly from those weights so solver tolerances cannot make it invalid.
    Returns (bound, LP maximizer).
    """
    c = np.asarray(cuts_c)
    G = np.asarray(cuts_g)
    m = len(c)
    cost = np.zeros(d + 1)
    cost[-1] = -1.0
    A_ub = np.hstack([-G, np.ones((m, 1))])
    A_eq = np.zeros((len(bounds), d + 1))
    for k, (a, b) in enumerate(bounds):
        A_eq[k, a:b] = 1.0
    res = linprog(cost, A_ub=A_ub, b_ub=c, A_eq=A_eq, b_eq=np.ones(len(bounds)),
                  bounds=[(0, None)] * d + [(None, None)], method="highs")
    if res.status != 0:
        return np.inf, None
    lam = np.abs(res.ineqlin.marginals)
    if lam.sum() <= 0:
        return np.inf, res.x[:d]
    lam /= lam.sum()
    return float(lam @ c + _block_max(lam @ G, bounds)), res.x[:d]


def inner_max_oracle(objective, supergradient, sizes, config=None):
    """Maximize a concave function over a product of simplices.

    Runs supergradient ascent in the entropic geometry (multiplicative
    updates, which keep iterates interior and stay well conditioned when the
    optimum has tiny coordinates) with a backtracking step. Every
    supergradient also yields a linear upper bound on the objective, and an LP
    over the collected cuts gives a certified upper bound on the optimum (it
    also proposes a new point whenever ascent stalls at a kink). Stops once
    best value and bound agree to ``config.tolerance``.
    """
    config = config or OracleConfig()
    sizes = tuple(int(s) for s in sizes)
    if not sizes or min(sizes) < 1:
        raise InvalidInputError("feasible set needs at least one non-empty simplex")
    ends = np.cumsum(sizes)
    bounds = list(zip(ends - np.array(sizes), ends))
    d = int(ends[-1])
    if config.init == "uniform":
        x = np.concatenate([np.full(s, 1.0 / s) for s in sizes])
    else:
        rng = np.random.default_rng(config.seed)
        x = np.concatenate([rng.dirichlet(np.ones(s)) for s in sizes])

    fx = objective(x)
    gx = supergradient(x)
    scale = np.linalg.norm(gx)
    step = 0.5 / scale if scale > 0 else 1.0
    best_val, best_x = fx, x
    upper = np.inf
    cuts_c, cuts_g = [], []

    def add_cut(val, grad, point):
        # very steep cuts (at floored boundary points) only hurt LP conditioning
        if np.abs(grad).max() > 1e8 * max(scale, 1.0):
            return
        cuts_c.append(val - grad @ point)
        cuts_g.append(grad)
        if len(cuts_c) > config.max_cuts:
            del cuts_c[0], cuts_g[0]

    add_cut(fx, gx, x)
    for it in range(1, config.max_iters + 1):
        # Frank-Wolfe bound at the current point
        gc = _center(gx, bounds)
        upper = min(upper, fx + _block_max(gc, bounds) - gc @ x)
        lp_point = None
        if it % config.lp_every == 0 or step < 1e-14:
            lp_val, lp_point = _cut_model(cuts_c, cuts_g, bounds, d)
            upper = min(upper, lp_val)
        if upper - best_val <= config.tolerance:
            return RiskEvaluation(best_val, ProductStrategy.from_flat(best_x, sizes), False,
                                  gap=max(upper - best_val, 0.0), iterations=it)

        trial = _mirror_step(x, gx, step, bounds)
        f_trial = objective(trial)
        g_trial = supergradient(trial) if np.isfinite(f_trial) else None
        ok = g_trial is not None and np.all(np.isfinite(g_trial))
        # accept when the objective visibly rises, or when the slope at the
        # trial point still points forward (concavity then rules out a drop;
        # this keeps progress going once value differences hit roundoff)
        move = trial - x
        if ok and (f_trial >= fx + 0.25 * gc @ move or _center(g_trial, bounds) @ move >= 0):
            x, fx, gx = trial, f_trial, g_trial
            step *= 1.5
        else:
            step *= 0.5
            if ok:
                add_cut(f_trial, g_trial, trial)
        if lp_point is not None:
            lp_point = _project_blocks(lp_point, bounds)
            f_lp = objective(lp_point)
            if np.isfinite(f_lp):
                g_lp = supergradient(lp_point)
                add_cut(f_lp, g_lp, lp_point)
                if f_lp > fx:
                    x, fx, gx = lp_point, f_lp, g_lp
                    step = max(step, 0.5 / max(np.linalg.norm(gx), 1e-300))
        if fx > best_val:
            best_val, best_x = fx, x
        add_cut(fx, gx, x)

    raise ConvergenceError(
        f"inner maximization did not reach tolerance {config.tolerance} in {config.max_iters} iterations",
        best=ProductStrategy.from_flat(best_x, sizes),
        residual=upper - best_val,
    )
