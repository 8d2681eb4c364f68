"""Compiled inner loop for simultaneous projected gradient play.

Games are batched along the leading axis and padded to the largest action
count. Player i's pairwise payoff block against j lives in ``R[b, i, j]``.
Adversary strategies are stored as ``p[b, i, r, j, :]`` where ``r`` is 0 for
aggregate risk and the own-action row for action-dependent risk.

Codes: penalty 0 = KL, 1 = reverse KL, 2 = TV; regularizer 0 = negative
entropy, 1 = log barrier.
"""

import numba
import numpy as np
from numba import njit, prange

# the bundled TBB is too old on some systems; the portable pool is enough here
numba.config.THREADING_LAYER = "workqueue"

PEN_CODES = {"kl": 0, "rkl": 1, "tv": 2}
REG_CODES = {"negentropy": 0, "logbarrier": 1}
ZETA = 1e-12
BLOWUP = 1e6


@njit(cache=True)
def _project_floor(v, k, out, u):
    """Simplex projection of v[:k] into out[:k], floored at ZETA.

    ``u`` is scratch space; a descending insertion sort beats allocating
    for the handful of actions seen here.
    """
    for m in range(k):
        x = v[m]
        q = m
        while q > 0 and u[q - 1] < x:
            u[q] = u[q - 1]
            q -= 1
        u[q] = x
    css = 0.0
    theta = 0.0
    for m in range(k):
        css += u[m]
        t = (css - 1.0) / (m + 1)
        if u[m] - t > 0:
            theta = t
    s = 0.0
    for m in range(k):
        x = v[m] - theta
        if x < ZETA:
            x = ZETA
        out[m] = x
        s += x
    for m in range(k):
        out[m] /= s


@njit(cache=True)
def _dpen(kind, p, q):
    if kind == 0:
        return np.log(p / q) + 1.0
    if kind == 1:
        return -q / p
    if p > q:
        return 1.0
    if p < q:
        return -1.0
    return 0.0


@njit(cache=True)
def _pen(kind, p, q, k):
    s = 0.0
    for c in range(k):
        if kind == 0:
            s += p[c] * np.log(p[c] / q[c])
        elif kind == 1:
            s += q[c] * np.log(q[c] / p[c])
        else:
            s += abs(p[c] - q[c])
    return s


@njit(cache=True)
def _dnu(kind, x):
    if kind == 0:
        return np.log(x) + 1.0
    return -1.0 / x


@njit(cache=True)
def _nu(kind, x, k):
    s = 0.0
    for a in range(k):
        if kind == 0:
            s += x[a] * np.log(x[a])
        else:
            s -= np.log(x[a])
    return s


@njit(cache=True)
def _grads(R, A, n, rows, pen_kind, pen_w, reg_kind, eps, pi, p, g_pi, g_p):
    """Gradients of every player's own loss at the current snapshot.

    Returns the largest gradient magnitude (used by the blow-up detector).
    """
    gmax = 0.0
    for i in range(n):
        Ai = A[i]
        w = pen_w[i]
        for a in range(Ai):
            g_pi[i, a] = eps[i] * _dnu(reg_kind[i], pi[i, a])
        ri = 1 if rows == 1 else Ai
        for r in range(ri):
            for j in range(n):
                if j == i:
                    continue
                Aj = A[j]
                for c in range(Aj):
                    g_p[i, r, j, c] = 0.0
        for j in range(n):
            if j == i:
                continue
            Aj = A[j]
            if rows == 1:
                for a in range(Ai):
                    acc = 0.0
                    for c in range(Aj):
                        acc += R[i, j, a, c] * p[i, 0, j, c]
                    g_pi[i, a] -= acc
                for c in range(Aj):
                    acc = 0.0
                    for a in range(Ai):
                        acc += pi[i, a] * R[i, j, a, c]
                    g_p[i, 0, j, c] = acc + w * _dpen(pen_kind[i], p[i, 0, j, c], pi[j, c])
            else:
                for a in range(Ai):
                    acc = 0.0
                    for c in range(Aj):
                        acc += R[i, j, a, c] * p[i, a, j, c]
                    g_pi[i, a] -= acc + w * _pen(pen_kind[i], p[i, a, j], pi[j], Aj)
                    for c in range(Aj):
                        g_p[i, a, j, c] = pi[i, a] * (R[i, j, a, c] + w * _dpen(pen_kind[i], p[i, a, j, c], pi[j, c]))
        for a in range(Ai):
            m = abs(g_pi[i, a])
            if m > gmax:
                gmax = m
        for r in range(ri):
            for j in range(n):
                if j == i:
                    continue
                for c in range(A[j]):
                    m = abs(g_p[i, r, j, c])
                    if m > gmax:
                        gmax = m
    return gmax


@njit(cache=True)
def _accumulate_regret(R, A, n, rows, pen_kind, pen_w, reg_kind, eps, pi, p,
                       c_sum, real_pi, lin, wsum, lq, q1, cq, real_p):
    """Running statistics from which external regrets are recovered later.

    Player i's loss is linear in its own strategy plus eps nu, so the
    comparator only needs the summed linear coefficients. Adversary losses
    split into a linear part and a penalty whose reference-dependent pieces
    are accumulated per row and opponent.
    """
    for i in range(n):
        Ai = A[i]
        w = pen_w[i]
        kind = pen_kind[i]
        coef = np.zeros(Ai)
        for j in range(n):
            if j == i:
                continue
            Aj = A[j]
            for a in range(Ai):
                r = 0 if rows == 1 else a
                acc = 0.0
                for c in range(Aj):
                    acc += R[i, j, a, c] * p[i, r, j, c]
                coef[a] -= acc
                if rows > 1:
                    coef[a] -= w * _pen(kind, p[i, a, j], pi[j], Aj)
            for r in range(1 if rows == 1 else Ai):
                wt = 1.0 if rows == 1 else pi[i, r]
                realized = 0.0
                for c in range(Aj):
                    if rows == 1:
                        acc = 0.0
                        for a in range(Ai):
                            acc += pi[i, a] * R[i, j, a, c]
                    else:
                        acc = wt * R[i, j, r, c]
                    lin[i, r, j, c] += acc
                    realized += acc * p[i, r, j, c]
                    if kind == 0:
                        lq[i, r, j, c] += wt * np.log(pi[j, c])
                    elif kind == 1:
                        q1[i, r, j, c] += wt * pi[j, c]
                if kind == 1:
                    cq[i, r, j] += wt * _nu(0, pi[j], Aj)
                realized += wt * w * _pen(kind, p[i, r, j], pi[j], Aj)
                real_p[i] += realized
        for r in range(1 if rows == 1 else Ai):
            wsum[i, r] += 1.0 if rows == 1 else pi[i, r]
        lin_val = 0.0
        for a in range(Ai):
            c_sum[i, a] += coef[a]
            lin_val += coef[a] * pi[i, a]
        real_pi[i] += lin_val + eps[i] * _nu(reg_kind[i], pi[i], Ai)


@njit(cache=True, parallel=True)
def run_batch(R, A, pen_kind, pen_w, reg_kind, eps, step, pi, p, pi_sum, p_sum, n_avg,
              t_start, t_stop, avg_start, scale0, diverged,
              c_sum, real_pi, lin, wsum, lq, q1, cq, real_p, n_reg, track_regret,
              rec_pi, rec_p):
    """Advance every game in the batch from iteration t_start to t_stop.

    State arrays are updated in place. A game whose gradients exceed
    BLOWUP times its initial scale is frozen and its iteration is written to
    ``diverged``.
    """
    B = R.shape[0]
    n = R.shape[1]
    Amax = R.shape[3]
    rows = p.shape[2]
    record = rec_pi.shape[1] > 0
    for b in prange(B):
        if diverged[b] >= 0:
            continue
        g_pi = np.zeros((n, Amax))
        g_p = np.zeros((n, rows, n, Amax))
        buf = np.zeros(Amax)
        out = np.zeros(Amax)
        scratch = np.zeros(Amax)
        Ab = A[b]
        for t in range(t_start, t_stop):
            if track_regret:
                _accumulate_regret(R[b], Ab, n, rows, pen_kind[b], pen_w[b], reg_kind[b], eps[b], pi[b], p[b],
                                   c_sum[b], real_pi[b], lin[b], wsum[b], lq[b], q1[b], cq[b], real_p[b])
                n_reg[b] += 1
            gmax = _grads(R[b], Ab, n, rows, pen_kind[b], pen_w[b], reg_kind[b], eps[b], pi[b], p[b], g_pi, g_p)
            if t == 0:
                scale0[b] = max(1.0, gmax)
            if not np.isfinite(gmax) or gmax > BLOWUP * scale0[b]:
                diverged[b] = t
                break
            h = step[b]
            for i in range(n):
                Ai = Ab[i]
                for a in range(Ai):
                    buf[a] = pi[b, i, a] - h * g_pi[i, a]
                _project_floor(buf, Ai, out, scratch)
                for a in range(Ai):
                    pi[b, i, a] = out[a]
                for r in range(1 if rows == 1 else Ai):
                    for j in range(n):
                        if j == i:
                            continue
                        Aj = Ab[j]
                        for c in range(Aj):
                            buf[c] = p[b, i, r, j, c] - h * g_p[i, r, j, c]
                        _project_floor(buf, Aj, out, scratch)
                        for c in range(Aj):
                            p[b, i, r, j, c] = out[c]
            if t + 1 >= avg_start:
                n_avg[b] += 1
                for i in range(n):
                    for a in range(Ab[i]):
                        pi_sum[b, i, a] += pi[b, i, a]
                    for r in range(rows):
                        for j in range(n):
                            for c in range(Amax):
                                p_sum[b, i, r, j, c] += p[b, i, r, j, c]
            if record:
                k = t - t_start
                rec_pi[b, k] = pi[b]
                rec_p[b, k] = p[b]
