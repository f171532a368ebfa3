"""Independent reference computations used by the tests.

Nothing here calls the package's recursions or quadrature: hidden paths are
enumerated exhaustively, densities are written out directly from their
closed forms, and integrals over the random effect use a fine trapezoid
over a wide grid.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import stats
from scipy.special import expit, logsumexp


def _log_emission(p, y, x, miles, t, b, u):
    pi = expit(math.log(miles) + p.alpha0 + p.alpha1 * b + p.alpha2 * u)
    mu = np.exp(math.log(miles) + p.beta0 + p.beta1 * b + p.beta2 * t + p.beta3 * u)
    log_bern = np.log(pi) if y == 1 else np.log1p(-pi)
    return log_bern + x * np.log(mu) - mu - math.lgamma(x + 1)


def _log_trans(p, l, m, y_prev, u):
    if l == 0:
        p01 = expit(p.gamma01 + p.delta1 * y_prev + u)
        return np.log(p01) if m == 1 else np.log1p(-p01)
    p10 = expit(p.gamma10 + p.delta2 * y_prev + p.delta_star * u)
    return np.log(p10) if m == 0 else np.log1p(-p10)


def path_logprobs(p, t, miles, y, x, u):
    """Log joint probability of the observations and every hidden path.

    Returns ``(paths, logp)`` with ``paths`` (2^n, n) and ``logp`` of shape
    (2^n,) + shape(u).
    """
    u = np.asarray(u, dtype=float)
    n = len(y)
    paths = np.array(list(itertools.product((0, 1), repeat=n)))
    r1 = expit(p.pi1)
    # per-step tables, then one gather per path
    emis = np.array([[_log_emission(p, y[j], x[j], miles[j], t[j], b, u) for b in (0, 1)]
                     for j in range(n)])
    trans = np.array([[[_log_trans(p, l, m, y[j - 1], u) for m in (0, 1)] for l in (0, 1)]
                      for j in range(1, n)])
    out = np.empty((len(paths),) + u.shape)
    for k, path in enumerate(paths):
        lp = np.full(u.shape, math.log(r1) if path[0] == 1 else math.log1p(-r1))
        for j in range(n):
            lp = lp + emis[j, path[j]]
            if j > 0:
                lp = lp + trans[j - 1, path[j - 1], path[j]]
        out[k] = lp
    return paths, out


def cond_lik(p, s, u) -> float:
    """Sum over all hidden paths of the joint probability given ``u``."""
    _, lp = path_logprobs(p, s.t, s.miles, s.y, s.x, float(u))
    return float(np.exp(lp).sum())


def backward_tail(p, s, u, j, m) -> float:
    """``Pr(obs after j | state_j = m, u)`` by enumerating suffix paths."""
    n = len(s)
    total = 0.0
    for tail in itertools.product((0, 1), repeat=n - 1 - j):
        states = (m,) + tail
        lp = 0.0
        for k in range(1, len(states)):
            jj = j + k
            lp += _log_trans(p, states[k - 1], states[k], s.y[jj - 1], u)
            lp += _log_emission(p, s.y[jj], s.x[jj], s.miles[jj], s.t[jj], states[k], u)
        total += math.exp(lp)
    return total


def posterior_given_u(p, s, u) -> np.ndarray:
    paths, lp = path_logprobs(p, s.t, s.miles, s.y, s.x, float(u))
    w = np.exp(lp - logsumexp(lp))
    return np.array([w[paths[:, j] == 1].sum() for j in range(len(s))])


def viterbi(p, s, u) -> np.ndarray:
    paths, lp = path_logprobs(p, s.t, s.miles, s.y, s.x, float(u))
    return paths[int(np.argmax(lp))]


def u_grid(p, points=20001, width=12.0):
    sd = math.sqrt(math.exp(p.lam))
    u = np.linspace(-width * sd, width * sd, points)
    return u, stats.norm.logpdf(u, scale=sd)


def marginal_loglik(p, s, points=20001, width=12.0) -> float:
    """``log int sum_paths Pr(obs, path | u) N(u; 0, e^lam) du`` by trapezoid."""
    u, lprior = u_grid(p, points, width)
    _, lp = path_logprobs(p, s.t, s.miles, s.y, s.x, u)
    f = np.exp(logsumexp(lp, axis=0) + lprior)
    return float(math.log(np.trapezoid(f, u)))


def marginal_posterior_state(p, s, points=20001, width=12.0) -> np.ndarray:
    u, lprior = u_grid(p, points, width)
    paths, lp = path_logprobs(p, s.t, s.miles, s.y, s.x, u)
    joint = np.exp(lp + lprior - np.max(lp + lprior))
    den = np.trapezoid(joint.sum(axis=0), u)
    return np.array([np.trapezoid(joint[paths[:, j] == 1].sum(axis=0), u) / den for j in range(len(s))])


def one_step_ahead(p, t, miles, y, x, miles_next, t_next, points=20001, width=12.0) -> float:
    """Predictive CNC probability for the month after the given history.

    Enumerates history paths together with the next hidden state.
    """
    u, lprior = u_grid(p, points, width)
    paths, lp = path_logprobs(p, t, miles, y, x, u)
    num = np.zeros_like(u)
    den = np.zeros_like(u)
    shift = np.max(lp + lprior)
    for k, path in enumerate(paths):
        w = np.exp(lp[k] + lprior - shift)
        den += w
        for m in (0, 1):
            tr = np.exp(_log_trans(p, path[-1], m, y[-1], u))
            pi = expit(math.log(miles_next) + p.alpha0 + p.alpha1 * m + p.alpha2 * u)
            num += w * tr * pi
    return float(np.trapezoid(num, u) / np.trapezoid(den, u))


def mann_whitney_auc(scores, labels) -> float:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    u = stats.mannwhitneyu(pos, neg, alternative="two-sided").statistic
    return float(u / (len(pos) * len(neg)))


def fixed_effect_loglik(p, s) -> float:
    """Path enumeration at ``u = 0`` (no random effect)."""
    return math.log(cond_lik(p, s, 0.0))
