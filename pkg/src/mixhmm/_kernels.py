"""Compiled per-subject conditional likelihoods on a grid of random-effect values.

The recursion is a scaled forward pass in linear space.  Emission densities
enter relative to state 0; the state-0 density, the per-step normaliser and
the Poisson log terms are accumulated separately and flushed to log space
before they can under- or overflow.  Everything that depends on the month
alone or on the random effect alone is exponentiated once outside the time
loop, leaving a single ``exp`` per step.

The parameter vector follows ``model.PARAM_NAMES``.
"""
import math

import numba as nb
import numpy as np

A0, A1, A2, B0, B1, B2, B3, G01, G10, D1, D2, DS, LAM, PI1 = range(14)

_FLUSH_LO = 1e-200
_FLUSH_HI = 1e200


@nb.njit(cache=True, inline="always")
def _expit(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@nb.njit(cache=True, inline="always")
def _bern(yv, e):
    # e = exp(-eta); Pr(y | eta) for a logistic model
    if yv == 1:
        return 1.0 / (1.0 + e)
    return e / (1.0 + e)


@nb.njit(cache=True, error_model="numpy")
def _subject_loglik(theta, y, x, lgx, ea, mb, lmb, n, u):
    """Log-likelihood of one subject's series given ``u``.

    ``ea = exp(-(log m + alpha0))``, ``mb = exp(log m + beta0 + beta2 t)``
    and ``lmb = log(mb)`` are per-month precomputations.
    """
    p01_0 = _expit(theta[G01] + u)
    p01_1 = _expit(theta[G01] + theta[D1] + u)
    p10_0 = _expit(theta[G10] + theta[DS] * u)
    p10_1 = _expit(theta[G10] + theta[D2] + theta[DS] * u)
    r1 = _expit(theta[PI1])
    ga = math.exp(-theta[A2] * u)
    gb = math.exp(theta[B3] * u)
    fa = math.exp(-theta[A1])
    b1 = theta[B1]
    eb1m1 = math.expm1(b1)
    b3u = theta[B3] * u

    ll = 0.0
    scale = 1.0
    a0 = 1.0 - r1
    a1 = r1
    for j in range(n):
        if j > 0:
            if y[j - 1] == 1:
                p01 = p01_1
                p10 = p10_1
            else:
                p01 = p01_0
                p10 = p10_0
            n0 = a0 * (1.0 - p01) + a1 * p10
            n1 = a0 * p01 + a1 * (1.0 - p10)
            a0 = n0
            a1 = n1
        e = ea[j] * ga
        yv = y[j]
        xv = x[j]
        bern0 = _bern(yv, e)
        bern1 = _bern(yv, e * fa)
        mu0 = mb[j] * gb
        d = xv * b1 - mu0 * eb1m1
        if d < 600.0:
            a1 *= (bern1 / bern0) * math.exp(d)
        else:
            # state 1 dominates; renormalise against it instead
            a0 *= math.exp(-d) * (bern0 / bern1)
            ll += d + math.log(bern1 / bern0)
        c = a0 + a1
        if not c > 0.0:
            return -np.inf
        a0 /= c
        a1 /= c
        scale *= c * bern0
        ll += xv * (lmb[j] + b3u) - mu0 - lgx[j]
        if scale < _FLUSH_LO or scale > _FLUSH_HI:
            if not scale > 0.0:
                return -np.inf
            ll += math.log(scale)
            scale = 1.0
    return ll + math.log(scale)


@nb.njit(cache=True, error_model="numpy")
def _month_terms(theta, logm, t):
    ea = np.exp(-(logm + theta[A0]))
    lmb = logm + theta[B0] + theta[B2] * t
    mb = np.exp(lmb)
    return ea, mb, lmb


@nb.njit(cache=True, error_model="numpy")
def node_loglik(theta, y, x, logm, t, lgx, lengths, nodes):
    """Conditional log-likelihood of every subject at every node.

    ``nodes`` has shape (subjects, K); the result has the same shape.
    """
    n_sub, n_nodes = nodes.shape
    ea, mb, lmb = _month_terms(theta, logm, t)
    out = np.empty((n_sub, n_nodes))
    for i in range(n_sub):
        n = lengths[i]
        for k in range(n_nodes):
            out[i, k] = _subject_loglik(
                theta, y[i], x[i], lgx[i], ea[i], mb[i], lmb[i], n, nodes[i, k]
            )
    return out


@nb.njit(cache=True, error_model="numpy")
def subject_marginals(theta, y, x, logm, t, lgx, lengths, nodes, base_log_weights):
    """Per-subject log marginal likelihood by quadrature on fixed nodes.

    ``base_log_weights`` integrate against Lebesgue measure; the Gaussian
    random-effect density at the current ``lam`` is added here so the
    nodes can stay frozen while the variance moves.
    """
    n_sub, n_nodes = nodes.shape
    lam = theta[LAM]
    inv_var = math.exp(-lam)
    log_norm = -0.5 * (math.log(2.0 * math.pi) + lam)
    ea, mb, lmb = _month_terms(theta, logm, t)
    out = np.empty(n_sub)
    terms = np.empty(n_nodes)
    for i in range(n_sub):
        n = lengths[i]
        mx = -np.inf
        for k in range(n_nodes):
            u = nodes[i, k]
            v = (
                base_log_weights[i, k]
                + log_norm
                - 0.5 * u * u * inv_var
                + _subject_loglik(theta, y[i], x[i], lgx[i], ea[i], mb[i], lmb[i], n, u)
            )
            terms[k] = v
            if v > mx:
                mx = v
        if not math.isfinite(mx):
            out[i] = mx
            continue
        s = 0.0
        for k in range(n_nodes):
            s += math.exp(terms[k] - mx)
        out[i] = mx + math.log(s)
    return out
