"""Forward-backward recursions conditional on the random effect.

The generic recursions (:func:`log_forward`, :func:`log_backward`,
:func:`viterbi_path`) work for any number of states and broadcast over
leading batch dimensions, which is how a whole quadrature grid of random
effect values is pushed through one subject at once.  The model-bound
wrappers below them take a :class:`~mixhmm.model.ModelParams` and a
:class:`~mixhmm.model.SubjectSeries`.

All quantities are kept in log space.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from scipy.special import log_expit, logsumexp

from .model import ModelParams, SubjectSeries, ValidationError, emission_loglik

__all__ = [
    "FBResult",
    "log_forward",
    "log_backward",
    "viterbi_path",
    "log_emissions",
    "log_transitions",
    "log_initial",
    "forward_pass",
    "backward_pass",
    "forward_backward",
    "state_posterior_given_u",
    "viterbi_given_u",
    "count_steps",
]


class _StepCounter:
    def __init__(self):
        self.steps = 0


_counters: list[_StepCounter] = []


@contextmanager
def count_steps():
    """Count recursion steps executed inside the block.

    >>> with count_steps() as c:
    ...     _ = forward_pass(p, s, 0.0)
    >>> c.steps
    """
    counter = _StepCounter()
    _counters.append(counter)
    try:
        yield counter
    finally:
        _counters.remove(counter)


def _tick(n=1):
    for c in _counters:
        c.steps += n


@dataclass(frozen=True)
class FBResult:
    log_forward: np.ndarray
    log_backward: np.ndarray | None
    cond_loglik: float | np.ndarray


def log_forward(log_init, log_trans, log_emis):
    """Log forward quantities.

    Parameters
    ----------
    log_init : (..., K)
    log_trans : (..., n-1, K, K)
        ``log_trans[..., j, l, m]`` is the log probability of moving from
        ``l`` at index ``j`` to ``m`` at index ``j + 1``.
    log_emis : (..., n, K)

    Returns
    -------
    (..., n, K) array of ``log Pr(obs_1..j, state_j = m)``.
    """
    log_emis = np.asarray(log_emis, dtype=float)
    n = log_emis.shape[-2]
    out = np.empty(np.broadcast_shapes(log_emis.shape, np.shape(log_init)[:-1] + (n, log_emis.shape[-1])))
    out[..., 0, :] = log_init + log_emis[..., 0, :]
    _tick()
    for j in range(1, n):
        out[..., j, :] = (
            logsumexp(out[..., j - 1, :, None] + log_trans[..., j - 1, :, :], axis=-2)
            + log_emis[..., j, :]
        )
        _tick()
    return out


def log_backward(log_trans, log_emis):
    """Log backward quantities ``log Pr(obs_{j+1}..n | state_j = m)``; last row is 0."""
    log_emis = np.asarray(log_emis, dtype=float)
    n = log_emis.shape[-2]
    shape = np.broadcast_shapes(log_emis.shape, np.shape(log_trans)[:-3] + log_emis.shape[-2:])
    out = np.empty(shape)
    out[..., n - 1, :] = 0.0
    _tick()
    for j in range(n - 2, -1, -1):
        out[..., j, :] = logsumexp(
            log_trans[..., j, :, :] + (log_emis[..., j + 1, :] + out[..., j + 1, :])[..., None, :],
            axis=-1,
        )
        _tick()
    return out


def viterbi_path(log_init, log_trans, log_emis) -> np.ndarray:
    """Most probable state path for a single (unbatched) sequence.

    Ties resolve to the lowest-numbered state.
    """
    log_emis = np.asarray(log_emis, dtype=float)
    n, k = log_emis.shape
    delta = np.asarray(log_init) + log_emis[0]
    back = np.zeros((n, k), dtype=np.int64)
    for j in range(1, n):
        cand = delta[:, None] + log_trans[j - 1]
        # argmax returns the first maximiser, i.e. state 0 on ties
        back[j] = np.argmax(cand, axis=0)
        delta = cand[back[j], np.arange(k)] + log_emis[j]
        _tick()
    path = np.empty(n, dtype=np.int64)
    path[-1] = int(np.argmax(delta))
    for j in range(n - 1, 0, -1):
        path[j - 1] = back[j, path[j]]
    return path


def _as_u(u):
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValidationError("random effect values must be finite")
    return u


def log_emissions(p: ModelParams, s: SubjectSeries, u) -> np.ndarray:
    """(..., n, 2) joint emission log densities for random effect(s) ``u``."""
    u = _as_u(u)[..., None, None]
    b = np.array([0.0, 1.0])
    return emission_loglik(
        p, s.y[:, None], s.x[:, None], s.miles[:, None], s.t[:, None], b, u
    )


def log_transitions(p: ModelParams, s: SubjectSeries, u) -> np.ndarray:
    """(..., n-1, 2, 2) log transition matrices driven by the lagged crash indicator."""
    u = _as_u(u)[..., None]
    y_prev = s.y[:-1].astype(float)
    z01 = p.gamma01 + p.delta1 * y_prev + u
    z10 = p.gamma10 + p.delta2 * y_prev + p.delta_star * u
    out = np.empty(np.broadcast_shapes(z01.shape, z10.shape) + (2, 2))
    out[..., 0, 0] = log_expit(-z01)
    out[..., 0, 1] = log_expit(z01)
    out[..., 1, 0] = log_expit(z10)
    out[..., 1, 1] = log_expit(-z10)
    return out


def log_initial(p: ModelParams) -> np.ndarray:
    return np.array([log_expit(-p.pi1), log_expit(p.pi1)])


def _check(s):
    if not isinstance(s, SubjectSeries):
        raise ValidationError("expected a SubjectSeries")


def forward_pass(p: ModelParams, s: SubjectSeries, u) -> FBResult:
    """Forward quantities and the conditional log-likelihood given ``u``.

    ``u`` may be a scalar or an array; array inputs add leading dimensions
    to every output.
    """
    _check(s)
    la = log_forward(log_initial(p), log_transitions(p, s, u), log_emissions(p, s, u))
    ll = logsumexp(la[..., -1, :], axis=-1)
    return FBResult(la, None, ll[()] if np.ndim(ll) == 0 else ll)


def backward_pass(p: ModelParams, s: SubjectSeries, u) -> np.ndarray:
    _check(s)
    return log_backward(log_transitions(p, s, u), log_emissions(p, s, u))


def forward_backward(p: ModelParams, s: SubjectSeries, u) -> FBResult:
    _check(s)
    lt = log_transitions(p, s, u)
    le = log_emissions(p, s, u)
    la = log_forward(log_initial(p), lt, le)
    lb = log_backward(lt, le)
    ll = logsumexp(la[..., -1, :], axis=-1)
    return FBResult(la, lb, ll[()] if np.ndim(ll) == 0 else ll)


def state_posterior_given_u(p: ModelParams, s: SubjectSeries, u) -> np.ndarray:
    """(..., n, 2) smoothed state probabilities given data and ``u``."""
    fb = forward_backward(p, s, u)
    joint = fb.log_forward + fb.log_backward
    return np.exp(joint - logsumexp(joint, axis=-1, keepdims=True))


def viterbi_given_u(p: ModelParams, s: SubjectSeries, u: float) -> np.ndarray:
    _check(s)
    u = float(u)
    return viterbi_path(log_initial(p), log_transitions(p, s, u), log_emissions(p, s, u))
