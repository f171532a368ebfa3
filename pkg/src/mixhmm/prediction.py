"""Hidden-state posteriors, one-step-ahead crash prediction and ROC analysis.

All posteriors here are marginal over the subject's random effect: the
conditional quantities from the forward-backward pass are integrated with a
quadrature rule adapted to that subject's (or that history's) posterior.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, gammaln

from . import _kernels
from .estimation import FitConfig, FitResult, NumericalError, fit
from .forward_backward import (
    log_backward,
    log_emissions,
    log_forward,
    log_initial,
    log_transitions,
    viterbi_path,
)
from .model import Dataset, ModelParams, SubjectSeries, ValidationError, cnc_prob
from .quadrature import adapt, gh_rule, locate_modes

__all__ = [
    "History",
    "RocCurve",
    "LosoResult",
    "posterior_state",
    "one_step_ahead",
    "predict_series",
    "decode",
    "roc",
    "permutation_null",
    "loso_cv",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class History:
    """Observed months before the one being predicted (length >= 1)."""

    t: np.ndarray
    miles: np.ndarray
    y: np.ndarray
    x: np.ndarray
    subject_id: str = ""

    def __post_init__(self):
        arrs = [np.atleast_1d(np.asarray(a)) for a in (self.t, self.miles, self.y, self.x)]
        n = arrs[0].shape[0]
        if n < 1 or any(a.shape != (n,) for a in arrs):
            raise ValidationError("history needs at least one month and equal-length vectors")
        if np.any(~(arrs[1] > 0)):
            raise ValidationError("miles must be positive")
        for name, a, dt in zip(("t", "miles", "y", "x"), arrs, (np.int64, float, np.int64, np.int64)):
            object.__setattr__(self, name, a.astype(dt))

    @classmethod
    def from_series(cls, s: SubjectSeries, length: int | None = None) -> "History":
        k = len(s) if length is None else length
        return cls(s.t[:k], s.miles[:k], s.y[:k], s.x[:k], s.subject_id)

    def __len__(self):
        return self.t.shape[0]


def _params(model) -> ModelParams:
    if isinstance(model, FitResult):
        return model.estimates
    if isinstance(model, ModelParams):
        return model
    raise ValidationError("expected a FitResult or ModelParams")


def _adapted_rule(p: ModelParams, obs, Q: int):
    """Rule adapted to ``log L(obs | u) + log N(u; 0, e^lam)``."""
    theta = p.to_array()
    y = np.ascontiguousarray(obs.y[None, :])
    x = np.ascontiguousarray(obs.x[None, :])
    logm = np.ascontiguousarray(np.log(obs.miles)[None, :])
    t = np.ascontiguousarray(obs.t[None, :].astype(float))
    lgx = gammaln(x + 1.0)
    lengths = np.array([len(obs)], dtype=np.int64)

    def f(us):
        return _kernels.node_loglik(theta, y, x, logm, t, lgx, lengths, np.ascontiguousarray(us))

    c, s, _ = locate_modes(f, p.lam, 1)
    return adapt(gh_rule(Q), float(c[0]), float(s[0]), p.lam)


def posterior_state(model, s: SubjectSeries, Q: int = 11) -> np.ndarray:
    """``Pr(b_j = 1 | all of the subject's data)`` for every month."""
    p = _params(model)
    rule = _adapted_rule(p, s, Q)
    u = rule.nodes
    lt = log_transitions(p, s, u)
    le = log_emissions(p, s, u)
    la = log_forward(log_initial(p), lt, le)
    lb = log_backward(lt, le)
    cond = logsumexp(la[:, -1, :], axis=-1)  # (K,)
    lw = rule.log_weights
    log_den = logsumexp(lw + cond)
    if not np.isfinite(log_den):
        raise NumericalError(f"posterior integration failed for subject {s.subject_id}",
                             subject_id=s.subject_id)
    log_num = logsumexp(lw[:, None] + la[:, :, 1] + lb[:, :, 1], axis=0)
    return np.clip(np.exp(log_num - log_den), 0.0, 1.0)


def one_step_ahead(model, history, miles_j: float, t_j: int | None = None, Q: int = 11) -> float:
    """``Pr(Y_j = 1 | history of both outcomes through month j - 1)``.

    ``miles_j`` is the exposure of the predicted month, treated as known.
    """
    p = _params(model)
    if isinstance(history, SubjectSeries):
        history = History.from_series(history)
    if not isinstance(history, History):
        raise ValidationError("history must be a History or SubjectSeries")
    if not miles_j > 0:
        raise ValidationError("miles_j must be positive")
    if t_j is None:
        t_j = int(history.t[-1]) + 1
    rule = _adapted_rule(p, history, Q)
    u = rule.nodes
    la = log_forward(log_initial(p), log_transitions(p, history, u), log_emissions(p, history, u))
    last = la[:, -1, :]  # (K, 2): log a_l(j-1)
    # transition out of month j-1 uses y_{j-1}
    z01 = p.gamma01 + p.delta1 * history.y[-1] + u
    z10 = p.gamma10 + p.delta2 * history.y[-1] + p.delta_star * u
    p01 = 1.0 / (1.0 + np.exp(-z01))
    p10 = 1.0 / (1.0 + np.exp(-z10))
    a = np.exp(last - last.max(axis=1, keepdims=True))
    pred1 = (a[:, 0] * p01 + a[:, 1] * (1.0 - p10)) / a.sum(axis=1)
    risk0 = cnc_prob(p, 0, u, miles_j)
    risk1 = cnc_prob(p, 1, u, miles_j)
    risk = (1.0 - pred1) * risk0 + pred1 * risk1
    log_h = rule.log_weights + logsumexp(last, axis=1)
    w = np.exp(log_h - logsumexp(log_h))
    return float(np.clip(np.sum(w * risk), 0.0, 1.0))


def predict_series(model, s: SubjectSeries, Q: int = 11) -> np.ndarray:
    """One-step-ahead predictions for months 2..n of ``s``."""
    out = np.empty(len(s) - 1)
    for j in range(1, len(s)):
        out[j - 1] = one_step_ahead(model, History.from_series(s, j), s.miles[j], int(s.t[j]), Q)
    return out


def decode(model, s: SubjectSeries, Q: int = 11) -> tuple[np.ndarray, np.ndarray]:
    """Local and global decoding: ``(Pr(b_j = 1 | data), Viterbi path)``.

    The Viterbi path conditions on the random effect at its posterior mode.
    """
    p = _params(model)
    rule = _adapted_rule(p, s, Q)
    u = rule.center
    path = viterbi_path(log_initial(p), log_transitions(p, s, u), log_emissions(p, s, u))
    return posterior_state(p, s, Q), path


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc(scores: Sequence[float], labels: Sequence[int]) -> RocCurve:
    """Empirical ROC curve over all distinct score cut-offs.

    Tied scores form one step, so the trapezoidal area equals the
    Mann-Whitney probability with ties counted one half.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValidationError("scores and labels must be 1-d with equal length")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValidationError("labels must be binary")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("ROC needs at least one positive and one negative label")
    order = np.argsort(-scores, kind="mergesort")
    s_sorted = scores[order]
    l_sorted = labels[order]
    tp = np.cumsum(l_sorted)
    fp = np.cumsum(1 - l_sorted)
    last_of_group = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    tpr = np.r_[0.0, tp[last_of_group] / n_pos]
    fpr = np.r_[0.0, fp[last_of_group] / n_neg]
    thresholds = np.r_[np.inf, s_sorted[last_of_group]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, auc)


def permutation_null(scores, labels, n_perm: int = 1000, seed: int = 0) -> np.ndarray:
    """AUCs after randomly permuting the labels."""
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    return np.array([roc(scores, rng.permutation(labels)).auc for _ in range(n_perm)])


@dataclass(frozen=True)
class LosoResult:
    subject_ids: tuple[str, ...]
    months: np.ndarray
    scores: np.ndarray
    labels: np.ndarray
    roc: RocCurve
    fold_converged: dict[str, bool]
    excluded: tuple[str, ...] = ()

    def rows(self):
        return list(zip(self.subject_ids, self.months.tolist(), self.scores.tolist(),
                        self.labels.tolist()))


def _fold(args):
    d, cfg, sid = args
    train = d.without(sid)
    held = next(s for s in d if s.subject_id == sid)
    res = fit(train, cfg)
    finite = np.all(np.isfinite(res.values))
    preds = predict_series(res, held, cfg.Q) if finite else None
    return sid, res.converged, finite, preds


def loso_cv(d: Dataset, cfg: FitConfig | None = None, workers: int = 1,
            warm_start: bool = True) -> LosoResult:
    """Leave-one-subject-out one-step-ahead predictions pooled into one ROC.

    With ``warm_start`` the model is first fitted to all subjects (from
    ``cfg.init``, or the staged initialisation when that is unset) and every
    fold starts from those estimates.
    """
    cfg = cfg or FitConfig()
    if len(d) < 3:
        raise ValidationError("leave-one-subject-out needs at least three subjects")
    if warm_start:
        full = fit(d, replace(cfg, compute_se=False))
        cfg = replace(cfg, init=full.estimates)
    cfg = replace(cfg, compute_se=False)
    jobs = [(d, cfg, s.subject_id) for s in d]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_fold, jobs))
    else:
        results = [_fold(j) for j in jobs]
    ids, months, scores, labels, conv, excluded = [], [], [], [], {}, []
    for (sid, converged, finite, preds), s in zip(results, d):
        conv[sid] = converged
        if not converged:
            log.warning("fold %s did not converge", sid)
        if not finite:
            excluded.append(sid)
            continue
        ids += [sid] * (len(s) - 1)
        months.append(s.t[1:])
        scores.append(preds)
        labels.append(s.y[1:])
    if not scores:
        raise NumericalError("every fold diverged; no predictions to pool")
    months = np.concatenate(months)
    scores = np.concatenate(scores)
    labels = np.concatenate(labels)
    return LosoResult(tuple(ids), months, scores, labels, roc(scores, labels), conv, tuple(excluded))
