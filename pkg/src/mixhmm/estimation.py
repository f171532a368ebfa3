"""Maximum likelihood for the mixed model and its fixed-effect relatives.

The marginal likelihood integrates each subject's conditional likelihood
(from the forward recursion) against the random-effect density with an
adaptive Gauss-Hermite rule centred at that subject's posterior mode.
:func:`fit` alternates between placing the rules at the current estimates
and maximising with the nodes held fixed, until both the estimates and the
log-likelihood settle.

Three model variants share this machinery:

``mixed2``
    the shared-random-effect two-state model (14 parameters);
``fixed2``
    the same hidden chain without random effect (``alpha2 = beta3 =
    delta_star = 0``, no variance; 10 parameters);
``fixedK``
    a K-state hidden Markov model without random effect or lagged-crash
    effects, with state-specific emission shifts, a full multinomial-logit
    transition matrix and K - 1 initial-state logits.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_softmax, logit, logsumexp

from . import _kernels
from .forward_backward import log_forward
from .model import PARAM_NAMES, Dataset, ModelParams, SubjectSeries, ValidationError
from .quadrature import gh_rule, lebesgue_log_weights, locate_modes

__all__ = [
    "FitConfig",
    "FitResult",
    "NumericalError",
    "DatasetAdaptation",
    "adapt_dataset",
    "marginal_loglik",
    "subject_logliks",
    "fixed_effect_loglik",
    "kstate_loglik",
    "fit",
    "std_errors",
    "observed_information",
    "aic",
    "random_effect_mode",
    "default_init",
    "VARIANTS",
]

log = logging.getLogger(__name__)

VARIANTS = ("mixed2", "fixed2", "fixedK")
FIXED2_PINNED = ("alpha2", "beta3", "delta_star", "lam")
_IDX = {n: i for i, n in enumerate(PARAM_NAMES)}
_BOUND = 25.0
_LAM_BOUNDS = (-25.0, 6.0)
# consecutive outer iterations on the box boundary before giving up
_MAX_BOUNDARY_ITERS = 5


class NumericalError(ArithmeticError):
    """Non-finite likelihood contribution."""

    def __init__(self, message, subject_id=None):
        super().__init__(message)
        self.subject_id = subject_id


@dataclass(frozen=True)
class FitConfig:
    Q: int = 11
    max_outer_iters: int = 50
    outer_tol: float = 1e-7
    param_tol: float = 1e-5
    optimizer_tol: float = 1e-5
    init: ModelParams | None = None
    variant: str = "mixed2"
    K: int = 2
    fixed: Mapping[str, float] = field(default_factory=dict)
    fd_step: float = 1e-5
    max_inner_iters: int = 1000
    compute_se: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.Q < 1:
            raise ValidationError("Q must be at least 1")
        if self.K < 2:
            raise ValidationError("K must be at least 2")
        if self.max_outer_iters < 1:
            raise ValidationError("max_outer_iters must be at least 1")
        for name in ("outer_tol", "param_tol", "optimizer_tol", "fd_step"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        unknown = set(self.fixed) - set(PARAM_NAMES)
        if unknown and self.variant != "fixedK":
            raise ValidationError(f"unknown fixed parameters: {sorted(unknown)}")

    @classmethod
    def parse_variant(cls, text: str) -> tuple[str, int]:
        """``'mixed2'``, ``'fixed2'`` or ``'fixedK:<K>'`` to ``(variant, K)``."""
        if text in ("mixed2", "fixed2"):
            return text, 2
        if text.startswith("fixedK"):
            _, _, k = text.partition(":")
            try:
                return "fixedK", int(k) if k else 2
            except ValueError:
                raise ValidationError(f"bad K in variant {text!r}") from None
        raise ValidationError(f"unknown variant {text!r}")


@dataclass(frozen=True)
class FitResult:
    names: tuple[str, ...]
    values: np.ndarray
    se: np.ndarray
    vcov: np.ndarray
    loglik: float
    aic: float
    converged: bool
    outer_iters: int
    variant: str = "mixed2"
    params: ModelParams | None = None
    re_modes: np.ndarray | None = None
    subject_ids: tuple[str, ...] = ()
    trace: tuple[float, ...] = ()
    hessian_pd: bool = True
    message: str = ""
    K: int = 2

    @property
    def estimates(self) -> ModelParams:
        if self.params is None:
            raise AttributeError("K-state fits have no ModelParams representation")
        return self.params

    @property
    def n_params(self) -> int:
        return len(self.names)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))

    def se_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.se.tolist()))


@dataclass(frozen=True)
class DatasetAdaptation:
    """Per-subject quadrature nodes frozen at some parameter value."""

    centers: np.ndarray
    scales: np.ndarray
    fallback: np.ndarray
    nodes: np.ndarray
    base_log_weights: np.ndarray


def aic(fit_or_loglik, k: int | None = None) -> float:
    """``-2 loglik + 2 k``; accepts a :class:`FitResult` or a log-likelihood and ``k``."""
    if isinstance(fit_or_loglik, FitResult):
        return -2.0 * fit_or_loglik.loglik + 2.0 * fit_or_loglik.n_params
    if k is None:
        raise ValidationError("parameter count required")
    return -2.0 * float(fit_or_loglik) + 2.0 * k


def _kernel_args(d: Dataset):
    pk = d.packed
    return pk.y, pk.x, pk.log_miles, pk.t, pk.log_x_factorial, pk.lengths


def adapt_dataset(theta: np.ndarray, d: Dataset, Q: int) -> DatasetAdaptation:
    """Place a ``Q``-point rule at every subject's random-effect posterior mode."""
    args = _kernel_args(d)
    lam = float(theta[_IDX["lam"]])

    def f(us):
        return _kernels.node_loglik(theta, *args, np.ascontiguousarray(us))

    centers, scales, fallback = locate_modes(f, lam, len(d))
    if fallback.any():
        bad = [d[i].subject_id for i in np.flatnonzero(fallback)]
        log.debug("curvature fallback for subjects %s", bad)
    rule = gh_rule(Q)
    nodes = centers[:, None] + scales[:, None] * rule.nodes[None, :]
    return DatasetAdaptation(
        centers, scales, fallback, np.ascontiguousarray(nodes), lebesgue_log_weights(rule, scales)
    )


def _canonical_sum(d: Dataset, terms: np.ndarray) -> float:
    bad = ~np.isfinite(terms)
    if bad.any():
        sid = d[int(np.flatnonzero(bad)[0])].subject_id
        raise NumericalError(f"non-finite likelihood for subject {sid}", subject_id=sid)
    order = sorted(range(len(d)), key=lambda i: d[i].subject_id)
    total = 0.0
    for i in order:
        total += float(terms[i])
    return total


def _as_theta(p) -> np.ndarray:
    if isinstance(p, ModelParams):
        return p.to_array()
    theta = np.asarray(p, dtype=float)
    if theta.shape != (len(PARAM_NAMES),):
        raise ValidationError("parameter vector has the wrong length")
    return theta


def subject_logliks(p, d: Dataset, Q: int = 11, adaptation: DatasetAdaptation | None = None):
    """Per-subject log marginal likelihoods, in dataset order."""
    theta = _as_theta(p)
    if adaptation is None:
        adaptation = adapt_dataset(theta, d, Q)
    return _kernels.subject_marginals(
        theta, *_kernel_args(d), adaptation.nodes, adaptation.base_log_weights
    )


def marginal_loglik(p, d: Dataset, Q: int = 11, adaptation: DatasetAdaptation | None = None) -> float:
    """Log marginal likelihood of the mixed model.

    Subject terms are summed in ``subject_id`` order so the result does not
    depend on how the dataset is ordered.
    """
    if len(d) == 0:
        raise ValidationError("dataset is empty")
    return _canonical_sum(d, subject_logliks(p, d, Q, adaptation))


def fixed_effect_loglik(p, d: Dataset) -> float:
    """Log-likelihood of the two-state model with the random effect set to zero."""
    theta = _as_theta(p)
    nodes = np.zeros((len(d), 1))
    return _canonical_sum(d, _kernels.node_loglik(theta, *_kernel_args(d), nodes)[:, 0])


def random_effect_mode(p: ModelParams, s: SubjectSeries, Q: int = 11) -> float:
    """Posterior mode of one subject's random effect (the adaptation centre)."""
    from .quadrature import find_adaptation

    theta = _as_theta(p)
    d = Dataset((s,))
    args = _kernel_args(d)

    def f(us):
        us = np.asarray(us, dtype=float)
        grid = np.ascontiguousarray(us.reshape(1, -1))
        return _kernels.node_loglik(theta, *args, grid).reshape(us.shape)

    return find_adaptation(f, float(theta[_IDX["lam"]])).center


# --------------------------------------------------------------------------
# K-state fixed-effect model


def kstate_names(K: int) -> tuple[str, ...]:
    names = ["alpha0"] + [f"alpha_s{m}" for m in range(1, K)]
    names += ["beta0"] + [f"beta_s{m}" for m in range(1, K)] + ["beta2"]
    names += [f"trans_{l}{m}" for l in range(K) for m in range(K) if l != m]
    names += [f"init_{m}" for m in range(1, K)]
    return tuple(names)


def _kstate_pieces(values: np.ndarray, K: int, d: Dataset):
    pk = d.packed
    i = 0
    a0 = values[i]; i += 1
    a_s = np.concatenate([[0.0], values[i:i + K - 1]]); i += K - 1
    b0 = values[i]; i += 1
    b_s = np.concatenate([[0.0], values[i:i + K - 1]]); i += K - 1
    b2 = values[i]; i += 1
    logits = np.zeros((K, K))
    off = ~np.eye(K, dtype=bool)
    logits[off] = values[i:i + K * (K - 1)]; i += K * (K - 1)
    init = np.concatenate([[0.0], values[i:i + K - 1]])
    log_init = log_softmax(init)
    log_trans = log_softmax(logits, axis=1)

    eta = pk.log_miles[..., None] + a0 + a_s
    y = pk.y[..., None]
    log_bern = y * eta - np.logaddexp(0.0, eta)
    log_mu = pk.log_miles[..., None] + b0 + b_s + b2 * pk.t[..., None]
    log_pois = pk.x[..., None] * log_mu - np.exp(log_mu) - pk.log_x_factorial[..., None]
    n_max = pk.y.shape[1]
    valid = np.arange(n_max)[None, :] < pk.lengths[:, None]
    log_emis = np.where(valid[..., None], log_bern + log_pois, 0.0)
    # padded steps carry the forward vector through unchanged
    ident = np.where(np.eye(K, dtype=bool), 0.0, -np.inf)
    step_valid = valid[:, 1:]
    lt = np.where(step_valid[..., None, None], log_trans, ident)
    return log_init, lt, log_emis


def kstate_loglik(values: Sequence[float], K: int, d: Dataset) -> float:
    log_init, lt, le = _kstate_pieces(np.asarray(values, dtype=float), K, d)
    with np.errstate(invalid="ignore"):
        la = log_forward(log_init, lt, le)
    return _canonical_sum(d, logsumexp(la[:, -1, :], axis=-1))


def _kstate_init(d: Dataset, K: int) -> np.ndarray:
    pk = d.packed
    valid = np.arange(pk.y.shape[1])[None, :] < pk.lengths[:, None]
    ybar = float(np.clip(pk.y[valid].mean(), 0.02, 0.98))
    xbar = float(pk.x[valid].mean())
    mlog = float(pk.log_miles[valid].mean())
    v = []
    v.append(logit(ybar) - mlog - 0.5)
    v += [1.5 * m / (K - 1) for m in range(1, K)]
    v.append(math.log(xbar + 0.5) - mlog - 0.5)
    v += [1.5 * m / (K - 1) for m in range(1, K)]
    v.append(0.0)
    v += [-2.0] * (K * (K - 1))
    v += [-1.0] * (K - 1)
    return np.array(v)


# --------------------------------------------------------------------------
# Fitting


def _fd_gradient(fun: Callable, z: np.ndarray, rel_step: float) -> np.ndarray:
    g = np.empty_like(z)
    for k in range(z.size):
        h = rel_step * max(abs(z[k]), 1.0)
        zp = z.copy(); zp[k] += h
        zm = z.copy(); zm[k] -= h
        g[k] = (fun(zp) - fun(zm)) / (2 * h)
    return g


def _bounds_for(names: Sequence[str]):
    return [(_LAM_BOUNDS if n == "lam" else (-_BOUND, _BOUND)) for n in names]


def _at_bound(z, bounds, tol=1e-6) -> bool:
    return any(v <= lo + tol or v >= hi - tol for v, (lo, hi) in zip(z, bounds))


def _maximise(neg_ll: Callable, z0: np.ndarray, bounds, cfg: FitConfig, scale: float = 1.0):
    """Minimise ``neg_ll / scale``.

    Scaling to a per-observation objective keeps the first quasi-Newton
    step (a raw gradient step under box constraints) at a sane length;
    ``cfg.optimizer_tol`` still refers to the unscaled gradient.
    """
    cache: dict = {}

    def fun(z):
        key = z.tobytes()
        if key not in cache:
            try:
                v = neg_ll(z) / scale
            except NumericalError:
                v = np.inf
            cache.clear()
            cache[key] = v if np.isfinite(v) else 1e300
        return cache[key]

    def jac(z):
        return _fd_gradient(fun, z, cfg.fd_step)

    z0 = np.clip(z0, [b[0] for b in bounds], [b[1] for b in bounds])
    res = minimize(
        fun,
        z0,
        jac=jac,
        method="L-BFGS-B",
        bounds=bounds,
        options=dict(
            gtol=cfg.optimizer_tol / scale, ftol=1e-15, maxiter=cfg.max_inner_iters, maxcor=20
        ),
    )
    return res


def observed_information(neg_ll: Callable, z: np.ndarray, rel_step: float = 1e-4) -> np.ndarray:
    """Central-difference Hessian of ``neg_ll`` at ``z``."""
    z = np.asarray(z, dtype=float)
    p = z.size
    h = rel_step * np.maximum(np.abs(z), 1.0)
    f0 = neg_ll(z)
    H = np.empty((p, p))
    fp = np.empty(p)
    fm = np.empty(p)
    for k in range(p):
        e = np.zeros(p); e[k] = h[k]
        fp[k] = neg_ll(z + e)
        fm[k] = neg_ll(z - e)
        H[k, k] = (fp[k] - 2 * f0 + fm[k]) / h[k] ** 2
    for k in range(p):
        for l in range(k + 1, p):
            ek = np.zeros(p); ek[k] = h[k]
            el = np.zeros(p); el[l] = h[l]
            v = (
                neg_ll(z + ek + el) - neg_ll(z + ek - el) - neg_ll(z - ek + el)
                + neg_ll(z - ek - el)
            ) / (4 * h[k] * h[l])
            H[k, l] = H[l, k] = v
    return H


def _invert_information(H: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    """(se, vcov, positive_definite); non-PD information is projected first."""
    H = 0.5 * (H + H.T)
    if not np.all(np.isfinite(H)):
        p = H.shape[0]
        return np.full(p, np.nan), np.full((p, p), np.nan), False
    w, V = np.linalg.eigh(H)
    pd = bool(w.min() > 0)
    if not pd:
        floor = max(abs(w).max(), 1.0) * 1e-10
        log.warning("observed information is not positive definite; projecting")
        w = np.maximum(w, floor)
    vcov = (V / w) @ V.T
    vcov = 0.5 * (vcov + vcov.T)
    se = np.sqrt(np.diag(vcov))
    return se, vcov, pd


def std_errors(d: Dataset, p_hat, Q: int = 11, free: Sequence[str] = PARAM_NAMES,
               adaptation: DatasetAdaptation | None = None):
    """Standard errors and covariance from the inverse observed information.

    Quadrature nodes are held at their placement for ``p_hat``.  Returns
    ``(se, vcov)`` over ``free`` (all parameters by default); both carry
    NaN when the information matrix could not be formed.
    """
    theta = _as_theta(p_hat)
    if adaptation is None:
        adaptation = adapt_dataset(theta, d, Q)
    idx = [_IDX[n] for n in free]

    def neg_ll(z):
        th = theta.copy()
        th[idx] = z
        return -marginal_loglik(th, d, Q, adaptation)

    se, vcov, _ = _invert_information(observed_information(neg_ll, theta[idx]))
    return se, vcov


def default_init(d: Dataset) -> ModelParams:
    """Data-driven starting values for the fixed-effect two-state model."""
    v = _kstate_init(d, 2)
    return ModelParams(
        alpha0=v[0], alpha1=1.5, beta0=v[2], beta1=1.5, gamma01=-2.0, gamma10=-2.0, pi1=-1.0
    )


def _pinned(cfg: FitConfig) -> dict[str, float]:
    pinned = dict(cfg.fixed)
    if cfg.variant == "fixed2":
        for n in FIXED2_PINNED:
            pinned.setdefault(n, 0.0)
    return pinned


def fit(d: Dataset, cfg: FitConfig | None = None) -> FitResult:
    """Maximum likelihood fit of the configured model variant."""
    cfg = cfg or FitConfig()
    if len(d) == 0:
        raise ValidationError("dataset is empty")
    if cfg.variant == "fixedK":
        return _fit_kstate(d, cfg)
    if cfg.init is None:
        init = _staged_init(d, cfg)
        cfg = _replace(cfg, init=init)
    return _fit_two_state(d, cfg)


def _no_interior_optimum(d: Dataset, free: Sequence[str]) -> str:
    """Why the likelihood has no finite maximiser, or ``''``.

    Constant outcomes separate perfectly: the intercept of that emission
    runs off to infinity however long the optimizer is allowed to run.
    """
    pk = d.packed
    valid = np.arange(pk.y.shape[1])[None, :] < pk.lengths[:, None]
    y, x = pk.y[valid], pk.x[valid]
    if "alpha0" in free and (y.min() == y.max()):
        return f"all cnc values are {int(y[0])}: Bernoulli intercept diverges"
    if "beta0" in free and x.max() == 0:
        return "all kinematic counts are 0: Poisson intercept diverges"
    return ""


def _rising_to_box(loglik: Callable, z: np.ndarray, names: Sequence[str], bounds,
                   ll: float, tol: float = 1e-6) -> str:
    """Name of a coordinate along which the likelihood keeps rising, or ``''``.

    Moves one coordinate at a time out to the box edge on its own side.  A
    saturating logit can leave the optimizer on a plateau well inside the
    box while the supremum lies at infinity.
    """
    for k, (n, (lo, hi)) in enumerate(zip(names, bounds)):
        if n == "lam":  # lam -> -inf is the zero-variance model, a finite limit
            continue
        edge = z.copy()
        edge[k] = hi if z[k] >= 0 else lo
        try:
            if loglik(edge) >= ll - tol:
                return n
        except NumericalError:
            continue
    return ""


def _replace(cfg, **kw):
    import dataclasses

    return dataclasses.replace(cfg, **kw)


def _staged_init(d: Dataset, cfg: FitConfig) -> ModelParams:
    """Fixed-effect fit, then a small grid over the random-effect terms."""
    start = default_init(d)
    pinned = dict(cfg.fixed)
    fixed_fit = _fit_two_state(
        d,
        _replace(cfg, variant="fixed2", init=start.replace(**pinned), compute_se=False),
    )
    base = fixed_fit.estimates
    if cfg.variant == "fixed2":
        return base
    best, best_ll = None, -np.inf
    for lam in (-1.0, 0.0):
        for b3 in (0.25, 0.75, 1.25):
            for ds in (0.25, 0.75, 1.25):
                cand = base.replace(lam=lam, beta3=b3, delta_star=ds, **pinned)
                try:
                    ll = marginal_loglik(cand, d, cfg.Q)
                except NumericalError:
                    continue
                if ll > best_ll:
                    best, best_ll = cand, ll
    return best if best is not None else base.replace(**pinned)


def _fit_two_state(d: Dataset, cfg: FitConfig) -> FitResult:
    pinned = _pinned(cfg)
    theta = cfg.init.to_array()
    for n, v in pinned.items():
        theta[_IDX[n]] = v
    free = [n for n in PARAM_NAMES if n not in pinned]
    idx = np.array([_IDX[n] for n in free])
    bounds = _bounds_for(free)
    mixed = cfg.variant == "mixed2"

    def full(z):
        th = theta.copy()
        th[idx] = z
        return th

    if mixed:
        def loglik_at(th, adaptation):
            return marginal_loglik(th, d, cfg.Q, adaptation)

        def place(th):
            return adapt_dataset(th, d, cfg.Q)
    else:
        def loglik_at(th, adaptation):
            return fixed_effect_loglik(th, d)

        def place(th):
            return None

    adaptation = place(theta)
    ll = loglik_at(theta, adaptation)
    trace = [ll]
    converged = False
    message = ""
    outer = 0
    stuck = 0
    for outer in range(1, cfg.max_outer_iters + 1):
        frozen = adaptation
        res = _maximise(
            lambda z: -loglik_at(full(z), frozen), theta[idx], bounds, cfg, scale=d.n_obs
        )
        new_theta = full(res.x)
        new_adaptation = place(new_theta)
        try:
            new_ll = loglik_at(new_theta, new_adaptation)
        except NumericalError as exc:
            message = str(exc)
            break
        d_ll = abs(new_ll - ll) / max(abs(ll), 1.0)
        d_par = float(np.max(np.abs(new_theta - theta) / np.maximum(np.abs(theta), 1.0)))
        theta, adaptation, ll = new_theta, new_adaptation, new_ll
        trace.append(ll)
        message = str(res.message)
        if not mixed and res.success:
            d_par = d_ll = 0.0
        if _at_bound(theta[idx], bounds):
            stuck += 1
            message = "estimates on the parameter box boundary (divergence)"
            if stuck >= _MAX_BOUNDARY_ITERS:
                break
            continue
        stuck = 0
        if d_ll < cfg.outer_tol and d_par < cfg.param_tol:
            converged = True
            break
    if not converged and not message:
        message = "outer iteration cap reached"
    reason = _no_interior_optimum(d, free)
    if not reason and converged:
        rising = _rising_to_box(lambda z: loglik_at(full(z), place(full(z))), theta[idx], free,
                                bounds, ll)
        if rising:
            reason = f"likelihood still rising toward the box in {rising} (divergence)"
    if reason:
        converged, message = False, reason

    k = len(free)
    se = np.full(k, np.nan)
    vcov = np.full((k, k), np.nan)
    pd = False
    if cfg.compute_se:
        def neg_ll(z):
            return -loglik_at(full(z), adaptation)

        try:
            se, vcov, pd = _invert_information(observed_information(neg_ll, theta[idx]))
        except NumericalError:
            pass
    params = ModelParams.from_array(theta)
    return FitResult(
        names=tuple(free),
        values=theta[idx].copy(),
        se=se,
        vcov=vcov,
        loglik=float(ll),
        aic=-2.0 * ll + 2.0 * k,
        converged=converged,
        outer_iters=outer,
        variant=cfg.variant,
        params=params,
        re_modes=None if adaptation is None else adaptation.centers.copy(),
        subject_ids=tuple(s.subject_id for s in d),
        trace=tuple(trace),
        hessian_pd=pd,
        message=message,
    )


def _fit_kstate(d: Dataset, cfg: FitConfig) -> FitResult:
    K = cfg.K
    names = kstate_names(K)
    z0 = _kstate_init(d, K)
    if cfg.fixed:
        for n, v in cfg.fixed.items():
            if n not in names:
                raise ValidationError(f"unknown parameter {n!r} for {K}-state model")
            z0[names.index(n)] = v
    bounds = _bounds_for(names)

    def neg_ll(z):
        return -kstate_loglik(z, K, d)

    res = _maximise(neg_ll, z0, bounds, cfg, scale=d.n_obs)
    z = res.x
    ll = -neg_ll(z)
    converged = bool(res.success) and not _at_bound(z, bounds)
    reason = _no_interior_optimum(d, ("alpha0", "beta0"))
    if not reason and converged:
        rising = _rising_to_box(lambda v: -neg_ll(v), z, names, bounds, ll)
        if rising:
            reason = f"likelihood still rising toward the box in {rising} (divergence)"
    message = reason or str(res.message)
    converged = converged and not reason
    k = len(names)
    se = np.full(k, np.nan)
    vcov = np.full((k, k), np.nan)
    pd = False
    if cfg.compute_se:
        se, vcov, pd = _invert_information(observed_information(neg_ll, z))
    return FitResult(
        names=names,
        values=z.copy(),
        se=se,
        vcov=vcov,
        loglik=float(ll),
        aic=-2.0 * ll + 2.0 * k,
        converged=converged,
        outer_iters=1,
        variant="fixedK",
        subject_ids=tuple(s.subject_id for s in d),
        trace=(float(-neg_ll(z0)), float(ll)),
        hessian_pd=pd,
        message=message,
        K=K,
    )
