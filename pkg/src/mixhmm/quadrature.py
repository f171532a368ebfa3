"""Gauss-Hermite rules for integrals against a centred normal density.

A rule is stored as nodes and *log* weights so that sharply peaked
integrands can be summed with ``logsumexp``.  :func:`gh_rule` builds the
probabilists' rule for ``N(0, 1)``; :func:`adapt` moves it onto a
subject-specific centre and scale while keeping the target density
``N(0, exp(lam))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import logsumexp

from .model import ValidationError

__all__ = [
    "QuadratureRule",
    "Adaptation",
    "gh_rule",
    "adapt",
    "find_adaptation",
    "locate_modes",
    "MAX_ORDER",
]

MAX_ORDER = 64
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    log_weights: np.ndarray
    order: int
    center: float | None = None
    scale: float | None = None
    log_variance: float = 0.0
    dim: int = 1

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def adapted(self) -> bool:
        return self.center is not None

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        """``sum_k w_k f(n_k)``."""
        return float(np.sum(self.weights * f(self.nodes)))

    def log_integrate(self, log_f: Callable[[np.ndarray], np.ndarray]) -> float:
        """``log sum_k w_k exp(log_f(n_k))``, computed stably."""
        return float(logsumexp(self.log_weights + log_f(self.nodes)))


@lru_cache(maxsize=None)
def _gh(order: int) -> tuple[np.ndarray, np.ndarray]:
    if order == 1:
        return np.zeros(1), np.zeros(1)
    off = np.sqrt(np.arange(1, order, dtype=float))
    nodes = eigh_tridiagonal(np.zeros(order), off, eigvals_only=True)
    nodes = 0.5 * (nodes - nodes[::-1])
    if order % 2 == 1:
        nodes[order // 2] = 0.0
    # Christoffel function with orthonormal Hermite polynomials; stable for
    # the tail nodes where eigenvector entries lose relative precision.
    p_prev = np.zeros(order)
    p = np.ones(order)
    total = p * p
    for k in range(1, order):
        p_next = (nodes * p - math.sqrt(k - 1) * p_prev) / math.sqrt(k)
        p_prev, p = p, p_next
        total += p * p
    log_w = -np.log(total)
    log_w = 0.5 * (log_w + log_w[::-1])
    for arr in (nodes, log_w):
        arr.setflags(write=False)
    return nodes, log_w


def gh_rule(order: int) -> QuadratureRule:
    """Probabilists' Gauss-Hermite rule: ``E f(Z) ~ sum_k w_k f(n_k)``, ``Z ~ N(0,1)``.

    Exact for polynomials up to degree ``2 * order - 1``.
    """
    if isinstance(order, bool) or int(order) != order or not 1 <= order <= MAX_ORDER:
        raise ValidationError(f"quadrature order must be an integer in [1, {MAX_ORDER}]")
    nodes, log_w = _gh(int(order))
    return QuadratureRule(nodes, log_w, int(order))


def _log_normal_pdf(u, log_variance):
    return -_LOG_SQRT_2PI - 0.5 * log_variance - 0.5 * np.square(u) * math.exp(-log_variance)


def adapt(
    rule: QuadratureRule, center: float, scale: float, log_variance: float = 0.0
) -> QuadratureRule:
    """Recentre a standard rule at ``center`` with spread ``scale``.

    The returned weights approximate ``int g(u) N(u; 0, exp(log_variance)) du``
    by ``sum_k w_k g(n_k)`` and are accurate when ``g`` times the density is
    close to a normal shape with the given centre and scale.
    """
    if rule.adapted:
        raise ValidationError("rule is already adapted")
    if not (scale > 0 and math.isfinite(scale)):
        raise ValidationError(f"scale must be positive and finite, got {scale}")
    if not math.isfinite(center):
        raise ValidationError("center must be finite")
    z = rule.nodes
    nodes = center + scale * z
    log_w = (
        rule.log_weights
        + math.log(scale)
        - _log_normal_pdf(z, 0.0)
        + _log_normal_pdf(nodes, log_variance)
    )
    return QuadratureRule(nodes, log_w, rule.order, float(center), float(scale), float(log_variance))


def lebesgue_log_weights(rule: QuadratureRule, scales) -> np.ndarray:
    """Log weights of adapted rules for integration against ``du``.

    Shape ``(len(scales), order)``; add the log target density at the
    nodes to get :func:`adapt`'s weights.
    """
    scales = np.asarray(scales, dtype=float)
    return (rule.log_weights - _log_normal_pdf(rule.nodes, 0.0))[None, :] + np.log(scales)[:, None]


@dataclass(frozen=True)
class Adaptation:
    center: float
    scale: float
    fallback: bool = False


def locate_modes(
    f: Callable[[np.ndarray], np.ndarray],
    log_variance: float,
    size: int,
    max_iter: int = 100,
    tol: float = 1e-10,
    grid: int = 49,
    span: float = 6.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Modes and curvature scales of ``f(u) + log N(u; 0, exp(log_variance))``.

    ``f`` is evaluated for ``size`` independent problems at once: it maps an
    array of shape ``(size, m)`` to values of the same shape.  Derivatives
    of ``f`` are central differences; the prior's are exact.  Steps are
    Newton steps limited by a trust radius that shrinks whenever the
    objective fails to increase, so monotone or flat ``f`` still yields a
    finite centre.

    Integrands built from hidden-state mixtures can have several local
    modes, so the search starts from the best of ``grid`` equally spaced
    points over ``+-span`` prior standard deviations (``grid=0`` starts at
    the prior mean).

    Returns ``(centers, scales, fallback)``; ``fallback`` marks problems
    whose curvature was not finite or was flatter than the prior's, for
    which the prior standard deviation is used as scale.
    """
    var = math.exp(log_variance)
    sigma = math.sqrt(var)

    def g(us):
        return f(us) - 0.5 * np.square(us) / var

    if grid > 1:
        pts = np.linspace(-span * sigma, span * sigma, grid)
        with np.errstate(invalid="ignore", over="ignore"):
            vals = g(np.broadcast_to(pts, (size, grid)).copy())
        vals = np.where(np.isfinite(vals), vals, -np.inf)
        u = pts[np.argmax(vals, axis=1)]
        radius = np.full(size, pts[1] - pts[0])
    else:
        u = np.zeros(size)
        radius = np.full(size, 4.0 * sigma)
    # non-finite integrand values are screened explicitly below
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        h = np.full(size, 1e-3 * sigma)
        active = np.ones(size, dtype=bool)
        g_u = g(u[:, None])[:, 0]
        for _ in range(max_iter):
            grid = np.stack([u - h, u + h], axis=1)
            fg = f(grid)
            f0 = g_u + 0.5 * u * u / var
            d1 = (fg[:, 1] - fg[:, 0]) / (2 * h) - u / var
            d2 = (fg[:, 1] - 2 * f0 + fg[:, 0]) / (h * h) - 1.0 / var
            newton = np.where(d2 < 0, -d1 / d2, np.sign(d1) * radius)
            newton = np.where(np.isfinite(newton), newton, 0.0)
            step = np.clip(newton, -radius, radius)
            step = np.where(active, step, 0.0)
            cand = u + step
            g_c = g(cand[:, None])[:, 0]
            better = (g_c >= g_u) & np.isfinite(g_c)
            u = np.where(better, cand, u)
            g_u = np.where(better, g_c, g_u)
            radius = np.where(better, np.maximum(radius, 2 * np.abs(step)), 0.5 * np.abs(step))
            post_sd = np.where(d2 < 0, 1.0 / np.sqrt(-d2), sigma)
            h = np.where(np.isfinite(post_sd) & (post_sd > 0), 1e-3 * np.minimum(post_sd, sigma), h)
            small = np.abs(step) <= tol * post_sd
            active &= ~(small & better)
            active &= radius > 1e-12 * post_sd
            if not active.any():
                break

        grid = np.stack([u - h, u + h], axis=1)
        fg = f(grid)
        f0 = g_u + 0.5 * u * u / var
        d2 = (fg[:, 1] - 2 * f0 + fg[:, 0]) / (h * h) - 1.0 / var
        # curvature flatter than the prior's means f is locally convex (a flat
        # top or a saddle between modes); it then says nothing about the spread
        ok = np.isfinite(d2) & (d2 <= -1.0 / var)
        scales = np.where(ok, 1.0 / np.sqrt(np.where(ok, -d2, 1.0)), sigma)
    return u, scales, ~ok


def find_adaptation(f: Callable, log_variance: float) -> Adaptation:
    """Centre and scale for adapting a rule to ``f(u) + log N(u; 0, exp(log_variance))``.

    ``f`` must accept numpy arrays of ``u`` and return values elementwise.
    """
    c, s, fb = locate_modes(lambda us: np.asarray(f(us), dtype=float), log_variance, 1)
    return Adaptation(float(c[0]), float(s[0]), bool(fb[0]))
