"""Synthetic data from the shared and correlated random-effect models, and
replicated simulate-then-fit studies.

Randomness is counter based: every subject draws from its own Philox
streams keyed by ``(seed..., subject index, stream)``, and within a stream
the month index is the counter position.  A dataset therefore depends only
on the seed, never on how many subjects or replications are generated
alongside it or in which process.
"""
from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import poisson

from .estimation import FitConfig, FitResult, fit
from .model import (
    MEAN_MONTHLY_MILES,
    PARAM_NAMES,
    Dataset,
    ModelParams,
    SubjectSeries,
    ValidationError,
)

__all__ = [
    "CorrelatedTruth",
    "SimStudyConfig",
    "StudyReport",
    "simulate_shared",
    "simulate_correlated",
    "run_study",
    "lognormal_miles",
    "subject_rng",
]

STREAM_EFFECT, STREAM_CHAIN, STREAM_MILES = 0, 1, 2

MilesGen = Callable[[np.random.Generator, int], np.ndarray]


def _seed_words(seed) -> list[int]:
    words = list(seed) if isinstance(seed, (tuple, list)) else [seed]
    out = []
    for w in words:
        w = int(w)
        if w < 0:
            raise ValidationError("seeds must be non-negative")
        out.append(w)
    return out


def subject_rng(seed, subject: int, stream: int) -> np.random.Generator:
    """Philox generator keyed by ``(seed, subject, stream)``."""
    ss = np.random.SeedSequence(_seed_words(seed) + [int(subject), int(stream)])
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


def lognormal_miles(mean: float = MEAN_MONTHLY_MILES, sdlog: float = 0.5) -> MilesGen:
    """Monthly mileage generator with the given arithmetic mean."""
    if not mean > 0 or not sdlog >= 0:
        raise ValidationError("mean must be positive and sdlog non-negative")
    mu = math.log(mean) - 0.5 * sdlog * sdlog

    def gen(rng: np.random.Generator, n: int) -> np.ndarray:
        return np.exp(mu + sdlog * rng.standard_normal(n))

    gen.description = f"lognormal(mean={mean}, sdlog={sdlog})"
    return gen


@dataclass(frozen=True, eq=False)
class CorrelatedTruth:
    """Generating model with separate, correlated effects in the two transitions.

    ``u1`` enters the 0 -> 1 logit and ``u2`` the 1 -> 0 logit, both with
    unit loading.  ``emission_effect`` picks which of them (if any) drives
    the emission models through ``alpha2`` and ``beta3``.  The
    ``delta_star`` and ``lam`` fields of ``base`` are ignored.
    """

    base: ModelParams
    sigma: np.ndarray
    emission_effect: str = "u1"

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.shape != (2, 2) or not np.all(np.isfinite(sigma)):
            raise ValidationError("sigma must be a finite 2x2 matrix")
        if not np.allclose(sigma, sigma.T, rtol=0, atol=1e-12):
            raise ValidationError("sigma must be symmetric")
        w = np.linalg.eigvalsh(sigma)
        if w.min() < -1e-12 * max(1.0, w.max()) or np.any(np.diag(sigma) <= 0):
            raise ValidationError("sigma must be positive semi-definite with positive variances")
        if self.emission_effect not in ("none", "u1", "u2"):
            raise ValidationError("emission_effect must be 'none', 'u1' or 'u2'")
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)

    @property
    def gamma01(self) -> float:
        return self.base.gamma01

    @property
    def gamma10(self) -> float:
        return self.base.gamma10

    @property
    def rho(self) -> float:
        s = self.sigma
        return float(s[0, 1] / math.sqrt(s[0, 0] * s[1, 1]))

    @classmethod
    def from_rho(cls, base: ModelParams, rho: float, sd1: float = 1.0, sd2: float = 2.0,
                 emission_effect: str = "u1") -> "CorrelatedTruth":
        if not -1.0 <= rho <= 1.0:
            raise ValidationError("rho must lie in [-1, 1]")
        c = rho * sd1 * sd2
        return cls(base, np.array([[sd1 * sd1, c], [c, sd2 * sd2]]), emission_effect)

    def shared_equivalent(self) -> ModelParams:
        """Shared-effect parameters that coincide with this model when ``rho = 1``."""
        s = self.sigma
        return self.base.replace(
            lam=math.log(s[0, 0]), delta_star=math.sqrt(s[1, 1] / s[0, 0])
        )


def _simulate(base: ModelParams, effects: np.ndarray, N: int, n: int, miles_gen, seed,
              loading_01, loading_10, emission_effect) -> Dataset:
    """Shared machinery: ``effects`` is (N, 2) of random-effect draws in use."""
    chain_u = np.empty((N, n, 3))
    miles = np.ones((N, n))
    for i in range(N):
        chain_u[i] = subject_rng(seed, i, STREAM_CHAIN).random((n, 3))
        if miles_gen is not None:
            miles[i] = miles_gen(subject_rng(seed, i, STREAM_MILES), n)
    if np.any(~(miles > 0)):
        raise ValidationError("miles generator produced non-positive exposure")
    t = np.arange(1, n + 1)
    logm = np.log(miles)
    z01 = loading_01(effects)
    z10 = loading_10(effects)
    u_e = emission_effect(effects)

    b = np.empty((N, n), dtype=np.int64)
    y = np.empty((N, n), dtype=np.int64)
    x = np.empty((N, n), dtype=np.int64)
    b[:, 0] = chain_u[:, 0, 0] < expit(base.pi1)
    for j in range(n):
        if j > 0:
            yp = y[:, j - 1]
            p01 = expit(base.gamma01 + base.delta1 * yp + z01)
            p10 = expit(base.gamma10 + base.delta2 * yp + z10)
            stay1 = chain_u[:, j, 0] >= p10
            go1 = chain_u[:, j, 0] < p01
            b[:, j] = np.where(b[:, j - 1] == 1, stay1, go1)
        pi = expit(logm[:, j] + base.alpha0 + base.alpha1 * b[:, j] + base.alpha2 * u_e)
        y[:, j] = chain_u[:, j, 1] < pi
        mu = np.exp(
            logm[:, j] + base.beta0 + base.beta1 * b[:, j] + base.beta2 * t[j] + base.beta3 * u_e
        )
        x[:, j] = poisson.ppf(chain_u[:, j, 2], mu).astype(np.int64)
    width = len(str(max(N - 1, 0)))
    subjects = tuple(
        SubjectSeries(f"s{i:0{width}d}", t, miles[i], y[i], x[i]) for i in range(N)
    )
    return Dataset(subjects), b


def _draw_normals(seed, N: int, k: int) -> np.ndarray:
    return np.stack([subject_rng(seed, i, STREAM_EFFECT).standard_normal(k) for i in range(N)])


def _check_sizes(N, n):
    if int(N) < 1 or int(n) < 2:
        raise ValidationError("need N >= 1 subjects and n >= 2 observations")


def simulate_shared(truth: ModelParams, N: int, n: int, miles_gen: MilesGen | None = None,
                    seed=0, return_states: bool = False):
    """Dataset from the shared-random-effect model.

    Without ``miles_gen`` every month has unit exposure (zero offset).  With
    ``return_states`` the simulated hidden states (N, n) are returned too.
    """
    _check_sizes(N, n)
    z = _draw_normals(seed, N, 2)[:, 0] * truth.sd
    effects = z[:, None]
    ds, states = _simulate(
        truth, effects, N, n, miles_gen, seed,
        loading_01=lambda e: e[:, 0],
        loading_10=lambda e: truth.delta_star * e[:, 0],
        emission_effect=lambda e: e[:, 0],
    )
    return (ds, states) if return_states else ds


def simulate_correlated(truth: CorrelatedTruth, N: int, n: int, seed=0,
                        miles_gen: MilesGen | None = None, return_states: bool = False):
    """Dataset with bivariate-normal effects on the two transition logits."""
    _check_sizes(N, n)
    w, V = np.linalg.eigh(truth.sigma)
    root = V * np.sqrt(np.clip(w, 0.0, None))
    effects = _draw_normals(seed, N, 2) @ root.T
    pick = {
        "none": lambda e: np.zeros(e.shape[0]),
        "u1": lambda e: e[:, 0],
        "u2": lambda e: e[:, 1],
    }[truth.emission_effect]
    ds, states = _simulate(
        truth.base, effects, N, n, miles_gen, seed,
        loading_01=lambda e: e[:, 0],
        loading_10=lambda e: e[:, 1],
        emission_effect=pick,
    )
    return (ds, states) if return_states else ds


@dataclass(frozen=True)
class SimStudyConfig:
    replications: int
    N: int = 60
    n: int = 20
    truth: ModelParams | CorrelatedTruth = None
    Q: int | tuple[int, ...] = 11
    seed: int = 0
    workers: int = 1
    fixed: Mapping[str, float] = field(default_factory=lambda: {"beta2": 0.0})
    init: ModelParams | None = None
    miles_gen: MilesGen | None = None
    fit_overrides: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if int(self.replications) < 1:
            raise ValidationError("replications must be at least 1")
        if self.truth is None:
            raise ValidationError("a generating truth is required")
        if int(self.workers) < 1:
            raise ValidationError("workers must be at least 1")
        _check_sizes(self.N, self.n)
        qs = self.orders
        if any(q < 1 for q in qs):
            raise ValidationError("quadrature orders must be positive")

    @property
    def orders(self) -> tuple[int, ...]:
        return tuple(self.Q) if isinstance(self.Q, (tuple, list)) else (int(self.Q),)

    @property
    def shared_truth(self) -> ModelParams:
        if isinstance(self.truth, CorrelatedTruth):
            return self.truth.shared_equivalent()
        return self.truth

    def dataset(self, replication: int) -> Dataset:
        seed = (self.seed, replication)
        if isinstance(self.truth, CorrelatedTruth):
            return simulate_correlated(self.truth, self.N, self.n, seed, self.miles_gen)
        return simulate_shared(self.truth, self.N, self.n, self.miles_gen, seed)

    def fit_config(self, Q: int) -> FitConfig:
        init = self.init if self.init is not None else self.shared_truth
        init = init.replace(**dict(self.fixed))
        return FitConfig(Q=Q, init=init, fixed=dict(self.fixed), **dict(self.fit_overrides))


@dataclass(frozen=True)
class QSummary:
    Q: int
    names: tuple[str, ...]
    truth: np.ndarray
    estimates: np.ndarray  # (converged fits, params)
    ses: np.ndarray
    n_failed: int

    @property
    def n_used(self) -> int:
        return self.estimates.shape[0]

    @property
    def mean(self) -> np.ndarray:
        if self.n_used == 0:
            return np.full(len(self.names), np.nan)
        return self.estimates.mean(axis=0)

    @property
    def sd(self) -> np.ndarray:
        return self.estimates.std(axis=0, ddof=1) if self.n_used > 1 else np.full(len(self.names), np.nan)

    @property
    def mean_se(self) -> np.ndarray:
        """Mean asymptotic standard error; NaN where none were computed."""
        ses = self.ses.reshape(-1, len(self.names))
        n = np.sum(np.isfinite(ses), axis=0)
        total = np.nansum(ses, axis=0)
        return np.where(n > 0, total / np.maximum(n, 1), np.nan)

    @property
    def mc_se(self) -> np.ndarray:
        """Monte Carlo standard error of the mean estimate."""
        return self.sd / math.sqrt(self.n_used)

    def row(self, name: str) -> dict[str, float]:
        k = self.names.index(name)
        return dict(truth=self.truth[k], mean=self.mean[k], sd=self.sd[k], mean_se=self.mean_se[k])


@dataclass(frozen=True)
class StudyReport:
    summaries: tuple[QSummary, ...]
    replications: int
    seed: int

    def for_q(self, Q: int) -> QSummary:
        for s in self.summaries:
            if s.Q == Q:
                return s
        raise KeyError(Q)

    def to_rows(self) -> list[dict[str, object]]:
        rows = []
        for s in self.summaries:
            mean, sd, mse = s.mean, s.sd, s.mean_se
            for k, name in enumerate(s.names):
                rows.append(
                    dict(Q=s.Q, parameter=name, truth=float(s.truth[k]), mean=float(mean[k]),
                         sd=float(sd[k]), mean_se=float(mse[k]), n_used=s.n_used,
                         n_failed=s.n_failed)
                )
        return rows


def _one_replication(cfg: SimStudyConfig, r: int) -> list[tuple[int, FitResult | None]]:
    d = cfg.dataset(r)
    out = []
    for Q in cfg.orders:
        try:
            res = fit(d, cfg.fit_config(Q))
        except ArithmeticError:
            res = None
        out.append((Q, res))
    return out


def _run_chunk(args):
    cfg, reps = args
    return [(r, _one_replication(cfg, r)) for r in reps]


def run_study(cfg: SimStudyConfig, progress: Callable[[int], None] | None = None) -> StudyReport:
    """Simulate, fit and summarise ``cfg.replications`` datasets.

    Non-converged fits are excluded from the summaries and counted.
    """
    reps = list(range(cfg.replications))
    results: dict[int, list] = {}
    if cfg.workers > 1:
        chunks = [(cfg, reps[w::cfg.workers]) for w in range(cfg.workers)]
        with ProcessPoolExecutor(cfg.workers) as ex:
            for chunk in ex.map(_run_chunk, chunks):
                results.update(dict(chunk))
    else:
        for r in reps:
            results[r] = _one_replication(cfg, r)
            if progress is not None:
                progress(r)
    truth = cfg.shared_truth
    summaries = []
    for qi, Q in enumerate(cfg.orders):
        est, ses, failed, names = [], [], 0, None
        for r in reps:
            res = results[r][qi][1]
            if res is None or not res.converged:
                failed += 1
                continue
            names = res.names
            est.append(res.values)
            ses.append(res.se)
        if names is None:
            names = tuple(n for n in PARAM_NAMES if n not in cfg.fixed)
        k = len(names)
        tv = truth.to_dict()
        summaries.append(
            QSummary(
                Q, tuple(names), np.array([tv[n] for n in names]),
                np.array(est).reshape(-1, k), np.array(ses).reshape(-1, k), failed,
            )
        )
    return StudyReport(tuple(summaries), cfg.replications, cfg.seed)
