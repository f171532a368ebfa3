"""Two-state mixed hidden Markov model for monthly crash/near-crash and
kinematic-event outcomes.

State 0 is the *good* driving state, state 1 the *poor* one.  Every subject
carries a single Gaussian random effect ``u ~ N(0, exp(lam))`` that loads on
both emission models and on both transition logits.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit, gammaln

__all__ = [
    "PARAM_NAMES",
    "ModelParams",
    "SubjectSeries",
    "Dataset",
    "ValidationError",
    "cnc_prob",
    "count_mean",
    "transition_probs",
    "initial_dist",
    "emission_loglik",
    "SIMULATION_TRUTH",
    "TEEN_DRIVING_ESTIMATES",
]

PARAM_NAMES = (
    "alpha0",
    "alpha1",
    "alpha2",
    "beta0",
    "beta1",
    "beta2",
    "beta3",
    "gamma01",
    "gamma10",
    "delta1",
    "delta2",
    "delta_star",
    "lam",
    "pi1",
)


class ValidationError(ValueError):
    """Raised when inputs violate a model or data invariant."""


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set of the shared-random-effect model.

    ``alpha*`` belong to the logistic crash model, ``beta*`` to the Poisson
    kinematic-count model (``beta2`` is the monthly time slope, ``beta3`` the
    random-effect loading), ``gamma*``/``delta*`` to the transition logits,
    ``lam`` is the log random-effect variance and ``pi1`` the logit of being
    in state 1 at the first observation.
    """

    alpha0: float = 0.0
    alpha1: float = 0.0
    alpha2: float = 0.0
    beta0: float = 0.0
    beta1: float = 0.0
    beta2: float = 0.0
    beta3: float = 0.0
    gamma01: float = 0.0
    gamma10: float = 0.0
    delta1: float = 0.0
    delta2: float = 0.0
    delta_star: float = 0.0
    lam: float = 0.0
    pi1: float = 0.0

    def __post_init__(self):
        for name in PARAM_NAMES:
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValidationError(f"parameter {name} is not finite: {value}")
            object.__setattr__(self, name, value)

    @property
    def variance(self) -> float:
        return math.exp(self.lam)

    @property
    def sd(self) -> float:
        return math.exp(0.5 * self.lam)

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "ModelParams":
        values = np.asarray(values, dtype=float)
        if values.shape != (len(PARAM_NAMES),):
            raise ValidationError(
                f"expected {len(PARAM_NAMES)} parameters, got shape {values.shape}"
            )
        return cls(**dict(zip(PARAM_NAMES, values.tolist())))

    def to_dict(self) -> dict[str, float]:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)


# Truth used for the parameter-recovery simulation.  The simulation model
# has no offset and no time term, so beta2 (time slope) is zero and the
# count random-effect loading is beta3.
SIMULATION_TRUTH = ModelParams(
    alpha0=-1.0,
    alpha1=2.0,
    alpha2=1.5,
    beta0=-1.0,
    beta1=2.0,
    beta2=0.0,
    beta3=0.25,
    gamma01=-0.62,
    gamma10=0.4,
    delta1=1.0,
    delta2=3.0,
    delta_star=2.0,
    lam=0.0,
    pi1=-0.8,
)

# Estimates reported for the naturalistic teenage driving data.
TEEN_DRIVING_ESTIMATES = ModelParams(
    alpha0=-7.48,
    alpha1=1.49,
    alpha2=0.03,
    beta0=-5.97,
    beta1=1.31,
    beta2=0.007,
    beta3=1.10,
    gamma01=-3.47,
    gamma10=-2.13,
    delta1=1.75,
    delta2=-2.17,
    delta_star=1.25,
    lam=-0.18,
    pi1=-0.83,
)

# Mean monthly exposure in the driving study.
MEAN_MONTHLY_MILES = 358.1


@dataclass(frozen=True, eq=False)
class SubjectSeries:
    """Aligned monthly observations for one subject."""

    subject_id: str
    t: np.ndarray
    miles: np.ndarray
    y: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.int64)
        miles = np.asarray(self.miles, dtype=float)
        y = np.asarray(self.y)
        x = np.asarray(self.x)
        sid = str(self.subject_id)
        n = t.shape[0] if t.ndim == 1 else -1
        if t.ndim != 1 or any(a.shape != (n,) for a in (miles, y, x)):
            raise ValidationError(f"subject {sid}: vectors must be 1-d with equal length")
        if n < 2:
            raise ValidationError(f"subject {sid}: at least two observations required, got {n}")
        if np.any(np.diff(t) != 1):
            raise ValidationError(f"subject {sid}: months must be consecutive integers")
        if not np.all(np.isfinite(miles)) or np.any(miles <= 0):
            raise ValidationError(f"subject {sid}: miles must be positive")
        if not np.all(np.isin(y, (0, 1))):
            raise ValidationError(f"subject {sid}: y must be binary")
        if np.any(x < 0) or np.any(np.asarray(x, dtype=float) % 1 != 0):
            raise ValidationError(f"subject {sid}: x must be non-negative integers")
        for arr in (t, miles):
            arr.setflags(write=False)
        y = y.astype(np.int64)
        x = x.astype(np.int64)
        y.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "subject_id", sid)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "miles", miles)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def log_miles(self) -> np.ndarray:
        return np.log(self.miles)

    def prefix(self, length: int) -> "SubjectSeries":
        """First ``length`` observations (``length >= 2``)."""
        return SubjectSeries(
            self.subject_id, self.t[:length], self.miles[:length], self.y[:length], self.x[:length]
        )

    def equals(self, other: "SubjectSeries") -> bool:
        return (
            self.subject_id == other.subject_id
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.miles, other.miles)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.x, other.x)
        )


@dataclass(frozen=True)
class PackedData:
    """Subjects padded to a common length for the compiled kernels."""

    y: np.ndarray
    x: np.ndarray
    log_miles: np.ndarray
    t: np.ndarray
    lengths: np.ndarray
    log_x_factorial: np.ndarray


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered collection of subjects with unique ids."""

    subjects: tuple[SubjectSeries, ...] = field(default_factory=tuple)

    def __post_init__(self):
        subjects = tuple(self.subjects)
        ids = [s.subject_id for s in subjects]
        if len(set(ids)) != len(ids):
            raise ValidationError("subject ids must be unique")
        object.__setattr__(self, "subjects", subjects)

    def __len__(self) -> int:
        return len(self.subjects)

    def __iter__(self):
        return iter(self.subjects)

    def __getitem__(self, i):
        return self.subjects[i]

    @property
    def n_obs(self) -> int:
        return sum(len(s) for s in self.subjects)

    def without(self, subject_id: str) -> "Dataset":
        return Dataset(tuple(s for s in self.subjects if s.subject_id != subject_id))

    def sorted(self) -> "Dataset":
        return Dataset(tuple(sorted(self.subjects, key=lambda s: s.subject_id)))

    def equals(self, other: "Dataset") -> bool:
        return len(self) == len(other) and all(
            a.equals(b) for a, b in zip(self.subjects, other.subjects)
        )

    @cached_property
    def packed(self) -> PackedData:
        n_sub = len(self.subjects)
        n_max = max((len(s) for s in self.subjects), default=0)
        y = np.zeros((n_sub, n_max), dtype=np.int64)
        x = np.zeros((n_sub, n_max), dtype=np.int64)
        logm = np.zeros((n_sub, n_max))
        t = np.zeros((n_sub, n_max))
        lengths = np.zeros(n_sub, dtype=np.int64)
        for i, s in enumerate(self.subjects):
            n = len(s)
            y[i, :n] = s.y
            x[i, :n] = s.x
            logm[i, :n] = s.log_miles
            t[i, :n] = s.t
            lengths[i] = n
        return PackedData(y, x, logm, t, lengths, gammaln(x + 1.0))

    @classmethod
    def from_subjects(cls, subjects: Iterable[SubjectSeries]) -> "Dataset":
        return cls(tuple(subjects))


def _check_miles(miles):
    miles = np.asarray(miles, dtype=float)
    if np.any(~(miles > 0)):
        raise ValidationError("miles must be positive")
    return miles


def cnc_prob(p: ModelParams, b, u, miles):
    """Probability of a crash/near-crash in a month."""
    miles = _check_miles(miles)
    return expit(np.log(miles) + p.alpha0 + p.alpha1 * np.asarray(b) + p.alpha2 * np.asarray(u))


def count_mean(p: ModelParams, b, u, miles, t):
    """Poisson mean of the monthly kinematic-event count."""
    miles = _check_miles(miles)
    return np.exp(
        np.log(miles) + p.beta0 + p.beta1 * np.asarray(b) + p.beta2 * np.asarray(t)
        + p.beta3 * np.asarray(u)
    )


def transition_probs(p: ModelParams, u: float, y_prev: int) -> np.ndarray:
    """2x2 transition matrix given the random effect and last month's crash indicator.

    Row ``l`` holds ``Pr(b_j = m | b_{j-1} = l)``.
    """
    p01 = float(expit(p.gamma01 + p.delta1 * y_prev + u))
    p10 = float(expit(p.gamma10 + p.delta2 * y_prev + p.delta_star * u))
    return np.array([[1.0 - p01, p01], [p10, 1.0 - p10]])


def initial_dist(p: ModelParams) -> np.ndarray:
    r1 = float(expit(p.pi1))
    return np.array([1.0 - r1, r1])


def emission_loglik(p: ModelParams, y, x, miles, t, b, u):
    """Joint log density of the two outcomes given state and random effect.

    The crash indicator and the kinematic count are conditionally
    independent given ``(b, u)``.
    """
    miles = _check_miles(miles)
    y = np.asarray(y)
    x = np.asarray(x)
    eta = np.log(miles) + p.alpha0 + p.alpha1 * np.asarray(b) + p.alpha2 * np.asarray(u)
    # log expit(eta) = -softplus(-eta)
    log_bern = y * eta - np.logaddexp(0.0, eta)
    log_mu = (
        np.log(miles) + p.beta0 + p.beta1 * np.asarray(b) + p.beta2 * np.asarray(t)
        + p.beta3 * np.asarray(u)
    )
    log_pois = x * log_mu - np.exp(log_mu) - gammaln(x + 1.0)
    return log_bern + log_pois
