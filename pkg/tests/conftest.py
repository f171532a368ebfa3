import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from mixhmm.model import PARAM_NAMES, ModelParams, SubjectSeries  # noqa: E402

settings.register_profile("default", deadline=None, print_blob=True)
settings.load_profile("default")

# moderate ranges keep every hidden path numerically relevant
RANGES = {
    "alpha0": (-2.0, 1.0),
    "alpha1": (-2.0, 2.0),
    "alpha2": (-1.0, 1.0),
    "beta0": (-1.0, 1.5),
    "beta1": (-1.0, 1.0),
    "beta2": (-0.1, 0.1),
    "beta3": (-0.5, 0.5),
    "gamma01": (-2.0, 2.0),
    "gamma10": (-2.0, 2.0),
    "delta1": (-2.0, 2.0),
    "delta2": (-2.0, 2.0),
    "delta_star": (-1.5, 1.5),
    "lam": (-2.3, 0.7),
    "pi1": (-2.0, 2.0),
}


def random_params(rng: np.random.Generator) -> ModelParams:
    return ModelParams(**{k: float(rng.uniform(*RANGES[k])) for k in PARAM_NAMES})


def random_series(rng: np.random.Generator, n: int, sid: str = "a") -> SubjectSeries:
    start = int(rng.integers(1, 4))
    return SubjectSeries(
        sid,
        np.arange(start, start + n),
        rng.uniform(0.5, 2.0, n),
        rng.integers(0, 2, n),
        rng.poisson(2.0, n),
    )


@st.composite
def params_st(draw):
    return ModelParams(
        **{k: draw(st.floats(*RANGES[k], allow_nan=False)) for k in PARAM_NAMES}
    )


@st.composite
def series_st(draw, min_n=2, max_n=8):
    n = draw(st.integers(min_n, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_series(np.random.default_rng(seed), n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
