import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import expit

from mixhmm.model import SIMULATION_TRUTH, ModelParams, ValidationError
from mixhmm.quadrature import adapt, gh_rule
from mixhmm.simulation import (
    STREAM_EFFECT,
    CorrelatedTruth,
    SimStudyConfig,
    lognormal_miles,
    run_study,
    simulate_correlated,
    simulate_shared,
    subject_rng,
)

NO_LAG = SIMULATION_TRUTH.replace(delta1=0.0, delta2=0.0)


def _effects(truth, N, seed):
    return np.array([subject_rng(seed, i, STREAM_EFFECT).standard_normal(2)[0] for i in range(N)]) * truth.sd


def test_initial_state_rate():
    _, b = simulate_shared(SIMULATION_TRUTH, 10_000, 2, seed=1, return_states=True)
    assert b[:, 0].mean() == pytest.approx(expit(-0.8), abs=0.01)
    assert expit(-0.8) == pytest.approx(0.3100, abs=1e-4)


def test_state_free_cnc_rate_matches_quadrature():
    p = SIMULATION_TRUTH.replace(alpha1=0.0, beta1=0.0, delta1=0.0, delta2=0.0)
    d = simulate_shared(p, 5000, 4, seed=2)
    rate = np.mean(np.concatenate([s.y for s in d]))
    expected = adapt(gh_rule(30), 0.0, p.sd, p.lam).integrate(lambda u: expit(p.alpha0 + p.alpha2 * u))
    assert rate == pytest.approx(expected, abs=0.01)


def test_outputs_satisfy_type_invariants():
    for seed in range(5):
        d = simulate_shared(SIMULATION_TRUTH, 20, 10, lognormal_miles(), seed)
        for s in d:
            assert set(np.unique(s.y)) <= {0, 1}
            assert s.x.dtype.kind == "i" and s.x.min() >= 0
            assert np.all(s.miles > 0) and np.array_equal(s.t, np.arange(1, 11))


def test_default_exposure_is_unit():
    d = simulate_shared(SIMULATION_TRUTH, 3, 5, seed=0)
    assert all(np.all(s.miles == 1.0) for s in d)


def test_lognormal_miles_mean():
    gen = lognormal_miles()
    m = gen(np.random.default_rng(0), 200_000)
    assert m.mean() == pytest.approx(358.1, rel=0.01)


def test_seed_determinism_and_sensitivity():
    a = simulate_shared(SIMULATION_TRUTH, 10, 8, seed=(7, 1))
    assert a.equals(simulate_shared(SIMULATION_TRUTH, 10, 8, seed=(7, 1)))
    assert not a.equals(simulate_shared(SIMULATION_TRUTH, 10, 8, seed=(7, 2)))
    t = CorrelatedTruth.from_rho(NO_LAG, 0.5)
    assert simulate_correlated(t, 10, 8, 3).equals(simulate_correlated(t, 10, 8, 3))


def test_subjects_do_not_depend_on_dataset_size():
    small = simulate_shared(SIMULATION_TRUTH, 5, 8, seed=4)
    big = simulate_shared(SIMULATION_TRUTH, 50, 8, seed=4)
    for i in range(5):
        assert np.array_equal(small[i].y, big[i].y) and np.array_equal(small[i].x, big[i].x)


def _summaries(d):
    return np.array([[s.y.sum(), s.x.sum(), np.abs(np.diff(s.y)).sum(), s.x.max()] for s in d])


def test_perfect_correlation_matches_shared_model():
    base = NO_LAG.replace(delta_star=1.0, lam=0.0)
    corr = CorrelatedTruth.from_rho(base, 1.0, sd1=1.0, sd2=1.0)
    assert corr.shared_equivalent().delta_star == pytest.approx(1.0)
    a = _summaries(simulate_correlated(corr, 1000, 20, seed=5))
    b = _summaries(simulate_shared(base, 1000, 20, seed=6))
    for k in range(a.shape[1]):
        assert stats.ks_2samp(a[:, k], b[:, k]).pvalue > 0.01


def _transition_freqs(b):
    prev, cur = b[:, :-1], b[:, 1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        f01 = ((prev == 0) & (cur == 1)).sum(1) / (prev == 0).sum(1)
        f10 = ((prev == 1) & (cur == 0)).sum(1) / (prev == 1).sum(1)
    return f01, f10


def test_independent_effects_give_uncorrelated_transitions():
    # long series: with short ones the two frequencies share a fixed number
    # of months and nearly equal transition counts, which couples them
    corr = CorrelatedTruth.from_rho(NO_LAG, 0.0)
    _, b = simulate_correlated(corr, 5000, 400, seed=8, return_states=True)
    f01, f10 = _transition_freqs(b)
    ok = np.isfinite(f01) & np.isfinite(f10)
    assert ok.sum() > 1000
    assert abs(np.corrcoef(f01[ok], f10[ok])[0, 1]) < 0.05


def test_strong_correlation_shows_in_transitions():
    corr = CorrelatedTruth.from_rho(NO_LAG, 0.9)
    _, b = simulate_correlated(corr, 5000, 20, seed=8, return_states=True)
    f01, f10 = _transition_freqs(b)
    ok = np.isfinite(f01) & np.isfinite(f10)
    assert np.corrcoef(f01[ok], f10[ok])[0, 1] > 0.2


def test_transition_frequencies_by_effect_bin():
    truth = SIMULATION_TRUTH
    N, n, seed = 20_000, 20, 9
    d, b = simulate_shared(truth, N, n, seed=seed, return_states=True)
    u = _effects(truth, N, seed)
    yprev = np.stack([s.y[:-1] for s in d])
    prev, cur = b[:, :-1], b[:, 1:]
    edges = np.quantile(u, np.linspace(0, 1, 6))
    bins = np.clip(np.searchsorted(edges, u, side="right") - 1, 0, 4)
    checked = 0
    for k in range(5):
        rows = bins == k
        for yp in (0, 1):
            for frm, to, g, dl, load in ((0, 1, truth.gamma01, truth.delta1, 1.0),
                                         (1, 0, truth.gamma10, truth.delta2, truth.delta_star)):
                risk = (prev[rows] == frm) & (yprev[rows] == yp)
                if risk.sum() < 2000:
                    continue
                moved = risk & (cur[rows] == to)
                # expectation over the at-risk occasions of this bin
                pu = expit(g + dl * yp + load * u[rows])[:, None] * np.ones((1, n - 1))
                assert moved.sum() / risk.sum() == pytest.approx(pu[risk].mean(), abs=0.01)
                checked += 1
    assert checked >= 10


def test_correlated_truth_validation():
    with pytest.raises(ValidationError):
        CorrelatedTruth(NO_LAG, np.array([[1.0, 3.0], [3.0, 1.0]]))
    with pytest.raises(ValidationError):
        CorrelatedTruth(NO_LAG, np.array([[1.0, 0.5], [0.4, 1.0]]))
    with pytest.raises(ValidationError):
        CorrelatedTruth.from_rho(NO_LAG, 1.2)
    with pytest.raises(ValidationError):
        CorrelatedTruth(NO_LAG, np.eye(2), emission_effect="u3")
    assert CorrelatedTruth.from_rho(NO_LAG, 0.8).rho == pytest.approx(0.8)


def test_emission_effect_switch():
    base = NO_LAG.replace(alpha1=0.0, alpha2=3.0)
    ys = {}
    for which in ("none", "u1", "u2"):
        t = CorrelatedTruth.from_rho(base, 0.0, emission_effect=which)
        ys[which] = np.array([s.y.mean() for s in simulate_correlated(t, 2000, 10, seed=10)])
    # a subject-level effect on cnc inflates the between-subject spread of rates
    assert ys["u1"].var() > 2 * ys["none"].var() and ys["u2"].var() > ys["u1"].var()


def test_study_config_validation():
    with pytest.raises(ValidationError):
        SimStudyConfig(replications=0, truth=SIMULATION_TRUTH)
    with pytest.raises(ValidationError):
        SimStudyConfig(replications=1)
    with pytest.raises(ValidationError):
        SimStudyConfig(replications=1, truth=SIMULATION_TRUTH, Q=(5, 0))


def test_study_report_reproducible_and_worker_independent():
    cfg = SimStudyConfig(replications=2, N=60, n=20, truth=SIMULATION_TRUTH, Q=(5, 11), seed=11,
                         fit_overrides={"compute_se": False})
    a = run_study(cfg).to_rows()
    np.testing.assert_equal(run_study(cfg).to_rows(), a)
    par = SimStudyConfig(**{**cfg.__dict__, "workers": 2})
    np.testing.assert_equal(run_study(par).to_rows(), a)
    assert {r["Q"] for r in a} == {5, 11}
    assert all(r["n_used"] + r["n_failed"] == 2 for r in a)


@pytest.mark.slow
def test_standard_errors_track_sampling_spread():
    cfg = SimStudyConfig(replications=100, N=60, n=20, truth=SIMULATION_TRUTH, Q=11, seed=2014)
    s = run_study(cfg).for_q(11)
    ratio = s.mean_se / s.sd
    bad = {n: round(float(r), 3) for n, r in zip(s.names, ratio) if not 0.75 <= r <= 1.25}
    assert not bad, bad
