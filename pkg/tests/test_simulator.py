import dataclasses

import numpy as np
import pytest

from adfolio import simulator
from adfolio.model import AdSpec, PosteriorSummary, PriorKind, PriorSpec
from adfolio.qp import DEFAULT_Q_GRID, SolverFailure
from adfolio.simulator import (
    ExperimentConfig,
    PriorRegime,
    approximate_prior,
    run_experiment,
    run_trial,
    single_winner,
    stream,
)

SMALL_GRID = (0.0, 100.0, 500.0, 2000.0, 20000.0)


def small_cfg(**kw):
    base = dict(n_cpc=3, n_cpa=3, q_grid=SMALL_GRID, trials=6, master_seed=5)
    base.update(kw)
    return ExperimentConfig(**base)


def test_defaults():
    cfg = ExperimentConfig()
    assert (cfg.n_cpc, cfg.n_cpa) == (10, 10)
    assert (cfg.cpc_bid, cfg.cpa_bid) == (1.0, 10.0)
    assert cfg.cpc_prior == PriorSpec.truncated_gaussian(0.001, 0.0001)
    assert cfg.cpa_prior == PriorSpec.truncated_gaussian(0.0001, 0.00001)
    assert cfg.learning_calls == 100_000
    assert cfg.m == 10_000
    assert cfg.trials == 10_000
    assert cfg.q_grid == DEFAULT_Q_GRID
    assert [ad.id for ad in cfg.ads()][:2] == ["cpc-0", "cpc-1"]
    assert len(cfg.ads()) == 20


@pytest.mark.parametrize(
    "kw",
    [dict(trials=0), dict(m=0), dict(learning_calls=0), dict(n_cpc=0, n_cpa=0), dict(q_grid=(5.0, 1.0)),
     dict(q_grid=(-1.0,)), dict(q_grid=()), dict(cpc_bid=0.0)],
)
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        ExperimentConfig(**kw)


def test_config_roundtrip():
    cfg = small_cfg(prior_regime="approximate", approx_cpc=(0.001, 0.0002))
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again == cfg
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus": 1})


def test_single_winner_examples():
    ads = [AdSpec("a", 1.0), AdSpec("b", 10.0)]
    posts = [PosteriorSummary.from_moments(0.002, 1e-9), PosteriorSummary.from_moments(0.0001, 1e-10)]
    assert single_winner(posts, ads) == 0
    assert single_winner(posts[:1], ads[:1]) == 0
    tie = [PosteriorSummary.from_moments(0.001, 1e-9), PosteriorSummary.from_moments(0.0001, 1e-10)]
    assert single_winner(tie, ads) == 0
    assert single_winner(tie[::-1], [ads[1], ads[0]]) == 0


def test_approximate_prior_from_actual_moments():
    prior = PriorSpec.truncated_gaussian(0.001, 0.0001)
    approx = approximate_prior(prior)
    assert approx.kind is PriorKind.TRUNCATED_UNIFORM
    assert approx.lo == pytest.approx(0.0006, rel=1e-6)
    assert approx.hi == pytest.approx(0.0014, rel=1e-6)
    clipped = approximate_prior(PriorSpec.truncated_gaussian(0.0, 0.1))
    assert clipped.lo == 0.0
    assert approximate_prior(prior, (0.5, 0.2)).hi == 1.0


def test_estimated_priors_by_regime():
    assert set(p.kind for p in small_cfg().estimated_priors()) == {PriorKind.UNIFORM01}
    exact = small_cfg(prior_regime=PriorRegime.EXACT)
    assert exact.estimated_priors() == exact.actual_priors()
    approx = small_cfg(prior_regime=PriorRegime.APPROXIMATE).estimated_priors()
    assert approx[0].hi == pytest.approx(0.0014, rel=1e-6)
    assert approx[-1].hi == pytest.approx(0.00014, rel=1e-6)


def test_streams_are_independent_and_stable():
    a = stream(1, 2, 3, 0).random()
    assert a == stream(1, 2, 3, 0).random()
    assert a != stream(1, 2, 3, 1).random()
    assert a != stream(1, 2, 4, 0).random()
    assert a != stream(2, 2, 3, 0).random()


@pytest.mark.parametrize("regime", list(PriorRegime))
def test_trial_invariants(regime):
    cfg = small_cfg(prior_regime=regime)
    for t in range(3):
        r = run_trial(cfg, t, keep_counts=True)
        assert r.ideal >= r.single_winner_actual >= 0
        assert np.all(r.portfolio_actual <= r.ideal * (1 + 1e-12))
        assert np.all(r.portfolio_actual >= 0)
        assert (r.counts.sum(axis=1) == cfg.m).all()
        assert len(r.records) == cfg.n


def test_default_trial_invariants():
    r = run_trial(ExperimentConfig(), 0)
    assert r.ideal >= r.single_winner_actual
    assert np.all(r.portfolio_actual <= r.ideal * (1 + 1e-12))
    assert r.est_revenue.shape == (70,)


def test_single_ad_market():
    cfg = small_cfg(n_cpc=1, n_cpa=0)
    r = run_trial(cfg, 0)
    assert np.all(r.portfolio_actual == r.ideal)
    assert r.single_winner_actual == r.ideal


def test_adding_q_points_leaves_draws_alone():
    a = run_trial(small_cfg(), 2)
    b = run_trial(small_cfg(q_grid=(0.0, 50.0, 100.0)), 2)
    assert np.array_equal(a.rates, b.rates)
    assert a.records == b.records
    assert a.est_revenue[1] == b.est_revenue[2]


def test_one_trial_experiment_is_that_trial():
    cfg = small_cfg(trials=1)
    res = run_experiment(cfg)
    r = run_trial(cfg, 0)
    assert np.array_equal(res.est_rev_frac, r.est_revenue / r.ideal)
    assert np.array_equal(res.portfolio_actual_frac, r.portfolio_actual / r.ideal)
    assert res.single_winner_actual_frac == r.single_winner_actual / r.ideal
    assert res.trials == 1


def test_experiment_determinism_across_workers():
    cfg = small_cfg(trials=8)
    a = run_experiment(cfg)
    b = run_experiment(cfg)
    c = run_experiment(cfg, parallel=2, chunk=3)
    for f in ("est_rev_frac", "portfolio_actual_frac", "advantage_frac", "est_rev_pooled"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
        assert np.array_equal(getattr(a, f), getattr(c, f))
    assert a.single_winner_actual_frac == c.single_winner_actual_frac


def test_fraction_ranges():
    res = run_experiment(small_cfg(trials=10))
    assert np.all(res.portfolio_actual_frac <= 1 + 1e-12)
    assert 0 <= res.single_winner_actual_frac <= 1
    assert np.all(res.est_rev_frac >= 0)
    assert res.aggregation.startswith("mean of per-trial")


def test_exact_regime_with_abundant_learning():
    cfg = ExperimentConfig(
        prior_regime=PriorRegime.EXACT, learning_calls=10_000_000, q_grid=(1e9,), trials=100, master_seed=3
    )
    res = run_experiment(cfg)
    assert res.portfolio_actual_frac[0] == pytest.approx(res.single_winner_actual_frac, rel=0.01)


def test_failure_threshold(monkeypatch):
    real = simulator.run_trial

    def flaky(cfg, i, keep_counts=False):
        if i in fail:
            raise SolverFailure(f"boom {i}")
        return real(cfg, i, keep_counts)

    monkeypatch.setattr(simulator, "run_trial", flaky)
    cfg = dataclasses.replace(small_cfg(), trials=10)
    fail = {3}
    with pytest.raises(SolverFailure, match="trial 3"):
        run_experiment(cfg)
    monkeypatch.setattr(simulator, "MAX_FAILURE_FRACTION", 0.2)
    res = run_experiment(cfg)
    assert res.trials == 9
    assert res.failed_trials[0][0] == 3
