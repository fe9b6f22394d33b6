import math
from dataclasses import replace

import numpy as np
import pytest

from asyncbyz.aggregation import AggregatorSpec
from asyncbyz.attacks import AttackSpec
from asyncbyz.engine import SimulationConfig, mean_stderr, run, run_trial, sweep, with_axis
from asyncbyz.errors import ConfigError
from asyncbyz.optimizer import OptimizerConfig, theory_eta
from asyncbyz.problems import ProblemSpec
from asyncbyz.scheduler import ScheduleSpec, write_trace


def config(T=500, m_honest=3, m_byzantine=0, lam=0.0, attack=None, base="weighted-cwmed", ctma=False,
           kind="iid-categorical", stride=1, trials=2, seed=0, **kw):
    return SimulationConfig(
        problem=ProblemSpec(dim=5),
        schedule=ScheduleSpec(kind, m_honest=m_honest, m_byzantine=m_byzantine, lam=lam),
        aggregator=AggregatorSpec(base=base, ctma=ctma, lam=lam),
        optimizer=OptimizerConfig(eta=1.0, radius=10.0, horizon=T),
        attack=attack,
        trials=trials,
        metric_stride=stride,
        seed=seed,
        eta_theory_scale=1.0,
        **kw,
    )


ATTACKED = dict(m_byzantine=2, lam=0.3, attack=AttackSpec("sign-flip"))


def test_theory_eta_applied():
    c = config(T=400)
    assert c.optimizer.eta == theory_eta(1.0, 400)


def test_same_seed_same_rows():
    c = config(**ATTACKED)
    a, b = run(c), run(c)
    strip = lambda rows: [replace(r, wallclock_ns=0) for r in rows]  # noqa: E731
    assert strip(a.rows) == strip(b.rows)
    assert strip(run(replace(c, seed=1)).rows) != strip(a.rows)


def test_parallel_equals_serial():
    c = config(trials=3, **ATTACKED)
    strip = lambda rows: [replace(r, wallclock_ns=0) for r in rows]  # noqa: E731
    assert strip(run(c, workers=2).rows) == strip(run(c).rows)


def test_row_count_and_stride():
    res = run(config(T=500, stride=50, trials=3))
    assert len(res.rows) == 30
    assert [r.t for r in res.trials[0].rows] == list(range(50, 501, 50))


def test_round_robin_tau_max_is_m():
    res = run(config(kind="round-robin", m_honest=4, trials=1))
    assert all(r.tau_max == 4 for r in res.rows if r.t > 4)


@pytest.mark.parametrize("attack", ["sign-flip", "label-flip", "little", "empire"])
def test_conservation_and_stale_momentum_replay(attack):
    c = config(m_byzantine=2, lam=0.3, attack=AttackSpec(attack), trials=1)
    tr = run_trial(c, 0, record=True)
    assert tr.counts.sum() == c.horizon
    byz = sum(e.is_byzantine for e in tr.events)
    assert tr.t_byzantine == byz
    assert tr.counts[:3].sum() == c.horizon - byz
    for worker, sent in tr.last_sent.items():
        np.testing.assert_array_equal(tr.server.momenta[worker], sent)
    assert tr.rows[-1].honest_frac == (c.horizon - byz) / c.horizon


def test_debug_mode_checks_query_gap_without_violations():
    res = run(config(assertion_level="debug", **ATTACKED))
    assert res.query_gap_checks > 0
    assert res.query_gap_violations == 0


def test_single_worker_improves_with_horizon():
    short = run(config(T=1000, m_honest=1, base="weighted-mean", trials=5)).summary()[0]
    long = run(config(T=10000, m_honest=1, base="weighted-mean", trials=5, stride=1000)).summary()[0]
    assert long < short


def test_exhausted_trace_is_reported_as_fault(tmp_path):
    path = tmp_path / "arrivals.csv"
    from asyncbyz.scheduler import generate

    write_trace(generate(ScheduleSpec(m_honest=2), np.random.default_rng(0), 50), path)
    c = replace(config(T=100, m_honest=2, trials=1),
                schedule=ScheduleSpec("trace-file", m_honest=2, trace_path=str(path)))
    res = run(c)
    assert res.faults and "EndOfTrace" in res.faults[0][1]
    last = res.rows[-1]
    assert last.t == 51 and math.isnan(last.excess_loss)
    assert math.isnan(res.final_excess_losses()[0])


def test_config_validation():
    with pytest.raises(ConfigError):
        replace(config(), trials=0)
    with pytest.raises(ConfigError):
        config(m_byzantine=1, lam=0.2)  # Byzantine workers without an attack
    with pytest.raises(ConfigError):
        replace(config(), assertion_level="loud")
    with pytest.raises(ConfigError):
        replace(config(), optimizer=OptimizerConfig(eta=0.1, radius=3.0, horizon=10))


def test_with_axis_variants():
    c = config(**ATTACKED)
    assert with_axis(c, "T", 250).optimizer.eta == theory_eta(1.0, 250)
    lam = with_axis(c, "lambda", 0.1)
    assert lam.schedule.lam == lam.aggregator.lam == 0.1
    agg = with_axis(c, "aggregator", "weighted-gm+ctma")
    assert agg.aggregator.base == "weighted-gm" and agg.aggregator.ctma
    none = with_axis(c, "attack", "none")
    assert none.attack is None and none.schedule.m_byzantine == 0
    eta = with_axis(c, "eta", 0.003)
    assert eta.optimizer.eta == 0.003 and eta.eta_theory_scale is None
    with pytest.raises(ConfigError):
        with_axis(c, "gamma", 0.3)


def test_mean_stderr():
    assert mean_stderr([1.0, 3.0]) == (2.0, 1.0, 2)
    assert mean_stderr([5.0]) == (5.0, 0.0, 1)
    assert mean_stderr([])[2] == 0


def test_lambda_sweep_monotone():
    base = SimulationConfig(
        problem=ProblemSpec(dim=10),
        schedule=ScheduleSpec(m_honest=5, m_byzantine=4),
        aggregator=AggregatorSpec("weighted-cwmed"),
        optimizer=OptimizerConfig(eta=1.0, radius=10.0, horizon=2000),
        attack=AttackSpec("sign-flip"),
        trials=10,
        metric_stride=2000,
        eta_theory_scale=0.25,
    )
    means = [p.summary[0] for p in sweep(base, "lambda", [0.0, 0.2, 0.4])]
    assert means[0] <= means[1] <= means[2]
