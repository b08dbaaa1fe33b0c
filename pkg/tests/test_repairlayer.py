import numpy as np
import pytest

from layeredq import vacq
from layeredq.depcore import from_derivatives, lag1_stats
from layeredq.desim import SimConfig
from layeredq.distkit import Exponential, Hyper2
from layeredq.qbd import exact_queue, phase_type_downtime_stats
from layeredq.repairlayer import (
    STATES,
    AnalyticPathUnavailable,
    LayeredSpec,
    MachineSpec,
    approximate_queue,
    breakdown_probs,
    downtime_stats,
    dtmc_stationary,
    independent_baseline,
    layered_from_config,
    layered_to_config,
    moment_match,
    repeat_probs,
    simulated_stats,
    transition_matrix,
    with_lam,
)


def layered(s1=1.0, s2=1.0, n1=1.0, n2=1.0, lam=0.25, r1=None, r2=None):
    unit = Exponential(1.0)
    return LayeredSpec(
        MachineSpec(lam, unit, s1, r1 or Exponential(n1)), MachineSpec(0.0, unit, s2, r2 or Exponential(n2))
    )


def random_rates(rng, n):
    return [tuple(rng.uniform(0.01, 10.0, 4)) for _ in range(n)]


def test_symmetric_chain():
    pi = dtmc_stationary(layered())
    assert pi.probs == pytest.approx([0.25, 0.25, 0.25, 0.125, 0.125], abs=1e-14)
    assert pi[(2, 3)] == pytest.approx(0.125)


def test_chain_residual_and_normalisation():
    rng = np.random.default_rng(0)
    for rates in random_rates(rng, 200):
        spec = layered(*rates)
        P = transition_matrix(spec)
        pi = dtmc_stationary(spec).probs
        assert np.allclose(P.sum(axis=1), 1.0)
        assert np.max(np.abs(pi @ P - pi)) < 1e-13
        assert pi.sum() == pytest.approx(1.0) and pi.min() >= 0


def test_machine_one_never_breaks():
    pi = dtmc_stationary(layered(s1=1e-9))
    up1 = sum(pi[s] for s in STATES if s[0] == 1)
    assert up1 > 1 - 1e-8


def test_breakdown_probs():
    z_up, z_down = breakdown_probs(layered())
    assert z_down == pytest.approx(0.5)
    assert breakdown_probs(layered(s2=0.0))[1] == 0.0
    rng = np.random.default_rng(1)
    for rates in random_rates(rng, 1000):
        z_up, z_down = breakdown_probs(layered(*rates))
        assert z_up + z_down == pytest.approx(1.0, abs=1e-14)


def test_breakdown_probs_match_chain():
    # P(M2 in repair at a breakdown of M1), from the chain: breakdowns of M1
    # happen from (1,1) and (1,3); from (1,3) M2 is in repair
    rng = np.random.default_rng(2)
    for rates in random_rates(rng, 100):
        spec = layered(*rates)
        pi = dtmc_stationary(spec)
        P = transition_matrix(spec)
        i11, i13 = STATES.index((1, 1)), STATES.index((1, 3))
        i31 = STATES.index((3, 1))
        from_up = pi.probs[i11] * P[i11, i31]
        from_rep = pi.probs[i13] * P[i13, STATES.index((2, 3))]
        assert breakdown_probs(spec)[1] == pytest.approx(from_rep / (from_up + from_rep), abs=1e-12)


def test_repeat_probs():
    v, w = repeat_probs(layered())
    assert (v, w) == pytest.approx((1 / 3, 2 / 3))
    v, w = repeat_probs(layered(n2=1e12))
    assert v < 1e-11 and w < 1e-11
    rng = np.random.default_rng(3)
    for rates in random_rates(rng, 1000):
        s1, s2, n1, n2 = rates
        v, w = repeat_probs(layered(*rates))
        assert 0 <= v <= w <= 1
        # v solves v = s2/(s1+s2+n2) as a fixed point of one repair cycle
        assert abs(v - s2 / (s1 + s2 + n2)) < 1e-14


def test_downtime_stats_unit_rates():
    st = downtime_stats(layered(), 1)
    assert st.mean == pytest.approx(1.5)
    assert st.m2 == pytest.approx(4.0)
    assert st.covariance == pytest.approx(1 / 12)
    assert st.r == pytest.approx(1 / 21)


def test_downtime_stats_symmetry():
    spec = layered(0.7, 1.3, 2.0, 0.4)
    a = downtime_stats(spec, 2)
    b = downtime_stats(spec.swapped(), 1)
    assert (a.mean, a.m2, a.joint) == pytest.approx((b.mean, b.m2, b.joint))


def test_covariance_properties():
    assert downtime_stats(layered(s2=0.0)).covariance == pytest.approx(0.0, abs=1e-15)
    assert downtime_stats(layered(s1=0.0)).covariance == pytest.approx(0.0, abs=1e-15)
    rng = np.random.default_rng(4)
    for rates in random_rates(rng, 1000):
        assert downtime_stats(layered(*rates)).covariance >= 0
    grid = np.linspace(0.1, 10, 40)
    cov_nu1 = [downtime_stats(layered(n1=x)).covariance for x in grid]
    cov_nu2 = [downtime_stats(layered(n2=x)).covariance for x in grid]
    cov_s1 = [downtime_stats(layered(s1=x)).covariance for x in grid]
    assert np.all(np.diff(cov_nu1) < 0)
    assert np.all(np.diff(cov_nu2) < 0)
    assert np.all(np.diff(cov_s1) > 0)


def test_phase_type_stats_reduce_to_closed_form():
    rng = np.random.default_rng(5)
    for rates in random_rates(rng, 50):
        spec = layered(*rates)
        a, b = downtime_stats(spec, 1), phase_type_downtime_stats(spec, 1)
        assert (b.mean, b.m2, b.joint) == pytest.approx((a.mean, a.m2, a.joint), rel=1e-10)


def test_non_exponential_repairs_need_other_path():
    spec = layered(r1=Hyper2.balanced(1.0, 8.0), r2=Hyper2.balanced(1.0, 8.0))
    with pytest.raises(AnalyticPathUnavailable):
        downtime_stats(spec, 1)


def test_simulated_stats_agree_with_closed_form():
    spec = layered()
    from layeredq.desim import simulate_downtimes

    res = simulate_downtimes(spec, SimConfig(warmup=1e3, horizon=2.5e6, seed=3)).machine(1)
    exact = downtime_stats(spec, 1)
    assert res.mean.contains(exact.mean)
    assert res.m2.contains(exact.m2)
    assert res.cov.contains(exact.covariance)
    assert abs(res.r.value - 1 / 21) < 0.003
    st = simulated_stats(spec, 1, SimConfig(warmup=1e3, horizon=2e5, seed=4))
    assert st.mean == pytest.approx(1.5, rel=0.02)


def test_figure7_correlation():
    r1 = Hyper2(0.975, 100.0, 0.01)
    spec = layered(s1=100.0, s2=0.02, r1=r1, r2=Exponential(0.01), lam=0.0)
    st = phase_type_downtime_stats(spec, 1)
    assert st.r == pytest.approx(0.26, abs=0.02)
    sim = simulated_stats(spec, 1, SimConfig(warmup=1e4, horizon=2e7, seed=8))
    assert sim.mean == pytest.approx(st.mean, rel=0.05)


def test_hyperexponential_stats_against_simulation():
    rep = Hyper2.balanced(1.0, 8.0)
    spec = layered(r1=rep, r2=rep)
    from layeredq.desim import simulate_downtimes

    res = simulate_downtimes(spec, SimConfig(warmup=1e3, horizon=4e6, seed=2, replications=2)).machine(1)
    st = phase_type_downtime_stats(spec, 1)
    assert res.mean.contains(st.mean)
    assert res.cov.contains(st.covariance)


def test_moment_match_examples():
    st = downtime_stats(layered(), 1)
    res = moment_match(st)
    assert res.g1 == pytest.approx(1 / 21)
    assert res.chi1 == pytest.approx(-(20 / 21) * 1.5)
    assert np.max(np.abs(res.residuals(st))) < 1e-12
    indep = moment_match(downtime_stats(layered(s2=0.0), 1))
    assert indep.g1 == 0.0 and indep.chi1 == pytest.approx(-1.0)


@pytest.mark.parametrize("policy", ["repair-scv", "increment-scv"])
def test_moment_match_round_trip(policy):
    rng = np.random.default_rng(6)
    for rates in random_rates(rng, 100):
        st = downtime_stats(layered(*rates), 1)
        res = moment_match(st, policy)
        assert np.max(np.abs(res.residuals(st))) < 1e-9 * max(1.0, st.m2)
        pair = from_derivatives(res.chi1, res.chi2, res.g1, res.g2)
        back = lag1_stats(pair)
        assert (back.mean, back.m2, back.r) == pytest.approx((st.mean, st.m2, st.r), rel=1e-9, abs=1e-12)


def test_moment_match_fallback_and_errors():
    # unit rates: the repair-SCV choice asks for g''(0) > 0
    res = moment_match(downtime_stats(layered(), 1), "repair-scv")
    assert res.fallback and res.g2 == 0.0
    with pytest.raises(ValueError):
        moment_match(downtime_stats(layered(), 1), "nonsense")
    from layeredq.depcore import DowntimeStats

    with pytest.raises(ValueError):
        moment_match(DowntimeStats(1.0, 2.0, 0.5))  # r < 0
    explicit = moment_match(downtime_stats(layered(), 1), "explicit", chi2=3.0)
    assert explicit.chi2 == 3.0


def test_approximation_reduces_to_baseline_without_dependence():
    spec = layered(s2=0.0)
    a = vacq.mean_L(approximate_queue(spec, 1))
    b = vacq.mean_L(independent_baseline(spec, 1))
    assert a == pytest.approx(b, abs=1e-8)
    # and both are exact then
    assert a == pytest.approx(exact_queue(spec, 1).mean, rel=1e-9)


def test_baseline_underestimates_with_positive_correlation():
    for rates in [(1, 1, 1, 1), (1, 2, 1, 1), (0.5, 1, 0.2, 0.5)]:
        spec = layered(*rates, lam=0.1)
        assert downtime_stats(spec).r > 0
        assert vacq.mean_L(independent_baseline(spec, 1)) < exact_queue(spec, 1).mean


def test_golden_approximation_mean():
    assert vacq.mean_L(approximate_queue(layered(), 1)) == pytest.approx(2.205, abs=0.005)


def test_config_round_trip_and_with_lam():
    spec = layered(0.3, 2.0, 1.5, 0.7, lam=0.2, r1=Hyper2.balanced(1.0, 3.0))
    assert layered_from_config(layered_to_config(spec)) == spec
    assert with_lam(spec, 2, 0.4).m2.lam == 0.4 and with_lam(spec, 1, 0.1).m1.lam == 0.1
    with pytest.raises(ValueError, match="machines"):
        layered_from_config({"machines": []})
    with pytest.raises(ValueError, match="missing key"):
        layered_from_config({"machines": [{"lam": 1}, {"lam": 1}]})
