import numpy as np
import pytest

from layeredq.depcore import (
    CompoundPoissonG,
    DependencePair,
    LinearG,
    LogLSTG,
    ZeroG,
    from_derivatives,
    independent_pair,
    lag1_stats,
    pair_from_config,
    pair_to_config,
    phase_compound_pair,
    stationary_lst,
    stationary_moments,
)
from layeredq.distkit import Deterministic, ErlangMixture, Exponential, Hyper2, fit_two_moment


def random_pairs(rng, n):
    out = []
    for _ in range(n):
        chi = fit_two_moment(1.0, 1.0 + rng.uniform(0.1, 4.0)) if rng.random() < 0.5 else Exponential(rng.uniform(0.2, 5))
        kind = rng.integers(4)
        if kind == 0:
            g = ZeroG()
        elif kind == 1:
            g = LinearG(rng.uniform(0.0, 0.9))
        elif kind == 2:
            g = CompoundPoissonG(rng.uniform(0.1, 3.0), Exponential(rng.uniform(0.5, 5.0)))
            if g.d1 >= 0.9:
                g = CompoundPoissonG(g.theta, Exponential(g.theta / 0.5))
        else:
            g = LogLSTG(fit_two_moment(rng.uniform(0.05, 0.9), 1.0))
        out.append(DependencePair(chi, g))
    return out


def test_independent_pair_transform_is_chi():
    for d in (Exponential(1.0), Deterministic(2.0), Hyper2.balanced(1.0, 3.0), ErlangMixture(3, 2.0, 0.4)):
        p = independent_pair(d)
        s = np.array([0.0, 0.3, 1.0 + 2j, 7.0])
        assert np.allclose(stationary_lst(p, s), d.lst(s), rtol=0, atol=1e-15)
        if d.moments().scv > 0:
            assert lag1_stats(p).r == 0.0
    assert stationary_moments(independent_pair(Exponential(1.0))) == pytest.approx((1.0, 2.0))
    assert stationary_moments(independent_pair(Deterministic(2.0)))[1] == pytest.approx(4.0)


def test_phase_compound_pair_closed_forms():
    p = phase_compound_pair(2.0)
    assert p.chi.lst(1.0) == pytest.approx(2 / 3)
    assert p.g(1.0) == pytest.approx(1 / 3)
    s = np.linspace(0.0, 10.0, 20) + 1j * np.linspace(-3, 3, 20)
    assert np.max(np.abs(stationary_lst(p, s) - 1.0 / (1.0 + s))) < 1e-10
    assert stationary_lst(p, 1.0) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("delta", [1.6, 2.0, 4.0, 10.0])
def test_phase_compound_correlation(delta):
    st = lag1_stats(phase_compound_pair(delta))
    assert st.r == pytest.approx(1.0 / delta, rel=1e-12)
    assert st.mean == pytest.approx(1.0 / (delta - 1.0), rel=1e-12)


def test_phase_compound_limits():
    assert lag1_stats(phase_compound_pair(1e6)).r < 1e-5
    with pytest.raises(ValueError, match="delta > 1"):
        phase_compound_pair(1.0)


def test_stationary_moments_example():
    p = phase_compound_pair(2.0)
    assert p.chi1 == pytest.approx(-0.5) and p.g1 == pytest.approx(0.5)
    m1, m2 = stationary_moments(p)
    assert m1 == pytest.approx(1.0) and m2 == pytest.approx(2.0)


def test_moments_match_transform_derivatives():
    rng = np.random.default_rng(4)
    for p in random_pairs(rng, 30):
        m1, m2 = stationary_moments(p)
        h = 1e-3 * min(1.0, 1.0 / m1)
        f = lambda x: float(np.real(stationary_lst(p, x)))
        d1 = -(-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h)
        d2 = (-f(2 * h) + 16 * f(h) - 30 * f(0) + 16 * f(-h) - f(-2 * h)) / (12 * h * h)
        assert d1 == pytest.approx(m1, rel=1e-6)
        assert d2 == pytest.approx(m2, rel=1e-6)


def test_stationary_identity():
    rng = np.random.default_rng(8)
    s = rng.uniform(0, 10, 50) + 1j * rng.uniform(-10, 10, 50)
    for p in random_pairs(rng, 30):
        lhs = stationary_lst(p, s)
        rhs = p.chi.lst(s) * stationary_lst(p, p.g(s))
        assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_truncation_bound_and_halving():
    rng = np.random.default_rng(12)
    s = rng.uniform(0, 4, 20) + 1j * rng.uniform(-4, 4, 20)
    for p in random_pairs(rng, 20):
        v1, b1 = stationary_lst(p, s, 1e-8, return_bound=True)
        v2 = stationary_lst(p, s, 0.5e-8)
        assert np.all(np.abs(v1 - v2) <= b1 + 1e-15)
        # the compiled and reference products agree
        assert np.max(np.abs(v1 - stationary_lst(p, s, 1e-8))) < 1e-12


def test_rejects_divergent_pair():
    with pytest.raises(ValueError):
        LinearG(1.0)
    with pytest.raises(ValueError, match="infinite mean"):
        DependencePair(Exponential(1.0), CompoundPoissonG(2.0, Exponential(1.0)))


def test_r_invariant_under_rescaling():
    c = 3.7
    a = DependencePair(Exponential(2.0), CompoundPoissonG(0.8, Exponential(1.5)))
    # D -> cD turns g(s) into g(cs)/c: the intensity divides by c, jumps stretch by c
    b = DependencePair(Exponential(2.0 / c), CompoundPoissonG(0.8 / c, Exponential(1.5 / c)))
    sa, sb = lag1_stats(a), lag1_stats(b)
    assert sb.mean == pytest.approx(c * sa.mean)
    assert sb.r == pytest.approx(sa.r, rel=1e-12)


def test_from_derivatives_examples():
    p = from_derivatives(-1.0, 2.0, 0.0, 0.0)
    assert isinstance(p.g, ZeroG) and isinstance(p.chi, Exponential) and p.chi.rate == pytest.approx(1.0)
    q = from_derivatives(-0.5, 0.5, 0.5, -0.25)
    assert lag1_stats(q).r == pytest.approx(0.5)
    assert isinstance(from_derivatives(-1.0, 1.5, 0.3, 0.0).g, LinearG)


@pytest.mark.parametrize("increment", ["compound", "loglst"])
def test_from_derivatives_round_trip(increment):
    rng = np.random.default_rng(21)
    for _ in range(50):
        c1 = -rng.uniform(0.1, 5)
        c2 = c1 * c1 * (1 + rng.uniform(0, 5))
        g1 = rng.uniform(0, 0.95)
        g2 = -rng.uniform(0, 2) * g1 * g1
        p = from_derivatives(c1, c2, g1, g2, increment=increment)
        assert (p.chi1, p.chi2, p.g1, p.g2) == pytest.approx((c1, c2, g1, g2), rel=1e-12, abs=1e-15)


def test_from_derivatives_rejects_infeasible():
    with pytest.raises(ValueError, match="negative variance"):
        from_derivatives(-1.0, 0.5, 0.2, -0.1)
    with pytest.raises(ValueError, match="g''"):
        from_derivatives(-1.0, 2.0, 0.2, 0.1)
    with pytest.raises(ValueError, match="g'"):
        from_derivatives(-1.0, 2.0, 1.0, -0.1)
    with pytest.raises(ValueError):
        from_derivatives(1.0, 2.0, 0.2, -0.1)


def test_config_round_trip():
    rng = np.random.default_rng(1)
    for p in random_pairs(rng, 12):
        assert pair_from_config(pair_to_config(p)) == p
    with pytest.raises(ValueError):
        pair_from_config({"chi": {"family": "exponential", "params": {"rate": 1}}, "g": {"tag": "other"}})


def _simulate_compound_chain(chi_rate, theta, jump_rate, n, steps, rng):
    """Exponential chi and exponential jumps: the increment over t is Gamma(Poisson(theta t), jump)."""
    d = rng.exponential(1.0 / chi_rate, n)
    for _ in range(steps):
        k = rng.poisson(theta * d)
        nxt = rng.exponential(1.0 / chi_rate, n) + rng.gamma(np.maximum(k, 1), 1.0 / jump_rate) * (k > 0)
        prev, d = d, nxt
    return prev, d


def test_bivariate_transform_against_sampled_chain():
    rng = np.random.default_rng(2024)
    pair = DependencePair(Exponential(1.5), CompoundPoissonG(0.8, Exponential(2.0)))
    x, y = _simulate_compound_chain(1.5, 0.8, 2.0, 1_000_000, 40, rng)
    grid = [(s, z) for s in (0.2, 1.0) for z in (0.1, 0.5, 1.0, 2.0, 4.0)]
    for s, z in grid:
        w = np.exp(-s * x - z * y)
        est, se = w.mean(), w.std() / np.sqrt(w.size)
        exact = pair.chi.lst(z) * stationary_lst(pair, s + pair.g(z))
        assert abs(est - exact) < 3 * se + 1e-12


def test_phase_pair_sampled_correlation():
    rng = np.random.default_rng(5)
    delta = 2.0
    # start from the exact stationary law; D(k+1) is Erlang(1 + Poisson(D(k)), delta)
    x = rng.exponential(1.0 / (delta - 1.0), 1_000_000)
    k = rng.poisson(x)
    y = rng.gamma(k + 1, 1.0 / delta)
    assert abs(np.corrcoef(x, y)[0, 1] - 1.0 / delta) < 0.01
