import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special, stats

from glx.ballot import (BarrierQuery, DiscreteLaw, GaussianLaw, LawError, WalkSpec, barrier_hits,
                        barrier_probability, constant, drift_spec, exit_time_ppf, exponential_tilt,
                        fit_gaussian_envelope, logistic, simulate_walk, skorokhod_embed)
from glx.rng import generator


def test_flat_path():
    spec = WalkSpec(50, constant(0.0), g=0.0, envelope=(0.0, 1.0))
    p = simulate_walk(spec, 1)
    assert p.shape == (51,) and np.all(p == 0)


def test_clt_variance():
    spec = WalkSpec(10_000, GaussianLaw())
    paths = simulate_walk(spec, 3, n_paths=10_000)
    r = paths[:, -1].var() / 10_000
    assert 0.97 <= r <= 1.03


def test_mean_envelope():
    C, gam, m = 1.0, 0.5, 40
    laws = [GaussianLaw(C * math.exp(gam * (j - m)), 1.0 - C * math.exp(gam * (j - m)) ** 2) for j in range(m)]
    spec = WalkSpec(m, laws, envelope=(C, gam), g=1.0)
    bound = C * sum(math.exp(gam * (j - m)) for j in range(m))
    end = simulate_walk(spec, 0, n_paths=200_000)[:, -1]
    assert abs(end.mean()) <= bound + 4 * end.std() / math.sqrt(end.size)
    with pytest.raises(LawError):
        WalkSpec(m, GaussianLaw(0.5, 1.0), envelope=(C, gam))


def test_determinism():
    spec = WalkSpec(20, logistic(1.0))
    assert np.array_equal(simulate_walk(spec, 9, 5), simulate_walk(spec, 9, 5))


def test_vacuous_barrier_matches_normal_cdf():
    m = 30
    spec = WalkSpec(m, GaussianLaw())
    r = barrier_probability(spec, BarrierQuery("one-sided-up", a=1e6, window=(-1.0, 0.0)), 200_000, seed=1)
    s = math.sqrt(m - 1)
    want = special.ndtr(0.0) - special.ndtr(-1.0 / s)
    assert abs(r.estimate - want) < 3 * r.stderr


def test_zero_window_and_zero_hit_flag():
    spec = WalkSpec(16, GaussianLaw())
    r = barrier_probability(spec, BarrierQuery("corridor", window=(-0.5, -0.5)), 20_000)
    assert r.estimate == 0.0 and r.zero_hit and r.upper95 == pytest.approx(-math.log(0.05) / 20_000)
    with pytest.raises(ValueError):
        barrier_probability(spec, BarrierQuery(), 100)
    with pytest.raises(ValueError):
        BarrierQuery(a=-1.0)
    with pytest.raises(ValueError):
        BarrierQuery(ell=0)


@settings(max_examples=10)
@given(st.integers(0, 1000))
def test_barrier_monotone_in_a_and_ell(seed):
    spec = WalkSpec(24, GaussianLaw())
    paths = simulate_walk(spec, seed, n_paths=5000)
    hits = [barrier_hits(paths, BarrierQuery("one-sided-up", a=a, t=0.5)) for a in (0.0, 0.5, 2.0)]
    assert np.all(hits[0] <= hits[1]) and np.all(hits[1] <= hits[2])
    hits = [barrier_hits(paths, BarrierQuery("corridor", ell=ell)) for ell in (1, 2, 4)]
    assert np.all(hits[0] <= hits[1]) and np.all(hits[1] <= hits[2])
    # the same holds for the estimator with a shared seed
    est = [barrier_probability(spec, BarrierQuery("one-sided-up", a=a), 10_000, seed).hits for a in (0.0, 1.0)]
    assert est[0] <= est[1]


def test_gaussian_tilt():
    spec = WalkSpec(5, GaussianLaw(0.0, 0.3), g=0.3, subgaussian=(1.0, 2.0))
    assert exponential_tilt(spec, 0.0) is spec
    t = exponential_tilt(spec, 0.7)
    assert t.laws[0] == GaussianLaw(0.3 * 0.7, 0.3)
    with pytest.raises(LawError):
        exponential_tilt(spec, 1.5)


def test_logistic_tilt_matches_quadrature():
    lam = 0.5
    s = math.sqrt(3.0) / math.pi
    f = lambda x: math.exp(lam * x) * stats.logistic.pdf(x, scale=s)
    z = integrate.quad(f, -60, 60, epsabs=1e-14, epsrel=1e-13, limit=400)[0]
    mu = integrate.quad(lambda x: x * f(x), -60, 60, epsabs=1e-14, epsrel=1e-13, limit=400)[0] / z
    var = integrate.quad(lambda x: (x - mu) ** 2 * f(x), -60, 60, epsabs=1e-14, epsrel=1e-13, limit=400)[0] / z
    law = logistic(1.0)
    assert law.moments()[1] == pytest.approx(1.0, abs=1e-8)
    got = law.tilt(lam).moments()
    assert got[0] == pytest.approx(mu, abs=1e-6)
    assert got[1] == pytest.approx(var, abs=1e-6)
    # logistic MGF is finite only for |lam| < 1/s
    with pytest.raises(LawError):
        law.tilt(1.05 / s)


def test_drift_spec_tilts_to_zero():
    spec, lam = drift_spec(32, 0.08, math.exp(35), 3.0)
    assert spec.laws[0].mean == pytest.approx(0.08 * lam)
    flat = exponential_tilt(spec, -lam)
    assert flat.laws[0].mean == pytest.approx(0.0, abs=1e-12)


def test_exit_time_table():
    u = np.linspace(0.001, 0.999, 2001)
    t = exit_time_ppf(u)
    assert np.all(np.diff(t) > 0)
    # E T = 1 for the exit of [-1, 1]
    rng = generator(0, "exit-test")
    assert exit_time_ppf(rng.random(400_000)).mean() == pytest.approx(1.0, abs=0.01)


def test_embedding_two_point():
    s = skorokhod_embed(DiscreteLaw((-1.0, 1.0), (0.5, 0.5)), 100_000, seed=1)
    assert set(np.unique(s.w_tau)) == {-1.0, 1.0}
    se = s.tau.std() / math.sqrt(s.tau.size)
    assert abs(s.tau.mean() - 1.0) < 3 * se
    assert np.all(s.sup_abs == 1.0)


LOGISTIC_SCALE = math.sqrt(3.0) / math.pi


@pytest.mark.parametrize("law,var,cdf", [
    (GaussianLaw(0, 1), 1.0, stats.norm(scale=1.0).cdf),
    (GaussianLaw(0, 4), 4.0, stats.norm(scale=2.0).cdf),
    (logistic(1.0), 1.0, stats.logistic(scale=LOGISTIC_SCALE).cdf),
])
def test_embedding_moments_and_law(law, var, cdf):
    s = skorokhod_embed(law, 100_000, seed=2)
    n = s.tau.size
    assert abs(s.tau.mean() - var) < 3 * s.tau.std() / math.sqrt(n) + 1e-3 * var
    assert abs(s.w_tau.mean()) < 3 * s.w_tau.std() / math.sqrt(n)
    assert stats.kstest(s.w_tau, cdf).pvalue > 1e-3
    assert np.all(s.sup_abs >= np.abs(s.w_tau))


def test_embedding_rejects_nonzero_mean():
    with pytest.raises(LawError):
        skorokhod_embed(GaussianLaw(0.5, 1.0), 10)
    with pytest.raises(LawError):
        skorokhod_embed(DiscreteLaw((0.0, 2.0), (0.5, 0.5)), 10)


def test_gaussian_envelope_fit():
    rng = np.random.default_rng(0)
    x = np.abs(rng.standard_normal(200_000))
    c, ok, tab = fit_gaussian_envelope(x)
    assert ok and abs(c - 0.5) < 0.01
    assert np.all(tab["envelope"][:5] >= tab["tail"][:5] * (1 - 1e-12))
    for heavy in (rng.standard_cauchy(200_000), rng.exponential(size=200_000), rng.standard_t(5, size=200_000)):
        assert not fit_gaussian_envelope(heavy)[1]
