import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from glx.lattice import Field, make_box
from glx.potential import cosine_perturbed, evaluate, quadratic
from glx.rng import KeyedStream
from glx.sampler import (ChainAbort, ChainConfig, ChecksumError, ConfigError, check_langevin_step, dgff_covariance,
                         drift, em_stationary_variance, energy, langevin_step, run_chain, sample_dgff_exact)


def energy_loop(vals, pot, m):
    """Edge-by-edge energy over edges touching the interior."""
    n = vals.shape[0]
    tot = 0.0
    for i in range(n):
        for j in range(n):
            for di, dj in ((1, 0), (0, 1)):
                a, b = i + di, j + dj
                if a >= n or b >= n:
                    continue
                interior = lambda p, q: 0 < p < n - 1 and 0 < q < n - 1
                if interior(i, j) or interior(a, b):
                    tot += m * evaluate(pot, vals[i, j] - vals[a, b])[0]
    return tot


@pytest.mark.parametrize("pot", [quadratic(), cosine_perturbed(0.4)])
@pytest.mark.parametrize("m", [1, 2])
def test_energy_and_drift(pot, m, rng):
    vals = rng.standard_normal((9, 9))
    assert energy(vals, pot, m) == pytest.approx(energy_loop(vals, pot, m), rel=1e-12)
    d = drift(vals, pot, m)
    h = 1e-6
    for (i, j) in [(1, 1), (4, 5), (7, 7)]:
        up, dn = vals.copy(), vals.copy()
        up[i, j] += h
        dn[i, j] -= h
        num = -(energy(up, pot, m) - energy(dn, pot, m)) / (2 * h)
        assert d[i - 1, j - 1] == pytest.approx(num, rel=1e-6, abs=1e-7)


def site_law_moments(pot, m):
    """Mean-zero single-site law on Q_1 with zero boundary: density exp(-4 m V(x))."""
    w = lambda x: math.exp(-4 * m * evaluate(pot, x)[0])
    z = integrate.quad(w, -np.inf, np.inf)[0]
    return integrate.quad(lambda x: x * x * w(x), -np.inf, np.inf)[0] / z


@pytest.mark.parametrize("algo,cond", [("heat-bath", "slice"), ("heat-bath", "inverse-cdf"),
                                       ("fourier-hmc", "slice"), ("mala", "slice")])
def test_single_site_variance(algo, cond):
    pot = cosine_perturbed(0.5)
    want = site_law_moments(pot, 2)
    cfg = ChainConfig(algorithm=algo, conditional=cond, samples=20000, replicas=500, burn_in_sweeps=30,
                      thinning_sweeps=2, seed=5, step_size=0.05)
    ens = run_chain(make_box(1), pot, 0.0, cfg)
    x = ens.values[:, 1, 1]
    # replicas are independent; batch over replicas for the standard error
    per = x.reshape(-1, 500).mean(axis=0), (x.reshape(-1, 500) ** 2).mean(axis=0)
    se = per[1].std(ddof=1) / math.sqrt(500)
    assert abs(per[1].mean() - want) < 4 * se, (per[1].mean(), want, se)


def test_quadratic_unit_box_variance_is_one_eighth():
    assert dgff_covariance(make_box(1), (0, 0), (0, 0)) == pytest.approx(1 / 8)
    assert site_law_moments(quadratic(), 2) == pytest.approx(1 / 8)


def test_exact_sampler_covariance():
    d = make_box(4)
    out = sample_dgff_exact(d, rng=KeyedStream(1, "t"), replicas=np.arange(40000))
    pairs = [((0, 0), (0, 0)), ((0, 0), (1, 0)), ((2, -1), (-1, 2)), ((3, 3), (3, 3))]
    for x, y in pairs:
        a, b = out[:, x[1] + 4, x[0] + 4], out[:, y[1] + 4, y[0] + 4]
        c = np.mean(a * b)
        se = np.std(a * b) / math.sqrt(a.size)
        assert abs(c - dgff_covariance(d, x, y)) < 4 * se


def test_exact_sampler_mean_is_harmonic_extension():
    d = make_box(3)
    bnd = Field.from_function(d, lambda a, b: a + 2.0 * b)
    out = sample_dgff_exact(d, bnd, rng=KeyedStream(2, "t"), replicas=np.arange(20000))
    mean = out.mean(axis=0)
    se = out.std(axis=0) / math.sqrt(20000) + 1e-12
    assert np.all(np.abs(mean - bnd.values) < 4.5 * se)


def test_langevin_step_bound():
    check_langevin_step(0.12, 1.0, 2)
    with pytest.raises(ConfigError):
        check_langevin_step(0.125, 1.0, 2)
    with pytest.raises(ConfigError):
        ChainConfig(algorithm="langevin", step_size=0.2).validate(cosine_perturbed(0.3))
    f = Field(make_box(3))
    f.values[1:-1, 1:-1] = 1.0
    g = langevin_step(f, quadratic(), 0.05, noise=np.zeros((5, 5)))
    # corner site: two boundary neighbours at 0, force -2 m
    assert g[(-2, -2)] == pytest.approx(1.0 - 0.05 * 2 * 2)
    assert g[(0, 0)] == pytest.approx(1.0)


def test_em_stationary_variance_unit_box():
    # one mode with rate 8: AR(1) variance 1 / (8 (1 - 4 dt))
    for dt in (0.0, 0.01, 0.1):
        assert em_stationary_variance(make_box(1), dt) == pytest.approx(1 / (8 * (1 - 4 * dt)))
    d = make_box(8)
    v0 = em_stationary_variance(d, 0.0)
    assert v0 == pytest.approx(dgff_covariance(d, (0, 0), (0, 0)), rel=1e-12)
    r = (em_stationary_variance(d, 0.02) - v0) / (em_stationary_variance(d, 0.01) - v0)
    assert 1.9 < r < 2.1


def test_hmc_exact_for_quadratic():
    cfg = ChainConfig(algorithm="fourier-hmc", samples=200, replicas=20, burn_in_sweeps=0, seed=9,
                      hmc_stiffness=1.0)
    ens = run_chain(make_box(6), quadratic(), 0.0, cfg)
    assert ens.diagnostics["acceptance"] == pytest.approx(1.0, abs=1e-12)


def test_chain_determinism_and_replica_independence():
    cfg = ChainConfig(algorithm="heat-bath", samples=12, replicas=3, burn_in_sweeps=4, seed=11)
    a = run_chain(make_box(5), cosine_perturbed(0.3), 0.0, cfg)
    b = run_chain(make_box(5), cosine_perturbed(0.3), 0.0, cfg)
    assert np.array_equal(a.values, b.values)
    one = ChainConfig(algorithm="heat-bath", samples=4, replicas=1, burn_in_sweeps=4, seed=11)
    c = run_chain(make_box(5), cosine_perturbed(0.3), 0.0, one)
    # replica 0 sees the same keyed stream whatever the replica count
    assert np.array_equal(c.values, a.values[0::3])


class Stop(Exception):
    pass


def test_resume_is_bit_identical(tmp_path):
    cfg = ChainConfig(algorithm="mala", step_size=0.1, samples=30, replicas=2, burn_in_sweeps=5, seed=4)
    ref = run_chain(make_box(4), cosine_perturbed(0.3), 0.0, cfg)

    def interrupt(t, total):
        if t == 17:
            raise Stop

    with pytest.raises(Stop):
        run_chain(make_box(4), cosine_perturbed(0.3), 0.0, cfg, out_dir=tmp_path, checkpoint_every=1,
                  progress=interrupt)
    res = run_chain(make_box(4), cosine_perturbed(0.3), 0.0, cfg, out_dir=tmp_path, checkpoint_every=1, resume=True)
    assert np.array_equal(res.values, ref.values)
    assert np.array_equal(res.diagnostics["energy"], ref.diagnostics["energy"])


def test_resume_detects_missing_or_altered_snapshot(tmp_path):
    cfg = ChainConfig(algorithm="heat-bath", samples=6, replicas=1, burn_in_sweeps=0, seed=4)

    def interrupt(t, total):
        if t == 4:
            raise Stop

    with pytest.raises(Stop):
        run_chain(make_box(3), quadratic(), 0.0, cfg, out_dir=tmp_path, checkpoint_every=1, progress=interrupt)
    snap = tmp_path / "snap_000001.glf"
    buf = bytearray(snap.read_bytes())
    buf[-1] ^= 1
    snap.write_bytes(bytes(buf))
    with pytest.raises(ChecksumError):
        run_chain(make_box(3), quadratic(), 0.0, cfg, out_dir=tmp_path, checkpoint_every=1, resume=True)
    snap.unlink()
    with pytest.raises(ChecksumError):
        run_chain(make_box(3), quadratic(), 0.0, cfg, out_dir=tmp_path, checkpoint_every=1, resume=True)


def test_divergence_aborts_with_partial_ensemble():
    cfg = ChainConfig(algorithm="langevin", step_size=0.1, samples=5, burn_in_sweeps=0, seed=1)
    with pytest.raises(ChainAbort) as exc:
        run_chain(make_box(3), quadratic(), 5e6, cfg)
    assert exc.value.ensemble is not None
    assert exc.value.ensemble.diagnostics["aborted"]


@settings(max_examples=15)
@given(st.sampled_from(["samples", "thinning_sweeps", "replicas"]), st.integers(-3, 0))
def test_config_rejects_nonpositive_counts(name, v):
    with pytest.raises(ConfigError):
        ChainConfig(**{name: v}).validate()
