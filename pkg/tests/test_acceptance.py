"""Acceptance suite: one PASS/FAIL line per criterion, at the stated tolerances.

Every check prints its line (also appended to ``acceptance_results.txt`` in
the repository root) before asserting, so a red criterion still reports its
measured value.  Criteria 7 and 8 are expected to fail at desk scale; see
README.
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import special, stats

from glx import ballot, extremes, harmonic, multiscale
from glx.lattice import Field, make_box
from glx.potential import cosine_perturbed, quadratic
from glx.rng import KeyedStream
from glx.sampler import (ChainConfig, Ensemble, _exact_batch, em_stationary_variance,
                         langevin_variance_bias, run_chain)

pytestmark = pytest.mark.slow

RESULTS = Path(__file__).resolve().parents[1] / "acceptance_results.txt"


@pytest.fixture(scope="session", autouse=True)
def _fresh_results():
    RESULTS.write_text("")
    yield


def verdict(capsys, n, ok, text, t0):
    line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}: {text} [{time.perf_counter() - t0:.1f}s]"
    with capsys.disabled():
        print("\n" + line)
    with open(RESULTS, "a") as fh:
        fh.write(line + "\n")
    assert ok, line


def exact_values(N, n, seed, m=2, batch=500):
    mean = np.zeros((2 * N + 1, 2 * N + 1))
    rng = KeyedStream(seed, "acceptance", N)
    return np.concatenate([_exact_batch(mean, rng, b, np.arange(min(batch, n - b * batch)), m)
                           for b in range(-(-n // batch))])


# 1 -------------------------------------------------------------------------------

def test_c1_cstar_recovery(capsys):
    t0 = time.perf_counter()
    c = harmonic.compute_cstar(256)
    dt = time.perf_counter() - t0
    ok = 0.151 <= c <= 0.167 and dt < 60
    verdict(capsys, 1, ok, f"c*(256) = {c:.6f} in [0.151, 0.167], 1/(2 pi) = {1 / (2 * math.pi):.6f}; "
                           f"runtime {dt:.2f}s < 60s", t0)


# 2 -------------------------------------------------------------------------------

def test_c2_telescoping(capsys):
    t0 = time.perf_counter()
    N = 128
    d = make_box(N)
    vals = exact_values(N, 100, 2)
    rng = np.random.default_rng(2)
    sched = multiscale.ScaleSchedule(N)
    worst = 0.0
    choices = 0
    while choices < 20:
        x = tuple(int(v) for v in rng.integers(-N // 2, N // 2 + 1, 2))
        k0 = extremes.first_admissible_scale(d, x, sched, multiscale.min_k0(N, x))
        kmax = int(math.floor(math.log(N)))
        if k0 > kmax:
            continue
        k0 = int(rng.integers(k0, kmax + 1))
        k_inf = int(rng.integers(k0, kmax + 1))
        dec = multiscale.decompose((d, vals), x, k0, k_inf, sched, flags=False)
        err = np.abs(dec.reconstruct() - dec.phi_x) / (1 + np.abs(dec.phi_x))
        worst = max(worst, float(err.max()))
        choices += 1
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and dt < 300
    verdict(capsys, 2, ok, f"max |reconstruction - phi(x)| / (1 + |phi(x)|) = {worst:.2e} <= 1e-10 over "
                           f"100 snapshots x 20 (x, k0, k_inf); runtime {dt:.1f}s < 300s", t0)


# 3 -------------------------------------------------------------------------------

def test_c3_harmonic_reproduction(capsys):
    t0 = time.perf_counter()
    N = 64
    d = make_box(N)
    rng = np.random.default_rng(3)
    fields = [Field.from_function(d, lambda a, b: np.ones_like(a, dtype=float)),
              Field.from_function(d, lambda a, b: a.astype(float)),
              Field.from_function(d, lambda a, b: b.astype(float))]
    for _ in range(50):
        bnd = Field(d, np.where(d.boundary_mask, rng.standard_normal(d.shape), 0.0))
        fields.append(harmonic.solve_dirichlet(d, bnd))
    worst_s = worst_i = 0.0
    sched = multiscale.ScaleSchedule(N)
    for f in fields:
        x = tuple(int(v) for v in rng.integers(-12, 13, 2))
        k0 = extremes.first_admissible_scale(d, x, sched, multiscale.min_k0(N, x))
        dec = multiscale.decompose(f, x, k0, 4, sched, flags=False)
        hx = f[x]
        for k in range(k0, 5):
            worst_s = max(worst_s, abs(dec.s_plus[k][0] - hx), abs(dec.s_minus[k][0] - hx))
        for k in range(k0, 4):
            worst_i = max(worst_i, abs(dec.increments[k][0]))
    ok = worst_s <= 1e-9 and worst_i <= 1e-9
    verdict(capsys, 3, ok, f"max |S_k,+-(x,h) - h(x)| = {worst_s:.2e}, max |I_k(x,h)| = {worst_i:.2e} (<= 1e-9) "
                           f"for h in {{1, x1, x2}} and 50 Dirichlet solves", t0)


# 4 -------------------------------------------------------------------------------

def _ladder_observables(vals, pairs, N):
    inner = vals[:, 1:-1, 1:-1].reshape(vals.shape[0], -1)
    prods = np.stack([vals[:, y1 + N, x1 + N] * vals[:, y2 + N, x2 + N] for (x1, y1), (x2, y2) in pairs], axis=1)
    return np.concatenate([inner, prods], axis=1)


def test_c4_sampler_ladder(capsys):
    t0 = time.perf_counter()
    N, R, per = 16, 200, 50
    d = make_box(N)
    pairs = [((0, 0), (0, 0)), ((0, 0), (1, 0)), ((0, 0), (0, 1)), ((0, 0), (2, 2)), ((0, 0), (5, 0)),
             ((0, 0), (10, 3)), ((3, 3), (3, 3)), ((3, 3), (-3, -3)), ((8, 0), (8, 0)), ((8, 0), (9, 0)),
             ((15, 15), (15, 15)), ((15, 15), (14, 15)), ((-7, 4), (4, -7)), ((-12, 0), (12, 0)),
             ((0, -15), (0, -14)), ((6, 6), (7, 7)), ((-10, -10), (-10, -10)), ((2, -9), (2, -5)),
             ((11, 1), (1, 11)), ((0, 0), (15, 15))]
    ex = _ladder_observables(exact_values(N, R * per, 4), pairs, N)
    ex_mean = ex.mean(axis=0)
    ex_se = ex.std(axis=0, ddof=1) / math.sqrt(ex.shape[0])
    n_obs = ex.shape[1]
    # family-wise version of a two-sided 3 sigma test over all observables of one sampler
    alpha = 2 * special.ndtr(-3.0)
    z_fw = float(-special.ndtri(alpha / (2 * n_obs)))
    parts, ok = [], True
    for algo, dt in (("heat-bath", 0.01), ("mala", 0.012)):
        cfg = ChainConfig(algorithm=algo, step_size=dt, start="exact", burn_in_sweeps=20, thinning_sweeps=10,
                          samples=R * per, replicas=R, seed=40)
        ens = run_chain(d, quadratic(), 0.0, cfg)
        obs = _ladder_observables(ens.values, pairs, N)
        # snapshots are ordered (time, replica): replica r is obs[r::R]; replica means are independent batches
        rep = np.stack([obs[r::R].mean(axis=0) for r in range(R)])
        se = rep.std(axis=0, ddof=1) / math.sqrt(R)
        z = (rep.mean(axis=0) - ex_mean) / np.sqrt(se**2 + ex_se**2)
        zmax = float(np.max(np.abs(z)))
        n3 = int(np.sum(np.abs(z) > 3))
        ok &= zmax <= z_fw
        parts.append(f"{algo}: max|z| = {zmax:.2f}, {n3} of {n_obs} beyond 3 sigma "
                     f"(acc {ens.diagnostics['acceptance']:.2f})")
    v0 = em_stationary_variance(d, 0.0)
    b2 = langevin_variance_bias(d, quadratic(), 0.02, 4000, 41, replicas=64)
    b1 = langevin_variance_bias(d, quadratic(), 0.01, 4000, 41, replicas=64)
    ratio = b2[0] / b1[0]
    ratio_se = ratio * math.hypot(b2[1] / b2[0], b1[1] / b1[0])
    closed = (em_stationary_variance(d, 0.02) - v0) / (em_stationary_variance(d, 0.01) - v0)
    # first-order bias: the ratio is 2 up to an O(dt) correction, which the closed form carries
    halves = abs(ratio - closed) <= 3 * ratio_se and abs(ratio - 2.0) <= 0.2
    ok &= halves
    verdict(capsys, 4, ok, "; ".join(parts) + f"; family-wise 3 sigma threshold |z| <= {z_fw:.2f}; Langevin "
                           f"Var phi(0) bias {b2[0]:.5f} (dt 0.02) / {b1[0]:.5f} (dt 0.01) = {ratio:.3f} "
                           f"+- {ratio_se:.3f}, closed form {closed:.3f}", t0)


# 5 -------------------------------------------------------------------------------

def test_c5_brascamp_lieb(capsys):
    t0 = time.perf_counter()
    N = 16
    d = make_box(N)
    pot = cosine_perturbed(0.3)
    cfg = ChainConfig(algorithm="fourier-hmc", start="exact", burn_in_sweeps=20, samples=10_000, replicas=100,
                      seed=50)
    ens = run_chain(d, pot, 0.0, cfg)
    v = ens.values
    mode = Field.from_function(d, lambda a, b: harmonic.sine_mode(2, 1)(a / N, b / N)).values
    mode[~d.interior_mask] = 0.0
    avg = d.interior_mask / d.interior_mask.sum()
    point = np.zeros(d.shape)
    point[d.index((0, 0))] = 1.0
    lap_inv = harmonic.apply_laplacian_power
    ok, parts = True, []
    for name, f in (("phi(0)", point), ("box average", avg), ("sine mode (2,1)", mode)):
        proj = np.einsum("sij,ij->s", v, f)
        # exact DGFF variance <f, (m L)^{-1} f> with m = 2
        exact = float(np.sum(f[1:-1, 1:-1] * lap_inv(f[1:-1, 1:-1], -1.0, N)) / 2.0)
        bound = exact / pot.c_minus
        var = proj.var(ddof=1)
        rep = np.stack([proj[r::100] for r in range(100)])
        se = float(np.std([np.var(x, ddof=1) for x in rep], ddof=1) / math.sqrt(100))
        good = var - 3 * se <= bound
        ok &= good
        parts.append(f"{name}: Var {var:.4f} +- {se:.4f} vs bound {bound:.4f} (DGFF {exact:.4f})")
    dt = time.perf_counter() - t0
    ok &= dt < 1200
    verdict(capsys, 5, ok, "kappa=0.3, N=16, 10^4 HMC snapshots; " + "; ".join(parts), t0)


# 6 -------------------------------------------------------------------------------

def test_c6_stiffness_sandwich(capsys):
    t0 = time.perf_counter()
    N = 32
    cs = harmonic.compute_cstar(256)
    pot = cosine_perturbed(0.3)
    # single-edge convention: the sandwich reads [c*/c+, c*/c-] with c+- = 1 +- kappa
    cfg = ChainConfig(algorithm="fourier-hmc", start="exact", burn_in_sweeps=20, samples=10_000, replicas=100,
                      seed=60, edge_multiplicity=1)
    ens = run_chain(make_box(N), pot, 0.0, cfg)
    lo, hi = cs / pot.c_plus, cs / pot.c_minus
    res = {m: harmonic.estimate_stiffness(ens, m, cstar=cs) for m in ("covariance", "clt-variance")}
    ok, parts = True, []
    for m, (g, se) in res.items():
        inside = lo - 3 * se <= g <= hi + 3 * se
        ok &= inside
        parts.append(f"{m} {g:.4f} +- {se:.4f}")
    (g1, s1), (g2, s2) = res.values()
    agree = abs(g1 - g2) <= 3 * math.hypot(s1, s2)
    ok &= agree
    verdict(capsys, 6, ok, f"g_hat(kappa=0.3, N=32, m=1): {', '.join(parts)}; band [{lo:.4f}, {hi:.4f}] "
                           f"(3 sigma margin); |difference| {abs(g1 - g2):.4f} vs joint 3 sigma "
                           f"{3 * math.hypot(s1, s2):.4f}", t0)


# 7 -------------------------------------------------------------------------------

def test_c7_corridor_scaling(capsys):
    t0 = time.perf_counter()
    out, spread = ballot.corridor_scaling((16, 32, 64, 128), trials=10**7, ell=1, seed=70)
    dt = time.perf_counter() - t0
    txt = ", ".join(f"m={m}: {v[2].hits} hits, m^1.5 P = {v[0]:.4g}" for m, v in out.items())
    ok = spread < 0.15 and dt < 1800
    verdict(capsys, 7, ok, f"corridor, iid N(0,1), 10^7 trials each: {txt}; relative spread {spread:.3g} "
                           f"(target < 0.15)", t0)


# 8 -------------------------------------------------------------------------------

def test_c8_one_sided_bound(capsys):
    t0 = time.perf_counter()
    C, ratios, est = ballot.one_sided_bound_check((32, 64, 128), (0, 2), (0, 1, 3), ell=1, trials=10**6, seed=80)
    worst = max(r for m in ratios for r in ratios[m].values())
    txt = "; ".join(f"m={m}: " + ", ".join(f"(a={a},t={t}) {r:.2f}" for (a, t), r in ratios[m].items())
                    for m in ratios)
    verdict(capsys, 8, worst <= 2.0, f"C = {C:.4g} fitted at m=32; P/bound {txt}; max {worst:.2f} (target <= 2)", t0)


# 9 -------------------------------------------------------------------------------

def test_c9_skorokhod(capsys):
    t0 = time.perf_counter()
    e = ballot.skorokhod_embed(ballot.GaussianLaw(0.0, 1.0), 10**6, seed=90)
    mt = float(e.tau.mean())
    ks = float(stats.kstest(e.w_tau, "norm").statistic)
    c, dom, _ = ballot.fit_gaussian_envelope(e.sup_abs)
    ok = abs(mt - 1) <= 0.02 and ks < 0.01 and dom
    verdict(capsys, 9, ok, f"N(0,1), 10^6 draws: E tau = {mt:.4f} (|E tau - 1| <= 0.02), KS = {ks:.4f} (< 0.01), "
                           f"sup|W| tail under C exp(-{c:.3f} s^2) fitted on the bulk: {dom}", t0)


# 10 ------------------------------------------------------------------------------

def test_c10_tightness(capsys):
    t0 = time.perf_counter()
    Ns = (64, 128, 256)
    n_max = 4000
    maxima = {}
    for N in Ns:
        mean = np.zeros((2 * N + 1, 2 * N + 1))
        rng = KeyedStream(10, "tightness", N)
        maxima[N] = np.concatenate([extremes.field_maxima(_exact_batch(mean, rng, b, np.arange(200), 2))
                                    for b in range(n_max // 200)])
    g_ens = Ensemble(ChainConfig(algorithm="exact-gaussian"), make_box(64), exact_values(64, 2000, 11))
    g, gse = harmonic.estimate_stiffness(g_ens, "covariance")
    rep = extremes.tightness_report(maxima, g, gse, n_boot=1000, seed=10)
    widths = ", ".join(f"N={N}: {w:.3f}" for N, w in rep.width_10_90.items())
    pred = rep.extras["predicted_ablation_drift"]
    ok = rep.width_spread < 1.0 and rep.ablation_flagged
    verdict(capsys, 10, ok, f"DGFF, {n_max} maxima per N, g_hat = {g:.4f} +- {gse:.4f}; 10-90% widths {widths}; "
                            f"spread {rep.width_spread:.3f} (< 1.0); no-loglog median drift {rep.ablation_drift:+.4f} "
                            f"+- {rep.ablation_drift_se:.4f} (predicted {pred:+.4f}), flagged: {rep.ablation_flagged}",
            t0)


# 11 ------------------------------------------------------------------------------

def test_c11_increment_gaussianity(capsys):
    t0 = time.perf_counter()
    N = 256
    pot = cosine_perturbed(0.3)
    sched = multiscale.ScaleSchedule(N, omega=0.5)
    ks = (1, 2, 3)
    d = make_box(N)

    def observe(v):
        dec = multiscale.decompose((d, v), (0, 0), ks[0], ks[-1] + 1, sched, flags=False)
        return np.stack([dec.increments[k] for k in ks], axis=1)

    # stiffness from an independent run (covariance method, N=32), as in the CLI tightness runner
    small = ChainConfig(algorithm="fourier-hmc", start="exact", burn_in_sweeps=20, samples=4000, replicas=100,
                        seed=111)
    g, gse = harmonic.estimate_stiffness(run_chain(make_box(32), pot, 0.0, small), "covariance")
    cfg = ChainConfig(algorithm="fourier-hmc", start="exact", burn_in_sweeps=10, samples=1000, replicas=20,
                      seed=110)
    ens = run_chain(d, pot, 0.0, cfg, keep=False, observe=observe)
    inc = np.concatenate(ens.observations)[:1000]
    rep = multiscale.increment_statistics(None, (0, 0), (ks[0], ks[-1]), g_hat=g, increments=inc, n_boot=200,
                                          seed=11)
    # diagnostic: the same deviation after rescaling I_k to one unit of log-scale
    gaps = np.array([math.log(sched.r_minus(k) / sched.r_plus(k + 1)) for k in ks])
    unit = multiscale.increment_statistics(None, (0, 0), (ks[0], ks[-1]), g_hat=g, increments=inc / np.sqrt(gaps),
                                           n_boot=200, seed=11)
    dev, dse = rep.mgf_deviation, rep.mgf_deviation_se
    trend = all(dev[i] < dev[i + 1] for i in range(len(ks) - 1))
    off = [(i, j) for i in range(len(ks)) for j in range(i + 1, len(ks))]
    corr_ok = all(abs(rep.corr[i, j]) <= 3 * rep.corr_se for i, j in off)
    ok = trend and corr_ok
    verdict(capsys, 11, ok, f"kappa=0.3, N=256, omega=1/2, 1000 HMC snapshots, g_hat = {g:.4f} +- {gse:.4f} "
                            f"(N=32); sup|logMGF - "
                            f"lambda^2 g/2| by k=1,2,3: " + ", ".join(f"{a:.4f}+-{b:.4f}" for a, b in zip(dev, dse))
                            + f" (decreasing toward small k: {trend}); correlations "
                            + ", ".join(f"({ks[i]},{ks[j]}) {rep.corr[i, j]:+.3f}" for i, j in off)
                            + f" vs 3 sigma {3 * rep.corr_se:.3f}; per-unit-log-scale deviation (log gaps "
                            + ", ".join(f"{x:.2f}" for x in gaps) + "): "
                            + ", ".join(f"{a:.4f}+-{b:.4f}" for a, b in zip(unit.mgf_deviation, unit.mgf_deviation_se)),
            t0)
