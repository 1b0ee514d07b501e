"""Experiment runners behind ``glx run``.

Each runner takes a validated ``ExperimentConfig`` and an output directory
and returns ``(report, tables)``: a JSON-able dict and a mapping from table
name to ``(header, rows)``.  Data files must be pure functions of the config;
timings and versions go to the manifest only.
"""
from __future__ import annotations

import math
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import ballot, extremes, harmonic, multiscale
from .lattice import make_box
from .potential import reference_stiffness
from .rng import stream_key
from .sampler import run_chain


def chain_seed(seed: int, *names) -> int:
    lo, hi = stream_key(seed, *names)
    return lo | (hi << 64)


def _chain(cfg, N, out: Path, resume: bool, keep=True, observe=None):
    sc = replace(cfg.sampler, seed=chain_seed(cfg.seed, "N", N))
    return run_chain(make_box(N), cfg.potential(), cfg.model["boundary"], sc, keep=keep, observe=observe,
                     out_dir=(out / f"chain_N{N}") if keep else None,
                     checkpoint_every=cfg.model.get("checkpoint_every", 0), resume=resume)


def _g_hat(cfg, ens, given=None):
    if given is not None:
        return float(given), 0.0, "config"
    g, se = harmonic.estimate_stiffness(ens, "covariance")
    return g, se, "covariance"


def run_cstar(cfg, out, resume):
    rows, res = [], []
    for M in cfg.analysis["M"]:
        c = harmonic.compute_cstar(M)
        inner = harmonic.round_half_up(M / math.e)
        ident = (harmonic.green_at_center(M) - harmonic.green_at_center(inner)) / 4.0
        gt = harmonic.green_function(make_box(M), (0, 0))
        rows.append([M, inner, c, abs(c - ident), gt.residual()])
        res.append({"M": M, "inner": inner, "cstar": c, "identity_residual": abs(c - ident),
                    "green_residual": gt.residual()})
    return {"cstar": res, "reference": 1.0 / (2 * math.pi)}, {
        "cstar": (["M", "inner", "cstar", "identity_residual", "green_residual"], rows)}


def run_sample(cfg, out, resume):
    res, rows = [], []
    for N in cfg.Ns:
        ens = _chain(cfg, N, out, resume)
        d = make_box(N)
        c = d.index((0, 0))
        phi0 = ens.values[:, c[0], c[1]]
        exact = harmonic.green_function(d, (0, 0))[(0, 0)] / (4.0 * cfg.sampler.edge_multiplicity)
        info = {"N": N, "samples": len(ens), "acceptance": ens.diagnostics["acceptance"],
                "mean_energy": float(np.mean(ens.diagnostics["energy"])), "var_phi0": float(phi0.var(ddof=1)),
                "var_phi0_quadratic_exact": exact, "geweke_z": ens.diagnostics.get("geweke_z"),
                "stationary": ens.diagnostics.get("stationary")}
        res.append(info)
        rows.append([N, len(ens), info["acceptance"], info["mean_energy"], info["var_phi0"], exact])
    return {"runs": res}, {"sample": (["N", "samples", "acceptance", "mean_energy", "var_phi0", "var_phi0_dgff"], rows)}


def run_stiffness(cfg, out, resume):
    a = cfg.analysis
    cs = harmonic.compute_cstar(a["cstar_M"])
    pot = cfg.potential()
    m = cfg.sampler.edge_multiplicity
    res, rows = [], []
    for N in cfg.Ns:
        ens = _chain(cfg, N, out, resume)
        est = {}
        for meth in a["methods"]:
            g, se = harmonic.estimate_stiffness(ens, meth, cstar=cs, nblocks=a["nblocks"], regressor=a["regressor"],
                                                mode=tuple(a["mode"]))
            est[meth] = {"g_hat": g, "stderr": se}
            rows.append([N, meth, g, se])
        band = (cs / (m * pot.c_plus), cs / (m * pot.c_minus))
        info = {"N": N, "estimates": est, "cstar": cs, "sandwich": band, "edge_multiplicity": m,
                "reference_stiffness": reference_stiffness(pot, m)}
        if len(est) == 2:
            (g1, s1), (g2, s2) = [(v["g_hat"], v["stderr"]) for v in est.values()]
            info["methods_agree_3sigma"] = bool(abs(g1 - g2) <= 3 * math.hypot(s1, s2))
        info["within_sandwich_3sigma"] = {k: bool(band[0] - 3 * v["stderr"] <= v["g_hat"] <= band[1] + 3 * v["stderr"])
                                          for k, v in est.items()}
        res.append(info)
    return {"runs": res}, {"stiffness": (["N", "method", "g_hat", "stderr"], rows)}


def run_multiscale(cfg, out, resume):
    a = cfg.analysis
    res, rows, tables = [], [], {}
    for N in cfg.Ns:
        ens = _chain(cfg, N, out, resume)
        d = make_box(N)
        sch = multiscale.ScaleSchedule(N, a["omega"])
        x = a["site"]
        dec = multiscale.decompose((d, ens.values), x, a["k0"], a["k_inf"], sch)
        tel = float(np.max(np.abs(dec.reconstruct() - dec.phi_x) / (1 + np.abs(dec.phi_x))))
        g = _g_hat(cfg, ens, a["g_hat"])
        info = {"N": N, "telescoping_error": tel, "g_hat": g[0], "g_hat_stderr": g[1], "g_hat_source": g[2],
                "p_rough": {k: float(np.mean(v)) for k, v in dec.rough_ok.items()},
                "p_bdry": {k: float(np.mean(v)) for k, v in dec.bdry_ok.items()},
                "windows_ordered": {k: sch.windows_ordered(k) for k in range(a["k0"], a["k_inf"] + 1)}}
        if a["k_inf"] > a["k0"] and len(ens) >= 1000:
            inc = np.stack([dec.increments[k] for k in range(a["k0"], a["k_inf"])], axis=1)
            rep = multiscale.increment_statistics(None, x, (a["k0"], a["k_inf"] - 1), g_hat=g[0],
                                                  lambdas=a["lambdas"], n_boot=a["n_boot"],
                                                  seed=chain_seed(cfg.seed, "boot", N), increments=inc)
            info["increments"] = rep.as_dict()
            for i, k in enumerate(rep.ks):
                rows.append([N, k, sch.r(k), rep.mean[i], rep.var[i], rep.skew[i], rep.excess_kurtosis[i],
                             rep.mgf_deviation[i], rep.mgf_deviation_se[i]])
        res.append(info)
        path = out / f"decomposition_N{N}.csv"
        nkeep = min(len(ens), 100)
        small = multiscale.decompose((d, ens.values[:nkeep]), x, a["k0"], a["k_inf"], sch)
        multiscale.write_decomposition_csv(path, [small])
    tables["increments"] = (["N", "k", "r_k", "mean", "var", "skew", "excess_kurtosis", "mgf_dev", "mgf_dev_se"], rows)
    return {"runs": res}, tables


def run_extremes(cfg, out, resume):
    a = cfg.analysis
    pot = cfg.potential()
    m = cfg.sampler.edge_multiplicity
    res, tables = [], {}
    for N in cfg.Ns:
        ens = _chain(cfg, N, out, resume)
        g, gse, src = _g_hat(cfg, ens, a["g_hat"])
        x = a["site"]
        info = {"N": N, "g_hat": g, "g_hat_stderr": gse, "g_hat_source": src,
                "centering": extremes.centering(N, g)}
        mx = extremes.field_maxima(ens.values)
        info["max_quantiles"] = dict(zip(map(str, extremes.LEVELS), np.quantile(mx - info["centering"], extremes.LEVELS).tolist()))
        if len(ens) >= 10_000:
            i, j = ens.domain.index(x)
            sd = float(ens.values[:, i, j].std())
            tp = extremes.tail_profile(ens, x, np.linspace(0, 4 * sd, a["t_points"]), g_hat=g, c_minus=pot.c_minus,
                                       edge_multiplicity=m, safety=a["safety"])
            info["tail_violations"] = tp.violations
            tables[f"tail_N{N}"] = (["t", "empirical", "stderr", "sharp", "brascamp_lieb"], tp.rows().tolist())
        else:
            info["tail_profile"] = "skipped: needs at least 10000 samples"
        b = a["barrier"]
        if b is not None:
            spec = extremes.BarrierSpec(b["kind"], N, g, delta=b["delta"], ell=b["ell"])
            sch = multiscale.ScaleSchedule(N, a["omega"])
            sites = b["sites"] or ([x] if b["kind"] == "upper" else extremes.counting_sites(N, spec.k0_lower, sch))
            st = extremes.barrier_crossing_stats(ens, spec, sites, gammas=b["gammas"], schedule=sch,
                                                 upsilon=b["upsilon"])
            st.pop("excess", None)
            st.pop("counts", None)
            info["barrier"] = st
            if b["kind"] == "upper":
                tables[f"barrier_N{N}"] = (["gamma", "frequency", "stderr"],
                                           [list(r) for r in zip(st["gammas"], st["frequency"], st["stderr"])])
        res.append(info)
    return {"runs": res}, tables


def run_tightness(cfg, out, resume):
    a = cfg.analysis
    maxima = {}
    g_src = None
    Ns = sorted(cfg.Ns)
    for N in Ns:
        cache = out / f"maxima_N{N}.npy"
        if resume and cache.exists():
            maxima[N] = np.load(cache)
            continue
        ens = _chain(cfg, N, out, False, keep=False, observe=extremes.field_maxima)
        maxima[N] = np.concatenate(ens.observations)[: cfg.sampler.samples]
        np.save(cache, maxima[N])
    if a["g_hat"] is not None:
        g, gse, g_src = a["g_hat"], 0.0, "config"
    else:
        N0 = Ns[0]
        ens = _chain(cfg, N0, out, resume)
        g, gse = harmonic.estimate_stiffness(ens, "covariance")
        g_src = f"covariance at N={N0}"
    rep = extremes.tightness_report(maxima, g, gse, n_boot=a["n_boot"], seed=chain_seed(cfg.seed, "boot"))
    d = rep.as_dict()
    d["g_hat_source"] = g_src
    rows = [[N] + list(rep.quantiles[N]) for N in Ns]
    return d, {"quantiles": (["N"] + [f"q{int(100 * l)}" for l in extremes.LEVELS], rows)}


def _law(spec):
    fam, p = spec["family"], list(spec["params"])
    if fam == "gaussian":
        mean, var = (p + [0.0, 1.0][len(p):])[:2]
        return ballot.GaussianLaw(float(mean), float(var))
    if fam == "logistic":
        return ballot.logistic(float(p[0]) if p else 1.0)
    if fam == "constant":
        return ballot.constant(float(p[0]) if p else 0.0)
    vals, probs = p
    return ballot.DiscreteLaw(tuple(vals), tuple(probs))


def run_ballot(cfg, out, resume):
    a = cfg.analysis
    law = _law(a["increments"])
    mu, var = law.moments()
    res, rows = [], []
    for m in a["m"]:
        # iid steps: the envelopes hold with gamma = 0 and C = |mean|
        spec = ballot.WalkSpec(m, law, envelope=(abs(mu) + 1e-9, 0.0), g=var + mu * mu)
        q = ballot.BarrierQuery(a["kind"], a=a["a"], t=a["t"], ell=a["ell"],
                                window=tuple(a["window"]) if a["window"] else None)
        r = ballot.barrier_probability(spec, q, a["trials"], seed=chain_seed(cfg.seed, "ballot"))
        d = r.as_dict()
        d["seed"] = str(cfg.seed)
        d["m"] = m
        d["scaled"] = r.estimate * m**1.5
        res.append(d)
        rows.append([m, r.hits, r.trials, r.estimate, r.stderr, r.estimate * m**1.5])
    return {"results": res}, {"ballot": (["m", "hits", "trials", "estimate", "stderr", "scaled_estimate"], rows)}


def run_skorokhod(cfg, out, resume):
    a = cfg.analysis
    law = _law(a["target"])
    mu, var = law.moments()
    e = ballot.skorokhod_embed(law, a["draws"], seed=chain_seed(cfg.seed, "skorokhod"))
    rep = {"draws": a["draws"], "target_variance": var, "mean_tau": float(e.tau.mean()),
           "mean_tau_stderr": float(e.tau.std(ddof=1) / math.sqrt(e.tau.size)),
           "mean_w": float(e.w_tau.mean()), "mean_w_stderr": float(e.w_tau.std(ddof=1) / math.sqrt(e.tau.size)),
           "tolerance": e.tolerance}
    if isinstance(law, ballot.GaussianLaw):
        rep["ks"] = float(stats.kstest(e.w_tau, "norm", args=(law.mean, math.sqrt(law.var))).statistic)
    c, ok, tail = ballot.fit_gaussian_envelope(e.sup_abs)
    rep["sup_envelope"] = {"c": c, "dominates": ok}
    rows = [list(r) for r in zip(tail["grid"], tail["tail"], tail["envelope"])]
    return rep, {"sup_tail": (["x", "tail", "envelope"], rows)}


RUNNERS = {
    "cstar": run_cstar, "sample": run_sample, "stiffness": run_stiffness, "multiscale": run_multiscale,
    "extremes": run_extremes, "tightness": run_tightness, "ballot": run_ballot, "skorokhod": run_skorokhod,
}
