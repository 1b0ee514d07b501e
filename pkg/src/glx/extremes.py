"""Maxima of the field: centering, tails, barrier events along the scales, tightness."""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import stats

from .harmonic import green_function, round_half_up
from .lattice import Domain, Field, GeometryError
from .multiscale import ScaleSchedule, _check_support, decompose, min_k0

LEVELS = (0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95)


def centering(N: int, g_hat: float = 1.0, loglog: bool = True) -> float:
    """``sqrt(g) (2 log N - (3/4) log log N)``; ``loglog=False`` drops the second term."""
    if N <= 2:
        raise ValueError(f"centering needs N >= 3, got {N}")
    if not g_hat > 0:
        raise ValueError("g_hat must be positive")
    m = 2.0 * math.log(N) - (0.75 * math.log(math.log(N)) if loglog else 0.0)
    return math.sqrt(g_hat) * m


def field_max(field: Field):
    """``(site, value)`` of the interior maximum; ties go to the first site in site order."""
    inner = field.values[1:-1, 1:-1]
    idx = int(np.argmax(inner))
    n = inner.shape[1]
    row, col = divmod(idx, n)
    d = field.domain
    site = (col + 1 - d.radius + d.center[0], row + 1 - d.radius + d.center[1])
    return site, float(inner[row, col])


def field_maxima(values: np.ndarray) -> np.ndarray:
    """Interior maxima of a stack of field arrays."""
    v = np.asarray(values)
    return v[..., 1:-1, 1:-1].reshape(v.shape[0], -1).max(axis=1)


# --- tails ------------------------------------------------------------------------

@dataclass
class TailProfile:
    t: np.ndarray
    empirical: np.ndarray
    stderr: np.ndarray
    sharp: np.ndarray  # exp(-t^2 / (2 g log dist)) times the safety constant
    brascamp_lieb: np.ndarray  # exp(-t^2 c- / (2 Var_DGFF))
    exact: np.ndarray | None
    violations: dict
    n: int

    def rows(self):
        cols = [self.t, self.empirical, self.stderr, self.sharp, self.brascamp_lieb]
        if self.exact is not None:
            cols.append(self.exact)
        return np.stack(cols, axis=1)


def tail_profile(ensemble, x, t_grid=None, *, g_hat: float, c_minus: float = 1.0, edge_multiplicity: int = 2,
                 safety: float = 2.0, exact_variance: float | None = None, min_samples: int = 10_000) -> TailProfile:
    """Empirical ``P(phi(x) >= t)`` against the sharp and Brascamp-Lieb Gaussian envelopes.

    The Brascamp-Lieb envelope uses the exact quadratic-V variance at ``x`` in
    the same box and edge convention, inflated by ``1 / c_minus``.  Violations
    are counted only beyond three binomial standard errors.
    """
    dom: Domain = ensemble.domain
    vals = np.asarray(ensemble.values)
    S = vals.shape[0]
    if S < min_samples:
        raise ValueError(f"tail profile needs at least {min_samples} samples, got {S}")
    i, j = dom.index(x)
    phi = vals[:, i, j]
    if t_grid is None:
        t_grid = np.linspace(0.0, 4.0 * phi.std(), 25)
    t = np.asarray(t_grid, dtype=float)
    emp = np.array([(phi >= s).mean() for s in t])
    se = np.sqrt(np.maximum(emp * (1 - emp), 1.0 / S) / S)
    dist = dom.dist_to_boundary(x)
    sharp = safety * np.exp(-t**2 / (2.0 * g_hat * math.log(max(dist, 2))))
    var_dgff = green_function(dom, x)[x] / (4.0 * edge_multiplicity)
    bl = np.exp(-t**2 * c_minus / (2.0 * var_dgff))
    exact = None
    if exact_variance is not None:
        exact = stats.norm.sf(t / math.sqrt(exact_variance))
    viol = {
        "sharp": t[emp - 3 * se > sharp].tolist(),
        "brascamp_lieb": t[emp - 3 * se > bl].tolist(),
    }
    return TailProfile(t, emp, se, sharp, bl, exact, viol, S)


# --- barrier events ---------------------------------------------------------------

@dataclass
class BarrierSpec:
    kind: str  # upper | lower-corridor
    N: int
    g_hat: float
    gamma: float = 0.0
    delta: float = 3.0
    ell: int = 0
    exponents: tuple = (0.4, 0.6)

    def __post_init__(self):
        if self.kind not in ("upper", "lower-corridor"):
            raise ValueError(f"unknown barrier kind {self.kind!r}")
        if self.kind == "lower-corridor":
            lo, hi = self.corridor_range()
            if hi < lo:
                raise ValueError("lower corridor has an empty scale range; decrease delta or ell")
            for j in range(lo, hi + 1):
                if self.lower_minus(j) > self.lower_plus(j):
                    raise ValueError(f"corridor bounds cross at j={j}")

    @property
    def n(self) -> float:
        return math.log(self.N)

    @property
    def m_N(self) -> float:
        return centering(self.N, 1.0)

    # upper
    @property
    def k_inf(self) -> float:
        return self.n - self.delta

    @property
    def slope(self) -> float:
        if self.kind == "upper":
            return math.sqrt(self.g_hat) * (self.m_N - 2 * self.delta) / self.k_inf
        return math.sqrt(self.g_hat) * (self.m_N - 4 * self.delta) / (self.k_inf_int - self.k0_lower)

    def upper(self, j) -> float:
        """Barrier value including ``Gamma``."""
        base = max(0.0, min(j, self.k_inf - j))
        return self.slope * j + base ** self.exponents[0] + self.gamma

    def upper_range(self, x) -> tuple[int, int]:
        return min_k0(self.N, x), int(math.floor(self.k_inf - self.ell))

    # lower corridor
    @property
    def k0_lower(self) -> int:
        return int(round(self.delta))

    @property
    def k_inf_int(self) -> int:
        return round_half_up(self.n - self.delta)

    def _base(self, j):
        return max(0.0, min(j, self.k_inf_int - j))

    def lower_plus(self, j) -> float:
        return self.slope * (j - self.k0_lower) - self._base(j) ** self.exponents[0]

    def lower_minus(self, j) -> float:
        return self.slope * (j - self.k0_lower) - self._base(j) ** self.exponents[1]

    def corridor_range(self) -> tuple[int, int]:
        return self.k0_lower + self.ell, self.k_inf_int - self.ell


def first_admissible_scale(domain: Domain, x, schedule: ScaleSchedule, k: int = 0) -> int:
    """Smallest scale ``>= k`` whose mollifier supports around ``x`` stay inside the box."""
    kmax = int(math.floor(math.log(domain.radius)))
    while k <= kmax:
        try:
            _check_support(domain, x, schedule, k, "plus")
            _check_support(domain, x, schedule, k, "minus")
            return k
        except GeometryError:
            k += 1
    return k


def barrier_crossing_stats(ensemble, spec: BarrierSpec, sites, *, gammas=(0, 1, 2, 4, 8), schedule=None,
                           upsilon: float = 0.0, omega: float = 1.0 / 16.0, min_samples: int = 100) -> dict:
    """Upper: frequency over snapshots of ``exists x, j: S_{j,+}(x) > B(j) + Gamma`` per ``Gamma``.

    Lower corridor: distribution of the counting variable restricted to the
    implementable events (corridor on the increment sums, non-rough and small
    boundary layers at every scale, and the high-point condition with ``upsilon``).
    """
    dom: Domain = ensemble.domain
    vals = np.asarray(ensemble.values)
    S = vals.shape[0]
    if S < min_samples:
        raise ValueError(f"barrier statistics need at least {min_samples} samples, got {S}")
    schedule = schedule or ScaleSchedule(dom.radius, omega)
    sites = [tuple(int(v) for v in s) for s in sites]
    if spec.kind == "upper":
        excess = np.full(S, -np.inf)
        base = BarrierSpec("upper", spec.N, spec.g_hat, 0.0, spec.delta, spec.ell, spec.exponents)
        for x in sites:
            lo, hi = base.upper_range(x)
            lo = first_admissible_scale(dom, x, schedule, lo)
            if hi < lo:
                continue
            dec = decompose((dom, vals), x, lo, hi, schedule, flags=False)
            for j in range(lo, hi + 1):
                excess = np.maximum(excess, dec.s_plus[j] - base.upper(j))
        g = np.asarray(gammas, dtype=float)
        freq = np.array([(excess > gg).mean() for gg in g])
        return {"kind": "upper", "gammas": g.tolist(), "frequency": freq.tolist(),
                "stderr": np.sqrt(freq * (1 - freq) / S).tolist(), "excess": excess, "samples": S}

    k0, kinf = spec.k0_lower, spec.k_inf_int
    lo, hi = spec.corridor_range()
    target = math.sqrt(spec.g_hat) * (spec.m_N - 4 * spec.delta)
    high = math.sqrt(spec.g_hat) * spec.m_N - upsilon
    counts = np.zeros(S, dtype=int)
    parts = {"corridor": np.zeros(S, int), "rough": np.zeros(S, int), "bdry": np.zeros(S, int), "high": np.zeros(S, int)}
    skipped = []
    for x in sites:
        if first_admissible_scale(dom, x, schedule, k0) != k0:
            skipped.append(x)
            continue
        dec = decompose((dom, vals), x, k0, kinf, schedule, flags=True)
        csum = np.zeros(S)
        ok = np.ones(S, dtype=bool)
        for j in range(k0 + 1, kinf + 1):
            csum = csum + dec.increments[j - 1]
            if lo <= j <= hi:
                ok &= (csum >= spec.lower_minus(j)) & (csum <= spec.lower_plus(j))
        ok &= (csum >= target - 1.0) & (csum <= target)
        rough = np.all([dec.rough_ok[k] for k in range(k0, kinf + 1)], axis=0)
        bd = np.all([dec.bdry_ok[k] for k in range(k0, kinf + 1)], axis=0)
        hi_pt = (dec.phi_x - dec.s_minus[k0]) >= high
        parts["corridor"] += ok
        parts["rough"] += rough
        parts["bdry"] += bd
        parts["high"] += hi_pt
        counts += ok & rough & bd & hi_pt
    return {"kind": "lower-corridor", "counts": counts, "histogram": np.bincount(counts).tolist(),
            "p_nonzero": float((counts > 0).mean()), "component_means": {k: float(v.mean()) for k, v in parts.items()},
            "samples": S, "skipped_sites": skipped, "coupling_event": "not implemented (excluded)"}


# --- tightness --------------------------------------------------------------------

@dataclass
class TightnessReport:
    N_values: list
    g_hat: float
    g_se: float
    levels: tuple
    quantiles: dict  # N -> array over levels
    quantile_ci: dict  # N -> (lo, hi) arrays
    centering_se: dict  # N -> propagated error from g_hat
    ensemble_sizes: dict
    width_10_90: dict
    width_spread: float
    tightness_score: float
    ablation_medians: dict
    ablation_drift: float
    ablation_drift_se: float
    ablation_flagged: bool
    extras: dict = dc_field(default_factory=dict)

    def as_dict(self):
        def conv(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, dict):
                return {str(k): conv(w) for k, w in v.items()}
            if isinstance(v, (list, tuple)):
                return [conv(w) for w in v]
            if isinstance(v, (np.floating, np.integer, np.bool_)):
                return v.item()
            return v

        return {k: conv(v) for k, v in self.__dict__.items()}


def _ks(a, b) -> float:
    return float(stats.ks_2samp(a, b).statistic)


def tightness_report(maxima: dict, g_hat: float, g_se: float = 0.0, *, n_boot: int = 1000, seed: int = 0,
                     min_size: int = 500, levels=LEVELS) -> TightnessReport:
    """Quantiles of ``max phi - sqrt(g) m_N`` across box sizes, and the no-log-log ablation.

    ``maxima`` maps ``N`` to an array of independent maxima.  The ablation
    centres by ``sqrt(g) 2 log N`` only; its median moves with N by about
    ``-(3/4) sqrt(g) log log N``, which the bootstrap test should detect.
    """
    Ns = sorted(maxima)
    if len(Ns) < 3:
        raise ValueError("tightness report needs at least three box sizes")
    for N in Ns:
        if len(maxima[N]) < min_size:
            raise ValueError(f"N={N}: need at least {min_size} maxima, got {len(maxima[N])}")
    rng = np.random.default_rng(seed)
    lv = np.asarray(levels)
    q, ci, cse, width, sizes, cen, abl = {}, {}, {}, {}, {}, {}, {}
    for N in Ns:
        mx = np.asarray(maxima[N], dtype=float)
        c = mx - centering(N, g_hat)
        cen[N] = c
        abl[N] = mx - centering(N, g_hat, loglog=False)
        q[N] = np.quantile(c, lv)
        boots = np.quantile(c[rng.integers(0, c.size, (n_boot, c.size))], lv, axis=1)
        ci[N] = (np.quantile(boots, 0.025, axis=1), np.quantile(boots, 0.975, axis=1))
        cse[N] = centering(N, 1.0) * g_se / (2.0 * math.sqrt(g_hat))
        width[N] = float(np.quantile(c, 0.9) - np.quantile(c, 0.1))
        sizes[N] = int(c.size)
    spread = max(width.values()) - min(width.values())
    score = max(_ks(cen[a], cen[b]) for ii, a in enumerate(Ns) for b in Ns[ii + 1 :])
    meds = {N: float(np.median(abl[N])) for N in Ns}
    lo, hi = Ns[0], Ns[-1]
    drift = meds[hi] - meds[lo]
    bd = []
    for _ in range(n_boot):
        a = abl[lo][rng.integers(0, abl[lo].size, abl[lo].size)]
        b = abl[hi][rng.integers(0, abl[hi].size, abl[hi].size)]
        bd.append(np.median(b) - np.median(a))
    drift_se = float(np.std(bd, ddof=1))
    centred_meds = {N: float(np.median(cen[N])) for N in Ns}
    return TightnessReport(Ns, g_hat, g_se, tuple(levels), q, ci, cse, sizes, width, float(spread), float(score),
                           meds, float(drift), drift_se, bool(abs(drift) > 3 * drift_se),
                           {"centred_medians": centred_meds,
                            "predicted_ablation_drift": -0.75 * math.sqrt(g_hat) * math.log(math.log(hi) / math.log(lo))})


def sign_flip_ks(values: np.ndarray) -> tuple[float, float]:
    """KS statistic and p-value between the laws of ``max phi`` and ``-min phi``."""
    v = np.asarray(values)[..., 1:-1, 1:-1].reshape(len(values), -1)
    r = stats.ks_2samp(v.max(axis=1), -v.min(axis=1))
    return float(r.statistic), float(r.pvalue)


def counting_sites(N: int, k0: int, schedule: ScaleSchedule | None = None) -> list:
    """Union of ``Q_{r_k0}(y)`` over ``y`` in ``10 r_k0 Z^2`` inside ``Q_{N/2}``."""
    schedule = schedule or ScaleSchedule(N)
    r = round_half_up(schedule.r(k0))
    step = 10 * r
    half = N // 2
    centres = [c for c in range(-(half // step) * step, half + 1, step)]
    out = set()
    for a in centres:
        for b in centres:
            for u in range(a - r, a + r + 1):
                for v in range(b - r, b + r + 1):
                    if max(abs(u), abs(v)) < N:
                        out.add((u, v))
    return sorted(out, key=lambda s: (s[1], s[0]))
