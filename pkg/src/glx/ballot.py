"""Random walks under curved barriers, exponential tilting and a two-point Skorokhod embedding.

Walks have independent, not necessarily identically distributed increments
``X_0 .. X_{m-1}``; the path is ``Sigma_0 = 0, Sigma_k = X_0 + ... + X_{k-1}``.
All sampling goes through Philox streams keyed by ``(seed, name, chunk)`` with
a fixed chunk size, so estimates for the same seed are reproducible and two
queries on the same seed see the same paths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, interpolate, special, stats

from .rng import generator

CHUNK = 100_000


# --- increment laws ---------------------------------------------------------------

class LawError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianLaw:
    mean: float = 0.0
    var: float = 1.0

    def __post_init__(self):
        if not self.var >= 0:
            raise LawError("variance must be nonnegative")

    family = "gaussian"

    @property
    def has_density(self):
        return self.var > 0

    def moments(self):
        return self.mean, self.var

    def ppf(self, u):
        return self.mean + math.sqrt(self.var) * special.ndtri(u)

    def cdf(self, x):
        if self.var == 0:
            return (np.asarray(x) >= self.mean).astype(float)
        return special.ndtr((np.asarray(x) - self.mean) / math.sqrt(self.var))

    def tilt(self, lam):
        return GaussianLaw(self.mean + lam * self.var, self.var)

    def log_mgf(self, lam):
        return lam * self.mean + 0.5 * lam * lam * self.var


@dataclass(frozen=True)
class DiscreteLaw:
    values: tuple
    probs: tuple

    family = "discrete"
    has_density = False

    def __post_init__(self):
        p = np.asarray(self.probs, float)
        if len(self.values) != len(p) or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
            raise LawError("discrete law needs matching values and probabilities summing to 1")

    def moments(self):
        v, p = np.asarray(self.values, float), np.asarray(self.probs, float)
        mu = float(p @ v)
        return mu, float(p @ (v - mu) ** 2)

    def ppf(self, u):
        order = np.argsort(self.values)
        v = np.asarray(self.values, float)[order]
        c = np.cumsum(np.asarray(self.probs, float)[order])
        return v[np.minimum(np.searchsorted(c, u, side="right"), v.size - 1)]

    def tilt(self, lam):
        v, p = np.asarray(self.values, float), np.asarray(self.probs, float)
        w = p * np.exp(lam * v)
        return DiscreteLaw(self.values, tuple(w / w.sum()))

    def log_mgf(self, lam):
        v, p = np.asarray(self.values, float), np.asarray(self.probs, float)
        return float(np.log(p @ np.exp(lam * v)))


def constant(value: float = 0.0) -> DiscreteLaw:
    return DiscreteLaw((float(value),), (1.0,))


class DensityLaw:
    """A law given by a (possibly unnormalised) density on ``(lo, hi)``.

    Moments and tilts use adaptive quadrature; sampling uses a tabulated
    inverse CDF on a grid covering all but ~1e-13 of the mass.
    """

    family = "density"
    has_density = True

    def __init__(self, pdf, lo=-np.inf, hi=np.inf, name="user", grid=20001):
        self._raw = pdf
        self.lo, self.hi, self.name = float(lo), float(hi), name
        z = self._quad(lambda x: pdf(x))
        if not np.isfinite(z) or z <= 0:
            raise LawError("density does not integrate to a positive finite mass")
        self.norm = z
        self._grid = grid
        self._table = None

    def pdf(self, x):
        return np.asarray(self._raw(x), dtype=float) / self.norm

    def _quad(self, f):
        val, _ = integrate.quad(f, self.lo, self.hi, epsabs=1e-13, epsrel=1e-12, limit=500)
        return val

    def moments(self):
        mu = self._quad(lambda x: x * self.pdf(x))
        var = self._quad(lambda x: (x - mu) ** 2 * self.pdf(x))
        return mu, var

    def max_density(self):
        a, b = self._range()
        return float(np.max(self.pdf(np.linspace(a, b, 20001))))

    def _range(self):
        a, b = self.lo, self.hi
        peak = max(self.pdf(np.linspace(max(a, -50), min(b, 50), 2001)))
        if not np.isfinite(a):
            a = -1.0
            while self.pdf(a) > 1e-16 * peak and a > -1e6:
                a *= 2
        if not np.isfinite(b):
            b = 1.0
            while self.pdf(b) > 1e-16 * peak and b < 1e6:
                b *= 2
        return a, b

    def _inverse(self):
        if self._table is None:
            a, b = self._range()
            x = np.linspace(a, b, self._grid)
            c = integrate.cumulative_trapezoid(self.pdf(x), x, initial=0.0)
            c /= c[-1]
            keep = np.concatenate([[True], np.diff(c) > 0])
            self._table = interpolate.interp1d(c[keep], x[keep], bounds_error=False, fill_value=(a, b))
        return self._table

    def ppf(self, u):
        return self._inverse()(u)

    def log_mgf(self, lam):
        return math.log(self._quad(lambda x: np.exp(lam * x) * self.pdf(x)))

    def tilt(self, lam):
        a, b = self._range()
        # the tilted density must still decay at the edges of the numerical support
        for edge in (a, b):
            if abs(edge) >= 1e6 or (np.isinf(self.lo if edge == a else self.hi)
                                    and math.exp(lam * edge) * self.pdf(edge) > 1e-10):
                raise LawError(f"moment generating function diverges or is not resolvable at lambda={lam}")
        base, lam = self._raw, float(lam)

        def tilted(x):
            f = np.asarray(base(x), dtype=float)
            with np.errstate(over="ignore", invalid="ignore"):
                return np.where(f > 0, np.exp(lam * np.asarray(x) + np.log(np.where(f > 0, f, 1.0))), 0.0)

        try:
            return DensityLaw(tilted, self.lo, self.hi,
                              f"{self.name}|tilt={lam:g}", self._grid)
        except LawError as e:
            raise LawError(f"moment generating function diverges at lambda={lam}") from e


def logistic(var: float = 1.0) -> DensityLaw:
    s = math.sqrt(3.0 * var) / math.pi
    return DensityLaw(lambda x: stats.logistic.pdf(x, scale=s), name="logistic")


# --- walks -----------------------------------------------------------------------

@dataclass
class WalkSpec:
    """Horizon ``m`` and per-step laws, with the envelopes they are declared to satisfy.

    ``laws`` is one law (shared) or a sequence of ``m`` laws.  The mean and
    variance envelopes ``|E X_j| <= C e^{gamma (j-m)}`` and
    ``|E X_j^2 - g| <= C e^{gamma (j-m)}`` are checked at construction.
    """
    m: int
    laws: object = field(default_factory=GaussianLaw)
    envelope: tuple = (0.0, 1.0)  # (C, gamma)
    g: float = 1.0
    subgaussian: tuple = (0.25, 2.0)  # (lambda_*, C_*)
    check: bool = True

    def __post_init__(self):
        if self.m < 1:
            raise LawError("horizon m must be positive")
        if not isinstance(self.laws, (list, tuple)):
            self.laws = (self.laws,) * self.m
        self.laws = tuple(self.laws)
        if len(self.laws) != self.m:
            raise LawError(f"need {self.m} increment laws, got {len(self.laws)}")
        if self.check:
            bad = self.envelope_violations()
            if bad:
                raise LawError(f"declared envelopes fail at steps {bad[:10]}")

    def moments(self):
        return np.array([law.moments() for law in self.laws])

    def envelope_violations(self, tol=1e-9):
        C, gam = self.envelope
        mv = self.moments()
        env = C * np.exp(gam * (np.arange(self.m) - self.m)) + tol
        second = mv[:, 1] + mv[:, 0] ** 2
        return [int(j) for j in np.nonzero((np.abs(mv[:, 0]) > env) | (np.abs(second - self.g) > env))[0]]

    @property
    def has_density(self):
        return all(law.has_density for law in self.laws)

    def increments(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if all(isinstance(law, GaussianLaw) for law in self.laws):
            mv = self.moments()
            return mv[:, 0] + np.sqrt(mv[:, 1]) * rng.standard_normal((n, self.m))
        u = rng.random((n, self.m))
        out = np.empty_like(u)
        for j, law in enumerate(self.laws):
            out[:, j] = law.ppf(u[:, j])
        return out


def _paths(spec: WalkSpec, rng, n):
    x = spec.increments(n, rng)
    s = np.zeros((n, spec.m + 1))
    np.cumsum(x, axis=1, out=s[:, 1:])
    return s


def simulate_walk(spec: WalkSpec, rng, n_paths: int | None = None) -> np.ndarray:
    """Path ``(Sigma_0, .., Sigma_m)``; a stack of paths when ``n_paths`` is given."""
    if isinstance(rng, (int, np.integer)):
        rng = generator(int(rng), "walk")
    s = _paths(spec, rng, 1 if n_paths is None else n_paths)
    return s[0] if n_paths is None else s


def exponential_tilt(spec: WalkSpec, lam: float) -> WalkSpec:
    """Reweight every step law by ``e^{lam x} / MGF(lam)``; envelopes are not re-checked."""
    if abs(lam) > spec.subgaussian[0]:
        raise LawError(f"|lambda|={abs(lam)} exceeds lambda_*={spec.subgaussian[0]}")
    if lam == 0:
        return spec
    tilted = {}
    laws = []
    for law in spec.laws:
        if id(law) not in tilted:
            tilted[id(law)] = law.tilt(lam)
        laws.append(tilted[id(law)])
    return replace(spec, laws=tuple(laws), check=False)


def drift_spec(m: int, g: float, N: float, delta: float = 3.0) -> tuple[WalkSpec, float]:
    """Gaussian steps ``N(g lam, g)`` with ``lam = sqrt(g)(m_N - 2 delta) / (g k_inf)``.

    ``k_inf = log N - delta``; returns the ``WalkSpec`` and ``lam``.  Tilting by
    ``-lam`` gives centred ``N(0, g)`` steps.
    """
    n = math.log(N)
    mN = 2 * n - 0.75 * math.log(n)
    lam = math.sqrt(g) * (mN - 2 * delta) / (g * (n - delta))
    spec = WalkSpec(m, GaussianLaw(g * lam, g), envelope=(abs(g * lam) + g * g * lam * lam + 1e-9, 0.0), g=g,
                    subgaussian=(max(1.0, 2 * abs(lam)), 2.0))
    return spec, lam


# --- barrier events --------------------------------------------------------------

@dataclass(frozen=True)
class BarrierQuery:
    """Barrier event on ``Sigma``.

    * one-sided-up:   ``-a + Sigma_j <= h_j^{2/5}`` for ``j in [ell, m-ell]``
    * one-sided-down: ``-a + Sigma_j <= -h_j^{2/5}``
    * corridor:       ``-h_j^{3/5} <= Sigma_j <= -h_j^{2/5}``

    with ``h_j = min(j, m-j)``, plus ``Sigma_{m-1}`` in ``window``
    (default ``[-t-1, -t]``).  With ``k`` set, the constraint runs over
    ``[ell, k-1]`` and the endpoint condition is ``Sigma_k - barrier(k)`` in
    the window (the intermediate-time form).
    """
    kind: str = "one-sided-up"
    a: float = 0.0
    t: float = 0.0
    ell: int = 1
    window: tuple | None = None
    k: int | None = None
    exponents: tuple = (0.4, 0.6)

    def __post_init__(self):
        if self.kind not in ("one-sided-up", "one-sided-down", "corridor"):
            raise ValueError(f"unknown barrier kind {self.kind!r}")
        if self.a < 0 or self.t < 0:
            raise ValueError("offsets must be nonnegative")
        if self.ell < 1:
            raise ValueError("ell must be at least 1")
        lo, hi = self.endpoint_window()
        if lo > hi:
            raise ValueError("endpoint window is empty")

    def endpoint_window(self):
        if self.window is not None:
            return float(self.window[0]), float(self.window[1])
        if self.kind == "corridor":
            return -1.0, 0.0
        return -self.t - 1.0, -self.t

    def profile(self, m):
        j = np.arange(m + 1)
        return np.minimum(j, m - j).astype(float)


def barrier_hits(paths: np.ndarray, q: BarrierQuery) -> np.ndarray:
    """Per-path indicator of the query event; ``paths`` is ``(n, m+1)``."""
    m = paths.shape[1] - 1
    h = q.profile(m)
    lo_w, hi_w = q.endpoint_window()
    last = m - q.ell if q.k is None else q.k - 1
    idx = np.arange(q.ell, last + 1)
    S = paths
    if q.kind == "corridor":
        lo, hi = -h ** q.exponents[1], -h ** q.exponents[0]
        ok = np.all((S[:, idx] >= lo[idx]) & (S[:, idx] <= hi[idx]), axis=1) if idx.size else np.ones(len(S), bool)
        end = S[:, m - 1] if q.k is None else S[:, q.k] - hi[q.k]
    else:
        bar = h ** q.exponents[0] * (1.0 if q.kind == "one-sided-up" else -1.0)
        ok = np.all(S[:, idx] - bar[idx] <= q.a, axis=1) if idx.size else np.ones(len(S), bool)
        end = S[:, m - 1] if q.k is None else S[:, q.k] - bar[q.k]
    return ok & (end >= lo_w) & (end <= hi_w)


@dataclass
class BallotResult:
    query: BarrierQuery
    estimate: float
    stderr: float
    hits: int
    trials: int
    seed: int
    zero_hit: bool
    upper95: float  # one-sided bound, meaningful when zero_hit

    def as_dict(self):
        d = dict(self.__dict__)
        d["query"] = dict(self.query.__dict__)
        return d


def barrier_probability(spec: WalkSpec, query: BarrierQuery, trials: int, seed: int = 0,
                        min_trials: int = 10_000, stream: str = "ballot") -> BallotResult:
    """Plain Monte Carlo estimate with binomial standard error."""
    if trials < min_trials:
        raise ValueError(f"need at least {min_trials} trials, got {trials}")
    if query.k is not None and not (query.ell <= query.k <= spec.m):
        raise ValueError("k must lie in [ell, m]")
    hits = 0
    for c, start in enumerate(range(0, trials, CHUNK)):
        n = min(CHUNK, trials - start)
        rng = generator(seed, stream, spec.m, c)
        hits += int(barrier_hits(_paths(spec, rng, n), query).sum())
    p = hits / trials
    se = math.sqrt(p * (1 - p) / trials)
    up = -math.log(0.05) / trials if hits == 0 else p + 1.645 * se
    return BallotResult(query, p, se, hits, trials, seed, hits == 0, up)


def corridor_scaling(ms=(16, 32, 64, 128), trials: int = 10**7, ell: int = 1, seed: int = 0, g: float = 1.0):
    """``m^{3/2} P`` for the corridor event with iid ``N(0, g)`` steps."""
    out = {}
    for m in ms:
        r = barrier_probability(WalkSpec(m, GaussianLaw(0.0, g), g=g), BarrierQuery("corridor", ell=ell), trials, seed)
        out[m] = (r.estimate * m**1.5, r.stderr * m**1.5, r)
    vals = np.array([v[0] for v in out.values()])
    spread = float((vals.max() - vals.min()) / vals.mean()) if vals.mean() > 0 else float("inf")
    return out, spread


def ell_scan(ms=(16, 32, 64, 128), ells=range(1, 8), trials: int = 10**6, seed: int = 0, tol: float = 0.15):
    """Smallest ``ell`` at which the corridor's ``m^{3/2} P`` is stable across ``m`` (relative spread < tol)."""
    table = {}
    best = None
    for ell in ells:
        out, spread = corridor_scaling(ms, trials, ell, seed)
        zero = any(v[2].zero_hit for v in out.values())
        table[ell] = {"scaled": {m: v[0] for m, v in out.items()}, "spread": spread, "zero_hit": zero}
        if best is None and not zero and spread < tol:
            best = ell
    return table, best


def one_sided_bound_check(ms=(32, 64, 128), a_values=(0, 2), t_values=(0, 1, 3), ell: int = 1,
                          trials: int = 10**6, seed: int = 0, fit_m: int = 32, g: float = 1.0, delta: float = 3.0):
    """Fit ``C`` in ``C (1+a+sqrt(ell))(1+t) / (m-ell)^{3/2}`` at ``fit_m``; report ratios elsewhere.

    Steps are the drifted Gaussian walk tilted back to zero drift.  Returns
    ``(C, ratios)`` where ``ratios[m][(a, t)] = P / bound``; the bound holds
    within a factor ``f`` when every ratio is at most ``f``.
    """
    est = {}
    for m in ms:
        spec, lam = drift_spec(m, g, math.exp(m + delta), delta)
        spec = exponential_tilt(spec, -lam)
        for a in a_values:
            for t in t_values:
                r = barrier_probability(spec, BarrierQuery("one-sided-up", a=a, t=t, ell=ell), trials, seed)
                est[m, a, t] = r

    def shape(m, a, t):
        return (1 + a + math.sqrt(ell)) * (1 + t) / (m - ell) ** 1.5

    C = max(est[fit_m, a, t].estimate / shape(fit_m, a, t) for a in a_values for t in t_values)
    ratios = {m: {(a, t): est[m, a, t].estimate / (C * shape(m, a, t)) for a in a_values for t in t_values}
              for m in ms if m != fit_m}
    return C, ratios, est


# --- Skorokhod embedding ---------------------------------------------------------

def _exit_cdf(t):
    """``P(T <= t)`` for the exit time of standard Brownian motion from ``[-1, 1]``."""
    t = np.asarray(t, float)
    out = np.empty_like(t)
    small = t < 0.5
    ts = t[small]
    # image series, fast for small t
    acc = np.zeros_like(ts)
    for k in range(8):
        acc += (-1) ** k * special.erfc((2 * k + 1) / np.sqrt(2 * ts))
    out[small] = 2 * acc
    tl = t[~small]
    acc = np.zeros_like(tl)
    for n in range(40):
        q = 2 * n + 1
        acc += (-1) ** n / q * np.exp(-q * q * math.pi**2 * tl / 8)
    out[~small] = 1 - 4 / math.pi * acc
    return out


_EXIT_TABLE = None


def exit_time_ppf(u):
    """Inverse CDF of the ``[-1, 1]`` exit time, tabulated once (monotone cubic in log t)."""
    global _EXIT_TABLE
    if _EXIT_TABLE is None:
        lt = np.linspace(math.log(0.004), math.log(60.0), 6000)
        c = _exit_cdf(np.exp(lt))
        keep = np.concatenate([[True], np.diff(c) > 0])
        _EXIT_TABLE = interpolate.PchipInterpolator(c[keep], lt[keep], extrapolate=True), c[keep][0], c[keep][-1]
    f, c0, c1 = _EXIT_TABLE
    u = np.clip(np.asarray(u, float), c0, c1)
    return np.exp(f(u))


def _two_point(law, n, rng):
    """Draw ``(U, V)`` with density proportional to ``(v-u) mu(du) mu(dv)`` on ``u < 0 < v``.

    The joint law is a two-way mixture: ``U`` comes from ``mu`` on the negative
    half (probability ``P(X > 0)``-weighted) or from its size-biased version,
    and ``V`` given ``U`` likewise; zero-mass atoms at the origin return ``(0, 0)``.
    """
    if isinstance(law, DiscreteLaw):
        v, p = np.asarray(law.values, float), np.asarray(law.probs, float)
        neg, pos = v < 0, v > 0
        uu, vv = np.meshgrid(v[neg], v[pos], indexing="ij")
        w = (vv - uu) * np.outer(p[neg], p[pos])
        pzero = p[v == 0].sum()
        wt = np.concatenate([w.ravel() / w.sum() * (1 - pzero), [pzero]])
        pick = rng.choice(wt.size, size=n, p=wt / wt.sum())
        U = np.append(uu.ravel(), 0.0)[pick]
        V = np.append(vv.ravel(), 0.0)[pick]
        return U, V

    neg_plain, neg_biased, pos_plain, pos_biased, p_neg, p_pos, M = _half_samplers(law)
    r = rng.random((4, n))
    U = np.where(r[0] < p_neg / (p_neg + p_pos), neg_plain(r[1]), neg_biased(r[1]))
    # given U = u: V ~ v mu(dv) (weight M) or mu|_{v>0} (weight -u p_pos)
    w_biased = M / (M - U * p_pos)
    V = np.where(r[2] < w_biased, pos_biased(r[3]), pos_plain(r[3]))
    return U, V


def _half_samplers(law):
    """Inverse-CDF samplers for ``mu`` and ``|x| mu(dx)`` restricted to each half-line."""
    if isinstance(law, GaussianLaw):
        if law.mean != 0:
            raise LawError("embedding target must have mean zero")
        s = math.sqrt(law.var)
        return (lambda u: -s * special.ndtri(0.5 + 0.5 * u),
                lambda u: -s * np.sqrt(-2 * np.log1p(-u)),
                lambda u: s * special.ndtri(0.5 + 0.5 * u),
                lambda u: s * np.sqrt(-2 * np.log1p(-u)),
                0.5, 0.5, s / math.sqrt(2 * math.pi))
    a, b = law._range()
    x = np.linspace(a, b, 40001)
    f = law.pdf(x)
    out = []
    masses = []
    for sel in (x < 0, x > 0):
        xs, fs = x[sel], f[sel]
        for w in (fs, np.abs(xs) * fs):
            c = integrate.cumulative_trapezoid(w, xs, initial=0.0)
            masses.append(c[-1])
            c = c / c[-1]
            keep = np.concatenate([[True], np.diff(c) > 0])
            out.append(interpolate.interp1d(c[keep], xs[keep], bounds_error=False, fill_value=(xs[0], xs[-1])))
    return out[0], out[1], out[2], out[3], masses[0], masses[2], 0.5 * (masses[1] + masses[3])


@dataclass
class EmbeddingSample:
    tau: np.ndarray
    w_tau: np.ndarray
    sup_abs: np.ndarray
    tolerance: float


def skorokhod_embed(target, n: int, rng=None, seed: int = 0, tol: float | None = None) -> EmbeddingSample:
    """Randomised two-point embedding: draw ``(U, V)``, run Brownian motion to the exit of ``[U, V]``.

    The exit time is simulated by walk-on-intervals: from ``w`` the motion
    leaves the symmetric interval of half-width ``d = dist(w, {U, V})`` at time
    ``d^2 T`` (``T`` from the tabulated exit law) at ``w +- d``.  Once within
    ``tol`` (default ``1e-4 Var``) of an end, the walk is snapped to that end and
    the mean remaining exit time ``delta (V - U - delta)`` is added.  Given the
    exit side, the opposite excursion extreme is drawn exactly from the
    gambler's-ruin law, which gives ``sup |W|`` with the correct law given
    the exit side.
    """
    if rng is None:
        rng = generator(seed, "skorokhod")
    mu, var = target.moments()
    if abs(mu) > 1e-9 * max(1.0, math.sqrt(var)):
        raise LawError(f"embedding target must have mean zero, got {mu:g}")
    tol = 1e-4 * var if tol is None else tol
    U, V = _two_point(target, n, rng)
    tau = np.zeros(n)
    w = np.zeros(n)
    live = (U < 0) & (V > 0)
    while live.any():
        i = np.nonzero(live)[0]
        d = np.minimum(w[i] - U[i], V[i] - w[i])
        near = d <= tol
        if near.any():
            j = i[near]
            dj = d[near]
            to_upper = (V[j] - w[j]) <= (w[j] - U[j])
            tau[j] += dj * (V[j] - U[j] - dj)
            w[j] = np.where(to_upper, V[j], U[j])
            live[j] = False
            i, d = i[~near], d[~near]
        if i.size == 0:
            break
        tau[i] += d * d * exit_time_ppf(rng.random(i.size))
        w[i] += np.where(rng.random(i.size) < 0.5, d, -d)
    # opposite extreme given the exit side (gambler's ruin)
    sup = np.abs(w)
    up = (w > 0) & (U < 0)
    dn = (w < 0) & (V > 0)
    u = rng.random(n)
    a, b = -U, V
    y_up = b * a * (1 - u) / (u * a + b)  # depth of the minimum before exiting at V
    y_dn = a * b * (1 - u) / (u * b + a)
    sup = np.where(up, np.maximum(b, y_up), sup)
    sup = np.where(dn, np.maximum(a, y_dn), sup)
    return EmbeddingSample(tau, w, sup, tol)


def fit_gaussian_envelope(x: np.ndarray, bulk=(0.5, 0.75, 0.9, 0.95, 0.99), tail_levels=(0.999, 0.9999, 0.99999)):
    """Fit ``P(|X| > s) <= C exp(-c s^2)`` on the bulk, then test it on the deep tail.

    The Gaussian scale comes from the median (``sigma = median|X| / 0.6745``,
    ``c = 1 / (2 sigma^2)``), which heavy tails cannot inflate; ``C`` is the
    smallest prefactor dominating the bulk quantiles.  ``ok`` says whether the
    extrapolated envelope dominates the empirical tail at the deeper quantiles
    (those with at least ten exceedances) up to three binomial standard
    errors.  Returns ``(c, ok, table)``.
    """
    x = np.sort(np.abs(np.asarray(x, dtype=float)))
    n = x.size

    def sf(s):
        return 1.0 - np.searchsorted(x, s, side="right") / n

    sigma = np.median(x) / stats.halfnorm.ppf(0.5)
    c = 1.0 / (2.0 * sigma**2)
    sb = np.quantile(x, bulk)
    tb = sf(sb)
    logC = float(np.max(np.log(np.maximum(tb, 1e-300)) + c * sb**2))
    levels = [q for q in tail_levels if n * (1 - q) >= 10]
    st = np.quantile(x, levels) if levels else np.array([])
    tt = sf(st)
    env = np.exp(np.minimum(logC - c * st**2, 0.0))  # a tail bound above 1 is vacuous
    se = np.sqrt(tt * (1 - tt) / n)
    ok = bool(np.all(tt - 3 * se <= env))
    grid = np.concatenate([sb, st])
    return float(c), ok, {"grid": grid, "tail": np.concatenate([tb, tt]), "envelope": np.exp(np.minimum(logC - c * grid**2, 0.0)),
                          "logC": logC, "checked": st}
