"""Scale-by-scale decomposition of a field value into mollified square averages.

For a site ``x`` and scale ``k`` the radii are ``r_k = N e^{-k}`` and
``r_{k,+-} = r_k +- r_k^{1-omega}``.  ``S_{k,+-}`` averages the exit-distribution
averages ``Gamma_{Q_r(x)}`` over integer radii ``r`` with a smooth bump of
half-width ``r_k^{1-omega}`` centred at ``r_{k,+-}``.  Increments
``I_k = S_{k+1,+} - S_{k,-}`` and boundary layers ``B_k = S_{k,-} - S_{k,+}``
telescope back to ``phi(x)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np
from scipy import integrate

from .harmonic import harmonic_measure_kernel, round_half_up
from .lattice import Domain, Field, GeometryError, make_box, oscillation, subbox


# --- bump ---------------------------------------------------------------------

def _bump_raw(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


@lru_cache(maxsize=1)
def bump_normaliser() -> float:
    val, _ = integrate.quad(lambda t: math.exp(-1.0 / (1.0 - t * t)), -1.0, 1.0, epsabs=1e-14, epsrel=1e-14)
    return 1.0 / val


def bump(u):
    """Smooth even bump supported in (-1, 1) with integral 1."""
    return bump_normaliser() * _bump_raw(u)


def mollifier_weights(rho: float, center: float, r_grid) -> np.ndarray:
    """``eta_rho(r - center) = eta((r - center)/rho)/rho`` for the integers ``r`` in ``r_grid``.

    ``r_grid`` is an inclusive integer interval ``(lo, hi)``.  When the grid
    covers the whole support, the weights sum to 1 up to a tiny aliasing error
    (the bump is smooth); this is checked against the bound ``5 / rho``.
    """
    if not rho >= 1.0:
        raise ValueError(f"mollifier width must be >= 1 lattice unit, got {rho}")
    lo, hi = int(r_grid[0]), int(r_grid[1])
    r = np.arange(lo, hi + 1, dtype=float)
    w = bump((r - center) / rho) / rho
    if lo <= center - rho and hi >= center + rho:
        if abs(w.sum() - 1.0) > 5.0 / rho:
            raise ArithmeticError(f"mollifier sum {w.sum()} off by more than 5/rho")
    return w


def mollifier_support(rho: float, center: float) -> tuple[int, int]:
    """Integer radii ``r >= 1`` with ``|r - center| < rho``."""
    lo = max(1, math.floor(center - rho) + 1)
    hi = math.ceil(center + rho) - 1
    return lo, hi


# --- schedule -----------------------------------------------------------------

@dataclass(frozen=True)
class ScaleSchedule:
    N: int
    omega: float = 1.0 / 16.0
    k_range: tuple[int, int] | None = None  # inclusive; default 0 .. floor(log N)

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be >= 2")
        if not 0.0 < self.omega < 1.0:
            raise ValueError(f"omega must lie in (0, 1), got {self.omega}")
        if self.k_range is None:
            object.__setattr__(self, "k_range", (0, int(math.floor(math.log(self.N)))))
        lo, hi = self.k_range
        if lo > hi:
            raise ValueError("empty k range")
        for k in range(lo, hi + 1):
            if self.r_minus(k) <= 0:
                raise ValueError(f"r_{{k,-}} <= 0 at k={k}")

    def r(self, k) -> float:
        return self.N * math.exp(-k)

    def width(self, k) -> float:
        return self.r(k) ** (1.0 - self.omega)

    def r_plus(self, k) -> float:
        return self.r(k) + self.width(k)

    def r_minus(self, k) -> float:
        return self.r(k) - self.width(k)

    def ks(self):
        return range(self.k_range[0], self.k_range[1] + 1)

    @property
    def rk(self):
        return np.array([self.r(k) for k in self.ks()])

    @property
    def rk_plus(self):
        return np.array([self.r_plus(k) for k in self.ks()])

    @property
    def rk_minus(self):
        return np.array([self.r_minus(k) for k in self.ks()])

    def center(self, k, side: str) -> float:
        if side == "plus":
            return self.r_plus(k)
        if side == "minus":
            return self.r_minus(k)
        raise ValueError(f"side must be plus or minus, got {side!r}")

    def support(self, k, side: str) -> tuple[int, int]:
        return mollifier_support(self.width(k), self.center(k, side))

    def windows_ordered(self, k) -> bool:
        """Whether ``r_{k+1,+} < r_{k,-}``, i.e. increment windows do not overlap."""
        return self.r_plus(k + 1) < self.r_minus(k)


# --- square averages ------------------------------------------------------------

@lru_cache(maxsize=4096)
def _boundary_stencil(r: int):
    """Offsets ``(drow, dcol)`` of dQ_r and the matching exit weights."""
    dom = make_box(r)
    rows, cols = np.nonzero(dom.boundary_mask)
    w = harmonic_measure_kernel(r).weights[rows, cols]
    return rows - r, cols - r, w


def square_averages(domain: Domain, values: np.ndarray, x, radii) -> np.ndarray:
    """``Gamma_{Q_r(x)}(x, phi)`` for a stack of fields; returns ``(S, len(radii))``."""
    vals = np.asarray(values)
    if vals.ndim == 2:
        vals = vals[None]
    i, j = domain.index(x)
    out = np.empty((vals.shape[0], len(radii)))
    for c, r in enumerate(radii):
        subbox(domain, x, int(r))
        dr, dc, w = _boundary_stencil(int(r))
        out[:, c] = vals[:, i + dr, j + dc] @ w
    return out


def _smoothed_from_profile(schedule, k, side, profile_fn):
    lo, hi = schedule.support(k, side)
    if hi < lo:
        raise GeometryError(f"no integer radius in the mollifier support at k={k}")
    w = mollifier_weights(schedule.width(k), schedule.center(k, side), (lo, hi))
    g = profile_fn(range(lo, hi + 1))
    return g @ w / w.sum()


def _check_support(domain, x, schedule, k, side):
    lo, hi = schedule.support(k, side)
    if domain.linf(x) + hi > domain.radius:
        raise GeometryError(
            f"mollifier support for S_{{{k},{side}}} reaches radius {hi}, but x={tuple(x)} "
            f"is only {domain.radius - domain.linf(x)} from the boundary; increase k"
        )


def smoothed_average(field: Field, x, k: int, side: str, schedule: ScaleSchedule | None = None,
                     omega: float = 1.0 / 16.0) -> float:
    """Mollified square average ``S_{k,side}(x, phi)``."""
    schedule = schedule or ScaleSchedule(field.domain.radius, omega)
    return float(smoothed_average_batch(field.domain, field.values, x, k, side, schedule)[0])


def smoothed_average_batch(domain, values, x, k, side, schedule) -> np.ndarray:
    _check_support(domain, x, schedule, k, side)
    return _smoothed_from_profile(schedule, k, side, lambda rr: square_averages(domain, values, x, list(rr)))


# --- decomposition --------------------------------------------------------------

@dataclass
class MultiscaleDecomposition:
    x: tuple
    schedule: ScaleSchedule
    k0: int
    k_inf: int
    phi_x: np.ndarray  # (S,)
    s_plus: dict = dc_field(default_factory=dict)  # k -> (S,)
    s_minus: dict = dc_field(default_factory=dict)
    increments: dict = dc_field(default_factory=dict)
    boundary_layers: dict = dc_field(default_factory=dict)
    rough_ok: dict = dc_field(default_factory=dict)
    bdry_ok: dict = dc_field(default_factory=dict)

    @property
    def remainder_fine(self):
        return self.phi_x - self.s_plus[self.k_inf]

    @property
    def coarse(self):
        return self.s_minus[self.k0]

    def reconstruct(self) -> np.ndarray:
        """Right-hand side of the telescoping identity.

        The boundary-layer sum runs over ``k0+1 .. k_inf-1``; when ``k_inf = k0``
        it is the generalised empty sum ``-B_{k0}``.
        """
        total = self.remainder_fine + self.coarse
        for k in range(self.k0, self.k_inf):
            total = total + self.increments[k]
        if self.k_inf == self.k0:
            total = total - self.boundary_layers[self.k0]
        else:
            for k in range(self.k0 + 1, self.k_inf):
                total = total + self.boundary_layers[k]
        return total

    def table(self):
        """Rows ``(k, S_{k,+}, S_{k,-}, I_k, B_k, rough_ok, bdry_ok)``, arrays over snapshots."""
        rows = []
        for k in range(self.k0, self.k_inf + 1):
            rows.append((k, self.s_plus.get(k), self.s_minus.get(k), self.increments.get(k),
                         self.boundary_layers.get(k), self.rough_ok.get(k), self.bdry_ok.get(k)))
        return rows


def min_k0(N: int, x) -> int:
    d = N - max(abs(int(x[0])), abs(int(x[1])))
    return int(math.ceil(math.log(N / d)))


def decompose(field, x, k0: int, k_inf: int, schedule: ScaleSchedule | None = None, *,
              omega: float = 1.0 / 16.0, rough_const: float = 4.0, bdry_exponent: float | None = None,
              flags: bool = True) -> MultiscaleDecomposition:
    """Telescoping decomposition of ``phi(x)`` between scales ``k0 <= k_inf``.

    ``field`` is a Field or ``(domain, values)`` with ``values`` a stack
    ``(S, 2N+1, 2N+1)``; all outputs are then arrays over the stack.
    """
    if isinstance(field, Field):
        domain, values = field.domain, field.values[None]
    else:
        domain, values = field
        values = np.asarray(values)
        if values.ndim == 2:
            values = values[None]
    N = domain.radius
    x = (int(x[0]), int(x[1]))
    schedule = schedule or ScaleSchedule(N, omega)
    if k_inf < k0:
        raise ValueError(f"need k0 <= k_inf, got {k0} > {k_inf}")
    if k0 < min_k0(N, x):
        raise ValueError(f"k0={k0} below log(N / dist(x, boundary)) = {math.log(N / (N - domain.linf(x))):.3f}")
    if k_inf > math.log(N):
        raise ValueError(f"k_inf={k_inf} exceeds log N = {math.log(N):.3f}")
    for k in range(k0, k_inf + 1):
        for side in ("plus", "minus"):
            _check_support(domain, x, schedule, k, side)

    # one pass over every radius needed
    needed = set()
    for k in range(k0, k_inf + 1):
        for side in ("plus", "minus"):
            lo, hi = schedule.support(k, side)
            needed.update(range(lo, hi + 1))
    radii = sorted(needed)
    prof = square_averages(domain, values, x, radii)
    col = {r: c for c, r in enumerate(radii)}

    def S(k, side):
        return _smoothed_from_profile(schedule, k, side, lambda rr: prof[:, [col[r] for r in rr]])

    i, j = domain.index(x)
    dec = MultiscaleDecomposition(x, schedule, k0, k_inf, values[:, i, j].copy())
    for k in range(k0, k_inf + 1):
        dec.s_plus[k] = S(k, "plus")
        dec.s_minus[k] = S(k, "minus")
        dec.boundary_layers[k] = dec.s_minus[k] - dec.s_plus[k]
    for k in range(k0, k_inf):
        dec.increments[k] = dec.s_plus[k + 1] - dec.s_minus[k]
    if flags:
        ex = schedule.omega / 4.0 if bdry_exponent is None else bdry_exponent
        for k in range(k0, k_inf + 1):
            dec.rough_ok[k] = event_rough_batch(domain, values, x, k, schedule, rough_const)
            dec.bdry_ok[k] = np.abs(dec.boundary_layers[k]) <= schedule.r(k) ** (-ex)
    return dec


def event_rough(field: Field, x, k: int, schedule: ScaleSchedule | None = None, const: float = 4.0,
                omega: float = 1.0 / 16.0) -> bool:
    """Non-roughness at scale k: oscillation over ``dQ_{r_k}(x)`` at most ``const (log r_k)^2``."""
    schedule = schedule or ScaleSchedule(field.domain.radius, omega)
    r = round_half_up(schedule.r(k))
    sb = subbox(field.domain, x, r)
    return oscillation(field, sb.outer_boundary) <= const * math.log(schedule.r(k)) ** 2


def event_rough_batch(domain, values, x, k, schedule, const=4.0) -> np.ndarray:
    r = round_half_up(schedule.r(k))
    subbox(domain, x, r)
    dr, dc, _ = _boundary_stencil(r)
    i, j = domain.index(x)
    b = values[:, i + dr, j + dc]
    return (b.max(axis=1) - b.min(axis=1)) <= const * math.log(schedule.r(k)) ** 2


def event_boundary_layer(decomp: MultiscaleDecomposition, k: int, exponent: float | None = None):
    """``|B_k| <= r_k^{-omega/4}`` (scalar for single-field decompositions)."""
    if k not in decomp.boundary_layers:
        raise KeyError(f"k={k} outside the decomposition range")
    ex = decomp.schedule.omega / 4.0 if exponent is None else exponent
    ok = np.abs(decomp.boundary_layers[k]) <= decomp.schedule.r(k) ** (-ex)
    return bool(ok[0]) if ok.size == 1 else ok


# --- statistics -------------------------------------------------------------------

@dataclass
class IncrementReport:
    ks: list
    n: int
    mean: np.ndarray
    var: np.ndarray
    skew: np.ndarray
    excess_kurtosis: np.ndarray
    se_skew: float
    se_kurt: float
    corr: np.ndarray
    corr_se: float
    lambdas: np.ndarray
    log_mgf: np.ndarray  # (len(ks), len(lambdas))
    g_hat: float | None
    mgf_deviation: np.ndarray | None  # sup_{|lambda|<=1} |log-MGF - lambda^2 g/2| per k
    mgf_deviation_se: np.ndarray | None

    def as_dict(self):
        d = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}
        return d


def _log_mgf(x, lambdas):
    # log-mean-exp, stable
    a = np.outer(lambdas, x)
    mx = a.max(axis=1, keepdims=True)
    return (mx[:, 0] + np.log(np.mean(np.exp(a - mx), axis=1)))


def increment_statistics(ensemble, x, k_range, schedule: ScaleSchedule | None = None, *, g_hat: float | None = None,
                         lambdas=None, n_boot: int = 200, seed: int = 0, omega: float = 1.0 / 16.0,
                         increments: np.ndarray | None = None) -> IncrementReport:
    """Moments, cross-scale correlations and empirical log-MGF of the increments ``I_k``.

    ``ensemble`` needs ``.domain`` and ``.values``; alternatively pass a
    precomputed ``increments`` array ``(S, K)`` for ``k_range``.
    """
    k0, k1 = int(k_range[0]), int(k_range[1])
    ks = list(range(k0, k1 + 1))
    if increments is None:
        dom = ensemble.domain
        vals = ensemble.values
        schedule = schedule or ScaleSchedule(dom.radius, omega)
        dec = decompose((dom, vals), x, k0, k1 + 1, schedule, flags=False)
        inc = np.stack([dec.increments[k] for k in ks], axis=1)
    else:
        inc = np.asarray(increments, dtype=float)
    S = inc.shape[0]
    if S < 1000:
        raise ValueError(f"increment statistics need at least 1000 samples, got {S}")
    lambdas = np.linspace(-2, 2, 41) if lambdas is None else np.asarray(lambdas, dtype=float)
    c = inc - inc.mean(axis=0)
    var = c.var(axis=0)
    sd = np.sqrt(var)
    skew = (c**3).mean(axis=0) / sd**3
    kurt = (c**4).mean(axis=0) / var**2 - 3.0
    corr = np.corrcoef(inc, rowvar=False) if len(ks) > 1 else np.ones((1, 1))
    mgf = np.stack([_log_mgf(inc[:, a], lambdas) for a in range(len(ks))])
    dev = dev_se = None
    if g_hat is not None:
        inner = np.abs(lambdas) <= 1.0 + 1e-12
        lam = lambdas[inner]

        def sup_dev(block):
            return np.array([np.max(np.abs(_log_mgf(block[:, a], lam) - 0.5 * lam**2 * g_hat)) for a in range(len(ks))])

        dev = sup_dev(inc)
        rng = np.random.default_rng(seed)
        boots = np.array([sup_dev(inc[rng.integers(0, S, S)]) for _ in range(n_boot)])
        dev_se = boots.std(axis=0, ddof=1)
    return IncrementReport(ks, S, inc.mean(axis=0), var, skew, kurt, math.sqrt(6.0 / S), math.sqrt(24.0 / S),
                           corr, 1.0 / math.sqrt(S), lambdas, mgf, g_hat, dev, dev_se)


def write_decomposition_csv(path, decomps, snapshot_ids=None):
    """One row per (snapshot, x, k)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["snapshotId", "x", "k", "sPlus", "sMinus", "increment", "boundaryLayer", "roughFlag", "bdryFlag"])
        for dec in decomps:
            S = dec.phi_x.size
            ids = range(S) if snapshot_ids is None else snapshot_ids
            for s, sid in zip(range(S), ids):
                for k in range(dec.k0, dec.k_inf + 1):
                    def g(d):
                        v = d.get(k)
                        return "" if v is None else repr(float(v[s]))

                    def f(d):
                        v = d.get(k)
                        return "" if v is None else int(bool(v[s]))

                    w.writerow([sid, f"{dec.x[0]};{dec.x[1]}", k, g(dec.s_plus), g(dec.s_minus), g(dec.increments),
                                g(dec.boundary_layers), f(dec.rough_ok), f(dec.bdry_ok)])
