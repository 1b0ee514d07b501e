"""Even, uniformly convex nearest-neighbour interactions.

Each potential is a frozen value with certified bounds ``c_minus <= V'' <= c_plus``
and a Lipschitz constant for ``V''``.  For use inside numba kernels a potential
is reduced to ``(code, packed)`` where ``packed`` is a flat float array; see
``evaluate_packed``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.interpolate import CubicSpline

QUADRATIC, COSINE, TABLE = 0, 1, 2
IDS = {"quadratic": QUADRATIC, "cosine-perturbed": COSINE, "user-table": TABLE}


class PotentialError(ValueError):
    pass


@dataclass(frozen=True)
class Potential:
    id: str
    parameters: tuple = ()
    c_minus: float = 1.0
    c_plus: float = 1.0
    lipschitz_v2: float = 0.0
    packed: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def code(self) -> int:
        return IDS[self.id]

    def __call__(self, x):
        return evaluate(self, x)


def quadratic() -> Potential:
    """V(x) = x^2 / 2."""
    return Potential("quadratic", (), 1.0, 1.0, 0.0, np.zeros(1))


def cosine_perturbed(kappa: float) -> Potential:
    """V(x) = x^2/2 + kappa (1 - cos x), uniformly convex for |kappa| < 1."""
    kappa = float(kappa)
    if not np.isfinite(kappa) or abs(kappa) >= 1.0:
        raise PotentialError(f"cosine-perturbed potential needs |kappa| < 1, got {kappa}")
    a = abs(kappa)
    return Potential("cosine-perturbed", (kappa,), 1.0 - a, 1.0 + a, a, np.array([kappa]))


def user_table(x, v) -> Potential:
    """Cubic spline through ``(x, V)`` pairs given for ``x >= 0``.

    The table is mirrored so the interpolant is even.  ``V''`` of a cubic spline
    is piecewise linear, so its extrema over the table range sit on the knots
    and the bounds below are exact.  Beyond the last knot ``V`` continues as the
    quadratic with matching value, slope and curvature.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if x.ndim != 1 or x.shape != v.shape or x.size < 3:
        raise PotentialError("user-table needs matching 1-d arrays with at least 3 knots")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise PotentialError("user-table entries must be finite")
    if x[0] < 0 or np.any(np.diff(x) <= 0):
        raise PotentialError("user-table knots must be nonnegative and strictly increasing")
    if x[0] == 0:
        xs = np.concatenate([-x[:0:-1], x])
        vs = np.concatenate([v[:0:-1], v])
    else:
        xs = np.concatenate([-x[::-1], x])
        vs = np.concatenate([v[::-1], v])
    sp = CubicSpline(xs, vs, bc_type="not-a-knot")
    d2 = sp(xs, 2)
    cm, cp = float(d2.min()), float(d2.max())
    if cm <= 0:
        raise PotentialError(f"user-table spline is not uniformly convex (min V'' = {cm:.3g})")
    lip = float(np.max(np.abs(6.0 * sp.c[0])))
    n = xs.size
    packed = np.concatenate([[n], xs, sp.c.T.ravel()])
    return Potential("user-table", tuple(np.concatenate([x, v])), cm, cp, lip, packed)


def from_config(pid: str, params=()) -> Potential:
    params = list(params) if params is not None else []
    if pid == "quadratic":
        if params:
            raise PotentialError("quadratic potential takes no parameters")
        return quadratic()
    if pid == "cosine-perturbed":
        if len(params) != 1:
            raise PotentialError("cosine-perturbed potential takes one parameter (kappa)")
        return cosine_perturbed(params[0])
    if pid == "user-table":
        arr = np.asarray(params, dtype=float)
        if arr.ndim == 2:
            return user_table(arr[:, 0], arr[:, 1])
        if arr.size % 2:
            raise PotentialError("user-table parameters are x-knots followed by V-values")
        k = arr.size // 2
        return user_table(arr[:k], arr[k:])
    raise PotentialError(f"unknown potential id {pid!r}")


def convexity_bounds(p: Potential) -> tuple[float, float]:
    return p.c_minus, p.c_plus


@numba.njit(cache=True)
def _spline_eval(packed, x):
    n = int(packed[0])
    xs = packed[1 : n + 1]
    c = packed[n + 1 :]
    if x >= xs[n - 1] or x <= xs[0]:
        # quadratic continuation from the nearest end knot
        j = n - 2 if x >= xs[n - 1] else 0
        t = xs[n - 1] - xs[n - 2] if j == n - 2 else 0.0
        a3, a2, a1, a0 = c[4 * j], c[4 * j + 1], c[4 * j + 2], c[4 * j + 3]
        v0 = ((a3 * t + a2) * t + a1) * t + a0
        v1 = (3 * a3 * t + 2 * a2) * t + a1
        v2 = 6 * a3 * t + 2 * a2
        h = x - (xs[n - 1] if j == n - 2 else xs[0])
        return v0 + v1 * h + 0.5 * v2 * h * h, v1 + v2 * h, v2
    j = np.searchsorted(xs, x, side="right") - 1
    t = x - xs[j]
    a3, a2, a1, a0 = c[4 * j], c[4 * j + 1], c[4 * j + 2], c[4 * j + 3]
    return ((a3 * t + a2) * t + a1) * t + a0, (3 * a3 * t + 2 * a2) * t + a1, 6 * a3 * t + 2 * a2


@numba.njit(cache=True)
def evaluate_packed(code, packed, x):
    """(V, V', V'') at x for a packed potential."""
    if code == 0:
        return 0.5 * x * x, x, 1.0
    if code == 1:
        k = packed[0]
        return 0.5 * x * x + k * (1.0 - np.cos(x)), x + k * np.sin(x), 1.0 + k * np.cos(x)
    return _spline_eval(packed, x)


@numba.njit(cache=True)
def _evaluate_many(code, packed, xs, v, d1, d2):
    for i in range(xs.size):
        v[i], d1[i], d2[i] = evaluate_packed(code, packed, xs[i])


def evaluate(p: Potential, x):
    """Value, first and second derivative; scalar in, tuple of floats out, arrays broadcast."""
    arr = np.asarray(x, dtype=float)
    flat = np.ascontiguousarray(arr.ravel())
    v, d1, d2 = np.empty_like(flat), np.empty_like(flat), np.empty_like(flat)
    _evaluate_many(p.code, p.packed, flat, v, d1, d2)
    if arr.ndim == 0:
        return float(v[0]), float(d1[0]), float(d2[0])
    return v.reshape(arr.shape), d1.reshape(arr.shape), d2.reshape(arr.shape)


def reference_stiffness(p: Potential, edge_multiplicity: int = 2, iterations: int = 5) -> float:
    """Typical curvature ``E V''(grad)`` for Gaussian gradients at the matching stiffness.

    A nearest-neighbour gradient of the quadratic field with stiffness ``c``
    has variance ``1 / (2 m c)``; iterate ``c <- E V''`` under that law.
    Used as the reference quadratic in preconditioned samplers.
    """
    if p.code == QUADRATIC:
        return 1.0
    t, w = np.polynomial.hermite_e.hermegauss(60)
    w = w / w.sum()
    c = 0.5 * (p.c_minus + p.c_plus)
    for _ in range(iterations):
        sd = 1.0 / np.sqrt(2.0 * edge_multiplicity * c)
        c = float(np.sum(w * evaluate(p, sd * t)[2]))
    return c
