"""Samplers for the gradient Gibbs measure on a box with Dirichlet data.

Energy: ``H(phi) = m * sum_{edges} V(phi(x) - phi(y))`` over edges with at least
one interior endpoint, where ``m`` is the edge multiplicity.  ``m = 2`` counts
each edge once per ordered pair (the default); ``m = 1`` counts each edge once.
Under ``m`` the quadratic case has covariance ``(m L)^{-1}``.

All chains are run batched: state arrays have shape ``(R, 2N+1, 2N+1)`` for
``R`` replicas, and every random number is a keyed function of
``(seed, stream, replica, sweep, site, draw)``.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numba
import numpy as np

from . import harmonic
from .lattice import Domain, Field, decode_snapshot, write_snapshot
from .potential import Potential, evaluate_packed, quadratic, reference_stiffness
from .rng import KeyedStream, prefix, uniform_at

ALGORITHMS = ("heat-bath", "langevin", "mala", "exact-gaussian", "fourier-hmc")
BLOWUP = 1e6


class ChainAbort(RuntimeError):
    """A chain diverged; ``ensemble`` holds what was collected before the abort."""

    def __init__(self, msg, ensemble=None):
        super().__init__(msg)
        self.ensemble = ensemble


class ChecksumError(RuntimeError):
    pass


class ConfigError(ValueError):
    def __init__(self, field_name, msg):
        super().__init__(f"{field_name}: {msg}")
        self.field = field_name


@dataclass
class ChainConfig:
    algorithm: str = "heat-bath"
    step_size: float = 0.01
    burn_in_sweeps: int | None = None  # None: 20 N for heat-bath, 0 for exact
    thinning_sweeps: int = 1
    samples: int = 1
    seed: int = 0
    replicas: int = 1
    edge_multiplicity: int = 2
    conditional: str = "slice"  # heat-bath conditional sampler: slice | inverse-cdf
    hmc_steps: int = 8  # splitting steps per trajectory (fourier-hmc)
    hmc_jitter: float = 0.2  # trajectory angle drawn uniformly in pi/2 * (1 +- jitter)
    hmc_stiffness: float | None = None  # reference quadratic; None: typical V'' (reference_stiffness)
    start: str = "zero"  # zero | exact

    def validate(self, potential: Potential | None = None):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError("algorithm", f"must be one of {ALGORITHMS}")
        if self.samples < 1:
            raise ConfigError("samples", "must be >= 1")
        if self.thinning_sweeps < 1:
            raise ConfigError("thinningSweeps", "must be >= 1")
        if self.burn_in_sweeps is not None and self.burn_in_sweeps < 0:
            raise ConfigError("burnInSweeps", "must be >= 0")
        if self.replicas < 1:
            raise ConfigError("replicas", "must be >= 1")
        if self.edge_multiplicity not in (1, 2):
            raise ConfigError("edgeMultiplicity", "must be 1 or 2")
        if not 0 <= int(self.seed) < (1 << 128):
            raise ConfigError("seed", "must be a non-negative 128-bit integer")
        if self.conditional not in ("slice", "inverse-cdf"):
            raise ConfigError("conditional", "must be slice or inverse-cdf")
        if self.start not in ("zero", "exact"):
            raise ConfigError("start", "must be zero or exact")
        if self.algorithm in ("langevin", "mala"):
            if not self.step_size > 0:
                raise ConfigError("stepSize", "must be positive")
        if self.algorithm == "langevin":
            cp = potential.c_plus if potential is not None else 1.0
            check_langevin_step(self.step_size, cp, self.edge_multiplicity)
        return self

    def burn_in(self, N: int) -> int:
        if self.burn_in_sweeps is not None:
            return int(self.burn_in_sweeps)
        return 0 if self.algorithm == "exact-gaussian" else 20 * N


def check_langevin_step(dt: float, c_plus: float, m: int = 2):
    # linearised drift has spectral radius <= 4 m c+ * 2; Euler is stable below dt * that < 2
    if not dt * 4.0 * m * c_plus < 1.0:
        raise ConfigError("stepSize", f"dt={dt} violates dt * 4 m c+ < 1 (m={m}, c+={c_plus})")


# --- numba kernels -----------------------------------------------------------

@numba.njit(cache=True)
def _logcond(code, packed, m, t, n0, n1, n2, n3):
    s = evaluate_packed(code, packed, t - n0)[0]
    s += evaluate_packed(code, packed, t - n1)[0]
    s += evaluate_packed(code, packed, t - n2)[0]
    s += evaluate_packed(code, packed, t - n3)[0]
    return -m * s


@numba.njit(cache=True)
def _slice_draw(code, packed, m, x0, n0, n1, n2, n3, width, pre, site):
    d = 0
    fy = _logcond(code, packed, m, x0, n0, n1, n2, n3)
    y = fy + np.log(1.0 - uniform_at(pre, site, d))
    d += 1
    lo = x0 - width * uniform_at(pre, site, d)
    d += 1
    hi = lo + width
    for _ in range(1000):
        if _logcond(code, packed, m, lo, n0, n1, n2, n3) <= y:
            break
        lo -= width
    for _ in range(1000):
        if _logcond(code, packed, m, hi, n0, n1, n2, n3) <= y:
            break
        hi += width
    for _ in range(10000):
        x1 = lo + (hi - lo) * uniform_at(pre, site, d)
        d += 1
        if _logcond(code, packed, m, x1, n0, n1, n2, n3) >= y:
            return x1
        if x1 < x0:
            lo = x1
        else:
            hi = x1
    return x0


@numba.njit(cache=True)
def norm_ppf(p):
    """Inverse standard normal CDF (rational start, two Halley refinements)."""
    a = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
         1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
    b = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
         6.680131188771972e01, -1.328068155288572e01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
         -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
    dd = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
          3.754408661907416e00)
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return np.inf
    if p < 0.02425:
        q = math.sqrt(-2 * math.log(p))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1)
    elif p > 1 - 0.02425:
        q = math.sqrt(-2 * math.log(1 - p))
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1)
    else:
        q = p - 0.5
        r = q * q
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1)
    for _ in range(2):
        e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
        u = e * math.sqrt(2 * math.pi) * math.exp(x * x / 2)
        x = x - u / (1 + x * u / 2)
    return x


_NGRID = 801


@numba.njit(cache=True)
def _icdf_draw(code, packed, m, n0, n1, n2, n3, cminus, u):
    """Inverse-CDF draw from the single-site conditional; monotone in the neighbours."""
    mean = 0.25 * (n0 + n1 + n2 + n3)
    if code == 0:
        return mean + norm_ppf(u) / math.sqrt(4.0 * m)
    # mode by Newton on the concave log-density
    t = mean
    for _ in range(100):
        g = 0.0
        h = 0.0
        for nb in (n0, n1, n2, n3):
            _, d1, d2 = evaluate_packed(code, packed, t - nb)
            g += d1
            h += d2
        step = g / h
        t -= step
        if abs(step) < 1e-14 * (1.0 + abs(t)):
            break
    sd = 1.0 / math.sqrt(4.0 * m * cminus)
    lo = t - 12.0 * sd
    hi = t + 12.0 * sd
    hstep = (hi - lo) / (_NGRID - 1)
    f0 = _logcond(code, packed, m, t, n0, n1, n2, n3)
    logf = np.empty(_NGRID)
    for i in range(_NGRID):
        logf[i] = _logcond(code, packed, m, lo + i * hstep, n0, n1, n2, n3) - f0
    # cell masses with log-linear interpolation (exact for exponential cells)
    mass = np.empty(_NGRID - 1)
    tot = 0.0
    for i in range(_NGRID - 1):
        a, b = logf[i], logf[i + 1]
        if abs(b - a) < 1e-12:
            mi = hstep * math.exp(a)
        else:
            mi = hstep * (math.exp(b) - math.exp(a)) / (b - a)
        mass[i] = mi
        tot += mi
    target = u * tot
    acc = 0.0
    for i in range(_NGRID - 1):
        if acc + mass[i] >= target or i == _NGRID - 2:
            a, b = logf[i], logf[i + 1]
            r = (target - acc) / mass[i] if mass[i] > 0 else 0.5
            r = min(max(r, 0.0), 1.0)
            if abs(b - a) < 1e-12:
                frac = r
            else:
                # invert int_0^s exp(a + (b-a) v) dv / cell mass = r on [0, 1]
                frac = math.log1p(r * math.expm1(b - a)) / (b - a)
            return lo + (i + frac) * hstep
        acc += mass[i]
    return t


@numba.njit(cache=True)
def _heat_bath(vals, code, packed, m, k0, k1, replicas, sweep, use_icdf, cminus):
    R, n, _ = vals.shape
    width = 2.0 / math.sqrt(4.0 * m * cminus)
    ni = n - 2
    for r in range(R):
        pre = prefix(k0, k1, replicas[r], sweep)
        v = vals[r]
        for color in range(2):
            for i in range(1, n - 1):
                j0 = 1 + ((i + 1 + color) % 2)
                for j in range(j0, n - 1, 2):
                    site = (i - 1) * ni + (j - 1)
                    n0, n1, n2, n3 = v[i - 1, j], v[i + 1, j], v[i, j - 1], v[i, j + 1]
                    if use_icdf:
                        v[i, j] = _icdf_draw(code, packed, m, n0, n1, n2, n3, cminus, uniform_at(pre, site, 0))
                    else:
                        v[i, j] = _slice_draw(code, packed, m, v[i, j], n0, n1, n2, n3, width, pre, site)


@numba.njit(cache=True)
def _drift(vals, code, packed, m, out):
    """``out = m * sum_{y~x} V'(phi(y) - phi(x))`` on the interior."""
    R, n, _ = vals.shape
    for r in range(R):
        v = vals[r]
        for i in range(1, n - 1):
            for j in range(1, n - 1):
                c = v[i, j]
                s = evaluate_packed(code, packed, v[i - 1, j] - c)[1]
                s += evaluate_packed(code, packed, v[i + 1, j] - c)[1]
                s += evaluate_packed(code, packed, v[i, j - 1] - c)[1]
                s += evaluate_packed(code, packed, v[i, j + 1] - c)[1]
                out[r, i - 1, j - 1] = m * s


@numba.njit(cache=True)
def _energy(vals, code, packed, m, out):
    R, n, _ = vals.shape
    for r in range(R):
        v = vals[r]
        s = 0.0
        # horizontal edges (i, j)-(i, j+1) and vertical (i, j)-(i+1, j) touching the interior
        for i in range(1, n - 1):
            for j in range(0, n - 1):
                s += evaluate_packed(code, packed, v[i, j + 1] - v[i, j])[0]
        for i in range(0, n - 1):
            for j in range(1, n - 1):
                s += evaluate_packed(code, packed, v[i + 1, j] - v[i, j])[0]
        out[r] = m * s


def energy(values: np.ndarray, potential: Potential, m: int = 2) -> np.ndarray:
    v = np.ascontiguousarray(values, dtype=float)
    single = v.ndim == 2
    v = v[None] if single else v
    out = np.empty(v.shape[0])
    _energy(v, potential.code, potential.packed, float(m), out)
    return out[0] if single else out


def drift(values: np.ndarray, potential: Potential, m: int = 2) -> np.ndarray:
    v = np.ascontiguousarray(values, dtype=float)
    single = v.ndim == 2
    v = v[None] if single else v
    out = np.empty((v.shape[0], v.shape[1] - 2, v.shape[2] - 2))
    _drift(v, potential.code, potential.packed, float(m), out)
    return out[0] if single else out


# --- single-step public operations ------------------------------------------

def _as_batch(field):
    if isinstance(field, Field):
        return field.domain, np.ascontiguousarray(field.values[None].copy()), True
    raise TypeError("expected a Field")


def heat_bath_sweep(field: Field, potential: Potential, rng: KeyedStream, sweep: int = 0, replica: int = 0,
                    edge_multiplicity: int = 2, conditional: str = "slice") -> Field:
    """One checkerboard sweep of single-site resampling from the exact conditionals."""
    dom, v, _ = _as_batch(field)
    heat_bath_batch(v, potential, rng, sweep, np.array([replica]), edge_multiplicity, conditional)
    return Field(dom, v[0])


def heat_bath_batch(values, potential, rng, sweep, replicas, m=2, conditional="slice"):
    _heat_bath(values, potential.code, potential.packed, float(m), rng.k0, rng.k1,
               np.ascontiguousarray(replicas, dtype=np.int64), np.int64(sweep),
               conditional == "inverse-cdf", potential.c_minus)


def _langevin_batch(values, potential, dt, noise, m):
    d = drift(values, potential, m)
    values[:, 1:-1, 1:-1] += dt * d + math.sqrt(2.0 * dt) * noise
    if not np.all(np.abs(values[:, 1:-1, 1:-1]) <= BLOWUP):
        bad = int(np.argmax(np.max(np.abs(values[:, 1:-1, 1:-1]), axis=(1, 2))))
        raise ChainAbort(f"Langevin chain diverged (|phi| > {BLOWUP:g}) in replica {bad}; reduce dt")


def langevin_step(field: Field, potential: Potential, dt: float, rng: KeyedStream | None = None,
                  sweep: int = 0, replica: int = 0, edge_multiplicity: int = 2, noise=None) -> Field:
    """Euler-Maruyama step ``phi += dt * drift + sqrt(2 dt) * xi`` with fixed boundary.

    ``noise`` overrides the keyed normals (shape of the interior); pass zeros
    for the deterministic part alone.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt > 0:
        check_langevin_step(dt, potential.c_plus, edge_multiplicity)
    dom, v, _ = _as_batch(field)
    n = dom.shape[0] - 2
    if noise is None:
        noise = rng.normals([replica], sweep, n * n).reshape(1, n, n)
    else:
        noise = np.asarray(noise, dtype=float).reshape(1, n, n)
    _langevin_batch(v, potential, dt, noise, edge_multiplicity)
    return Field(dom, v[0])


def _mala_batch(values, potential, dt, rng, sweep, replicas, m):
    R = values.shape[0]
    n = values.shape[1] - 2
    xi = rng.normals(replicas, sweep, n * n, draw=0).reshape(R, n, n)
    u = rng.uniforms(replicas, sweep, 1, draw=1 << 20)[:, 0]
    d0 = drift(values, potential, m)
    prop = values.copy()
    prop[:, 1:-1, 1:-1] += dt * d0 + math.sqrt(2.0 * dt) * xi
    if not np.all(np.isfinite(prop)) or np.max(np.abs(prop)) > BLOWUP:
        raise ChainAbort("MALA proposal diverged; reduce dt")
    d1 = drift(prop, potential, m)
    e0 = energy(values, potential, m)
    e1 = energy(prop, potential, m)
    fwd = np.sum(xi * xi, axis=(1, 2)) / 2.0  # |phi' - phi - dt d0|^2 / (4 dt)
    back = values[:, 1:-1, 1:-1] - prop[:, 1:-1, 1:-1] - dt * d1  # |phi - phi' - dt d1|^2 / (4 dt)
    rev = np.sum(back * back, axis=(1, 2)) / (4.0 * dt)
    log_alpha = -(e1 - e0) - rev + fwd
    acc = np.log(np.maximum(u, 1e-300)) < log_alpha
    values[acc] = prop[acc]
    return acc


def mala_step(field: Field, potential: Potential, dt: float, rng: KeyedStream, sweep: int = 0,
              replica: int = 0, edge_multiplicity: int = 2) -> tuple[Field, bool]:
    dom, v, _ = _as_batch(field)
    acc = _mala_batch(v, potential, dt, rng, sweep, np.array([replica]), edge_multiplicity)
    return Field(dom, v[0]), bool(acc[0])


def _hmc_batch(values, potential, angle, steps, rng, sweep, replicas, m, cref):
    """Hamiltonian MC with mass ``M = m c_ref L`` applied through the sine transform.

    The energy is split as ``U0 + U1`` with ``U0`` the quadratic energy of
    stiffness ``c_ref``.  Under ``M`` the ``U0`` flow is a rotation by the same
    angle in every sine mode and is integrated exactly; ``U1`` enters through
    half kicks (Strang splitting).  For quadratic V with ``c_ref = 1`` the kick
    vanishes and a trajectory of angle ``pi/2`` is an exact independent draw.
    """
    R = values.shape[0]
    n = values.shape[1] - 2
    Rb = (n + 1) // 2
    mu = harmonic.laplacian_eigenvalues(Rb) * (m * cref)
    xi = rng.normals(replicas, sweep, n * n, draw=0).reshape(R, n, n)
    u = rng.uniforms(replicas, sweep, 1, draw=1 << 20)[:, 0]
    hext = harmonic.harmonic_extension(values)
    ph = harmonic.dst2(xi) * np.sqrt(mu)  # momentum in the sine basis, law N(0, M)

    def kinetic(ph):
        return 0.5 * np.sum(ph * ph / mu, axis=(1, 2))

    def kick(q):
        # -grad U1 = drift(q) + m c_ref L (q - h) on the interior, in the sine basis
        lap = harmonic.laplacian_interior(q - hext)
        return harmonic.dst2(drift(q, potential, m) + (m * cref) * lap)

    h0 = energy(values, potential, m) + kinetic(ph)
    q = values.copy()
    qh = harmonic.dst2(q[:, 1:-1, 1:-1] - hext[:, 1:-1, 1:-1])
    eps = angle / steps
    c, s_ = math.cos(eps), math.sin(eps)
    for _ in range(steps):
        ph = ph + 0.5 * eps * kick(q)
        qh, ph = c * qh + s_ * ph / mu, c * ph - s_ * mu * qh
        q[:, 1:-1, 1:-1] = hext[:, 1:-1, 1:-1] + harmonic.dst2(qh)
        ph = ph + 0.5 * eps * kick(q)
    if not np.all(np.isfinite(q)) or np.max(np.abs(q)) > BLOWUP:
        raise ChainAbort("HMC trajectory diverged; use more steps")
    h1 = energy(q, potential, m) + kinetic(ph)
    acc = np.log(np.maximum(u, 1e-300)) < (h0 - h1)
    values[acc] = q[acc]
    return acc


def sample_dgff_exact(domain: Domain, boundary=None, rng=None, replicas=(0,), sweep: int = 0,
                      edge_multiplicity: int = 2):
    """Exact draws of the quadratic-V measure: harmonic extension plus ``(m L)^{-1/2} xi``.

    ``boundary`` is a Field on ``domain`` (boundary entries read), a constant, or None (zero).
    Returns a Field for one replica, else a stacked array.
    """
    if rng is None:
        rng = KeyedStream(0, "exact-gaussian")
    vals = np.zeros(domain.shape)
    if isinstance(boundary, Field):
        vals[domain.boundary_mask] = boundary.values[domain.boundary_mask]
    elif boundary is not None:
        vals[domain.boundary_mask] = float(boundary)
    mean = harmonic.harmonic_extension(vals)
    out = _exact_batch(mean, rng, sweep, np.atleast_1d(replicas), edge_multiplicity)
    if out.shape[0] == 1:
        return Field(domain, out[0])
    return out


def _exact_batch(mean, rng, sweep, replicas, m):
    n = mean.shape[0] - 2
    R = (n + 1) // 2
    xi = rng.normals(replicas, sweep, n * n).reshape(len(replicas), n, n)
    fluct = harmonic.apply_laplacian_power(xi, -0.5, R) / math.sqrt(m)
    out = np.repeat(mean[None], len(replicas), axis=0)
    out[:, 1:-1, 1:-1] += fluct
    return out


def dgff_covariance(domain: Domain, x, y, edge_multiplicity: int = 2) -> float:
    """Exact ``Cov(phi(x), phi(y))`` of the quadratic-V measure with zero boundary."""
    return harmonic.green_function(domain, x)[y] / (4.0 * edge_multiplicity)


# --- ensembles ---------------------------------------------------------------

@dataclass
class Ensemble:
    config: ChainConfig
    domain: Domain
    values: np.ndarray | None  # (samples, 2N+1, 2N+1) when kept
    diagnostics: dict = dc_field(default_factory=dict)
    observations: list = dc_field(default_factory=list)

    @property
    def snapshots(self) -> list[Field]:
        if self.values is None:
            return []
        return [Field(self.domain, v) for v in self.values]

    def __len__(self):
        return 0 if self.values is None else self.values.shape[0]


def geweke_z(series: np.ndarray, nbatch: int = 20) -> float:
    """First-third vs last-half mean comparison with batch-mean standard errors."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 40:
        return 0.0
    a, b = x[: n // 3], x[n // 2 :]

    def se(y):
        k = min(nbatch, y.size // 2)
        bm = np.array([c.mean() for c in np.array_split(y, k)])
        return bm.std(ddof=1) / math.sqrt(k)

    s = math.hypot(se(a), se(b))
    return 0.0 if s == 0 else float((a.mean() - b.mean()) / s)


def _boundary_array(domain: Domain, boundary) -> np.ndarray:
    vals = np.zeros(domain.shape)
    if isinstance(boundary, Field):
        vals[domain.boundary_mask] = boundary.values[domain.boundary_mask]
    elif callable(boundary):
        vals[domain.boundary_mask] = Field.from_function(domain, boundary).values[domain.boundary_mask]
    elif boundary is not None:
        b = np.asarray(boundary, dtype=float)
        vals[domain.boundary_mask] = b if b.ndim else float(b)
    return vals


class _Persist:
    """Snapshot files plus a JSON manifest, written atomically."""

    def __init__(self, out_dir, potential, config):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.potential = potential
        self.config = config
        self.checksums = []
        self.state_checksums = []

    def snapshot(self, idx, domain, vals):
        h = write_snapshot(self.dir / f"snap_{idx:06d}.glf", Field(domain, vals), self.potential.code,
                           self.potential.parameters, self.config.seed)
        del self.checksums[idx:]
        self.checksums.append(h)

    def state(self, domain, state):
        self.state_checksums = [
            write_snapshot(self.dir / f"state_{r:04d}.glf", Field(domain, v), self.potential.code,
                           self.potential.parameters, self.config.seed)
            for r, v in enumerate(state)]

    def load(self, name, expected):
        p = self.dir / name
        if not p.exists():
            raise ChecksumError(f"{p} is missing")
        buf = p.read_bytes()
        if hashlib.sha256(buf).hexdigest() != expected:
            raise ChecksumError(f"{p} does not match its recorded checksum")
        return decode_snapshot(buf)[0].values

    def manifest(self, payload):
        p = self.dir / "manifest.json"
        tmp = p.with_name(p.name + ".tmp")
        tmp.write_text(json.dumps(payload, indent=1, sort_keys=True, default=_jsonable))
        os.replace(tmp, p)


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def config_to_dict(c: ChainConfig) -> dict:
    d = asdict(c)
    d["seed"] = str(c.seed)
    return d


def run_chain(domain: Domain, potential: Potential | None, boundary, config: ChainConfig, *,
              keep: bool = True, observe=None, out_dir=None, checkpoint_every: int = 0,
              resume: bool = False, progress=None) -> Ensemble:
    """Run ``config.replicas`` chains and collect ``config.samples`` snapshots.

    Snapshots are ordered by (time, replica).  ``observe(values_batch)`` is
    called on each collected batch and its return values are stored in
    ``Ensemble.observations``; with ``keep=False`` the fields themselves are
    not retained.  With ``out_dir`` every snapshot and the chain states are
    persisted so a run can be resumed bit-identically.
    """
    potential = potential or quadratic()
    config.validate(potential)
    m = config.edge_multiplicity
    R = config.replicas
    per_chain = -(-config.samples // R)
    burn = config.burn_in(domain.radius)
    reps = np.arange(R, dtype=np.int64)
    algo = config.algorithm
    bvals = _boundary_array(domain, boundary)
    mean = harmonic.harmonic_extension(bvals)
    stream = KeyedStream(config.seed, "chain", algo)
    init_stream = KeyedStream(config.seed, "init")

    persist = _Persist(out_dir, potential, config) if out_dir is not None else None
    state = None
    done_samples = 0
    t0 = 0
    collected, energies, accepts, obs = [], [], [], []
    if resume and persist is not None and (persist.dir / "manifest.json").exists():
        man = json.loads((persist.dir / "manifest.json").read_text())
        done_samples = int(man["collected"])
        t0 = int(man["sweep"])
        sums = man.get("checksums", [])
        if len(sums) < done_samples or len(man.get("state_checksums", [])) != R:
            raise ChecksumError("manifest does not list a checksum for every persisted file")
        state = np.stack([persist.load(f"state_{r:04d}.glf", man["state_checksums"][r]) for r in range(R)])
        for i in range(done_samples):
            collected.append(persist.load(f"snap_{i:06d}.glf", sums[i]))
        persist.checksums = list(sums[:done_samples])
        energies = list(man.get("energies", []))
        accepts = list(man.get("accepts", []))
    if state is None:
        if config.start == "exact" or algo == "exact-gaussian":
            state = _exact_batch(mean, init_stream, 0, reps, m)
        else:
            state = np.repeat(bvals[None], R, axis=0)
    state = np.ascontiguousarray(state)

    total = burn + per_chain * config.thinning_sweeps
    cref = config.hmc_stiffness or reference_stiffness(potential, m)

    def manifest(status, sweep):
        if persist is None:
            return
        persist.state(domain, state)
        persist.manifest({
            "status": status, "sweep": sweep, "collected": len(collected),
            "config": config_to_dict(config), "potential": {"id": potential.id, "parameters": list(potential.parameters)},
            "N": domain.radius, "center": list(domain.center), "energies": energies, "accepts": accepts,
            "checksums": persist.checksums[: len(collected)], "state_checksums": persist.state_checksums,
        })

    try:
        for t in range(t0, total):
            if algo == "heat-bath":
                heat_bath_batch(state, potential, stream, t, reps, m, config.conditional)
                a = np.ones(R, dtype=bool)
            elif algo == "langevin":
                n = state.shape[1] - 2
                noise = stream.normals(reps, t, n * n).reshape(R, n, n)
                _langevin_batch(state, potential, config.step_size, noise, m)
                a = np.ones(R, dtype=bool)
            elif algo == "mala":
                a = _mala_batch(state, potential, config.step_size, stream, t, reps, m)
            elif algo == "fourier-hmc":
                # trajectory length drawn per sweep, shared by replicas (keyed, so reproducible)
                uj = KeyedStream(config.seed, "hmc-jitter").uniforms([0], t, 1)[0, 0]
                angle = 0.5 * math.pi * (1.0 + config.hmc_jitter * (2.0 * uj - 1.0))
                a = _hmc_batch(state, potential, angle, config.hmc_steps, stream, t, reps, m, cref)
            else:
                state = _exact_batch(mean, stream, t, reps, m)
                a = np.ones(R, dtype=bool)
            if t >= burn and (t - burn + 1) % config.thinning_sweeps == 0:
                e = energy(state, potential, m)
                take = min(R, config.samples - len(collected)) if keep else R
                batch = state[:take].copy() if keep else state
                if keep:
                    for v in batch:
                        idx = len(collected)
                        if persist is not None:
                            persist.snapshot(idx, domain, v)
                        collected.append(v)
                if observe is not None:
                    obs.append(observe(state.copy()))
                energies.extend(e[:take].tolist())
                accepts.append(float(a.mean()))
                if persist is not None and checkpoint_every and ((t - burn + 1) // config.thinning_sweeps) % checkpoint_every == 0:
                    manifest("running", t + 1)
            elif algo in ("mala", "fourier-hmc"):
                accepts.append(float(a.mean()))
            if progress is not None:
                progress(t + 1, total)
    except ChainAbort as exc:
        ens = Ensemble(config, domain, np.array(collected) if collected else None,
                       {"aborted": True, "message": str(exc)}, obs)
        manifest("aborted", t)
        exc.ensemble = ens
        raise

    vals = np.array(collected[: config.samples]) if keep and collected else None
    diag = {"energy": np.asarray(energies[: config.samples]), "acceptance": float(np.mean(accepts)) if accepts else 1.0,
            "burn_in": burn, "sweeps": total}
    if vals is not None and algo != "exact-gaussian" and vals.shape[0] >= 40:
        c = domain.index(domain.center)
        # chains are interleaved by replica; test each observable on the time-ordered replica means
        n_t = vals.shape[0] // R
        if n_t >= 40:
            en = diag["energy"][: n_t * R].reshape(n_t, R).mean(axis=1)
            ph = vals[: n_t * R, c[0], c[1]].reshape(n_t, R).mean(axis=1)
            zs = (geweke_z(en), geweke_z(ph))
            diag["geweke_z"] = zs
            diag["stationary"] = bool(max(abs(z) for z in zs) < 4.0)
    ens = Ensemble(config, domain, vals, diag, obs)
    manifest("complete", total)
    return ens


# --- Langevin discretisation bias -------------------------------------------

def em_stationary_variance(domain: Domain, dt: float, site=(0, 0), edge_multiplicity: int = 2) -> float:
    """Stationary ``Var phi(site)`` of the Euler-Maruyama chain for quadratic V, zero boundary.

    Each sine mode with rate ``lam = m mu`` is an AR(1) with variance
    ``1 / (lam (1 - dt lam / 2))``.
    """
    R = domain.radius
    n = 2 * R - 1
    lam = edge_multiplicity * harmonic.laplacian_eigenvalues(R)
    e = np.zeros((n, n))
    i, j = domain.index(site)
    e[i - 1, j - 1] = 1.0
    v2 = harmonic.dst2(e) ** 2
    return float(np.sum(v2 / (lam * (1.0 - 0.5 * dt * lam))))


def langevin_variance_bias(domain: Domain, potential: Potential, dt: float, steps: int, seed: int,
                           replicas: int = 64, site=(0, 0), burn_time: float = 20.0,
                           edge_multiplicity: int = 2):
    """Bias of ``Var phi(site)`` under the Euler chain, measured against a coupled exact chain.

    Alongside the Euler chain (``langevin_step`` kernel) runs an exact
    Ornstein-Uhlenbeck chain in the sine basis of the box, driven by the same
    Brownian increments (plus the independent part the Euler step does not
    see).  Only valid for quadratic V, where the exact chain is stationary for
    the target.  Returns ``(bias, stderr, var_euler, var_exact)``.
    """
    if potential.id != "quadratic":
        raise ValueError("coupled bias estimator needs quadratic V")
    check_langevin_step(dt, potential.c_plus, edge_multiplicity)
    m = edge_multiplicity
    R = domain.radius
    n = 2 * R - 1
    lam = m * harmonic.laplacian_eigenvalues(R)
    decay = np.exp(-lam * dt)
    beta = math.sqrt(2.0) * (1.0 - decay) / (lam * math.sqrt(dt))  # coefficient on the Euler normal
    resid = np.sqrt(np.maximum((1.0 - decay**2) / lam - beta**2, 0.0))
    reps = np.arange(replicas)
    stream = KeyedStream(seed, "langevin-bias", "euler")
    extra = KeyedStream(seed, "langevin-bias", "residual")
    init = KeyedStream(seed, "langevin-bias", "init")
    start = _exact_batch(np.zeros(domain.shape), init, 0, reps, m)
    euler = start.copy()
    exact_hat = harmonic.dst2(start[:, 1:-1, 1:-1])
    i, j = domain.index(site)
    burn = int(math.ceil(burn_time / dt))
    e_site = np.zeros((n, n))
    e_site[i - 1, j - 1] = 1.0
    vec = harmonic.dst2(e_site)  # value at site = sum(vec * hat)
    se, sx = [], []
    for t in range(burn + steps):
        xi = stream.normals(reps, t, n * n).reshape(replicas, n, n)
        zeta = extra.normals(reps, t, n * n).reshape(replicas, n, n)
        _langevin_batch(euler, potential, dt, xi, m)
        exact_hat = decay * exact_hat + beta * harmonic.dst2(xi) + resid * harmonic.dst2(zeta)
        if t >= burn:
            se.append(euler[:, i, j].copy())
            sx.append(np.einsum("rij,ij->r", exact_hat, vec))
    se = np.array(se)
    sx = np.array(sx)
    diff = se**2 - sx**2  # zero-mean fields: second moments are the variances
    cell = diff.mean(axis=0)  # replicas are independent
    bias = float(cell.mean())
    err = float(cell.std(ddof=1) / math.sqrt(cell.size))
    return bias, err, float(np.mean(se**2)), float(np.mean(sx**2))
