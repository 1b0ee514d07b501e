"""Lattice boxes, their outer boundaries, and fields stored on them.

Array layout used everywhere: a box of radius ``R`` centred at ``c`` is held in
a ``(2R+1, 2R+1)`` array indexed ``[x2 - c2 + R, x1 - c1 + R]``.  Interior
sites fill ``[1:-1, 1:-1]``; the outer boundary is the four edges without the
corners, which are not adjacent to the box and are kept at zero.
Site order is row-major over ``(x2, x1)``.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from pathlib import Path

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Domain:
    radius: int
    center: tuple[int, int] = (0, 0)
    kind: str = "box"
    parent: "Domain | None" = dc_field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if int(self.radius) < 1:
            raise GeometryError(f"radius must be >= 1, got {self.radius}")
        object.__setattr__(self, "center", (int(self.center[0]), int(self.center[1])))

    @property
    def shape(self) -> tuple[int, int]:
        n = 2 * self.radius + 1
        return (n, n)

    @cached_property
    def interior_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[1:-1, 1:-1] = True
        return m

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[0, 1:-1] = m[-1, 1:-1] = m[1:-1, 0] = m[1:-1, -1] = True
        return m

    @cached_property
    def site_mask(self) -> np.ndarray:
        return self.interior_mask | self.boundary_mask

    def _coords(self, mask: np.ndarray) -> np.ndarray:
        rows, cols = np.nonzero(mask)  # row-major: x2 slow, x1 fast
        R = self.radius
        return np.stack([cols - R + self.center[0], rows - R + self.center[1]], axis=1)

    @cached_property
    def interior(self) -> np.ndarray:
        """Interior sites as an ``(n, 2)`` integer array of ``(x1, x2)``."""
        return self._coords(self.interior_mask)

    @cached_property
    def outer_boundary(self) -> np.ndarray:
        return self._coords(self.boundary_mask)

    @cached_property
    def sites(self) -> np.ndarray:
        return self._coords(self.site_mask)

    def index(self, site) -> tuple[int, int]:
        """Array index ``(row, col)`` of a site given in lattice coordinates."""
        x1, x2 = int(site[0]), int(site[1])
        R = self.radius
        return (x2 - self.center[1] + R, x1 - self.center[0] + R)

    def linf(self, site) -> int:
        return max(abs(int(site[0]) - self.center[0]), abs(int(site[1]) - self.center[1]))

    def contains_interior(self, site) -> bool:
        return self.linf(site) < self.radius

    def contains(self, site) -> bool:
        """Membership in interior union outer boundary."""
        d1 = abs(int(site[0]) - self.center[0])
        d2 = abs(int(site[1]) - self.center[1])
        R = self.radius
        return max(d1, d2) < R or (max(d1, d2) == R and min(d1, d2) < R)

    def dist_to_boundary(self, site) -> int:
        """Distance from an interior site to the outer boundary (``R - |x-c|_inf``)."""
        return self.radius - self.linf(site)


def make_box(N: int, center=(0, 0)) -> Domain:
    if int(N) != N or N < 1:
        raise GeometryError(f"box radius must be a positive integer, got {N}")
    return Domain(int(N), tuple(center))


def subbox(domain: Domain, x, r: int) -> Domain:
    """``Q_r(x)`` as a domain living in the parent's coordinates."""
    if r < 1:
        raise GeometryError("subbox radius must be >= 1")
    if domain.linf(x) + r > domain.radius:
        raise GeometryError(
            f"Q_{r}({tuple(int(v) for v in x)}) and its boundary do not fit in box of radius "
            f"{domain.radius} centred at {domain.center}"
        )
    if tuple(int(v) for v in x) == domain.center and r == domain.radius:
        return domain
    return Domain(int(r), (int(x[0]), int(x[1])), kind="subbox", parent=domain)


class Field:
    """Real values on ``interior ∪ outer boundary`` of a domain."""

    def __init__(self, domain: Domain, values: np.ndarray | None = None):
        self.domain = domain
        if values is None:
            values = np.zeros(domain.shape)
        values = np.asarray(values, dtype=float)
        if values.shape != domain.shape:
            raise ValueError(f"values shape {values.shape} does not match domain {domain.shape}")
        if not np.all(np.isfinite(values[domain.site_mask])):
            raise ValueError("field values must be finite")
        self.values = values

    @classmethod
    def from_site_values(cls, domain: Domain, vec) -> "Field":
        vals = np.zeros(domain.shape)
        vals[domain.site_mask] = np.asarray(vec, dtype=float)
        return cls(domain, vals)

    @classmethod
    def constant_boundary(cls, domain: Domain, c: float) -> "Field":
        vals = np.zeros(domain.shape)
        vals[domain.boundary_mask] = c
        return cls(domain, vals)

    @classmethod
    def from_function(cls, domain: Domain, f) -> "Field":
        """Field with ``values = f(x1, x2)`` on every site (interior and boundary)."""
        R = domain.radius
        g = np.arange(-R, R + 1)
        x2, x1 = np.meshgrid(g + domain.center[1], g + domain.center[0], indexing="ij")
        vals = np.asarray(f(x1, x2), dtype=float) * np.ones(domain.shape)
        vals[~domain.site_mask] = 0.0
        return cls(domain, vals)

    def site_values(self) -> np.ndarray:
        return self.values[self.domain.site_mask]

    def interior_values(self) -> np.ndarray:
        return self.values[1:-1, 1:-1]

    def boundary_values(self) -> np.ndarray:
        return self.values[self.domain.boundary_mask]

    def __getitem__(self, site) -> float:
        return float(self.values[self.domain.index(site)])

    def copy(self) -> "Field":
        return Field(self.domain, self.values.copy())

    def __add__(self, c: float) -> "Field":
        vals = self.values + c
        vals[~self.domain.site_mask] = 0.0
        return Field(self.domain, vals)

    def __repr__(self) -> str:
        return f"Field(radius={self.domain.radius}, center={self.domain.center})"


def oscillation(field: Field, sites) -> float:
    """max - min of the field over a non-empty set of sites."""
    sites = np.asarray(sites, dtype=int).reshape(-1, 2)
    if sites.shape[0] == 0:
        raise ValueError("oscillation of an empty site set")
    d = field.domain
    R = d.radius
    rows = sites[:, 1] - d.center[1] + R
    cols = sites[:, 0] - d.center[0] + R
    if rows.min() < 0 or cols.min() < 0 or rows.max() > 2 * R or cols.max() > 2 * R:
        raise GeometryError("sites outside the field's domain")
    if not np.all(d.site_mask[rows, cols]):
        raise GeometryError("sites outside the field's domain")
    v = field.values[rows, cols]
    return float(v.max() - v.min())


# --- binary snapshots --------------------------------------------------------

MAGIC = b"GLF1"
VERSION = 1
_HEADER = struct.Struct("<4sIIiiI")


def encode_snapshot(field: Field, potential_id: int = 0, params=(), seed: int = 0) -> bytes:
    d = field.domain
    params = np.asarray(params, dtype="<f8").ravel()
    lo, hi = seed & ((1 << 64) - 1), seed >> 64
    parts = [
        _HEADER.pack(MAGIC, VERSION, d.radius, d.center[0], d.center[1], int(potential_id)),
        struct.pack("<I", params.size),
        params.tobytes(),
        struct.pack("<QQ", lo, hi),
        np.ascontiguousarray(field.site_values(), dtype="<f8").tobytes(),
    ]
    return b"".join(parts)


def decode_snapshot(buf: bytes) -> tuple[Field, dict]:
    magic, version, N, c1, c2, pid = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ValueError("not a GLF1 snapshot")
    if version != VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    off = _HEADER.size
    (npar,) = struct.unpack_from("<I", buf, off)
    off += 4
    params = np.frombuffer(buf, dtype="<f8", count=npar, offset=off).copy()
    off += 8 * npar
    lo, hi = struct.unpack_from("<QQ", buf, off)
    off += 16
    domain = make_box(N, (c1, c2))
    n_sites = int(domain.site_mask.sum())
    vec = np.frombuffer(buf, dtype="<f8", count=n_sites, offset=off)
    if off + 8 * n_sites != len(buf):
        raise ValueError("snapshot length does not match header")
    meta = {"potential_id": pid, "params": params, "seed": lo | (hi << 64)}
    return Field.from_site_values(domain, vec), meta


def write_snapshot(path, field: Field, potential_id: int = 0, params=(), seed: int = 0) -> str:
    """Atomic write (temp file then rename); returns the SHA-256 of the bytes written."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    buf = encode_snapshot(field, potential_id, params, seed)
    tmp.write_bytes(buf)
    tmp.replace(path)
    return hashlib.sha256(buf).hexdigest()


def read_snapshot(path) -> tuple[Field, dict]:
    return decode_snapshot(Path(path).read_bytes())
