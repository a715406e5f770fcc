"""Magnetic fields, trapping potentials, and trap characterization.

Geometry conventions
--------------------
A two-wire guide is described in a local right-handed frame (ex, ey, ez):
ez is the wire/current direction, ey the separation axis (wires sit at
y = +-d/2), and ex = ey x ez. Between the wires the field is a 2-D
quadrupole; to lowest order

    B(x, y) = Bp * (y ex + x ey),    Bp = 4*mu0*I / (pi*d^2)

and the exact superposition of the two line currents is used everywhere a
saddle point or an escape path matters.

The storage ring is modeled as two coaxial circular wire loops of radius R
whose planes sit at +-d/2 along the ring normal. The fast "ideal" ring field
wraps the exact two-wire cross-section field around the torus (curvature
corrections of order d/R are neglected); the Biot-Savart path in
``atomring.biotsavart`` is the reference for field-level validation.

All field sources accept points of shape (3,) or (N, 3) and an optional time
(time enters only through current scaling by a schedule). SI units throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .constants import DEFAULT_CONSTANTS, PhysicalConstants
from .errors import GeometryError, InvalidInputError, NumericError

# Regularization floor for |B| when forming gradients of the norm. The conical
# potential is non-differentiable on the zero line; below this field the force
# is evaluated from sqrt(|B|^2 + B_REG^2). Physics near the zero is owned by
# the spin-flip loss model, not the classical force.
B_REG = 1e-10


def _as_points(p) -> tuple[np.ndarray, bool]:
    pts = np.asarray(p, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != 3:
        raise InvalidInputError(f"positions must have 3 components, got shape {pts.shape}")
    return pts, single


def orthobasis(n) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic pair of unit vectors orthogonal to n (right-handed with n)."""
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    seed = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = seed - n * (seed @ n)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2


# ---------------------------------------------------------------------------
# geometry types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearTaper:
    """Linear variation of the wire spacing along the guide axis.

    d(z) = d at z >= z_wide ... shrinking linearly to d_narrow at z_narrow,
    clamped outside [z_narrow, z_wide]. z is the local axis coordinate.
    """

    z_wide: float
    d_wide: float
    z_narrow: float
    d_narrow: float

    def spacing(self, z):
        z = np.asarray(z, dtype=float)
        f = np.clip((z - self.z_narrow) / (self.z_wide - self.z_narrow), 0.0, 1.0)
        return self.d_narrow + f * (self.d_wide - self.d_narrow)

    def slope(self, z):
        z = np.asarray(z, dtype=float)
        inside = (z - self.z_narrow) * (z - self.z_wide) < 0.0
        s = (self.d_wide - self.d_narrow) / (self.z_wide - self.z_narrow)
        return np.where(inside, s, 0.0)


@dataclass(frozen=True)
class GuideGeometry:
    """Two-wire guide: separation d, current I, axis line, separation axis."""

    separation: float = 840e-6
    current: float = 8.0
    anchor: tuple[float, float, float] = (0.0, 0.0, 0.0)
    axis: tuple[float, float, float] = (0.0, 0.0, -1.0)
    separation_axis: tuple[float, float, float] = (0.0, 1.0, 0.0)
    taper: LinearTaper | None = None

    def __post_init__(self):
        if not self.separation > 0:
            raise InvalidInputError("wire separation must be positive")
        if self.current < 0:
            raise InvalidInputError("current must be non-negative")
        ez = np.asarray(self.axis, float)
        ey = np.asarray(self.separation_axis, float)
        if abs(np.linalg.norm(ez) - 1) > 1e-9 or abs(np.linalg.norm(ey) - 1) > 1e-9:
            raise InvalidInputError("axis and separation_axis must be unit vectors")
        if abs(ez @ ey) > 1e-9:
            raise InvalidInputError("axis and separation_axis must be orthogonal")

    def frame(self) -> np.ndarray:
        """Rows are (ex, ey, ez) in world coordinates."""
        ez = np.asarray(self.axis, float)
        ey = np.asarray(self.separation_axis, float)
        ex = np.cross(ey, ez)
        return np.stack([ex, ey, ez])

    def spacing_at(self, z):
        if self.taper is None:
            return np.broadcast_to(self.separation, np.shape(z)).copy() if np.ndim(z) else self.separation
        return self.taper.spacing(z)


@dataclass(frozen=True)
class JunctionSpec:
    """Current-feed imperfection: a smooth bump multiplying |B| near phi_j.

    ripple is the fractional amplitude, extent the arc length over which the
    raised-cosine bump acts (full width along the circumference).
    """

    ripple: float = 0.2
    extent: float = 250e-6
    azimuth: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.ripple < 1.0):
            raise InvalidInputError("junction ripple must be in [0, 1)")
        if not self.extent > 0:
            raise InvalidInputError("junction extent must be positive")


@dataclass(frozen=True)
class RingGeometry:
    """Storage ring: two coaxial wire loops of radius R at +-d/2 along the normal."""

    radius: float = 0.01
    separation: float = 840e-6
    current: float = 8.0
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    normal: tuple[float, float, float] = (0.0, 1.0, 0.0)
    in_plane: tuple[float, float, float] = (1.0, 0.0, 0.0)
    junction: JunctionSpec | None = None

    def __post_init__(self):
        if not self.radius > self.separation:
            raise InvalidInputError("ring radius must exceed the wire separation")
        if self.current < 0:
            raise InvalidInputError("current must be non-negative")
        n = np.asarray(self.normal, float)
        e1 = np.asarray(self.in_plane, float)
        if abs(np.linalg.norm(n) - 1) > 1e-9 or abs(np.linalg.norm(e1) - 1) > 1e-9:
            raise InvalidInputError("normal and in_plane must be unit vectors")
        if abs(n @ e1) > 1e-9:
            raise InvalidInputError("normal and in_plane must be orthogonal")

    @classmethod
    def vertical(cls, **kw) -> "RingGeometry":
        """Ring standing in the x-z plane (normal horizontal); gravity is in-plane.

        The frame (e1=x, e2=z) makes a downward-moving atom at azimuth pi
        orbit toward increasing azimuth, with the ring current co-directed
        with a guide feeding tangentially there.
        """
        kw.setdefault("normal", (0.0, -1.0, 0.0))
        kw.setdefault("in_plane", (1.0, 0.0, 0.0))
        return cls(**kw)

    @classmethod
    def horizontal(cls, **kw) -> "RingGeometry":
        """Ring lying in the x-y plane (normal vertical)."""
        kw.setdefault("normal", (0.0, 0.0, 1.0))
        kw.setdefault("in_plane", (1.0, 0.0, 0.0))
        return cls(**kw)

    def frame(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = np.asarray(self.normal, float)
        e1 = np.asarray(self.in_plane, float)
        e2 = np.cross(n, e1)
        return e1, e2, n

    def point_at(self, phi: float, radial: float = 0.0, axial: float = 0.0) -> np.ndarray:
        """World point at azimuth phi, offset radially/axially from the zero circle."""
        e1, e2, n = self.frame()
        rho = self.radius + radial
        return np.asarray(self.center) + rho * (math.cos(phi) * e1 + math.sin(phi) * e2) + axial * n

    def tangent_at(self, phi: float) -> np.ndarray:
        e1, e2, n = self.frame()
        return -math.sin(phi) * e1 + math.cos(phi) * e2


# ---------------------------------------------------------------------------
# local two-wire field (exact and lowest-order), vectorized
# ---------------------------------------------------------------------------

def two_wire_local(x, y, half_sep, k):
    """Exact field of two parallel line currents at y=+-half_sep, along +z.

    k = mu0*I/(2*pi). Returns (Bx, By) in the local transverse plane.
    """
    ym, yp = y - half_sep, y + half_sep
    r1sq = x * x + ym * ym
    r2sq = x * x + yp * yp
    bx = -k * (ym / r1sq + yp / r2sq)
    by = k * (x / r1sq + x / r2sq)
    return bx, by


def two_wire_local_jac(x, y, half_sep, k):
    """Transverse Jacobian (dBx/dx, dBx/dy, dBy/dx, dBy/dy) of two_wire_local."""
    ym, yp = y - half_sep, y + half_sep
    r1sq = x * x + ym * ym
    r2sq = x * x + yp * yp
    r1q, r2q = r1sq * r1sq, r2sq * r2sq
    bxx = 2.0 * k * x * (ym / r1q + yp / r2q)
    bxy = -k * ((x * x - ym * ym) / r1q + (x * x - yp * yp) / r2q)
    return bxx, bxy, bxy, -bxx


def two_wire_local_dh(x, y, half_sep, k):
    """(dBx/dh, dBy/dh): sensitivity to the half-separation h (for tapers)."""
    ym, yp = y - half_sep, y + half_sep
    r1sq = x * x + ym * ym
    r2sq = x * x + yp * yp
    r1q, r2q = r1sq * r1sq, r2sq * r2sq
    dbx = -k * ((-r1sq + 2.0 * ym * ym) / r1q + (r2sq - 2.0 * yp * yp) / r2q)
    dby = k * x * (2.0 * ym / r1q - 2.0 * yp / r2q)
    return dbx, dby


def quad_gradient(current: float, separation: float, mu0: float = DEFAULT_CONSTANTS.mu0) -> float:
    """Lowest-order field gradient Bp = 4*mu0*I/(pi*d^2) of a two-wire guide."""
    return 4.0 * mu0 * current / (math.pi * separation * separation)


def saddle_field_ideal(current: float, separation: float, mu0: float = DEFAULT_CONSTANTS.mu0) -> float:
    """|B| at the escape saddle of an ideal two-wire guide: mu0*I/(pi*d)."""
    return mu0 * current / (math.pi * separation)


# ---------------------------------------------------------------------------
# field sources
# ---------------------------------------------------------------------------

class FieldSource:
    """Common interface: b_field, jacobian, norm, grad_norm; SI, time in s."""

    def b_field(self, p, t: float = 0.0) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, p, t: float = 0.0) -> np.ndarray:
        raise NotImplementedError

    def norm(self, p, t: float = 0.0):
        b = self.b_field(p, t)
        return np.linalg.norm(b, axis=-1)

    def grad_norm(self, p, t: float = 0.0, b_reg: float = B_REG) -> np.ndarray:
        """Gradient of |B|, regularized to sqrt(|B|^2 + b_reg^2) near zeros."""
        b = np.atleast_2d(self.b_field(p, t))
        jac = self.jacobian(p, t).reshape(b.shape[0], 3, 3)
        nrm = np.sqrt(np.einsum("ij,ij->i", b, b) + b_reg * b_reg)
        g = np.einsum("ikj,ik->ij", jac, b) / nrm[:, None]
        return g[0] if np.asarray(p).ndim == 1 else g


class QuadrupoleGuideField(FieldSource):
    """Lowest-order two-wire guide field: B = Bp(z) * (y ex + x ey)."""

    def __init__(self, guide: GuideGeometry, constants: PhysicalConstants = DEFAULT_CONSTANTS):
        self.guide = guide
        self.constants = constants
        self._rot = guide.frame()          # rows ex, ey, ez
        self._anchor = np.asarray(guide.anchor, float)

    def _local(self, pts):
        return (pts - self._anchor) @ self._rot.T

    def _gradient_at(self, z):
        d = self.guide.spacing_at(z)
        return 4.0 * self.constants.mu0 * self.guide.current / (math.pi * d * d), d

    def b_field(self, p, t: float = 0.0):
        pts, single = _as_points(p)
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("non-finite position passed to field evaluation")
        loc = self._local(pts)
        bp, _ = self._gradient_at(loc[:, 2])
        bl = np.stack([bp * loc[:, 1], bp * loc[:, 0], np.zeros(len(pts))], axis=1)
        b = bl @ self._rot
        return b[0] if single else b

    def jacobian(self, p, t: float = 0.0):
        pts, single = _as_points(p)
        loc = self._local(pts)
        z = loc[:, 2]
        d = np.asarray(self.guide.spacing_at(z), dtype=float)
        bp = 4.0 * self.constants.mu0 * self.guide.current / (math.pi * d * d)
        if self.guide.taper is None:
            dbp = np.zeros_like(bp)
        else:
            dbp = bp * (-2.0 * self.guide.taper.slope(z) / d)
        n = len(pts)
        jl = np.zeros((n, 3, 3))
        jl[:, 0, 1] = bp
        jl[:, 1, 0] = bp
        jl[:, 0, 2] = loc[:, 1] * dbp
        jl[:, 1, 2] = loc[:, 0] * dbp
        j = np.einsum("ai,nij,bj->nab", self._rot.T, jl, self._rot.T)
        return j[0] if single else j


class TwoWireGuideField(FieldSource):
    """Exact superposition of the two line currents of a guide (with taper)."""

    def __init__(self, guide: GuideGeometry, constants: PhysicalConstants = DEFAULT_CONSTANTS):
        self.guide = guide
        self.constants = constants
        self._rot = guide.frame()
        self._anchor = np.asarray(guide.anchor, float)

    @property
    def _k(self):
        return self.constants.mu0 * self.guide.current / (2.0 * math.pi)

    def _local(self, pts):
        return (pts - self._anchor) @ self._rot.T

    def b_field(self, p, t: float = 0.0):
        pts, single = _as_points(p)
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("non-finite position passed to field evaluation")
        loc = self._local(pts)
        h = np.asarray(self.guide.spacing_at(loc[:, 2]), dtype=float) / 2.0
        bx, by = two_wire_local(loc[:, 0], loc[:, 1], h, self._k)
        bl = np.stack([bx, by, np.zeros(len(pts))], axis=1)
        b = bl @ self._rot
        return b[0] if single else b

    def jacobian(self, p, t: float = 0.0):
        pts, single = _as_points(p)
        loc = self._local(pts)
        x, y, z = loc[:, 0], loc[:, 1], loc[:, 2]
        h = np.asarray(self.guide.spacing_at(z), dtype=float) / 2.0
        bxx, bxy, byx, byy = two_wire_local_jac(x, y, h, self._k)
        n = len(pts)
        jl = np.zeros((n, 3, 3))
        jl[:, 0, 0] = bxx
        jl[:, 0, 1] = bxy
        jl[:, 1, 0] = byx
        jl[:, 1, 1] = byy
        if self.guide.taper is not None:
            hz = self.guide.taper.slope(z) / 2.0
            dbx, dby = two_wire_local_dh(x, y, h, self._k)
            jl[:, 0, 2] = dbx * hz
            jl[:, 1, 2] = dby * hz
        j = np.einsum("ai,nij,bj->nab", self._rot.T, jl, self._rot.T)
        return j[0] if single else j


class RingField(FieldSource):
    """Ideal storage-ring field: exact two-wire cross-section wrapped on the torus.

    Valid near the torus (|rho - R|, |w| << R); the region near the ring axis
    is clamped to avoid the coordinate singularity and is not meaningful.
    Curvature corrections O(d/R) are neglected; use the Biot-Savart source as
    the reference where they matter.
    """

    def __init__(self, ring: RingGeometry, constants: PhysicalConstants = DEFAULT_CONSTANTS):
        self.ring = ring
        self.constants = constants
        self._e1, self._e2, self._n = ring.frame()
        self._center = np.asarray(ring.center, float)

    @property
    def _k(self):
        return self.constants.mu0 * self.ring.current / (2.0 * math.pi)

    def _toroidal(self, pts):
        rel = pts - self._center
        w = rel @ self._n
        in_plane = rel - w[:, None] * self._n
        rho = np.linalg.norm(in_plane, axis=1)
        rho_safe = np.maximum(rho, 1e-6 * self.ring.radius)
        rho_hat = in_plane / rho_safe[:, None]
        phi = np.arctan2(in_plane @ self._e2, in_plane @ self._e1)
        return w, rho_safe, rho_hat, phi

    def _bump(self, phi):
        j = self.ring.junction
        if j is None:
            return np.ones_like(phi), np.zeros_like(phi)
        half_w = j.extent / (2.0 * self.ring.radius)
        dphi = np.mod(phi - j.azimuth + math.pi, 2.0 * math.pi) - math.pi
        inside = np.abs(dphi) < half_w
        arg = math.pi * dphi / half_w
        wb = np.where(inside, 0.5 * (1.0 + np.cos(arg)), 0.0)
        dwb = np.where(inside, -0.5 * math.pi / half_w * np.sin(arg), 0.0)
        return 1.0 + j.ripple * wb, j.ripple * dwb

    def b_field(self, p, t: float = 0.0):
        pts, single = _as_points(p)
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("non-finite position passed to field evaluation")
        w, rho, rho_hat, phi = self._toroidal(pts)
        u = rho - self.ring.radius
        bx, by = two_wire_local(-u, w, self.ring.separation / 2.0, self._k)
        mult, _ = self._bump(phi)
        b = (-bx[:, None] * rho_hat + by[:, None] * self._n) * mult[:, None]
        return b[0] if single else b

    def jacobian(self, p, t: float = 0.0):
        pts, single = _as_points(p)
        w, rho, rho_hat, phi = self._toroidal(pts)
        u = rho - self.ring.radius
        h = self.ring.separation / 2.0
        xl, yl = -u, w
        bx, by = two_wire_local(xl, yl, h, self._k)
        bxx, bxy, byx, byy = two_wire_local_jac(xl, yl, h, self._k)
        phi_hat = np.cross(self._n, rho_hat)
        n = len(pts)
        rr = rho_hat[:, :, None] * rho_hat[:, None, :]
        rn = rho_hat[:, :, None] * self._n[None, None, :]
        nr = self._n[:, None][None] * rho_hat[:, None, :]
        nn = (self._n[:, None] * self._n[None, :])[None]
        pp = phi_hat[:, :, None] * phi_hat[:, None, :]
        j = (bxx[:, None, None] * rr
             - bxy[:, None, None] * rn
             - byx[:, None, None] * nr
             + byy[:, None, None] * nn
             - (bx / rho)[:, None, None] * pp)
        mult, dmult = self._bump(phi)
        if self.ring.junction is not None:
            b = -bx[:, None] * rho_hat + by[:, None] * self._n
            j = mult[:, None, None] * j + \
                (dmult / rho)[:, None, None] * b[:, :, None] * phi_hat[:, None, :]
        return (j[0] if single else j).reshape((3, 3) if single else (n, 3, 3))


class DrivenField(FieldSource):
    """Scales a base source by I(t)/I_nominal from a schedule channel."""

    def __init__(self, base: FieldSource, schedule, channel: str):
        self.base = base
        self.schedule = schedule
        self.channel = channel
        geom = base.ring if isinstance(base, RingField) else base.guide
        self._i_nom = geom.current
        if self._i_nom <= 0:
            raise InvalidInputError("driven field needs a positive nominal current")

    def _scale(self, t: float) -> float:
        return self.schedule.current(self.channel, t) / self._i_nom

    def b_field(self, p, t: float = 0.0):
        return self.base.b_field(p) * self._scale(t)

    def jacobian(self, p, t: float = 0.0):
        return self.base.jacobian(p) * self._scale(t)


class CompositeField(FieldSource):
    """Vector sum of several field sources."""

    def __init__(self, sources):
        self.sources = list(sources)

    def b_field(self, p, t: float = 0.0):
        if not self.sources:
            pts, single = _as_points(p)
            z = np.zeros_like(pts)
            return z[0] if single else z
        total = self.sources[0].b_field(p, t)
        for s in self.sources[1:]:
            total = total + s.b_field(p, t)
        return total

    def jacobian(self, p, t: float = 0.0):
        total = self.sources[0].jacobian(p, t)
        for s in self.sources[1:]:
            total = total + s.jacobian(p, t)
        return total


class UniformField(FieldSource):
    """Constant field; mainly a spin-precession test fixture."""

    def __init__(self, b):
        self._b = np.asarray(b, float)

    def b_field(self, p, t: float = 0.0):
        pts, single = _as_points(p)
        b = np.broadcast_to(self._b, pts.shape).copy()
        return b[0] if single else b

    def jacobian(self, p, t: float = 0.0):
        pts, single = _as_points(p)
        j = np.zeros((len(pts), 3, 3))
        return j[0] if single else j


# ---------------------------------------------------------------------------
# spec-level operations
# ---------------------------------------------------------------------------

def field_quadrupole(p, guide: GuideGeometry,
                     constants: PhysicalConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    """Lowest-order guide field at p (world coordinates), in tesla."""
    return QuadrupoleGuideField(guide, constants).b_field(p)


def total_potential(p, field_source, constants: PhysicalConstants = DEFAULT_CONSTANTS,
                    t: float = 0.0, up=(0.0, 0.0, 1.0), height_ref: float = 0.0):
    """Trapping plus gravitational potential energy, in joules.

    U(p) = mu_m * |B(p)| + m * g * h(p), with h the height along ``up``
    measured from ``height_ref``.
    """
    pts, single = _as_points(p)
    b = np.atleast_2d(field_source.b_field(pts, t))
    up_v = np.asarray(up, float)
    up_v = up_v / np.linalg.norm(up_v)
    height = pts @ up_v - height_ref
    u = constants.mu_m * np.linalg.norm(b, axis=-1) + constants.mass * constants.g_grav * height
    return float(u[0]) if single else u


@dataclass(frozen=True)
class TrapCharacterization:
    """Static properties of a two-wire trapping cross-section."""

    gradient_center: float          # |grad B| on axis, T/m
    saddle_point: tuple[float, float, float]
    saddle_field: float             # T
    depth_J: float                  # mu_m * saddle_field
    depth_K: float
    effective_frequency: float      # Hz, 1-D linear-well definition
    loss_radius: float              # m
    kappa: float
    mu_m: float

    def __post_init__(self):
        if abs(self.depth_J - self.mu_m * self.saddle_field) > 1e-12 * self.depth_J:
            raise ValueError("depth must equal mu_m * saddle_field")


def characterize_trap(geometry, constants: PhysicalConstants = DEFAULT_CONSTANTS,
                      thermal_energy: float = DEFAULT_CONSTANTS.kB * 57e-6,
                      kappa: float = 1.0) -> TrapCharacterization:
    """Numeric trap characterization of a guide or ring cross-section.

    The gradient comes from finite offsets of |B| around the zero, the saddle
    from a bounded 1-D maximization of |B| along the escape path (the bisector
    of the wire pair), and the derived quantities use:

      depth = mu_m * B_saddle
      f_eff = mu_m * Bp / (4 * sqrt(2 * m * E_th))   (1-D linear-well period)
      b0    = sqrt(kappa * hbar * v_bar / (mu_m * Bp)),  v_bar = sqrt(E_th/m)

    E_th is the transverse thermal energy scale (joules). kappa absorbs the
    model prefactor of the spin-flip loss radius and defaults to 1.
    """
    if thermal_energy <= 0:
        raise InvalidInputError("thermal energy scale must be positive")
    if isinstance(geometry, RingGeometry):
        current, sep = geometry.current, geometry.separation
        origin = geometry.point_at(0.0)
        e1, _, n = geometry.frame()
        escape_dir = e1                      # radial escape in the ring plane
        trans_dir = n
        source = RingField(replace(geometry, junction=None), constants)
    elif isinstance(geometry, GuideGeometry):
        current, sep = geometry.current, geometry.spacing_at(0.0)
        origin = np.asarray(geometry.anchor, float)
        ex, ey, _ = geometry.frame()
        escape_dir = ex
        trans_dir = ey
        source = TwoWireGuideField(geometry, constants)
    else:
        raise InvalidInputError(f"cannot characterize geometry of type {type(geometry)!r}")

    if current <= 0:
        raise GeometryError("no trapping field at zero current")
    scale = saddle_field_ideal(current, sep, constants.mu0)
    if source.norm(origin) > 1e-6 * scale:
        raise GeometryError("no field zero between the wires for this geometry")

    delta = 1e-3 * sep
    probes = origin + delta * np.stack([escape_dir, -escape_dir, trans_dir, -trans_dir])
    grads = source.norm(probes) / delta
    gradient = float(np.mean(grads))
    if gradient <= 0 or not math.isfinite(gradient):
        raise GeometryError("field magnitude does not grow away from the zero")

    res = minimize_scalar(lambda s: -source.norm(origin + s * escape_dir),
                          bounds=(1e-3 * sep, 5.0 * sep), method="bounded",
                          options={"xatol": 1e-12})
    if not res.success:
        raise NumericError(f"saddle search failed to converge: {res.message}")
    saddle_s = float(res.x)
    saddle_field = float(-res.fun)
    if not (0.0 < saddle_field < 10.0 * scale):
        raise NumericError(f"saddle field {saddle_field} outside plausible range")

    depth = constants.mu_m * saddle_field
    v_bar = math.sqrt(thermal_energy / constants.mass)
    f_eff = constants.mu_m * gradient / (4.0 * math.sqrt(2.0 * constants.mass * thermal_energy))
    b0 = math.sqrt(kappa * constants.hbar * v_bar / (constants.mu_m * gradient))
    saddle_point = tuple(origin + saddle_s * escape_dir)
    return TrapCharacterization(
        gradient_center=gradient,
        saddle_point=saddle_point,
        saddle_field=saddle_field,
        depth_J=depth,
        depth_K=depth / constants.kB,
        effective_frequency=f_eff,
        loss_radius=b0,
        kappa=kappa,
        mu_m=constants.mu_m,
    )


FIELD_MAP_HEADER = "x_m,y_m,z_m,Bx_T,By_T,Bz_T,Bnorm_T"


def export_field_map(field_source, xs, ys, zs, path, metadata: dict | None = None,
                     t: float = 0.0) -> int:
    """Write a row-major grid field map as CSV; returns the number of data rows.

    Metadata key=value pairs go on a single leading comment line so the file
    still has exactly one header row before the data.
    """
    xs, ys, zs = (np.atleast_1d(np.asarray(a, float)) for a in (xs, ys, zs))
    grid = np.array([(x, y, z) for x in xs for y in ys for z in zs])
    b = np.atleast_2d(field_source.b_field(grid, t))
    norm = np.linalg.norm(b, axis=1)
    with open(path, "w") as fh:
        if metadata:
            pairs = " ".join(f"{k}={v}" for k, v in metadata.items())
            fh.write(f"# {pairs}\n")
        fh.write(FIELD_MAP_HEADER + "\n")
        for (x, y, z), (bx, by, bz), bn in zip(grid, b, norm):
            fh.write(f"{x:.9e},{y:.9e},{z:.9e},{bx:.9e},{by:.9e},{bz:.9e},{bn:.9e}\n")
    return len(grid)
