"""Exact magnetostatic fields of wire elements (lines, segments, arcs).

This is the validation path for the fast analytic sources in
``atomring.magnetics``: everything here is a superposition of closed-form
solutions, so divergence- and curl-free behavior (away from the conductors)
is inherited rather than approximated. Arcs are discretized into chained
straight segments; a Richardson check quantifies the discretization error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import DEFAULT_CONSTANTS, PhysicalConstants
from .errors import InvalidInputError, SingularityError
from .magnetics import FieldSource, JunctionSpec, RingGeometry, _as_points, orthobasis

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class LineWire:
    """Infinite straight wire through ``point`` along unit ``direction``."""

    point: tuple[float, float, float]
    direction: tuple[float, float, float]
    current: float

    def __post_init__(self):
        d = np.asarray(self.direction, float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise InvalidInputError("line direction must be a unit vector")


@dataclass(frozen=True)
class SegmentWire:
    """Straight segment from ``start`` to ``end`` carrying ``current``."""

    start: tuple[float, float, float]
    end: tuple[float, float, float]
    current: float

    def __post_init__(self):
        if np.allclose(self.start, self.end):
            raise InvalidInputError("segment endpoints must differ")


@dataclass(frozen=True)
class ArcWire:
    """Circular arc: center, unit normal, radius, start angle and span (rad).

    The arc lies in the plane orthogonal to ``normal``; angles are measured
    from a deterministic in-plane basis (``orthobasis(normal)``) unless an
    explicit ``in_plane`` reference is given. Positive span follows the
    right-hand rule about the normal.
    """

    center: tuple[float, float, float]
    normal: tuple[float, float, float]
    radius: float
    phi_start: float
    phi_span: float
    current: float
    in_plane: tuple[float, float, float] | None = None

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidInputError("arc radius must be positive")
        if not (0.0 < self.phi_span <= 2.0 * math.pi + 1e-12):
            raise InvalidInputError("arc span must lie in (0, 2*pi]")

    def polyline(self, n_segments: int) -> np.ndarray:
        """Vertices ((n+1), 3) of the chord discretization."""
        n = np.asarray(self.normal, float)
        n = n / np.linalg.norm(n)
        if self.in_plane is not None:
            e1 = np.asarray(self.in_plane, float)
            e1 = e1 - n * (e1 @ n)
            e1 /= np.linalg.norm(e1)
            e2 = np.cross(n, e1)
        else:
            e1, e2 = orthobasis(n)
        phi = self.phi_start + np.linspace(0.0, self.phi_span, n_segments + 1)
        pts = (np.asarray(self.center, float)[None, :]
               + self.radius * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2))
        return pts


WireElement = LineWire | SegmentWire | ArcWire


def _line_field(points, line: LineWire, mu0: float) -> np.ndarray:
    a = np.asarray(line.point, float)
    d = np.asarray(line.direction, float)
    rel = points - a
    along = rel @ d
    perp = rel - along[:, None] * d[None, :]
    rho2 = np.einsum("ij,ij->i", perp, perp)
    _check_distance(np.sqrt(rho2), scale=1.0)
    # B = mu0 I / (2 pi rho) * (d x rho_hat)  =  mu0 I / (2 pi rho^2) * (d x perp)
    pref = mu0 * line.current / (2.0 * math.pi)
    return pref * np.cross(np.broadcast_to(d, perp.shape), perp) / rho2[:, None]


def _segments_field(points, starts, ends, currents, mu0: float) -> np.ndarray:
    """Sum of closed-form segment fields; starts/ends (M,3), points (N,3)."""
    u = ends - starts                                  # (M,3)
    norm_u = np.linalg.norm(u, axis=1)
    total = np.zeros_like(points)
    # chunk over segments to bound memory at ~ (M_chunk x N x 3)
    chunk = max(1, int(4e6 // max(len(points), 1)))
    for lo in range(0, len(starts), chunk):
        hi = min(lo + chunk, len(starts))
        us = u[lo:hi]
        nu = norm_u[lo:hi]
        r1 = points[None, :, :] - starts[lo:hi, None, :]   # (m,N,3)
        r2 = points[None, :, :] - ends[lo:hi, None, :]
        n1 = np.linalg.norm(r1, axis=2)
        n2 = np.linalg.norm(r2, axis=2)
        c = np.cross(np.broadcast_to(us[:, None, :], r1.shape), r1)
        c2 = np.einsum("mnj,mnj->mn", c, c)
        # true point-to-segment distance (clamped projection) for the guard
        proj = np.clip(np.einsum("mj,mnj->mn", us, r1) / nu[:, None] ** 2, 0.0, 1.0)
        closest = starts[lo:hi, None, :] + proj[:, :, None] * us[:, None, :]
        seg_dist = np.linalg.norm(points[None, :, :] - closest, axis=2)
        _check_distance(seg_dist.min(axis=0), scale=nu.max())
        cos1 = np.einsum("mj,mnj->mn", us, r1) / (nu[:, None] * n1)
        cos2 = np.einsum("mj,mnj->mn", us, r2) / (nu[:, None] * n2)
        pref = (mu0 / (4.0 * math.pi)) * currents[lo:hi, None] * (cos1 - cos2) * nu[:, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            contrib = pref[:, :, None] * c / c2[:, :, None]
        contrib[c2 < (_EPS * nu[:, None] ** 2) ** 2] = 0.0   # on-axis extension: B = 0
        total += contrib.sum(axis=0)
    return total


def _check_distance(min_dist, scale: float):
    thresh = 10.0 * _EPS * max(scale, 1.0)
    if np.any(min_dist <= thresh):
        raise SingularityError(
            f"field evaluation within {thresh:.3e} m of a wire element")


def field_exact(p, elements, junction: RingGeometry | None = None,
                n_arc: int = 4096, constants: PhysicalConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    """Superposed field of wire elements at p; empty element list gives zero.

    ``n_arc`` is the number of chords for a full-circle arc (shorter arcs use
    proportionally fewer). If ``junction`` is given (a RingGeometry with a
    JunctionSpec), the field magnitude is modulated by the raised-cosine
    ripple bump of that ring.
    """
    pts, single = _as_points(p)
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("non-finite position passed to field evaluation")
    total = np.zeros_like(pts)
    seg_starts, seg_ends, seg_currents = [], [], []
    for el in elements:
        if isinstance(el, LineWire):
            total += _line_field(pts, el, constants.mu0)
        elif isinstance(el, SegmentWire):
            seg_starts.append(np.asarray(el.start, float))
            seg_ends.append(np.asarray(el.end, float))
            seg_currents.append(el.current)
        elif isinstance(el, ArcWire):
            n_seg = max(8, int(round(n_arc * el.phi_span / (2.0 * math.pi))))
            verts = el.polyline(n_seg)
            seg_starts.extend(verts[:-1])
            seg_ends.extend(verts[1:])
            seg_currents.extend([el.current] * n_seg)
        else:
            raise InvalidInputError(f"unknown wire element type {type(el)!r}")
    if seg_starts:
        total += _segments_field(pts, np.asarray(seg_starts), np.asarray(seg_ends),
                                 np.asarray(seg_currents), constants.mu0)
    if junction is not None and junction.junction is not None:
        total *= _junction_multiplier(pts, junction)[:, None]
    return total[0] if single else total


def _junction_multiplier(pts, ring: RingGeometry) -> np.ndarray:
    j: JunctionSpec = ring.junction
    e1, e2, n = ring.frame()
    rel = pts - np.asarray(ring.center, float)
    phi = np.arctan2(rel @ e2, rel @ e1)
    half_w = j.extent / (2.0 * ring.radius)
    dphi = np.mod(phi - j.azimuth + math.pi, 2.0 * math.pi) - math.pi
    wb = np.where(np.abs(dphi) < half_w, 0.5 * (1.0 + np.cos(math.pi * dphi / half_w)), 0.0)
    return 1.0 + j.ripple * wb


# ---------------------------------------------------------------------------
# element builders
# ---------------------------------------------------------------------------

def loop_elements(center, normal, radius: float, current: float) -> list[ArcWire]:
    """A single closed circular loop."""
    return [ArcWire(tuple(center), tuple(normal), radius, 0.0, 2.0 * math.pi, current)]


def ring_elements(ring: RingGeometry, feed_gap: bool = False,
                  feed_radius_factor: float = 3.0) -> list[ArcWire | SegmentWire]:
    """Both wire loops of a storage ring as exact elements.

    With ``feed_gap`` the loops are opened over the junction extent and closed
    through radial feed segments plus a far return arc, so the circuit remains
    closed (current-conserving) and the field stays exactly curl-free.
    """
    e1, e2, n = ring.frame()
    center = np.asarray(ring.center, float)
    els: list[ArcWire | SegmentWire] = []
    for sign in (+1.0, -1.0):
        c = center + sign * (ring.separation / 2.0) * n
        if not feed_gap:
            els.append(ArcWire(tuple(c), tuple(ring.normal), ring.radius, 0.0,
                               2.0 * math.pi, ring.current, in_plane=tuple(e1)))
            continue
        j = ring.junction or JunctionSpec()
        half_gap = j.extent / (2.0 * ring.radius)
        phi_a = j.azimuth + half_gap            # arc runs the long way round
        span = 2.0 * math.pi - 2.0 * half_gap
        els.append(ArcWire(tuple(c), tuple(ring.normal), ring.radius, phi_a, span,
                           ring.current, in_plane=tuple(e1)))
        r_far = feed_radius_factor * ring.radius
        phi_b = j.azimuth - half_gap
        p_in = c + ring.radius * (math.cos(phi_b) * e1 + math.sin(phi_b) * e2)
        p_in_far = c + r_far * (math.cos(phi_b) * e1 + math.sin(phi_b) * e2)
        p_out = c + ring.radius * (math.cos(phi_a) * e1 + math.sin(phi_a) * e2)
        p_out_far = c + r_far * (math.cos(phi_a) * e1 + math.sin(phi_a) * e2)
        els.append(SegmentWire(tuple(p_in), tuple(p_in_far), ring.current))
        els.append(ArcWire(tuple(c), tuple(ring.normal), r_far, phi_b,
                           2.0 * half_gap, -ring.current, in_plane=tuple(e1)))
        els.append(SegmentWire(tuple(p_out_far), tuple(p_out), ring.current))
    return els


class BiotSavartField(FieldSource):
    """FieldSource adapter over a list of wire elements (Jacobian by FD)."""

    def __init__(self, elements, junction: RingGeometry | None = None,
                 n_arc: int = 4096, constants: PhysicalConstants = DEFAULT_CONSTANTS,
                 fd_step: float = 1e-7):
        self.elements = list(elements)
        self.junction = junction
        self.n_arc = n_arc
        self.constants = constants
        self.fd_step = fd_step

    def b_field(self, p, t: float = 0.0):
        return field_exact(p, self.elements, junction=self.junction,
                           n_arc=self.n_arc, constants=self.constants)

    def jacobian(self, p, t: float = 0.0):
        pts, single = _as_points(p)
        h = self.fd_step
        j = np.empty((len(pts), 3, 3))
        for ax in range(3):
            dp = np.zeros(3)
            dp[ax] = h
            j[:, :, ax] = (np.atleast_2d(self.b_field(pts + dp))
                           - np.atleast_2d(self.b_field(pts - dp))) / (2.0 * h)
        return j[0] if single else j


def arc_convergence_check(elements, p, n_arc: int = 4096,
                          constants: PhysicalConstants = DEFAULT_CONSTANTS) -> dict:
    """Richardson check of the arc discretization at point p.

    Returns field magnitudes at n and n/2 chords plus the Richardson
    extrapolation (chord error is O(1/n^2)) and an error estimate.
    """
    b_fine = field_exact(p, elements, n_arc=n_arc, constants=constants)
    b_coarse = field_exact(p, elements, n_arc=n_arc // 2, constants=constants)
    fine = float(np.linalg.norm(b_fine))
    coarse = float(np.linalg.norm(b_coarse))
    richardson = fine + (fine - coarse) / 3.0
    return {
        "n_arc": n_arc,
        "norm_fine": fine,
        "norm_coarse": coarse,
        "richardson": richardson,
        "error_estimate": abs(fine - coarse) / 3.0,
    }
