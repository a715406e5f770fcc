"""Single-atom dynamics: symplectic propagation, classical spin precession,
adiabaticity diagnostics, current schedules, and spin-flip lifetime estimates.

The propagator is a velocity-Verlet integrator in the potential
U = mu_m*|B| + m*g*h with the force from the analytic field Jacobian.
Spin precession is integrated separately along a given trajectory with exact
per-substep rotations (norm-preserving by construction), which keeps the fast
Larmor timescale out of the center-of-mass stepping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .constants import DEFAULT_CONSTANTS, PhysicalConstants
from .errors import (AccuracyError, InvalidInputError, NumericError,
                     ScheduleConflictError, StatisticsError)
from .magnetics import FieldSource, GuideGeometry, RingGeometry, TrapCharacterization

LOSS_CAUSES = ("majorana", "escape", "background", "shaping")

# Classical-precession rate constant: Larmor angular rate = GAMMA_FACTOR*mu_m*|B|/hbar.
# The factor 2 maps the spin-1 moment onto a unit classical vector; the loss-disk
# prefactor kappa absorbs the residual model freedom.
GAMMA_FACTOR = 2.0


def gyromagnetic_rate(constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """Angular precession rate per tesla of the classical spin model."""
    return GAMMA_FACTOR * constants.mu_m / constants.hbar


@dataclass(frozen=True)
class AtomState:
    """Kinematic state of one atom; loss transitions are one-way."""

    position: tuple[float, float, float]
    velocity: tuple[float, float, float]
    spin: tuple[float, float, float] = (0.0, 0.0, 1.0)
    t: float = 0.0
    status: str = "alive"
    loss_cause: str | None = None

    def __post_init__(self):
        pos = np.asarray(self.position, float)
        vel = np.asarray(self.velocity, float)
        s = np.asarray(self.spin, float)
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel)) and np.all(np.isfinite(s))):
            raise InvalidInputError("atom state components must be finite")
        if abs(np.linalg.norm(s) - 1.0) > 1e-9:
            raise InvalidInputError("spin must be a unit vector (|S| = 1 +- 1e-9)")
        if self.status not in ("alive", "lost"):
            raise InvalidInputError(f"unknown status {self.status!r}")
        if self.status == "lost" and self.loss_cause not in LOSS_CAUSES:
            raise InvalidInputError(f"lost state needs a cause from {LOSS_CAUSES}")

    @property
    def alive(self) -> bool:
        return self.status == "alive"

    def mark_lost(self, cause: str, t: float | None = None) -> "AtomState":
        if not self.alive:
            raise InvalidInputError("status transitions are one-way: atom already lost")
        if cause not in LOSS_CAUSES:
            raise InvalidInputError(f"unknown loss cause {cause!r}")
        return replace(self, status="lost", loss_cause=cause,
                       t=self.t if t is None else t)


# ---------------------------------------------------------------------------
# current schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RampSchedule:
    """Piecewise-linear guide/ring current program with named event markers."""

    times: tuple[float, ...]
    guide_current: tuple[float, ...]
    ring_current: tuple[float, ...]
    events: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, float)
        ig = np.asarray(self.guide_current, float)
        ir = np.asarray(self.ring_current, float)
        if not (len(t) == len(ig) == len(ir)) or len(t) == 0:
            raise InvalidInputError("schedule arrays must be equal-length and non-empty")
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise InvalidInputError("schedule breakpoints must be strictly increasing")
        if np.any(ig < 0) or np.any(ir < 0):
            raise InvalidInputError("currents must be non-negative")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(ig)) and np.all(np.isfinite(ir))):
            raise InvalidInputError("schedule entries must be finite")

    def current(self, channel: str, t) -> float | np.ndarray:
        values = {"guide": self.guide_current, "ring": self.ring_current}[channel]
        out = np.interp(t, self.times, values)
        return float(out) if np.ndim(t) == 0 else out

    def currents(self, t) -> tuple:
        return self.current("guide", t), self.current("ring", t)

    @property
    def t_end(self) -> float:
        return self.times[-1]

    def merge(self, other: "RampSchedule") -> "RampSchedule":
        """Append a later schedule; must not overlap and must join continuously.

        Interpolation holds each channel constant between the pieces, so the
        appended schedule has to start from the current values (no jumps).
        """
        if other.times[0] <= self.times[-1]:
            raise ScheduleConflictError(
                f"schedules overlap: existing ends at {self.times[-1]}, "
                f"appended starts at {other.times[0]}")
        if (abs(other.guide_current[0] - self.guide_current[-1]) > 1e-12
                or abs(other.ring_current[0] - self.ring_current[-1]) > 1e-12):
            raise ScheduleConflictError(
                "appended schedule must start from the current channel values "
                f"(guide {self.guide_current[-1]} -> {other.guide_current[0]}, "
                f"ring {self.ring_current[-1]} -> {other.ring_current[0]})")
        return RampSchedule(
            times=self.times + other.times,
            guide_current=self.guide_current + other.guide_current,
            ring_current=self.ring_current + other.ring_current,
            events={**self.events, **other.events},
        )


def static_schedule(guide: float = 0.0, ring: float = 0.0) -> RampSchedule:
    return RampSchedule(times=(0.0,), guide_current=(guide,), ring_current=(ring,))


def build_transfer_ramp(guide: GuideGeometry, ring: RingGeometry, t_transfer: float,
                        mode: str = "load", t_start: float = 0.0, *,
                        dip_current: float = 2.0, dip_ramp: float = 10e-3,
                        dip_plateau: float = 20e-3,
                        guide_on_time: float = 5e-3) -> RampSchedule:
    """Current program handing the trap from the guide to the ring.

    "load": linear cross-ramp, guide I->0 against ring 0->I over t_transfer
    (currents are equal at the midpoint). "reload": guide back on, ring
    ramped down to dip_current and held so the newly guided cloud can enter
    the overlap region, then the cross-ramp runs from the dipped level. The
    reload piece starts from (guide 0, ring I) so it merges continuously onto
    a schedule that left the ring running.
    """
    if not t_transfer > 0:
        raise InvalidInputError("transfer time must be positive")
    ig, ir = guide.current, ring.current
    if mode == "load":
        t0, t1 = t_start, t_start + t_transfer
        return RampSchedule(
            times=(t0, t1),
            guide_current=(ig, 0.0),
            ring_current=(0.0, ir),
            events={"transfer_start": t0, "transfer_mid": 0.5 * (t0 + t1),
                    "transfer_end": t1},
        )
    if mode == "reload":
        t0 = t_start
        t1 = t0 + guide_on_time              # guide back on
        t2 = t1 + dip_ramp                   # ring dipped
        t3 = t2 + dip_plateau                # cloud enters overlap
        t4 = t3 + t_transfer
        return RampSchedule(
            times=(t0, t1, t2, t3, t4),
            guide_current=(0.0, ig, ig, ig, 0.0),
            ring_current=(ir, ir, dip_current, dip_current, ir),
            events={"reload_guide_on": t0, "reload_dip_start": t1,
                    "reload_dip_low": t2, "transfer_start": t3,
                    "transfer_end": t4},
        )
    raise InvalidInputError(f"unknown transfer mode {mode!r}")


def track_trap_zero(field_source, times, p_start, span: float = 5e-3) -> np.ndarray:
    """Follow the instantaneous |B| minimum of a (time-dependent) field.

    Minimizes |B|^2 by Nelder-Mead seeded from the previous minimum; used as
    the transfer-continuity diagnostic. Returns positions (len(times), 3).
    """
    from scipy.optimize import minimize

    p = np.asarray(p_start, float)
    out = np.empty((len(times), 3))
    for i, t in enumerate(times):
        def cost(x, t=t):
            b = field_source.b_field(x, t)
            return float(b @ b)
        res = minimize(cost, p, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-26, "maxiter": 4000})
        if not res.success:
            raise NumericError(f"trap-zero tracking failed at t={t}: {res.message}")
        p = res.x
        out[i] = p
    return out


# ---------------------------------------------------------------------------
# trajectory integration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-6
    max_steps: int = 50_000_000
    energy_tol: float = 1e-6            # relative drift per 0.1 s, static fields
    sample_stride: int = 100
    spin_max_rotation: float = 0.1      # rad per spin substep (adaptive target)
    spin_substeps: int | None = None    # fixed substeps per trajectory interval

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidInputError("dt must be positive")
        if self.spin_substeps is not None and self.spin_substeps < 1:
            raise InvalidInputError("spin substep ratio must be >= 1")


@dataclass
class Trajectory:
    """Sampled center-of-mass history of a single atom."""

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    final_state: AtomState
    spins: np.ndarray | None = None

    @classmethod
    def straight_pass(cls, impact: float, speed: float, t_half: float, n: int,
                      axis=(1.0, 0.0, 0.0), offset_dir=(0.0, 1.0, 0.0)) -> "Trajectory":
        """Uniform motion past the origin at a given impact parameter (test/MC aid)."""
        ts = np.linspace(-t_half, t_half, n)
        a = np.asarray(axis, float) / np.linalg.norm(axis)
        o = np.asarray(offset_dir, float) / np.linalg.norm(offset_dir)
        pos = ts[:, None] * speed * a[None, :] + impact * o[None, :]
        vel = np.broadcast_to(speed * a, pos.shape).copy()
        final = AtomState(tuple(pos[-1]), tuple(vel[-1]), t=float(ts[-1]))
        return cls(ts, pos, vel, final)

    def export_csv(self, path):
        spins = self.spins if self.spins is not None else np.zeros_like(self.positions)
        status = self.final_state.status
        with open(path, "w") as fh:
            fh.write("t_s,x_m,y_m,z_m,vx,vy,vz,Sx,Sy,Sz,status\n")
            for i in range(len(self.times)):
                row = [self.times[i], *self.positions[i], *self.velocities[i], *spins[i]]
                tag = status if i == len(self.times) - 1 else "alive"
                fh.write(",".join(f"{v:.9e}" for v in row) + f",{tag}\n")


def integrate_trajectory(state: AtomState, field_source, cfg: IntegratorConfig,
                         t_end: float, constants: PhysicalConstants = DEFAULT_CONSTANTS,
                         gravity_up=None, escape_test=None) -> Trajectory:
    """Velocity-Verlet propagation in U = mu_m*|B| (+ m*g*h if gravity_up given).

    ``escape_test(p) -> bool`` marks the atom lost("escape") and stops early.
    Raises NumericError on non-finite forces or step-count overflow.
    """
    if not state.alive:
        raise InvalidInputError("cannot propagate a lost atom")
    if not t_end > state.t:
        raise InvalidInputError("t_end must exceed the state time")
    span = t_end - state.t
    n_steps = max(1, int(round(span / cfg.dt)))
    if n_steps > cfg.max_steps:
        raise NumericError(f"required steps {n_steps} exceed max_steps {cfg.max_steps}")
    dt = cfg.dt
    m = constants.mass
    g_vec = np.zeros(3)
    if gravity_up is not None:
        up = np.asarray(gravity_up, float)
        g_vec = -constants.g_grav * up / np.linalg.norm(up)

    def accel(p, t):
        gn = field_source.grad_norm(p, t)
        a = -(constants.mu_m / m) * gn + g_vec
        if not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite force at position {p} (t={t})")
        return a

    p = np.asarray(state.position, float).copy()
    v = np.asarray(state.velocity, float).copy()
    t = state.t
    a = accel(p, t)

    n_samples = n_steps // cfg.sample_stride + 1
    ts = np.empty(n_samples + 1)
    ps = np.empty((n_samples + 1, 3))
    vs = np.empty((n_samples + 1, 3))
    ts[0], ps[0], vs[0] = t, p, v
    k = 1
    status, cause, t_loss = "alive", None, None

    for step in range(n_steps):
        v += 0.5 * dt * a
        p += dt * v
        t = state.t + (step + 1) * dt
        a = accel(p, t)
        v += 0.5 * dt * a
        if escape_test is not None and escape_test(p):
            status, cause, t_loss = "lost", "escape", t
            ts[k], ps[k], vs[k] = t, p, v
            k += 1
            break
        if (step + 1) % cfg.sample_stride == 0:
            ts[k], ps[k], vs[k] = t, p, v
            k += 1
    if status == "alive" and (ts[k - 1] != t):
        ts[k], ps[k], vs[k] = t, p, v
        k += 1

    final = AtomState(tuple(p), tuple(v), spin=state.spin, t=t,
                      status=status, loss_cause=cause)
    return Trajectory(ts[:k], ps[:k], vs[:k], final)


def total_energy(p, v, field_source, constants: PhysicalConstants = DEFAULT_CONSTANTS,
                 t: float = 0.0, gravity_up=None) -> float:
    """Kinetic plus potential energy of a point state (diagnostic)."""
    from .magnetics import total_potential
    v = np.asarray(v, float)
    kin = 0.5 * constants.mass * float(v @ v)
    if gravity_up is None:
        u = constants.mu_m * float(field_source.norm(p, t))
    else:
        u = float(total_potential(p, field_source, constants, t=t, up=gravity_up))
    return kin + u


# ---------------------------------------------------------------------------
# adiabaticity and spin precession
# ---------------------------------------------------------------------------

def adiabaticity_ratio(state: AtomState, field_source,
                       constants: PhysicalConstants = DEFAULT_CONSTANTS,
                       t: float = 0.0) -> float:
    """(field-direction rotation rate) / (Larmor rate mu_m|B|/hbar).

    Below 1 the moment follows the field adiabatically. Returns +inf on a
    field zero. Uniform current scaling does not rotate the direction, so a
    schedule-driven field has the same ratio as its static base.
    """
    b = np.asarray(field_source.b_field(state.position, t), float)
    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        return math.inf
    jac = np.asarray(field_source.jacobian(state.position, t), float)
    db = jac @ np.asarray(state.velocity, float)
    bhat = b / nb
    perp = db - bhat * (bhat @ db)
    dtheta = float(np.linalg.norm(perp)) / nb
    larmor = constants.mu_m * nb / constants.hbar
    return dtheta / larmor


@dataclass
class SpinHistory:
    times: np.ndarray
    spins: np.ndarray            # at trajectory sample times
    projections: np.ndarray      # S . B_hat at sample times
    flips: list                  # times of persistent projection reversals
    norm_drift: float
    n_substeps: int

    @property
    def flipped(self) -> bool:
        return len(self.flips) > 0


def _substep_plan(trajectory: Trajectory, field_source, cfg: IntegratorConfig,
                  constants: PhysicalConstants):
    """Per-interval substep counts from the local Larmor rate and direction change."""
    b = np.atleast_2d(field_source.b_field(trajectory.positions))
    nb = np.linalg.norm(b, axis=1)
    gamma = gyromagnetic_rate(constants)
    dts = np.diff(trajectory.times)
    w_max = gamma * np.maximum(nb[:-1], nb[1:])
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = np.einsum("ij,ij->i", b[:-1], b[1:]) / (nb[:-1] * nb[1:])
    dang = np.arccos(np.clip(np.nan_to_num(cosang, nan=1.0), -1.0, 1.0))
    if cfg.spin_substeps is not None:
        n_sub = np.full(len(dts), cfg.spin_substeps, dtype=int)
        worst = float(np.max(w_max * dts / n_sub)) if len(dts) else 0.0
        if worst > 0.5:
            raise AccuracyError(
                f"spin substeps too coarse: local rotation {worst:.2f} rad per substep "
                "> 0.5 rad; decrease dt_spin (raise spin_substeps)")
        return n_sub
    n_sub = np.maximum.reduce([
        np.ceil(w_max * dts / cfg.spin_max_rotation),
        np.ceil(dang / cfg.spin_max_rotation),
        np.ones(len(dts)),
    ]).astype(int)
    return np.minimum(n_sub, 2_000_000)


def precess_spin(trajectory: Trajectory, field_source, cfg: IntegratorConfig = IntegratorConfig(),
                 constants: PhysicalConstants = DEFAULT_CONSTANTS,
                 s0=None, persistence_periods: float = 10.0) -> SpinHistory:
    """Integrate classical precession dS/dt = gamma*B x S along a trajectory.

    Each substep applies the exact rotation about the local field direction,
    so |S| is conserved to rounding. A flip event is recorded when the
    projection S.B_hat changes sign against its initial orientation and stays
    reversed for more than ``persistence_periods`` Larmor periods.
    """
    hist = precess_spin_batch(trajectory, field_source,
                              None if s0 is None else np.asarray(s0, float)[None, :],
                              cfg=cfg, constants=constants,
                              persistence_periods=persistence_periods)
    return SpinHistory(times=hist.times, spins=hist.spins[:, 0],
                       projections=hist.projections[:, 0],
                       flips=[t for (i, t) in hist.flips if i == 0],
                       norm_drift=hist.norm_drift, n_substeps=hist.n_substeps)


@dataclass
class BatchSpinHistory:
    times: np.ndarray
    spins: np.ndarray            # (T, K, 3)
    projections: np.ndarray      # (T, K)
    flips: list                  # (spin index, time) of first persistent reversal
    flipped: np.ndarray          # (K,) bool
    norm_drift: float
    n_substeps: int


def precess_spin_batch(trajectory: Trajectory, field_source, s0_batch=None,
                       cfg: IntegratorConfig = IntegratorConfig(),
                       constants: PhysicalConstants = DEFAULT_CONSTANTS,
                       persistence_periods: float = 10.0) -> BatchSpinHistory:
    """Precess K spins through the same trajectory (shared field sequence)."""
    pos = trajectory.positions
    times = trajectory.times
    if len(times) < 2 or np.any(np.diff(times) <= 0):
        raise InvalidInputError("trajectory must be time-ordered with >= 2 samples")
    gamma = gyromagnetic_rate(constants)
    n_sub = _substep_plan(trajectory, field_source, cfg, constants)

    # initial spins: default anti-aligned with the local field (trapped branch)
    b0 = np.asarray(field_source.b_field(pos[0]), float)
    nb0 = np.linalg.norm(b0)
    if s0_batch is None:
        if nb0 == 0:
            raise InvalidInputError("cannot auto-orient spin on a field zero")
        s = np.tile(-b0 / nb0, (1, 1))
    else:
        s = np.array(s0_batch, float)
        norms = np.linalg.norm(s, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise InvalidInputError("initial spins must be unit vectors")
    k_spins = len(s)

    init_sign = None
    flipped = np.zeros(k_spins, dtype=bool)
    reversed_phase = np.zeros(k_spins)       # Larmor phase accumulated while reversed
    flip_time = np.full(k_spins, np.nan)

    out_spins = np.empty((len(times), k_spins, 3))
    out_proj = np.empty((len(times), k_spins))
    out_spins[0] = s
    if nb0 > 0:
        out_proj[0] = s @ (b0 / nb0)
    else:
        out_proj[0] = 0.0
    if nb0 > 0:
        init_sign = np.sign(out_proj[0])
        init_sign[init_sign == 0] = -1.0

    total_sub = 0
    for i in range(len(times) - 1):
        m = int(n_sub[i])
        dt_sub = (times[i + 1] - times[i]) / m
        frac = (np.arange(m) + 0.5) / m
        pts = pos[i][None, :] * (1 - frac[:, None]) + pos[i + 1][None, :] * frac[:, None]
        bs = np.atleast_2d(field_source.b_field(pts))
        nbs = np.linalg.norm(bs, axis=1)
        total_sub += m
        for j in range(m):
            nb = nbs[j]
            if nb > 0.0:
                axis = bs[j] / nb
                ang = gamma * nb * dt_sub
                ca, sa = math.cos(ang), math.sin(ang)
                k_cross_s = np.cross(axis, s)
                k_dot_s = s @ axis
                s = s * ca + k_cross_s * sa + axis[None, :] * (k_dot_s * (1 - ca))[:, None]
                proj = s @ axis
                if init_sign is None:
                    init_sign = np.sign(proj)
                    init_sign[init_sign == 0] = -1.0
                rev = (np.sign(proj) != init_sign) & (proj != 0)
                phase = gamma * nb * dt_sub
                reversed_phase = np.where(rev, reversed_phase + phase, 0.0)
                newly = (~flipped) & (reversed_phase > persistence_periods * 2 * math.pi)
                if np.any(newly):
                    t_here = times[i] + (j + 1) * dt_sub
                    flip_time[newly] = t_here
                    flipped |= newly
        out_spins[i + 1] = s
        b_end = np.asarray(field_source.b_field(pos[i + 1]), float)
        nb_end = np.linalg.norm(b_end)
        out_proj[i + 1] = (s @ (b_end / nb_end)) if nb_end > 0 else 0.0

    norm_drift = float(np.max(np.abs(np.linalg.norm(s, axis=1) - 1.0)))
    flips = [(int(i), float(flip_time[i])) for i in np.nonzero(flipped)[0]]
    return BatchSpinHistory(times=times, spins=out_spins, projections=out_proj,
                            flips=flips, flipped=flipped, norm_drift=norm_drift,
                            n_substeps=total_sub)


def tilted_spins(direction, cone_angle: float, n: int, seed: int) -> np.ndarray:
    """Unit spins on a cone of half-angle ``cone_angle`` about ``direction``.

    Random azimuthal phases model the undetermined precession phase of an
    ensemble entering a zero crossing.
    """
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    from .magnetics import orthobasis
    e1, e2 = orthobasis(d)
    rng = np.random.Generator(np.random.Philox(key=seed))
    phases = rng.uniform(0.0, 2.0 * math.pi, n)
    ca, sa = math.cos(cone_angle), math.sin(cone_angle)
    return (ca * d[None, :]
            + sa * (np.cos(phases)[:, None] * e1 + np.sin(phases)[:, None] * e2))


def straight_pass_flip_probability(field_source, impact: float, speed: float,
                                   n_samples: int = 400, seed: int = 0,
                                   constants: PhysicalConstants = DEFAULT_CONSTANTS,
                                   cone_angle: float = math.radians(2.0),
                                   extent_factor: float = 10.0,
                                   b_scale: float | None = None,
                                   cfg: IntegratorConfig = IntegratorConfig()) -> float:
    """Fraction of spins flipped on a straight pass through a quadrupole zero.

    The pass runs along +x at transverse offset ``impact``; spins start
    anti-aligned with the local field up to a small random-phase cone. The
    half-extent is extent_factor * max(impact, b_scale), long enough that the
    end points are deeply adiabatic while keeping the Larmor phase budget
    (and with it the substep count) modest.
    """
    scale = b_scale if b_scale is not None else max(impact, 0.8e-6)
    t_half = extent_factor * scale / speed
    n_t = max(400, int(40 * extent_factor))
    traj = Trajectory.straight_pass(impact, speed, t_half, n_t)
    b_start = np.asarray(field_source.b_field(traj.positions[0]), float)
    d = -b_start / np.linalg.norm(b_start)
    spins = tilted_spins(d, cone_angle, n_samples, seed)
    hist = precess_spin_batch(traj, field_source, spins, cfg=cfg, constants=constants)
    # classify by the final adiabatic branch rather than transient reversals
    final_proj = hist.projections[-1]
    return float(np.mean(final_proj > 0.0))


# ---------------------------------------------------------------------------
# spin-flip (Majorana) lifetime Monte Carlo
# ---------------------------------------------------------------------------

@dataclass
class LifetimeEstimate:
    tau: float
    tau_err: float
    n_lost: int
    n_atoms: int
    method: str
    span: float
    loss_times: np.ndarray


def censored_exponential_fit(loss_times, n_atoms: int, span: float) -> tuple[float, float]:
    """Maximum-likelihood exponential lifetime with right-censoring at ``span``."""
    loss_times = np.asarray(loss_times, float)
    k = len(loss_times)
    if k == 0:
        return math.inf, math.inf
    tau = (loss_times.sum() + (n_atoms - k) * span) / k
    return float(tau), float(tau / math.sqrt(k))


def exposure_exponential_fit(event_times, at_risk_ends, span: float) -> tuple[float, float, int]:
    """Constant-hazard MLE under competing risks.

    ``event_times`` are the channel's event times; ``at_risk_ends`` the time
    each atom stopped being at risk (its loss by any channel, or the span).
    tau = total exposure / number of events; relative error 1/sqrt(k).
    """
    ends = np.minimum(np.asarray(at_risk_ends, float), span)
    exposure = float(np.clip(ends, 0.0, None).sum())
    k = len(np.asarray(event_times, float))
    if k == 0:
        return math.inf, math.inf, 0
    tau = exposure / k
    return float(tau), float(tau / math.sqrt(k)), k


def majorana_lifetime_estimate(
        transverse_temperature: float,
        char: TrapCharacterization,
        method: str = "loss-disk",
        *,
        ring: RingGeometry | None = None,
        constants: PhysicalConstants = DEFAULT_CONSTANTS,
        orbit_speed: float = 0.8857,
        azimuthal_temperature: float = 3.4e-6,
        n_atoms: int = 400,
        t_max: float = 0.8,
        dt: float = 5e-6,
        seed: int = 0,
        loss_radius: float | None = None,
        include_gravity: bool = True,
        sigma_azimuthal: float = 0.5e-3) -> LifetimeEstimate:
    """Monte Carlo 1/e lifetime against spin-flip loss in the storage ring.

    loss-disk: an atom is removed on first entry into the cylinder of radius
    b0 around the field-zero circle (closest-approach detection between
    steps). spin-oracle: removal on a persistent precession flip evaluated
    across each close pass. The lifetime comes from a censored-exponential
    maximum-likelihood fit over the simulated span.
    """
    if method not in ("loss-disk", "spin-oracle"):
        raise InvalidInputError(f"unknown method {method!r}")
    if transverse_temperature <= 0 or azimuthal_temperature <= 0:
        raise InvalidInputError("temperatures must be positive")
    if n_atoms < 100:
        raise StatisticsError("need at least 100 atoms for lifetime statistics")
    b0 = char.loss_radius if loss_radius is None else loss_radius
    if b0 == 0.0:
        return LifetimeEstimate(math.inf, math.inf, 0, n_atoms, method, t_max,
                                np.empty(0))

    from . import ensemble  # deferred: ensemble depends on this module
    from .magnetics import JunctionSpec

    # default geometry: vertical ring including its feed junction; the ripple
    # plus in-plane gravity provide the angular-momentum stirring that
    # replenishes the low-L population between zero-line passes
    ring = ring if ring is not None else RingGeometry.vertical(
        junction=JunctionSpec(azimuth=0.0))
    cloud = ensemble.CloudSpec(
        n=n_atoms,
        sigma=(sigma_azimuthal, 0.0, 0.0),
        t_longitudinal=azimuthal_temperature,
        t_transverse=transverse_temperature,
        mean_speed=orbit_speed,
        equilibrium_transverse=True,
    )
    cfg = ensemble.ScenarioConfig(
        guide=GuideGeometry(current=0.0),
        ring=ring,
        constants=constants,
        schedule=static_schedule(guide=0.0, ring=ring.current),
        clouds=(ensemble.CloudRelease(cloud=cloud, time=0.0, azimuth=math.pi / 2.0),),
        probe=None,
        losses=ensemble.LossConfig(tau_background=None, majorana=method,
                                   loss_radius=b0),
        integrator=ensemble.EngineConfig(dt=dt, sample_stride=max(1, int(5e-4 / dt))),
        seed=seed,
        t_end=t_max,
        gravity=include_gravity,
    )
    result = ensemble.run_scenario(cfg)
    mask = result.loss_cause == ensemble.CAUSE_CODES["majorana"]
    loss_times = np.sort(result.loss_time[mask])
    at_risk_ends = np.where(np.isfinite(result.loss_time), result.loss_time, t_max)
    tau, err, k = exposure_exponential_fit(loss_times, at_risk_ends, t_max)
    return LifetimeEstimate(tau=tau, tau_err=err, n_lost=k,
                            n_atoms=n_atoms, method=method, span=t_max,
                            loss_times=loss_times)
