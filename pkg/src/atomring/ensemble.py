"""Thermal-cloud sampling and Monte Carlo scenario propagation.

A scenario binds geometry, a current schedule, cloud releases, loss channels,
shaping pulses, and probing into one seeded, bitwise-reproducible object.
Atoms are independent; per-cloud RNG substreams come from counter-based
Philox keyed on (seed, cloud index), so results do not depend on the worker
count used for propagation.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _engine
from .constants import DEFAULT_CONSTANTS, PhysicalConstants
from .dynamics import AtomState, IntegratorConfig, RampSchedule, precess_spin, static_schedule
from .errors import InvalidInputError, ScheduleConflictError, StatisticsError
from .magnetics import (GuideGeometry, RingGeometry, TwoWireGuideField,
                        characterize_trap)

CAUSE_CODES = {"majorana": _engine.ST_MAJORANA, "escape": _engine.ST_ESCAPE,
               "background": _engine.ST_BACKGROUND, "shaping": _engine.ST_SHAPING}
CAUSE_NAMES = {v: k for k, v in CAUSE_CODES.items()}


# ---------------------------------------------------------------------------
# configuration types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CloudSpec:
    """Thermal cloud parameters in the release frame (longitudinal, t1, t2).

    With ``equilibrium_transverse`` (ring releases only) the transverse
    position distribution is the thermal equilibrium of the linear trap,
    p(r) ~ r*exp(-r/r_T) with r_T = kB*T/(mu_m*gradient), instead of the
    per-axis Gaussians; use it for clouds that have settled in the ring.
    """

    n: int
    sigma: tuple[float, float, float] = (0.5e-3, 1e-4, 1e-4)
    t_longitudinal: float = 3e-6
    t_transverse: float = 57e-6
    mean_speed: float = 0.0
    equilibrium_transverse: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise InvalidInputError("cloud must contain at least one atom")
        if any(s < 0 for s in self.sigma):
            raise InvalidInputError("position sigmas must be non-negative")
        if self.t_longitudinal < 0 or self.t_transverse < 0:
            raise InvalidInputError("temperatures must be non-negative")


@dataclass(frozen=True)
class CloudRelease:
    """Where and when a cloud enters the simulation.

    Exactly one of ``azimuth`` (release on the ring, moving along the local
    tangent) or ``guide_offset`` (release on the guide axis at that signed
    distance from the anchor, moving along the axis) must be given.
    """

    cloud: CloudSpec
    time: float = 0.0
    azimuth: float | None = None
    guide_offset: float | None = None

    def __post_init__(self):
        if (self.azimuth is None) == (self.guide_offset is None):
            raise InvalidInputError("specify exactly one of azimuth or guide_offset")
        if self.time < 0:
            raise InvalidInputError("release time must be non-negative")


@dataclass(frozen=True)
class ProbeConfig:
    """Pulsed fluorescence-proxy probe at a fixed azimuthal window."""

    azimuth: float = 0.0
    window: float = 1e-3
    pulse_duration: float = 1e-3
    delays: tuple[float, ...] = ()
    destructive: bool = False

    def __post_init__(self):
        if not self.window > 0:
            raise InvalidInputError("probe window must be positive")
        if not self.pulse_duration > 0:
            raise InvalidInputError("pulse duration must be positive")
        d = np.asarray(self.delays, float)
        if len(d) and not np.all(np.diff(d) > 0):
            raise InvalidInputError("probe delays must be strictly increasing")


@dataclass
class ProbeTrace:
    """Signal (atom-count proxy) versus probe delay."""

    delays: np.ndarray
    signal: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(self.signal < 0):
            raise InvalidInputError("probe signal must be non-negative")

    def export_csv(self, path):
        with open(path, "w") as fh:
            pairs = " ".join(f"{k}={v}" for k, v in self.metadata.items())
            fh.write(f"# {pairs}\n")
            fh.write("delay_s,signal\n")
            for d, s in zip(self.delays, self.signal):
                fh.write(f"{d:.9e},{s:.9e}\n")


@dataclass(frozen=True)
class ShapingPulse:
    """Azimuthal cut: keep or remove the central fraction of the FWHM."""

    time: float
    keep_fraction: float = 0.4
    mode: str = "keep"

    def __post_init__(self):
        if self.mode not in ("keep", "remove"):
            raise InvalidInputError("shaping mode must be 'keep' or 'remove'")
        if not 0.0 < self.keep_fraction:
            raise InvalidInputError("keep_fraction must be positive")


@dataclass(frozen=True)
class LossConfig:
    """Loss-channel toggles: background gas, spin-flip model, junction ripple."""

    tau_background: float | None = None
    majorana: str = "off"              # off | loss-disk | spin-oracle
    loss_radius: float | None = None   # default: from trap characterization
    kappa: float = 1.0

    def __post_init__(self):
        if self.majorana not in ("off", "loss-disk", "spin-oracle"):
            raise InvalidInputError(f"unknown majorana mode {self.majorana!r}")
        if self.tau_background is not None and not self.tau_background > 0:
            raise InvalidInputError("background lifetime must be positive")


@dataclass(frozen=True)
class EngineConfig:
    """Step sizes for the ensemble propagation kernel."""

    dt: float = 1e-5
    sample_stride: int = 50
    capture_mult: float = 3.0          # close-pass capture radius, units of b0
    max_passes: int = 64

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidInputError("dt must be positive")
        if self.sample_stride < 1:
            raise InvalidInputError("sample stride must be >= 1")

    @property
    def sample_dt(self) -> float:
        return self.dt * self.sample_stride


@dataclass(frozen=True)
class ScenarioConfig:
    """One reproducible experiment: geometry, schedule, clouds, losses, probe."""

    guide: GuideGeometry
    ring: RingGeometry
    schedule: RampSchedule
    clouds: tuple[CloudRelease, ...]
    seed: int
    t_end: float
    constants: PhysicalConstants = DEFAULT_CONSTANTS
    probe: ProbeConfig | None = None
    losses: LossConfig = LossConfig()
    shaping: tuple[ShapingPulse, ...] = ()
    integrator: EngineConfig = EngineConfig()
    snapshot_times: tuple[float, ...] = ()
    gravity: bool = True
    up: tuple[float, float, float] = (0.0, 0.0, 1.0)
    escape_radius: float = 3e-3

    def __post_init__(self):
        if not isinstance(self.seed, int):
            raise InvalidInputError("seed is required and must be an integer")
        if not self.t_end > 0:
            raise InvalidInputError("t_end must be positive")
        if not self.clouds:
            raise InvalidInputError("scenario needs at least one cloud release")
        for c in self.clouds:
            if c.time >= self.t_end:
                raise InvalidInputError("cloud release beyond scenario end")
        for s in self.shaping:
            if not 0.0 < s.time < self.t_end:
                raise InvalidInputError("shaping pulse outside scenario span")
        for t in self.snapshot_times:
            if not 0.0 <= t <= self.t_end:
                raise InvalidInputError("snapshot time outside scenario span")


def _config_to_jsonable(obj):
    if isinstance(obj, PhysicalConstants):
        return asdict(obj)
    if hasattr(obj, "__dataclass_fields__"):
        return {k: _config_to_jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _config_to_jsonable(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_config_to_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def scenario_hash(cfg: ScenarioConfig) -> str:
    """Stable 12-hex digest of the full configuration (identifies outputs)."""
    blob = json.dumps(_config_to_jsonable(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


# ---------------------------------------------------------------------------
# cloud sampling
# ---------------------------------------------------------------------------

def _local_thermal_draw(spec: CloudSpec, rng: np.random.Generator,
                        constants: PhysicalConstants):
    """(local positions, local velocities) in the (long, t1, t2) release frame."""
    n = spec.n
    xi = rng.standard_normal((n, 6))
    sv_long = constants.thermal_speed(spec.t_longitudinal) if spec.t_longitudinal > 0 else 0.0
    sv_trans = constants.thermal_speed(spec.t_transverse) if spec.t_transverse > 0 else 0.0
    local_pos = xi[:, :3] * np.asarray(spec.sigma)[None, :]
    local_vel = np.stack([
        spec.mean_speed + sv_long * xi[:, 3],
        sv_trans * xi[:, 4],
        sv_trans * xi[:, 5],
    ], axis=1)
    return local_pos, local_vel


def _sample_release_arrays(release: CloudRelease, spec: CloudSpec,
                           rng: np.random.Generator, guide: GuideGeometry,
                           ring: RingGeometry,
                           constants: PhysicalConstants) -> tuple[np.ndarray, np.ndarray]:
    """World positions/velocities of a released cloud.

    Ring releases wrap the longitudinal spread along the circle (each atom
    gets its own azimuth and local tangent frame), so a long cloud does not
    acquire spurious radial offsets from the straight-tangent approximation.
    """
    local_pos, local_vel = _local_thermal_draw(spec, rng, constants)
    if release.azimuth is not None:
        if spec.equilibrium_transverse and spec.t_transverse > 0:
            from .magnetics import quad_gradient
            grad = quad_gradient(ring.current, ring.separation, constants.mu0)
            r_t = constants.kB * spec.t_transverse / (constants.mu_m * grad)
            radius = rng.gamma(2.0, r_t, spec.n)
            angle = rng.uniform(0.0, 2.0 * math.pi, spec.n)
            local_pos[:, 1] = radius * np.cos(angle)
            local_pos[:, 2] = radius * np.sin(angle)
        e1, e2, n = ring.frame()
        phi = release.azimuth + local_pos[:, 0] / ring.radius
        cosp, sinp = np.cos(phi), np.sin(phi)
        radial = cosp[:, None] * e1 + sinp[:, None] * e2
        tangent = -sinp[:, None] * e1 + cosp[:, None] * e2
        axial = np.broadcast_to(n, radial.shape)
        rho = ring.radius + local_pos[:, 1]
        pos = (np.asarray(ring.center)[None, :] + rho[:, None] * radial
               + local_pos[:, 2][:, None] * axial)
        vel = (local_vel[:, 0][:, None] * tangent
               + local_vel[:, 1][:, None] * radial
               + local_vel[:, 2][:, None] * axial)
        return pos, vel
    ex, ey, ez = guide.frame()
    center = np.asarray(guide.anchor, float) + release.guide_offset * ez
    basis = np.stack([ez, ex, ey])
    pos = center[None, :] + local_pos @ basis
    vel = local_vel @ basis
    return pos, vel


def sample_cloud(spec: CloudSpec, seed: int, frame=None,
                 field_source=None,
                 constants: PhysicalConstants = DEFAULT_CONSTANTS) -> list[AtomState]:
    """Sample a thermal cloud as AtomStates (deterministic for a given seed).

    Positions are Gaussian per axis; velocity components are Maxwell-Boltzmann
    with sigma_v = sqrt(kB*T/m), the longitudinal temperature along the first
    frame axis. Spins start anti-aligned with the local field when a field
    source is given (weak-field-seeking), else along -z.
    """
    rng = np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFF, 0]))
    if frame is None:
        center = np.zeros(3)
        e_long, e_t1, e_t2 = np.eye(3)[2], np.eye(3)[0], np.eye(3)[1]
    else:
        center, e_long, e_t1, e_t2 = (np.asarray(v, float) for v in frame)
    local_pos, local_vel = _local_thermal_draw(spec, rng, constants)
    basis = np.stack([e_long, e_t1, e_t2])
    pos = center[None, :] + local_pos @ basis
    vel = local_vel @ basis
    states = []
    for i in range(spec.n):
        if field_source is not None:
            b = np.asarray(field_source.b_field(pos[i]), float)
            nb = np.linalg.norm(b)
            spin = tuple(-b / nb) if nb > 0 else (0.0, 0.0, -1.0)
        else:
            spin = (0.0, 0.0, -1.0)
        states.append(AtomState(tuple(pos[i]), tuple(vel[i]), spin=spin))
    return states


# ---------------------------------------------------------------------------
# scenario result
# ---------------------------------------------------------------------------

@dataclass
class Snapshot:
    time: float
    positions: np.ndarray
    velocities: np.ndarray
    status: np.ndarray


@dataclass
class ScenarioResult:
    """Propagation record: azimuth histories, losses, snapshots, bookkeeping."""

    config: ScenarioConfig
    scenario_hash: str
    sample_times: np.ndarray          # (K,)
    phi: np.ndarray                   # (N, K) unwrapped azimuth
    status: np.ndarray                # (N,) final engine status codes
    loss_time: np.ndarray             # (N,) +inf while alive
    loss_cause: np.ndarray            # (N,) 0 alive else cause code
    release_time: np.ndarray
    cloud_index: np.ndarray
    path_length: np.ndarray
    alive_time: np.ndarray
    snapshots: list[Snapshot]
    final_positions: np.ndarray
    final_velocities: np.ndarray

    @property
    def n_atoms(self) -> int:
        return len(self.status)

    def alive_mask(self, t: float | None = None) -> np.ndarray:
        if t is None:
            return self.loss_cause == 0
        return (self.release_time <= t) & (self.loss_time > t)

    def survival_curve(self) -> tuple[np.ndarray, np.ndarray]:
        counts = np.array([(self.release_time <= t) & (self.loss_time > t)
                           for t in self.sample_times]).sum(axis=1)
        return self.sample_times.copy(), counts

    def loss_breakdown(self) -> dict:
        out = {name: int(np.sum(self.loss_cause == code))
               for code, name in CAUSE_NAMES.items()}
        out["alive"] = int(np.sum(self.loss_cause == 0))
        return out

    def azimuth_at(self, t: float) -> np.ndarray:
        """Linear interpolation of the unwrapped azimuth at time t."""
        ts = self.sample_times
        t = min(max(t, ts[0]), ts[-1])
        k = int(np.searchsorted(ts, t, side="right")) - 1
        k = min(max(k, 0), len(ts) - 2)
        f = (t - ts[k]) / (ts[k + 1] - ts[k])
        return self.phi[:, k] * (1 - f) + self.phi[:, k + 1] * f

    def mean_orbital_speed(self) -> float:
        ok = self.alive_time > 0
        if not np.any(ok):
            raise StatisticsError("no propagated atoms to average")
        return float(np.sum(self.path_length[ok]) / np.sum(self.alive_time[ok]))

    def summary_dict(self) -> dict:
        times, counts = self.survival_curve()
        # thin the survival curve to keep summaries compact
        step = max(1, len(times) // 400)
        return {
            "scenario_hash": self.scenario_hash,
            "seed": self.config.seed,
            "n_atoms": self.n_atoms,
            "t_end": self.config.t_end,
            "loss_breakdown": self.loss_breakdown(),
            "mean_orbital_speed": self.mean_orbital_speed(),
            "survival": {
                "t_s": [float(v) for v in times[::step]],
                "alive": [int(v) for v in counts[::step]],
            },
        }

    def export_summary(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def transverse_velocities(snapshot: Snapshot, ring: RingGeometry) -> np.ndarray:
    """(N, 2) velocity components (radial, axial) in the local ring frame."""
    e1, e2, n = ring.frame()
    rel = snapshot.positions - np.asarray(ring.center)
    w = rel @ n
    in_plane = rel - w[:, None] * n
    rho = np.linalg.norm(in_plane, axis=1)
    rho_hat = in_plane / np.maximum(rho, 1e-12)[:, None]
    vu = np.einsum("ij,ij->i", snapshot.velocities, rho_hat)
    vw = snapshot.velocities @ n
    return np.stack([vu, vw], axis=1)


def transverse_kinetic_energy(snapshot: Snapshot, ring: RingGeometry,
                              constants: PhysicalConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    vt = transverse_velocities(snapshot, ring)
    return 0.5 * constants.mass * np.einsum("ij,ij->i", vt, vt)


# ---------------------------------------------------------------------------
# scenario propagation
# ---------------------------------------------------------------------------

def _pack_guide_params(guide: GuideGeometry) -> np.ndarray:
    gp = np.zeros(_engine.GP_LEN)
    gp[0:3] = guide.anchor
    ex, ey, ez = guide.frame()
    gp[3:6], gp[6:9], gp[9:12] = ex, ey, ez
    gp[12] = guide.separation
    if guide.taper is not None:
        gp[13] = 1.0
        gp[14:18] = (guide.taper.z_wide, guide.taper.d_wide,
                     guide.taper.z_narrow, guide.taper.d_narrow)
    return gp


def _pack_ring_params(ring: RingGeometry, junction_enabled: bool = True) -> np.ndarray:
    rp = np.zeros(_engine.RP_LEN)
    rp[0:3] = ring.center
    e1, e2, n = ring.frame()
    rp[3:6], rp[6:9], rp[9:12] = e1, e2, n
    rp[12] = ring.radius
    rp[13] = ring.separation
    if ring.junction is not None and junction_enabled:
        rp[14] = 1.0
        rp[15] = ring.junction.ripple
        rp[16] = ring.junction.extent / (2.0 * ring.radius)
        rp[17] = ring.junction.azimuth
    return rp


def resolve_loss_radius(cfg: ScenarioConfig) -> float:
    if cfg.losses.loss_radius is not None:
        return cfg.losses.loss_radius
    e_th = cfg.constants.kB * cfg.clouds[0].cloud.t_transverse
    char = characterize_trap(cfg.ring, cfg.constants, e_th, kappa=cfg.losses.kappa)
    return char.loss_radius


def _wrapped_phi(pos: np.ndarray, ring: RingGeometry) -> np.ndarray:
    e1, e2, _ = ring.frame()
    rel = pos - np.asarray(ring.center)
    return np.arctan2(rel @ e2, rel @ e1)


def _wrap_pi(x):
    return np.mod(np.asarray(x) + math.pi, 2.0 * math.pi) - math.pi


def _continuous_release_phi(pos: np.ndarray, release: CloudRelease,
                            guide: GuideGeometry, ring: RingGeometry) -> np.ndarray:
    """Unwrapped azimuth, continuous across the cloud at its release point.

    Without this, a cloud straddling the atan2 branch cut starts as two
    cohorts 2*pi apart in the continuous azimuth.
    """
    wrapped = _wrapped_phi(pos, ring)
    if release.azimuth is not None:
        ref = release.azimuth
    else:
        ex, ey, ez = guide.frame()
        center = np.asarray(guide.anchor, float) + release.guide_offset * ez
        ref = float(_wrapped_phi(center[None, :], ring)[0])
    return ref + _wrap_pi(wrapped - ref)


def run_scenario(cfg: ScenarioConfig, workers: int | None = None) -> ScenarioResult:
    """Propagate the configured ensemble; bitwise reproducible given the seed."""
    if workers is not None:
        if workers < 1:
            raise InvalidInputError("workers must be >= 1")
        import numba
        numba.set_num_threads(workers)

    eng = cfg.integrator
    dt, stride = eng.dt, eng.sample_stride
    sample_dt = eng.sample_dt

    def snap(t: float) -> float:
        return round(t / sample_dt) * sample_dt

    t_end = max(snap(cfg.t_end), sample_dt)
    release_times = [min(snap(c.time), t_end - sample_dt) for c in cfg.clouds]
    shaping_times = [snap(s.time) for s in cfg.shaping]
    snapshot_times = sorted({snap(t) for t in cfg.snapshot_times})

    # --- assemble atoms (canonical order: cloud index, then atom index) ---
    pos_list, vel_list, bg_list, rel_list, cloud_idx = [], [], [], [], []
    for ci, (release, t_rel) in enumerate(zip(cfg.clouds, release_times)):
        rng = np.random.Generator(np.random.Philox(key=[cfg.seed & 0xFFFFFFFF, ci]))
        p, v = _sample_release_arrays(release, release.cloud, rng, cfg.guide,
                                      cfg.ring, cfg.constants)
        n = release.cloud.n
        if cfg.losses.tau_background is not None:
            bg = t_rel + rng.exponential(cfg.losses.tau_background, n)
        else:
            bg = np.full(n, np.inf)
        pos_list.append(p)
        vel_list.append(v)
        bg_list.append(bg)
        rel_list.append(np.full(n, t_rel))
        cloud_idx.append(np.full(n, ci, dtype=np.int32))
    pos = np.concatenate(pos_list)
    vel = np.concatenate(vel_list)
    bg_time = np.concatenate(bg_list)
    release_time = np.concatenate(rel_list)
    cloud_index = np.concatenate(cloud_idx)
    n_atoms = len(pos)

    status = np.where(release_time <= 0.0, _engine.ST_ALIVE,
                      _engine.ST_UNRELEASED).astype(np.int8)
    loss_time = np.full(n_atoms, np.inf)
    phi_wrap = _wrapped_phi(pos, cfg.ring)
    phi_cont = np.concatenate([
        _continuous_release_phi(p, release, cfg.guide, cfg.ring)
        for p, release in zip(pos_list, cfg.clouds)])
    phi0 = phi_cont.copy()
    path_len = np.zeros(n_atoms)
    alive_time = np.zeros(n_atoms)
    r2_hist = np.full((n_atoms, 2), 1e30)
    pass_count = np.zeros(n_atoms, dtype=np.int32)

    majorana_mode = {"off": 0, "loss-disk": 1, "spin-oracle": 2}[cfg.losses.majorana]
    b0 = resolve_loss_radius(cfg) if majorana_mode else 0.0
    rcap = eng.capture_mult * b0
    n_pass_slots = eng.max_passes if majorana_mode == 2 else 1
    pass_data = np.zeros((n_atoms, n_pass_slots, 5))

    gp = _pack_guide_params(cfg.guide)
    rp = _pack_ring_params(cfg.ring)
    up = np.asarray(cfg.up, float)
    up = up / np.linalg.norm(up)
    cp = np.array([cfg.constants.mu_m, cfg.constants.mass,
                   cfg.constants.g_grav if cfg.gravity else 0.0,
                   up[0], up[1], up[2], cfg.constants.mu0])

    n_total_steps = int(round(t_end / dt))
    n_samples = n_total_steps // stride
    sample_times = np.concatenate([[0.0], (np.arange(n_samples) + 1) * sample_dt])
    phi_samples = np.empty((n_atoms, n_samples))

    boundaries = sorted({0.0, t_end, *release_times, *shaping_times, *snapshot_times})
    snapshots: list[Snapshot] = []
    shaping_by_time: dict[float, list[ShapingPulse]] = {}
    for pulse, t_s in zip(cfg.shaping, shaping_times):
        shaping_by_time.setdefault(t_s, []).append(pulse)

    sample_offset = 0
    for bi, ta in enumerate(boundaries):
        # events at the boundary: releases, shaping, snapshots
        newly = (release_time == ta) & (status == _engine.ST_UNRELEASED)
        if ta > 0 and np.any(newly):
            status[newly] = _engine.ST_ALIVE   # phi state was set at init and is untouched
        for pulse in shaping_by_time.get(ta, ()):
            _apply_shaping(pulse, ta, phi_cont, status, loss_time, cfg.ring)
        if ta in snapshot_times:
            snapshots.append(Snapshot(ta, pos.copy(), vel.copy(), status.copy()))
        if ta >= t_end:
            break
        tb = boundaries[bi + 1]
        n_steps = int(round((tb - ta) / dt))
        if n_steps == 0:
            continue
        tgrid = ta + np.arange(n_steps + 1) * dt
        ig_steps = np.interp(tgrid, cfg.schedule.times, cfg.schedule.guide_current)
        ir_steps = np.interp(tgrid, cfg.schedule.times, cfg.schedule.ring_current)
        _engine.propagate_segment(
            pos, vel, status, loss_time, phi_wrap, phi_cont,
            path_len, alive_time, r2_hist, bg_time,
            pass_count, pass_data,
            ig_steps, ir_steps, gp, rp, cp,
            ta, dt, n_steps, stride, phi_samples, sample_offset,
            b0 * b0, majorana_mode, rcap * rcap,
            cfg.escape_radius ** 2, 0.05 ** 2)
        sample_offset += n_steps // stride

    phi = np.concatenate([phi0[:, None], phi_samples], axis=1)

    result = ScenarioResult(
        config=cfg,
        scenario_hash=scenario_hash(cfg),
        sample_times=sample_times,
        phi=phi,
        status=status,
        loss_time=loss_time,
        loss_cause=np.where(status > 0, status, 0).astype(np.int8),
        release_time=release_time,
        cloud_index=cloud_index,
        path_length=path_len,
        alive_time=alive_time,
        snapshots=snapshots,
        final_positions=pos,
        final_velocities=vel,
    )
    if majorana_mode == 2:
        _apply_spin_oracle(result, pass_count, pass_data, cfg)
    return result


# ---------------------------------------------------------------------------
# shaping, spin-oracle post-processing, probing, multi-load
# ---------------------------------------------------------------------------

def robust_sigma(samples: np.ndarray) -> float:
    """Median-absolute-deviation spread estimate (consistent for Gaussians)."""
    samples = np.asarray(samples, float)
    med = np.median(samples)
    return 1.4826 * float(np.median(np.abs(samples - med)))


def shaping_mask(arc_positions: np.ndarray, keep_fraction: float,
                 mode: str) -> tuple[np.ndarray, float]:
    """Survivor mask of an azimuthal cut on the given arc coordinates.

    The window is centered on the median and spans keep_fraction of the
    empirical FWHM (2.3548 x robust sigma). Returns (mask, fwhm).
    """
    s = np.asarray(arc_positions, float)
    med = np.median(s)
    fwhm = 2.3548 * robust_sigma(s)
    half = 0.5 * keep_fraction * fwhm
    inside = np.abs(s - med) <= half
    mask = inside if mode == "keep" else ~inside
    return mask, fwhm


def _circular_arc_offsets(phi: np.ndarray, radius: float) -> np.ndarray:
    """Arc distance of each azimuth from the circular cloud center.

    Works on the physical (mod 2 pi) positions, so winding-number differences
    between atoms do not matter; the cut is a spatial laser cut.
    """
    center = math.atan2(float(np.mean(np.sin(phi))), float(np.mean(np.cos(phi))))
    return radius * _wrap_pi(phi - center)


def _apply_shaping(pulse: ShapingPulse, t: float, phi_cont, status, loss_time,
                   ring: RingGeometry):
    alive = status == _engine.ST_ALIVE
    if not np.any(alive):
        return
    arc = _circular_arc_offsets(phi_cont[alive], ring.radius)
    mask, _ = shaping_mask(arc, pulse.keep_fraction, pulse.mode)
    removed_idx = np.nonzero(alive)[0][~mask]
    status[removed_idx] = _engine.ST_SHAPING
    loss_time[removed_idx] = t


def shape_velocity(states, ring: RingGeometry, keep_fraction: float = 0.4,
                   mode: str = "keep") -> list[AtomState]:
    """Apply an azimuthal keep/remove cut to a list of AtomStates.

    Atoms outside (keep) or inside (remove) the window centered on the cloud
    centroid are marked removed-by-shaping. Assumes the longitudinal velocity
    distribution has already mapped onto the azimuthal spatial distribution.
    """
    if mode not in ("keep", "remove"):
        raise InvalidInputError("shaping mode must be 'keep' or 'remove'")
    alive_idx = [i for i, s in enumerate(states) if s.alive]
    if not alive_idx:
        return list(states)
    pos = np.array([states[i].position for i in alive_idx])
    arc = _circular_arc_offsets(_wrapped_phi(pos, ring), ring.radius)
    mask, _ = shaping_mask(arc, keep_fraction, mode)
    out = list(states)
    for j, i in enumerate(alive_idx):
        if not mask[j]:
            out[i] = states[i].mark_lost("shaping")
    return out


def _apply_spin_oracle(result: ScenarioResult, pass_count, pass_data,
                       cfg: ScenarioConfig):
    """Replace disk removal by precession outcomes across recorded close passes."""
    b0 = resolve_loss_radius(cfg)
    rcap = cfg.integrator.capture_mult * b0
    ring = cfg.ring
    for i in np.nonzero(pass_count > 0)[0]:
        for pslot in range(int(pass_count[i])):
            t_pass, u0, w0, vu, vw = pass_data[i, pslot]
            if result.loss_time[i] <= t_pass:
                break
            ig, ir = cfg.schedule.currents(t_pass)
            if ir <= 0:
                continue
            local_guide = GuideGeometry(separation=ring.separation, current=ir,
                                        axis=(0.0, 0.0, 1.0),
                                        separation_axis=(0.0, 1.0, 0.0))
            field = TwoWireGuideField(local_guide, cfg.constants)
            vt = math.hypot(vu, vw)
            if vt <= 0:
                continue
            half_t = 1.5 * rcap / vt
            from .dynamics import Trajectory
            ts = np.linspace(-half_t, half_t, 400)
            # local frame mapping: (x, y) = (-u, w)
            pos = np.stack([-(u0 + vu * ts), w0 + vw * ts, np.zeros_like(ts)], axis=1)
            vel = np.broadcast_to([-vu, vw, 0.0], pos.shape).copy()
            traj = Trajectory(ts, pos, vel,
                              AtomState(tuple(pos[-1]), tuple(vel[-1]), t=float(ts[-1])))
            hist = precess_spin(traj, field, constants=cfg.constants)
            if hist.projections[-1] > 0:
                result.status[i] = _engine.ST_MAJORANA
                result.loss_time[i] = t_pass
                result.loss_cause[i] = _engine.ST_MAJORANA
                break


def probe_trace(result: ScenarioResult, probe: ProbeConfig) -> ProbeTrace:
    """Count atoms crossing the probe window during each pulse.

    An atom registers at delay D if its (unwrapped) azimuth passes through the
    window during [D, D + pulse], it was released before the pulse ends, and
    it is still alive at the pulse start; each atom counts once per pulse.
    Non-destructive probing evaluates every delay on the same propagation
    record, which is exactly the same-seed replay of a one-delay-per-cycle
    protocol because propagation is independent of probing. Destructive mode
    removes counted atoms from later pulses.
    """
    if probe is None or len(probe.delays) == 0:
        raise InvalidInputError("probe needs a non-empty delay list")
    t_last = result.sample_times[-1]
    delays = np.asarray(probe.delays, float)
    if delays[-1] + probe.pulse_duration > t_last + 1e-12:
        raise InvalidInputError("probe delays extend beyond the simulated span")
    two_pi = 2.0 * math.pi
    hw = probe.window / (2.0 * result.config.ring.radius)
    c = probe.azimuth
    signal = np.empty(len(delays))
    removed = np.zeros(result.n_atoms, dtype=bool)
    for di, d in enumerate(delays):
        pa = result.azimuth_at(d)
        pb = result.azimuth_at(d + probe.pulse_duration)
        lo = np.minimum(pa, pb)
        hi = np.maximum(pa, pb)
        k_lo = np.ceil((lo - c - hw) / two_pi)
        k_hi = np.floor((hi - c + hw) / two_pi)
        crossing = k_hi >= k_lo
        counted = (crossing
                   & (result.release_time <= d + probe.pulse_duration)
                   & (result.loss_time > d))
        if probe.destructive:
            counted &= ~removed
            removed |= counted
        signal[di] = float(np.sum(counted))
    return ProbeTrace(delays=delays.copy(), signal=signal,
                      metadata={"seed": result.config.seed,
                                "scenario_hash": result.scenario_hash,
                                "n": result.n_atoms})


def schedule_multi_load(cfg: ScenarioConfig, reload_delay: float, *,
                        transfer_time: float = 16e-3, dip_current: float = 2.0,
                        dip_ramp: float = 10e-3, dip_plateau: float = 20e-3,
                        guide_on_time: float = 5e-3) -> ScenarioConfig:
    """Extend a scenario with a second cloud release and the reload current dip.

    ``reload_delay`` is the release time of the second cloud relative to the
    first; the ring current is dipped to ``dip_current`` beforehand and
    cross-ramped back as the new cloud arrives (reload-mode ramp). The result
    stays single-seed reproducible.
    """
    from .dynamics import build_transfer_ramp
    if not cfg.clouds:
        raise InvalidInputError("base scenario has no cloud to reload")
    first = cfg.clouds[0]
    if reload_delay <= transfer_time:
        raise InvalidInputError("reload delay must exceed the transfer duration")
    t_arrival = first.time + reload_delay
    ramp_start = t_arrival - (guide_on_time + dip_ramp + dip_plateau + transfer_time)
    if ramp_start <= cfg.schedule.t_end:
        raise ScheduleConflictError(
            f"reload ramp at {ramp_start:.4f}s overlaps the existing schedule "
            f"(ends {cfg.schedule.t_end:.4f}s)")
    ramp = build_transfer_ramp(cfg.guide, cfg.ring, transfer_time, mode="reload",
                               t_start=ramp_start, dip_current=dip_current,
                               dip_ramp=dip_ramp, dip_plateau=dip_plateau,
                               guide_on_time=guide_on_time)
    merged = cfg.schedule.merge(ramp)
    second = CloudRelease(cloud=first.cloud, time=t_arrival,
                          azimuth=first.azimuth, guide_offset=first.guide_offset)
    if t_arrival >= cfg.t_end:
        raise InvalidInputError("second release lies beyond the scenario span")
    return replace(cfg, schedule=merged, clouds=cfg.clouds + (second,))
