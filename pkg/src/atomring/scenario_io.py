"""Scenario files: a YAML key-value tree with explicit units.

Every physical quantity is written as a string "value unit" with the unit
from a fixed allowed set (A, m, mm, um, s, ms, K, uK, G, G/cm); bare numbers
are only legal for dimensionless entries (seed, counts, fractions, angles in
radians, unit flags). Unknown keys are rejected with their full path, and a
seed is mandatory. Parsing normalizes everything to SI; writing emits
canonical SI quantities, so parse(write(doc)) reproduces the same
configuration exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import yaml

from .constants import DEFAULT_CONSTANTS, PhysicalConstants
from .dynamics import build_transfer_ramp, static_schedule
from .ensemble import (CloudRelease, CloudSpec, EngineConfig, LossConfig,
                       ProbeConfig, ScenarioConfig, ShapingPulse,
                       schedule_multi_load)
from .errors import ScenarioParseError
from .magnetics import GuideGeometry, JunctionSpec, LinearTaper, RingGeometry

UNIT_TABLES = {
    "current": {"A": 1.0},
    "length": {"m": 1.0, "mm": 1e-3, "um": 1e-6, "µm": 1e-6},
    "time": {"s": 1.0, "ms": 1e-3},
    "temperature": {"K": 1.0, "uK": 1e-6, "µK": 1e-6},
    "field": {"G": 1e-4},
    "gradient": {"G/cm": 1e-2},
}
CANONICAL_UNIT = {"current": "A", "length": "m", "time": "s",
                  "temperature": "K", "field": "G", "gradient": "G/cm"}


def _parse_quantity(raw, dimension: str, path: str) -> float:
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        raise ScenarioParseError(
            f"{path}: physical quantities need an explicit unit "
            f"(e.g. '8 {CANONICAL_UNIT[dimension]}')")
    if not isinstance(raw, str):
        raise ScenarioParseError(f"{path}: expected 'value unit' string, got {raw!r}")
    parts = raw.split()
    if len(parts) != 2:
        raise ScenarioParseError(f"{path}: expected 'value unit', got {raw!r}")
    try:
        value = float(parts[0])
    except ValueError:
        raise ScenarioParseError(f"{path}: bad numeric value {parts[0]!r}") from None
    table = UNIT_TABLES[dimension]
    if parts[1] not in table:
        allowed = "/".join(sorted(set().union(*[t.keys() for t in UNIT_TABLES.values()])))
        if parts[1] in set().union(*[set(t) for t in UNIT_TABLES.values()]):
            raise ScenarioParseError(
                f"{path}: unit '{parts[1]}' has the wrong dimension for "
                f"{dimension} (expected one of {sorted(table)})")
        raise ScenarioParseError(
            f"{path}: unknown unit '{parts[1]}' (allowed set: {allowed})")
    if not math.isfinite(value):
        raise ScenarioParseError(f"{path}: non-finite value")
    return value * table[parts[1]]


def format_quantity(value: float, dimension: str) -> str:
    unit = CANONICAL_UNIT[dimension]
    return f"{value / UNIT_TABLES[dimension][unit]!r} {unit}"


class _Section:
    """Schema-checked view of one mapping node of the document."""

    def __init__(self, data: dict, path: str):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ScenarioParseError(f"{path}: expected a mapping")
        self.data = data
        self.path = path
        self._seen: set[str] = set()

    def _get(self, key, default):
        self._seen.add(key)
        return self.data.get(key, default)

    def quantity(self, key, dimension, default=None):
        raw = self._get(key, None)
        if raw is None:
            if default is None:
                raise ScenarioParseError(f"{self.path}.{key}: required key missing")
            return default
        return _parse_quantity(raw, dimension, f"{self.path}.{key}")

    def quantity_or_off(self, key, dimension, default="off"):
        raw = self._get(key, default)
        if raw in ("off", "auto", None):
            return None
        return _parse_quantity(raw, dimension, f"{self.path}.{key}")

    def number(self, key, default=None, minimum=None):
        raw = self._get(key, default)
        if raw is None:
            raise ScenarioParseError(f"{self.path}.{key}: required key missing")
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ScenarioParseError(f"{self.path}.{key}: expected a bare number")
        if minimum is not None and raw < minimum:
            raise ScenarioParseError(f"{self.path}.{key}: must be >= {minimum}")
        return float(raw)

    def integer(self, key, default=None, minimum=None):
        raw = self._get(key, default)
        if raw is None:
            raise ScenarioParseError(f"{self.path}.{key}: required key missing")
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ScenarioParseError(f"{self.path}.{key}: expected an integer")
        if minimum is not None and raw < minimum:
            raise ScenarioParseError(f"{self.path}.{key}: must be >= {minimum}")
        return raw

    def boolean(self, key, default=False):
        raw = self._get(key, default)
        if not isinstance(raw, bool):
            raise ScenarioParseError(f"{self.path}.{key}: expected true/false")
        return raw

    def enum(self, key, values, default=None):
        raw = self._get(key, default)
        if raw not in values:
            raise ScenarioParseError(
                f"{self.path}.{key}: expected one of {sorted(values)}, got {raw!r}")
        return raw

    def section(self, key):
        return _Section(self._get(key, {}), f"{self.path}.{key}")

    def has(self, key):
        return key in self.data

    def list_of_sections(self, key):
        raw = self._get(key, [])
        if raw is None:
            raw = []
        if not isinstance(raw, list):
            raise ScenarioParseError(f"{self.path}.{key}: expected a list")
        return [_Section(item, f"{self.path}.{key}[{i}]") for i, item in enumerate(raw)]

    def quantity_list(self, key, dimension):
        raw = self._get(key, [])
        if raw is None:
            raw = []
        if not isinstance(raw, list):
            raise ScenarioParseError(f"{self.path}.{key}: expected a list")
        return [
            _parse_quantity(item, dimension, f"{self.path}.{key}[{i}]")
            for i, item in enumerate(raw)
        ]

    def reject_unknown(self):
        unknown = set(self.data) - self._seen
        if unknown:
            raise ScenarioParseError(
                f"{self.path}: unknown key '{sorted(unknown)[0]}'")


@dataclass
class FieldMapSpec:
    source: str
    axes: tuple[tuple[float, float, int], ...]   # (start, stop, num) per x,y,z


@dataclass
class ScenarioDoc:
    """Normalized (SI) scenario content plus derived run parameters."""

    config: ScenarioConfig
    field_map: FieldMapSpec | None
    canonical: dict               # SI-normalized document for re-writing


def _axis_spec(sec: _Section) -> tuple[float, float, int]:
    start = sec.quantity("start", "length")
    stop = sec.quantity("stop", "length")
    num = sec.integer("num", minimum=1)
    sec.reject_unknown()
    return (start, stop, num)


def load_scenario(path) -> ScenarioDoc:
    """Parse and validate a scenario file into a runnable configuration."""
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ScenarioParseError(f"{path}: YAML syntax error: {exc}") from None
    if raw is None or not isinstance(raw, dict):
        raise ScenarioParseError(f"{path}: scenario must be a key-value mapping")
    root = _Section(raw, "scenario")

    if not root.has("seed"):
        raise ScenarioParseError("scenario.seed: seed required")
    seed = root.integer("seed")

    csec = root.section("constants")
    moment = csec.enum("moment", ("half_bohr", "bohr"), default="half_bohr")
    csec.reject_unknown()
    constants = DEFAULT_CONSTANTS if moment == "half_bohr" \
        else DEFAULT_CONSTANTS.with_moment(DEFAULT_CONSTANTS.muB)

    rsec = root.section("ring")
    plane = rsec.enum("plane", ("vertical", "horizontal"), default="vertical")
    jsec = rsec.section("junction")
    junction_enabled = jsec.boolean("enabled", default=False)
    junction = None
    if junction_enabled:
        junction = JunctionSpec(ripple=jsec.number("ripple", default=0.2, minimum=0.0),
                                extent=jsec.quantity("extent", "length", default=250e-6),
                                azimuth=jsec.number("azimuth", default=0.0))
    else:
        jsec.number("ripple", default=0.2)
        jsec.quantity("extent", "length", default=250e-6)
        jsec.number("azimuth", default=0.0)
    jsec.reject_unknown()
    ring_kw = dict(radius=rsec.quantity("radius", "length", default=0.01),
                   separation=rsec.quantity("separation", "length", default=840e-6),
                   current=rsec.quantity("current", "current", default=8.0),
                   junction=junction)
    ring = RingGeometry.vertical(**ring_kw) if plane == "vertical" \
        else RingGeometry.horizontal(**ring_kw)
    rsec.reject_unknown()

    gsec = root.section("guide")
    g_sep = gsec.quantity("separation", "length", default=840e-6)
    g_cur = gsec.quantity("current", "current", default=8.0)
    entry_azimuth = gsec.number("entry_azimuth", default=math.pi)
    overlap_offset = gsec.quantity("overlap_offset", "length", default=840e-6)
    tsec = gsec.section("taper")
    taper_enabled = tsec.boolean("enabled", default=False)
    taper_wide = tsec.quantity("wide", "length", default=4e-3)
    taper_length = tsec.quantity("length", "length", default=40e-3)
    tsec.reject_unknown()
    gsec.reject_unknown()

    cl = root.section("cloud")
    start = cl.enum("start", ("ring", "guide"), default="ring")
    n_atoms = cl.integer("atoms", minimum=1)
    azimuth = cl.number("azimuth", default=math.pi)
    drop = cl.quantity("drop", "length", default=0.04)
    t_long = cl.quantity("t_longitudinal", "temperature", default=3e-6)
    t_trans = cl.quantity("t_transverse", "temperature", default=57e-6)
    sigma_long = cl.quantity("sigma_long", "length", default=0.5e-3)
    sigma_trans = cl.quantity("sigma_trans", "length", default=1e-4)
    equilibrium = cl.boolean("equilibrium_transverse", default=(start == "ring"))
    release = cl.quantity("release", "time", default=0.0)
    cl.reject_unknown()

    # guide placement: vertical line tangent to the ring at the entry azimuth
    if start == "guide" or g_cur > 0:
        if plane != "vertical" and start == "guide":
            raise ScenarioParseError(
                "scenario.cloud.start: guide starts require ring.plane=vertical "
                "(the guide axis must be vertical for the fall)")
    e1, e2, n_hat = ring.frame()
    entry_point = ring.point_at(entry_azimuth)
    outward = (math.cos(entry_azimuth) * e1 + math.sin(entry_azimuth) * e2)
    anchor = entry_point + overlap_offset * outward
    axis = tuple(ring.tangent_at(entry_azimuth))
    taper = None
    if taper_enabled:
        taper = LinearTaper(z_wide=-taper_length, d_wide=taper_wide,
                            z_narrow=0.0, d_narrow=g_sep)
    guide = GuideGeometry(separation=g_sep, current=g_cur, anchor=tuple(anchor),
                          axis=axis, separation_axis=tuple(n_hat), taper=taper)

    mean_speed = math.sqrt(2.0 * constants.g_grav * drop) if drop > 0 else 0.0
    if start == "ring":
        cloud_release = CloudRelease(
            cloud=CloudSpec(n=n_atoms, sigma=(sigma_long, sigma_trans, sigma_trans),
                            t_longitudinal=t_long, t_transverse=t_trans,
                            mean_speed=mean_speed, equilibrium_transverse=equilibrium),
            time=release, azimuth=azimuth)
    else:
        cloud_release = CloudRelease(
            cloud=CloudSpec(n=n_atoms, sigma=(sigma_long, sigma_trans, sigma_trans),
                            t_longitudinal=t_long, t_transverse=t_trans,
                            mean_speed=0.0, equilibrium_transverse=False),
            time=release, guide_offset=-drop)

    ramps = root.section("ramps")
    mode = ramps.enum("mode", ("none", "load"), default="none")
    transfer_time = ramps.quantity("transfer_time", "time", default=16e-3)
    ramp_start = ramps.quantity("start", "time", default=0.0)
    ramps.reject_unknown()
    if mode == "none":
        schedule = static_schedule(guide=g_cur if start == "guide" else 0.0,
                                   ring=ring.current)
    else:
        schedule = build_transfer_ramp(guide, ring, transfer_time, mode="load",
                                       t_start=ramp_start)

    lsec = root.section("losses")
    tau_bg = lsec.quantity_or_off("background_lifetime", "time")
    majorana = lsec.enum("majorana", ("off", "loss-disk", "spin-oracle"), default="off")
    loss_radius = lsec.quantity_or_off("loss_radius", "length", default="auto")
    kappa = lsec.number("kappa", default=1.0, minimum=0.0)
    lsec.reject_unknown()
    losses = LossConfig(tau_background=tau_bg, majorana=majorana,
                        loss_radius=loss_radius, kappa=kappa)

    psec = root.section("probe")
    probe = None
    if psec.data:
        dsec = psec.section("delays")
        if dsec.has("list"):
            delays = tuple(dsec.quantity_list("list", "time"))
            dsec.reject_unknown()
        else:
            d_start = dsec.quantity("start", "time")
            d_stop = dsec.quantity("stop", "time")
            d_step = dsec.quantity("step", "time")
            dsec.reject_unknown()
            if d_step <= 0 or d_stop <= d_start:
                raise ScenarioParseError("scenario.probe.delays: need stop > start, step > 0")
            count = int(math.floor((d_stop - d_start) / d_step + 1e-9)) + 1
            delays = tuple(d_start + i * d_step for i in range(count))
        probe = ProbeConfig(azimuth=psec.number("azimuth", default=0.0),
                            window=psec.quantity("window", "length", default=1e-3),
                            pulse_duration=psec.quantity("pulse", "time", default=1e-3),
                            delays=delays,
                            destructive=psec.boolean("destructive", default=False))
        psec.reject_unknown()

    shaping = []
    for ssec in root.list_of_sections("shaping"):
        shaping.append(ShapingPulse(time=ssec.quantity("time", "time"),
                                    keep_fraction=ssec.number("keep_fraction", default=0.4,
                                                              minimum=1e-6),
                                    mode=ssec.enum("mode", ("keep", "remove"),
                                                   default="keep")))
        ssec.reject_unknown()

    isec = root.section("integrator")
    integrator = EngineConfig(dt=isec.quantity("dt", "time", default=1e-5),
                              sample_stride=isec.integer("sample_stride", default=50,
                                                         minimum=1))
    isec.reject_unknown()

    t_end = root.quantity("t_end", "time")
    gravity = root.boolean("gravity", default=True)
    escape_radius = root.quantity("escape_radius", "length", default=3e-3)
    snapshot_times = tuple(root.quantity_list("snapshots", "time"))

    cfg = ScenarioConfig(guide=guide, ring=ring, schedule=schedule,
                         clouds=(cloud_release,), seed=seed, t_end=t_end,
                         constants=constants, probe=probe, losses=losses,
                         shaping=tuple(shaping), integrator=integrator,
                         snapshot_times=snapshot_times, gravity=gravity,
                         escape_radius=escape_radius)

    msec = root.section("multiload")
    if msec.boolean("enabled", default=False):
        cfg = schedule_multi_load(
            cfg,
            msec.quantity("reload_delay", "time"),
            transfer_time=msec.quantity("transfer_time", "time", default=16e-3),
            dip_current=msec.quantity("dip_current", "current", default=2.0),
            dip_ramp=msec.quantity("dip_ramp", "time", default=10e-3),
            dip_plateau=msec.quantity("dip_plateau", "time", default=20e-3))
    else:
        msec.quantity_or_off("reload_delay", "time", default="off")
        msec.quantity("transfer_time", "time", default=16e-3)
        msec.quantity("dip_current", "current", default=2.0)
        msec.quantity("dip_ramp", "time", default=10e-3)
        msec.quantity("dip_plateau", "time", default=20e-3)
    msec.reject_unknown()

    osec = root.section("output")
    field_map = None
    fsec = osec.section("field_map")
    if fsec.data:
        source = fsec.enum("source", ("ring", "guide", "composite", "ring-exact"),
                           default="ring")
        axes = tuple(_axis_spec(fsec.section(ax)) for ax in ("x", "y", "z"))
        field_map = FieldMapSpec(source=source, axes=axes)
        fsec.reject_unknown()
    osec.reject_unknown()

    root.reject_unknown()

    # canonical SI re-normalization of everything that was parsed
    q = format_quantity
    canonical: dict = {
        "seed": seed,
        "t_end": q(t_end, "time"),
        "gravity": gravity,
        "escape_radius": q(escape_radius, "length"),
        "constants": {"moment": moment},
        "ring": {
            "radius": q(ring.radius, "length"),
            "separation": q(ring.separation, "length"),
            "current": q(ring.current, "current"),
            "plane": plane,
            "junction": {"enabled": junction is not None,
                         **({"ripple": junction.ripple,
                             "extent": q(junction.extent, "length"),
                             "azimuth": junction.azimuth} if junction else {})},
        },
        "guide": {
            "separation": q(g_sep, "length"),
            "current": q(g_cur, "current"),
            "entry_azimuth": entry_azimuth,
            "overlap_offset": q(overlap_offset, "length"),
            "taper": {"enabled": taper_enabled,
                      **({"wide": q(taper_wide, "length"),
                          "length": q(taper_length, "length")} if taper_enabled else {})},
        },
        "cloud": {
            "atoms": n_atoms,
            "start": start,
            "azimuth": azimuth,
            "drop": q(drop, "length"),
            "t_longitudinal": q(t_long, "temperature"),
            "t_transverse": q(t_trans, "temperature"),
            "sigma_long": q(sigma_long, "length"),
            "sigma_trans": q(sigma_trans, "length"),
            "equilibrium_transverse": equilibrium,
            "release": q(release, "time"),
        },
        "ramps": {"mode": mode, "transfer_time": q(transfer_time, "time"),
                  "start": q(ramp_start, "time")},
        "losses": {
            "background_lifetime": "off" if tau_bg is None else q(tau_bg, "time"),
            "majorana": majorana,
            "loss_radius": "auto" if loss_radius is None else q(loss_radius, "length"),
            "kappa": kappa,
        },
        "integrator": {"dt": q(integrator.dt, "time"),
                       "sample_stride": integrator.sample_stride},
    }
    if probe is not None:
        canonical["probe"] = {
            "azimuth": probe.azimuth,
            "window": q(probe.window, "length"),
            "pulse": q(probe.pulse_duration, "time"),
            "destructive": probe.destructive,
            "delays": {"list": [q(d, "time") for d in probe.delays]},
        }
    if shaping:
        canonical["shaping"] = [{"time": q(s.time, "time"),
                                 "keep_fraction": s.keep_fraction, "mode": s.mode}
                                for s in shaping]
    if snapshot_times:
        canonical["snapshots"] = [q(t, "time") for t in snapshot_times]
    if field_map is not None:
        canonical["output"] = {"field_map": {
            "source": field_map.source,
            **{ax: {"start": q(a[0], "length"), "stop": q(a[1], "length"), "num": a[2]}
               for ax, a in zip(("x", "y", "z"), field_map.axes)},
        }}
    if len(cfg.clouds) > 1:
        ml = root.section("multiload")
        canonical["multiload"] = {
            "enabled": True,
            "reload_delay": q(ml.quantity("reload_delay", "time"), "time"),
            "transfer_time": q(ml.quantity("transfer_time", "time", default=16e-3), "time"),
            "dip_current": q(ml.quantity("dip_current", "current", default=2.0), "current"),
            "dip_ramp": q(ml.quantity("dip_ramp", "time", default=10e-3), "time"),
            "dip_plateau": q(ml.quantity("dip_plateau", "time", default=20e-3), "time"),
        }
    return ScenarioDoc(config=cfg, field_map=field_map, canonical=canonical)


def parse_scenario(path) -> ScenarioConfig:
    """Convenience wrapper returning just the runnable configuration."""
    return load_scenario(path).config


def write_scenario(doc_or_canonical, path):
    """Write a canonical scenario document as YAML."""
    canonical = doc_or_canonical.canonical if isinstance(doc_or_canonical, ScenarioDoc) \
        else doc_or_canonical
    with open(path, "w") as fh:
        yaml.safe_dump(canonical, fh, sort_keys=True, default_flow_style=False)
