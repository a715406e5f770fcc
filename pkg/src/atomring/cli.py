"""Command-line front end: scenario-file driven runs with file outputs.

Subcommands: field-map, characterize, simulate, fit, shape, report.
Exit codes: 0 success, 1 validation error, 2 numeric failure. All errors go
to stderr as ``ERROR:<category>: message``. Every output file embeds the
scenario hash and tool version; ``report`` refuses to combine files whose
hashes disagree.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import fit_peak_train, interferometer_metrics
from .biotsavart import BiotSavartField, ring_elements
from .constants import DEFAULT_CONSTANTS
from .ensemble import probe_trace, run_scenario, scenario_hash
from .errors import AtomRingError, InvalidInputError
from .magnetics import (CompositeField, RingField, TwoWireGuideField,
                        characterize_trap, export_field_map)
from .scenario_io import load_scenario

OUT_ENV_VAR = "ATOMRING_OUT"

# Nominal apparatus reference values used in report comparison tables.
REFERENCE_VALUES = {
    "field_gradient_G_per_cm": 1800.0,
    "trap_depth_mK": 2.5,
    "mean_trap_frequency_Hz": 590.0,
    "orbit_period_ms": 81.0,
    "mean_orbital_speed_cm_per_s": 85.0,
    "ring_lifetime_ms": 180.0,
    "azimuthal_temperature_uK": 3.4,
    "transverse_temperature_uK": 57.0,
    "loss_radius_um": 0.6,
    "spin_flip_lifetime_ms": 300.0,
    "guided_path_m": 0.5,
    "enclosed_area_mm2": 4400.0,
    "speed_ratio_initial": 50.0,
    "speed_ratio_shaped": 125.0,
}


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="atomring",
        description="Neutral-atom storage-ring simulator and analysis toolkit")
    p.add_argument("--version", action="version", version=f"atomring {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in [
            ("field-map", "export the configured field on a grid as CSV"),
            ("characterize", "static trap characterization of guide and ring"),
            ("simulate", "propagate the scenario and write trace + summary"),
            ("fit", "fit the peak-train model to a simulated trace"),
            ("shape", "simulate with the scenario's shaping pulses (required)"),
            ("report", "combine prior outputs into a human-readable report")]:
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--scenario", required=True, help="scenario YAML file")
        sp.add_argument("--out", default=None, help=f"output directory "
                        f"(default ${OUT_ENV_VAR} or ./atomring-out)")
        sp.add_argument("--seed", type=int, default=None, help="override scenario seed")
        sp.add_argument("--workers", type=int, default=None,
                        help="propagation worker threads (does not affect results)")
        sp.add_argument("--format", choices=("csv", "json"), default="csv",
                        help="trace output format")
    return p


def _outdir(args) -> Path:
    out = args.out or os.environ.get(OUT_ENV_VAR) or "atomring-out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load(args):
    doc = load_scenario(args.scenario)
    cfg = doc.config
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
        doc.config = cfg
    return doc, cfg, scenario_hash(cfg)


def _meta(sha: str, cfg) -> dict:
    return {"scenario_hash": sha, "tool_version": __version__, "seed": cfg.seed}


def _write_json(path: Path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_field_map(args) -> int:
    doc, cfg, sha = _load(args)
    if doc.field_map is None:
        raise InvalidInputError("scenario has no output.field_map section")
    spec = doc.field_map
    if spec.source == "ring":
        field = RingField(cfg.ring, cfg.constants)
    elif spec.source == "guide":
        field = TwoWireGuideField(cfg.guide, cfg.constants)
    elif spec.source == "composite":
        field = CompositeField([TwoWireGuideField(cfg.guide, cfg.constants),
                                RingField(cfg.ring, cfg.constants)])
    else:
        field = BiotSavartField(ring_elements(cfg.ring), junction=cfg.ring,
                                constants=cfg.constants)
    axes = [np.linspace(a, b, n) for (a, b, n) in spec.axes]
    out = _outdir(args) / "field_map.csv"
    n_rows = export_field_map(field, *axes, out, metadata=_meta(sha, cfg))
    print(f"wrote {out} ({n_rows} grid points)")
    return 0


def _characterization_dict(geom, cfg, kappa):
    both = {}
    for label, constants in (("half_bohr", cfg.constants.with_moment(cfg.constants.muB / 2.0)),
                             ("bohr", cfg.constants.with_moment(cfg.constants.muB))):
        e_th = cfg.constants.kB * cfg.clouds[0].cloud.t_transverse
        ch = characterize_trap(geom, constants, e_th, kappa=kappa)
        both[label] = {
            "gradient_T_per_m": ch.gradient_center,
            "gradient_G_per_cm": ch.gradient_center * 100.0,
            "saddle_field_T": ch.saddle_field,
            "depth_J": ch.depth_J,
            "depth_mK": ch.depth_K * 1e3,
            "effective_frequency_Hz": ch.effective_frequency,
            "loss_radius_um": ch.loss_radius * 1e6,
        }
    return both


def _cmd_characterize(args) -> int:
    doc, cfg, sha = _load(args)
    payload = {
        **_meta(sha, cfg),
        "guide": _characterization_dict(cfg.guide, cfg, cfg.losses.kappa),
        "ring": _characterization_dict(cfg.ring, cfg, cfg.losses.kappa),
        "moment_note": ("depth scales with the moment convention: both the "
                        "half-Bohr-magneton default and the full Bohr magneton "
                        "are reported"),
    }
    out = _outdir(args)
    _write_json(out / "characterize.json", payload)
    with open(out / "characterize.txt", "w") as fh:
        fh.write(f"# scenario_hash={sha} tool_version={__version__}\n")
        for geom in ("guide", "ring"):
            fh.write(f"\n[{geom}]\n")
            for conv in ("half_bohr", "bohr"):
                c = payload[geom][conv]
                fh.write(f"  moment={conv}: gradient {c['gradient_G_per_cm']:.1f} G/cm, "
                         f"depth {c['depth_mK']:.3f} mK, "
                         f"f_eff {c['effective_frequency_Hz']:.0f} Hz, "
                         f"b0 {c['loss_radius_um']:.3f} um\n")
    print(f"wrote {out / 'characterize.json'}")
    return 0


def _write_trace(trace, out: Path, fmt: str, name: str = "trace") -> Path:
    if fmt == "json":
        path = out / f"{name}.json"
        payload = {**trace.metadata,
                   "delay_s": [float(d) for d in trace.delays],
                   "signal": [float(s) for s in trace.signal]}
        _write_json(path, payload)
    else:
        path = out / f"{name}.csv"
        trace.export_csv(path)
    return path


def _run_and_write(args, require_shaping: bool) -> int:
    doc, cfg, sha = _load(args)
    if require_shaping and not cfg.shaping:
        raise InvalidInputError("shape requires a non-empty shaping section")
    if cfg.probe is None:
        raise InvalidInputError("simulate requires a probe section")
    result = run_scenario(cfg, workers=args.workers)
    trace = probe_trace(result, cfg.probe)
    trace.metadata.update(_meta(sha, cfg))
    out = _outdir(args)
    path = _write_trace(trace, out, args.format)
    summary = result.summary_dict()
    summary.update(_meta(sha, cfg))
    _write_json(out / "summary.json", summary)
    print(f"wrote {path} and {out / 'summary.json'}")
    return 0


def _cmd_simulate(args) -> int:
    return _run_and_write(args, require_shaping=False)


def _cmd_shape(args) -> int:
    return _run_and_write(args, require_shaping=True)


def _probe_width(cfg) -> float:
    # equivalent Gaussian width of the top-hat pulse and window transit
    v = cfg.clouds[0].cloud.mean_speed or 0.8857
    return math.sqrt((cfg.probe.pulse_duration ** 2 + (cfg.probe.window / v) ** 2) / 12.0)


def _cmd_fit(args) -> int:
    doc, cfg, sha = _load(args)
    out = _outdir(args)
    trace_csv = out / "trace.csv"
    trace_json = out / "trace.json"
    if trace_csv.exists():
        rows = np.loadtxt(trace_csv, delimiter=",", skiprows=2)
        with open(trace_csv) as fh:
            header = fh.readline()
        if sha not in header:
            raise InvalidInputError(
                f"trace {trace_csv} was produced for a different scenario (hash mismatch)")
        t, y = rows[:, 0], rows[:, 1]
    elif trace_json.exists():
        payload = json.loads(trace_json.read_text())
        if payload.get("scenario_hash") != sha:
            raise InvalidInputError("trace.json hash does not match the scenario")
        t = np.asarray(payload["delay_s"])
        y = np.asarray(payload["signal"])
    else:
        raise InvalidInputError(f"no trace.csv/trace.json in {out}; run simulate first")
    summary_path = out / "summary.json"
    v_bar = None
    if summary_path.exists():
        summary = json.loads(summary_path.read_text())
        if summary.get("scenario_hash") == sha:
            v_bar = summary.get("mean_orbital_speed")
    if v_bar is None:
        v_bar = cfg.clouds[0].cloud.mean_speed or 0.8857
    fit = fit_peak_train((t, y), v_bar=v_bar, probe_width=_probe_width(cfg))
    payload = {**_meta(sha, cfg), **fit.to_dict(), "v_bar_used": v_bar}
    p = fit.params
    payload["derived"] = {
        "azimuthal_temperature_uK": cfg.constants.mass * p.sigma_v ** 2
        / cfg.constants.kB * 1e6,
        "period_ms": p.period * 1e3,
        "lifetime_ms": p.tau * 1e3,
    }
    _write_json(out / "fit.json", payload)
    print(f"wrote {out / 'fit.json'} (tau={p.tau * 1e3:.1f} ms, "
          f"T={p.period * 1e3:.2f} ms, converged={fit.converged})")
    return 0


def _fmt_row(name, value, reference, note=""):
    ref = f"{reference:g}" if reference is not None else "-"
    val = f"{value:.4g}" if isinstance(value, (int, float)) and math.isfinite(value) else str(value)
    return f"  {name:<34} {val:>12}  {ref:>10}  {note}\n"


def _cmd_report(args) -> int:
    doc, cfg, sha = _load(args)
    out = _outdir(args)
    sources = {}
    for name in ("characterize", "summary", "fit"):
        path = out / f"{name}.json"
        if path.exists():
            payload = json.loads(path.read_text())
            if payload.get("scenario_hash") != sha:
                raise InvalidInputError(
                    f"{path} has scenario hash {payload.get('scenario_hash')!r}, "
                    f"expected {sha} - refusing to combine mismatched outputs")
            sources[name] = payload
    if not sources:
        raise InvalidInputError(f"no outputs found in {out}; run the other commands first")

    lines = [f"# scenario_hash={sha} tool_version={__version__} seed={cfg.seed}\n",
             "\nQuantity                               simulated   reference  note\n"]
    ref = REFERENCE_VALUES
    if "characterize" in sources:
        ring = sources["characterize"]["ring"]
        lines.append(_fmt_row("ring gradient (G/cm)",
                              ring["half_bohr"]["gradient_G_per_cm"],
                              ref["field_gradient_G_per_cm"]))
        lines.append(_fmt_row("ring depth, moment=bohr (mK)",
                              ring["bohr"]["depth_mK"], ref["trap_depth_mK"],
                              "moment convention note in characterize.json"))
        lines.append(_fmt_row("ring depth, moment=half_bohr (mK)",
                              ring["half_bohr"]["depth_mK"], None))
        lines.append(_fmt_row("effective trap frequency (Hz)",
                              ring["half_bohr"]["effective_frequency_Hz"],
                              ref["mean_trap_frequency_Hz"],
                              "1-D linear-well definition; reference uses an unstated one"))
        lines.append(_fmt_row("loss radius b0 (um)",
                              ring["half_bohr"]["loss_radius_um"],
                              ref["loss_radius_um"], "kappa=%g" % cfg.losses.kappa))
    if "summary" in sources:
        lines.append(_fmt_row("mean orbital speed (cm/s)",
                              sources["summary"]["mean_orbital_speed"] * 100.0,
                              ref["mean_orbital_speed_cm_per_s"]))
    if "fit" in sources:
        d = sources["fit"]["derived"]
        lines.append(_fmt_row("orbit period (ms)", d["period_ms"],
                              ref["orbit_period_ms"]))
        lines.append(_fmt_row("ring lifetime (ms)", d["lifetime_ms"],
                              ref["ring_lifetime_ms"]))
        lines.append(_fmt_row("azimuthal temperature (uK)",
                              d["azimuthal_temperature_uK"],
                              ref["azimuthal_temperature_uK"]))
    n_rev = 7
    metrics_pair = interferometer_metrics(n_rev, cfg.ring.radius, "sagnac-pair")
    metrics_single = interferometer_metrics(n_rev, cfg.ring.radius, "single-path")
    lines.append(_fmt_row(f"guided path, {n_rev} revolutions (m)",
                          metrics_pair["guided_path"], ref["guided_path_m"]))
    lines.append(_fmt_row("enclosed area, sagnac-pair (mm^2)",
                          metrics_pair["enclosed_area"] * 1e6, ref["enclosed_area_mm2"]))
    lines.append(_fmt_row("enclosed area, single-path (mm^2)",
                          metrics_single["enclosed_area"] * 1e6, None))
    report_path = out / "report.txt"
    with open(report_path, "w") as fh:
        fh.writelines(lines)
    sys.stdout.write("".join(lines))
    print(f"wrote {report_path}")
    return 0


_COMMANDS = {
    "field-map": _cmd_field_map,
    "characterize": _cmd_characterize,
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "shape": _cmd_shape,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except AtomRingError as exc:
        print(f"ERROR:{exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"ERROR:io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
