"""atomring: magnetostatic storage-ring toolkit for cold neutral atoms.

Field evaluation and trap characterization for two-wire guides and wire
rings, symplectic ensemble propagation with spin-flip and background loss
models, pulsed-probe revolution traces, and peak-train fitting.
"""

__version__ = "0.1.0"

from .constants import DEFAULT_CONSTANTS, PhysicalConstants
from .magnetics import (GuideGeometry, JunctionSpec, LinearTaper, RingGeometry,
                        TrapCharacterization, characterize_trap, field_quadrupole,
                        total_potential)
from .biotsavart import ArcWire, LineWire, SegmentWire, field_exact
from .dynamics import (AtomState, IntegratorConfig, RampSchedule, Trajectory,
                       adiabaticity_ratio, build_transfer_ramp,
                       integrate_trajectory, majorana_lifetime_estimate,
                       precess_spin, static_schedule)
from .ensemble import (CloudRelease, CloudSpec, EngineConfig, LossConfig,
                       ProbeConfig, ProbeTrace, ScenarioConfig, ShapingPulse,
                       probe_trace, run_scenario, sample_cloud, scenario_hash,
                       schedule_multi_load, shape_velocity)
from .analysis import (DistributionStats, FitResult, PeakTrainParams,
                       compression_temperature, distribution_stats,
                       fit_peak_train, interferometer_metrics, peak_train_model)
from .scenario_io import load_scenario, parse_scenario, write_scenario

__all__ = [
    "DEFAULT_CONSTANTS", "PhysicalConstants",
    "GuideGeometry", "RingGeometry", "JunctionSpec", "LinearTaper",
    "TrapCharacterization", "characterize_trap", "field_quadrupole",
    "total_potential", "ArcWire", "LineWire", "SegmentWire", "field_exact",
    "AtomState", "IntegratorConfig", "RampSchedule", "Trajectory",
    "adiabaticity_ratio", "build_transfer_ramp", "integrate_trajectory",
    "majorana_lifetime_estimate", "precess_spin", "static_schedule",
    "CloudRelease", "CloudSpec", "EngineConfig", "LossConfig", "ProbeConfig",
    "ProbeTrace", "ScenarioConfig", "ShapingPulse", "probe_trace",
    "run_scenario", "sample_cloud", "scenario_hash", "schedule_multi_load",
    "shape_velocity", "DistributionStats", "FitResult", "PeakTrainParams",
    "compression_temperature", "distribution_stats", "fit_peak_train",
    "interferometer_metrics", "peak_train_model",
    "load_scenario", "parse_scenario", "write_scenario",
]
