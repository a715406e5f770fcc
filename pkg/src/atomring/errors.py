"""Exception taxonomy shared across the toolkit.

Categories map one-to-one onto the CLI error prefixes (``ERROR:<category>:``)
and exit codes: validation-type errors exit 1, numeric failures exit 2.
"""


class AtomRingError(Exception):
    """Base class for all toolkit errors."""

    category = "error"
    exit_code = 1


class InvalidInputError(AtomRingError):
    """Bad argument values: non-finite positions, empty delay lists, N=0, ..."""

    category = "input"


class GeometryError(AtomRingError):
    """Geometry without the required structure (e.g. no field zero between wires)."""

    category = "geometry"


class SingularityError(AtomRingError):
    """Field evaluation requested on (or numerically too close to) a wire."""

    category = "singularity"
    exit_code = 2


class NumericError(AtomRingError):
    """Non-convergent searches, non-finite forces, step-count overflow."""

    category = "numeric"
    exit_code = 2


class AccuracyError(NumericError):
    """Discretization too coarse for the requested quantity (e.g. spin substeps)."""

    category = "accuracy"


class StatisticsError(AtomRingError):
    """Not enough surviving samples to estimate the requested quantity."""

    category = "statistics"


class ScheduleConflictError(AtomRingError):
    """Overlapping or non-monotone entries in a current schedule."""

    category = "schedule"


class InitializationError(AtomRingError):
    """Fit initialization failed (e.g. no discernible peaks in a trace)."""

    category = "initialization"


class ScenarioParseError(AtomRingError):
    """Scenario file violates the schema (unknown key, bad unit, missing seed)."""

    category = "parse"
