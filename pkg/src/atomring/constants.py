"""Physical constants and unit conversions.

Everything internal is SI. The converters at the bottom exist for the CLI and
report layers only; library code never passes gauss or millikelvin around.

The default atomic parameters describe the F=1, mF=-1 ground state of 87Rb in
the weak-field-seeking convention: the trapping potential is +mu_m*|B| with
mu_m = |gF*mF|*muB > 0. Some published trap-depth figures for this system are
only consistent with a full Bohr magneton, so ``with_moment`` makes it cheap
to evaluate both conventions side by side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

MU0 = 4.0e-7 * math.pi          # vacuum permeability, T*m/A
HBAR = 1.054571817e-34          # reduced Planck constant, J*s
KB = 1.380649e-23               # Boltzmann constant, J/K
G_GRAV = 9.80665                # standard gravity, m/s^2
MASS_RB87 = 1.44316e-25         # 87Rb mass, kg
MU_B = 9.2740100783e-24         # Bohr magneton, J/T


@dataclass(frozen=True)
class PhysicalConstants:
    """Immutable bundle of the constants a simulation run depends on.

    ``mu_m`` is the effective magnetic-moment magnitude used in U = +mu_m*|B|.
    If not given it defaults to |gF*mF|*muB.
    """

    mu0: float = MU0
    hbar: float = HBAR
    kB: float = KB
    g_grav: float = G_GRAV
    mass: float = MASS_RB87
    muB: float = MU_B
    gF: float = -0.5
    mF: float = -1.0
    mu_m: float | None = None

    def __post_init__(self):
        if self.mu_m is None:
            object.__setattr__(self, "mu_m", abs(self.gF * self.mF) * self.muB)
        for name in ("mu0", "hbar", "kB", "g_grav", "mass", "muB", "mu_m"):
            value = getattr(self, name)
            if not (value > 0.0 and math.isfinite(value)):
                raise ValueError(f"constant {name} must be positive and finite, got {value}")

    def with_moment(self, mu_m: float) -> "PhysicalConstants":
        """Copy with a different effective moment (e.g. a full Bohr magneton)."""
        return replace(self, mu_m=mu_m)

    def thermal_speed(self, temperature: float) -> float:
        """One-dimensional thermal speed sqrt(kB*T/m)."""
        return math.sqrt(self.kB * temperature / self.mass)


DEFAULT_CONSTANTS = PhysicalConstants()

# --- unit conversions (CLI/report boundary only) ---

TESLA_TO_GAUSS = 1.0e4
TPM_TO_GAUSS_PER_CM = 1.0e2    # 1 T/m = 100 G/cm


def tesla_to_gauss(b: float) -> float:
    return b * TESLA_TO_GAUSS


def gauss_to_tesla(b: float) -> float:
    return b / TESLA_TO_GAUSS


def tpm_to_gauss_per_cm(g: float) -> float:
    return g * TPM_TO_GAUSS_PER_CM


def joule_to_kelvin(e: float) -> float:
    return e / KB


def kelvin_to_joule(t: float) -> float:
    return t * KB
