"""Internal unit system and physical constants.

Internal units: length in Angstrom, mass in amu, time in dimensionless
units (one integrator call advances ``dt`` of them). Energy follows as
amu * A^2 / time_unit^2. The time unit is tied to physical femtoseconds
through the characteristic-velocity construction in
:func:`p5sim.dynamics.timescale_factor_fs`; with the default chain
parameters one time unit is 209.7915273799608 fs.

``AVOGADRO`` is deliberately the rounded 6.022e23 value: together with
``BOLTZMANN_J_PER_K`` it reproduces the published fs-per-time-unit
constant bit for bit, which the conversion tests pin down.
"""

import math

BOLTZMANN_J_PER_K = 1.380649e-23
AVOGADRO = 6.022e23

# 1 amu expressed in kg, consistent with AVOGADRO above.
AMU_KG = 1e-3 / AVOGADRO

ANGSTROM_M = 1e-10

# Default chain parameterization the unit system is anchored to.
MONOMER_MOLAR_MASS = 458.0       # g/mol
BEADS_PER_MONOMER = 7
ROOM_TEMPERATURE_K = 298.0

# kT at 298 K in internal energy units. With the characteristic velocity
# defined by (1/2) m v^2 = 3 kT and v = 1 A per time unit, this is exactly
# m_bead/6 = (458/7)/6 amu A^2 / tu^2, independent of the constants above.
KT_ROOM_INTERNAL = MONOMER_MOLAR_MASS / BEADS_PER_MONOMER / 6.0


def _time_unit_seconds() -> float:
    m_bead = MONOMER_MOLAR_MASS * 1e-3 / (BEADS_PER_MONOMER * AVOGADRO)
    v_char = math.sqrt(6.0 * BOLTZMANN_J_PER_K * ROOM_TEMPERATURE_K / m_bead)
    return ANGSTROM_M / v_char


TIME_UNIT_S = _time_unit_seconds()
TIME_UNIT_FS = TIME_UNIT_S * 1e15

# One internal energy unit (amu A^2 / tu^2) in joules and kJ/mol.
ENERGY_INTERNAL_J = AMU_KG * ANGSTROM_M**2 / TIME_UNIT_S**2
ENERGY_INTERNAL_KJ_PER_MOL = ENERGY_INTERNAL_J * AVOGADRO / 1000.0


def kj_per_mol_to_internal(value: float) -> float:
    """Convert an energy (or energy-derived constant) from kJ/mol."""
    return value / ENERGY_INTERNAL_KJ_PER_MOL
