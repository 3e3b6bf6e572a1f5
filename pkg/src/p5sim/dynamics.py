"""Langevin integration, monomer rotations, transition densities, time scaling.

The integrator is underdamped Euler-Maruyama with friction gamma and
temperature kT (internal energy units):

    v' = v + ((F_sys + F_ext)/m - gamma v) dt + sqrt(2 gamma kT dt / m) xi
    r' = r + v' dt
    w' = w - gamma w dt + sqrt(2 gamma kT dt / I) xi_rot

with xi, xi_rot independent standard-normal 3-vectors per bead, drawn from
the supplied generator in exactly that order on every step. Bead angular
velocities are friction-damped noise channels feeding the observation; the
chain geometry itself is carried entirely by positions.

Every step consumes two (N, 3) standard-normal draws even when their scale
is zero, so identically-seeded runs stay aligned across parameter changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateTransitionError, GeometryError, IntegrationError
from .topology import Topology
from .units import (
    AVOGADRO,
    BEADS_PER_MONOMER,
    BOLTZMANN_J_PER_K,
    KT_ROOM_INTERNAL,
    MONOMER_MOLAR_MASS,
    ROOM_TEMPERATURE_K,
)

__all__ = [
    "SystemState",
    "LangevinParams",
    "TimescaleParams",
    "MonomerRotationPlan",
    "langevin_step",
    "apply_monomer_rotation",
    "apply_backbone_rotations",
    "timescale_factor_fs",
    "transition_log_density",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class SystemState:
    positions: np.ndarray           # (N, 3) Angstrom
    velocities: np.ndarray          # (N, 3) Angstrom / time unit
    angular_velocities: np.ndarray  # (N, 3) rad / time unit
    step: int = 0

    @property
    def n_beads(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> "SystemState":
        return SystemState(
            self.positions.copy(),
            self.velocities.copy(),
            self.angular_velocities.copy(),
            self.step,
        )

    @classmethod
    def at_rest(cls, positions: np.ndarray, step: int = 0) -> "SystemState":
        pos = np.asarray(positions, dtype=float)
        return cls(pos, np.zeros_like(pos), np.zeros_like(pos), step)


@dataclass
class LangevinParams:
    dt: float = 0.002
    gamma: float = 0.1          # 1 / time unit
    kT: float = KT_ROOM_INTERNAL
    masses: np.ndarray = None   # (N,) amu
    inertias: np.ndarray = None  # (N,) amu A^2, solid sphere (2/5) m R^2

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.gamma < 0 or self.kT < 0:
            raise ValueError("gamma and kT must be >= 0")
        if self.masses is None or self.inertias is None:
            raise ValueError("masses and inertias are required (use for_topology)")
        self.masses = np.asarray(self.masses, dtype=float)
        self.inertias = np.asarray(self.inertias, dtype=float)
        if (self.masses <= 0).any() or (self.inertias <= 0).any():
            raise ValueError("masses and inertias must be positive")
        # hot-loop constants
        self._inv_m = 1.0 / self.masses[:, None]
        self._sigma_v = np.sqrt(2.0 * self.gamma * self.kT * self.dt / self.masses)[:, None]
        self._sigma_w = np.sqrt(2.0 * self.gamma * self.kT * self.dt / self.inertias)[:, None]

    @classmethod
    def for_topology(
        cls,
        topo: Topology,
        dt: float = 0.002,
        gamma: float = 0.1,
        kT: float = KT_ROOM_INTERNAL,
    ) -> "LangevinParams":
        masses = topo.masses()
        radii = topo.vdw_diameters() / 2.0
        return cls(dt=dt, gamma=gamma, kT=kT, masses=masses,
                   inertias=0.4 * masses * radii**2)


def _assert_finite(name: str, arr: np.ndarray) -> None:
    # summing is cheap and poisons on any NaN/Inf entry
    if not np.isfinite(np.sum(arr)):
        raise IntegrationError(f"non-finite values in {name}")


def langevin_step(
    state: SystemState,
    systematic_forces: np.ndarray,
    external_forces: np.ndarray,
    params: LangevinParams,
    rng: np.random.Generator,
) -> SystemState:
    """Advance one timestep; deterministic for a fixed (state, forces, seed)."""
    n = state.n_beads
    f_sys = np.asarray(systematic_forces, dtype=float)
    f_ext = np.asarray(external_forces, dtype=float)
    if f_sys.shape != (n, 3) or f_ext.shape != (n, 3):
        raise IntegrationError("force array shape does not match bead count")
    dt, gamma = params.dt, params.gamma

    xi = rng.standard_normal((n, 3))
    xi_rot = rng.standard_normal((n, 3))

    v_new = (
        state.velocities
        + ((f_sys + f_ext) * params._inv_m - gamma * state.velocities) * dt
        + params._sigma_v * xi
    )
    r_new = state.positions + v_new * dt
    w_new = state.angular_velocities * (1.0 - gamma * dt) + params._sigma_w * xi_rot

    # Every input feeds at least one output, so a single probe of the outputs
    # catches NaN/Inf anywhere; on failure, name the offending array.
    if not np.isfinite(np.sum(v_new) + np.sum(r_new) + np.sum(w_new)):
        for name, arr in (
            ("positions", state.positions),
            ("velocities", state.velocities),
            ("angular_velocities", state.angular_velocities),
            ("systematic_forces", f_sys),
            ("external_forces", f_ext),
            ("updated velocities", v_new),
            ("updated positions", r_new),
        ):
            _assert_finite(name, arr)
        raise IntegrationError("non-finite integrator output")
    return SystemState(r_new, v_new, w_new, state.step + 1)


# ---------------------------------------------------------------------------
# Monomer rotation action
# ---------------------------------------------------------------------------


class MonomerRotationPlan:
    """Per-monomer pivot, axis partner, and movable-bead indices.

    The rotation axis of monomer m runs through its backbone bead along the
    backbone bond arriving from monomer m-1 (the first monomer uses its bond
    to monomer 1). Only non-backbone beads of the monomer move, so rotations
    of different monomers commute.
    """

    def __init__(self, topo: Topology):
        bb = topo.backbone_order
        self.pivots = list(bb)
        self.axis_partners = []
        for m in range(topo.n_monomers):
            if topo.n_monomers == 1:
                self.axis_partners.append(None)
            elif m == 0:
                self.axis_partners.append(bb[1])
            else:
                self.axis_partners.append(bb[m - 1])
        self.movers = [
            np.array([i for i in members if i != bb[m]], dtype=np.intp)
            for m, members in enumerate(topo.monomer_members())
        ]
        # uniform mover counts allow one-shot batched rotation
        sizes = {mv.size for mv in self.movers}
        if len(sizes) == 1 and sizes != {0} and topo.n_monomers > 1:
            self.movers_matrix = np.stack(self.movers)
            self.pivot_arr = np.array(self.pivots, dtype=np.intp)
            self.partner_arr = np.array(self.axis_partners, dtype=np.intp)
            self.axis_sign = np.ones(topo.n_monomers)
            self.axis_sign[0] = -1.0
        else:
            self.movers_matrix = None


def _rotate_movers(positions: np.ndarray, pivot: np.ndarray, axis_unit: np.ndarray,
                   theta: float, movers: np.ndarray) -> None:
    """Rodrigues rotation of ``movers`` about (pivot, axis), in place."""
    c, s = math.cos(theta), math.sin(theta)
    rel = positions[movers] - pivot
    dot = rel @ axis_unit
    crossed = np.empty_like(rel)
    crossed[:, 0] = axis_unit[1] * rel[:, 2] - axis_unit[2] * rel[:, 1]
    crossed[:, 1] = axis_unit[2] * rel[:, 0] - axis_unit[0] * rel[:, 2]
    crossed[:, 2] = axis_unit[0] * rel[:, 1] - axis_unit[1] * rel[:, 0]
    positions[movers] = (
        pivot + rel * c + crossed * s + axis_unit * ((1.0 - c) * dot)[:, None]
    )


def _monomer_axis(state: SystemState, plan: MonomerRotationPlan, monomer: int) -> np.ndarray:
    partner = plan.axis_partners[monomer]
    pivot = state.positions[plan.pivots[monomer]]
    if monomer == 0:
        axis = state.positions[partner] - pivot
    else:
        axis = pivot - state.positions[partner]
    norm = math.sqrt(axis @ axis)
    if norm < 1e-10:
        raise GeometryError(
            f"rotation axis of monomer {monomer} degenerate: backbone beads "
            f"{plan.pivots[monomer]} and {partner} coincide"
        )
    return axis / norm


def apply_monomer_rotation(
    state: SystemState,
    topo: Topology,
    monomer: int,
    theta: float,
    plan: MonomerRotationPlan | None = None,
) -> SystemState:
    """Rigidly rotate a monomer's non-backbone beads about its backbone axis.

    theta = 0 returns the input state unchanged. A single-monomer chain has
    no backbone axis, so the rotation is a no-op there as well.
    """
    if not 0 <= monomer < topo.n_monomers:
        raise ValueError(f"monomer {monomer} outside 0..{topo.n_monomers - 1}")
    if theta == 0.0:
        return state
    p = plan if plan is not None else MonomerRotationPlan(topo)
    if p.axis_partners[monomer] is None or p.movers[monomer].size == 0:
        return state
    axis = _monomer_axis(state, p, monomer)
    new_pos = state.positions.copy()
    _rotate_movers(new_pos, state.positions[p.pivots[monomer]], axis, theta,
                   p.movers[monomer])
    return SystemState(new_pos, state.velocities, state.angular_velocities, state.step)


def apply_backbone_rotations(
    state: SystemState,
    topo: Topology,
    thetas: np.ndarray,
    plan: MonomerRotationPlan | None = None,
) -> SystemState:
    """Apply per-monomer rotations in monomer order with one position copy.

    Rotations touch disjoint bead sets and their axes depend only on
    backbone beads, which never move, so the result equals chaining
    :func:`apply_monomer_rotation` monomer by monomer.
    """
    thetas = np.asarray(thetas, dtype=float)
    if thetas.shape != (topo.n_monomers,):
        raise ValueError(f"need one angle per monomer, got shape {thetas.shape}")
    if not thetas.any():
        return state
    p = plan if plan is not None else MonomerRotationPlan(topo)
    pos = state.positions
    if p.movers_matrix is not None:
        pivots = pos[p.pivot_arr]                          # (B, 3)
        axes = (pivots - pos[p.partner_arr]) * p.axis_sign[:, None]
        norms = np.sqrt(np.einsum("ij,ij->i", axes, axes))
        if (norms < 1e-10).any():
            m = int(np.nonzero(norms < 1e-10)[0][0])
            raise GeometryError(
                f"rotation axis of monomer {m} degenerate: backbone beads "
                f"{p.pivots[m]} and {p.axis_partners[m]} coincide"
            )
        axes /= norms[:, None]
        c = np.cos(thetas)[:, None, None]
        s = np.sin(thetas)[:, None, None]
        rel = pos[p.movers_matrix] - pivots[:, None, :]    # (B, k, 3)
        dot = np.einsum("bkj,bj->bk", rel, axes)
        ax = axes[:, None, :]
        crossed = np.empty_like(rel)
        crossed[..., 0] = ax[..., 1] * rel[..., 2] - ax[..., 2] * rel[..., 1]
        crossed[..., 1] = ax[..., 2] * rel[..., 0] - ax[..., 0] * rel[..., 2]
        crossed[..., 2] = ax[..., 0] * rel[..., 1] - ax[..., 1] * rel[..., 0]
        rotated = pivots[:, None, :] + rel * c + crossed * s + ax * (
            (1.0 - c[..., 0]) * dot
        )[..., None]
        new_pos = pos.copy()
        new_pos[p.movers_matrix.ravel()] = rotated.reshape(-1, 3)
        # angles equal to zero must leave their monomer untouched bit for bit
        idle = np.nonzero(thetas == 0.0)[0]
        for m in idle:
            new_pos[p.movers_matrix[m]] = pos[p.movers_matrix[m]]
    else:
        new_pos = pos.copy()
        for m in range(topo.n_monomers):
            if thetas[m] == 0.0 or p.axis_partners[m] is None or p.movers[m].size == 0:
                continue
            axis = _monomer_axis(state, p, m)
            _rotate_movers(new_pos, pos[p.pivots[m]], axis, thetas[m], p.movers[m])
    return SystemState(new_pos, state.velocities, state.angular_velocities, state.step)


# ---------------------------------------------------------------------------
# Timescale conversion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimescaleParams:
    characteristic_length_angstrom: float = 1.0
    monomer_molar_mass: float = MONOMER_MOLAR_MASS  # g/mol
    beads_per_monomer: int = BEADS_PER_MONOMER
    temperature: float = ROOM_TEMPERATURE_K         # K
    boltzmann: float = BOLTZMANN_J_PER_K            # J/K
    avogadro: float = AVOGADRO                      # 1/mol


def timescale_factor_fs(p: TimescaleParams = TimescaleParams()) -> float:
    """Femtoseconds per dimensionless time unit, tau = r / v_char.

    The characteristic velocity is sqrt(6 kT / m_bead) with the bead mass
    from the monomer molar mass split evenly over its beads. The defaults
    give 209.7915273799608 fs.
    """
    vals = (
        p.characteristic_length_angstrom,
        p.monomer_molar_mass,
        p.beads_per_monomer,
        p.temperature,
        p.boltzmann,
        p.avogadro,
    )
    if any(v <= 0 for v in vals):
        raise ValueError("all timescale parameters must be positive")
    m_bead = p.monomer_molar_mass * 1e-3 / (p.beads_per_monomer * p.avogadro)
    v_char = math.sqrt(6.0 * p.boltzmann * p.temperature / m_bead)
    return (p.characteristic_length_angstrom * 1e-10 / v_char) * 1e15


# ---------------------------------------------------------------------------
# Transition log-density
# ---------------------------------------------------------------------------


def transition_log_density(
    prev: SystemState,
    next_state: SystemState,
    applied_forces: np.ndarray,
    params: LangevinParams,
    include_angular: bool = True,
) -> float:
    """Log density of one integrator transition, inverting the update map.

    Recovers the implied noise from the velocity (and, optionally, angular
    velocity) updates and sums standard-normal log densities minus the
    log-Jacobian of the noise-to-velocity scaling. Positions are a
    deterministic function of the new velocities, so they contribute no
    density term; post-step rotations move positions only and leave the
    recovered noise intact.
    """
    if next_state.step != prev.step + 1:
        raise DegenerateTransitionError(
            f"next.step {next_state.step} != prev.step {prev.step} + 1"
        )
    if params.kT <= 0.0 or params.gamma <= 0.0:
        raise DegenerateTransitionError(
            "transition density undefined for kT=0 or gamma=0"
        )
    f = np.asarray(applied_forces, dtype=float)
    n = prev.n_beads
    if f.shape != (n, 3):
        raise DegenerateTransitionError("applied force shape mismatch")

    dt, gamma, kt = params.dt, params.gamma, params.kT
    m = params.masses[:, None]

    sigma_v = np.sqrt(2.0 * gamma * kt * dt / m)
    drift = (f / m - gamma * prev.velocities) * dt
    xi = (next_state.velocities - prev.velocities - drift) / sigma_v
    total = float(
        np.sum(-0.5 * xi**2 - 0.5 * _LOG_2PI - np.log(np.broadcast_to(sigma_v, xi.shape)))
    )

    if include_angular:
        inertia = params.inertias[:, None]
        sigma_w = np.sqrt(2.0 * gamma * kt * dt / inertia)
        xi_w = (
            next_state.angular_velocities
            - prev.angular_velocities * (1.0 - gamma * dt)
        ) / sigma_w
        total += float(
            np.sum(
                -0.5 * xi_w**2
                - 0.5 * _LOG_2PI
                - np.log(np.broadcast_to(sigma_w, xi_w.shape))
            )
        )
    return total
