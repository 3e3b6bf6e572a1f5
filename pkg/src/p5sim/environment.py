"""Markov decision process around the chain: observe, act, reward, episode.

Observation layout, per backbone bead (concatenated in backbone order):

    [0:3]   position relative to the chain centroid
    [3:6]   velocity
    [6:9]   angular velocity
    [9]     backbone bond angle centered at this bead (0 at the chain ends)
    [10]    backbone dihedral starting at this bead (0 for the last three)
    [11:11+3k]  the k nearest other beads within obs_radius, as positions
                relative to this bead, nearest first, zero-padded

followed by a global tail [current RG, target_rg_min, target_rg_max].
Total length B*(11 + 3k) + 3.

Action layout, per backbone bead: (x, y, z, alpha, angle). The bead gets an
external force (x, y, z) * (f_coef * alpha) during integration, then its
monomer is rotated by angle * theta_max about the local backbone axis.
Direction components and angle live in [-1, 1], alpha in [0, 1].

The reward has three parts, all functions of the post-step radius of
gyration: a quadratic penalty on the distance to the target band, a flat
bonus while inside the (closed) band, and a shaping term that peaks at the
band center and goes negative outside it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import (
    LangevinParams,
    MonomerRotationPlan,
    SystemState,
    apply_backbone_rotations,
    langevin_step,
)
from .errors import P5Error
from .forcefield import EnergyForces, ForceFieldParams, ForceFieldTables, total_energy_forces
from .topology import Topology, canonical_positions

__all__ = [
    "EnvConfig",
    "Observation",
    "ActionVector",
    "RewardBreakdown",
    "StepInfo",
    "StepResult",
    "PolymerEnv",
    "radius_of_gyration",
    "compute_reward",
    "reset",
    "observe",
    "step",
    "observation_length",
    "action_length",
    "init_log_density",
]


@dataclass(frozen=True)
class EnvConfig:
    target_rg_min: float = 0.0      # A
    target_rg_max: float = 200.0    # A
    episode_length: int = 20000
    f_coef: float = 0.5             # force magnitude scale per backbone bead
    theta_max: float = 0.0873       # rad, ~5 degrees
    obs_radius: float = 12.0        # A
    k_neighbors: int = 4
    init_noise_sigma: float = 0.5   # A
    k_d: float = 0.001              # distance penalty gain, per A^2
    k_r: float = 1.0                # in-band bonus
    k_s: float = 0.5                # shaping gain
    mass_weighted_rg: bool = False

    def __post_init__(self):
        if not self.target_rg_min < self.target_rg_max:
            raise ValueError(
                f"target_rg_min ({self.target_rg_min}) must be < "
                f"target_rg_max ({self.target_rg_max})"
            )
        if self.episode_length < 1:
            raise ValueError("episode_length must be >= 1")
        if self.theta_max <= 0:
            raise ValueError("theta_max must be > 0")
        if self.k_neighbors < 0 or self.obs_radius <= 0:
            raise ValueError("k_neighbors must be >= 0 and obs_radius > 0")
        if self.init_noise_sigma < 0:
            raise ValueError("init_noise_sigma must be >= 0")


@dataclass
class Observation:
    vector: np.ndarray
    n_backbone: int
    k_neighbors: int

    def __len__(self) -> int:
        return self.vector.shape[0]

    def backbone_block(self, b: int) -> np.ndarray:
        w = 11 + 3 * self.k_neighbors
        return self.vector[b * w: (b + 1) * w]

    @property
    def global_tail(self) -> np.ndarray:
        return self.vector[-3:]


_PER_BEAD_ACTION = 5  # x, y, z, alpha, angle


@dataclass
class ActionVector:
    values: np.ndarray  # flat, length 5 * n_backbone

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size % _PER_BEAD_ACTION:
            raise ValueError("action vector length must be a multiple of 5")

    @property
    def n_backbone(self) -> int:
        return self.values.size // _PER_BEAD_ACTION

    @property
    def per_bead(self) -> np.ndarray:
        return self.values.reshape(self.n_backbone, _PER_BEAD_ACTION)

    def directions(self) -> np.ndarray:
        return self.per_bead[:, 0:3]

    def alphas(self) -> np.ndarray:
        return self.per_bead[:, 3]

    def angles(self) -> np.ndarray:
        return self.per_bead[:, 4]

    def validate(self) -> None:
        pb = self.per_bead
        if (np.abs(pb[:, [0, 1, 2, 4]]) > 1.0 + 1e-12).any():
            raise ValueError("direction/angle components must lie in [-1, 1]")
        if ((pb[:, 3] < -1e-12) | (pb[:, 3] > 1.0 + 1e-12)).any():
            raise ValueError("alpha components must lie in [0, 1]")

    @classmethod
    def zeros(cls, n_backbone: int) -> "ActionVector":
        return cls(np.zeros(n_backbone * _PER_BEAD_ACTION))


@dataclass(frozen=True)
class RewardBreakdown:
    r_dist: float
    r_rg: float
    r_shaping: float
    total: float


@dataclass(frozen=True)
class StepInfo:
    rg: float
    potential_energy: float
    bond_breakage: bool


@dataclass
class StepResult:
    observation: Observation
    reward: RewardBreakdown
    done: bool
    info: StepInfo


def observation_length(topo: Topology, cfg: EnvConfig) -> int:
    return len(topo.backbone_order) * (11 + 3 * cfg.k_neighbors) + 3


def action_length(topo: Topology) -> int:
    return len(topo.backbone_order) * _PER_BEAD_ACTION


# ---------------------------------------------------------------------------
# Radius of gyration and reward
# ---------------------------------------------------------------------------


def radius_of_gyration(positions: np.ndarray, masses: np.ndarray | None = None) -> float:
    """Root-mean-square bead distance from the (unweighted) mean position.

    Pass ``masses`` for a mass-weighted center and average; with the equal
    default bead masses both definitions coincide.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.ndim != 2 or pos.shape[0] < 1 or pos.shape[1] != 3:
        raise ValueError(f"positions must be (N, 3) with N >= 1, got {pos.shape}")
    if masses is None:
        center = pos.mean(axis=0)
        return float(np.sqrt(((pos - center) ** 2).sum(axis=1).mean()))
    w = np.asarray(masses, dtype=float)
    center = (pos * w[:, None]).sum(axis=0) / w.sum()
    sq = ((pos - center) ** 2).sum(axis=1)
    return float(np.sqrt((sq * w).sum() / w.sum()))


def compute_reward(rg: float, cfg: EnvConfig) -> RewardBreakdown:
    """Three-component band-targeting reward; total is the fixed-order sum."""
    if rg < 0:
        raise ValueError(f"rg must be >= 0, got {rg}")
    lo, hi = cfg.target_rg_min, cfg.target_rg_max
    if rg < lo:
        d = lo - rg
    elif rg > hi:
        d = rg - hi
    else:
        d = 0.0
    mid = 0.5 * (lo + hi)
    hw = 0.5 * (hi - lo)
    r_dist = -cfg.k_d * d * d
    r_rg = cfg.k_r if lo <= rg <= hi else 0.0
    r_shaping = cfg.k_s * (1.0 - abs(rg - mid) / hw)
    return RewardBreakdown(r_dist, r_rg, r_shaping, r_dist + r_rg + r_shaping)


# ---------------------------------------------------------------------------
# Observation assembly
# ---------------------------------------------------------------------------


def _rowcross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    out[:, 0] = a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1]
    out[:, 1] = a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2]
    out[:, 2] = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    return out


def _backbone_angles(pos: np.ndarray, bb: np.ndarray) -> np.ndarray:
    """Bond angle at each interior backbone bead; 0 sentinel at the ends."""
    n = bb.size
    out = np.zeros(n)
    if n < 3:
        return out
    u = pos[bb[:-2]] - pos[bb[1:-1]]
    v = pos[bb[2:]] - pos[bb[1:-1]]
    cross = _rowcross(u, v)
    ncross = np.sqrt(np.einsum("ij,ij->i", cross, cross))
    dot = np.einsum("ij,ij->i", u, v)
    out[1:-1] = np.arctan2(ncross, dot)
    return out


def _backbone_dihedrals(pos: np.ndarray, bb: np.ndarray) -> np.ndarray:
    """Dihedral of the backbone quadruple starting at each bead; 0 for the
    last three. Degenerate (collinear) quadruples also report 0."""
    n = bb.size
    out = np.zeros(n)
    if n < 4:
        return out
    b1 = pos[bb[1:-2]] - pos[bb[:-3]]
    b2 = pos[bb[2:-1]] - pos[bb[1:-2]]
    b3 = pos[bb[3:]] - pos[bb[2:-1]]
    n1 = _rowcross(b1, b2)
    n2 = _rowcross(b2, b3)
    nb2 = np.sqrt(np.einsum("ij,ij->i", b2, b2))
    safe = nb2 > 1e-12
    y = np.einsum("ij,ij->i", _rowcross(n1, n2), b2) / np.where(safe, nb2, 1.0)
    x = np.einsum("ij,ij->i", n1, n2)
    with np.errstate(invalid="ignore"):
        phi = np.where((x == 0.0) & (y == 0.0), 0.0, np.arctan2(y, x))
    out[:-3] = np.where(safe, phi, 0.0)
    return out


def observe(state: SystemState, topo: Topology, cfg: EnvConfig) -> Observation:
    """Assemble the fixed-length observation vector for the current state."""
    pos = state.positions
    bb = np.asarray(topo.backbone_order, dtype=np.intp)
    nb = bb.size
    k = cfg.k_neighbors
    width = 11 + 3 * k
    out = np.zeros(nb * width + 3)
    blocks = out[: nb * width].reshape(nb, width)

    center = pos.mean(axis=0)
    blocks[:, 0:3] = pos[bb] - center
    blocks[:, 3:6] = state.velocities[bb]
    blocks[:, 6:9] = state.angular_velocities[bb]
    blocks[:, 9] = _backbone_angles(pos, bb)
    blocks[:, 10] = _backbone_dihedrals(pos, bb)

    if k > 0:
        diff = pos[None, :, :] - pos[bb][:, None, :]   # (nb, N, 3)
        dist = np.sqrt(np.einsum("bnj,bnj->bn", diff, diff))
        dist[np.arange(nb), bb] = np.inf               # exclude self
        # stable sort: ties resolve to ascending bead id (column order)
        order = np.argsort(dist, axis=1, kind="stable")[:, :k]
        sorted_dist = np.take_along_axis(dist, order, axis=1)
        neigh = np.take_along_axis(diff, order[:, :, None], axis=1)
        neigh[sorted_dist > cfg.obs_radius] = 0.0
        blocks[:, 11:] = neigh.reshape(nb, 3 * k)

    rg = radius_of_gyration(pos, topo.masses() if cfg.mass_weighted_rg else None)
    out[-3] = rg
    out[-2] = cfg.target_rg_min
    out[-1] = cfg.target_rg_max
    return Observation(vector=out, n_backbone=nb, k_neighbors=k)


# ---------------------------------------------------------------------------
# Episode lifecycle
# ---------------------------------------------------------------------------


def reset(
    topo: Topology, cfg: EnvConfig, seed_or_rng
) -> tuple[SystemState, Observation]:
    """Canonical extended chain plus i.i.d. Gaussian positional noise.

    Velocities and angular velocities start at zero. The same seed always
    yields the bit-identical state.
    """
    rng = (
        seed_or_rng
        if isinstance(seed_or_rng, np.random.Generator)
        else np.random.default_rng(seed_or_rng)
    )
    pos = canonical_positions(topo)
    if cfg.init_noise_sigma > 0:
        pos = pos + cfg.init_noise_sigma * rng.standard_normal(pos.shape)
    state = SystemState.at_rest(pos)
    return state, observe(state, topo, cfg)


def init_log_density(positions: np.ndarray, topo: Topology, cfg: EnvConfig) -> float:
    """Log density of an initial conformation under the reset distribution."""
    if cfg.init_noise_sigma <= 0:
        raise P5Error("init density undefined for init_noise_sigma = 0")
    delta = np.asarray(positions, dtype=float) - canonical_positions(topo)
    s = cfg.init_noise_sigma
    return float(
        np.sum(-0.5 * (delta / s) ** 2 - 0.5 * math.log(2.0 * math.pi) - math.log(s))
    )


def _external_forces(action: ActionVector, topo: Topology, cfg: EnvConfig, n: int) -> np.ndarray:
    f_ext = np.zeros((n, 3))
    bb = np.asarray(topo.backbone_order, dtype=np.intp)
    scale = (cfg.f_coef * action.alphas())[:, None]
    f_ext[bb] = action.directions() * scale
    return f_ext


def step(
    state: SystemState,
    action: ActionVector,
    topo: Topology,
    cfg: EnvConfig,
    ff: ForceFieldParams,
    dyn_params: LangevinParams,
    rng: np.random.Generator,
    tables: ForceFieldTables | None = None,
    rotation_plan: MonomerRotationPlan | None = None,
    pre_forces: EnergyForces | None = None,
) -> tuple[SystemState, StepResult, EnergyForces]:
    """One environment transition: force action, integrate, rotate, reward.

    ``pre_forces`` may carry the energy/forces already evaluated for
    ``state`` (they are also returned for the new state, so a rollout loop
    pays one force evaluation per step). A zero action reproduces the bare
    integrator transition for the same generator state.
    """
    action.validate()
    bb = topo.backbone_order
    if action.n_backbone != len(bb):
        raise ValueError(
            f"action for {action.n_backbone} backbone beads, chain has {len(bb)}"
        )
    tables = tables if tables is not None else ForceFieldTables(topo, ff)
    plan = rotation_plan if rotation_plan is not None else MonomerRotationPlan(topo)
    ef = pre_forces if pre_forces is not None else total_energy_forces(
        topo, state.positions, ff, tables
    )

    f_ext = _external_forces(action, topo, cfg, state.n_beads)
    new_state = langevin_step(state, ef.forces, f_ext, dyn_params, rng)

    thetas = action.angles() * cfg.theta_max
    new_state = apply_backbone_rotations(new_state, topo, thetas, plan)

    post_ef = total_energy_forces(topo, new_state.positions, ff, tables)
    rg = radius_of_gyration(
        new_state.positions, topo.masses() if cfg.mass_weighted_rg else None
    )
    reward = compute_reward(rg, cfg)
    done = new_state.step >= cfg.episode_length

    bond_break = False
    if tables.bond_idx.shape[0]:
        r = np.linalg.norm(
            new_state.positions[tables.bond_idx[:, 1]]
            - new_state.positions[tables.bond_idx[:, 0]],
            axis=1,
        )
        bond_break = bool(((r < 0.5 * tables.bond_r0) | (r > 1.5 * tables.bond_r0)).any())

    result = StepResult(
        observation=observe(new_state, topo, cfg),
        reward=reward,
        done=done,
        info=StepInfo(rg=rg, potential_energy=post_ef.potential_energy,
                      bond_breakage=bond_break),
    )
    return new_state, result, post_ef


class PolymerEnv:
    """Stateful wrapper caching tables, rotation plan, and force evaluations.

    One instance is single-threaded; run several instances with independent
    generators for parallel collection.
    """

    def __init__(
        self,
        topo: Topology,
        cfg: EnvConfig,
        ff: ForceFieldParams,
        dyn_params: LangevinParams,
    ):
        self.topo = topo
        self.cfg = cfg
        self.ff = ff
        self.dyn_params = dyn_params
        self.tables = ForceFieldTables(topo, ff)
        self.plan = MonomerRotationPlan(topo)
        self.state: SystemState | None = None
        self._cached_forces: EnergyForces | None = None
        self._masses = topo.masses() if cfg.mass_weighted_rg else None

    @property
    def n_backbone(self) -> int:
        return len(self.topo.backbone_order)

    def reset(self, seed_or_rng) -> tuple[SystemState, Observation]:
        self.state, obs = reset(self.topo, self.cfg, seed_or_rng)
        self._cached_forces = total_energy_forces(
            self.topo, self.state.positions, self.ff, self.tables
        )
        return self.state, obs

    def step(self, action: ActionVector, rng: np.random.Generator) -> StepResult:
        if self.state is None:
            raise P5Error("step() before reset()")
        self.state, result, post_ef = step(
            self.state,
            action,
            self.topo,
            self.cfg,
            self.ff,
            self.dyn_params,
            rng,
            tables=self.tables,
            rotation_plan=self.plan,
            pre_forces=self._cached_forces,
        )
        self._cached_forces = post_ef
        return result

    @property
    def cached_potential_energy(self) -> float:
        return self._cached_forces.potential_energy if self._cached_forces else 0.0
