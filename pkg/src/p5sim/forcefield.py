"""Potential energy and forces: bonded terms, shifted Lennard-Jones, anomaly scan.

Functional forms are the standard coarse-grained set: harmonic bonds
E = k/2 (r - r0)^2, harmonic angles E = k/2 (theta - theta0)^2, periodic
dihedrals E = k (1 + cos(m phi - phase)), and a 12-6 Lennard-Jones pair
potential shifted to zero at the cutoff. Nonbonded pairs are found with a
cell list (cell edge >= cutoff) and accumulated in sorted pair order, so
results are bitwise independent of the cell decomposition. Pairs within
``exclusion_depth`` bonds of each other are skipped.

Forces are exact negative gradients of the energy; the test suite checks
them against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ForceFieldError, GeometryError, OverlapError
from .topology import BEAD_TYPES, BACKBONE_ANGLE_RAD, Topology
from .units import kj_per_mol_to_internal

__all__ = [
    "BondParams",
    "AngleParams",
    "DihedralParams",
    "ForceFieldParams",
    "ForceFieldTables",
    "EnergyForces",
    "AnomalyThresholds",
    "AnomalyEvent",
    "AnomalyReport",
    "default_forcefield_params",
    "compute_bonded",
    "compute_lj",
    "total_energy_forces",
    "detect_anomalies",
    "parse_forcefield",
    "write_forcefield",
]

_TYPE_ORDER = ("Na", "P3", "SP1")
_TYPE_INDEX = {name: i for i, name in enumerate(_TYPE_ORDER)}

# Dense all-pairs candidates beat the grid bookkeeping below this size; the
# result is identical either way (pairs are cutoff-filtered and sorted).
_DENSE_PAIR_LIMIT = 200


def _cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cross product without np.cross's axis-juggling overhead."""
    out = np.empty(np.broadcast(a, b).shape)
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def _scatter_add(forces: np.ndarray, idx: np.ndarray, values: np.ndarray) -> None:
    n = forces.shape[0]
    for d in range(3):
        forces[:, d] += np.bincount(idx, weights=values[:, d], minlength=n)

_COMPONENT_ORDER = ("bond", "angle", "dihedral", "lj")

# Below this fraction of sigma a pair counts as a hard overlap.
_OVERLAP_FRACTION = 0.05


@dataclass(frozen=True)
class BondParams:
    k: float   # energy / A^2
    r0: float  # A


@dataclass(frozen=True)
class AngleParams:
    k: float       # energy / rad^2
    theta0: float  # rad


@dataclass(frozen=True)
class DihedralParams:
    k: float  # energy
    multiplicity: int
    phase: float  # rad


@dataclass
class ForceFieldParams:
    bond_sets: list[BondParams]
    angle_sets: list[AngleParams]
    dihedral_sets: list[DihedralParams]
    lj_table: dict[tuple[str, str], tuple[float, float]]  # (eps, sigma)
    cutoff: float = 12.0
    exclusion_depth: int = 2

    def __post_init__(self):
        for s in self.bond_sets:
            if s.k < 0 or s.r0 <= 0:
                raise ForceFieldError(f"invalid bond set {s}")
        for s in self.angle_sets:
            if s.k < 0:
                raise ForceFieldError(f"invalid angle set {s}")
        for s in self.dihedral_sets:
            if s.k < 0 or s.multiplicity < 1:
                raise ForceFieldError(f"invalid dihedral set {s}")
        sigmas = []
        normalized = {}
        for (a, b), (eps, sigma) in self.lj_table.items():
            if eps < 0 or sigma <= 0:
                raise ForceFieldError(f"invalid LJ entry ({a},{b}): eps={eps} sigma={sigma}")
            key = (a, b) if a <= b else (b, a)
            if key in normalized and normalized[key] != (eps, sigma):
                raise ForceFieldError(f"asymmetric LJ table for pair {key}")
            normalized[key] = (eps, sigma)
            sigmas.append(sigma)
        self.lj_table = {}
        for (a, b), v in normalized.items():
            self.lj_table[(a, b)] = v
            self.lj_table[(b, a)] = v
        if sigmas and self.cutoff <= max(sigmas):
            raise ForceFieldError(
                f"cutoff {self.cutoff} must exceed the largest sigma {max(sigmas)}"
            )
        if self.exclusion_depth < 0:
            raise ForceFieldError("exclusion_depth must be >= 0")


def default_forcefield_params() -> ForceFieldParams:
    """Stock parameter set: 1250 kJ/mol/nm^2 bonds at 4.7 A, 25 kJ/mol/rad^2
    angles at the backbone zig-zag angle, free dihedrals, eps=0.85 LJ with
    sigma from the larger partner's van der Waals diameter."""
    lj = {}
    for a in _TYPE_ORDER:
        for b in _TYPE_ORDER:
            sigma = max(BEAD_TYPES[a].vdw_diameter, BEAD_TYPES[b].vdw_diameter)
            lj[(a, b)] = (0.85, sigma)
    return ForceFieldParams(
        bond_sets=[BondParams(k=kj_per_mol_to_internal(1250.0) / 100.0, r0=4.7)],
        angle_sets=[AngleParams(k=kj_per_mol_to_internal(25.0), theta0=BACKBONE_ANGLE_RAD)],
        dihedral_sets=[DihedralParams(k=0.0, multiplicity=1, phase=0.0)],
        lj_table=lj,
        cutoff=12.0,
        exclusion_depth=2,
    )


@dataclass
class EnergyForces:
    potential_energy: float
    forces: np.ndarray  # (N, 3), energy / A
    components: dict[str, float] = field(default_factory=dict)

    def __add__(self, other: "EnergyForces") -> "EnergyForces":
        comps = {
            k: self.components.get(k, 0.0) + other.components.get(k, 0.0)
            for k in _COMPONENT_ORDER
        }
        return EnergyForces(
            potential_energy=sum(comps[k] for k in _COMPONENT_ORDER),
            forces=self.forces + other.forces,
            components=comps,
        )


# ---------------------------------------------------------------------------
# Precomputed per-(topology, params) tables
# ---------------------------------------------------------------------------


class ForceFieldTables:
    """Index arrays, per-term constants, LJ matrices, and exclusion keys.

    Building these once per (topology, params) pair keeps the per-step
    evaluation free of python-level set and dict work.
    """

    def __init__(self, topo: Topology, params: ForceFieldParams):
        self.n = topo.n_beads
        self.params = params

        def gather(kind, sets, fields):
            idx, set_ids = topo.terms_of_kind(kind)
            if set_ids.size and set_ids.max() >= len(sets):
                raise ForceFieldError(
                    f"{kind} parameter set {set_ids.max()} not defined "
                    f"({len(sets)} available)"
                )
            cols = tuple(
                np.array([getattr(sets[s], f) for s in set_ids]) for f in fields
            )
            return (idx,) + cols

        self.bond_idx, self.bond_k, self.bond_r0 = gather(
            "bond", params.bond_sets, ("k", "r0")
        )
        self.angle_idx, self.angle_k, self.angle_theta0 = gather(
            "angle", params.angle_sets, ("k", "theta0")
        )
        self.dih_idx, self.dih_k, self.dih_mult, self.dih_phase = gather(
            "dihedral", params.dihedral_sets, ("k", "multiplicity", "phase")
        )

        names = topo.type_names()
        self.type_idx = np.array([_TYPE_INDEX[t] for t in names], dtype=np.intp)
        nt = len(_TYPE_ORDER)
        self.eps_mat = np.zeros((nt, nt))
        self.sig_mat = np.zeros((nt, nt))
        present = sorted(set(names))
        for a in present:
            for b in present:
                if (a, b) not in params.lj_table:
                    raise ForceFieldError(f"LJ table missing pair ({a},{b})")
                eps, sigma = params.lj_table[(a, b)]
                self.eps_mat[_TYPE_INDEX[a], _TYPE_INDEX[b]] = eps
                self.sig_mat[_TYPE_INDEX[a], _TYPE_INDEX[b]] = sigma
        rc = params.cutoff
        with np.errstate(divide="ignore", invalid="ignore"):
            src6 = np.where(self.sig_mat > 0, (self.sig_mat / rc) ** 6, 0.0)
        self.shift_mat = 4.0 * self.eps_mat * (src6**2 - src6)

        self.excluded_keys = self._exclusion_keys(topo, params.exclusion_depth)

        if self.n <= _DENSE_PAIR_LIMIT:
            iu, ju = np.triu_indices(self.n, k=1)
            keys = iu.astype(np.int64) * self.n + ju
            keep = ~self._is_excluded(keys)
            self.dense_i = iu[keep].astype(np.intp)
            self.dense_j = ju[keep].astype(np.intp)
        else:
            self.dense_i = None
            self.dense_j = None

    def _is_excluded(self, keys: np.ndarray) -> np.ndarray:
        if self.excluded_keys.size == 0:
            return np.zeros(keys.shape, dtype=bool)
        loc = np.searchsorted(self.excluded_keys, keys)
        loc_ok = np.minimum(loc, self.excluded_keys.size - 1)
        return (loc < self.excluded_keys.size) & (self.excluded_keys[loc_ok] == keys)

    def _exclusion_keys(self, topo: Topology, depth: int) -> np.ndarray:
        adj = topo.bond_adjacency()
        keys = set()
        for start in range(self.n):
            frontier = {start}
            seen = {start}
            for _ in range(depth):
                frontier = {k for j in frontier for k in adj[j]} - seen
                seen |= frontier
                for j in frontier:
                    if start < j:
                        keys.add(start * self.n + j)
        return np.array(sorted(keys), dtype=np.int64)


# ---------------------------------------------------------------------------
# Bonded terms
# ---------------------------------------------------------------------------


def _bond_terms(pos, tables, forces):
    idx = tables.bond_idx
    if idx.shape[0] == 0:
        return 0.0
    i, j = idx[:, 0], idx[:, 1]
    rv = pos[j] - pos[i]
    r = np.linalg.norm(rv, axis=1)
    bad = np.nonzero(r < 1e-10)[0]
    if bad.size:
        t = bad[0]
        raise GeometryError(f"zero-length bond between beads {i[t]} and {j[t]}")
    delta = r - tables.bond_r0
    energy = float(np.sum(0.5 * tables.bond_k * delta**2))
    fi = (tables.bond_k * delta / r)[:, None] * rv
    _scatter_add(forces, i, fi)
    _scatter_add(forces, j, -fi)
    return energy


def _angle_terms(pos, tables, forces):
    idx = tables.angle_idx
    if idx.shape[0] == 0:
        return 0.0
    i, j, k = idx[:, 0], idx[:, 1], idx[:, 2]
    u = pos[i] - pos[j]
    v = pos[k] - pos[j]
    nu = np.sqrt(np.einsum("ij,ij->i", u, u))
    nv = np.sqrt(np.einsum("ij,ij->i", v, v))
    cross = _cross3(u, v)
    ncross = np.sqrt(np.einsum("ij,ij->i", cross, cross))
    dot = np.einsum("ij,ij->i", u, v)
    bad = np.nonzero(ncross < 1e-12 * nu * nv)[0]
    if bad.size:
        t = bad[0]
        raise GeometryError(
            f"collinear angle term ({i[t]},{j[t]},{k[t]}); angle undefined"
        )
    theta = np.arctan2(ncross, dot)
    delta = theta - tables.angle_theta0
    energy = float(np.sum(0.5 * tables.angle_k * delta**2))

    uh = u / nu[:, None]
    vh = v / nv[:, None]
    cos = dot / (nu * nv)
    sin = ncross / (nu * nv)
    dtheta_di = (cos[:, None] * uh - vh) / (nu * sin)[:, None]
    dtheta_dk = (cos[:, None] * vh - uh) / (nv * sin)[:, None]
    coeff = (-tables.angle_k * delta)[:, None]
    fi = coeff * dtheta_di
    fk = coeff * dtheta_dk
    _scatter_add(forces, i, fi)
    _scatter_add(forces, k, fk)
    _scatter_add(forces, j, -(fi + fk))
    return energy


def _dihedral_terms(pos, tables, forces):
    # k == 0 terms are free rotors: no energy, no force, and no geometry
    # requirement, so they are skipped outright.
    active = np.nonzero(tables.dih_k != 0.0)[0]
    if active.size == 0:
        return 0.0
    idx = tables.dih_idx[active]
    kd = tables.dih_k[active]
    mult = tables.dih_mult[active]
    phase = tables.dih_phase[active]
    i, j, k, l = idx[:, 0], idx[:, 1], idx[:, 2], idx[:, 3]
    b1 = pos[j] - pos[i]
    b2 = pos[k] - pos[j]
    b3 = pos[l] - pos[k]
    n1 = _cross3(b1, b2)
    n2 = _cross3(b2, b3)
    nb2 = np.sqrt(np.einsum("ij,ij->i", b2, b2))
    n1sq = np.einsum("ij,ij->i", n1, n1)
    n2sq = np.einsum("ij,ij->i", n2, n2)
    bad = np.nonzero((n1sq < 1e-20) | (n2sq < 1e-20) | (nb2 < 1e-10))[0]
    if bad.size:
        t = bad[0]
        raise GeometryError(
            f"degenerate dihedral term ({i[t]},{j[t]},{k[t]},{l[t]}); "
            "three consecutive beads are collinear"
        )
    x = np.einsum("ij,ij->i", n1, n2)
    y = np.einsum("ij,ij->i", _cross3(n1, n2), b2 / nb2[:, None])
    phi = np.arctan2(y, x)
    energy = float(np.sum(kd * (1.0 + np.cos(mult * phi - phase))))
    de_dphi = -kd * mult * np.sin(mult * phi - phase)

    dphi_di = (-nb2 / n1sq)[:, None] * n1
    dphi_dl = (nb2 / n2sq)[:, None] * n2
    c12 = np.einsum("ij,ij->i", b1, b2) / nb2**2
    c32 = np.einsum("ij,ij->i", b3, b2) / nb2**2
    dphi_dj = -(1.0 + c12)[:, None] * dphi_di + c32[:, None] * dphi_dl
    dphi_dk = c12[:, None] * dphi_di - (1.0 + c32)[:, None] * dphi_dl
    coeff = -de_dphi[:, None]
    _scatter_add(forces, i, coeff * dphi_di)
    _scatter_add(forces, j, coeff * dphi_dj)
    _scatter_add(forces, k, coeff * dphi_dk)
    _scatter_add(forces, l, coeff * dphi_dl)
    return energy


def compute_bonded(
    topo: Topology,
    positions: np.ndarray,
    params: ForceFieldParams,
    tables: ForceFieldTables | None = None,
) -> EnergyForces:
    """Energy and forces of all bond, angle, and dihedral terms."""
    pos = np.asarray(positions, dtype=float)
    if pos.shape != (topo.n_beads, 3):
        raise ForceFieldError(f"positions shape {pos.shape} != ({topo.n_beads}, 3)")
    t = tables if tables is not None else ForceFieldTables(topo, params)
    forces = np.zeros_like(pos)
    e_bond = _bond_terms(pos, t, forces)
    e_angle = _angle_terms(pos, t, forces)
    e_dih = _dihedral_terms(pos, t, forces)
    comps = {"bond": e_bond, "angle": e_angle, "dihedral": e_dih, "lj": 0.0}
    _check_finite(forces)
    return EnergyForces(e_bond + e_angle + e_dih + 0.0, forces, comps)


# ---------------------------------------------------------------------------
# Lennard-Jones with cell-list neighbor search
# ---------------------------------------------------------------------------

# Half-shell of neighbor cell offsets: every unordered cell pair is visited
# through exactly one of these (plus the within-cell case handled separately).
_HALF_SHELL = np.array(
    [
        (0, 0, 1), (0, 1, -1), (0, 1, 0), (0, 1, 1),
        (1, -1, -1), (1, -1, 0), (1, -1, 1), (1, 0, -1),
        (1, 0, 0), (1, 0, 1), (1, 1, -1), (1, 1, 0), (1, 1, 1),
    ],
    dtype=np.intp,
)


def _ragged_ranges(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Concatenate arange(starts[i], starts[i]+counts[i]) without a python loop."""
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.intp)
    rep_starts = np.repeat(starts, counts)
    offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    return rep_starts + offsets


def _candidate_pairs(pos: np.ndarray, edge: float) -> tuple[np.ndarray, np.ndarray]:
    """All bead pairs (i < j) whose cells are identical or adjacent."""
    n = pos.shape[0]
    if n < 2:
        return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
    cell = np.floor((pos - pos.min(axis=0)) / edge).astype(np.intp)
    dims = cell.max(axis=0) + 1
    lin = (cell[:, 0] * dims[1] + cell[:, 1]) * dims[2] + cell[:, 2]
    order = np.argsort(lin, kind="stable")
    sorted_lin = lin[order]
    cells_u, starts = np.unique(sorted_lin, return_index=True)
    ends = np.append(starts[1:], n)

    pairs_i = []
    pairs_j = []

    # Within-cell pairs: bead at sorted slot p pairs with slots p+1..end(cell).
    slot = np.arange(n)
    cnt = ends - starts
    own_end = np.repeat(ends, cnt)
    counts_self = own_end - slot - 1
    j_sorted = _ragged_ranges(slot + 1, counts_self)
    i_sorted = np.repeat(slot, counts_self)
    pairs_i.append(i_sorted)
    pairs_j.append(j_sorted)

    # Cross-cell pairs through the half shell.
    cell_sorted = cell[order]
    for off in _HALF_SHELL:
        tgt = cell_sorted + off
        valid = np.all((tgt >= 0) & (tgt < dims), axis=1)
        tgt_lin = (tgt[:, 0] * dims[1] + tgt[:, 1]) * dims[2] + tgt[:, 2]
        loc = np.searchsorted(cells_u, tgt_lin)
        loc_ok = loc < cells_u.size
        found = valid & loc_ok & (cells_u[np.minimum(loc, cells_u.size - 1)] == tgt_lin)
        counts = np.where(found, ends[np.minimum(loc, cells_u.size - 1)]
                          - starts[np.minimum(loc, cells_u.size - 1)], 0)
        j_sorted = _ragged_ranges(
            starts[np.minimum(loc, cells_u.size - 1)], counts
        )
        i_sorted = np.repeat(slot, counts)
        pairs_i.append(i_sorted)
        pairs_j.append(j_sorted)

    i_all = order[np.concatenate(pairs_i)]
    j_all = order[np.concatenate(pairs_j)]
    lo = np.minimum(i_all, j_all)
    hi = np.maximum(i_all, j_all)
    # Sorted pair order makes the accumulation independent of the grid.
    perm = np.lexsort((hi, lo))
    return lo[perm], hi[perm]


def compute_lj(
    topo: Topology,
    positions: np.ndarray,
    params: ForceFieldParams,
    tables: ForceFieldTables | None = None,
    cell_edge: float | None = None,
) -> EnergyForces:
    """Shifted Lennard-Jones energy/forces over non-excluded pairs in range.

    ``cell_edge`` (>= cutoff) only changes the search decomposition, never
    the result.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.shape != (topo.n_beads, 3):
        raise ForceFieldError(f"positions shape {pos.shape} != ({topo.n_beads}, 3)")
    t = tables if tables is not None else ForceFieldTables(topo, params)
    rc = params.cutoff
    edge = rc if cell_edge is None else cell_edge
    if edge < rc:
        raise ForceFieldError(f"cell edge {edge} smaller than cutoff {rc}")

    forces = np.zeros_like(pos)
    comps = {"bond": 0.0, "angle": 0.0, "dihedral": 0.0, "lj": 0.0}
    if cell_edge is None and t.dense_i is not None:
        # Small system: all non-excluded pairs, already sorted.
        i, j = t.dense_i, t.dense_j
    else:
        i, j = _candidate_pairs(pos, edge)
        if i.size and t.excluded_keys.size:
            keep = ~t._is_excluded(i.astype(np.int64) * t.n + j)
            i, j = i[keep], j[keep]
    if i.size == 0:
        return EnergyForces(0.0, forces, comps)

    rv = pos[j] - pos[i]
    r2 = np.einsum("ij,ij->i", rv, rv)
    within = r2 < rc * rc
    i, j, rv, r2 = i[within], j[within], rv[within], r2[within]
    if i.size == 0:
        return EnergyForces(0.0, forces, comps)

    ti, tj = t.type_idx[i], t.type_idx[j]
    eps = t.eps_mat[ti, tj]
    sig = t.sig_mat[ti, tj]
    shift = t.shift_mat[ti, tj]

    overlap = r2 < (_OVERLAP_FRACTION * sig) ** 2
    if overlap.any():
        k = int(np.nonzero(overlap)[0][0])
        raise OverlapError(
            f"beads {i[k]} and {j[k]} at r={np.sqrt(r2[k]):.4g} A "
            f"< {_OVERLAP_FRACTION} sigma ({sig[k]:.3g} A)"
        )

    sr6 = (sig * sig / r2) ** 3
    sr12 = sr6 * sr6
    energies = 4.0 * eps * (sr12 - sr6) - shift
    e_lj = float(np.sum(energies))
    # F_i = 24 eps (2 (s/r)^12 - (s/r)^6) / r^2 * (r_i - r_j)
    fmag = (24.0 * eps * (2.0 * sr12 - sr6) / r2)[:, None]
    fi = fmag * (-rv)
    _scatter_add(forces, i, fi)
    _scatter_add(forces, j, -fi)
    _check_finite(forces)
    comps["lj"] = e_lj
    return EnergyForces(e_lj, forces, comps)


def total_energy_forces(
    topo: Topology,
    positions: np.ndarray,
    params: ForceFieldParams,
    tables: ForceFieldTables | None = None,
) -> EnergyForces:
    """Bonded plus nonbonded superposition."""
    t = tables if tables is not None else ForceFieldTables(topo, params)
    return compute_bonded(topo, positions, params, t) + compute_lj(
        topo, positions, params, t
    )


def _check_finite(forces: np.ndarray) -> None:
    if not np.all(np.isfinite(forces)):
        raise ForceFieldError("non-finite force encountered")


# ---------------------------------------------------------------------------
# Raw-data anomaly detection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnomalyThresholds:
    stretch_factor: float = 1.5
    compress_factor: float = 0.5
    spike_factor: float = 10.0
    spike_window: int = 101  # frames, centered running median


@dataclass(frozen=True)
class AnomalyEvent:
    step: int
    kind: str  # bond_breakage | energy_spike
    detail: tuple


@dataclass
class AnomalyReport:
    events: list[AnomalyEvent]

    def __bool__(self) -> bool:
        return bool(self.events)


def detect_anomalies(
    frames,
    topo: Topology,
    params: ForceFieldParams,
    thresholds: AnomalyThresholds = AnomalyThresholds(),
) -> AnomalyReport:
    """Scan (step, positions, potential_energy) frames for broken bonds and
    potential-energy spikes.

    A bond is broken when its length leaves
    [compress_factor * r0, stretch_factor * r0]; a spike is |PE| exceeding
    spike_factor times the running median of |PE| over a centered window.
    An empty frame sequence yields an empty report.
    """
    frames = list(frames)
    events: list[AnomalyEvent] = []
    if not frames:
        return AnomalyReport(events=events)

    tables = ForceFieldTables(topo, params)
    idx, r0 = tables.bond_idx, tables.bond_r0
    lo = thresholds.compress_factor * r0
    hi = thresholds.stretch_factor * r0

    for step, positions, _pe in frames:
        if idx.shape[0] == 0:
            continue
        pos = np.asarray(positions, dtype=float)
        r = np.linalg.norm(pos[idx[:, 1]] - pos[idx[:, 0]], axis=1)
        for b in np.nonzero((r < lo) | (r > hi))[0]:
            events.append(
                AnomalyEvent(
                    step=int(step),
                    kind="bond_breakage",
                    detail=(int(idx[b, 0]), int(idx[b, 1]), float(r[b]), float(r0[b])),
                )
            )

    pe = np.array([abs(float(f[2])) for f in frames])
    half = thresholds.spike_window // 2
    for t in range(len(frames)):
        window = pe[max(0, t - half): t + half + 1]
        med = float(np.median(window))
        if pe[t] > thresholds.spike_factor * med:
            events.append(
                AnomalyEvent(
                    step=int(frames[t][0]),
                    kind="energy_spike",
                    detail=(float(pe[t]), thresholds.spike_factor * med),
                )
            )

    events.sort(key=lambda e: (e.step, e.kind))
    return AnomalyReport(events=events)


# ---------------------------------------------------------------------------
# Parameter file I/O (.p5ff)
# ---------------------------------------------------------------------------


def parse_forcefield(text: str) -> ForceFieldParams:
    """Parse a ``.p5ff`` parameter file (sections [bondsets], [anglesets],
    [dihedralsets], [lj], [global])."""
    section = None
    bond_sets: list[BondParams] = []
    angle_sets: list[AngleParams] = []
    dihedral_sets: list[DihedralParams] = []
    lj: dict[tuple[str, str], tuple[float, float]] = {}
    cutoff = 12.0
    exclusion_depth = 2
    known = ("[bondsets]", "[anglesets]", "[dihedralsets]", "[lj]", "[global]")

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line not in known:
                raise ForceFieldError(f"line {lineno}: unknown section {line!r}")
            section = line
            continue
        if section is None:
            raise ForceFieldError(f"line {lineno}: data before any section header")
        tokens = line.split()
        try:
            if section == "[bondsets]":
                if len(tokens) != 2:
                    raise ForceFieldError(f"line {lineno}: bond set row needs 'k r0'")
                bond_sets.append(BondParams(float(tokens[0]), float(tokens[1])))
            elif section == "[anglesets]":
                if len(tokens) != 2:
                    raise ForceFieldError(f"line {lineno}: angle set row needs 'k theta0'")
                angle_sets.append(AngleParams(float(tokens[0]), float(tokens[1])))
            elif section == "[dihedralsets]":
                if len(tokens) != 3:
                    raise ForceFieldError(
                        f"line {lineno}: dihedral set row needs 'k multiplicity phase'"
                    )
                dihedral_sets.append(
                    DihedralParams(float(tokens[0]), int(tokens[1]), float(tokens[2]))
                )
            elif section == "[lj]":
                if len(tokens) != 4:
                    raise ForceFieldError(
                        f"line {lineno}: lj row needs 'typeA typeB epsilon sigma'"
                    )
                a, b = tokens[0], tokens[1]
                if a not in BEAD_TYPES or b not in BEAD_TYPES:
                    raise ForceFieldError(f"line {lineno}: unknown bead type in lj row")
                lj[(a, b)] = (float(tokens[2]), float(tokens[3]))
            else:
                if len(tokens) != 2:
                    raise ForceFieldError(f"line {lineno}: global row needs 'name value'")
                if tokens[0] == "cutoff":
                    cutoff = float(tokens[1])
                elif tokens[0] == "exclusion_depth":
                    exclusion_depth = int(tokens[1])
                else:
                    raise ForceFieldError(f"line {lineno}: unknown global {tokens[0]!r}")
        except ValueError as exc:
            raise ForceFieldError(f"line {lineno}: {exc}") from None

    return ForceFieldParams(
        bond_sets=bond_sets,
        angle_sets=angle_sets,
        dihedral_sets=dihedral_sets,
        lj_table=lj,
        cutoff=cutoff,
        exclusion_depth=exclusion_depth,
    )


def write_forcefield(params: ForceFieldParams) -> str:
    lines = ["[bondsets]"]
    for s in params.bond_sets:
        lines.append(f"{s.k!r} {s.r0!r}")
    lines.append("[anglesets]")
    for s in params.angle_sets:
        lines.append(f"{s.k!r} {s.theta0!r}")
    lines.append("[dihedralsets]")
    for s in params.dihedral_sets:
        lines.append(f"{s.k!r} {s.multiplicity} {s.phase!r}")
    lines.append("[lj]")
    for (a, b), (eps, sigma) in sorted(params.lj_table.items()):
        if a <= b:
            lines.append(f"{a} {b} {eps!r} {sigma!r}")
    lines.append("[global]")
    lines.append(f"cutoff {params.cutoff!r}")
    lines.append(f"exclusion_depth {params.exclusion_depth}")
    return "\n".join(lines) + "\n"
