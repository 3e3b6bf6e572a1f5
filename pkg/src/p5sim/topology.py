"""Coarse-grained chain topology: bead/bond data model, file I/O, chain builder.

A topology is pure structure (no coordinates): typed beads grouped into
monomers, bonded terms (bonds/angles/dihedrals) referencing force-field
parameter sets by index, and the designated backbone bead of each monomer.
:func:`canonical_positions` derives a deterministic extended-chain geometry
from the structure, which the simulation environment uses as its reference
starting conformation.

File format (``.p5t``): UTF-8 lines, ``#`` starts a comment. Sections:

    [beads]      id type mass monomer backbone(0|1)
    [bonds]      i j paramset
    [angles]     i j k paramset
    [dihedrals]  i j k l paramset
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import TopologyError
from .units import BEADS_PER_MONOMER, MONOMER_MOLAR_MASS

__all__ = [
    "BeadType",
    "BeadSpec",
    "BondedTerm",
    "Topology",
    "BEAD_TYPES",
    "MonomerTemplate",
    "CELLULOSE_ACETATE_TEMPLATE",
    "TEMPLATE_BOND_LENGTH",
    "BACKBONE_ANGLE_RAD",
    "parse_topology",
    "write_topology",
    "build_cellulose_acetate_chain",
    "canonical_positions",
]


@dataclass(frozen=True)
class BeadType:
    name: str
    vdw_diameter: float  # Angstrom
    default_mass: float  # amu


_DEFAULT_BEAD_MASS = MONOMER_MOLAR_MASS / BEADS_PER_MONOMER

# Na: non-polar hydrogen acceptor; P3: polar; SP1: small polar ring bead.
# Ring beads carry the smaller 4.7 A van der Waals diameter.
BEAD_TYPES = {
    "Na": BeadType("Na", 5.2, _DEFAULT_BEAD_MASS),
    "P3": BeadType("P3", 5.2, _DEFAULT_BEAD_MASS),
    "SP1": BeadType("SP1", 4.7, _DEFAULT_BEAD_MASS),
}

_TERM_ARITY = {"bond": 2, "angle": 3, "dihedral": 4}
_KIND_ORDER = {"bond": 0, "angle": 1, "dihedral": 2}


@dataclass(frozen=True)
class BeadSpec:
    id: int
    bead_type: BeadType
    mass: float
    monomer_index: int
    is_backbone: bool


@dataclass(frozen=True)
class BondedTerm:
    kind: str  # bond | angle | dihedral
    bead_ids: tuple[int, ...]
    parameter_set_id: int


@dataclass
class Topology:
    beads: list[BeadSpec]
    terms: list[BondedTerm]
    n_monomers: int
    backbone_order: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    # -- validation ---------------------------------------------------

    def validate(self) -> None:
        ids = [b.id for b in self.beads]
        if not ids:
            raise TopologyError("topology has no beads")
        if sorted(ids) != list(range(len(ids))):
            raise TopologyError("bead ids must be unique and contiguous from 0")
        self.beads.sort(key=lambda b: b.id)
        for b in self.beads:
            if b.mass <= 0:
                raise TopologyError(f"bead {b.id} has non-positive mass {b.mass}")
            if b.bead_type.name not in BEAD_TYPES:
                raise TopologyError(f"bead {b.id} has unknown type {b.bead_type.name!r}")
            if not 0 <= b.monomer_index < self.n_monomers:
                raise TopologyError(
                    f"bead {b.id} monomer index {b.monomer_index} outside "
                    f"0..{self.n_monomers - 1}"
                )

        n = len(self.beads)
        for t in self.terms:
            if t.kind not in _TERM_ARITY:
                raise TopologyError(f"unknown term kind {t.kind!r}")
            if len(t.bead_ids) != _TERM_ARITY[t.kind]:
                raise TopologyError(
                    f"{t.kind} term {t.bead_ids} has arity {len(t.bead_ids)}, "
                    f"expected {_TERM_ARITY[t.kind]}"
                )
            if len(set(t.bead_ids)) != len(t.bead_ids):
                raise TopologyError(f"{t.kind} term {t.bead_ids} repeats a bead id")
            for i in t.bead_ids:
                if not 0 <= i < n:
                    raise TopologyError(f"{t.kind} term references missing bead {i}")
            if t.parameter_set_id < 0:
                raise TopologyError(f"{t.kind} term has negative parameter set id")
        # Canonical storage order: bonds, angles, dihedrals (stable per kind)
        # so that write/parse round-trips compare equal.
        self.terms.sort(key=lambda t: _KIND_ORDER[t.kind])

        backbone = {}
        for b in self.beads:
            if b.is_backbone:
                if b.monomer_index in backbone:
                    raise TopologyError(
                        f"monomer {b.monomer_index} has more than one backbone bead"
                    )
                backbone[b.monomer_index] = b.id
        for m in range(self.n_monomers):
            if m not in backbone:
                raise TopologyError(f"monomer {m} has no backbone bead")
        order = [backbone[m] for m in range(self.n_monomers)]
        if self.backbone_order and self.backbone_order != order:
            raise TopologyError("backbone_order inconsistent with bead flags")
        self.backbone_order = order

        # Bond graph must span all beads (union-find).
        parent = list(range(n))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for t in self.terms:
            if t.kind == "bond":
                a, b = (find(i) for i in t.bead_ids)
                if a != b:
                    parent[a] = b
        roots = {find(i) for i in range(n)}
        if len(roots) > 1:
            raise TopologyError(f"bond graph is disconnected ({len(roots)} components)")

    # -- array accessors -----------------------------------------------

    @property
    def n_beads(self) -> int:
        return len(self.beads)

    def masses(self) -> np.ndarray:
        return np.array([b.mass for b in self.beads])

    def vdw_diameters(self) -> np.ndarray:
        return np.array([b.bead_type.vdw_diameter for b in self.beads])

    def type_names(self) -> list[str]:
        return [b.bead_type.name for b in self.beads]

    def terms_of_kind(self, kind: str) -> tuple[np.ndarray, np.ndarray]:
        """Return (index array shape (n, arity), parameter set ids shape (n,))."""
        sel = [t for t in self.terms if t.kind == kind]
        arity = _TERM_ARITY[kind]
        if not sel:
            return np.empty((0, arity), dtype=np.intp), np.empty(0, dtype=np.intp)
        idx = np.array([t.bead_ids for t in sel], dtype=np.intp)
        sets = np.array([t.parameter_set_id for t in sel], dtype=np.intp)
        return idx, sets

    def bond_adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n_beads)]
        for t in self.terms:
            if t.kind == "bond":
                i, j = t.bead_ids
                adj[i].append(j)
                adj[j].append(i)
        for lst in adj:
            lst.sort()
        return adj

    def monomer_members(self) -> list[list[int]]:
        members: list[list[int]] = [[] for _ in range(self.n_monomers)]
        for b in self.beads:
            members[b.monomer_index].append(b.id)
        return members

    def __eq__(self, other) -> bool:
        if not isinstance(other, Topology):
            return NotImplemented
        return (
            self.beads == other.beads
            and self.terms == other.terms
            and self.n_monomers == other.n_monomers
            and self.backbone_order == other.backbone_order
        )


# ---------------------------------------------------------------------------
# Monomer template
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MonomerTemplate:
    """Structural fragment repeated per monomer.

    The default cellulose-acetate fragment is a declared assumption: a
    three-bead SP1 ring (first bead is the backbone attachment point) with
    two two-bead pendant arms (P3 attachment, Na tail). Swap in a different
    template to change the chemistry without touching the builder.
    """

    bead_types: tuple[str, ...]
    backbone_index: int
    bonds: tuple[tuple[int, int], ...]

    @property
    def n_beads(self) -> int:
        return len(self.bead_types)


CELLULOSE_ACETATE_TEMPLATE = MonomerTemplate(
    bead_types=("SP1", "SP1", "SP1", "P3", "P3", "Na", "Na"),
    backbone_index=0,
    bonds=((0, 1), (1, 2), (2, 0), (1, 3), (3, 5), (2, 4), (4, 6)),
)

# Geometry constants for the canonical conformation: every bonded pair sits
# at this separation and consecutive backbone bonds open at this angle.
TEMPLATE_BOND_LENGTH = 4.7
BACKBONE_ANGLE_RAD = 2.0 * math.pi / 3.0


def build_cellulose_acetate_chain(
    n_monomers: int, template: MonomerTemplate = CELLULOSE_ACETATE_TEMPLATE
) -> Topology:
    """Build an n-monomer chain from the monomer template.

    Every bead gets the equal default mass (monomer molar mass divided by
    the bead count), consecutive backbone beads are bonded, and angle /
    dihedral terms run along consecutive backbone triples / quadruples.
    """
    if n_monomers < 1:
        raise ValueError(f"n_monomers must be >= 1, got {n_monomers}")
    per = template.n_beads
    mass = MONOMER_MOLAR_MASS / per
    beads = []
    terms = []
    for m in range(n_monomers):
        base = m * per
        for k, tname in enumerate(template.bead_types):
            if tname not in BEAD_TYPES:
                raise TopologyError(f"template bead type {tname!r} unknown")
            beads.append(
                BeadSpec(
                    id=base + k,
                    bead_type=BEAD_TYPES[tname],
                    mass=mass,
                    monomer_index=m,
                    is_backbone=(k == template.backbone_index),
                )
            )
        for i, j in template.bonds:
            terms.append(BondedTerm("bond", (base + i, base + j), 0))
    bb = [m * per + template.backbone_index for m in range(n_monomers)]
    for m in range(n_monomers - 1):
        terms.append(BondedTerm("bond", (bb[m], bb[m + 1]), 0))
    for m in range(1, n_monomers - 1):
        terms.append(BondedTerm("angle", (bb[m - 1], bb[m], bb[m + 1]), 0))
    for m in range(n_monomers - 3):
        terms.append(BondedTerm("dihedral", (bb[m], bb[m + 1], bb[m + 2], bb[m + 3]), 0))
    return Topology(beads=beads, terms=terms, n_monomers=n_monomers)


# ---------------------------------------------------------------------------
# Canonical geometry
# ---------------------------------------------------------------------------


def _rot_x(v: np.ndarray, phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([v[0], v[1] * c - v[2] * s, v[1] * s + v[2] * c])


def canonical_positions(topo: Topology) -> np.ndarray:
    """Deterministic extended-chain reference conformation (N, 3) in Angstrom.

    Backbone beads zig-zag in the xy-plane with bond length 4.7 A and the
    backbone equilibrium angle; side beads are grown breadth-first from each
    backbone bead along its intra-monomer bonds, alternating the growth side
    per monomer. Rule: the k-th child of a backbone bead points along the
    in-plane normal rotated by k*60 deg about the chain axis; a side bead's
    first child continues its parent's direction (further children fan out
    by 45 deg). The default template reproduces an equilateral SP1 ring with
    straight pendant arms.
    """
    length = TEMPLATE_BOND_LENGTH
    dx = length * math.sin(BACKBONE_ANGLE_RAD / 2.0)
    dy = length * math.cos(BACKBONE_ANGLE_RAD / 2.0)

    n = topo.n_beads
    pos = np.full((n, 3), np.nan)
    direction = [None] * n
    adj = topo.bond_adjacency()
    members = topo.monomer_members()

    for m, bead_id in enumerate(topo.backbone_order):
        pos[bead_id] = (m * dx, (m % 2) * dy, 0.0)

    def place_children(parent: int, queue: list[int], monomer: set[int] | None, s: float):
        n_placed = 0
        parent_is_bb = direction[parent] is None
        for child in adj[parent]:
            if monomer is not None and child not in monomer:
                continue
            if not np.isnan(pos[child]).any():
                continue
            if parent_is_bb:
                d = _rot_x(np.array([0.0, s, 0.0]), n_placed * math.pi / 3.0)
            elif n_placed == 0:
                d = direction[parent]
            else:
                d = _rot_x(direction[parent], n_placed * math.pi / 4.0)
            pos[child] = pos[parent] + length * d
            direction[child] = d
            queue.append(child)
            n_placed += 1

    for m in range(topo.n_monomers):
        s = 1.0 if m % 2 == 0 else -1.0
        monomer = set(members[m])
        queue = [topo.backbone_order[m]]
        while queue:
            place_children(queue.pop(0), queue, monomer, s)

    # Beads only reachable across monomer boundaries (non-template inputs):
    # grow them from whatever placed neighbor they bond to.
    if np.isnan(pos).any():
        queue = [i for i in range(n) if not np.isnan(pos[i]).any()]
        while queue:
            parent = queue.pop(0)
            s = 1.0 if topo.beads[parent].monomer_index % 2 == 0 else -1.0
            place_children(parent, queue, None, s)
    if np.isnan(pos).any():
        missing = [i for i in range(n) if np.isnan(pos[i]).any()]
        raise TopologyError(f"beads {missing} unreachable through the bond graph")
    return pos


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def parse_topology(text: str) -> Topology:
    """Parse ``.p5t`` content. Errors carry the offending 1-based line number."""
    section = None
    bead_rows: dict[int, BeadSpec] = {}
    bead_lines: dict[int, int] = {}
    term_rows: list[tuple[int, BondedTerm]] = []
    section_kinds = {"[bonds]": "bond", "[angles]": "angle", "[dihedrals]": "dihedral"}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line not in ("[beads]", "[bonds]", "[angles]", "[dihedrals]"):
                raise TopologyError(f"line {lineno}: unknown section {line!r}")
            section = line
            continue
        if section is None:
            raise TopologyError(f"line {lineno}: data before any section header")
        tokens = line.split()
        if section == "[beads]":
            if len(tokens) != 5:
                raise TopologyError(
                    f"line {lineno}: bead row needs 5 fields "
                    f"(id type mass monomer backbone), got {len(tokens)}"
                )
            try:
                bead_id = int(tokens[0])
                mass = float(tokens[2])
                monomer = int(tokens[3])
                backbone = int(tokens[4])
            except ValueError as exc:
                raise TopologyError(f"line {lineno}: {exc}") from None
            if tokens[1] not in BEAD_TYPES:
                raise TopologyError(f"line {lineno}: unknown bead type {tokens[1]!r}")
            if backbone not in (0, 1):
                raise TopologyError(f"line {lineno}: backbone flag must be 0 or 1")
            if bead_id in bead_rows:
                raise TopologyError(
                    f"line {lineno}: duplicate bead id {bead_id} "
                    f"(first defined on line {bead_lines[bead_id]})"
                )
            bead_rows[bead_id] = BeadSpec(
                bead_id, BEAD_TYPES[tokens[1]], mass, monomer, bool(backbone)
            )
            bead_lines[bead_id] = lineno
        else:
            kind = section_kinds[section]
            arity = _TERM_ARITY[kind]
            if len(tokens) != arity + 1:
                raise TopologyError(
                    f"line {lineno}: {kind} row needs {arity + 1} fields, got {len(tokens)}"
                )
            try:
                ids = tuple(int(t) for t in tokens[:arity])
                pset = int(tokens[arity])
            except ValueError as exc:
                raise TopologyError(f"line {lineno}: {exc}") from None
            term_rows.append((lineno, BondedTerm(kind, ids, pset)))

    if not bead_rows:
        raise TopologyError("no [beads] section or no bead rows")
    n = len(bead_rows)
    for lineno, term in term_rows:
        for i in term.bead_ids:
            if i not in bead_rows:
                raise TopologyError(
                    f"line {lineno}: {term.kind} references bead {i} "
                    f"which is not defined ({n} beads)"
                )
    beads = [bead_rows[i] for i in sorted(bead_rows)]
    n_monomers = max(b.monomer_index for b in beads) + 1
    return Topology(
        beads=beads, terms=[t for _, t in term_rows], n_monomers=n_monomers
    )


def write_topology(topo: Topology) -> str:
    """Serialize to canonical ``.p5t`` text; byte-deterministic, reparses equal."""
    lines = ["[beads]"]
    for b in topo.beads:
        lines.append(
            f"{b.id} {b.bead_type.name} {b.mass!r} {b.monomer_index} {int(b.is_backbone)}"
        )
    for section, kind in (("bonds", "bond"), ("angles", "angle"), ("dihedrals", "dihedral")):
        rows = [t for t in topo.terms if t.kind == kind]
        if not rows:
            continue
        lines.append(f"[{section}]")
        for t in rows:
            lines.append(" ".join(str(i) for i in t.bead_ids) + f" {t.parameter_set_id}")
    return "\n".join(lines) + "\n"
