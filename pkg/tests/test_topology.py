import numpy as np
import pytest

from p5sim.errors import TopologyError
from p5sim.topology import (
    BEAD_TYPES,
    BACKBONE_ANGLE_RAD,
    BeadSpec,
    BondedTerm,
    TEMPLATE_BOND_LENGTH,
    Topology,
    build_cellulose_acetate_chain,
    canonical_positions,
    parse_topology,
    write_topology,
)

ONE_BEAD = """
[beads]
0 Na 65.0 0 1
"""


def test_parse_one_bead_minimal():
    topo = parse_topology(ONE_BEAD)
    assert topo.n_beads == 1
    assert topo.terms == []
    assert topo.backbone_order == [0]
    assert topo.beads[0].bead_type.name == "Na"


def test_parse_built_75mer_counts_and_masses():
    topo = parse_topology(write_topology(build_cellulose_acetate_chain(75)))
    assert topo.n_beads == 525
    members = topo.monomer_members()
    for m in range(75):
        mass = sum(topo.beads[i].mass for i in members[m])
        assert mass == pytest.approx(458.0, rel=1e-12)


def test_parse_dangling_reference_reports_line():
    text = write_topology(build_cellulose_acetate_chain(75))
    text += "[bonds]\n0 999 0\n"
    bad_line = len(text.splitlines())
    with pytest.raises(TopologyError) as exc:
        parse_topology(text)
    assert f"line {bad_line}" in str(exc.value)
    assert "999" in str(exc.value)


@pytest.mark.parametrize(
    "rows,message",
    [
        ("[beads]\n0 Na 65.0 0 1\n0 Na 65.0 1 1", "duplicate bead id"),
        ("[beads]\n0 Xx 65.0 0 1", "unknown bead type"),
        ("[beads]\n0 Na 65.0 0 1\n[bonds]\n0 1", "needs 3 fields"),
        ("[beads]\n0 Na 65.0 0 1\n1 Na 65.0 1 0", "no backbone bead"),
        ("[beads]\n0 Na -2.0 0 1", "non-positive mass"),
        ("[beads]\n0 Na 65.0 0 1\n[angles]\n0 0 0 0", "repeats a bead id"),
    ],
)
def test_parse_error_cases(rows, message):
    with pytest.raises(TopologyError) as exc:
        parse_topology(rows)
    assert message in str(exc.value)


def test_disconnected_bond_graph_rejected():
    beads = [
        BeadSpec(0, BEAD_TYPES["Na"], 65.0, 0, True),
        BeadSpec(1, BEAD_TYPES["Na"], 65.0, 1, True),
    ]
    with pytest.raises(TopologyError, match="disconnected"):
        Topology(beads=beads, terms=[], n_monomers=2)


def _random_topology(rng: np.random.Generator) -> Topology:
    n_mono = int(rng.integers(1, 5))
    beads, terms = [], []
    bead_id = 0
    backbone = []
    for m in range(n_mono):
        per = int(rng.integers(1, 4))
        first = bead_id
        for k in range(per):
            tname = rng.choice(["Na", "P3", "SP1"])
            beads.append(
                BeadSpec(bead_id, BEAD_TYPES[tname], float(rng.uniform(10, 100)),
                         m, k == 0)
            )
            if k > 0:
                terms.append(BondedTerm("bond", (bead_id - 1, bead_id), int(rng.integers(0, 3))))
            bead_id += 1
        backbone.append(first)
    for m in range(n_mono - 1):
        terms.append(BondedTerm("bond", (backbone[m], backbone[m + 1]), 0))
    n = bead_id
    if n >= 3:
        for _ in range(int(rng.integers(0, 3))):
            ids = rng.choice(n, size=3, replace=False)
            terms.append(BondedTerm("angle", tuple(int(i) for i in ids), int(rng.integers(0, 2))))
    if n >= 4:
        for _ in range(int(rng.integers(0, 3))):
            ids = rng.choice(n, size=4, replace=False)
            terms.append(BondedTerm("dihedral", tuple(int(i) for i in ids), 0))
    return Topology(beads=beads, terms=terms, n_monomers=n_mono)


def test_roundtrip_property_random_topologies():
    rng = np.random.default_rng(20240817)
    for _ in range(50):
        topo = _random_topology(rng)
        text = write_topology(topo)
        again = parse_topology(text)
        assert again == topo
        assert write_topology(again) == text


def test_write_is_byte_deterministic():
    t = build_cellulose_acetate_chain(7)
    assert write_topology(t) == write_topology(build_cellulose_acetate_chain(7))


def test_builder_mass_conservation():
    for n in (1, 2, 10, 75):
        topo = build_cellulose_acetate_chain(n)
        total = sum(b.mass for b in topo.beads)
        assert total == pytest.approx(458.0 * n, rel=1e-12)


def test_builder_counts_against_independent_recount():
    topo = build_cellulose_acetate_chain(75)
    assert topo.n_beads == 525
    assert len(topo.backbone_order) == 75
    # independent recount straight off the term list
    mono = {b.id: b.monomer_index for b in topo.beads}
    inter = [
        t for t in topo.terms
        if t.kind == "bond" and mono[t.bead_ids[0]] != mono[t.bead_ids[1]]
    ]
    assert len(inter) == 74
    assert sum(1 for t in topo.terms if t.kind == "angle") == 73
    assert sum(1 for t in topo.terms if t.kind == "dihedral") == 72


def test_builder_single_monomer():
    topo = build_cellulose_acetate_chain(1)
    assert topo.n_beads == 7
    assert sum(b.mass for b in topo.beads) == pytest.approx(458.0, rel=1e-12)
    mono = {b.id: b.monomer_index for b in topo.beads}
    assert all(
        mono[t.bead_ids[0]] == mono[t.bead_ids[1]]
        for t in topo.terms
        if t.kind == "bond"
    )


def test_builder_rejects_zero_monomers():
    with pytest.raises(ValueError):
        build_cellulose_acetate_chain(0)


def test_backbone_coverage():
    topo = build_cellulose_acetate_chain(12)
    assert len(topo.backbone_order) == 12
    for m, bead_id in enumerate(topo.backbone_order):
        assert topo.beads[bead_id].is_backbone
        assert topo.beads[bead_id].monomer_index == m


def test_connectivity_union_find_oracle():
    topo = build_cellulose_acetate_chain(9)
    parent = list(range(topo.n_beads))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for t in topo.terms:
        if t.kind == "bond":
            parent[find(t.bead_ids[0])] = find(t.bead_ids[1])
    assert len({find(i) for i in range(topo.n_beads)}) == 1


def test_canonical_positions_geometry():
    topo = build_cellulose_acetate_chain(6)
    pos = canonical_positions(topo)
    assert np.isfinite(pos).all()
    idx, _ = topo.terms_of_kind("bond")
    lengths = np.linalg.norm(pos[idx[:, 1]] - pos[idx[:, 0]], axis=1)
    assert np.allclose(lengths, TEMPLATE_BOND_LENGTH, atol=1e-9)
    bb = np.array(topo.backbone_order)
    u = pos[bb[:-2]] - pos[bb[1:-1]]
    v = pos[bb[2:]] - pos[bb[1:-1]]
    cos = np.einsum("ij,ij->i", u, v) / (
        np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
    )
    assert np.allclose(np.arccos(cos), BACKBONE_ANGLE_RAD, atol=1e-9)
    # no two beads coincide
    from scipy.spatial.distance import pdist

    assert pdist(pos).min() > 1.0


def test_canonical_positions_single_bead():
    topo = parse_topology(ONE_BEAD)
    pos = canonical_positions(topo)
    assert pos.shape == (1, 3)
    assert np.allclose(pos, 0.0)
