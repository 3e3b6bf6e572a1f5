import numpy as np
import pytest

from p5sim.errors import ForceFieldError, GeometryError, OverlapError
from p5sim.forcefield import (
    AngleParams,
    AnomalyThresholds,
    BondParams,
    DihedralParams,
    ForceFieldParams,
    ForceFieldTables,
    compute_bonded,
    compute_lj,
    default_forcefield_params,
    detect_anomalies,
    parse_forcefield,
    total_energy_forces,
    write_forcefield,
)
from p5sim.topology import (
    BEAD_TYPES,
    BeadSpec,
    BondedTerm,
    Topology,
    build_cellulose_acetate_chain,
    canonical_positions,
)


def chain_topology(n_beads, bonds=None, types=None):
    """Linear chain of single-bead monomers (keeps the bond graph connected)."""
    types = types or ["Na"] * n_beads
    beads = [BeadSpec(i, BEAD_TYPES[types[i]], 65.0, i, True) for i in range(n_beads)]
    terms = [BondedTerm("bond", (i, i + 1), 0) for i in range(n_beads - 1)]
    for b in bonds or []:
        terms.append(BondedTerm(*b))
    return Topology(beads=beads, terms=terms, n_monomers=n_beads)


def numeric_forces(fn, topo, pos, params, tables=None, h=1e-5):
    out = np.zeros_like(pos)
    for i in range(pos.shape[0]):
        for d in range(3):
            up, dn = pos.copy(), pos.copy()
            up[i, d] += h
            dn[i, d] -= h
            out[i, d] = -(
                fn(topo, up, params, tables).potential_energy
                - fn(topo, dn, params, tables).potential_energy
            ) / (2 * h)
    return out


def test_equilibrium_geometry_zero_energy():
    topo = build_cellulose_acetate_chain(5)
    ef = compute_bonded(topo, canonical_positions(topo), default_forcefield_params())
    assert ef.potential_energy == pytest.approx(0.0, abs=1e-18)
    assert np.abs(ef.forces).max() < 1e-10


def test_single_bond_analytic():
    topo = chain_topology(2)
    k, r0, delta = 7.0, 4.7, 0.35
    params = ForceFieldParams(
        bond_sets=[BondParams(k, r0)], angle_sets=[], dihedral_sets=[],
        lj_table={("Na", "Na"): (0.0, 5.2)}, cutoff=12.0,
    )
    pos = np.array([[0.0, 0, 0], [r0 + delta, 0, 0]])
    ef = compute_bonded(topo, pos, params)
    assert ef.potential_energy == pytest.approx(0.5 * k * delta**2, rel=1e-14)
    assert ef.forces[0] == pytest.approx([k * delta, 0, 0])
    assert ef.forces[1] == pytest.approx([-k * delta, 0, 0])


def _randomized_params():
    base = default_forcefield_params()
    return ForceFieldParams(
        bond_sets=base.bond_sets,
        angle_sets=[AngleParams(kj := 15.0, 1.9)],
        dihedral_sets=[DihedralParams(2.0, 3, 0.7)],
        lj_table=base.lj_table,
        cutoff=base.cutoff,
        exclusion_depth=base.exclusion_depth,
    )


def test_forces_match_finite_differences():
    rng = np.random.default_rng(11)
    params = _randomized_params()
    for trial in range(3):
        topo = build_cellulose_acetate_chain(3)  # 21 beads
        pos = canonical_positions(topo) + rng.normal(0, 0.35, (topo.n_beads, 3))
        tables = ForceFieldTables(topo, params)
        ef = total_energy_forces(topo, pos, params, tables)
        fd = numeric_forces(total_energy_forces, topo, pos, params, tables)
        rel = np.abs(ef.forces - fd).max() / np.abs(fd).max()
        assert rel < 1e-6


def test_lj_minimum_and_cutoff():
    topo = chain_topology(2)
    eps, sig, rc = 1.3, 5.2, 15.0
    params = ForceFieldParams(
        bond_sets=[BondParams(0.0, 4.7)], angle_sets=[], dihedral_sets=[],
        lj_table={("Na", "Na"): (eps, sig)}, cutoff=rc, exclusion_depth=0,
    )
    rmin = 2.0 ** (1 / 6) * sig
    ef = compute_lj(topo, np.array([[0.0, 0, 0], [rmin, 0, 0]]), params)
    shift = 4 * eps * ((sig / rc) ** 12 - (sig / rc) ** 6)
    assert ef.potential_energy == pytest.approx(-eps - shift, rel=1e-12)
    assert np.abs(ef.forces).max() < 1e-12

    ef = compute_lj(topo, np.array([[0.0, 0, 0], [rc + 0.01, 0, 0]]), params)
    assert ef.potential_energy == 0.0
    assert np.abs(ef.forces).max() == 0.0


def test_shifted_potential_continuity_at_cutoff():
    topo = chain_topology(2)
    params = ForceFieldParams(
        bond_sets=[BondParams(0.0, 4.7)], angle_sets=[], dihedral_sets=[],
        lj_table={("Na", "Na"): (0.9, 5.2)}, cutoff=12.0, exclusion_depth=0,
    )
    for eps_step in (1e-6, 1e-9):
        ef = compute_lj(topo, np.array([[0.0, 0, 0], [12.0 - eps_step, 0, 0]]), params)
        assert abs(ef.potential_energy) < 1e-5


def _brute_lj(pos, types, params, excluded):
    rc = params.cutoff
    energy = 0.0
    forces = np.zeros_like(pos)
    n = len(pos)
    for i in range(n):
        for j in range(i + 1, n):
            if (i, j) in excluded:
                continue
            eps, sig = params.lj_table[(types[i], types[j])]
            rv = pos[j] - pos[i]
            r2 = float(rv @ rv)
            if r2 >= rc * rc:
                continue
            sr6 = (sig * sig / r2) ** 3
            sr12 = sr6 * sr6
            shift = 4 * eps * ((sig / rc) ** 12 - (sig / rc) ** 6)
            energy += 4 * eps * (sr12 - sr6) - shift
            fmag = 24 * eps * (2 * sr12 - sr6) / r2
            forces[i] += fmag * (-rv)
            forces[j] -= fmag * (-rv)
    return energy, forces


def test_lj_matches_all_pairs_oracle_200_beads():
    rng = np.random.default_rng(5)
    n = 200
    types = [("Na", "P3", "SP1")[int(i)] for i in rng.integers(0, 3, n)]
    topo = chain_topology(n, types=types)
    params = default_forcefield_params()
    excluded = {(i, j) for i in range(n) for j in (i + 1, i + 2) if j < n}
    pos = rng.uniform(0, 55, (n, 3))
    ef = compute_lj(topo, pos, params)
    e_ref, f_ref = _brute_lj(pos, types, params, excluded)
    assert ef.potential_energy == pytest.approx(e_ref, rel=1e-10)
    assert np.abs(ef.forces - f_ref).max() <= 1e-10 * max(1.0, np.abs(f_ref).max())


def test_cell_decomposition_does_not_change_results():
    rng = np.random.default_rng(9)
    topo = chain_topology(120)
    params = default_forcefield_params()
    pos = rng.uniform(0, 70, (120, 3))
    ref = compute_lj(topo, pos, params)  # dense path
    for edge in (12.0, 13.7, 29.0, 500.0):
        out = compute_lj(topo, pos, params, cell_edge=edge)
        assert out.potential_energy == ref.potential_energy
        assert np.array_equal(out.forces, ref.forces)


def test_newtons_third_law_and_net_force():
    rng = np.random.default_rng(3)
    topo = build_cellulose_acetate_chain(4)
    params = _randomized_params()
    pos = canonical_positions(topo) + rng.normal(0, 0.3, (topo.n_beads, 3))
    ef = total_energy_forces(topo, pos, params)
    assert np.abs(ef.forces.sum(axis=0)).max() < 1e-8


def test_translation_and_rotation_invariance():
    from scipy.spatial.transform import Rotation

    rng = np.random.default_rng(4)
    topo = build_cellulose_acetate_chain(4)
    params = _randomized_params()
    pos = canonical_positions(topo) + rng.normal(0, 0.3, (topo.n_beads, 3))
    e0 = total_energy_forces(topo, pos, params).potential_energy
    e_shift = total_energy_forces(topo, pos + np.array([5.0, -3.0, 2.0]), params)
    assert e_shift.potential_energy == pytest.approx(e0, rel=1e-10)
    rot = Rotation.from_rotvec([0.4, -0.8, 1.2]).as_matrix()
    e_rot = total_energy_forces(topo, pos @ rot.T, params)
    assert e_rot.potential_energy == pytest.approx(e0, rel=1e-10)


def test_total_is_sum_of_parts_and_components():
    rng = np.random.default_rng(6)
    topo = build_cellulose_acetate_chain(3)
    params = _randomized_params()
    pos = canonical_positions(topo) + rng.normal(0, 0.3, (topo.n_beads, 3))
    total = total_energy_forces(topo, pos, params)
    bonded = compute_bonded(topo, pos, params)
    lj = compute_lj(topo, pos, params)
    assert total.potential_energy == bonded.potential_energy + lj.potential_energy
    assert np.array_equal(total.forces, bonded.forces + lj.forces)
    comp_sum = sum(total.components.values())
    assert total.potential_energy == pytest.approx(comp_sum, rel=1e-10)


def test_single_isolated_bead():
    topo = chain_topology(1)
    ef = total_energy_forces(topo, np.zeros((1, 3)), default_forcefield_params())
    assert ef.potential_energy == 0.0
    assert np.abs(ef.forces).max() == 0.0


def test_exclusion_depth_semantics():
    # four beads in a row, only the 1-4 pair interacts at depth 2
    topo = chain_topology(4)
    params = ForceFieldParams(
        bond_sets=[BondParams(0.0, 4.7)], angle_sets=[], dihedral_sets=[],
        lj_table={("Na", "Na"): (1.0, 5.2)}, cutoff=30.0, exclusion_depth=2,
    )
    pos = np.array([[0.0, 0, 0], [6.0, 0, 0], [12.0, 0, 0], [18.0, 0, 0]])
    ef = compute_lj(topo, pos, params)
    e_ref, _ = _brute_lj(pos, ["Na"] * 4, params, {(0, 1), (1, 2), (2, 3), (0, 2), (1, 3)})
    assert ef.potential_energy == pytest.approx(e_ref, rel=1e-12)
    assert e_ref != 0.0


def test_overlap_error():
    topo = chain_topology(2)
    params = default_forcefield_params()
    pos = np.array([[0.0, 0, 0], [0.2, 0, 0]])
    with pytest.raises(OverlapError):
        compute_lj(topo, pos, params)


def test_zero_length_bond_error():
    topo = chain_topology(2)
    params = default_forcefield_params()
    with pytest.raises(GeometryError, match="zero-length bond"):
        compute_bonded(topo, np.zeros((2, 3)), params)


def test_collinear_angle_error():
    topo = chain_topology(3, bonds=[("angle", (0, 1, 2), 0)])
    params = ForceFieldParams(
        bond_sets=[BondParams(1.0, 4.7)], angle_sets=[AngleParams(1.0, 1.9)],
        dihedral_sets=[], lj_table={("Na", "Na"): (0.0, 5.2)}, cutoff=12.0,
    )
    pos = np.array([[0.0, 0, 0], [4.7, 0, 0], [9.4, 0, 0]])
    with pytest.raises(GeometryError, match="collinear angle"):
        compute_bonded(topo, pos, params)


def test_degenerate_dihedral_error_only_when_active():
    topo = chain_topology(4, bonds=[("dihedral", (0, 1, 2, 3), 0)])
    pos = np.array([[0.0, 0, 0], [4.7, 0, 0], [9.4, 0, 0], [14.1, 0, 0]])
    free = ForceFieldParams(
        bond_sets=[BondParams(1.0, 4.7)], angle_sets=[],
        dihedral_sets=[DihedralParams(0.0, 1, 0.0)],
        lj_table={("Na", "Na"): (0.0, 5.2)}, cutoff=12.0,
    )
    compute_bonded(topo, pos, free)  # k = 0: free rotor, no error
    stiff = ForceFieldParams(
        bond_sets=[BondParams(1.0, 4.7)], angle_sets=[],
        dihedral_sets=[DihedralParams(2.0, 1, 0.0)],
        lj_table={("Na", "Na"): (0.0, 5.2)}, cutoff=12.0,
    )
    with pytest.raises(GeometryError, match="dihedral"):
        compute_bonded(topo, pos, stiff)


# ---------------------------------------------------------------------------
# Anomaly detection
# ---------------------------------------------------------------------------


def _dimer_frames(lengths, pes=None):
    frames = []
    for t, length in enumerate(lengths):
        pos = np.array([[0.0, 0, 0], [length, 0, 0]])
        frames.append((t, pos, 0.0 if pes is None else pes[t]))
    return frames


def test_anomalies_clean_trajectory_empty():
    topo = chain_topology(2)
    params = default_forcefield_params()
    report = detect_anomalies(_dimer_frames([4.7] * 50), topo, params)
    assert report.events == []
    assert not report


def test_anomalies_empty_input():
    topo = chain_topology(2)
    report = detect_anomalies([], topo, default_forcefield_params())
    assert report.events == []


def test_bond_breakage_flagged_at_step():
    topo = chain_topology(2)
    params = default_forcefield_params()  # r0 = 4.7
    lengths = [4.7] * 20
    lengths[7] = 1.6 * 4.7
    report = detect_anomalies(_dimer_frames(lengths), topo, params)
    assert len(report.events) == 1
    ev = report.events[0]
    assert ev.kind == "bond_breakage" and ev.step == 7
    assert ev.detail[:2] == (0, 1)
    # compression counts too
    lengths[7] = 0.4 * 4.7
    report = detect_anomalies(_dimer_frames(lengths), topo, params)
    assert [e.step for e in report.events] == [7]


def test_energy_spike_flagged():
    topo = chain_topology(2)
    params = default_forcefield_params()
    pes = [1.0] * 60
    pes[31] = 500.0  # overlap-style explosion
    report = detect_anomalies(_dimer_frames([4.7] * 60, pes), topo, params)
    kinds = {(e.kind, e.step) for e in report.events}
    assert ("energy_spike", 31) in kinds
    assert all(k == "energy_spike" for k, _ in kinds)


def test_events_sorted_by_step():
    topo = chain_topology(2)
    params = default_forcefield_params()
    lengths = [4.7] * 40
    lengths[30] = 8.0
    lengths[5] = 8.0
    pes = [1.0] * 40
    pes[20] = 400.0
    report = detect_anomalies(_dimer_frames(lengths, pes), topo, params)
    steps = [e.step for e in report.events]
    assert steps == sorted(steps)
    assert {e.step for e in report.events} >= {5, 20, 30}


# ---------------------------------------------------------------------------
# Parameter file round trip
# ---------------------------------------------------------------------------


def test_forcefield_file_roundtrip():
    params = default_forcefield_params()
    text = write_forcefield(params)
    again = parse_forcefield(text)
    assert again.bond_sets == params.bond_sets
    assert again.angle_sets == params.angle_sets
    assert again.dihedral_sets == params.dihedral_sets
    assert again.lj_table == params.lj_table
    assert again.cutoff == params.cutoff
    assert again.exclusion_depth == params.exclusion_depth


def test_forcefield_parse_errors():
    with pytest.raises(ForceFieldError, match="unknown section"):
        parse_forcefield("[nope]\n")
    with pytest.raises(ForceFieldError, match="line 2"):
        parse_forcefield("[bondsets]\n1.0\n")
    with pytest.raises(ForceFieldError, match="cutoff"):
        ForceFieldParams(
            bond_sets=[], angle_sets=[], dihedral_sets=[],
            lj_table={("Na", "Na"): (1.0, 5.2)}, cutoff=4.0,
        )
    with pytest.raises(ForceFieldError, match="asymmetric"):
        ForceFieldParams(
            bond_sets=[], angle_sets=[], dihedral_sets=[],
            lj_table={("Na", "P3"): (1.0, 5.2), ("P3", "Na"): (2.0, 5.2)},
            cutoff=12.0,
        )
