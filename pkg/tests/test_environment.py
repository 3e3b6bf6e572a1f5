import math

import numpy as np
import pytest

from p5sim.dynamics import LangevinParams, langevin_step
from p5sim.environment import (
    ActionVector,
    EnvConfig,
    PolymerEnv,
    action_length,
    compute_reward,
    init_log_density,
    observation_length,
    observe,
    radius_of_gyration,
    reset,
    step,
)
from p5sim.forcefield import default_forcefield_params, total_energy_forces
from p5sim.topology import build_cellulose_acetate_chain, canonical_positions

FF = default_forcefield_params()


def make_env(n_monomers=2, **cfg_kw):
    topo = build_cellulose_acetate_chain(n_monomers)
    cfg = EnvConfig(**cfg_kw)
    return topo, cfg, PolymerEnv(topo, cfg, FF, LangevinParams.for_topology(topo))


# ---------------------------------------------------------------------------
# Radius of gyration
# ---------------------------------------------------------------------------


def test_rg_coincident_beads():
    assert radius_of_gyration(np.ones((5, 3))) == 0.0


def test_rg_symmetric_pair():
    assert radius_of_gyration(np.array([[0.0, 0, 0], [2.0, 0, 0]])) == pytest.approx(1.0)


def test_rg_matches_direct_summation_oracle():
    rng = np.random.default_rng(42)
    for _ in range(10):
        pos = rng.uniform(-60, 60, (525, 3))
        got = radius_of_gyration(pos)
        n = pos.shape[0]
        cx = sum(p[0] for p in pos) / n
        cy = sum(p[1] for p in pos) / n
        cz = sum(p[2] for p in pos) / n
        acc = sum(
            (p[0] - cx) ** 2 + (p[1] - cy) ** 2 + (p[2] - cz) ** 2 for p in pos
        )
        assert got == pytest.approx(math.sqrt(acc / n), rel=1e-12)


def test_rg_mass_weighted_matches_unweighted_for_equal_masses():
    rng = np.random.default_rng(1)
    pos = rng.uniform(0, 10, (21, 3))
    w = np.full(21, 458.0 / 7.0)
    assert radius_of_gyration(pos, w) == pytest.approx(radius_of_gyration(pos), rel=1e-14)


def test_rg_empty_rejected():
    with pytest.raises(ValueError):
        radius_of_gyration(np.empty((0, 3)))


# ---------------------------------------------------------------------------
# Reward
# ---------------------------------------------------------------------------


def test_reward_at_band_center():
    cfg = EnvConfig()
    r = compute_reward(100.0, cfg)
    assert (r.r_dist, r.r_rg, r.r_shaping) == (0.0, cfg.k_r, cfg.k_s)
    assert r.total == cfg.k_r + cfg.k_s


def test_reward_outside_band():
    cfg = EnvConfig()
    r = compute_reward(250.0, cfg)
    assert r.r_dist == pytest.approx(-cfg.k_d * 2500.0)
    assert r.r_rg == 0.0
    assert r.r_shaping == pytest.approx(-0.5 * cfg.k_s)
    assert r.total == r.r_dist + r.r_rg + r.r_shaping


def test_reward_at_upper_boundary():
    cfg = EnvConfig()
    r = compute_reward(cfg.target_rg_max, cfg)
    assert r.r_dist == 0.0
    assert r.r_rg == cfg.k_r
    assert r.r_shaping == pytest.approx(0.0, abs=1e-15)


def test_reward_continuity_and_jump_at_bounds():
    cfg = EnvConfig(target_rg_min=12.0, target_rg_max=30.0)
    eps = 1e-9
    for edge in (12.0, 30.0):
        below = compute_reward(edge - eps, cfg)
        above = compute_reward(edge + eps, cfg)
        assert abs(below.r_dist - above.r_dist) < 1e-6
        assert abs(below.r_shaping - above.r_shaping) < 1e-6
        # r_rg carries the full k_r discontinuity
        assert abs(below.r_rg - above.r_rg) == pytest.approx(cfg.k_r)


def test_reward_gain_scaling_preserves_ranking():
    rng = np.random.default_rng(3)
    rgs = rng.uniform(0, 60, 64)
    cfg1 = EnvConfig(target_rg_min=10, target_rg_max=25, k_d=0.002, k_r=0.8, k_s=0.3)
    c = 7.5
    cfg2 = EnvConfig(
        target_rg_min=10, target_rg_max=25, k_d=0.002 * c, k_r=0.8 * c, k_s=0.3 * c
    )
    t1 = np.array([compute_reward(r, cfg1).total for r in rgs])
    t2 = np.array([compute_reward(r, cfg2).total for r in rgs])
    assert np.allclose(t2, c * t1, rtol=1e-12)
    assert np.array_equal(np.argsort(t1), np.argsort(t2))


def test_reward_rejects_negative_rg():
    with pytest.raises(ValueError):
        compute_reward(-0.1, EnvConfig())


# ---------------------------------------------------------------------------
# Reset
# ---------------------------------------------------------------------------


def test_reset_deterministic():
    topo, cfg, _ = make_env(3)
    s1, o1 = reset(topo, cfg, 77)
    s2, o2 = reset(topo, cfg, 77)
    assert np.array_equal(s1.positions, s2.positions)
    assert np.array_equal(o1.vector, o2.vector)


def test_reset_zero_noise_is_canonical():
    topo = build_cellulose_acetate_chain(3)
    cfg = EnvConfig(init_noise_sigma=0.0)
    state, _ = reset(topo, cfg, 5)
    assert np.array_equal(state.positions, canonical_positions(topo))
    assert np.abs(state.velocities).max() == 0.0


def test_reset_default_chain_rg_positive_finite():
    topo = build_cellulose_acetate_chain(75)
    state, obs = reset(topo, EnvConfig(), 0)
    rg = obs.vector[-3]
    assert math.isfinite(rg) and rg > 0
    assert rg == pytest.approx(radius_of_gyration(state.positions), rel=1e-14)


def test_init_log_density_matches_direct_gaussian():
    topo = build_cellulose_acetate_chain(2)
    cfg = EnvConfig(init_noise_sigma=0.7)
    state, _ = reset(topo, cfg, 3)
    delta = state.positions - canonical_positions(topo)
    s = 0.7
    expected = float(
        np.sum(-0.5 * (delta / s) ** 2 - 0.5 * np.log(2 * np.pi) - np.log(s))
    )
    assert init_log_density(state.positions, topo, cfg) == pytest.approx(expected, rel=1e-12)


# ---------------------------------------------------------------------------
# Observation
# ---------------------------------------------------------------------------


def test_observation_length_formula():
    topo = build_cellulose_acetate_chain(75)
    cfg = EnvConfig(k_neighbors=4)
    assert observation_length(topo, cfg) == 75 * 23 + 3 == 1728
    state, obs = reset(topo, cfg, 0)
    assert len(obs) == 1728
    assert action_length(topo) == 375


def test_observation_handcrafted_two_monomer_chain():
    topo = build_cellulose_acetate_chain(2)
    cfg = EnvConfig(init_noise_sigma=0.0, k_neighbors=2, obs_radius=5.0)
    state, obs = reset(topo, cfg, 0)
    pos = canonical_positions(topo)
    center = pos.mean(axis=0)
    bb = topo.backbone_order
    width = 11 + 3 * 2
    for b_idx, bead in enumerate(bb):
        block = obs.vector[b_idx * width: (b_idx + 1) * width]
        assert block[0:3] == pytest.approx(pos[bead] - center, abs=1e-12)
        assert np.all(block[3:9] == 0.0)  # velocities and spins start at zero
        assert block[9] == 0.0   # no interior backbone triple with B = 2
        assert block[10] == 0.0  # no backbone quadruple
        # neighbor block: 2 nearest within 5 A, computed independently
        d = np.linalg.norm(pos - pos[bead], axis=1)
        d[bead] = np.inf
        order = np.argsort(d, kind="stable")[:2]
        expected = []
        for nb in order:
            expected.extend(pos[nb] - pos[bead] if d[nb] <= 5.0 else [0.0, 0, 0])
        assert block[11:] == pytest.approx(np.array(expected), abs=1e-12)
    assert obs.vector[-3] == pytest.approx(radius_of_gyration(pos), rel=1e-14)
    assert obs.vector[-2] == cfg.target_rg_min
    assert obs.vector[-1] == cfg.target_rg_max


def test_observation_backbone_angle_and_dihedral_values():
    topo = build_cellulose_acetate_chain(5)
    cfg = EnvConfig(init_noise_sigma=0.0)
    state, obs = reset(topo, cfg, 0)
    pos = state.positions
    bb = topo.backbone_order
    width = 11 + 3 * cfg.k_neighbors

    def angle(a, b, c):
        u, v = pos[a] - pos[b], pos[c] - pos[b]
        return math.atan2(
            np.linalg.norm(np.cross(u, v)), float(u @ v)
        )

    def dihedral(a, b, c, d):
        b1, b2, b3 = pos[b] - pos[a], pos[c] - pos[b], pos[d] - pos[c]
        n1, n2 = np.cross(b1, b2), np.cross(b2, b3)
        return math.atan2(
            float(np.dot(np.cross(n1, n2), b2 / np.linalg.norm(b2))), float(n1 @ n2)
        )

    vec = obs.vector
    assert vec[0 * width + 9] == 0.0
    assert vec[4 * width + 9] == 0.0
    for i in (1, 2, 3):
        assert vec[i * width + 9] == pytest.approx(
            angle(bb[i - 1], bb[i], bb[i + 1]), abs=1e-12
        )
    for i in (0, 1):
        assert vec[i * width + 10] == pytest.approx(
            dihedral(bb[i], bb[i + 1], bb[i + 2], bb[i + 3]), abs=1e-12
        )
    for i in (2, 3, 4):
        assert vec[i * width + 10] == 0.0


def test_observation_neighbor_radius_cutoff():
    topo = build_cellulose_acetate_chain(2)
    state, _ = reset(topo, EnvConfig(init_noise_sigma=0.0), 0)
    # shrink the radius until even the bonded neighbors fall outside
    obs = observe(state, topo, EnvConfig(obs_radius=0.5, k_neighbors=3))
    width = 11 + 9
    for b in range(2):
        assert np.all(obs.vector[b * width + 11: (b + 1) * width] == 0.0)


def test_observation_fuzz_fixed_length_no_nan():
    topo = build_cellulose_acetate_chain(4)
    cfg = EnvConfig(k_neighbors=3)
    n = observation_length(topo, cfg)
    rng = np.random.default_rng(0)
    from p5sim.dynamics import SystemState

    for _ in range(300):
        state = SystemState(
            rng.uniform(-30, 30, (topo.n_beads, 3)),
            rng.normal(0, 1, (topo.n_beads, 3)),
            rng.normal(0, 1, (topo.n_beads, 3)),
            0,
        )
        obs = observe(state, topo, cfg)
        assert len(obs) == n
        assert np.isfinite(obs.vector).all()


# ---------------------------------------------------------------------------
# Step
# ---------------------------------------------------------------------------


def test_zero_action_matches_bare_integrator():
    topo, cfg, env = make_env(3, episode_length=50)
    state, _ = env.reset(11)
    dyn = env.dyn_params
    rng_env = np.random.default_rng(4)
    rng_bare = np.random.default_rng(4)
    result = env.step(ActionVector.zeros(3), rng_env)
    forces = total_energy_forces(topo, state.positions, FF).forces
    bare = langevin_step(state, forces, np.zeros_like(forces), dyn, rng_bare)
    assert np.array_equal(env.state.positions, bare.positions)
    assert np.array_equal(env.state.velocities, bare.velocities)


def test_done_exactly_at_episode_length():
    topo, cfg, env = make_env(2, episode_length=5)
    env.reset(0)
    rng = np.random.default_rng(1)
    flags = [env.step(ActionVector.zeros(2), rng).done for _ in range(5)]
    assert flags == [False, False, False, False, True]


def test_reward_consistency_with_new_state():
    topo, cfg, env = make_env(2, episode_length=10)
    env.reset(3)
    rng = np.random.default_rng(9)
    res = env.step(ActionVector.zeros(2), rng)
    again = compute_reward(radius_of_gyration(env.state.positions), cfg)
    assert res.reward == again
    assert res.info.rg == pytest.approx(radius_of_gyration(env.state.positions), rel=0)


def test_force_action_changes_backbone_dynamics():
    topo, cfg, env = make_env(2, episode_length=10, f_coef=5.0)
    env.reset(3)
    rng_a = np.random.default_rng(2)
    rng_b = np.random.default_rng(2)
    values = np.zeros(10)
    values.reshape(2, 5)[:, 0] = 1.0   # +x direction
    values.reshape(2, 5)[:, 3] = 1.0   # full magnitude
    env_b = PolymerEnv(topo, cfg, FF, env.dyn_params)
    env_b.reset(3)
    r_zero = env.step(ActionVector.zeros(2), rng_a)
    r_push = env_b.step(ActionVector(values), rng_b)
    bb = topo.backbone_order
    dv = env_b.state.velocities[bb] - env.state.velocities[bb]
    expected = 5.0 * env.dyn_params.dt / (458.0 / 7.0)
    assert dv[:, 0] == pytest.approx([expected] * 2, rel=1e-10)
    assert dv[:, 1:] == pytest.approx(np.zeros((2, 2)), abs=1e-15)


def test_action_bounds_validated():
    topo, cfg, env = make_env(2)
    env.reset(0)
    bad = np.zeros(10)
    bad[0] = 1.5
    with pytest.raises(ValueError):
        env.step(ActionVector(bad), np.random.default_rng(0))
    bad = np.zeros(10)
    bad[3] = -0.2  # alpha below range
    with pytest.raises(ValueError):
        env.step(ActionVector(bad), np.random.default_rng(0))


def test_pure_step_equals_env_step():
    topo = build_cellulose_acetate_chain(2)
    cfg = EnvConfig(episode_length=10)
    dyn = LangevinParams.for_topology(topo)
    env = PolymerEnv(topo, cfg, FF, dyn)
    state0, _ = env.reset(8)
    action = ActionVector.zeros(2)
    res_env = env.step(action, np.random.default_rng(5))
    new_state, res_pure, _ = step(
        state0, action, topo, cfg, FF, dyn, np.random.default_rng(5)
    )
    assert np.array_equal(new_state.positions, env.state.positions)
    assert res_pure.reward == res_env.reward
    assert res_pure.info == res_env.info
    assert np.array_equal(res_pure.observation.vector, res_env.observation.vector)


def test_episode_termination_for_many_seeds():
    topo, cfg, env = make_env(2, episode_length=7)
    for seed in range(5):
        env.reset(seed)
        rng = np.random.default_rng(seed)
        for t in range(7):
            res = env.step(ActionVector.zeros(2), rng)
            assert res.done == (t == 6)


def test_config_validation():
    with pytest.raises(ValueError):
        EnvConfig(target_rg_min=30.0, target_rg_max=20.0)
    with pytest.raises(ValueError):
        EnvConfig(episode_length=0)
    with pytest.raises(ValueError):
        EnvConfig(theta_max=0.0)
