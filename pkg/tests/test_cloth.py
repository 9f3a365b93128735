import numpy as np
import pytest

from unfoldsim.cloth import (
    ClothMesh,
    Corner,
    GripperState,
    SimConfig,
    SimulationDiverged,
    apply_ee_displacement,
    build_constraints,
    init_cloth,
    kinetic_energy,
    pin_corner,
    release_grasp,
    step_sim,
    stretch_violation,
    tension_flag,
    try_grasp,
)
from unfoldsim._kernels import xpbd_substep


def make_hanging(resolution=(16, 16), size=(0.3, 0.3), config=None):
    mesh = init_cloth(size, resolution)
    pin_corner(mesh, Corner.NW)
    cons = build_constraints(mesh)
    return mesh, cons, config or SimConfig()


def test_grid_layout_spacing():
    mesh = init_cloth((0.3, 0.3), (16, 16))
    assert mesh.n_particles == 256
    p = mesh.positions.reshape(16, 16, 3)
    d_row = np.linalg.norm(p[1, 0] - p[0, 0])
    d_col = np.linalg.norm(p[0, 1] - p[0, 0])
    assert d_row == pytest.approx(0.02, abs=1e-12)
    assert d_col == pytest.approx(0.02, abs=1e-12)
    assert np.all(mesh.velocities == 0)
    assert mesh.pinned_index is None


def test_anisotropic_rest_lengths():
    mesh = init_cloth((0.4, 0.2), (32, 16))
    p = mesh.positions.reshape(32, 16, 3)
    assert np.linalg.norm(p[1, 0] - p[0, 0]) == pytest.approx(0.4 / 31, abs=1e-12)
    assert np.linalg.norm(p[0, 1] - p[0, 0]) == pytest.approx(0.2 / 15, abs=1e-12)


def test_resolution_below_minimum_rejected():
    with pytest.raises(ValueError, match="reward-grid minimum"):
        init_cloth((0.3, 0.3), (3, 5))


def test_nonfinite_pose_rejected():
    pose = np.eye(4)
    pose[0, 3] = np.nan
    with pytest.raises(ValueError):
        init_cloth((0.3, 0.3), (8, 8), pose)


def test_pose_applied():
    pose = np.eye(4)
    pose[:3, 3] = [1.0, 2.0, 3.0]
    mesh = init_cloth((0.3, 0.3), (8, 8), pose)
    assert np.allclose(mesh.positions.mean(axis=0), [1.0, 2.0, 3.0], atol=1e-12)


def test_pin_corner_ids():
    mesh = init_cloth((0.3, 0.3), (16, 16))
    pin_corner(mesh, Corner.NW)
    assert mesh.pinned_index == 0
    assert mesh.inverse_masses[0] == 0.0
    pin_corner(mesh, Corner.SE)  # re-pin replaces
    assert mesh.pinned_index == 255
    assert mesh.inverse_masses[255] == 0.0
    assert mesh.inverse_masses[0] > 0.0


def test_constraint_topology_counts():
    mesh = init_cloth((0.3, 0.3), (16, 16))
    cons = build_constraints(mesh)
    rows = cols = 16
    n_stretch = rows * (cols - 1) + (rows - 1) * cols
    n_shear = 2 * (rows - 1) * (cols - 1)
    n_bend = rows * (cols - 2) + (rows - 2) * cols
    assert cons.stretch == slice(0, n_stretch)
    assert cons.shear.stop - cons.shear.start == n_shear
    assert cons.bend.stop - cons.bend.start == n_bend
    assert (cons.pairs_a != cons.pairs_b).all()
    assert cons.pairs_a.min() >= 0 and cons.pairs_a.max() < mesh.n_particles
    assert cons.pairs_b.min() >= 0 and cons.pairs_b.max() < mesh.n_particles
    assert (cons.rest_lengths > 0).all()


def test_zero_gravity_fixed_point():
    mesh = init_cloth((0.3, 0.3), (8, 8))
    cons = build_constraints(mesh)
    cfg = SimConfig(gravity=(0.0, 0.0, 0.0))
    before = mesh.positions.copy()
    for _ in range(10):
        step_sim(mesh, cons, None, cfg)
    assert np.abs(mesh.positions - before).max() < 1e-12


def test_pinned_particle_immobile_bitwise():
    mesh, cons, cfg = make_hanging()
    pinned_pos = mesh.positions[mesh.pinned_index].copy()
    for _ in range(1000):
        step_sim(mesh, cons, None, cfg)
    assert np.array_equal(mesh.positions[mesh.pinned_index], pinned_pos)


def test_settles_below_one_percent_violation():
    mesh, cons, cfg = make_hanging()
    for _ in range(300):
        step_sim(mesh, cons, None, cfg)
    assert stretch_violation(mesh, cons) < 0.01


def test_single_constraint_projection_closed_form():
    # one free particle at 2x rest length converges onto the rest sphere
    pos = np.array([[0.0, 0.0, 0.0], [0.04, 0.0, 0.0]])
    vel = np.zeros((2, 3))
    inv_mass = np.array([0.0, 1.0])
    ca = np.array([0], dtype=np.int32)
    cb = np.array([1], dtype=np.int32)
    rest = np.array([0.02])
    compliance = np.array([0.0])
    unilateral = np.zeros(1, dtype=np.uint8)
    lam = np.zeros(1)
    xpbd_substep(
        pos, vel, inv_mass, ca, cb, rest, compliance, unilateral, lam,
        np.zeros(3), 1.0 / 120.0, 10, 0.0,
    )
    assert np.linalg.norm(pos[1] - pos[0]) == pytest.approx(0.02, abs=1e-3)


def test_determinism_bit_exact():
    runs = []
    for _ in range(2):
        mesh, cons, cfg = make_hanging()
        traj = []
        for _ in range(100):
            step_sim(mesh, cons, None, cfg)
            traj.append(mesh.positions.copy())
        runs.append(np.stack(traj))
    assert np.array_equal(runs[0], runs[1])


def test_energy_non_increasing_at_equilibrium():
    mesh, cons, cfg = make_hanging()
    for _ in range(900):
        step_sim(mesh, cons, None, cfg)
    ke = []
    for _ in range(100):
        step_sim(mesh, cons, None, cfg)
        ke.append(kinetic_energy(mesh))
    assert ke[-1] <= ke[0] + 1e-12


def test_divergence_detected():
    mesh, cons, cfg = make_hanging()
    mesh.positions[5, 1] = np.nan
    with pytest.raises(SimulationDiverged):
        step_sim(mesh, cons, None, cfg)


def test_try_grasp_within_radius():
    mesh, cons, cfg = make_hanging()
    target = mesh.corner_id(Corner.SE)
    ee = mesh.positions[target] + np.array([0.5 * 0.02, 0.0, 0.0])
    g = GripperState(ee_position=ee, grasp_radius=0.02)
    assert try_grasp(mesh, g)
    assert g.attached_particle == target
    assert mesh.inverse_masses[target] == 0.0


def test_try_grasp_outside_radius():
    mesh, cons, cfg = make_hanging()
    target = mesh.corner_id(Corner.SE)
    ee = mesh.positions[target] + np.array([2 * 0.02, 0.0, 0.0])
    g = GripperState(ee_position=ee, grasp_radius=0.02)
    assert not try_grasp(mesh, g)
    assert g.attached_particle is None


def test_try_grasp_tie_breaks_to_lower_id():
    mesh = init_cloth((0.3, 0.3), (16, 16))
    p = mesh.positions.reshape(16, 16, 3)
    ee = (p[8, 7] + p[8, 8]) / 2.0  # exactly between two horizontal neighbors
    g = GripperState(ee_position=ee, grasp_radius=0.02)
    assert try_grasp(mesh, g)
    assert g.attached_particle == 8 * 16 + 7


def test_try_grasp_skips_pinned():
    mesh, cons, cfg = make_hanging()
    g = GripperState(ee_position=mesh.positions[mesh.pinned_index].copy())
    assert try_grasp(mesh, g)
    assert g.attached_particle != mesh.pinned_index


def test_release_restores_mass():
    mesh, cons, cfg = make_hanging()
    target = mesh.corner_id(Corner.SE)
    g = GripperState(ee_position=mesh.positions[target].copy())
    assert try_grasp(mesh, g)
    release_grasp(mesh, g)
    assert g.attached_particle is None
    assert mesh.inverse_masses[target] == mesh.default_inverse_mass


def test_displacement_unattached_passthrough():
    mesh, cons, cfg = make_hanging()
    g = GripperState(ee_position=np.zeros(3))
    delta = np.array([0.3, -0.2, 0.1])
    applied = apply_ee_displacement(mesh, g, delta, cfg)
    assert np.array_equal(applied, delta)
    assert np.array_equal(g.ee_position, delta)


def test_displacement_zero_identity():
    mesh, cons, cfg = make_hanging()
    g = GripperState(ee_position=np.zeros(3))
    applied = apply_ee_displacement(mesh, g, np.zeros(3), cfg)
    assert np.array_equal(applied, np.zeros(3))


def test_displacement_nonfinite_rejected():
    mesh, cons, cfg = make_hanging()
    g = GripperState(ee_position=np.zeros(3))
    with pytest.raises(ValueError):
        apply_ee_displacement(mesh, g, np.array([np.inf, 0, 0]), cfg)


def grasped_setup():
    mesh, cons, cfg = make_hanging()
    for _ in range(240):
        step_sim(mesh, cons, None, cfg)
    target = mesh.corner_id(Corner.NE)
    g = GripperState(ee_position=mesh.positions[target].copy())
    assert try_grasp(mesh, g)
    return mesh, cons, cfg, g


def ratio(mesh, g):
    pin = mesh.positions[mesh.pinned_index]
    span = np.linalg.norm(mesh.positions[g.attached_particle] - pin)
    return span / mesh.geodesic_rest_distance(mesh.pinned_index, g.attached_particle)


def test_strain_clip_hits_threshold():
    mesh, cons, cfg, g = grasped_setup()
    # a pull far beyond the limit is clipped to land exactly on the threshold
    apply_ee_displacement(mesh, g, np.array([1.0, 1.0, 1.0]), cfg)
    assert ratio(mesh, g) == pytest.approx(cfg.strain_threshold, abs=1e-6)


def test_strain_bound_over_scripted_pulls():
    rng = np.random.default_rng(11)
    mesh, cons, cfg, g = grasped_setup()
    for _ in range(200):
        apply_ee_displacement(mesh, g, rng.uniform(-0.02, 0.02, size=3), cfg)
        for _ in range(4):
            step_sim(mesh, cons, g, cfg)
        assert ratio(mesh, g) <= cfg.strain_threshold + 1e-6


def test_tension_flag_cases():
    mesh, cons, cfg = make_hanging()
    g = GripperState(ee_position=np.zeros(3))
    assert not tension_flag(mesh, g, cfg)  # open gripper

    mesh, cons, cfg, g = grasped_setup()
    # move the grasped corner near the pin: slack
    pin = mesh.positions[mesh.pinned_index]
    geo = mesh.geodesic_rest_distance(mesh.pinned_index, g.attached_particle)
    slack_target = pin + np.array([0.0, -0.4 * geo, 0.0])
    apply_ee_displacement(mesh, g, slack_target - g.ee_position, cfg)
    assert not tension_flag(mesh, g, cfg)
    # pull to the strain limit: taut
    apply_ee_displacement(mesh, g, np.array([1.0, 0.0, 1.0]), cfg)
    assert ratio(mesh, g) == pytest.approx(cfg.strain_threshold, abs=1e-6)
    assert tension_flag(mesh, g, cfg)


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(timestep=0.0)
    with pytest.raises(ValueError):
        SimConfig(solver_iterations=0)
    with pytest.raises(ValueError):
        SimConfig(strain_threshold=1.0)
    with pytest.raises(ValueError):
        SimConfig(tension_ratio=1.2)
    with pytest.raises(ValueError):
        SimConfig(damping=1.0)
