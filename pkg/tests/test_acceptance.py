"""Acceptance suite: one test per release criterion, each printing PASS/FAIL.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. Tolerances are fixed here and are not meant to be tuned.
"""

import time

import numpy as np
import pytest

from unfoldsim.cloth import (
    Corner,
    SimConfig,
    build_constraints,
    init_cloth,
    pin_corner,
    step_sim,
    stretch_violation,
)
from unfoldsim.config import AppConfig
from unfoldsim.env import ClothUnfoldEnv, EnvConfig
from unfoldsim.evaluate import evaluate_replay
from unfoldsim.expert import ExpertPolicy, collect_demonstrations, run_expert_episode
from unfoldsim.normals import NormalsParams, decode_normals, depth_to_normals
from unfoldsim.replay import AugmentationParams, BufferConfig, ReplayBuffer
from unfoldsim.rewards import (
    compute_a_max,
    reward,
    subsample_grid,
    surface_area,
    timestep_penalty,
)
from .test_rewards import flat_grid, heron_area
from .test_replay import IDENTITY_RANGES, synthetic_record


class _gate:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        print(f"\nACCEPTANCE {self.name}: {status}")
        return False


@pytest.fixture(scope="module")
def demo_set(tmp_path_factory):
    env = ClothUnfoldEnv()  # rendering on: demos must carry real observations
    return collect_demonstrations(3, 9000, tmp_path_factory.mktemp("demos"), env=env)


def test_eq1_oracle_equivalence():
    with _gate("surface-area oracle equivalence"):
        rng = np.random.default_rng(2024)
        t0 = time.perf_counter()
        worst = 0.0
        for _ in range(1000):
            grid = rng.random((4, 4, 3))
            worst = max(worst, abs(surface_area(grid) - heron_area(grid)))
        elapsed = time.perf_counter() - t0
        assert worst <= 1e-9, f"oracle gap {worst}"
        assert abs(surface_area(flat_grid()) - 1.0) <= 1e-9
        assert elapsed < 1.0, f"took {elapsed:.3f}s"


def test_eq2_reward_contract():
    with _gate("reward contract"):
        # R = A_norm - t, exactly
        rng = np.random.default_rng(1)
        for _ in range(1000):
            a, t = rng.uniform(0, 1.2), rng.uniform(0, 1)
            assert reward(a, t) == a - t
        # freshly spawned flat cloth normalizes to exactly 1
        mesh = init_cloth((0.33, 0.29), (16, 16))
        a_max = compute_a_max(mesh.positions, (16, 16))
        assert surface_area(subsample_grid(mesh.positions, (16, 16))) / a_max == 1.0
        # the penalty reaches exactly 1 at the final allowed timestep
        assert timestep_penalty(300, 300) == 1.0
        env = ClothUnfoldEnv(EnvConfig(render_observations=False,
                                       max_episode_timesteps=5))
        env.reset(3)
        for _ in range(5):
            res = env.step([0, 0, 0, -1])
        assert res.done and res.info["t"] == 1.0


def test_normals_pipeline_analytic():
    with _gate("normals pipeline analytic"):
        p = NormalsParams()
        flat = decode_normals(depth_to_normals(np.full((256, 256), 0.5), p))
        assert np.abs(flat - [0.0, 0.0, 1.0]).max() <= 1e-3
        for deg in (10, 20, 30):
            th = np.radians(deg)
            u = np.arange(256) - 127.5
            d = 0.5 + np.tan(th) * p.pixel_scale * u[None, :] * np.ones((256, 1))
            n = decode_normals(depth_to_normals(d, p))
            target = np.array([-np.sin(th), 0.0, np.cos(th)])
            err = np.abs(n[8:56, 8:56] - target).max()
            assert err <= 0.02, f"{deg} deg: err {err}"
        times = []
        d = 0.5 + np.tan(0.3) * p.pixel_scale * u[None, :] * np.ones((256, 1))
        for _ in range(5):
            t0 = time.perf_counter()
            depth_to_normals(d, p)
            times.append(time.perf_counter() - t0)
        assert min(times) < 0.1, f"pipeline took {min(times):.3f}s per image"


def test_physics_stability():
    with _gate("physics stability"):
        def settle():
            mesh = init_cloth((0.3, 0.3), (16, 16))
            pin_corner(mesh, Corner.NW)
            cons = build_constraints(mesh)
            cfg = SimConfig()
            pin_before = mesh.positions[mesh.pinned_index].copy()
            traj = []
            for _ in range(300):
                step_sim(mesh, cons, None, cfg)
                traj.append(mesh.positions.copy())
            return mesh, cons, pin_before, np.stack(traj)

        mesh_a, cons_a, pin_before, traj_a = settle()
        assert stretch_violation(mesh_a, cons_a) < 0.01
        assert np.array_equal(mesh_a.positions[mesh_a.pinned_index], pin_before)
        _, _, _, traj_b = settle()
        assert np.array_equal(traj_a, traj_b), "trajectories not bit-identical"


def test_strain_limit_over_episodes():
    with _gate("strain limit"):
        env = ClothUnfoldEnv(EnvConfig(render_observations=False))
        theta = env.config.sim.strain_threshold
        for seed in range(7000, 7010):
            env.reset(seed)
            expert = ExpertPolicy()
            expert.reset(env)
            while True:
                res = env.step(expert.action(env))
                g = env.gripper
                if (
                    g.attached_particle is not None
                    and g.attached_particle != env.mesh.pinned_index
                ):
                    pin = env.mesh.positions[env.mesh.pinned_index]
                    span = np.linalg.norm(
                        env.mesh.positions[g.attached_particle] - pin
                    )
                    geo = env.mesh.geodesic_rest_distance(
                        env.mesh.pinned_index, g.attached_particle
                    )
                    assert span <= theta * geo + 1e-6
                if res.done:
                    break


def test_expert_benchmark_desk_scale():
    with _gate("expert benchmark"):
        # privileged evaluation: the expert never reads images, so rendering
        # is off and the 100 episodes measure manipulation alone
        env = ClothUnfoldEnv(EnvConfig(render_observations=False))
        t0 = time.perf_counter()
        results = [run_expert_episode(env, 31337 + i)[0] for i in range(100)]
        elapsed = time.perf_counter() - t0
        successes = sum(r["category"] == "success" for r in results)
        mean_steps = np.mean([r["steps"] for r in results])
        print(
            f"\n  expert: {successes}% success, mean {mean_steps:.1f} steps, "
            f"{elapsed:.1f}s wall"
        )
        assert successes >= 70, f"success rate {successes}%"
        assert mean_steps < env.config.max_episode_timesteps
        assert elapsed < 300.0, f"benchmark took {elapsed:.1f}s"


def test_replay_buffer_modifications(demo_set):
    with _gate("replay buffer modifications"):
        paths, summaries = demo_set
        # (a) demos preloaded before any agent transition, with goal coverage
        buf = ReplayBuffer(BufferConfig())
        n = buf.preload_demos(paths)
        assert n > 0 and buf.n_transitions == n
        assert buf.demo_transitions() == n
        from unfoldsim.episodes import load_episode

        assert max(load_episode(p).a_norm.max() for p in paths) >= 0.8
        buf.add_episode(synthetic_record(n=8))  # agent data strictly after

        # (b) batch consistency: duplicated frames augment identically
        dup = ReplayBuffer(BufferConfig())
        dup.add_episode(synthetic_record(n=4))
        batch = dup.sample(8, 4, np.random.default_rng(5))
        for b in range(1, 8):
            assert np.array_equal(batch.standoff[b], batch.standoff[0])
            assert np.array_equal(batch.wrist[b], batch.wrist[0])

        # (c) the augmentation family contains no flips and no big rotations
        rng = np.random.default_rng(6)
        cfg = BufferConfig()
        for _ in range(10_000):
            par = AugmentationParams.sample(cfg, rng)
            assert np.linalg.det(par.linear_part()) > 0.0
            assert abs(par.rotation_deg) <= 15.0

        # (d) identity-range augmentation is a bit-exact identity
        ident = ReplayBuffer(BufferConfig(**IDENTITY_RANGES))
        rec = synthetic_record(n=6)
        ident.add_episode(rec)
        got = ident.sample(2, 6, np.random.default_rng(7))
        want = rec.obs_standoff[:6].astype(np.float32) / 255.0
        assert np.array_equal(got.standoff[0], want)


def test_wire_determinism(demo_set):
    with _gate("end-to-end wire determinism"):
        paths, _ = demo_set
        report = evaluate_replay(paths[:1], AppConfig())
        ep = report["episodes"][0]
        assert ep["valid"] and ep["reward_trace_bit_exact"] is True
