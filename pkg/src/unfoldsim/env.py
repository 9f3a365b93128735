"""Episode orchestration: seeded randomized resets, step semantics, rewards.

One environment owns one cloth instance. A reset samples the randomization,
spawns the cloth flat (caching the reference area before gravity acts), pins a
corner, lets the cloth settle, and places the end effector. Steps move the end
effector, handle grasp/release edges, advance the physics and emit the
area-based reward with early stopping at the configured unfold fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import cloth as cl
from . import normals as nm
from . import render as rd
from . import rewards as rw


class EpisodeFinished(RuntimeError):
    """step() was called on a finished episode."""


@dataclass
class RandomizationRanges:
    """Per-episode domain randomization, driven solely by the episode seed.

    Color/texture variation is meaningless under normals observations, so the
    visual randomization budget goes to geometry and physics jitter instead.
    """

    size_u: tuple[float, float] = (0.25, 0.35)
    size_v: tuple[float, float] = (0.25, 0.35)
    yaw: tuple[float, float] = (-math.pi, math.pi)
    spawn_center: tuple[float, float, float] = (0.0, 0.75, 0.0)
    spawn_jitter_xz: tuple[float, float] = (-0.05, 0.05)
    spawn_jitter_y: tuple[float, float] = (-0.02, 0.02)
    corners: tuple[cl.Corner, ...] = (
        cl.Corner.NW,
        cl.Corner.NE,
        cl.Corner.SW,
        cl.Corner.SE,
    )
    ee_start_x: tuple[float, float] = (-0.25, 0.25)
    ee_start_y: tuple[float, float] = (0.45, 0.75)
    ee_start_z: tuple[float, float] = (-0.35, -0.15)
    compliance_scale: tuple[float, float] = (0.7, 1.4)
    mass_scale: tuple[float, float] = (0.8, 1.25)


@dataclass
class CameraConfig:
    width: int = 256
    height: int = 256
    fx: float = 256.0
    fy: float = 256.0
    near: float = 0.05
    far: float = 3.0
    standoff_eye: tuple[float, float, float] = (0.0, 0.55, -0.9)
    standoff_target: tuple[float, float, float] = (0.0, 0.55, 0.0)
    wrist_translation: tuple[float, float, float] = (0.0, 0.05, -0.08)
    wrist_nominal_distance: float = 0.25

    @property
    def cx(self) -> float:
        return self.width / 2.0

    @property
    def cy(self) -> float:
        return self.height / 2.0


@dataclass
class EnvConfig:
    resolution: tuple[int, int] = (16, 16)
    cloth_mass: float = 1.0
    stretch_compliance: float = 0.0
    shear_compliance: float = 1e-3
    bend_compliance: float = 5e-2
    sim: cl.SimConfig = field(default_factory=cl.SimConfig)
    cameras: CameraConfig = field(default_factory=CameraConfig)
    randomization: RandomizationRanges = field(default_factory=RandomizationRanges)
    physics_substeps: int = 8
    max_step_displacement: float = 0.02
    max_episode_timesteps: int = 300
    early_stop_threshold: float = 0.8
    category_near_threshold: float = 0.6
    grasp_radius: float = 0.02
    workspace_min: tuple[float, float, float] = (-0.8, 0.05, -0.8)
    workspace_max: tuple[float, float, float] = (0.8, 1.15, 0.8)
    render_observations: bool = True

    def category_thresholds(self) -> rw.CategoryThresholds:
        return rw.CategoryThresholds(
            success=self.early_stop_threshold, near=self.category_near_threshold
        )


@dataclass
class Observation:
    standoff_normals: np.ndarray  # (64, 64, 3) float32 in [0, 1]
    wrist_normals: np.ndarray  # (64, 64, 3) float32 in [0, 1]
    proprio: np.ndarray  # (5,) float32: ee xyz, width, tension


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool
    info: dict


def _rot_y(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _wrist_mount(cfg: CameraConfig) -> np.ndarray:
    """Camera pose in the (translation-only) end-effector frame.

    The rotation matches look_at toward world +z: image x right, y down.
    """
    m = np.eye(4)
    m[:3, :3] = np.array([[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]])
    m[:3, 3] = cfg.wrist_translation
    return m


class ClothUnfoldEnv:
    """Gym-style cloth unfolding environment (reset / step / env_spec)."""

    def __init__(self, config: EnvConfig | None = None):
        self.config = config or EnvConfig()
        cams = self.config.cameras
        self._standoff_camera = rd.Camera(
            fx=cams.fx,
            fy=cams.fy,
            cx=cams.cx,
            cy=cams.cy,
            world_to_camera=rd.look_at(cams.standoff_eye, cams.standoff_target),
            near=cams.near,
            far=cams.far,
            width=cams.width,
            height=cams.height,
            role=rd.CameraRole.STAND_OFF,
        )
        standoff_dist = float(
            np.linalg.norm(
                np.asarray(cams.standoff_target) - np.asarray(cams.standoff_eye)
            )
        )
        self._standoff_normals = nm.NormalsParams(
            near=cams.near, far=cams.far, pixel_scale=standoff_dist / cams.fx
        )
        self._wrist_normals = nm.NormalsParams(
            near=cams.near,
            far=cams.far,
            pixel_scale=cams.wrist_nominal_distance / cams.fx,
        )
        self._wrist_mount = _wrist_mount(cams)

        self.mesh: cl.ClothMesh | None = None
        self.constraints: cl.ConstraintSet | None = None
        self.gripper: cl.GripperState | None = None
        self.a_max: float | None = None
        self.step_index = 0
        self.max_a_norm = 0.0
        self.a_norm = 0.0
        self.done = True
        self.episode_seed: int | None = None
        self.randomization_sample: dict | None = None

    # -- episode lifecycle ---------------------------------------------------

    def reset(self, seed: int) -> Observation:
        cfg = self.config
        rng = np.random.default_rng(seed)
        rr = cfg.randomization

        size = (rng.uniform(*rr.size_u), rng.uniform(*rr.size_v))
        yaw = rng.uniform(*rr.yaw)
        center = np.asarray(rr.spawn_center, dtype=np.float64) + np.array(
            [
                rng.uniform(*rr.spawn_jitter_xz),
                rng.uniform(*rr.spawn_jitter_y),
                rng.uniform(*rr.spawn_jitter_xz),
            ]
        )
        corner = rr.corners[int(rng.integers(len(rr.corners)))]
        ee_start = np.array(
            [
                rng.uniform(*rr.ee_start_x),
                rng.uniform(*rr.ee_start_y),
                rng.uniform(*rr.ee_start_z),
            ]
        )
        compliance_scale = rng.uniform(*rr.compliance_scale)
        mass_scale = rng.uniform(*rr.mass_scale)

        pose = np.eye(4)
        pose[:3, :3] = _rot_y(yaw)
        pose[:3, 3] = center
        mesh = cl.init_cloth(
            size, cfg.resolution, pose, mass=cfg.cloth_mass * mass_scale
        )
        # reference area must come from the flat spawn, before gravity acts
        self.a_max = rw.compute_a_max(mesh.positions, cfg.resolution)
        cl.pin_corner(mesh, corner)
        constraints = cl.build_constraints(
            mesh,
            stretch_compliance=cfg.stretch_compliance,
            shear_compliance=cfg.shear_compliance * compliance_scale,
            bend_compliance=cfg.bend_compliance * compliance_scale,
        )

        gripper = cl.GripperState(
            ee_position=ee_start.copy(), grasp_radius=cfg.grasp_radius
        )
        for _ in range(cfg.sim.settle_steps):
            cl.step_sim(mesh, constraints, None, cfg.sim)

        self.mesh = mesh
        self.constraints = constraints
        self.gripper = gripper
        self.step_index = 0
        self.done = False
        self.episode_seed = seed
        self.a_norm = self._measure_a_norm()
        self.max_a_norm = self.a_norm
        self.randomization_sample = {
            "size": [float(size[0]), float(size[1])],
            "yaw": float(yaw),
            "center": [float(v) for v in center],
            "corner": corner.value,
            "ee_start": [float(v) for v in ee_start],
            "compliance_scale": float(compliance_scale),
            "mass_scale": float(mass_scale),
        }
        return self._observe()

    def step(self, action) -> StepResult:
        if self.done or self.mesh is None:
            raise EpisodeFinished("episode finished; call reset()")
        cfg = self.config
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(4), -1.0, 1.0)

        delta = a[:3] * cfg.max_step_displacement
        target = np.clip(
            self.gripper.ee_position + delta,
            np.asarray(cfg.workspace_min),
            np.asarray(cfg.workspace_max),
        )
        cl.apply_ee_displacement(
            self.mesh, self.gripper, target - self.gripper.ee_position, cfg.sim
        )

        grasped_now = False
        want_closed = a[3] > 0.0
        if want_closed and not self.gripper.closed:
            self.gripper.closed = True
            grasped_now = cl.try_grasp(self.mesh, self.gripper)
        elif not want_closed and self.gripper.closed:
            cl.release_grasp(self.mesh, self.gripper)
            self.gripper.closed = False

        for _ in range(cfg.physics_substeps):
            cl.step_sim(self.mesh, self.constraints, self.gripper, cfg.sim)

        self.step_index += 1
        self.a_norm = self._measure_a_norm()
        self.max_a_norm = max(self.max_a_norm, self.a_norm)
        t = rw.timestep_penalty(self.step_index, cfg.max_episode_timesteps)
        r = rw.reward(self.a_norm, t)

        early = self.a_norm >= cfg.early_stop_threshold
        self.done = early or self.step_index >= cfg.max_episode_timesteps

        info = {
            "A_norm": self.a_norm,
            "max_A_norm": self.max_a_norm,
            "t": t,
            "grasped": self.gripper.attached_particle is not None,
            "grasped_now": grasped_now,
            "early_stopped": early,
            "step_index": self.step_index,
        }
        return StepResult(self._observe(), r, self.done, info)

    def env_spec(self) -> dict:
        cfg = self.config
        return {
            "observation": {
                "standoff_normals": [nm.OUTPUT_SIZE, nm.OUTPUT_SIZE, 3],
                "wrist_normals": [nm.OUTPUT_SIZE, nm.OUTPUT_SIZE, 3],
                "proprio": [5],
            },
            "action": {"shape": [4], "low": -1.0, "high": 1.0},
            "max_episode_timesteps": cfg.max_episode_timesteps,
            "reward_range": [-1.0, cfg.sim.strain_threshold**2],
            "early_stop_threshold": cfg.early_stop_threshold,
        }

    # -- internals -----------------------------------------------------------

    def _measure_a_norm(self) -> float:
        grid = rw.subsample_grid(self.mesh.positions, self.config.resolution)
        return rw.surface_area(grid) / self.a_max

    def _tension(self) -> bool:
        return cl.tension_flag(self.mesh, self.gripper, self.config.sim)

    def render_depth_pair(self) -> tuple[np.ndarray, np.ndarray]:
        """Raw depth images (standoff, wrist) for the current state."""
        wrist_cam = rd.update_wrist_camera(
            self.gripper, self._wrist_mount, self._standoff_camera
        )
        return (
            rd.render_depth(self.mesh, self.gripper, self._standoff_camera),
            rd.render_depth(self.mesh, self.gripper, wrist_cam),
        )

    def render_normal_pair(self) -> tuple[np.ndarray, np.ndarray]:
        """Normal images (standoff, wrist) for the current state, float64."""
        d_stand, d_wrist = self.render_depth_pair()
        far = self.config.cameras.far
        return (
            nm.depth_to_normals(
                rd.fill_background(d_stand, far), self._standoff_normals
            ),
            nm.depth_to_normals(rd.fill_background(d_wrist, far), self._wrist_normals),
        )

    def _observe(self) -> Observation:
        if self.config.render_observations:
            n_stand, n_wrist = self.render_normal_pair()
            standoff = n_stand.astype(np.float32)
            wrist = n_wrist.astype(np.float32)
        else:
            shape = (nm.OUTPUT_SIZE, nm.OUTPUT_SIZE, 3)
            standoff = np.zeros(shape, dtype=np.float32)
            wrist = np.zeros(shape, dtype=np.float32)
        proprio = np.array(
            [
                self.gripper.ee_position[0],
                self.gripper.ee_position[1],
                self.gripper.ee_position[2],
                self.gripper.gripper_width,
                1.0 if self._tension() else 0.0,
            ],
            dtype=np.float32,
        )
        return Observation(standoff, wrist, proprio)
