"""Particle-grid cloth with XPBD distance constraints.

The cloth is a regular rows x cols particle grid connected by stretch
(neighbor), shear (diagonal) and bend (second-neighbor) distance constraints,
integrated with substepped position-based dynamics. One corner can be pinned
(hung), and a point gripper can attach to a particle and drag it around,
subject to a hard strain limit between the pinned and grasped particles.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import constraint_violations, xpbd_substep

MIN_RESOLUTION = 4  # reward grid needs 4 samples per axis


class SimulationDiverged(RuntimeError):
    """Raised when integration produces non-finite particle positions."""


class Corner(enum.Enum):
    NW = "NW"
    NE = "NE"
    SW = "SW"
    SE = "SE"


@dataclass
class SimConfig:
    timestep: float = 1.0 / 120.0
    solver_iterations: int = 25
    gravity: tuple[float, float, float] = (0.0, -9.81, 0.0)
    strain_threshold: float = 1.1
    tension_ratio: float = 0.95
    settle_steps: int = 240
    damping: float = 0.05

    def __post_init__(self):
        if self.timestep <= 0:
            raise ValueError("timestep must be positive")
        if self.solver_iterations < 1:
            raise ValueError("solver_iterations must be >= 1")
        if self.strain_threshold <= 1.0:
            raise ValueError("strain_threshold must exceed 1")
        if not 0.0 < self.tension_ratio < self.strain_threshold:
            raise ValueError("tension_ratio must be in (0, strain_threshold)")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must be in [0, 1)")


@dataclass
class ClothMesh:
    resolution: tuple[int, int]  # (rows, cols)
    cloth_size: tuple[float, float]  # meters spanned by (rows, cols) axes
    positions: np.ndarray  # (N, 3) float64, meters
    velocities: np.ndarray  # (N, 3) float64, m/s
    inverse_masses: np.ndarray  # (N,) float64, 0 = kinematic
    rest_uv: np.ndarray  # (N, 2) flat-mesh coordinates, meters
    default_inverse_mass: float
    pinned_index: int | None = None

    @property
    def n_particles(self) -> int:
        return self.resolution[0] * self.resolution[1]

    def particle_id(self, row: int, col: int) -> int:
        return row * self.resolution[1] + col

    def corner_id(self, corner: Corner) -> int:
        rows, cols = self.resolution
        lookup = {
            Corner.NW: (0, 0),
            Corner.NE: (0, cols - 1),
            Corner.SW: (rows - 1, 0),
            Corner.SE: (rows - 1, cols - 1),
        }
        return self.particle_id(*lookup[corner])

    def geodesic_rest_distance(self, a: int, b: int) -> float:
        """Distance between two particles along the flat rest mesh."""
        d = self.rest_uv[a] - self.rest_uv[b]
        return float(math.hypot(d[0], d[1]))


@dataclass
class ConstraintSet:
    """Distance constraints over the particle grid, concatenated by type.

    Unilateral constraints cap the distance from every particle to the pinned
    one at its flat-mesh geodesic distance (long-range attachments); they keep
    the hanging cloth inextensible without needing many solver iterations.
    """

    pairs_a: np.ndarray  # (M,) int32
    pairs_b: np.ndarray  # (M,) int32
    rest_lengths: np.ndarray  # (M,) float64
    compliance: np.ndarray  # (M,) float64, meters/Newton
    unilateral: np.ndarray  # (M,) uint8, 1 = upper-bound-only constraint
    stretch: slice = field(default=slice(0, 0))
    shear: slice = field(default=slice(0, 0))
    bend: slice = field(default=slice(0, 0))
    attachment: slice = field(default=slice(0, 0))
    _lambdas: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self._lambdas is None:
            self._lambdas = np.zeros(len(self.pairs_a))

    @property
    def n_constraints(self) -> int:
        return len(self.pairs_a)


@dataclass
class GripperState:
    ee_position: np.ndarray  # (3,) float64
    grasp_radius: float = 0.02
    max_width: float = 0.08
    closed: bool = False
    attached_particle: int | None = None
    _saved_inverse_mass: float = 0.0

    @property
    def gripper_width(self) -> float:
        if not self.closed:
            return self.max_width
        return 0.004 if self.attached_particle is not None else 0.0


def init_cloth(
    size: tuple[float, float],
    resolution: tuple[int, int],
    pose: np.ndarray | None = None,
    mass: float = 1.0,
) -> ClothMesh:
    """Lay out a flat particle grid under a rigid pose.

    The grid spans size[0] meters along the row axis and size[1] along the
    column axis, centered on the local origin in the local x-z plane (y up),
    then transformed by `pose` (4x4 homogeneous). Velocities start at zero and
    nothing is pinned.
    """
    rows, cols = resolution
    if rows < MIN_RESOLUTION or cols < MIN_RESOLUTION:
        raise ValueError("resolution below reward-grid minimum (4 per axis)")
    if size[0] <= 0 or size[1] <= 0:
        raise ValueError("cloth size components must be positive")
    if pose is None:
        pose = np.eye(4)
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (4, 4) or not np.isfinite(pose).all():
        raise ValueError("pose must be a finite 4x4 transform")

    u = np.linspace(0.0, size[0], rows)
    v = np.linspace(0.0, size[1], cols)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    local = np.stack(
        [uu - size[0] / 2.0, np.zeros_like(uu), vv - size[1] / 2.0], axis=-1
    ).reshape(-1, 3)
    world = local @ pose[:3, :3].T + pose[:3, 3]

    n = rows * cols
    inv_mass = np.full(n, 1.0 / mass)
    return ClothMesh(
        resolution=(rows, cols),
        cloth_size=(float(size[0]), float(size[1])),
        positions=np.ascontiguousarray(world),
        velocities=np.zeros((n, 3)),
        inverse_masses=inv_mass,
        rest_uv=np.stack([uu, vv], axis=-1).reshape(-1, 2),
        default_inverse_mass=1.0 / mass,
    )


def build_constraints(
    mesh: ClothMesh,
    stretch_compliance: float = 0.0,
    shear_compliance: float = 1e-3,
    bend_compliance: float = 5e-2,
) -> ConstraintSet:
    """Grid-topology constraints with rest lengths from current geometry.

    When the mesh has a pinned corner, one unilateral attachment constraint is
    added from every other particle to the pin, capped at the flat-mesh
    geodesic distance. Rebuild after re-pinning.
    """
    rows, cols = mesh.resolution

    def pid(i, j):
        return i * cols + j

    stretch, shear, bend = [], [], []
    for i in range(rows):
        for j in range(cols):
            if j + 1 < cols:
                stretch.append((pid(i, j), pid(i, j + 1)))
            if i + 1 < rows:
                stretch.append((pid(i, j), pid(i + 1, j)))
            if i + 1 < rows and j + 1 < cols:
                shear.append((pid(i, j), pid(i + 1, j + 1)))
                shear.append((pid(i, j + 1), pid(i + 1, j)))
            if j + 2 < cols:
                bend.append((pid(i, j), pid(i, j + 2)))
            if i + 2 < rows:
                bend.append((pid(i, j), pid(i + 2, j)))

    pairs = np.array(stretch + shear + bend, dtype=np.int32)
    compliance = np.concatenate(
        [
            np.full(len(stretch), stretch_compliance),
            np.full(len(shear), shear_compliance),
            np.full(len(bend), bend_compliance),
        ]
    )
    rest = np.linalg.norm(
        mesh.positions[pairs[:, 0]] - mesh.positions[pairs[:, 1]], axis=1
    )
    if not (rest > 0).all():
        raise ValueError("degenerate rest lengths in constraint build")
    unilateral = np.zeros(len(pairs), dtype=np.uint8)

    if mesh.pinned_index is not None:
        # Gauss-Seidel sweeps far-from-pin constraints first so load
        # corrections propagate toward the anchor within one iteration.
        geo = np.linalg.norm(mesh.rest_uv - mesh.rest_uv[mesh.pinned_index], axis=1)
        sizes = [len(stretch), len(shear), len(bend)]
        start = 0
        for sz in sizes:
            sl = slice(start, start + sz)
            key = np.minimum(geo[pairs[sl, 0]], geo[pairs[sl, 1]])
            order = np.argsort(-key, kind="stable")
            pairs[sl] = pairs[sl][order]
            rest[sl] = rest[sl][order]
            compliance[sl] = compliance[sl][order]
            start += sz

    n_st, n_sh, n_bd = len(stretch), len(shear), len(bend)
    n_topo = n_st + n_sh + n_bd
    n_lra = 0
    if mesh.pinned_index is not None:
        pin = mesh.pinned_index
        others = np.array(
            [p for p in range(mesh.n_particles) if p != pin], dtype=np.int32
        )
        lra_rest = np.linalg.norm(
            mesh.rest_uv[others] - mesh.rest_uv[pin], axis=1
        )
        pairs = np.concatenate(
            [pairs, np.stack([np.full(len(others), pin, dtype=np.int32), others], axis=1)]
        )
        rest = np.concatenate([rest, lra_rest])
        compliance = np.concatenate([compliance, np.zeros(len(others))])
        unilateral = np.concatenate(
            [unilateral, np.ones(len(others), dtype=np.uint8)]
        )
        n_lra = len(others)

    return ConstraintSet(
        pairs_a=np.ascontiguousarray(pairs[:, 0]),
        pairs_b=np.ascontiguousarray(pairs[:, 1]),
        rest_lengths=rest,
        compliance=compliance,
        unilateral=unilateral,
        stretch=slice(0, n_st),
        shear=slice(n_st, n_st + n_sh),
        bend=slice(n_st + n_sh, n_topo),
        attachment=slice(n_topo, n_topo + n_lra),
    )


def pin_corner(mesh: ClothMesh, corner: Corner) -> None:
    """Make a grid corner kinematic; a re-pin releases the previous corner."""
    if mesh.pinned_index is not None:
        mesh.inverse_masses[mesh.pinned_index] = mesh.default_inverse_mass
    pid = mesh.corner_id(corner)
    mesh.inverse_masses[pid] = 0.0
    mesh.velocities[pid] = 0.0
    mesh.pinned_index = pid


def step_sim(
    mesh: ClothMesh,
    constraints: ConstraintSet,
    gripper: GripperState | None,
    config: SimConfig,
) -> None:
    """One predict-project-update physics cycle at config.timestep."""
    if gripper is not None and gripper.attached_particle is not None:
        mesh.positions[gripper.attached_particle] = gripper.ee_position
    xpbd_substep(
        mesh.positions,
        mesh.velocities,
        mesh.inverse_masses,
        constraints.pairs_a,
        constraints.pairs_b,
        constraints.rest_lengths,
        constraints.compliance,
        constraints.unilateral,
        constraints._lambdas,
        np.asarray(config.gravity, dtype=np.float64),
        config.timestep,
        config.solver_iterations,
        config.damping,
    )
    if not np.isfinite(mesh.positions).all():
        raise SimulationDiverged("non-finite particle positions after step")


def stretch_violation(mesh: ClothMesh, constraints: ConstraintSet) -> float:
    """Max relative stretch-constraint violation, for stability checks."""
    v = constraint_violations(
        mesh.positions,
        constraints.pairs_a,
        constraints.pairs_b,
        constraints.rest_lengths,
    )
    return float(v[constraints.stretch].max())


def try_grasp(mesh: ClothMesh, gripper: GripperState) -> bool:
    """Attach the nearest graspable particle within grasp_radius, if any.

    Kinematic particles (the pinned corner) are not graspable. Ties on
    distance resolve to the lowest particle id.
    """
    free = mesh.inverse_masses > 0.0
    if not free.any():
        return False
    d = np.linalg.norm(mesh.positions - gripper.ee_position, axis=1)
    d[~free] = np.inf
    nearest = int(np.argmin(d))
    if d[nearest] > gripper.grasp_radius:
        return False
    gripper.attached_particle = nearest
    gripper._saved_inverse_mass = mesh.inverse_masses[nearest]
    mesh.inverse_masses[nearest] = 0.0
    mesh.positions[nearest] = gripper.ee_position
    mesh.velocities[nearest] = 0.0
    return True


def release_grasp(mesh: ClothMesh, gripper: GripperState) -> None:
    if gripper.attached_particle is None:
        return
    mesh.inverse_masses[gripper.attached_particle] = gripper._saved_inverse_mass
    gripper.attached_particle = None


def _strain_state(mesh: ClothMesh, gripper: GripperState):
    """(pin position, geodesic rest distance) or None when strain is inactive."""
    if gripper.attached_particle is None or mesh.pinned_index is None:
        return None
    if gripper.attached_particle == mesh.pinned_index:
        return None
    geo = mesh.geodesic_rest_distance(mesh.pinned_index, gripper.attached_particle)
    if geo <= 1e-9:
        return None
    return mesh.positions[mesh.pinned_index], geo


def apply_ee_displacement(
    mesh: ClothMesh,
    gripper: GripperState,
    delta: np.ndarray,
    config: SimConfig,
) -> np.ndarray:
    """Move the end effector, clipped so the grasped cloth never over-strains.

    While attached, the straight-line distance from the pinned particle to the
    grasped particle may not exceed strain_threshold times their geodesic rest
    distance; a violating displacement is scaled back along its direction until
    the ratio equals the threshold. Returns the displacement actually applied.
    """
    delta = np.asarray(delta, dtype=np.float64)
    if not np.isfinite(delta).all():
        raise ValueError("displacement must be finite")

    state = _strain_state(mesh, gripper)
    if state is not None:
        pin_pos, geo = state
        limit = config.strain_threshold * geo
        target = gripper.ee_position + delta
        if np.linalg.norm(target - pin_pos) > limit:
            # largest s in [0, 1] with |u + s*delta| = limit, u = ee - pin
            u = gripper.ee_position - pin_pos
            a = float(delta @ delta)
            if a == 0.0:
                return np.zeros(3)
            b = 2.0 * float(u @ delta)
            c = float(u @ u) - limit * limit
            disc = b * b - 4.0 * a * c
            s = 0.0 if disc < 0.0 else (-b + math.sqrt(disc)) / (2.0 * a)
            s = min(max(s, 0.0), 1.0)
            delta = delta * s

    gripper.ee_position = gripper.ee_position + delta
    if gripper.attached_particle is not None:
        mesh.positions[gripper.attached_particle] = gripper.ee_position
    return delta


def tension_flag(mesh: ClothMesh, gripper: GripperState, config: SimConfig) -> bool:
    """True when the cloth is taut between the pinned corner and the gripper."""
    state = _strain_state(mesh, gripper)
    if state is None:
        return False
    pin_pos, geo = state
    span = np.linalg.norm(mesh.positions[gripper.attached_particle] - pin_pos)
    return bool(span >= config.tension_ratio * geo)


def kinetic_energy(mesh: ClothMesh) -> float:
    masses = np.where(
        mesh.inverse_masses > 0, 1.0 / np.maximum(mesh.inverse_masses, 1e-300), 0.0
    )
    return float(0.5 * np.sum(masses * np.sum(mesh.velocities**2, axis=1)))
