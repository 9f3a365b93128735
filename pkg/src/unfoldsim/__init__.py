"""unfoldsim: deterministic in-air cloth unfolding simulator for RL agents."""

from .cloth import (
    ClothMesh,
    ConstraintSet,
    Corner,
    GripperState,
    SimConfig,
    SimulationDiverged,
    apply_ee_displacement,
    build_constraints,
    init_cloth,
    pin_corner,
    release_grasp,
    step_sim,
    tension_flag,
    try_grasp,
)
from .rewards import (
    Category,
    CategoryThresholds,
    compute_a_max,
    episode_category,
    normalized_return,
    reward,
    subsample_grid,
    surface_area,
)

__version__ = "0.1.0"
