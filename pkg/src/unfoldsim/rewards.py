"""Unfold metrics: coarse-grid surface area, normalized reward, episode scoring.

The unfold measure is the surface area of a 4x4 vertex subsample of the cloth,
triangulated into 18 triangles (two per cell), normalized by the area of the
flat cloth at spawn time. The per-step reward is that normalized area minus a
timestep penalty that grows linearly to 1 over the episode.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

GRID_POINTS = 4  # reward grid is GRID_POINTS x GRID_POINTS vertices


class Category(enum.Enum):
    FAILURE = "failure"
    NEAR_SUCCESS = "near_success"
    SUCCESS = "success"


@dataclass(frozen=True)
class CategoryThresholds:
    """Unfold-fraction boundaries for episode categorization.

    An episode is scored by its highest normalized area: success at or above
    `success`, near-success in [near, success), failure below `near`.
    """

    success: float = 0.8
    near: float = 0.6

    def __post_init__(self):
        if not 0.0 <= self.near <= self.success:
            raise ValueError("need 0 <= near <= success")


def subsample_indices(n: int, points: int = GRID_POINTS) -> np.ndarray:
    """Evenly spaced indices into an n-point axis, both borders included.

    Index k of `points` is round(k * (n-1) / (points-1)); fractions are always
    thirds for the 4-point grid so rounding is unambiguous.
    """
    if n < points:
        raise ValueError(f"axis has {n} points, need at least {points}")
    k = np.arange(points)
    return np.rint(k * (n - 1) / (points - 1)).astype(np.intp)


def subsample_grid(positions: np.ndarray, resolution: tuple[int, int]) -> np.ndarray:
    """Extract the 4x4 reward grid from a full particle grid.

    positions: (rows*cols, 3) particle positions, row-major.
    Returns a (4, 4, 3) array of vertices.
    """
    rows, cols = resolution
    pts = positions.reshape(rows, cols, 3)
    ri = subsample_indices(rows)
    ci = subsample_indices(cols)
    return pts[np.ix_(ri, ci)]


def surface_area(grid: np.ndarray) -> float:
    """Area of a 4x4 vertex grid, summed over two triangles per cell.

    For each cell (i, j):
        A1 = 0.5 * ||(v[i,j+1] - v[i,j]) x (v[i+1,j] - v[i,j])||
        A2 = 0.5 * ||(v[i+1,j+1] - v[i,j+1]) x (v[i+1,j] - v[i,j+1])||
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.shape != (GRID_POINTS, GRID_POINTS, 3):
        raise ValueError(f"expected (4, 4, 3) grid, got {grid.shape}")
    if not np.isfinite(grid).all():
        raise ValueError("reward grid contains non-finite vertices")

    v00 = grid[:-1, :-1]
    v01 = grid[:-1, 1:]
    v10 = grid[1:, :-1]
    v11 = grid[1:, 1:]

    a1 = 0.5 * np.linalg.norm(np.cross(v01 - v00, v10 - v00), axis=-1)
    a2 = 0.5 * np.linalg.norm(np.cross(v11 - v01, v10 - v01), axis=-1)
    return float(np.sum(a1) + np.sum(a2))


def compute_a_max(positions: np.ndarray, resolution: tuple[int, int]) -> float:
    """Reference area of the freshly spawned (still flat) cloth.

    Must be called on the spawn-time particle layout, before gravity acts;
    the environment enforces the calling order.
    """
    a = surface_area(subsample_grid(positions, resolution))
    if a <= 0.0:
        raise ValueError("spawned cloth has zero reward-grid area")
    return a


def reward(a_norm: float, t: float) -> float:
    """Per-step reward: normalized area minus the timestep penalty."""
    return a_norm - t


def timestep_penalty(step_index: int, max_episode_timesteps: int) -> float:
    """Linear penalty schedule; reaches exactly 1.0 at the final step."""
    if max_episode_timesteps <= 0:
        raise ValueError("max_episode_timesteps must be positive")
    return step_index / max_episode_timesteps


def episode_category(
    max_a_norm: float, thresholds: CategoryThresholds | None = None
) -> Category:
    """Score an episode from its highest observed unfold fraction."""
    th = thresholds or CategoryThresholds()
    if max_a_norm >= th.success:
        return Category.SUCCESS
    if max_a_norm >= th.near:
        return Category.NEAR_SUCCESS
    return Category.FAILURE


def normalized_return(episode_rewards, max_episode_timesteps: int) -> float:
    """Episode return scaled to remove the timestep penalty's contribution.

    Sum of rewards divided by the maximum episode length, plus one.
    """
    if max_episode_timesteps <= 0:
        raise ValueError("max_episode_timesteps must be positive")
    return float(np.sum(episode_rewards)) / max_episode_timesteps + 1.0
