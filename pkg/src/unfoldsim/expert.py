"""Scripted pick/unfold expert with regrasp, used for benchmarks and demos.

The expert reads privileged simulator state (particle positions), never the
rendered observations: approach the free corner adjacent to the pinned one,
close the gripper on it, and pull it horizontally away from the pin until the
cloth is taut. Grasping air or stalling progress triggers a release and a new
approach, up to a retry budget.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloth import Corner
from .env import ClothUnfoldEnv
from .episodes import EpisodeRecorder, save_episode
from .rewards import episode_category, normalized_return

_ADJACENT = {
    Corner.NW: (Corner.NE, Corner.SW),
    Corner.NE: (Corner.NW, Corner.SE),
    Corner.SW: (Corner.SE, Corner.NW),
    Corner.SE: (Corner.SW, Corner.NE),
}


class Phase(enum.Enum):
    APPROACH = "approach"
    GRASP = "grasp"
    PULL = "pull"
    REGRASP = "regrasp"
    DONE = "done"


@dataclass
class ExpertConfig:
    stagnation_window: int = 20
    stagnation_delta: float = 0.01
    retry_limit: int = 3
    approach_patience: int = 80
    grasp_fraction: float = 0.6  # close when within this fraction of grasp radius
    pull_ratio: float = 1.0  # fraction of geodesic distance to pull out to


@dataclass
class ExpertState:
    phase: Phase = Phase.APPROACH
    target_particle: int | None = None
    retry_count: int = 0
    approach_steps: int = 0
    pull_dir: np.ndarray | None = None
    recent_a_norm: deque = field(default_factory=deque)


def _toward(vec: np.ndarray, scale: float) -> np.ndarray:
    """Action moving along vec: full speed far out, proportional when close.

    Scaled uniformly (not per axis) so the commanded direction is preserved.
    """
    move = vec / scale
    m = np.abs(move).max()
    if m > 1.0:
        move = move / m
    return move


class ExpertPolicy:
    """Closed-loop heuristic controller over a ClothUnfoldEnv."""

    def __init__(self, config: ExpertConfig | None = None):
        self.config = config or ExpertConfig()
        self.state = ExpertState()

    def reset(self, env: ClothUnfoldEnv) -> None:
        self.state = ExpertState()
        self.state.target_particle = self._pick_target(env)

    def _pick_target(self, env: ClothUnfoldEnv) -> int:
        """Corner adjacent to the pin, preferring the more exposed one."""
        mesh = env.mesh
        pinned = None
        for c in Corner:
            if mesh.corner_id(c) == mesh.pinned_index:
                pinned = c
                break
        pin_pos = mesh.positions[mesh.pinned_index]
        candidates = [mesh.corner_id(c) for c in _ADJACENT[pinned]]
        dists = [np.linalg.norm(mesh.positions[p] - pin_pos) for p in candidates]
        return candidates[int(np.argmax(dists))]

    def action(self, env: ClothUnfoldEnv) -> np.ndarray:
        cfg = self.config
        st = self.state
        mesh = env.mesh
        gripper = env.gripper
        scale = env.config.max_step_displacement

        if st.phase is Phase.DONE:
            return np.array([0.0, 0.0, 0.0, -1.0])

        if st.phase is Phase.REGRASP:
            # gripper reopened last step; start a fresh approach
            st.phase = Phase.APPROACH
            st.approach_steps = 0
            st.target_particle = self._pick_target(env)

        if st.phase is Phase.APPROACH:
            st.approach_steps += 1
            if st.approach_steps > cfg.approach_patience:
                self._register_retry(env)
                return np.array([0.0, 0.0, 0.0, -1.0])
            target = mesh.positions[st.target_particle]
            vec = target - gripper.ee_position
            if np.linalg.norm(vec) <= gripper.grasp_radius * cfg.grasp_fraction:
                st.phase = Phase.GRASP
                return np.array([0.0, 0.0, 0.0, 1.0])
            return np.array([*_toward(vec, scale), -1.0])

        if st.phase is Phase.GRASP:
            if gripper.attached_particle is None:
                # closed on air: reopen and retry
                self._register_retry(env)
                return np.array([0.0, 0.0, 0.0, -1.0])
            st.phase = Phase.PULL
            st.pull_dir = None
            st.recent_a_norm = deque(maxlen=cfg.stagnation_window)

        # PULL
        if gripper.attached_particle is None:
            self._register_retry(env)
            return np.array([0.0, 0.0, 0.0, -1.0])

        st.recent_a_norm.append(env.a_norm)
        if (
            len(st.recent_a_norm) == cfg.stagnation_window
            and max(st.recent_a_norm) - st.recent_a_norm[0] < cfg.stagnation_delta
        ):
            self._register_retry(env)
            return np.array([0.0, 0.0, 0.0, -1.0])

        pin_pos = mesh.positions[mesh.pinned_index]
        horiz = gripper.ee_position - pin_pos
        horiz = np.array([horiz[0], 0.0, horiz[2]])
        if np.linalg.norm(horiz) > 0.03:
            st.pull_dir = horiz / np.linalg.norm(horiz)
        if st.pull_dir is None:
            st.pull_dir = np.array([1.0, 0.0, 0.0])
        geo = mesh.geodesic_rest_distance(mesh.pinned_index, gripper.attached_particle)
        target = pin_pos + st.pull_dir * geo * cfg.pull_ratio
        vec = target - gripper.ee_position
        return np.array([*_toward(vec, scale), 1.0])

    def _register_retry(self, env: ClothUnfoldEnv) -> None:
        st = self.state
        st.retry_count += 1
        if st.retry_count > self.config.retry_limit:
            st.phase = Phase.DONE
        else:
            st.phase = Phase.REGRASP


def run_expert_episode(
    env: ClothUnfoldEnv,
    seed: int,
    expert: ExpertPolicy | None = None,
    recorder_config: dict | None = None,
):
    """Roll one seeded episode under the expert.

    Returns (summary dict, EpisodeRecord or None). A record is built only when
    recorder_config (the resolved env config dict) is provided.
    """
    expert = expert or ExpertPolicy()
    obs = env.reset(seed)
    expert.reset(env)
    recorder = (
        EpisodeRecorder(obs, seed, recorder_config, extra={"is_demo": True})
        if recorder_config is not None
        else None
    )
    total = 0.0
    rewards = []
    steps = 0
    while True:
        act = expert.action(env)
        result = env.step(act)
        rewards.append(result.reward)
        total += result.reward
        steps += 1
        if recorder is not None:
            recorder.add_step(act, result)
        if result.done:
            break

    category = episode_category(env.max_a_norm, env.config.category_thresholds())
    summary = {
        "seed": seed,
        "steps": steps,
        "max_a_norm": float(env.max_a_norm),
        "category": category.value,
        "normalized_return": normalized_return(
            rewards, env.config.max_episode_timesteps
        ),
        "early_stopped": bool(result.info["early_stopped"]),
        "retries": expert.state.retry_count,
    }
    record = None
    if recorder is not None:
        record = recorder.finish(
            category=category.value,
            max_a_norm=float(env.max_a_norm),
            randomization=env.randomization_sample,
        )
    return summary, record


def collect_demonstrations(
    n_episodes: int,
    seed: int,
    out_dir,
    env: ClothUnfoldEnv | None = None,
    config_dict: dict | None = None,
    expert_config: ExpertConfig | None = None,
    progress=None,
):
    """Run the expert over seeded episodes and write episode record files.

    Episode i uses seed `seed + i`. Returns (paths, summaries). I/O failures
    are re-raised with the failing episode index attached.
    """
    if n_episodes < 1:
        raise ValueError("need at least one episode")
    from .config import resolved_config_dict

    env = env or ClothUnfoldEnv()
    config_dict = config_dict or resolved_config_dict(env.config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    paths, summaries = [], []
    for i in range(n_episodes):
        expert = ExpertPolicy(expert_config)
        summary, record = run_expert_episode(
            env, seed + i, expert, recorder_config=config_dict
        )
        path = out_dir / f"demo_{i:05d}.zip"
        try:
            save_episode(record, path)
        except OSError as e:
            raise OSError(f"failed writing episode {i} to {path}: {e}") from e
        paths.append(path)
        summaries.append(summary)
        if progress is not None:
            progress(i, summary)
    return paths, summaries
