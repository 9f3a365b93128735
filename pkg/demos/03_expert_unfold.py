"""Follow the scripted expert through one unfolding episode.

Prints the phase, unfold fraction and reward as the expert approaches the
free corner, grasps it and pulls the cloth open. Early stopping fires once
80% of the flat area is recovered.
"""

from unfoldsim.env import ClothUnfoldEnv, EnvConfig
from unfoldsim.expert import ExpertPolicy
from unfoldsim.rewards import episode_category

env = ClothUnfoldEnv(EnvConfig(render_observations=False))
env.reset(seed=2)
expert = ExpertPolicy()
expert.reset(env)

print(f"pinned corner particle {env.mesh.pinned_index}, "
      f"target corner particle {expert.state.target_particle}")
print("step  phase      unfold   reward   tension")

step = 0
while True:
    action = expert.action(env)
    result = env.step(action)
    step += 1
    if step % 5 == 0 or result.done:
        print(
            f"{step:4d}  {expert.state.phase.value:<9}  "
            f"{result.info['A_norm']:.3f}    {result.reward:+.3f}   "
            f"{bool(result.observation.proprio[4])}"
        )
    if result.done:
        break

category = episode_category(env.max_a_norm, env.config.category_thresholds())
print(f"\nepisode over after {step} steps: {category.value} "
      f"(peak unfold {env.max_a_norm:.3f}, "
      f"early stop: {result.info['early_stopped']})")
