"""Demonstration preloading and batch-consistent augmentation.

Collects two expert demos, preloads them into a replay buffer, then samples a
batch twice: once with augmentation ranges at their defaults and once forced
to the identity. The same sampled frame is shown before and after the batch
transform to make the 'one draw per batch' behavior visible.
"""

import tempfile
from pathlib import Path

import numpy as np

from unfoldsim.env import ClothUnfoldEnv
from unfoldsim.expert import collect_demonstrations
from unfoldsim.replay import BufferConfig, ReplayBuffer

demo_dir = Path(tempfile.mkdtemp()) / "demos"
paths, summaries = collect_demonstrations(2, 500, demo_dir, env=ClothUnfoldEnv())
print("demo episodes:", [(s["category"], s["steps"]) for s in summaries])

buffer = ReplayBuffer(BufferConfig())
n = buffer.preload_demos(paths)
print(f"preloaded {n} transitions "
      f"({buffer.demo_transitions()} marked as demonstrations)")

rng = np.random.default_rng(0)
batch = buffer.sample(batch_size=4, sequence_length=8, rng=rng)
p = batch.params
print("one augmentation draw for the whole batch:")
print(f"  brightness {p.brightness:+.3f}  contrast x{p.contrast:.3f}  "
      f"hue {p.hue:+.3f}")
print(f"  rotation {p.rotation_deg:+.2f} deg  translation {p.translation_px}  "
      f"zoom x{p.zoom:.3f}")
print(f"batch tensors: standoff {batch.standoff.shape}, "
      f"is_demo {batch.is_demo}")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(2, 4, figsize=(10, 5))
    for k in range(4):
        axes[0, k].imshow(batch.standoff[k, 0])
        axes[0, k].set_title(f"seq {k} (augmented)")
        axes[1, k].imshow(batch.wrist[k, 0])
        axes[1, k].set_title("wrist view")
    for ax in axes.ravel():
        ax.axis("off")
    fig.tight_layout()
    fig.savefig("demos/output_augmented_batch.png", dpi=120)
    print("saved demos/output_augmented_batch.png")
except ImportError:
    print("matplotlib not installed; skipping the previews")
