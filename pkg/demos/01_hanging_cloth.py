"""Hang a cloth by one corner and watch it settle.

Steps the solver from the flat spawn to the draped equilibrium, printing the
energy and constraint residuals on the way, and (if matplotlib is available)
saves a 3-D scatter of the final drape.
"""

import numpy as np

from unfoldsim.cloth import (
    Corner,
    SimConfig,
    build_constraints,
    init_cloth,
    kinetic_energy,
    pin_corner,
    step_sim,
    stretch_violation,
)

mesh = init_cloth(size=(0.3, 0.3), resolution=(16, 16))
pin_corner(mesh, Corner.NW)
constraints = build_constraints(mesh)
config = SimConfig()

print(f"{mesh.n_particles} particles, {constraints.n_constraints} constraints")
print("step   kinetic energy   max stretch violation")
for step in range(1, 481):
    step_sim(mesh, constraints, None, config)
    if step % 60 == 0:
        print(
            f"{step:4d}   {kinetic_energy(mesh):14.6f}   "
            f"{stretch_violation(mesh, constraints):.5f}"
        )

lowest = mesh.positions[:, 1].min()
print(f"\nlowest particle at y = {lowest:.3f} m "
      f"(pin at y = {mesh.positions[mesh.pinned_index][1]:.3f} m)")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig = plt.figure(figsize=(5, 5))
    ax = fig.add_subplot(111, projection="3d")
    p = mesh.positions
    ax.scatter(p[:, 0], p[:, 2], p[:, 1], s=4)
    ax.scatter(*p[mesh.pinned_index][[0, 2, 1]], color="red", s=40, label="pin")
    ax.set_zlabel("y (m)")
    ax.legend()
    fig.savefig("demos/output_hanging_cloth.png", dpi=120)
    print("saved demos/output_hanging_cloth.png")
except ImportError:
    print("matplotlib not installed; skipping the plot")
