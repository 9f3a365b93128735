"""Numba-compiled inner loops for the physics solver and the rasterizer.

Everything here is deterministic sequential code: constraint projection is
plain Gauss-Seidel in a fixed order, so identical inputs give bit-identical
outputs on the same build.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def xpbd_substep(
    pos,
    vel,
    inv_mass,
    con_a,
    con_b,
    rest,
    compliance,
    unilateral,
    lam,
    gravity,
    dt,
    iterations,
    damping,
):
    """One predict / project / update cycle over all distance constraints.

    Constraints with unilateral[k] != 0 are upper bounds (only projected when
    longer than rest); they implement long-range attachments to the pinned
    particle, which keep hanging chains from rubber-banding. Mutates pos and
    vel in place. lam is scratch space for the per-constraint XPBD multipliers
    and is reset at the start of the substep.
    """
    n = pos.shape[0]
    m = con_a.shape[0]

    old = np.empty_like(pos)
    for i in range(n):
        old[i, 0] = pos[i, 0]
        old[i, 1] = pos[i, 1]
        old[i, 2] = pos[i, 2]
        if inv_mass[i] > 0.0:
            vel[i, 0] += gravity[0] * dt
            vel[i, 1] += gravity[1] * dt
            vel[i, 2] += gravity[2] * dt
            pos[i, 0] += vel[i, 0] * dt
            pos[i, 1] += vel[i, 1] * dt
            pos[i, 2] += vel[i, 2] * dt

    dt2 = dt * dt
    for k in range(m):
        lam[k] = 0.0

    for _ in range(iterations):
        for k in range(m):
            a = con_a[k]
            b = con_b[k]
            wa = inv_mass[a]
            wb = inv_mass[b]
            wsum = wa + wb
            if wsum <= 0.0:
                continue
            dx = pos[a, 0] - pos[b, 0]
            dy = pos[a, 1] - pos[b, 1]
            dz = pos[a, 2] - pos[b, 2]
            d = math.sqrt(dx * dx + dy * dy + dz * dz)
            if d < 1e-12:
                continue
            c = d - rest[k]
            if unilateral[k] != 0 and c <= 0.0:
                continue
            alpha = compliance[k] / dt2
            dlam = (-c - alpha * lam[k]) / (wsum + alpha)
            lam[k] += dlam
            s = dlam / d
            px = s * dx
            py = s * dy
            pz = s * dz
            pos[a, 0] += wa * px
            pos[a, 1] += wa * py
            pos[a, 2] += wa * pz
            pos[b, 0] -= wb * px
            pos[b, 1] -= wb * py
            pos[b, 2] -= wb * pz

    keep = 1.0 - damping
    for i in range(n):
        if inv_mass[i] > 0.0:
            vel[i, 0] = (pos[i, 0] - old[i, 0]) / dt * keep
            vel[i, 1] = (pos[i, 1] - old[i, 1]) / dt * keep
            vel[i, 2] = (pos[i, 2] - old[i, 2]) / dt * keep
        else:
            vel[i, 0] = 0.0
            vel[i, 1] = 0.0
            vel[i, 2] = 0.0


@njit(cache=True)
def constraint_violations(pos, con_a, con_b, rest):
    """Relative length error |len - rest| / rest for each constraint."""
    m = con_a.shape[0]
    out = np.empty(m)
    for k in range(m):
        a = con_a[k]
        b = con_b[k]
        dx = pos[a, 0] - pos[b, 0]
        dy = pos[a, 1] - pos[b, 1]
        dz = pos[a, 2] - pos[b, 2]
        d = math.sqrt(dx * dx + dy * dy + dz * dz)
        out[k] = abs(d - rest[k]) / rest[k]
    return out


@njit(cache=True)
def raster_triangles(xs, ys, zs, width, height, near, far, zbuf):
    """Z-buffer rasterization of projected triangles into zbuf (meters).

    xs, ys: (T, 3) continuous pixel coordinates of triangle vertices.
    zs: (T, 3) camera-space depths (all > 0; callers cull behind-camera
    triangles). Samples pixel centers with a top-left fill rule, interpolates
    1/z linearly in screen space, and keeps the nearest depth in [near, far].
    """
    t_count = xs.shape[0]
    for t in range(t_count):
        x0 = xs[t, 0]
        y0 = ys[t, 0]
        x1 = xs[t, 1]
        y1 = ys[t, 1]
        x2 = xs[t, 2]
        y2 = ys[t, 2]
        iz0 = 1.0 / zs[t, 0]
        iz1 = 1.0 / zs[t, 1]
        iz2 = 1.0 / zs[t, 2]

        # signed area via E(v0, v1, v2); flip winding so it is positive and
        # every edge function is >= 0 inside the triangle
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area == 0.0:
            continue
        if area < 0.0:
            x1, x2 = x2, x1
            y1, y2 = y2, y1
            iz1, iz2 = iz2, iz1
            area = -area

        min_x = int(max(0.0, math.floor(min(x0, min(x1, x2)) - 0.5)))
        max_x = int(min(width - 1.0, math.ceil(max(x0, max(x1, x2)) + 0.5)))
        min_y = int(max(0.0, math.floor(min(y0, min(y1, y2)) - 0.5)))
        max_y = int(min(height - 1.0, math.ceil(max(y0, max(y1, y2)) + 0.5)))
        if min_x > max_x or min_y > max_y:
            continue

        # edge k runs opposite vertex k; w_k(P) = E(A_k, B_k, P)
        e0x = x2 - x1
        e0y = y2 - y1
        e1x = x0 - x2
        e1y = y0 - y2
        e2x = x1 - x0
        e2y = y1 - y0
        # top-left fill rule (y grows downward): ties on an edge belong to the
        # triangle whose interior is right of (left edge) or below (top edge)
        tl0 = e0y < 0.0 or (e0y == 0.0 and e0x > 0.0)
        tl1 = e1y < 0.0 or (e1y == 0.0 and e1x > 0.0)
        tl2 = e2y < 0.0 or (e2y == 0.0 and e2x > 0.0)

        inv_area = 1.0 / area
        for py in range(min_y, max_y + 1):
            cy = py + 0.5
            for px in range(min_x, max_x + 1):
                cx = px + 0.5
                w0 = e0x * (cy - y1) - e0y * (cx - x1)
                w1 = e1x * (cy - y2) - e1y * (cx - x2)
                w2 = e2x * (cy - y0) - e2y * (cx - x0)
                ok0 = w0 > 0.0 or (w0 == 0.0 and tl0)
                ok1 = w1 > 0.0 or (w1 == 0.0 and tl1)
                ok2 = w2 > 0.0 or (w2 == 0.0 and tl2)
                if ok0 and ok1 and ok2:
                    iz = (w0 * iz0 + w1 * iz1 + w2 * iz2) * inv_area
                    if iz <= 0.0:
                        continue
                    z = 1.0 / iz
                    if z < near or z > far:
                        continue
                    if z < zbuf[py, px]:
                        zbuf[py, px] = z
