"""Software z-buffer renderer producing metric depth images of the scene.

The scene is the cloth's triangle grid plus two boxes standing in for the
gripper fingers, seen by pinhole cameras. Pixels with no geometry hold
+inf as the no-hit sentinel; valid pixels hold depth in meters within
[near, far].
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from ._kernels import raster_triangles
from .cloth import ClothMesh, GripperState

DEPTH_SENTINEL = np.inf
DUMP_SENTINEL_MM = 0xFFFF  # no-hit marker in 16-bit depth dumps


class CameraRole(enum.Enum):
    STAND_OFF = "stand_off"
    WRIST_MOUNTED = "wrist_mounted"


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray  # (4, 4) rigid transform
    near: float = 0.05
    far: float = 3.0
    width: int = 256
    height: int = 256
    role: CameraRole = CameraRole.STAND_OFF

    def __post_init__(self):
        if self.far <= self.near or self.near <= 0:
            raise ValueError("camera needs 0 < near < far")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64)
        if self.world_to_camera.shape != (4, 4):
            raise ValueError("world_to_camera must be 4x4")


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-to-camera transform for a camera at eye looking at target.

    Camera frame: x right, y down, z forward (image v grows downward).
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("eye and target coincide")
    z = fwd / n
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    nx = np.linalg.norm(x)
    if nx < 1e-12:
        raise ValueError("view direction parallel to up vector")
    x /= nx
    y = np.cross(z, x)
    m = np.eye(4)
    m[0, :3] = x
    m[1, :3] = y
    m[2, :3] = z
    m[:3, 3] = -m[:3, :3] @ eye
    return m


def update_wrist_camera(
    gripper: GripperState,
    mount_offset: np.ndarray,
    template: Camera,
) -> Camera:
    """Re-pose the wrist camera from the current end-effector position.

    The end effector carries a fixed mounting offset (camera-to-ee rigid
    transform expressed as an ee-frame camera pose); the ee frame itself is a
    pure translation, so the camera translates with the gripper.
    """
    ee = np.asarray(gripper.ee_position, dtype=np.float64)
    if not np.isfinite(ee).all():
        raise ValueError("end-effector position must be finite")
    t_world_ee = np.eye(4)
    t_world_ee[:3, 3] = ee
    t_world_cam = t_world_ee @ np.asarray(mount_offset, dtype=np.float64)
    w2c = np.linalg.inv(t_world_cam)
    return Camera(
        fx=template.fx,
        fy=template.fy,
        cx=template.cx,
        cy=template.cy,
        world_to_camera=w2c,
        near=template.near,
        far=template.far,
        width=template.width,
        height=template.height,
        role=CameraRole.WRIST_MOUNTED,
    )


def cloth_triangles(mesh: ClothMesh) -> np.ndarray:
    """Two triangles per grid cell, as a (T, 3) array of particle ids."""
    rows, cols = mesh.resolution
    idx = np.arange(rows * cols).reshape(rows, cols)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, :-1].ravel()
    d = idx[1:, 1:].ravel()
    return np.concatenate(
        [np.stack([a, b, c], axis=1), np.stack([b, d, c], axis=1)]
    )


def _box_triangles(center: np.ndarray, half: np.ndarray) -> np.ndarray:
    """12 triangles of an axis-aligned box, as (12, 3, 3) vertex positions."""
    signs = np.array(
        [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
        dtype=np.float64,
    )
    corners = center + signs * half
    faces = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    tris = []
    for q in faces:
        tris.append(corners[[q[0], q[1], q[2]]])
        tris.append(corners[[q[0], q[2], q[3]]])
    return np.array(tris)


# finger proxy dimensions (meters): thin pads ahead of the ee position
FINGER_HALF = np.array([0.005, 0.015, 0.02])
FINGER_FORWARD = 0.04


def gripper_triangles(gripper: GripperState) -> np.ndarray:
    """Two finger boxes separated by the current gripper width."""
    ee = np.asarray(gripper.ee_position, dtype=np.float64)
    gap = gripper.gripper_width / 2.0 + FINGER_HALF[0]
    fwd = np.array([0.0, 0.0, FINGER_FORWARD])
    left = _box_triangles(ee + fwd + np.array([-gap, 0.0, 0.0]), FINGER_HALF)
    right = _box_triangles(ee + fwd + np.array([gap, 0.0, 0.0]), FINGER_HALF)
    return np.concatenate([left, right])


def render_depth(
    mesh: ClothMesh | None,
    gripper: GripperState | None,
    camera: Camera,
) -> np.ndarray:
    """Rasterize the scene into a (height, width) float64 depth image.

    Triangles with any vertex behind the near plane are dropped (their pixels
    fall back to the sentinel and can be patched downstream).
    """
    tri_pos = []
    if mesh is not None:
        if not np.isfinite(mesh.positions).all():
            raise ValueError("mesh positions must be finite")
        tri_pos.append(mesh.positions[cloth_triangles(mesh)])
    if gripper is not None:
        tri_pos.append(gripper_triangles(gripper))

    zbuf = np.full((camera.height, camera.width), DEPTH_SENTINEL)
    if not tri_pos:
        return zbuf
    tris = np.concatenate(tri_pos)  # (T, 3, 3) world positions

    r = camera.world_to_camera[:3, :3]
    t = camera.world_to_camera[:3, 3]
    cam = tris @ r.T + t
    z = cam[:, :, 2]
    keep = (z >= camera.near).all(axis=1)
    if not keep.any():
        return zbuf
    cam = cam[keep]
    z = z[keep]

    xs = camera.fx * cam[:, :, 0] / z + camera.cx
    ys = camera.fy * cam[:, :, 1] / z + camera.cy
    raster_triangles(
        np.ascontiguousarray(xs),
        np.ascontiguousarray(ys),
        np.ascontiguousarray(z),
        camera.width,
        camera.height,
        camera.near,
        camera.far,
        zbuf,
    )
    return zbuf


def fill_background(depth: np.ndarray, far: float) -> np.ndarray:
    """Replace no-hit pixels with the far-plane distance."""
    return np.where(np.isfinite(depth), depth, far)


def encode_depth_dump(depth: np.ndarray) -> bytes:
    """Serialize a depth image: u32le width, u32le height, then u16le
    millimeters row-major with 0xFFFF marking invalid pixels."""
    h, w = depth.shape
    mm = np.where(
        np.isfinite(depth),
        np.clip(np.rint(depth * 1000.0), 0, DUMP_SENTINEL_MM - 1),
        DUMP_SENTINEL_MM,
    ).astype("<u2")
    return struct.pack("<II", w, h) + mm.tobytes()


def decode_depth_dump(blob: bytes) -> np.ndarray:
    """Inverse of encode_depth_dump; invalid pixels come back as +inf."""
    if len(blob) < 8:
        raise ValueError("depth dump shorter than its header")
    w, h = struct.unpack_from("<II", blob, 0)
    body = np.frombuffer(blob, dtype="<u2", offset=8)
    if body.size != w * h:
        raise ValueError("depth dump size does not match header")
    mm = body.reshape(h, w)
    depth = mm.astype(np.float64) / 1000.0
    depth[mm == DUMP_SENTINEL_MM] = DEPTH_SENTINEL
    return depth
