"""Depth-to-surface-normals conversion.

Depth images are patched (for real sensor data), differentiated with wide
Sobel filters, turned into unit normals, encoded into [0, 1] channels
(x, y, z -> channels 0, 1, 2 via (component + 1) / 2), and area-downscaled to
the agent-facing resolution. The wide kernel deliberately blends normal colors
across creases so the downscale keeps their signature.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

PROCESS_SIZE = 256  # depth-side processing resolution (square)
OUTPUT_SIZE = 64  # agent-facing normal image resolution


def binomial_row(n: int) -> np.ndarray:
    """Length-n row of binomial coefficients (Pascal row n-1)."""
    return np.array([math.comb(n - 1, i) for i in range(n)], dtype=np.float64)


def sobel_kernels(kernel_size: int) -> tuple[np.ndarray, np.ndarray]:
    """1-D (derivative, smoothing) factors of the extended Sobel filter.

    Built the standard way: the central-difference [-1, 0, 1] convolved with a
    binomial smoother, paired with a binomial smoothing column.
    """
    if kernel_size % 2 == 0 or kernel_size < 3:
        raise ValueError("kernel size must be odd and >= 3")
    deriv = np.convolve(np.array([-1.0, 0.0, 1.0]), binomial_row(kernel_size - 2))
    smooth = binomial_row(kernel_size)
    return deriv, smooth


def sobel_gain(kernel_size: int) -> float:
    """Raw filter response per unit slope (in value per pixel) of a ramp."""
    deriv, smooth = sobel_kernels(kernel_size)
    offsets = np.arange(kernel_size) - kernel_size // 2
    return float(np.sum(deriv * offsets) * np.sum(smooth))


def sobel_gradients(
    depth: np.ndarray, kernel_size: int = 9
) -> tuple[np.ndarray, np.ndarray]:
    """Raw horizontal/vertical extended-Sobel responses, edge-replicated.

    gx responds to increase along columns (+x), gy along rows (+y). Input must
    be fully valid; patch or fill sentinels first.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if not np.isfinite(depth).all():
        raise ValueError("depth has invalid pixels; patch occlusions first")
    deriv, smooth = sobel_kernels(kernel_size)
    gx = ndimage.correlate1d(depth, deriv, axis=1, mode="nearest")
    gx = ndimage.correlate1d(gx, smooth, axis=0, mode="nearest")
    gy = ndimage.correlate1d(depth, deriv, axis=0, mode="nearest")
    gy = ndimage.correlate1d(gy, smooth, axis=1, mode="nearest")
    return gx, gy


def patch_occlusions(depth: np.ndarray, fill_value: float = 3.0) -> np.ndarray:
    """Fill sentinel pixels by iterative 4-neighbor dilation of valid depth.

    Each pass assigns every still-invalid pixel bordering the valid region the
    mean of its already-valid 4-neighbors, so a patched pixel ends up with the
    value of its nearest valid region (mean of ties). A fully invalid image
    becomes constant fill_value.
    """
    d = np.array(depth, dtype=np.float64, copy=True)
    valid = np.isfinite(d)
    if valid.all():
        return d
    if not valid.any():
        d[:] = fill_value
        return d

    while not valid.all():
        vals = np.where(valid, d, 0.0)
        acc = np.zeros_like(d)
        cnt = np.zeros_like(d)
        acc[1:, :] += vals[:-1, :]
        cnt[1:, :] += valid[:-1, :]
        acc[:-1, :] += vals[1:, :]
        cnt[:-1, :] += valid[1:, :]
        acc[:, 1:] += vals[:, :-1]
        cnt[:, 1:] += valid[:, :-1]
        acc[:, :-1] += vals[:, 1:]
        cnt[:, :-1] += valid[:, 1:]
        fresh = (~valid) & (cnt > 0)
        d[fresh] = acc[fresh] / cnt[fresh]
        valid |= fresh
    return d


def encode_normals(n: np.ndarray) -> np.ndarray:
    """Map unit vectors in [-1, 1]^3 to channel values in [0, 1]."""
    return (n + 1.0) / 2.0


def decode_normals(img: np.ndarray) -> np.ndarray:
    return img * 2.0 - 1.0


def downscale(image: np.ndarray, size: tuple[int, int] = (OUTPUT_SIZE, OUTPUT_SIZE)) -> np.ndarray:
    """Block-average an encoded normal image, re-unitizing each output pixel.

    The block mean of encoded channels equals the encoded mean vector, so the
    mean is taken in channel space and the renormalization in vector space.
    """
    h, w, c = image.shape
    th, tw = size
    if h % th or w % tw:
        raise ValueError(f"cannot downscale {h}x{w} to {th}x{tw} evenly")
    bh, bw = h // th, w // tw
    mean = image.reshape(th, bh, tw, bw, c).mean(axis=(1, 3))
    vec = decode_normals(mean)
    norm = np.linalg.norm(vec, axis=-1, keepdims=True)
    vec = np.where(norm > 1e-12, vec / np.maximum(norm, 1e-12), vec)
    return encode_normals(vec)


@dataclass(frozen=True)
class NormalsParams:
    """Calibration of the depth-to-normals conversion.

    pixel_scale is the lateral extent (meters) one pixel covers at the nominal
    working distance; it converts per-pixel depth slopes into metric slopes so
    a surface tilted by theta maps to the analytic normal.
    """

    near: float = 0.05
    far: float = 3.0
    pixel_scale: float = 0.9 / 256.0
    kernel_size: int = 9


def depth_to_normals(
    depth: np.ndarray,
    params: NormalsParams = NormalsParams(),
    output_size: tuple[int, int] = (OUTPUT_SIZE, OUTPUT_SIZE),
) -> np.ndarray:
    """Full pipeline: 256x256 valid depth -> encoded 64x64x3 normal image.

    Depth is normalized over [near, far] before filtering; the raw Sobel
    responses are rescaled to metric slope (depth meters per lateral meter),
    giving n ~ (-gx, -gy, 1) which is unitized, encoded, and block-downscaled.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (PROCESS_SIZE, PROCESS_SIZE):
        raise ValueError(
            f"pipeline expects {PROCESS_SIZE}x{PROCESS_SIZE} depth, got {depth.shape}"
        )
    if not np.isfinite(depth).all():
        raise ValueError("depth has invalid pixels; patch occlusions first")

    d01 = (depth - params.near) / (params.far - params.near)
    gx, gy = sobel_gradients(d01, params.kernel_size)
    gain = sobel_gain(params.kernel_size)
    to_metric = (params.far - params.near) / (gain * params.pixel_scale)
    gx = gx * to_metric
    gy = gy * to_metric

    n = np.stack([-gx, -gy, np.ones_like(gx)], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    return downscale(encode_normals(n), output_size)


def encode_normal_dump(img: np.ndarray) -> bytes:
    """Serialize an encoded normal image: u32le width, u32le height, then
    8-bit channel-interleaved rows."""
    h, w, c = img.shape
    if c != 3:
        raise ValueError("normal image must have 3 channels")
    u8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return struct.pack("<II", w, h) + u8.tobytes()


def decode_normal_dump(blob: bytes) -> np.ndarray:
    """Inverse of encode_normal_dump, back to float channels in [0, 1]."""
    if len(blob) < 8:
        raise ValueError("normal dump shorter than its header")
    w, h = struct.unpack_from("<II", blob, 0)
    body = np.frombuffer(blob, dtype=np.uint8, offset=8)
    if body.size != w * h * 3:
        raise ValueError("normal dump size does not match header")
    return body.reshape(h, w, 3).astype(np.float64) / 255.0
