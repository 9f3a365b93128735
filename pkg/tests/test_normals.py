from collections import deque

import numpy as np
import pytest

from unfoldsim.normals import (
    NormalsParams,
    decode_normal_dump,
    decode_normals,
    depth_to_normals,
    downscale,
    encode_normal_dump,
    encode_normals,
    patch_occlusions,
    sobel_gain,
    sobel_gradients,
    sobel_kernels,
)

P = NormalsParams()


def bfs_patch_oracle(depth):
    """Independent reference: layer-by-layer fill, each new pixel averaging its
    4-neighbors from strictly earlier layers."""
    d = np.array(depth, dtype=float)
    h, w = d.shape
    dist = np.full((h, w), -1, dtype=int)
    q = deque()
    for i in range(h):
        for j in range(w):
            if np.isfinite(d[i, j]):
                dist[i, j] = 0
                q.append((i, j))
    while q:
        i, j = q.popleft()
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ni, nj = i + di, j + dj
            if 0 <= ni < h and 0 <= nj < w and dist[ni, nj] < 0:
                dist[ni, nj] = dist[i, j] + 1
                q.append((ni, nj))
    maxd = dist.max()
    for layer in range(1, maxd + 1):
        prev = d.copy()
        for i in range(h):
            for j in range(w):
                if dist[i, j] == layer:
                    vals = [
                        prev[i + di, j + dj]
                        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1))
                        if 0 <= i + di < h
                        and 0 <= j + dj < w
                        and dist[i + di, j + dj] == layer - 1
                    ]
                    d[i, j] = float(np.mean(vals))
    return d


def test_patch_identity_when_valid():
    rng = np.random.default_rng(0)
    d = rng.uniform(0.2, 1.0, size=(32, 32))
    assert np.array_equal(patch_occlusions(d), d)


def test_patch_single_pixel():
    d = np.full((9, 9), 0.7)
    d[4, 4] = np.inf
    out = patch_occlusions(d)
    assert out[4, 4] == pytest.approx(0.7)


def test_patch_stripe_between_regions():
    d = np.full((8, 8), 0.4)
    d[:, 5:] = 0.6
    d[:, 2:5] = np.inf
    out = patch_occlusions(d)
    # nearest region wins; the center column ties and takes the mean
    assert (out[:, 2] == pytest.approx(0.4, abs=1e-12)) if np.ndim(out[:, 2]) == 0 else np.allclose(out[:, 2], 0.4)
    assert np.allclose(out[:, 3], 0.5)
    assert np.allclose(out[:, 4], 0.6)


def test_patch_matches_bfs_oracle_random_masks():
    rng = np.random.default_rng(7)
    for _ in range(10):
        d = rng.uniform(0.2, 1.5, size=(16, 16))
        mask = rng.random((16, 16)) < 0.45
        if mask.all():
            mask[0, 0] = False
        d = np.where(mask, np.inf, d)
        got = patch_occlusions(d)
        want = bfs_patch_oracle(d)
        assert np.allclose(got, want, atol=1e-12)


def test_patch_fully_invalid_fills_far():
    d = np.full((8, 8), np.inf)
    out = patch_occlusions(d, fill_value=3.0)
    assert (out == 3.0).all()


def test_patch_idempotent():
    rng = np.random.default_rng(9)
    d = rng.uniform(0.2, 1.0, size=(24, 24))
    d[rng.random((24, 24)) < 0.3] = np.inf
    once = patch_occlusions(d)
    twice = patch_occlusions(once)
    assert np.array_equal(once, twice)


def test_sobel_constant_zero():
    gx, gy = sobel_gradients(np.full((64, 64), 0.8), 9)
    assert np.abs(gx).max() == 0.0
    assert np.abs(gy).max() == 0.0


def test_sobel_k3_ramp_response():
    s = 0.01
    d = s * np.arange(64)[None, :] * np.ones((64, 1))
    gx, gy = sobel_gradients(d, 3)
    assert gx[20:44, 20:44] == pytest.approx(8 * s, abs=1e-12)
    assert np.abs(gy[20:44, 20:44]).max() < 1e-12


def test_sobel_ramp_rotated_swaps_roles():
    s = 0.01
    d = s * np.arange(64)[None, :] * np.ones((64, 1))
    gx1, gy1 = sobel_gradients(d, 9)
    gx2, gy2 = sobel_gradients(np.rot90(d), 9)
    interior = slice(8, 56)
    assert np.allclose(gy2[interior, interior], -gx1[interior, interior].T, atol=1e-12)
    assert np.abs(gx2[interior, interior]).max() < 1e-12


def test_sobel_even_kernel_rejected():
    with pytest.raises(ValueError):
        sobel_gradients(np.zeros((16, 16)), 4)


def test_sobel_invalid_pixels_rejected():
    d = np.full((16, 16), 0.5)
    d[3, 3] = np.inf
    with pytest.raises(ValueError):
        sobel_gradients(d, 3)


def test_sobel_kernel_k9_coefficients():
    deriv, smooth = sobel_kernels(9)
    assert deriv.tolist() == [-1, -6, -14, -14, 0, 14, 14, 6, 1]
    assert smooth.tolist() == [1, 8, 28, 56, 70, 56, 28, 8, 1]
    assert sobel_gain(9) == 32768.0
    assert sobel_gain(3) == 8.0


def test_flat_plane_normals():
    img = depth_to_normals(np.full((256, 256), 0.5), P)
    n = decode_normals(img)
    assert np.abs(n - np.array([0.0, 0.0, 1.0])).max() <= 1e-3
    assert np.allclose(img, [0.5, 0.5, 1.0], atol=1e-3)


@pytest.mark.parametrize("deg", [10, 20, 30])
def test_tilted_plane_normals(deg):
    th = np.radians(deg)
    u = np.arange(256) - 127.5
    d = 0.5 + np.tan(th) * P.pixel_scale * u[None, :] * np.ones((256, 1))
    n = decode_normals(depth_to_normals(d, P))
    target = np.array([-np.sin(th), 0.0, np.cos(th)])
    assert np.abs(n[8:56, 8:56] - target).max() <= 0.02


def test_unit_norm_invariant():
    rng = np.random.default_rng(3)
    base = rng.uniform(0.4, 0.6, size=(8, 8))
    d = np.kron(base, np.ones((32, 32)))  # smooth-ish random surface
    n = decode_normals(depth_to_normals(d, P))
    lens = np.linalg.norm(n, axis=-1)
    assert lens.min() >= 1 - 1e-3 and lens.max() <= 1 + 1e-3


def test_z_component_nonnegative():
    rng = np.random.default_rng(4)
    d = 0.5 + 0.05 * rng.standard_normal((256, 256)).cumsum(axis=1) / 100
    n = decode_normals(depth_to_normals(d, P))
    assert n[..., 2].min() >= 0.0


def test_rotation_equivariance():
    rng = np.random.default_rng(5)
    base = rng.uniform(0.45, 0.55, size=(16, 16))
    d = np.kron(base, np.ones((16, 16)))
    n = decode_normals(depth_to_normals(d, P))
    n_rot = decode_normals(depth_to_normals(np.ascontiguousarray(np.rot90(d)), P))
    # rotating the depth CCW maps components (x, y) -> (y, -x)
    expected = np.rot90(n)
    remapped = np.stack(
        [expected[..., 1], -expected[..., 0], expected[..., 2]], axis=-1
    )
    inner = slice(4, 60)
    assert np.allclose(n_rot[inner, inner], remapped[inner, inner], atol=1e-6)


def test_crease_blending_width():
    # V-shaped crease: the wide kernel must smear the transition over >= k/2 px
    slope = 0.002
    u = np.abs(np.arange(256) - 127.5)
    d = 0.5 + slope * u[None, :] * np.ones((256, 1))

    def width(k):
        gx, _ = sobel_gradients(d, k)
        row = gx[128]
        peak = np.abs(row[32:96]).mean()  # steady response away from the crease
        return (np.abs(row[96:160]) < 0.95 * peak).sum()

    k = 9
    assert width(k) >= k // 2 + 1
    assert width(k) > width(3)  # wider kernel blends more than the classic one


def test_depth_to_normals_validates_input():
    with pytest.raises(ValueError):
        depth_to_normals(np.zeros((128, 128)), P)
    bad = np.full((256, 256), 0.5)
    bad[0, 0] = np.inf
    with pytest.raises(ValueError):
        depth_to_normals(bad, P)


def test_downscale_constant_identity():
    v = encode_normals(np.array([0.6, 0.0, 0.8]))
    img = np.tile(v, (256, 256, 1))
    out = downscale(img, (64, 64))
    assert out.shape == (64, 64, 3)
    assert np.allclose(out, v, atol=1e-12)


def test_downscale_checkerboard_renormalized_mean():
    a = np.array([0.6, 0.0, 0.8])
    b = np.array([-0.6, 0.0, 0.8])
    img = np.zeros((8, 8, 3))
    img[::2, ::2] = encode_normals(a)
    img[1::2, ::2] = encode_normals(b)
    img[::2, 1::2] = encode_normals(b)
    img[1::2, 1::2] = encode_normals(a)
    out = downscale(img, (2, 2))
    mean = (a + b) / 2
    expected = encode_normals(mean / np.linalg.norm(mean))
    assert np.allclose(out, expected, atol=1e-12)


def test_downscale_same_size_identity():
    rng = np.random.default_rng(6)
    v = rng.normal(size=(64, 64, 3))
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    img = encode_normals(v)
    assert np.allclose(downscale(img, (64, 64)), img, atol=1e-12)


def test_downscale_indivisible_rejected():
    with pytest.raises(ValueError):
        downscale(np.zeros((100, 100, 3)), (64, 64))


def test_normal_dump_roundtrip():
    rng = np.random.default_rng(8)
    img = rng.random((64, 64, 3))
    blob = encode_normal_dump(img)
    assert len(blob) == 8 + 64 * 64 * 3
    assert blob[:4] == (64).to_bytes(4, "little")
    back = decode_normal_dump(blob)
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12
    # u8-grid images survive exactly
    exact = np.rint(img * 255.0) / 255.0
    assert np.array_equal(decode_normal_dump(encode_normal_dump(exact)), exact)


def test_normal_dump_rejects_garbage():
    with pytest.raises(ValueError):
        decode_normal_dump(b"xy")
    with pytest.raises(ValueError):
        decode_normal_dump((4).to_bytes(4, "little") * 2 + b"abc")
