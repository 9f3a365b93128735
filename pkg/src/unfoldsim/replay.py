"""Episode replay storage with demo preloading and batch-consistent augmentation.

Two departures from a plain FIFO buffer: demonstration episodes are loaded
before any agent data and survive eviction as long as any agent data remains,
and sampling draws ONE set of augmentation parameters per batch, applying the
identical photometric + geometric transform to every image in the batch (both
camera views, all timesteps). The augmentation family contains no flips and
only small rotations, so image axes stay aligned with the control axes.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .episodes import EpisodeRecord, EpisodeSchemaError, load_episode

log = logging.getLogger(__name__)

MAX_ROTATION_DEG = 15.0  # hard cap; beyond this the view/control axes diverge


@dataclass
class BufferConfig:
    capacity: int = 100_000  # transitions
    sequence_length: int = 16
    batch_size: int = 8
    brightness: tuple[float, float] = (-0.2, 0.2)
    contrast: tuple[float, float] = (0.8, 1.2)
    hue: tuple[float, float] = (-0.05, 0.05)
    saturation: tuple[float, float] = (0.8, 1.2)
    value: tuple[float, float] = (0.8, 1.2)
    rotation_deg: tuple[float, float] = (-5.0, 5.0)
    translation_px: tuple[float, float] = (-4.0, 4.0)
    zoom: tuple[float, float] = (0.9, 1.1)
    demo_paths: tuple[str, ...] = ()

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be positive")
        lo, hi = self.rotation_deg
        if lo > hi or abs(lo) > MAX_ROTATION_DEG or abs(hi) > MAX_ROTATION_DEG:
            raise ValueError(f"rotation range limited to +-{MAX_ROTATION_DEG} degrees")
        if self.zoom[0] <= 0:
            raise ValueError("zoom must stay positive")
        for name in ("brightness", "contrast", "hue", "saturation", "value",
                     "translation_px", "zoom"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is inverted")


@dataclass(frozen=True)
class AugmentationParams:
    """One sampled value per knob, shared by every image of a sampled batch."""

    brightness: float = 0.0
    contrast: float = 1.0
    hue: float = 0.0
    saturation: float = 1.0
    value: float = 1.0
    rotation_deg: float = 0.0
    translation_px: tuple[float, float] = (0.0, 0.0)  # (dx, dy), +right/+down
    zoom: float = 1.0

    @classmethod
    def sample(cls, cfg: BufferConfig, rng: np.random.Generator):
        return cls(
            brightness=float(rng.uniform(*cfg.brightness)),
            contrast=float(rng.uniform(*cfg.contrast)),
            hue=float(rng.uniform(*cfg.hue)),
            saturation=float(rng.uniform(*cfg.saturation)),
            value=float(rng.uniform(*cfg.value)),
            rotation_deg=float(rng.uniform(*cfg.rotation_deg)),
            translation_px=(
                float(rng.uniform(*cfg.translation_px)),
                float(rng.uniform(*cfg.translation_px)),
            ),
            zoom=float(rng.uniform(*cfg.zoom)),
        )

    @property
    def photometric_identity(self) -> bool:
        return (
            self.brightness == 0.0
            and self.contrast == 1.0
            and self.hue == 0.0
            and self.saturation == 1.0
            and self.value == 1.0
        )

    @property
    def geometric_identity(self) -> bool:
        return (
            self.rotation_deg == 0.0
            and self.translation_px == (0.0, 0.0)
            and self.zoom == 1.0
        )

    def linear_part(self) -> np.ndarray:
        """2x2 forward matrix in (row, col) coordinates; never a reflection."""
        th = np.radians(self.rotation_deg)
        rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        return self.zoom * rot


def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    span = maxc - minc
    s = np.where(maxc > 0, span / np.maximum(maxc, 1e-12), 0.0)
    safe = np.maximum(span, 1e-12)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(
        maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc)
    )
    h = np.where(span == 0.0, 0.0, (h / 6.0) % 1.0)
    return np.stack([h, s, v], axis=-1)


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    choices = [
        (v, t, p),
        (q, v, p),
        (p, v, t),
        (p, q, v),
        (t, p, v),
        (v, p, q),
    ]
    r = np.select([i == k for k in range(6)], [c[0] for c in choices])
    g = np.select([i == k for k in range(6)], [c[1] for c in choices])
    b = np.select([i == k for k in range(6)], [c[2] for c in choices])
    return np.stack([r, g, b], axis=-1)


def augment_batch(images: np.ndarray, params: AugmentationParams) -> np.ndarray:
    """Apply one augmentation to every image in (..., H, W, 3), returning a copy.

    Photometric first (brightness, contrast about 0.5, then HSV shifts), then
    one affine resample (zoom, rotate, translate about the image center) with
    bilinear interpolation and edge replication. Stages at their identity
    values are skipped, so identity params return the input bit-exactly.
    """
    out = np.array(images, dtype=np.float32, copy=True)
    if out.shape[-1] != 3:
        raise ValueError("expected channel-last 3-channel images")

    if not params.photometric_identity:
        if params.brightness != 0.0:
            out = np.clip(out + params.brightness, 0.0, 1.0)
        if params.contrast != 1.0:
            out = np.clip(0.5 + params.contrast * (out - 0.5), 0.0, 1.0)
        if (
            params.hue != 0.0
            or params.saturation != 1.0
            or params.value != 1.0
        ):
            hsv = _rgb_to_hsv(np.clip(out, 0.0, 1.0))
            hsv[..., 0] = (hsv[..., 0] + params.hue) % 1.0
            hsv[..., 1] = np.clip(hsv[..., 1] * params.saturation, 0.0, 1.0)
            hsv[..., 2] = np.clip(hsv[..., 2] * params.value, 0.0, 1.0)
            out = _hsv_to_rgb(hsv).astype(np.float32)

    if not params.geometric_identity:
        h, w = out.shape[-3], out.shape[-2]
        lead = out.shape[:-3]
        flat = out.reshape(-1, h, w, 3)
        center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
        shift = np.array([params.translation_px[1], params.translation_px[0]])
        fwd = params.linear_part()
        inv = np.linalg.inv(fwd)
        # output[o] = input[A @ o + off] over the (row, col) axes only
        mat = np.eye(4)
        mat[1:3, 1:3] = inv
        off = np.zeros(4)
        off[1:3] = center - inv @ (center + shift)
        flat = ndimage.affine_transform(
            flat, mat, offset=off, order=1, mode="nearest", output=np.float32
        )
        out = flat.reshape(*lead, h, w, 3)

    return np.clip(out, 0.0, 1.0, out=out)


@dataclass
class SampledBatch:
    standoff: np.ndarray  # (B, L, H, W, 3) float32
    wrist: np.ndarray  # (B, L, H, W, 3) float32
    proprio: np.ndarray  # (B, L, 5) float32
    actions: np.ndarray  # (B, L, 4) float64
    rewards: np.ndarray  # (B, L) float64
    dones: np.ndarray  # (B, L) uint8
    is_demo: np.ndarray  # (B,) bool
    params: AugmentationParams


class _StoredEpisode:
    __slots__ = ("standoff", "wrist", "proprio", "actions", "rewards", "dones",
                 "is_demo", "n_steps")

    def __init__(self, record: EpisodeRecord, is_demo: bool):
        record.validate()
        self.standoff = record.obs_standoff.copy()
        self.wrist = record.obs_wrist.copy()
        self.proprio = record.proprio.copy()
        self.actions = record.actions.copy()
        self.rewards = record.rewards.copy()
        self.dones = record.dones.copy()
        for name in ("standoff", "wrist", "proprio", "actions", "rewards", "dones"):
            getattr(self, name).flags.writeable = False
        self.is_demo = is_demo
        self.n_steps = record.n_steps


class ReplayBuffer:
    """Transition storage; one writer and concurrent readers are supported."""

    def __init__(self, config: BufferConfig | None = None):
        self.config = config or BufferConfig()
        self._episodes: list[_StoredEpisode] = []
        self._lock = threading.Lock()

    @property
    def n_transitions(self) -> int:
        with self._lock:
            return sum(e.n_steps for e in self._episodes)

    @property
    def n_episodes(self) -> int:
        with self._lock:
            return len(self._episodes)

    def demo_transitions(self) -> int:
        with self._lock:
            return sum(e.n_steps for e in self._episodes if e.is_demo)

    def preload_demos(self, paths) -> int:
        """Load demonstration episode files; only legal before agent data."""
        with self._lock:
            if any(not e.is_demo for e in self._episodes):
                raise RuntimeError("demos must be preloaded before agent episodes")
        loaded = []
        total = 0
        for p in paths:
            record = load_episode(Path(p))  # raises naming the file
            loaded.append(_StoredEpisode(record, is_demo=True))
            total += record.n_steps
        with self._lock:
            existing = sum(e.n_steps for e in self._episodes)
            if existing + total > self.config.capacity:
                raise ValueError(
                    f"demonstrations ({existing + total} transitions) exceed "
                    f"buffer capacity {self.config.capacity}"
                )
            self._episodes.extend(loaded)
        return total

    def add_episode(self, record: EpisodeRecord, is_demo: bool = False) -> None:
        """Append an episode, evicting oldest non-demo episodes when full."""
        stored = _StoredEpisode(record, is_demo=is_demo)
        with self._lock:
            self._episodes.append(stored)
            total = sum(e.n_steps for e in self._episodes)
            while total > self.config.capacity and len(self._episodes) > 1:
                victim = None
                for i, e in enumerate(self._episodes):
                    if not e.is_demo:
                        victim = i
                        break
                if victim is None:
                    victim = 0
                    log.warning(
                        "buffer holds only demonstrations; evicting oldest demo"
                    )
                total -= self._episodes[victim].n_steps
                del self._episodes[victim]

    def sample(
        self,
        batch_size: int | None = None,
        sequence_length: int | None = None,
        rng: np.random.Generator | None = None,
    ) -> SampledBatch:
        """Sample segment-uniform sequences and augment them batch-consistently."""
        cfg = self.config
        batch_size = batch_size or cfg.batch_size
        seq = sequence_length or cfg.sequence_length
        rng = rng if rng is not None else np.random.default_rng()

        with self._lock:
            episodes = list(self._episodes)
        if not episodes:
            raise ValueError("replay buffer is empty")
        eligible = [e for e in episodes if e.n_steps >= seq]
        if not eligible:
            raise ValueError(
                f"no stored episode is long enough for sequence_length={seq}"
            )

        starts = np.array([e.n_steps - seq + 1 for e in eligible], dtype=np.float64)
        probs = starts / starts.sum()
        picks = rng.choice(len(eligible), size=batch_size, p=probs)

        standoff, wrist, proprio, actions, rewards, dones, is_demo = (
            [], [], [], [], [], [], []
        )
        for k in picks:
            e = eligible[int(k)]
            s = int(rng.integers(0, e.n_steps - seq + 1))
            sl = slice(s, s + seq)
            standoff.append(e.standoff[sl])
            wrist.append(e.wrist[sl])
            proprio.append(e.proprio[sl])
            actions.append(e.actions[sl])
            rewards.append(e.rewards[sl])
            dones.append(e.dones[sl])
            is_demo.append(e.is_demo)

        params = AugmentationParams.sample(cfg, rng)
        images = np.stack(
            [np.stack(standoff), np.stack(wrist)], axis=0
        ).astype(np.float32) / 255.0
        images = augment_batch(images, params)
        return SampledBatch(
            standoff=images[0],
            wrist=images[1],
            proprio=np.stack(proprio),
            actions=np.stack(actions),
            rewards=np.stack(rewards),
            dones=np.stack(dones),
            is_demo=np.asarray(is_demo, dtype=bool),
            params=params,
        )
