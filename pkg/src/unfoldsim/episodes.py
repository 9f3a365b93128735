"""Episode record files: a zip container with a JSON manifest and raw tensors.

Layout (format version 1):
    manifest.json     seed, config hash + resolved config, counts, metadata
    obs_standoff.u8   (n+1, 64, 64, 3) uint8 normal images
    obs_wrist.u8      (n+1, 64, 64, 3) uint8 normal images
    proprio.f32le     (n+1, 5) float32 little-endian
    actions.f64le     (n, 4) float64 little-endian
    rewards.f64le     (n,) float64 little-endian
    dones.u8          (n,) uint8
    a_norm.f64le      (n,) float64 little-endian

obs[i] is the observation the agent acted from at step i; obs[n] is terminal.
Files are written with fixed zip timestamps so identical rollouts produce
bit-identical files.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class EpisodeSchemaError(ValueError):
    """An episode file does not match the documented schema."""


def config_hash(config_dict: dict) -> str:
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class EpisodeRecord:
    manifest: dict
    obs_standoff: np.ndarray  # (n+1, H, W, 3) uint8
    obs_wrist: np.ndarray  # (n+1, H, W, 3) uint8
    proprio: np.ndarray  # (n+1, 5) float32
    actions: np.ndarray  # (n, 4) float64
    rewards: np.ndarray  # (n,) float64
    dones: np.ndarray  # (n,) uint8
    a_norm: np.ndarray  # (n,) float64

    @property
    def n_steps(self) -> int:
        return len(self.actions)

    def validate(self) -> None:
        n = self.n_steps
        img_shape = tuple(self.manifest.get("image_shape", (64, 64, 3)))
        checks = [
            (self.obs_standoff, (n + 1, *img_shape), np.uint8),
            (self.obs_wrist, (n + 1, *img_shape), np.uint8),
            (self.proprio, (n + 1, 5), np.float32),
            (self.actions, (n, 4), np.float64),
            (self.rewards, (n,), np.float64),
            (self.dones, (n,), np.uint8),
            (self.a_norm, (n,), np.float64),
        ]
        for arr, shape, dtype in checks:
            if arr.shape != shape or arr.dtype != dtype:
                raise EpisodeSchemaError(
                    f"schema mismatch: expected {shape} {dtype}, "
                    f"got {arr.shape} {arr.dtype}"
                )
        if self.manifest.get("format_version") != FORMAT_VERSION:
            raise EpisodeSchemaError(
                f"unsupported format version {self.manifest.get('format_version')}"
            )
        if int(self.manifest.get("n_steps", -1)) != n:
            raise EpisodeSchemaError("manifest step count disagrees with tensors")


class EpisodeRecorder:
    """Accumulates one episode's transitions and freezes them into a record."""

    def __init__(self, first_observation, seed: int, config_dict: dict, extra=None):
        self.seed = seed
        self.config_dict = config_dict
        self.extra = extra or {}
        self._standoff = [self._img_u8(first_observation.standoff_normals)]
        self._wrist = [self._img_u8(first_observation.wrist_normals)]
        self._proprio = [np.asarray(first_observation.proprio, dtype=np.float32)]
        self._actions = []
        self._rewards = []
        self._dones = []
        self._a_norm = []

    @staticmethod
    def _img_u8(img) -> np.ndarray:
        arr = np.asarray(img)
        if arr.dtype == np.uint8:
            return arr
        return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)

    def add_step(self, action, result) -> None:
        self._actions.append(np.asarray(action, dtype=np.float64).reshape(4))
        self._rewards.append(float(result.reward))
        self._dones.append(1 if result.done else 0)
        self._a_norm.append(float(result.info["A_norm"]))
        obs = result.observation
        self._standoff.append(self._img_u8(obs.standoff_normals))
        self._wrist.append(self._img_u8(obs.wrist_normals))
        self._proprio.append(np.asarray(obs.proprio, dtype=np.float32))

    def finish(self, **manifest_extra) -> EpisodeRecord:
        n = len(self._actions)
        manifest = {
            "format_version": FORMAT_VERSION,
            "seed": self.seed,
            "config_hash": config_hash(self.config_dict),
            "config": self.config_dict,
            "n_steps": n,
            "image_shape": list(self._standoff[0].shape),
            "proprio_dim": 5,
            "action_dim": 4,
            **self.extra,
            **manifest_extra,
        }
        return EpisodeRecord(
            manifest=manifest,
            obs_standoff=np.stack(self._standoff),
            obs_wrist=np.stack(self._wrist),
            proprio=np.stack(self._proprio),
            actions=(
                np.stack(self._actions) if n else np.zeros((0, 4), dtype=np.float64)
            ),
            rewards=np.asarray(self._rewards, dtype=np.float64),
            dones=np.asarray(self._dones, dtype=np.uint8),
            a_norm=np.asarray(self._a_norm, dtype=np.float64),
        )


_TENSOR_FILES = {
    "obs_standoff.u8": ("obs_standoff", np.uint8),
    "obs_wrist.u8": ("obs_wrist", np.uint8),
    "proprio.f32le": ("proprio", "<f4"),
    "actions.f64le": ("actions", "<f8"),
    "rewards.f64le": ("rewards", "<f8"),
    "dones.u8": ("dones", np.uint8),
    "a_norm.f64le": ("a_norm", "<f8"),
}


def save_episode(record: EpisodeRecord, path) -> None:
    record.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED) as zf:

        def put(name: str, data: bytes):
            zi = zipfile.ZipInfo(name, date_time=_EPOCH)
            zi.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(zi, data)

        put(
            "manifest.json",
            json.dumps(record.manifest, sort_keys=True, indent=1).encode(),
        )
        for fname, (attr, dtype) in _TENSOR_FILES.items():
            arr = getattr(record, attr)
            put(fname, np.ascontiguousarray(arr, dtype=dtype).tobytes())
    path.write_bytes(buf.getvalue())


def load_episode(path) -> EpisodeRecord:
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            n = int(manifest["n_steps"])
            img_shape = tuple(manifest["image_shape"])
            shapes = {
                "obs_standoff": (n + 1, *img_shape),
                "obs_wrist": (n + 1, *img_shape),
                "proprio": (n + 1, 5),
                "actions": (n, 4),
                "rewards": (n,),
                "dones": (n,),
                "a_norm": (n,),
            }
            arrays = {}
            for fname, (attr, dtype) in _TENSOR_FILES.items():
                raw = np.frombuffer(zf.read(fname), dtype=dtype)
                expected = int(np.prod(shapes[attr]))
                if raw.size != expected:
                    raise EpisodeSchemaError(
                        f"{path.name}: {fname} holds {raw.size} values, "
                        f"expected {expected}"
                    )
                arrays[attr] = raw.reshape(shapes[attr]).astype(
                    np.uint8 if dtype == np.uint8 else np.dtype(dtype).newbyteorder("=")
                )
    except EpisodeSchemaError:
        raise
    except (KeyError, zipfile.BadZipFile, json.JSONDecodeError, ValueError) as e:
        raise EpisodeSchemaError(f"{path.name}: not a valid episode file ({e})")

    record = EpisodeRecord(manifest=manifest, **arrays)
    try:
        record.validate()
    except EpisodeSchemaError as e:
        raise EpisodeSchemaError(f"{path.name}: {e}")
    return record
