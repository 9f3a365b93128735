"""Newline-delimited JSON protocol server exposing environments and sampling.

Request:  {"v": 1, "cmd": <str>, "session": <str|absent>, "payload": {...}}
Response: {"v": 1, "ok": true, "payload": {...}}
          {"v": 1, "ok": false, "error": {"code": <str>, "message": <str>}}

Commands: spec, reset, step, sample, close. Image tensors travel as base64 of
the documented binary dumps (8-byte width/height header + 8-bit channels);
proprio as base64 float32 little-endian. A session owns exactly one
environment; sessions are created by the first reset of a connection and die
with it. Completed episodes are added to the server's shared replay buffer.
"""

from __future__ import annotations

import base64
import json
import logging
import socket
import socketserver
import threading

import numpy as np

from .config import AppConfig, resolved_config_dict
from .env import ClothUnfoldEnv, EpisodeFinished, Observation
from .episodes import EpisodeRecorder
from .normals import encode_normal_dump
from .replay import ReplayBuffer

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1


def encode_observation(obs: Observation) -> dict:
    return {
        "standoff": base64.b64encode(
            encode_normal_dump(np.asarray(obs.standoff_normals))
        ).decode(),
        "wrist": base64.b64encode(
            encode_normal_dump(np.asarray(obs.wrist_normals))
        ).decode(),
        "proprio": base64.b64encode(
            np.asarray(obs.proprio, dtype="<f4").tobytes()
        ).decode(),
    }


def encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr)
    dtype = arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype
    return {
        "shape": list(arr.shape),
        "dtype": dtype.str,
        "data": base64.b64encode(arr.astype(dtype).tobytes()).decode(),
    }


class ProtocolError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class _Session:
    def __init__(self, session_id: str, env: ClothUnfoldEnv, config_dict: dict):
        self.id = session_id
        self.env = env
        self.config_dict = config_dict
        self.recorder: EpisodeRecorder | None = None

    def reset(self, seed: int) -> dict:
        obs = self.env.reset(seed)
        self.recorder = EpisodeRecorder(obs, seed, self.config_dict)
        return {"session": self.id, "observation": encode_observation(obs)}

    def step(self, action) -> dict:
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (4,):
            raise ProtocolError("bad_action", "action must be 4 numbers")
        try:
            result = self.env.step(action)
        except EpisodeFinished as e:
            raise ProtocolError("episode_finished", str(e))
        if self.recorder is not None:
            self.recorder.add_step(action, result)
        return {
            "observation": encode_observation(result.observation),
            "reward": result.reward,
            "done": result.done,
            "info": {
                k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
                for k, v in result.info.items()
            },
        }


class UnfoldServer(socketserver.ThreadingTCPServer):
    """One handler thread per connection; buffer shared across sessions."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, app_config: AppConfig | None = None, address=None):
        self.app_config = app_config or AppConfig()
        addr = address or (self.app_config.service.host, self.app_config.service.port)
        super().__init__(addr, _Handler)
        self.buffer = ReplayBuffer(self.app_config.buffer)
        self.sessions: dict[str, _Session] = {}
        self._lock = threading.Lock()
        self._next_session = 0
        self._config_dict = resolved_config_dict(self.app_config.env)
        self._spec = ClothUnfoldEnv(self.app_config.env).env_spec()
        self.on_episode_complete = None  # hook(session, recorder, env)
        demo_dir = self.app_config.service.demo_dir
        if demo_dir:
            from pathlib import Path

            paths = sorted(Path(demo_dir).glob("*.zip"))
            n = self.buffer.preload_demos(paths)
            log.info("preloaded %d demo transitions from %s", n, demo_dir)

    @property
    def bound_address(self) -> tuple[str, int]:
        return self.server_address[:2]

    def create_session(self) -> _Session:
        with self._lock:
            self._next_session += 1
            sid = f"s{self._next_session:06d}"
            session = _Session(
                sid, ClothUnfoldEnv(self.app_config.env), self._config_dict
            )
            self.sessions[sid] = session
            return session

    def get_session(self, sid) -> _Session:
        with self._lock:
            session = self.sessions.get(sid)
        if session is None:
            raise ProtocolError("unknown_session", f"unknown session {sid!r}")
        return session

    def close_session(self, sid) -> None:
        with self._lock:
            self.sessions.pop(sid, None)

    def handle_command(self, msg: dict, owned: set) -> dict:
        v = msg.get("v")
        if v != PROTOCOL_VERSION:
            raise ProtocolError(
                "version_mismatch",
                f"server speaks protocol {PROTOCOL_VERSION}, client sent {v!r}",
            )
        cmd = msg.get("cmd")
        payload = msg.get("payload") or {}
        if cmd == "spec":
            return dict(self._spec)
        if cmd == "reset":
            sid = msg.get("session")
            session = self.get_session(sid) if sid else self.create_session()
            if not sid:
                owned.add(session.id)
            seed = payload.get("seed")
            if not isinstance(seed, int):
                raise ProtocolError("bad_seed", "reset needs an integer seed")
            return session.reset(seed)
        if cmd == "step":
            if msg.get("session") is None:
                raise ProtocolError("no_episode", "no active episode; reset first")
            session = self.get_session(msg.get("session"))
            out = session.step(payload.get("action"))
            if out["done"]:
                self._finish_episode(session)
            return out
        if cmd == "sample":
            seed = payload.get("seed")
            rng = np.random.default_rng(seed) if seed is not None else None
            batch = self.buffer.sample(
                batch_size=payload.get("batch_size"),
                sequence_length=payload.get("sequence_length"),
                rng=rng,
            )
            return {
                "standoff": encode_array(batch.standoff),
                "wrist": encode_array(batch.wrist),
                "proprio": encode_array(batch.proprio),
                "actions": encode_array(batch.actions),
                "rewards": encode_array(batch.rewards),
                "dones": encode_array(batch.dones),
                "is_demo": encode_array(batch.is_demo.astype(np.uint8)),
                "augmentation": {
                    "brightness": batch.params.brightness,
                    "contrast": batch.params.contrast,
                    "hue": batch.params.hue,
                    "saturation": batch.params.saturation,
                    "value": batch.params.value,
                    "rotation_deg": batch.params.rotation_deg,
                    "translation_px": list(batch.params.translation_px),
                    "zoom": batch.params.zoom,
                },
            }
        if cmd == "close":
            sid = msg.get("session")
            self.get_session(sid)
            self.close_session(sid)
            owned.discard(sid)
            return {"closed": sid}
        raise ProtocolError("unknown_command", f"unknown command {cmd!r}")

    def _finish_episode(self, session: _Session) -> None:
        if session.recorder is None:
            return
        record = session.recorder.finish(
            max_a_norm=float(session.env.max_a_norm),
            randomization=session.env.randomization_sample,
        )
        session.recorder = None
        try:
            self.buffer.add_episode(record)
        except Exception:
            log.exception("failed to add finished episode to buffer")
        hook = self.on_episode_complete
        if hook is not None:
            hook(session, record, session.env)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        owned: set = set()
        server: UnfoldServer = self.server
        try:
            for raw in self.rfile:
                line = raw.strip()
                if not line:
                    continue
                try:
                    msg = json.loads(line)
                    if not isinstance(msg, dict):
                        raise ValueError("message must be a JSON object")
                except ValueError as e:
                    self._send_error("bad_frame", f"malformed frame: {e}")
                    continue
                try:
                    payload = server.handle_command(msg, owned)
                    self._send({"v": PROTOCOL_VERSION, "ok": True, "payload": payload})
                except ProtocolError as e:
                    self._send_error(e.code, str(e))
                except Exception as e:  # session crash must not kill the server
                    log.exception("command failed")
                    self._send_error("internal_error", f"{type(e).__name__}: {e}")
        finally:
            for sid in owned:
                server.close_session(sid)

    def _send(self, obj: dict) -> None:
        self.wfile.write(json.dumps(obj).encode() + b"\n")
        self.wfile.flush()

    def _send_error(self, code: str, message: str) -> None:
        self._send(
            {
                "v": PROTOCOL_VERSION,
                "ok": False,
                "error": {"code": code, "message": message},
            }
        )


def start_server(
    app_config: AppConfig | None = None, address=None
) -> tuple[UnfoldServer, threading.Thread]:
    """Start a server on a background thread; returns (server, thread)."""
    server = UnfoldServer(app_config, address=address)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread


class MiniClient:
    """Minimal in-package protocol client for evaluation and tests.

    The standalone client SDK lives in its own package; this one exists so the
    replay evaluation mode can exercise the full server path in-process.
    """

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.rfile = self.sock.makefile("rb")
        self.session: str | None = None

    def request(self, cmd: str, payload: dict | None = None, session=None) -> dict:
        msg = {"v": PROTOCOL_VERSION, "cmd": cmd, "payload": payload or {}}
        sid = session if session is not None else self.session
        if sid is not None:
            msg["session"] = sid
        self.sock.sendall(json.dumps(msg).encode() + b"\n")
        line = self.rfile.readline()
        if not line:
            raise ConnectionError("server closed the connection")
        resp = json.loads(line)
        if not resp.get("ok"):
            err = resp.get("error", {})
            raise ProtocolError(err.get("code", "unknown"), err.get("message", ""))
        return resp["payload"]

    def spec(self) -> dict:
        return self.request("spec")

    def reset(self, seed: int) -> dict:
        out = self.request("reset", {"seed": seed}, session=self.session)
        self.session = out["session"]
        return out

    def step(self, action) -> dict:
        return self.request("step", {"action": [float(a) for a in action]})

    def close(self) -> None:
        try:
            if self.session is not None:
                self.request("close")
        finally:
            self.sock.close()
