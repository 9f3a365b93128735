"""Speak the wire protocol by hand.

Starts a server in this process, opens a raw socket, and walks through the
newline-delimited JSON exchange: spec, reset, a few steps, a buffer sample
after the episode finishes, and close. This is everything an external agent
needs to integrate.
"""

import base64
import json
import socket

import numpy as np

from unfoldsim.config import AppConfig
from unfoldsim.service import start_server

server, _thread = start_server(AppConfig(), address=("127.0.0.1", 0))
host, port = server.bound_address
print(f"server listening on {host}:{port}")

sock = socket.create_connection((host, port))
rfile = sock.makefile("rb")


def call(cmd, payload=None, session=None):
    msg = {"v": 1, "cmd": cmd, "payload": payload or {}}
    if session:
        msg["session"] = session
    sock.sendall(json.dumps(msg).encode() + b"\n")
    resp = json.loads(rfile.readline())
    if not resp["ok"]:
        raise RuntimeError(resp["error"])
    return resp["payload"]


spec = call("spec")
print("spec:", json.dumps(spec))

out = call("reset", {"seed": 7})
session = out["session"]
blob = base64.b64decode(out["observation"]["standoff"])
w = int.from_bytes(blob[0:4], "little")
h = int.from_bytes(blob[4:8], "little")
img = np.frombuffer(blob, np.uint8, offset=8).reshape(h, w, 3) / 255.0
print(f"session {session}: decoded a {h}x{w} normal image, "
      f"mean channel values {img.mean(axis=(0, 1)).round(3)}")

done = False
steps = 0
while not done:
    out = call("step", {"action": [0.0, -0.3, 0.2, -1.0]}, session)
    steps += 1
    done = out["done"]
    if steps >= 3:
        break
print(f"stepped {steps} times, last reward {out['reward']:+.4f}")

# finish the episode so it lands in the server's replay buffer
while not done:
    done = call("step", {"action": [0, 0, 0, -1]}, session)["done"]
sample = call("sample", {"batch_size": 2, "sequence_length": 4, "seed": 1})
shape = sample["standoff"]["shape"]
print(f"sampled a batch over the wire: standoff tensor {shape}, "
      f"zoom draw x{sample['augmentation']['zoom']:.3f}")

print("close:", call("close", session=session))
sock.close()
server.shutdown()
server.server_close()
