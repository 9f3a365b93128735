"""Command-line tools: serve, collect-demos, evaluate, render, bench-physics."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import cloth as cl
from .config import (
    AppConfig,
    env_config_from_dict,
    env_config_hash,
    load_config,
    write_default_config,
)
from .env import ClothUnfoldEnv
from .episodes import load_episode
from .evaluate import evaluate_expert, evaluate_remote, evaluate_replay, write_report
from .expert import collect_demonstrations
from .normals import encode_normal_dump
from .render import encode_depth_dump


def _parse_bind(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host:
        raise argparse.ArgumentTypeError("bind address must be HOST:PORT")
    return host, int(port)


def _load_app_config(path: str | None) -> AppConfig:
    return load_config(path) if path else AppConfig()


def cmd_serve(args) -> int:
    from .service import UnfoldServer

    app = _load_app_config(args.config)
    address = _parse_bind(args.bind) if args.bind else None
    server = UnfoldServer(app, address=address)
    host, port = server.bound_address
    print(f"listening on {host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_collect_demos(args) -> int:
    app = _load_app_config(args.config)
    env = ClothUnfoldEnv(app.env)

    def progress(i, summary):
        print(
            f"episode {i}: {summary['category']} "
            f"max_unfold={summary['max_a_norm']:.3f} steps={summary['steps']}",
            flush=True,
        )

    paths, summaries = collect_demonstrations(
        args.n, args.seed, args.out, env=env, progress=progress
    )
    n_success = sum(1 for s in summaries if s["category"] == "success")
    print(f"wrote {len(paths)} episodes to {args.out} ({n_success} successes)")
    return 0


def cmd_evaluate(args) -> int:
    app = _load_app_config(args.config)

    def progress(i, summary):
        print(f"episode {i}: {summary.get('category', 'invalid')}", flush=True)

    if args.agent == "expert":
        report = evaluate_expert(args.n, args.seed, app, progress=progress)
    elif args.agent == "replay":
        if not args.episodes:
            print("--episodes DIR is required for replay evaluation", file=sys.stderr)
            return 2
        paths = sorted(Path(args.episodes).glob("*.zip"))
        if not paths:
            print(f"no episode files in {args.episodes}", file=sys.stderr)
            return 2
        report = evaluate_replay(paths[: args.n] if args.n else paths, app,
                                 progress=progress)
    else:  # remote
        address = _parse_bind(args.bind) if args.bind else None
        report = evaluate_remote(
            args.n,
            args.seed,
            app,
            address=address,
            on_listening=lambda a: print(f"listening on {a[0]}:{a[1]}", flush=True),
        )
    write_report(report, args.report)
    agg = report["aggregate"]
    print(
        f"fail/near/success: {agg['failure_pct']:.1f} / "
        f"{agg['near_success_pct']:.1f} / {agg['success_pct']:.1f} "
        f"(mean normalized return {agg['mean_normalized_return']:.3f})"
    )
    print(f"report written to {args.report}")
    return 0


def cmd_render(args) -> int:
    record = load_episode(args.episode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    env_cfg = env_config_from_dict(record.manifest["config"])
    if env_config_hash(env_cfg) != record.manifest["config_hash"]:
        print("episode manifest hash disagrees with its config", file=sys.stderr)
        return 2
    env = ClothUnfoldEnv(env_cfg)
    env.reset(int(record.manifest["seed"]))

    index = {"episode": str(args.episode), "n_steps": record.n_steps, "files": []}
    for k, action in enumerate(record.actions):
        result = env.step(action)
        d_stand, d_wrist = env.render_depth_pair()
        files = {
            f"step_{k:04d}_standoff.depth": encode_depth_dump(d_stand),
            f"step_{k:04d}_wrist.depth": encode_depth_dump(d_wrist),
            f"step_{k:04d}_standoff.normals": encode_normal_dump(
                np.asarray(result.observation.standoff_normals)
            ),
            f"step_{k:04d}_wrist.normals": encode_normal_dump(
                np.asarray(result.observation.wrist_normals)
            ),
        }
        for name, blob in files.items():
            (out / name).write_bytes(blob)
            index["files"].append(name)
        if result.done:
            break
    (out / "index.json").write_text(json.dumps(index, indent=1))
    print(f"wrote {len(index['files'])} dumps + index.json to {out}")
    return 0


def cmd_bench_physics(args) -> int:
    app = _load_app_config(args.config)
    cfg = app.env
    mesh = cl.init_cloth((0.3, 0.3), cfg.resolution)
    cl.pin_corner(mesh, cl.Corner.NW)
    cons = cl.build_constraints(mesh)
    for _ in range(20):  # warm the JIT before timing
        cl.step_sim(mesh, cons, None, cfg.sim)
    t0 = time.perf_counter()
    for _ in range(args.steps):
        cl.step_sim(mesh, cons, None, cfg.sim)
    dt = time.perf_counter() - t0
    from .cloth import stretch_violation

    print(
        f"{args.steps} steps on {cfg.resolution[0]}x{cfg.resolution[1]} grid: "
        f"{dt:.3f} s ({args.steps / dt:.0f} steps/s), "
        f"max stretch violation {stretch_violation(mesh, cons):.4f}"
    )
    return 0


def cmd_write_config(args) -> int:
    write_default_config(args.out)
    print(f"wrote default config to {args.out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="unfoldsim",
        description="Deterministic in-air cloth unfolding simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the protocol server")
    p.add_argument("--bind", default=None, help="HOST:PORT (default from config)")
    p.add_argument("--config", default=None)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("collect-demos", help="record expert demonstration episodes")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(fn=cmd_collect_demos)

    p = sub.add_parser("evaluate", help="run seeded evaluation episodes")
    p.add_argument("--agent", choices=("expert", "remote", "replay"), required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--episodes", default=None, help="episode dir for --agent replay")
    p.add_argument("--bind", default=None, help="HOST:PORT for --agent remote")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("render", help="re-render an episode into image dumps")
    p.add_argument("--episode", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("bench-physics", help="time raw physics stepping")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--config", default=None)
    p.set_defaults(fn=cmd_bench_physics)

    p = sub.add_parser("write-config", help="write the documented default config")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_write_config)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
