"""Operational entry points: serve, robot, keygen, client.

Configuration precedence is flag over config file over built-in default; the
config file is JSON with keys named like the long flags (underscored). The
file may be passed with --config or the SENTINEL_CONFIG environment variable.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import os
import signal
import sys
from pathlib import Path

from sentinel.agent import AgentConfig, AgentCore, FireConfig, RobotAgent
from sentinel.jsonlog import setup_logging
from sentinel.secure import (
    generate_keypair,
    load_private_key_file,
    load_public_key_file,
    save_private_key_file,
    save_public_key_file,
)
from sentinel.server import ControlServer, ServerConfig
from sentinel.vision import DetectorConfig
from sentinel.world import ScenarioError, load_scenario

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _parse_addr(value: str, default_host: str = "0.0.0.0") -> tuple[str, int]:
    value = value.strip()
    host, sep, port = value.rpartition(":")
    if not sep:
        host, port = "", value
    if not host:
        host = default_host
    try:
        return host, int(port)
    except ValueError:
        raise UsageError(f"bad address {value!r}, expected HOST:PORT or :PORT")


def _load_config_file(explicit: str | None) -> dict:
    path = explicit or os.environ.get("SENTINEL_CONFIG")
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}")
    except ValueError as exc:
        raise UsageError(f"config file is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise UsageError("config file root must be a JSON object")
    return doc


def _resolve(args: argparse.Namespace, cfg: dict, name: str, default):
    """Flag beats file beats default."""
    flag = getattr(args, name, None)
    if flag is not None:
        return flag
    if name in cfg:
        return cfg[name]
    return default


def cmd_keygen(args: argparse.Namespace) -> int:
    out = Path(args.out)
    key_path = out.with_suffix(".key")
    pub_path = out.with_suffix(".pub")
    for path in (key_path, pub_path):
        if path.exists() and not args.force:
            raise UsageError(f"{path} exists; pass --force to overwrite")
    identity = generate_keypair()
    out.parent.mkdir(parents=True, exist_ok=True)
    save_private_key_file(key_path, identity)
    save_public_key_file(pub_path, identity.public_bytes())
    print(identity.public_bytes().hex())
    log.info("wrote %s and %s (robot id %s)", key_path, pub_path, identity.identity_id.hex())
    return EXIT_OK


async def _run_until_signal(coro_factory, stop_cb) -> None:
    loop = asyncio.get_running_loop()
    stop = asyncio.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        try:
            loop.add_signal_handler(sig, stop.set)
        except NotImplementedError:
            pass
    task = asyncio.create_task(coro_factory())
    stopper = asyncio.create_task(stop.wait())
    done, _ = await asyncio.wait({task, stopper}, return_when=asyncio.FIRST_COMPLETED)
    if task in done:
        stopper.cancel()
        task.result()
        return
    await stop_cb()
    task.cancel()
    try:
        await task
    except asyncio.CancelledError:
        pass


def cmd_serve(args: argparse.Namespace) -> int:
    cfg = _load_config_file(args.config)
    http_host, http_port = _parse_addr(str(_resolve(args, cfg, "http", "0.0.0.0:8080")))
    robot_host, robot_port = _parse_addr(str(_resolve(args, cfg, "robots", "0.0.0.0:7700")))
    data_dir = Path(_resolve(args, cfg, "data_dir", "sentinel-data"))
    key_path = _resolve(args, cfg, "key", None)
    allowlist_path = _resolve(args, cfg, "allowlist", None)
    static_dir = _resolve(args, cfg, "static_dir", None)
    token_ttl = float(_resolve(args, cfg, "token_ttl", 24 * 3600))

    if key_path is None:
        raise UsageError("serve requires --key (server identity private key file)")
    try:
        identity = load_private_key_file(key_path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load server key: {exc}")
    allowlist = []
    if allowlist_path:
        try:
            allowlist = load_public_key_file(allowlist_path)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot load allowlist: {exc}")
    if static_dir and not Path(static_dir).is_dir():
        raise UsageError(f"static dir {static_dir} does not exist")

    server = ControlServer(
        ServerConfig(
            robot_host=robot_host,
            robot_port=robot_port,
            http_host=http_host,
            http_port=http_port,
            data_dir=data_dir,
            token_ttl_seconds=token_ttl,
            static_dir=static_dir,
        ),
        identity,
        allowlist,
    )

    async def _serve():
        await server.start()
        print(
            json.dumps(
                {"robot_port": server.robot_port, "http_port": server.http_port}
            ),
            flush=True,
        )
        while True:
            await asyncio.sleep(3600)

    try:
        asyncio.run(_run_until_signal(_serve, server.stop))
    except OSError as exc:
        log.error("cannot bind listeners: %s", exc)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_robot(args: argparse.Namespace) -> int:
    cfg = _load_config_file(args.config)
    scenario_path = _resolve(args, cfg, "scenario", None)
    server_addr = _resolve(args, cfg, "server", None)
    key_path = _resolve(args, cfg, "key", None)
    server_pub_path = _resolve(args, cfg, "server_pub", None)
    if not scenario_path or not server_addr or not key_path or not server_pub_path:
        raise UsageError("robot requires --scenario, --server, --key and --server-pub")

    try:
        world, pose = load_scenario(Path(scenario_path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read scenario: {exc}")
    except ScenarioError as exc:
        raise UsageError(f"scenario invalid: {exc}")
    try:
        identity = load_private_key_file(key_path)
        server_pubs = load_public_key_file(server_pub_path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load keys: {exc}")
    if len(server_pubs) != 1:
        raise UsageError("--server-pub file must hold exactly one key")

    try:
        detector_cfg = DetectorConfig(
            pixel_threshold=int(_resolve(args, cfg, "pixel_threshold", 25)),
            area_fraction=float(_resolve(args, cfg, "area_fraction", 0.01)),
            learning_rate=float(_resolve(args, cfg, "learning_rate", 0.05)),
            warmup_frames=int(_resolve(args, cfg, "warmup_frames", 5)),
            pre_roll=int(_resolve(args, cfg, "pre_roll", 10)),
            post_roll=int(_resolve(args, cfg, "post_roll", 10)),
        )
        fire_cfg = FireConfig(
            smoke_threshold_ppm=float(_resolve(args, cfg, "smoke_threshold", 300.0)),
            temperature_threshold_c=float(_resolve(args, cfg, "temp_threshold", 57.0)),
            debounce_ticks=int(_resolve(args, cfg, "debounce_ticks", 3)),
        )
        agent_cfg = AgentConfig(
            tick_rate=float(_resolve(args, cfg, "tick_rate", 10.0)),
            backoff_base=float(_resolve(args, cfg, "backoff_base", 0.5)),
            backoff_cap=float(_resolve(args, cfg, "backoff_cap", 30.0)),
        )
    except ValueError as exc:
        raise UsageError(f"bad configuration value: {exc}")

    data_dir = Path(_resolve(args, cfg, "data_dir", "robot-data"))
    data_dir.mkdir(parents=True, exist_ok=True)
    journal_path = Path(
        _resolve(args, cfg, "journal", data_dir / f"{identity.identity_id.hex()}.journal")
    )

    core = AgentCore(world, pose, detector_cfg, fire_cfg, tick_ms=agent_cfg.tick_ms)
    agent = RobotAgent(
        core,
        identity,
        _parse_addr(str(server_addr), default_host="127.0.0.1"),
        server_pubs[0],
        journal_path,
        agent_cfg,
    )

    async def _noop_stop():
        pass

    asyncio.run(_run_until_signal(lambda: agent.run(), _noop_stop))
    return EXIT_OK


def cmd_client(args: argparse.Namespace) -> int:
    from sentinel.client import run_script

    if args.script == "-":
        text = sys.stdin.read()
    else:
        try:
            text = Path(args.script).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read script: {exc}")
    try:
        script = json.loads(text)
    except ValueError as exc:
        raise UsageError(f"script is not valid JSON: {exc}")
    if not isinstance(script, list):
        raise UsageError("script must be a JSON array of operations")

    transcript, ok = asyncio.run(run_script(args.server, script))
    print(json.dumps(transcript, indent=2))
    return EXIT_OK if ok else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sentinel", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="run the control server")
    p_serve.add_argument("--config", help="JSON config file (or SENTINEL_CONFIG)")
    p_serve.add_argument("--http", help="HTTP listener, HOST:PORT (default 0.0.0.0:8080)")
    p_serve.add_argument("--robots", help="robot listener, HOST:PORT (default 0.0.0.0:7700)")
    p_serve.add_argument("--key", help="server identity private key file")
    p_serve.add_argument("--allowlist", help="file of allowed robot public keys, one hex per line")
    p_serve.add_argument("--data-dir", dest="data_dir", help="persistence directory")
    p_serve.add_argument("--static-dir", dest="static_dir", help="operator UI assets to serve at /")
    p_serve.add_argument("--token-ttl", dest="token_ttl", type=float, help="login token lifetime seconds")
    p_serve.set_defaults(func=cmd_serve)

    p_robot = sub.add_parser("robot", help="run a simulated robot against a scenario")
    p_robot.add_argument("--config", help="JSON config file (or SENTINEL_CONFIG)")
    p_robot.add_argument("--scenario", help="scenario JSON file")
    p_robot.add_argument("--server", help="control server robot address HOST:PORT")
    p_robot.add_argument("--key", help="robot identity private key file")
    p_robot.add_argument("--server-pub", dest="server_pub", help="pinned server public key file")
    p_robot.add_argument("--journal", help="backup journal path")
    p_robot.add_argument("--data-dir", dest="data_dir", help="robot state directory")
    p_robot.add_argument("--tick-rate", dest="tick_rate", type=float, help="ticks per second (default 10)")
    p_robot.add_argument("--pixel-threshold", dest="pixel_threshold", type=int)
    p_robot.add_argument("--area-fraction", dest="area_fraction", type=float)
    p_robot.add_argument("--learning-rate", dest="learning_rate", type=float)
    p_robot.add_argument("--warmup-frames", dest="warmup_frames", type=int)
    p_robot.add_argument("--pre-roll", dest="pre_roll", type=int)
    p_robot.add_argument("--post-roll", dest="post_roll", type=int)
    p_robot.add_argument("--smoke-threshold", dest="smoke_threshold", type=float)
    p_robot.add_argument("--temp-threshold", dest="temp_threshold", type=float)
    p_robot.add_argument("--debounce-ticks", dest="debounce_ticks", type=int)
    p_robot.add_argument("--backoff-base", dest="backoff_base", type=float)
    p_robot.add_argument("--backoff-cap", dest="backoff_cap", type=float)
    p_robot.set_defaults(func=cmd_robot)

    p_keygen = sub.add_parser("keygen", help="generate an identity keypair")
    p_keygen.add_argument("--out", required=True, help="output path prefix (.key/.pub appended)")
    p_keygen.add_argument("--force", action="store_true", help="overwrite existing files")
    p_keygen.set_defaults(func=cmd_keygen)

    p_client = sub.add_parser("client", help="run a scripted sequence of API calls")
    p_client.add_argument("--server", required=True, help="server base URL, e.g. http://127.0.0.1:8080")
    p_client.add_argument("--script", required=True, help="JSON script file, or - for stdin")
    p_client.set_defaults(func=cmd_client)

    return parser


def main(argv: list[str] | None = None) -> int:
    setup_logging(os.environ.get("SENTINEL_LOG"))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_OK
    except Exception as exc:  # operational failure, not a usage problem
        log.exception("fatal: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
