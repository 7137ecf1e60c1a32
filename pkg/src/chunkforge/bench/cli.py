"""``chunkforge`` command line: run the services, put/get files, benchmark.

Every long flag can also come from the environment as ``CHUNKFORGE_<FLAG>``
(upper case, dashes as underscores), e.g. ``CHUNKFORGE_BLOCK_SIZE=4M``.
Command-line values win over the environment.
"""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
from pathlib import Path
from typing import Optional

from ..accelerant import Pipeline, PipelineConfig, load_config
from ..castore import ContentStore, InlineHasher, NodeAddress, PipelineHasher
from ..chunker import ChunkingPolicy
from ..errors import ChunkforgeError, ConfigError
from ..netstore import ManagerClient, NodeClient, manager_server, node_server
from .harness import CA_ACCEL, CA_CPU, CA_INFINITE, NON_CA, SystemConfig, parse_mode, run_bench, write_report
from .workloads import KINDS, WorkloadSpec

ENV_PREFIX = "CHUNKFORGE_"
log = logging.getLogger("chunkforge")

_SIZE = re.compile(r"^\s*(\d+)\s*([kmg]?)i?b?\s*$", re.I)


def parse_size(text: str) -> int:
    """``4096``, ``64K``, ``4M``, ``1GiB`` -> bytes (binary multiples)."""
    m = _SIZE.match(str(text))
    if not m:
        raise argparse.ArgumentTypeError(f"not a size: {text!r}")
    return int(m.group(1)) * 1024 ** " kmg".index((m.group(2) or " ").lower())


def on_off(text: str) -> bool:
    v = text.lower()
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def address(text: str) -> NodeAddress:
    try:
        return NodeAddress.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _policy_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("chunking")
    g.add_argument("--policy", choices=("fixed", "cdc"), default="cdc")
    g.add_argument("--block-size", type=parse_size, default="1M", help="fixed policy block size")
    g.add_argument("--window", type=int, default=48)
    g.add_argument("--boundary-bits", type=int, default=14)
    g.add_argument("--boundary-target", type=int, default=0)
    g.add_argument("--stride", type=int, default=64)
    g.add_argument("--min-chunk", type=parse_size, default="256K")
    g.add_argument("--max-chunk", type=parse_size, default="4M")


def _mode_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("hashing")
    g.add_argument("--mode", type=parse_mode, default=CA_ACCEL, help="nonca | cacpu | caaccel | cainf")
    g.add_argument("--devices", type=int)
    g.add_argument("--workers", type=int)
    g.add_argument("--overlap", type=on_off)
    g.add_argument("--reuse", type=on_off)
    g.add_argument("--batch", type=parse_size, default="4M", help="write buffer handed to the pipeline per batch")
    g.add_argument("--config", type=Path, help="pipeline key=value file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chunkforge", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve-manager", help="run the metadata manager")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7400)

    p = sub.add_parser("serve-node", help="run a storage node and register it")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--manager", type=address, required=True)
    p.add_argument("--data-dir", type=Path)
    p.add_argument("--capacity", type=parse_size)

    p = sub.add_parser("put", help="write a local file into the store")
    p.add_argument("file_id")
    p.add_argument("path", type=Path)
    p.add_argument("--manager", type=address, required=True)
    p.add_argument("--stripe", type=int, default=4)
    _policy_flags(p)
    _mode_flags(p)

    p = sub.add_parser("get", help="read a file back out of the store")
    p.add_argument("file_id")
    p.add_argument("-o", "--output", type=Path, help="default: stdout")
    p.add_argument("--manager", type=address, required=True)

    p = sub.add_parser("bench", help="run a benchmark workload")
    p.add_argument("--workload", choices=KINDS, default="similar")
    p.add_argument("--file-size", type=parse_size, default="16M")
    p.add_argument("--files", type=int, default=10)
    p.add_argument("--mutation-rate", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--stripe", type=int, default=4)
    p.add_argument("--nodes", type=int, default=4, help="in-process node count")
    p.add_argument("--manager", type=address, help="use running services instead of in-process ones")
    p.add_argument("--out", type=Path, default=Path("bench-out"))
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    _policy_flags(p)
    _mode_flags(p)
    return parser


def _apply_env(parser: argparse.ArgumentParser, environ) -> None:
    """Turn CHUNKFORGE_* variables into parser defaults."""
    parsers = [parser]
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            parsers += list(action.choices.values())
    for p in parsers:
        for action in p._actions:
            longs = [s for s in action.option_strings if s.startswith("--")]
            if not longs or action.dest == "help":
                continue
            key = ENV_PREFIX + longs[0][2:].upper().replace("-", "_")
            if key in environ:
                value = environ[key]
                if action.type is not None:
                    try:
                        value = action.type(value)
                    except (argparse.ArgumentTypeError, ValueError, ConfigError) as exc:
                        parser.error(f"{key}: {exc}")
                p.set_defaults(**{action.dest: value})


def policy_from_args(args) -> ChunkingPolicy:
    if args.policy == "fixed":
        return ChunkingPolicy.fixed(args.block_size)
    return ChunkingPolicy.content_defined(
        window=args.window,
        boundary_bits=args.boundary_bits,
        boundary_target=args.boundary_target,
        stride=args.stride,
        min_chunk=args.min_chunk,
        max_chunk=args.max_chunk,
    )


def pipeline_from_args(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    changes = {k: getattr(args, k) for k in ("devices", "workers", "overlap", "reuse") if getattr(args, k) is not None}
    if args.mode == CA_INFINITE:
        changes["backend"] = "instant"
    if changes:
        cfg = PipelineConfig(**{**cfg.__dict__, **changes})
    cfg.max_buffer = max(cfg.max_buffer, 2 * args.batch + args.max_chunk)
    return cfg


def _serve(server, label: str) -> int:
    log.info("%s listening on %s", label, server.address)
    print(f"{label} listening on {server.address}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_serve_manager(args) -> int:
    return _serve(manager_server(args.host, args.port), "manager")


def cmd_serve_node(args) -> int:
    server = node_server(args.host, args.port, data_dir=args.data_dir, capacity=args.capacity)
    mc = ManagerClient.connect(args.manager)
    mc.register_node(server.address)
    mc.close()
    return _serve(server, "node")


def _connect(manager: NodeAddress):
    mc = ManagerClient.connect(manager)
    nodes = [NodeClient.connect(a) for a in mc.list_nodes()]
    if not nodes:
        raise ConfigError(f"manager {manager} has no registered storage nodes")
    return mc, nodes


def cmd_put(args) -> int:
    mc, nodes = _connect(args.manager)
    policy = policy_from_args(args)
    pipeline: Optional[Pipeline] = None
    try:
        if args.mode == NON_CA:
            hasher = None
        elif args.mode == CA_CPU:
            hasher = InlineHasher()
        else:
            pipeline = Pipeline(pipeline_from_args(args)).start()
            hasher = PipelineHasher(pipeline)
        store = ContentStore(mc, nodes, hasher=hasher, stripe_width=min(args.stripe, len(nodes)), buffer_size=args.batch)
        session = store.begin_write(args.file_id, policy)
        with open(args.path, "rb") as fh:
            while True:
                buf = fh.read(args.batch)
                if not buf:
                    break
                session.write(buf)
        bm, report = session.commit()
        print(
            f"{args.file_id} v{bm.version}: {bm.size} bytes in {len(bm.blocks)} blocks, "
            f"{report.matched_blocks} matched ({report.similarity_ratio:.1%} similar)"
        )
    finally:
        if pipeline is not None:
            pipeline.close()
        mc.close()
        for n in nodes:
            n.close()
    return 0


def cmd_get(args) -> int:
    mc, nodes = _connect(args.manager)
    try:
        data = ContentStore(mc, nodes, stripe_width=1).read(args.file_id)
    finally:
        mc.close()
        for n in nodes:
            n.close()
    if args.output is None:
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()
    else:
        args.output.write_bytes(data)
    return 0


def cmd_bench(args) -> int:
    spec = WorkloadSpec(
        kind=args.workload,
        file_size=args.file_size,
        file_count=args.files,
        mutation_rate=args.mutation_rate if args.workload == "checkpoint_synthetic" else 0.0,
        seed=args.seed,
    )
    config = SystemConfig(
        mode=args.mode,
        policy=policy_from_args(args),
        pipeline=pipeline_from_args(args),
        stripe_width=args.stripe,
        node_count=args.nodes if args.manager is None else max(args.nodes, args.stripe),
        buffer_size=args.batch,
        manager=args.manager,
    )
    report = run_bench(spec, config, args.runs)
    paths = write_report(report, args.out, args.format)
    s = report.summary()
    print(
        f"{s['mode']} {s['workload']} {s['policy']}: {s['runs']} runs, "
        f"{s['mean_throughput_bps'] / 2**20:.1f} MiB/s mean, similarity {s['mean_similarity_ratio']:.3f}"
    )
    for p in paths:
        print(f"wrote {p}")
    return 0 if s["aborted"] == 0 else 1


COMMANDS = {
    "serve-manager": cmd_serve_manager,
    "serve-node": cmd_serve_node,
    "put": cmd_put,
    "get": cmd_get,
    "bench": cmd_bench,
}


def main(argv=None, environ=None) -> int:
    parser = build_parser()
    _apply_env(parser, os.environ if environ is None else environ)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ChunkforgeError, OSError) as exc:
        print(f"chunkforge: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
