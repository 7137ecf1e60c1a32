"""Measurement harness: push a workload through one store configuration and
record throughput, wire bytes, similarity and pipeline counters per run."""

from __future__ import annotations

import csv
import json
import logging
import statistics
import time
import uuid
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Union

from ..accelerant import InstantOracleBackend, Pipeline, PipelineConfig, make_backend
from ..accelerant.kernels import warm_up
from ..castore import ContentStore, InlineHasher, NodeAddress, PipelineHasher
from ..chunker import ChunkingPolicy, MiB
from ..errors import ChunkforgeError, ConfigError
from ..netstore import Dispatcher, LoopbackTransport, ManagerClient, MetadataManager, NodeClient, StorageNode
from .workloads import WorkloadSpec, iter_files

log = logging.getLogger(__name__)

NON_CA = "non_CA"
CA_CPU = "CA_CPU"
CA_ACCEL = "CA_ACCEL"
CA_INFINITE = "CA_Infinite"
MODES = (NON_CA, CA_CPU, CA_ACCEL, CA_INFINITE)
MODE_ALIASES = {"nonca": NON_CA, "cacpu": CA_CPU, "caaccel": CA_ACCEL, "cainf": CA_INFINITE}


def parse_mode(text: str) -> str:
    if text in MODES:
        return text
    try:
        return MODE_ALIASES[text.lower()]
    except KeyError:
        raise ConfigError(f"unknown mode {text!r}; choose from {sorted(MODE_ALIASES)}") from None


@dataclass
class SystemConfig:
    mode: str = CA_ACCEL
    policy: ChunkingPolicy = field(default_factory=ChunkingPolicy.large_blocks)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    stripe_width: int = 4
    node_count: int = 4
    buffer_size: int = 4 * MiB
    manager: Optional[NodeAddress] = None  # socket mode when set

    def __post_init__(self):
        self.mode = parse_mode(self.mode)
        if not 1 <= self.stripe_width <= self.node_count:
            raise ConfigError("stripe width must be in 1..node_count")

    def policy_label(self) -> str:
        p = self.policy
        if self.mode == NON_CA and not p.is_fixed:
            # the store cuts at fixed offsets when nothing is hashed
            return f"fixed-{p.largest_chunk}"
        if p.is_fixed:
            return f"fixed-{p.fixed_size}"
        w = p.window
        return f"cdc-w{w.window}-b{w.boundary_bits}-s{w.stride}-{p.min_chunk}-{p.max_chunk}"


@dataclass
class WriteRecord:
    run: int
    index: int
    file_id: str
    bytes: int
    seconds: float
    data_bytes: int
    metadata_bytes: int
    total_blocks: int
    matched_blocks: int
    matched_bytes: int
    similarity_ratio: float


@dataclass
class RunRecord:
    run: int
    mode: str
    policy: str
    workload: str
    status: str
    files: int
    bytes_written: int
    seconds: float
    write_seconds: float
    commit_seconds: float
    throughput_bps: float
    data_bytes: int
    metadata_bytes: int
    matched_bytes: int
    similarity_ratio: float
    uploaded_blocks: int
    tasks: int
    allocations_total: int
    pool_hits: int
    oracle_misses: int


RUN_COLUMNS = [f.name for f in fields(RunRecord)]
WRITE_COLUMNS = [f.name for f in fields(WriteRecord)]
SUMMARY_COLUMNS = [
    "mode",
    "policy",
    "workload",
    "runs",
    "aborted",
    "mean_throughput_bps",
    "stdev_throughput_bps",
    "mean_seconds",
    "mean_data_bytes",
    "mean_metadata_bytes",
    "mean_similarity_ratio",
    "mean_allocations_total",
    "mean_pool_hits",
]


@dataclass
class BenchReport:
    workload: WorkloadSpec
    config: SystemConfig
    runs: list[RunRecord] = field(default_factory=list)
    writes: list[WriteRecord] = field(default_factory=list)
    stage_seconds: dict = field(default_factory=dict)

    def ok_runs(self) -> list[RunRecord]:
        return [r for r in self.runs if r.status == "ok"]

    @property
    def mean_throughput(self) -> float:
        ok = self.ok_runs()
        return statistics.fmean(r.throughput_bps for r in ok) if ok else 0.0

    def summary(self) -> dict:
        ok = self.ok_runs()

        def mean(attr):
            return statistics.fmean(getattr(r, attr) for r in ok) if ok else 0.0

        return {
            "mode": self.config.mode,
            "policy": self.config.policy_label(),
            "workload": self.workload.kind,
            "runs": len(ok),
            "aborted": len(self.runs) - len(ok),
            "mean_throughput_bps": mean("throughput_bps"),
            "stdev_throughput_bps": statistics.stdev(r.throughput_bps for r in ok) if len(ok) > 1 else 0.0,
            "mean_seconds": mean("seconds"),
            "mean_data_bytes": mean("data_bytes"),
            "mean_metadata_bytes": mean("metadata_bytes"),
            "mean_similarity_ratio": mean("similarity_ratio"),
            "mean_allocations_total": mean("allocations_total"),
            "mean_pool_hits": mean("pool_hits"),
        }

    def writes_for(self, run: int) -> list[WriteRecord]:
        return [w for w in self.writes if w.run == run]


class _Deployment:
    """Manager and node clients for one run, with their wire counters."""

    def __init__(self, config: SystemConfig, params, run_tag: str):
        self.prefix = ""
        self.nodes = []
        if config.manager is None:
            self.manager = ManagerClient(LoopbackTransport(Dispatcher(manager=MetadataManager())))
            for i in range(config.node_count):
                addr = NodeAddress("loopback", i)
                node = StorageNode(addr, params=params)
                self.nodes.append(NodeClient(LoopbackTransport(Dispatcher(node=node)), addr))
        else:
            # shared long-lived services: keep runs apart by file namespace
            self.prefix = f"bench-{run_tag}/"
            self.manager = ManagerClient.connect(config.manager)
            addrs = self.manager.list_nodes()
            if len(addrs) < config.stripe_width:
                self.close()
                raise ConfigError(f"manager lists {len(addrs)} nodes, stripe width needs {config.stripe_width}")
            self.nodes = [NodeClient.connect(a) for a in addrs]

    def data_bytes(self) -> int:
        return sum(n.counter.data_bytes for n in self.nodes)

    def metadata_bytes(self) -> int:
        return sum(n.counter.metadata_bytes for n in self.nodes) + self.manager.counter.metadata_bytes

    def close(self) -> None:
        self.manager.close()
        for n in self.nodes:
            n.close()


def _run_once(
    spec: WorkloadSpec,
    config: SystemConfig,
    run: int,
    backend=None,
    report: Optional[BenchReport] = None,
) -> Optional[RunRecord]:
    params = config.policy.segment
    deploy = _Deployment(config, params, uuid.uuid4().hex[:12])
    pipeline = None
    try:
        if config.mode == NON_CA:
            hasher = None
        elif config.mode == CA_CPU:
            hasher = InlineHasher()
        else:
            pcfg = config.pipeline
            if config.mode == CA_ACCEL and pcfg.backend == "instant":
                pcfg = replace(pcfg, backend="cpu_parallel")
            pipeline = Pipeline(pcfg, backend=backend).start()
            hasher = PipelineHasher(pipeline)
        store = ContentStore(
            deploy.manager, deploy.nodes, hasher=hasher, stripe_width=config.stripe_width, buffer_size=config.buffer_size
        )
        misses0 = backend.misses if isinstance(backend, InstantOracleBackend) else 0
        total = write_s = commit_s = 0.0
        nbytes = matched = uploaded = files = 0
        rows = []
        for index, (fid, data) in enumerate(zip(spec.file_ids(), iter_files(spec))):
            d0, m0 = deploy.data_bytes(), deploy.metadata_bytes()
            t0 = time.perf_counter()
            session = store.begin_write(deploy.prefix + fid, config.policy)
            session.write(data)
            t1 = time.perf_counter()
            result = session.commit()
            t2 = time.perf_counter()
            write_s += t1 - t0
            commit_s += t2 - t1
            total += t2 - t0
            nbytes += len(data)
            matched += result.report.matched_bytes
            uploaded += result.uploaded_blocks
            files += 1
            rows.append(
                WriteRecord(
                    run, index, fid, len(data), t2 - t0,
                    deploy.data_bytes() - d0, deploy.metadata_bytes() - m0,
                    result.report.total_blocks, result.report.matched_blocks,
                    result.report.matched_bytes, result.report.similarity_ratio,
                )
            )
        stats = pipeline.stats() if pipeline is not None else None
        rec = RunRecord(
            run=run,
            mode=config.mode,
            policy=config.policy_label(),
            workload=spec.kind,
            status="ok",
            files=files,
            bytes_written=nbytes,
            seconds=total,
            write_seconds=write_s,
            commit_seconds=commit_s,
            throughput_bps=nbytes / total if total > 0 else 0.0,
            data_bytes=deploy.data_bytes(),
            metadata_bytes=deploy.metadata_bytes(),
            matched_bytes=matched,
            similarity_ratio=matched / nbytes if nbytes else 0.0,
            uploaded_blocks=uploaded,
            tasks=stats.total_tasks if stats else 0,
            allocations_total=stats.allocations_total if stats else 0,
            pool_hits=stats.pool_hits if stats else 0,
            oracle_misses=(backend.misses - misses0) if isinstance(backend, InstantOracleBackend) else 0,
        )
        if report is not None:
            report.writes.extend(rows)
            if stats is not None:
                for k, v in stats.stage_seconds.items():
                    report.stage_seconds[k] = report.stage_seconds.get(k, 0.0) + v
        return rec
    finally:
        if pipeline is not None:
            pipeline.close()
        deploy.close()


def run_bench(spec: WorkloadSpec, config: SystemConfig, repetitions: int = 10) -> BenchReport:
    """Run the workload ``repetitions`` times; failed runs are kept but flagged."""
    if repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    report = BenchReport(spec, config)
    backend = None
    if config.mode in (CA_ACCEL, CA_INFINITE):
        warm_up()
    if config.mode == CA_INFINITE:
        backend = make_backend("instant")
        # untimed pass so every hash the timed runs ask for is already known
        _run_once(spec, config, -1, backend)
    for run in range(repetitions):
        try:
            rec = _run_once(spec, config, run, backend, report)
        except (ChunkforgeError, OSError) as exc:
            log.warning("run %d aborted: %s", run, exc)
            rec = RunRecord(run, config.mode, config.policy_label(), spec.kind, "aborted",
                            0, 0, 0.0, 0.0, 0.0, 0.0, 0, 0, 0, 0.0, 0, 0, 0, 0, 0)
        report.runs.append(rec)
    return report


def write_report(report: BenchReport, out: Union[str, Path], fmt: str = "csv") -> list[Path]:
    """Write per-run rows, per-write rows and the summary under ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out / "report.json"
        doc = {
            "summary": report.summary(),
            "runs": [asdict(r) for r in report.runs],
            "writes": [asdict(w) for w in report.writes],
            "stage_seconds": report.stage_seconds,
        }
        path.write_text(json.dumps(doc, indent=2))
        return [path]
    if fmt != "csv":
        raise ConfigError(f"unknown report format {fmt!r}")
    written = []
    for name, columns, rows in (
        ("runs.csv", RUN_COLUMNS, [asdict(r) for r in report.runs]),
        ("writes.csv", WRITE_COLUMNS, [asdict(w) for w in report.writes]),
        ("summary.csv", SUMMARY_COLUMNS, [report.summary()]),
    ):
        path = out / name
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=columns)
            w.writeheader()
            w.writerows(rows)
        written.append(path)
    return written


def read_runs(path: Union[str, Path]) -> list[RunRecord]:
    """Parse a runs.csv back into records."""
    types = {f.name: f.type for f in fields(RunRecord)}
    conv = {"int": int, "float": float, "str": str}
    with open(path, newline="") as fh:
        return [RunRecord(**{k: conv[types[k]](v) for k, v in row.items()}) for row in csv.DictReader(fh)]
