"""Exit criteria, one test each.

Each test attaches a one-line summary with ``record_property("detail", ...)``;
conftest prints a PASS/FAIL line per criterion at the end of the session.
Run just these with ``pytest -m acceptance``.
"""

import random
import time

import numpy as np
import pytest

import oracles
import test_wire
from chunkforge import chunker, hashcore
from chunkforge.accelerant import Pipeline, PipelineConfig, StageCosts, TaskKind
from chunkforge.bench.harness import CA_ACCEL, CA_CPU, CA_INFINITE, SystemConfig, run_bench
from chunkforge.bench.workloads import WorkloadSpec
from chunkforge.castore import ContentStore, PipelineHasher
from chunkforge.castore.blockmap import NO_NODE, BlockMap, BlockRecord, NodeAddress, decode_blockmap, encode_blockmap
from chunkforge.chunker import ChunkingPolicy, KiB, MiB
from chunkforge.errors import IntegrityError
from chunkforge.hashcore import SegmentedHashParams
from chunkforge.netstore import ManagerClient, NodeClient, manager_server, node_server, wire


def detail(record_property, text):
    record_property("detail", text)


@pytest.mark.acceptance("hash construction oracle equivalence")
def test_hash_oracle_equivalence(record_property):
    rng = random.Random(1001)
    t0 = time.perf_counter()
    sizes = [0, 1, MiB] + [rng.randint(0, MiB) for _ in range(997)]
    mismatches = 0
    for n in sizes:
        data = rng.randbytes(n)
        # log-uniform segment size, floored so one input never has more than 16K segments
        lo = max(1, n >> 14)
        seg = max(lo, int(2 ** rng.uniform(0, 20)))
        want = oracles.direct_hash(data, seg)
        got = [hashcore.direct_hash(data, SegmentedHashParams(seg), workers=w).value for w in (1, 2, 8)]
        mismatches += any(g != want for g in got)
    elapsed = time.perf_counter() - t0
    detail(record_property, f"{len(sizes)} inputs, {mismatches} mismatches, {elapsed:.1f}s")
    assert mismatches == 0
    assert elapsed < 120


def _random_policy(rng):
    if rng.random() < 0.1:
        return ChunkingPolicy.fixed(rng.randint(1, 5000))
    w = rng.randint(1, 64)
    mn = rng.randint(1, 2048)
    return ChunkingPolicy.content_defined(
        window=w,
        boundary_bits=rng.randint(0, 12),
        stride=rng.choice([1, 1, 2, 3, 16]),
        min_chunk=mn,
        max_chunk=max(mn, w) + rng.randint(0, 16384),
    )


def _partition(rng, n):
    style = rng.choice(["ones", "small", "mixed", "whole"])
    sizes = []
    total = 0
    while total < n:
        if style == "ones":
            k = 1
        elif style == "small":
            k = rng.randint(1, 64)
        elif style == "mixed":
            k = rng.choice([1, 1, rng.randint(1, 300), rng.randint(1, 20000)])
        else:
            k = n
        sizes.append(k)
        total += k
    return style, sizes


@pytest.mark.acceptance("streaming chunker equivalence")
def test_streaming_equivalence(record_property):
    rng = random.Random(2002)
    t0 = time.perf_counter()
    bad = 0
    styles = {}
    for _ in range(500):
        policy = _random_policy(rng)
        style, _ = _partition(rng, 0)
        n = rng.randint(0, 4000 if style == "ones" else 60_000)
        data = rng.randbytes(n)
        style, sizes = _partition(rng, n)
        styles[style] = styles.get(style, 0) + 1
        c = chunker.Chunker(policy)
        out = []
        pos = 0
        for k in sizes:
            out += c.push(data[pos : pos + k])
            pos += k
        out += c.finish()
        whole = chunker.chunk_whole(data, policy)
        same = out == whole and b"".join(data[x.stream_offset : x.end] for x in out) == data
        bad += not same
    elapsed = time.perf_counter() - t0
    detail(record_property, f"500 trials {sorted(styles.items())}, {bad} differ, {elapsed:.1f}s")
    assert bad == 0
    assert elapsed < 120


@pytest.mark.acceptance("shift resistance")
def test_shift_resistance(record_property):
    rng = random.Random(3003)
    # 2K min, about 8K mean, 64K max: min_chunk well below the mean boundary gap
    cdc = ChunkingPolicy.content_defined(window=48, boundary_bits=13, min_chunk=2 * KiB, max_chunk=64 * KiB)
    fixed = ChunkingPolicy.fixed(4 * KiB)
    worst_cdc = 0
    fixed_ok = 0
    min_chunks = None
    for _ in range(100):
        data = rng.randbytes(320_000)
        old = chunker.chunk_whole(data, cdc)
        min_chunks = len(old) if min_chunks is None else min(min_chunks, len(old))
        pos = rng.randint(1, len(data) - 1)
        edited = data[:pos] + rng.randbytes(rng.randint(1, cdc.min_chunk - 1)) + data[pos:]
        known = {c.digest for c in old}
        changed = sum(c.digest not in known for c in chunker.chunk_whole(edited, cdc))
        worst_cdc = max(worst_cdc, changed)

        f_old = chunker.chunk_whole(data, fixed)
        f_new = chunker.chunk_whole(edited, fixed)
        f_known = {c.digest for c in f_old}
        first = pos // fixed.fixed_size
        prefix_same = [c.digest for c in f_new[:first]] == [c.digest for c in f_old[:first]]
        rest_changed = all(c.digest not in f_known for c in f_new[first:])
        fixed_ok += prefix_same and rest_changed
    detail(
        record_property,
        f"min chunks per file {min_chunks}; worst content-defined change {worst_cdc} digests; "
        f"fixed-size changed every later block in {fixed_ok}/100",
    )
    assert min_chunks >= 20
    assert worst_cdc <= 3
    assert fixed_ok == 100


@pytest.mark.acceptance("dedup direction")
def test_dedup_direction(record_property):
    spec = WorkloadSpec("checkpoint_synthetic", file_size=MiB, file_count=20, mutation_rate=0.01, seed=4004)
    cdc = ChunkingPolicy.content_defined(window=48, boundary_bits=12, min_chunk=2 * KiB, max_chunk=64 * KiB)
    fixed = ChunkingPolicy.fixed(8 * KiB)
    means = {}
    for label, policy in (("content-defined", cdc), ("fixed", fixed)):
        report = run_bench(spec, SystemConfig(CA_ACCEL, policy=policy, buffer_size=MiB), repetitions=1)
        pairs = report.writes_for(0)[1:]
        assert len(pairs) == 19
        means[label] = float(np.mean([w.similarity_ratio for w in pairs]))
    ratio = means["content-defined"] / means["fixed"] if means["fixed"] else float("inf")
    detail(
        record_property,
        f"mean similarity content-defined {means['content-defined']:.3f} vs fixed {means['fixed']:.3f} ({ratio:.1f}x)",
    )
    assert means["content-defined"] > means["fixed"]


@pytest.mark.acceptance("full-dedup wire accounting")
def test_full_dedup_wire_accounting(record_property):
    spec = WorkloadSpec("similar", file_size=32 * MiB, file_count=10, seed=5005)
    report = run_bench(spec, SystemConfig(CA_ACCEL), repetitions=1)
    writes = report.writes_for(0)
    later = [w.data_bytes for w in writes[1:]]
    detail(
        record_property,
        f"write 1 sent {writes[0].data_bytes} block bytes; writes 2-10 sent {later} block bytes, "
        f"{min(w.metadata_bytes for w in writes[1:])}+ metadata bytes each",
    )
    assert writes[0].data_bytes == 32 * MiB
    assert later == [0] * 9
    assert all(w.metadata_bytes > 0 for w in writes[1:])


def _makespan(costs, overlap, n, repeats=3):
    best = None
    with Pipeline(PipelineConfig(backend="reference", costs=costs, overlap=overlap)) as pipe:
        pipe.run(TaskKind.DIRECT_HASH_BATCH, b"x" * 4096, SegmentedHashParams())  # warm the pool
        for _ in range(repeats):
            t0 = time.perf_counter()
            tickets = [pipe.submit(TaskKind.DIRECT_HASH_BATCH, b"x" * 4096, SegmentedHashParams()) for _ in range(n)]
            for t in tickets:
                t.wait()
            took = time.perf_counter() - t0
            best = took if best is None else min(best, took)
    return best


def _model(c, n, overlap):
    """Makespan of n tasks on one device with two slots."""
    if not overlap:
        return n * (c.copy_in + c.compute + c.copy_out)
    return c.copy_in + n * max(c.copy_in, c.compute, c.copy_out) + c.copy_out


@pytest.mark.acceptance("pipeline overlap and batching threshold")
def test_pipeline_overlap(record_property):
    lines = []
    ok = True
    # the stated delays: copy_in = compute = 10 ms, copy_out about zero
    stated = StageCosts(copy_in=0.010, compute=0.010, copy_out=0.0)
    serial, piped = _makespan(stated, False, 10), _makespan(stated, True, 10)
    ratio = serial / piped
    ok &= ratio >= 1.3
    for got, want in ((serial, _model(stated, 10, False)), (piped, _model(stated, 10, True))):
        ok &= abs(got - want) <= 0.10 * want
    lines.append(
        f"copy_out~0: {serial * 1e3:.0f}/{piped * 1e3:.0f} ms (model "
        f"{_model(stated, 10, False) * 1e3:.0f}/{_model(stated, 10, True) * 1e3:.0f}), ratio {ratio:.2f}"
    )
    # three equal 10 ms stages: the configuration whose model gives 300/210
    three = StageCosts(copy_in=0.010, compute=0.010, copy_out=0.010)
    serial3, piped3 = _makespan(three, False, 10), _makespan(three, True, 10)
    ok &= abs(serial3 - 0.300) <= 0.030 and abs(piped3 - 0.210) <= 0.021
    ok &= serial3 / piped3 >= 1.3
    lines.append(f"3x10ms: {serial3 * 1e3:.0f}/{piped3 * 1e3:.0f} ms vs 300/210")
    # batching: copies a quarter of compute, so batch 3 is past the knee
    light = StageCosts(copy_in=0.0025, compute=0.010, copy_out=0.0025)
    tput = {b: b / _makespan(light, True, b) for b in (1, 3, 10)}
    ok &= tput[3] >= 0.9 * tput[10]
    lines.append(f"batch 3 at {tput[3] / tput[10]:.2f} of batch 10 (batch 1 at {tput[1] / tput[10]:.2f})")
    # reported only: with copies as slow as compute the knee moves past 3
    tput3 = {b: b / _makespan(three, True, b, repeats=1) for b in (3, 10)}
    lines.append(f"info: 3x10ms batch 3 at {tput3[3] / tput3[10]:.2f} of batch 10")
    detail(record_property, "; ".join(lines))
    assert ok, lines


@pytest.mark.acceptance("buffer reuse")
def test_buffer_reuse(record_property):
    with Pipeline(PipelineConfig(pool_depth=4)) as pipe:
        payload = bytes(range(256)) * 64
        tickets = [pipe.submit(TaskKind.DIRECT_HASH_BATCH, payload, SegmentedHashParams()) for _ in range(1000)]
        for t in tickets:
            t.wait()
        s = pipe.stats()
    detail(record_property, f"allocations_total {s.allocations_total}, pool_hits {s.pool_hits}, tasks {s.completed}")
    assert s.completed == 1000
    assert s.allocations_total <= 4
    assert s.pool_hits >= 996


def _device_counts(n, m):
    with Pipeline(PipelineConfig(devices=m, backend="reference")) as pipe:
        for t in [pipe.submit(TaskKind.DIRECT_HASH_BATCH, b"abc", SegmentedHashParams()) for _ in range(n)]:
            t.wait()
        return pipe.stats().device_tasks


@pytest.mark.acceptance("round-robin balance")
def test_round_robin_balance(record_property):
    ten_two = _device_counts(10, 2)
    spread = 0
    cases = 0
    for n in (1, 2, 5, 7, 10, 33, 64, 101):
        for m in (1, 2, 3, 4, 8):
            counts = _device_counts(n, m)
            assert sum(counts) == n
            spread = max(spread, max(counts) - min(counts))
            cases += 1
    detail(record_property, f"10 tasks on 2 devices -> {list(ten_two)}; worst spread {spread} over {cases} n/m cases")
    assert tuple(ten_two) == (5, 5)
    assert spread <= 1


@pytest.mark.acceptance("configuration ordering")
def test_configuration_ordering(record_property):
    spec = WorkloadSpec("similar", file_size=16 * MiB, file_count=10, seed=9009)
    means = {}
    for mode in (CA_CPU, CA_ACCEL, CA_INFINITE):
        report = run_bench(spec, SystemConfig(mode), repetitions=10)
        assert len(report.ok_runs()) == 10
        means[mode] = report.mean_throughput
    cpu, accel, inf = means[CA_CPU], means[CA_ACCEL], means[CA_INFINITE]
    detail(
        record_property,
        f"MiB/s over 10 runs: CPU {cpu / MiB:.0f}, ACCEL {accel / MiB:.0f}, Infinite {inf / MiB:.0f}; "
        f"ACCEL at {accel / inf:.0%} of Infinite, CPU at {cpu / inf:.0%}",
    )
    assert inf >= accel >= cpu


def _file_bytes(seed, k):
    rng = np.random.default_rng([seed, k])
    return rng.bytes(int(rng.integers(MiB, 16 * MiB + 1)))


@pytest.mark.acceptance("end-to-end socket integrity")
def test_end_to_end_socket_integrity(record_property, tmp_path):
    notes = []
    for label, policy in (("fixed", ChunkingPolicy.fixed(MiB)), ("content-defined", ChunkingPolicy.large_blocks())):
        root = tmp_path / label
        ms = manager_server().start()
        servers = [node_server(data_dir=root / f"node{i}").start() for i in range(4)]
        mc = ManagerClient.connect(ms.address)
        for s in servers:
            mc.register_node(s.address)
        nodes = [NodeClient.connect(a) for a in mc.list_nodes()]
        by_addr = {s.address: s for s in servers}
        try:
            with Pipeline(PipelineConfig(max_buffer=16 * MiB)) as pipe:
                store = ContentStore(mc, nodes, hasher=PipelineHasher(pipe))
                maps = {}
                for k in range(100):
                    maps[k] = store.write_file(f"f{k:03d}", _file_bytes(7, k), policy).blockmap
            exact = sum(store.read(f"f{k:03d}") == _file_bytes(7, k) for k in range(100))
            rng = random.Random(10010)
            caught = 0
            trials = 20
            for _ in range(trials):
                k = rng.randrange(100)
                rec = rng.choice(maps[k].blocks)
                node = by_addr[maps[k].location(rec)].dispatcher.node
                original = node.block_path(rec.digest).read_bytes()
                flipped = bytearray(original)
                flipped[rng.randrange(len(flipped))] ^= 0xFF
                node.corrupt(rec.digest, bytes(flipped))
                try:
                    store.read(f"f{k:03d}")
                except IntegrityError:
                    caught += 1
                node.corrupt(rec.digest, original)
            blocks = sum(len(m.blocks) for m in maps.values())
            notes.append(f"{label}: {exact}/100 exact over {blocks} blocks, {caught}/{trials} corruptions caught")
            assert exact == 100
            assert caught == trials
        finally:
            mc.close()
            for n in nodes:
                n.close()
            for s in servers:
                s.stop()
            ms.stop()
    detail(record_property, "; ".join(notes))


def _random_blockmap(rng):
    nodes = tuple(NodeAddress(f"h{i}", rng.randint(1, 65535)) for i in range(rng.randint(0, 4)))
    blocks = []
    off = 0
    for _ in range(rng.randint(0, 40)):
        n = rng.randint(1, 1 << 22)
        digest = rng.randbytes(rng.choice([16, 20, 32]))
        loc = rng.randrange(len(nodes)) if nodes and rng.random() < 0.8 else NO_NODE
        blocks.append(BlockRecord(off, n, digest, loc if nodes else NO_NODE))
        off += n
    return BlockMap(f"dir/{rng.randint(0, 10**9)}.bin", rng.randint(1, 2**40), blocks, nodes)


@pytest.mark.acceptance("wire golden vectors")
def test_wire_golden_vectors(record_property):
    covered = set()
    for name, msg in test_wire.MESSAGES.items():
        frame = wire.encode_frame(msg, test_wire.REQUEST_IDS[name])
        assert frame.hex() == test_wire.GOLDEN[name], name
        decode = wire.decode_request if msg.opcode in wire.REQUESTS else wire.decode_response
        assert decode(frame) == (test_wire.REQUEST_IDS[name], msg)
        covered.add(msg.opcode)
    every = set(wire.REQUESTS) | set(wire.RESPONSES) | {op | wire.RESPONSE for op in (wire.PUT_BLOCK, wire.PUT_BLOCKMAP, wire.REGISTER_NODE)}
    assert every <= covered, sorted(every - covered)
    assert encode_blockmap(test_wire.BM1).hex() == test_wire.BM1_HEX
    assert encode_blockmap(test_wire.BM2).hex() == test_wire.BM2_HEX
    rng = random.Random(11011)
    for _ in range(500):
        bm = _random_blockmap(rng)
        raw = encode_blockmap(bm)
        again = decode_blockmap(raw)
        assert again == bm and encode_blockmap(again) == raw
    detail(record_property, f"{len(test_wire.MESSAGES)} golden frames over {len(covered)} opcodes; 500 block maps round-trip")
