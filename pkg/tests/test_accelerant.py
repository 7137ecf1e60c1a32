import os
import random
import threading
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from chunkforge import hashcore
from chunkforge.accelerant import (
    BufferPool,
    CpuParallelBackend,
    InstantOracleBackend,
    JobQueues,
    Pipeline,
    PipelineConfig,
    StageCosts,
    TaskKind,
    make_backend,
    parse_config,
    reference_compute,
)
from chunkforge.accelerant import kernels
from chunkforge.accelerant.pool import size_class
from chunkforge.errors import CapacityError, ConfigError, OwnershipError, PipelineClosed, TaskFailed
from chunkforge.hashcore import SegmentedHashParams, WindowHashParams

# --- kernel -------------------------------------------------------------


@settings(max_examples=60)
@given(data=st.binary(min_size=1, max_size=400), w=st.integers(1, 150), stride=st.integers(1, 7))
def test_kernel_matches_oracle(data, w, stride):
    count = hashcore.window_count(len(data), w, stride)
    got = kernels.md5_windows(data, 0, count, stride, w)
    want = oracles.window_digests(data, w, stride, oracles.md5)
    assert [bytes(r) for r in got] == [d for _, d in want]


def test_kernel_offset_and_lanes():
    data = os.urandom(5000)
    # more windows than lanes, non-zero start
    got = kernels.md5_windows(data, 17, 100, 3, 48)
    for k in range(100):
        s = 17 + 3 * k
        assert bytes(got[k]) == oracles.md5(data[s : s + 48])
    with pytest.raises(ValueError):
        kernels.md5_windows(data, 4990, 2, 1, 48)


def test_boundary_flags_match_predicate():
    digests = np.frombuffer(os.urandom(16 * 5000), dtype=np.uint8).reshape(-1, 16)
    for bits, target in ((0, 0), (4, 3), (13, 0), (32, 12345)):
        flags = kernels.boundary_flags(digests, bits, target)
        assert flags.tolist() == [hashcore.is_boundary(bytes(d), bits, target) for d in digests]


# --- pool -----------------------------------------------------------------


def test_size_classes():
    assert size_class(1) == 4096
    assert size_class(4097) == 8192
    assert size_class(8192) == 8192


def test_pool_reuse_counts():
    pool = BufferPool(depth=2)
    h = pool.acquire(1000)
    pool.release(h)
    h2 = pool.acquire(1000)
    assert h2 is h
    assert (pool.allocations_total, pool.pool_hits) == (1, 1)


def test_pool_warm_depth_no_new_allocations():
    pool = BufferPool(depth=4)
    pool.prewarm(10_000)
    before = pool.allocations_total
    hs = [pool.acquire(10_000) for _ in range(4)]
    assert pool.allocations_total == before
    assert pool.pool_hits == 4
    for h in hs:
        pool.release(h)
    assert pool.idle_count(10_000) == 4


def test_pool_ownership_errors():
    pool, other = BufferPool(), BufferPool()
    h = pool.acquire(10)
    with pytest.raises(OwnershipError):
        other.release(h)
    pool.release(h)
    with pytest.raises(OwnershipError):
        pool.release(h)
    with pytest.raises(CapacityError):
        pool.acquire(pool.max_size + 1)
    with pytest.raises(ConfigError):
        pool.acquire(0)


def test_pool_without_reuse_allocates_each_time():
    pool = BufferPool(reuse=False)
    for _ in range(3):
        pool.release(pool.acquire(100))
    assert pool.allocations_total == 3 and pool.pool_hits == 0


def test_pool_depth_bounds_idle_list():
    pool = BufferPool(depth=1)
    a, b = pool.acquire(10), pool.acquire(10)
    pool.release(a)
    pool.release(b)
    assert pool.idle_count(10) == 1
    assert b.owner == "dropped"


def test_handle_write_bounds():
    pool = BufferPool()
    h = pool.acquire(5000)
    h.write(b"abc")
    assert bytes(h.view()) == b"abc"
    h.write(b"de", offset=3)
    assert bytes(h.view()) == b"abcde"
    with pytest.raises(CapacityError):
        h.write(b"x" * (h.capacity + 1))


# --- queues ---------------------------------------------------------------


def test_job_queues_fifo_and_recycling():
    q = JobQueues(prealloc=2)
    jobs = [q.take_idle() for _ in range(3)]
    assert q.created == 3
    for i, j in enumerate(jobs):
        j.id = i
        q.enqueue(j)
    assert q.counts() == (0, 3, 0)
    got = [q.next_outstanding() for _ in range(3)]
    assert [j.id for j in got] == [0, 1, 2]
    assert q.counts() == (0, 0, 3)
    for j in got:
        q.finish(j)
    assert q.counts() == (3, 0, 0)


# --- backends -------------------------------------------------------------


def _all_backends():
    return ["reference", "cpu_parallel", "instant"]


@pytest.mark.parametrize("name", _all_backends())
def test_backends_agree_with_reference(name):
    data = os.urandom(20_000)
    wp = WindowHashParams(window=32, stride=3, boundary_bits=4)
    sp = SegmentedHashParams(1000)
    lengths = (5000, 1, 14_999)
    with Pipeline(PipelineConfig(backend=name, workers=2)) as pipe:
        w = pipe.run(TaskKind.WINDOW_HASH_BATCH, data, wp)
        d = pipe.run(TaskKind.DIRECT_HASH_BATCH, data, sp, lengths=lengths)
    ref_w = reference_compute(TaskKind.WINDOW_HASH_BATCH, data, wp)
    assert w.entries() == ref_w.entries()
    assert w.boundaries == ref_w.boundaries
    assert d == reference_compute(TaskKind.DIRECT_HASH_BATCH, data, sp, lengths)
    assert [x.value for x in d] == [
        oracles.direct_hash(data[0:5000], 1000),
        oracles.direct_hash(data[5000:5001], 1000),
        oracles.direct_hash(data[5001:], 1000),
    ]


def test_cpu_backend_non_md5_falls_back():
    data = os.urandom(3000)
    wp = WindowHashParams(window=16, stride=5, algorithm="sha1")
    got = CpuParallelBackend().solve(TaskKind.WINDOW_HASH_BATCH, data, wp)
    assert got.entries() == hashcore.window_hashes(data, wp)


def test_instant_oracle_memo():
    b = InstantOracleBackend()
    data = os.urandom(4096)
    wp = WindowHashParams(window=48, stride=16)
    b.prime(TaskKind.WINDOW_HASH_BATCH, data, wp)
    with Pipeline(PipelineConfig(), backend=b) as pipe:
        r = pipe.run(TaskKind.WINDOW_HASH_BATCH, data, wp)
        pipe.run(TaskKind.WINDOW_HASH_BATCH, os.urandom(100), wp)
    assert (b.hits, b.misses) == (1, 1)
    assert r.entries() == hashcore.window_hashes(data, wp)


def test_make_backend_rejects_unknown():
    with pytest.raises(ConfigError):
        make_backend("gpu")
    assert make_backend("reference", StageCosts(compute=0.001)).name == "simulated(reference)"


# --- pipeline -----------------------------------------------------------


def test_submit_validation():
    with Pipeline() as pipe:
        with pytest.raises(ConfigError):
            pipe.submit(TaskKind.DIRECT_HASH_BATCH, b"abc", WindowHashParams())
        with pytest.raises(ConfigError):
            pipe.submit(TaskKind.DIRECT_HASH_BATCH, b"", SegmentedHashParams())
        with pytest.raises(ConfigError):
            pipe.submit(TaskKind.DIRECT_HASH_BATCH, b"abc", SegmentedHashParams(), lengths=(1, 1))
    with pytest.raises(PipelineClosed):
        pipe.submit(TaskKind.DIRECT_HASH_BATCH, b"abc", SegmentedHashParams())
    with pytest.raises(PipelineClosed):
        Pipeline().submit(TaskKind.DIRECT_HASH_BATCH, b"abc", SegmentedHashParams())


def test_callbacks_fire_once_per_task():
    seen = []
    lock = threading.Lock()

    def cb(ticket):
        with lock:
            seen.append(ticket.id)

    with Pipeline(PipelineConfig(devices=3)) as pipe:
        tickets = [
            pipe.submit(TaskKind.DIRECT_HASH_BATCH, os.urandom(100), SegmentedHashParams(), callback=cb)
            for _ in range(30)
        ]
        for t in tickets:
            t.wait()
    assert sorted(seen) == sorted(t.id for t in tickets)
    assert len(set(t.id for t in tickets)) == 30


def test_task_failure_surfaces_and_pipeline_survives():
    class Boom(CpuParallelBackend):
        def compute(self, device, job):
            if job.nbytes == 13:
                raise RuntimeError("boom")
            super().compute(device, job)

    with Pipeline(PipelineConfig(), backend=Boom()) as pipe:
        bad = pipe.submit(TaskKind.DIRECT_HASH_BATCH, b"x" * 13, SegmentedHashParams())
        with pytest.raises(TaskFailed):
            bad.wait()
        assert isinstance(bad.error, RuntimeError)
        ok = pipe.run(TaskKind.DIRECT_HASH_BATCH, b"abc", SegmentedHashParams())
        stats = pipe.stats()
    assert ok[0] == hashcore.direct_hash(b"abc")
    assert stats.failed == 1 and stats.completed == 1


def test_callback_exception_does_not_kill_device():
    with Pipeline() as pipe:
        pipe.submit(TaskKind.DIRECT_HASH_BATCH, b"a", SegmentedHashParams(), callback=lambda t: 1 / 0).wait()
        assert pipe.run(TaskKind.DIRECT_HASH_BATCH, b"b", SegmentedHashParams())


def test_client_handle_ownership_through_task():
    with Pipeline() as pipe:
        h = pipe.acquire_buffer(1000)
        h.write(os.urandom(1000))
        t = pipe.submit(TaskKind.DIRECT_HASH_BATCH, h, SegmentedHashParams())
        t.wait()
        assert h.owner == "client"
        pipe.release_buffer(h)
        with pytest.raises(OwnershipError):
            pipe.release_buffer(h)


def test_in_flight_handle_cannot_be_released():
    costs = StageCosts(compute=0.05)
    with Pipeline(PipelineConfig(backend="reference", costs=costs)) as pipe:
        h = pipe.acquire_buffer(100)
        h.write(b"q" * 100)
        t = pipe.submit(TaskKind.DIRECT_HASH_BATCH, h, SegmentedHashParams())
        with pytest.raises(OwnershipError):
            pipe.release_buffer(h)
        t.wait()
        pipe.release_buffer(h)


def test_close_drains_outstanding_work():
    pipe = Pipeline(PipelineConfig(backend="reference", costs=StageCosts(compute=0.002))).start()
    tickets = [pipe.submit(TaskKind.DIRECT_HASH_BATCH, b"abc", SegmentedHashParams()) for _ in range(20)]
    pipe.close()
    assert all(t.done() for t in tickets)
    assert pipe.stats().completed == 20


@pytest.mark.parametrize("n,m", [(10, 2), (7, 3), (1, 4), (100, 6)])
def test_round_robin_counts(n, m):
    with Pipeline(PipelineConfig(devices=m)) as pipe:
        for t in [pipe.submit(TaskKind.DIRECT_HASH_BATCH, b"x" * 64, SegmentedHashParams()) for _ in range(n)]:
            t.wait()
        counts = pipe.stats().device_tasks
    assert sum(counts) == n
    assert max(counts) - min(counts) <= 1
    assert list(counts) == [n // m + (1 if i < n % m else 0) for i in range(m)]


def test_results_independent_of_device_and_worker_counts():
    blocks = [os.urandom(random.Random(i).randint(1, 200_000)) for i in range(12)]
    want = [hashcore.direct_hash(b) for b in blocks]
    for devices, workers, overlap in ((1, 1, False), (2, 4, True), (3, 2, True)):
        with Pipeline(PipelineConfig(devices=devices, workers=workers, overlap=overlap)) as pipe:
            tickets = [pipe.submit(TaskKind.DIRECT_HASH_BATCH, b, SegmentedHashParams()) for b in blocks]
            assert [t.wait()[0] for t in tickets] == want


def test_stats_stage_accounting():
    costs = StageCosts(copy_in=0.004, compute=0.004, copy_out=0.002)
    with Pipeline(PipelineConfig(backend="reference", costs=costs)) as pipe:
        for t in [pipe.submit(TaskKind.DIRECT_HASH_BATCH, b"abc", SegmentedHashParams()) for _ in range(10)]:
            t.wait()
        s = pipe.stats()
    assert set(s.stage_seconds) == {"pre", "copy_in", "compute", "copy_out", "post"}
    assert s.stage_seconds["compute"] >= 0.035
    assert s.overlap_seconds > 0
    assert sum(s.stage_fractions().values()) == pytest.approx(1.0)


def test_simulated_allocation_cost_hidden_by_reuse():
    costs = StageCosts(alloc=0.01)
    durations = {}
    for reuse in (True, False):
        with Pipeline(PipelineConfig(backend="reference", costs=costs, reuse=reuse)) as pipe:
            t0 = time.perf_counter()
            for _ in range(10):
                pipe.run(TaskKind.DIRECT_HASH_BATCH, b"abc", SegmentedHashParams())
            durations[reuse] = time.perf_counter() - t0
            allocs = pipe.stats().allocations_total
        assert allocs == (1 if reuse else 10)
    assert durations[True] < durations[False]


# --- config -------------------------------------------------------------


def test_parse_config():
    cfg = parse_config(
        """
        # pipeline
        devices = 2
        workers=3
        overlap = off
        reuse = yes
        pool_depth = 8
        backend = instant
        sim.copy_in = 0.01   # seconds
        """
    )
    assert (cfg.devices, cfg.workers, cfg.overlap, cfg.reuse, cfg.pool_depth, cfg.backend) == (2, 3, False, True, 8, "instant")
    assert cfg.costs == StageCosts(copy_in=0.01)
    for bad in ("nonsense", "color = red", "overlap = maybe", "sim.teleport = 1", "devices = 0"):
        with pytest.raises(ConfigError):
            parse_config(bad)
