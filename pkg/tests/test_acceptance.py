"""Acceptance criteria for the primary components.

Each test prints one ``PASS``/``FAIL`` line naming its criterion and the
elapsed wall time, and fails if the criterion or its time bound is missed.
"""
import contextlib
import random
import statistics
import time

import pytest

from droidaudit import compare, pipeline, simulator, syscalls
from droidaudit.parcel import FlatBinderObject, ProcessInfo, decode_transaction
from droidaudit.synth import synth_pair
from droidaudit.wire import TransactionRecord

from conftest import golden_buffer
from test_parcel import KINDS, roundtrip_ok

from parcel_writer import BINDER, HANDLE, WEAK_BINDER, WEAK_HANDLE


@pytest.fixture
def criterion(capsys):
    @contextlib.contextmanager
    def run(name, limit_s):
        start = time.perf_counter()
        ok = False
        try:
            yield
            elapsed = time.perf_counter() - start
            assert elapsed < limit_s, f"took {elapsed:.2f} s, bound is {limit_s} s"
            ok = True
        finally:
            elapsed = time.perf_counter() - start
            with capsys.disabled():
                print(f"\n{'PASS' if ok else 'FAIL'} {name} ({elapsed:.3f} s, bound {limit_s} s)")

    return run


def test_golden_sms_decode(criterion, sample_table):
    with criterion("golden SMS decode", 1.0):
        buf = golden_buffer()
        txn = TransactionRecord(0, 0, 5, 18, 10119, 10188, len(buf), 0, buf)
        rec = decode_transaction(txn, sample_table, ProcessInfo(10119, 10188))
        assert rec.status == "OK"
        assert rec.method_name == "sendTextForSubscriber"
        assert rec.interface == "com.android.internal.telephony.ISms"
        assert rec.code == 5 and rec.data_size == 200
        assert rec.consumed == 200
        values = {p.name: p.value for p in rec.params}
        assert list(values) == [
            "subId", "callingPkg", "callingAttributionTag", "destAddr", "scAddr", "text",
            "sentIntent", "deliveryIntent", "persistMessageForNonDefaultSmsApp", "messageId",
        ]
        assert values["subId"] == 2
        assert values["callingPkg"] is None and values["callingAttributionTag"] is None
        assert values["destAddr"] == "057623690820" and values["scAddr"] == "" and values["text"] == "ABC"
        sent = values["sentIntent"]
        assert isinstance(sent, FlatBinderObject)
        assert (sent.type_tag, sent.flags, sent.handle_or_ptr, sent.stability) == (HANDLE, 0x13, 0x77, 12)
        assert values["deliveryIntent"] is None
        assert values["persistMessageForNonDefaultSmsApp"] is True
        assert (values["messageId"] & (2**64 - 1)).to_bytes(8, "little") == bytes.fromhex("5c27edfc88bdfc8b")


def test_syscall_set_counts(criterion):
    with criterion("syscall-set counts", 1.0):
        arm = syscalls.traced_set("arm64")
        x86 = syscalls.traced_set("x86_64")
        assert len(arm) == 64 and len(x86) == 81
        assert len(x86 - arm) == 19
        assert arm - x86 == {"preadv2", "pwritev2"}


def test_uer_worked_example(criterion):
    with criterion("UER worked example", 1.0):
        r = compare.MatchResult(matched=40, unique_a=50, unique_b=10, pairs=(), window=(0, 0))
        assert r.union == 100
        assert compare.uer(r) == (0.5, 0.1)
        assert (r.total_a, r.total_b) == (90, 50)


def test_uer_synthetic_recovery(criterion, fixtures):
    with criterion("synthetic UER recovered within 0.5 pp", 60.0):
        rng = random.Random(2024)
        recovered_a, recovered_b, truth_a, truth_b = [], [], [], []
        for app in range(12):
            # Per-app loss rates scattered around the field means.
            p_a = min(max(rng.gauss(0.3775, 0.035), 0.30), 0.47)
            p_b = min(max(rng.gauss(0.0427, 0.02), 0.015), 0.15)
            pair = synth_pair(1000 + app, n_events=2000, p_a_only=p_a, p_b_only=p_b)
            a = compare.normalize_log(pair.a_lines, "wdsys", exclude_pids=pair.tracer_pids)
            b = compare.normalize_log(pair.b_lines, "ftrace", exclude_pids=pair.tracer_pids)
            result = compare.match_events(a, b, compare.compute_offset(a, b))
            ua, ub = compare.uer(result)
            assert abs(ua - pair.uer_a) * 100 <= 0.5, (app, ua, pair.uer_a)
            assert abs(ub - pair.uer_b) * 100 <= 0.5, (app, ub, pair.uer_b)
            recovered_a.append(ua)
            recovered_b.append(ub)
            truth_a.append(pair.uer_a)
            truth_b.append(pair.uer_b)
        assert abs(statistics.mean(recovered_a) - statistics.mean(truth_a)) * 100 <= 0.5
        assert abs(statistics.mean(recovered_b) - statistics.mean(truth_b)) * 100 <= 0.5
        # The generator lands in the neighbourhood it was aimed at.
        assert abs(statistics.mean(truth_a) * 100 - 37.75) < 3.0
        assert abs(statistics.mean(truth_b) * 100 - 4.27) < 2.0
        # The per-app table the targets come from.
        rows = compare.read_aggregate_csv((fixtures / "completeness_table.csv").read_text())
        assert round(statistics.mean(r["WD"] for r in rows), 2) == 37.75
        assert round(statistics.mean(r["FT"] for r in rows), 2) == 4.27


def random_value(rng, kind, stability):
    def fbo():
        tag = rng.choice([BINDER, WEAK_BINDER, HANDLE, WEAK_HANDLE])
        return (tag, rng.getrandbits(32), rng.getrandbits(64) or 1, rng.getrandbits(64), rng.getrandbits(32))

    if kind == "int":
        return rng.randrange(-(2**31), 2**31)
    if kind == "boolean":
        return rng.random() < 0.5
    if kind == "long":
        return rng.randrange(-(2**63), 2**63)
    if kind == "double":
        return rng.choice([0.0, -0.0, 1e308, -2.5, rng.uniform(-1e9, 1e9)])
    if kind == "String":
        if rng.random() < 0.25:
            return None
        alphabet = "abcXYZ019 _.é中\U0001f600"
        return "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 20)))
    if kind == "PendingIntent":
        return None if rng.random() < 0.3 else fbo()
    return fbo()


def test_parcel_roundtrip(criterion):
    with criterion("parcel round-trip, 1200 random signatures", 30.0):
        rng = random.Random(7)
        seen = set()
        failures = 0
        n = 1200
        for i in range(n):
            stability = i % 2 == 0
            types = [rng.choice(KINDS) for _ in range(rng.randrange(0, 12))]
            values = [random_value(rng, t, stability) for t in types]
            token = f"com.example.p{i % 17}.IService{i}"
            try:
                roundtrip_ok(token, rng.randrange(1, 2**24), types, values, stability)
            except AssertionError:
                failures += 1
            seen.update(types)
            seen.update(("null String",) if any(t == "String" and v is None for t, v in zip(types, values)) else ())
            seen.update(("null object",) if any(t == "PendingIntent" and v is None for t, v in zip(types, values)) else ())
        assert failures == 0
        assert seen >= set(KINDS) | {"null String", "null object"}


def test_simulator_conservation_and_policies(criterion):
    with criterion("simulator conservation and policy contrast", 10.0):
        burst = simulator.Workload(bursts=((0.0, 0, 1000),))
        kept = {}
        for policy in ("overwrite", "drop"):
            cfg = simulator.BufferConfig(ring_capacity=100, policy=policy, consumer_drain_rate=1000)
            rep = simulator.simulate_buffers(cfg, burst, record_ids=True)
            assert rep.produced == rep.delivered + rep.lost
            assert rep.delivered == 100
            kept[policy] = rep.delivered_ids
        assert kept["overwrite"] == list(range(900, 1000))
        assert kept["drop"] == list(range(100))

        rng = random.Random(3)
        for _ in range(60):
            cpus = rng.randrange(1, 5)
            rates = tuple(rng.uniform(0, 20) for _ in range(cpus))
            cache = rng.randrange(1, 8)
            total = sum(rates)
            wl = simulator.Workload(duration_ms=rng.uniform(1, 60), rates=rates,
                                    arrival=rng.choice(["uniform", "poisson"]))
            # Overloaded and underloaded runs alike conserve events.
            cfg = simulator.BufferConfig(cpu_count=cpus, cache_capacity=cache,
                                         ring_capacity=rng.randrange(cache, 64),
                                         policy=rng.choice(["overwrite", "drop"]),
                                         consumer_drain_rate=rng.uniform(0.5, 40),
                                         priorities=rng.random() < 0.5)
            rep = simulator.simulate_buffers(cfg, wl, seed=rng.randrange(10**6))
            assert rep.produced == rep.delivered + rep.lost
            # Drain at least the production rate with evenly spaced (burst-free)
            # arrivals: nothing is lost.  Poisson arrivals are excluded since a
            # single millisecond can exceed any fixed drain rate.
            wl = simulator.Workload(duration_ms=wl.duration_ms, rates=rates)
            roomy = simulator.BufferConfig(cpu_count=cpus, cache_capacity=cache,
                                           ring_capacity=int(total) + cpus * cache + 2,
                                           policy=cfg.policy, consumer_drain_rate=total + 1)
            rep = simulator.simulate_buffers(roomy, wl, seed=1)
            assert rep.lost == 0 and rep.delivered == rep.produced


def test_chunk_reassembly_permutations(criterion):
    with criterion("chunk reassembly under 100 permutations", 5.0):
        buf = golden_buffer()
        rng = random.Random(11)
        for trial in range(100):
            pieces = rng.randrange(2, 9)
            size = -(-len(buf) // pieces)
            chunks = pipeline.split_chunks(trial, buf, size)
            assert 2 <= len(chunks) <= 8
            rng.shuffle(chunks)
            result = pipeline.reassemble_chunks(chunks)
            assert result.events == [(trial, buf)] and not result.incomplete


def test_mte_mask(criterion):
    with criterion("MTE mask over 10^4 values", 1.0):
        rng = random.Random(5)
        for _ in range(10_000):
            a = rng.getrandbits(64)
            m = pipeline.mask_user_address(a)
            assert m == a % (1 << 40)
            assert pipeline.mask_user_address(m) == m
