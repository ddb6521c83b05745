import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from droidaudit.simulator import (
    BufferConfig,
    InvalidConfig,
    Workload,
    generate_arrivals,
    load_simulation,
    reports_to_csv,
    simulate_buffers,
    sweep,
)


def burst(n, t=0.0, cpu=0):
    return Workload(bursts=((t, cpu, n),))


@pytest.mark.parametrize("policy", ["overwrite", "drop"])
@pytest.mark.parametrize("cache", [1, 4, 10, 25])
def test_burst_closed_form(policy, cache):
    cfg = BufferConfig(cache_capacity=cache, ring_capacity=100, policy=policy, consumer_drain_rate=1)
    rep = simulate_buffers(cfg, burst(1000), record_ids=True)
    assert rep.produced == 1000
    assert rep.delivered == 100
    assert rep.lost == 900
    expected = list(range(900, 1000)) if policy == "overwrite" else list(range(100))
    assert rep.delivered_ids == expected
    if policy == "overwrite":
        assert rep.lost_overwritten == 900 and rep.lost_dropped == 0
    else:
        assert rep.lost_dropped == 900 and rep.lost_overwritten == 0


@given(st.integers(0, 3000), st.integers(1, 300), st.integers(1, 40), st.sampled_from(["overwrite", "drop"]))
def test_burst_closed_form_general(n, ring, cache, policy):
    if cache > ring:
        return
    cfg = BufferConfig(cache_capacity=cache, ring_capacity=ring, policy=policy, consumer_drain_rate=1)
    rep = simulate_buffers(cfg, burst(n), record_ids=True)
    if policy == "overwrite":
        kept = min(n, ring)
        assert rep.delivered_ids == list(range(n - kept, n))
    else:
        # Batches of `cache` ids, then the remainder flushed at tick end;
        # each batch goes in whole or not at all.
        kept, occupancy = [], 0
        for start in range(0, n, cache):
            batch = list(range(start, min(start + cache, n)))
            if occupancy + len(batch) <= ring:
                kept += batch
                occupancy += len(batch)
        assert rep.delivered_ids == kept
    assert rep.produced == rep.delivered + rep.lost


def test_policies_same_loss_different_identity():
    wl = burst(500)
    over = simulate_buffers(BufferConfig(ring_capacity=50, policy="overwrite"), wl, record_ids=True)
    drop = simulate_buffers(BufferConfig(ring_capacity=50, policy="drop"), wl, record_ids=True)
    assert over.lost == drop.lost == 450
    assert set(over.delivered_ids).isdisjoint(drop.delivered_ids)


configs = st.builds(
    BufferConfig,
    cpu_count=st.integers(1, 4),
    cache_capacity=st.integers(1, 8),
    ring_capacity=st.integers(8, 200),
    policy=st.sampled_from(["overwrite", "drop"]),
    consumer_drain_rate=st.floats(0.2, 50),
    priorities=st.booleans(),
)


@st.composite
def workloads(draw, cpu_count):
    rates = tuple(draw(st.lists(st.floats(0, 40), min_size=0, max_size=cpu_count)))
    bursts = tuple(
        draw(st.lists(st.tuples(st.floats(0, 30), st.integers(0, cpu_count - 1), st.integers(0, 300)), max_size=3))
    )
    return Workload(
        duration_ms=draw(st.floats(0, 40)),
        rates=rates,
        bursts=bursts,
        arrival=draw(st.sampled_from(["uniform", "poisson"])),
    )


@st.composite
def scenarios(draw):
    cfg = draw(configs)
    return cfg, draw(workloads(cfg.cpu_count)), draw(st.integers(0, 2**32))


@settings(max_examples=80, deadline=None)
@given(scenarios())
def test_conservation(case):
    cfg, wl, seed = case
    rep = simulate_buffers(cfg, wl, seed)
    assert rep.produced == rep.delivered + rep.lost_overwritten + rep.lost_dropped
    assert sum(rep.lost_by_priority.values()) == rep.lost
    assert rep.max_ring_occupancy <= cfg.ring_capacity


@settings(max_examples=40, deadline=None)
@given(scenarios())
def test_deterministic(case):
    cfg, wl, seed = case
    assert simulate_buffers(cfg, wl, seed, record_ids=True) == simulate_buffers(cfg, wl, seed, record_ids=True)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.lists(st.floats(0.5, 30), min_size=1, max_size=4), st.floats(1, 60), st.floats(1.0, 3.0))
def test_zero_loss_when_drain_keeps_up(cpus, rates, duration, headroom):
    rates = rates[:cpus]
    total = sum(rates)
    # One millisecond of arrivals plus per-CPU rounding must fit the ring.
    ring = math.ceil(total) + 2 * cpus + 1
    for policy in ("overwrite", "drop"):
        cfg = BufferConfig(cpu_count=cpus, cache_capacity=1, ring_capacity=ring, policy=policy,
                           consumer_drain_rate=total * headroom)
        rep = simulate_buffers(cfg, Workload(duration_ms=duration, rates=tuple(rates)))
        assert rep.lost_overwritten == rep.lost_dropped == 0
        assert rep.delivered == rep.produced


@st.composite
def monotone_cases(draw):
    cfg, wl, seed = draw(scenarios())
    if cfg.policy == "drop" and not cfg.priorities:
        cfg = BufferConfig(**{**cfg.__dict__, "policy": "overwrite"})
    return cfg, wl, seed


@settings(max_examples=30, deadline=None)
@given(monotone_cases())
def test_loss_monotone_in_ring_capacity(case):
    cfg, wl, seed = case
    base = cfg.cache_capacity
    rows = sweep(cfg, wl, seed, "ring_capacity", list(range(base, base + 60, 3)))
    losses = [r.lost for _, r in rows]
    assert losses == sorted(losses, reverse=True)


def test_atomic_drop_is_not_monotone():
    # A larger ring accepts a small batch that a smaller ring rejects, and
    # then has to reject a larger batch the smaller ring can take.
    wl = Workload(bursts=((0, 0, 4), (1, 0, 4), (2, 0, 5)))
    lost = [
        simulate_buffers(BufferConfig(cache_capacity=5, ring_capacity=c, policy="drop", consumer_drain_rate=2), wl).lost
        for c in (5, 6)
    ]
    assert lost == [4, 5]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.lists(st.floats(0, 20), max_size=4), st.floats(0, 20), st.floats(0.2, 20),
       st.integers(1, 60), st.integers(0, 1000))
def test_single_event_flush_policies_lose_equally(cpus, rates, duration, drain, ring, seed):
    wl = Workload(duration_ms=duration, rates=tuple(rates[:cpus]), arrival="poisson")
    losses = {
        policy: simulate_buffers(BufferConfig(cpu_count=cpus, ring_capacity=ring, policy=policy,
                                              consumer_drain_rate=drain), wl, seed).lost
        for policy in ("overwrite", "drop")
    }
    assert losses["overwrite"] == losses["drop"]


def test_priority_eviction_keeps_high_priority():
    wl = Workload(bursts=((0, 0, 1000),), priority_mix=(0.2, 0.3, 0.5))
    cfg = BufferConfig(ring_capacity=100, policy="drop", priorities=True)
    rep = simulate_buffers(cfg, wl, seed=1, record_ids=True)
    classes = [c for _, _, c in generate_arrivals(wl, 1)]
    assert rep.delivered == 100
    assert all(classes[i] == 0 for i in rep.delivered_ids)
    assert rep.lost_by_priority[2] == classes.count(2)


def test_priorities_default_off():
    assert BufferConfig().priorities is False


@pytest.mark.parametrize(
    "kwargs",
    [
        {"policy": "fifo"},
        {"cpu_count": 0},
        {"cache_capacity": 0},
        {"ring_capacity": -1},
        {"consumer_drain_rate": 0},
        {"flush_threshold": 9, "cache_capacity": 4},
        {"cache_capacity": 8, "ring_capacity": 4},
    ],
)
def test_invalid_config(kwargs):
    with pytest.raises(InvalidConfig):
        simulate_buffers(BufferConfig(**kwargs), Workload())


@pytest.mark.parametrize(
    "wl",
    [
        Workload(duration_ms=-1),
        Workload(rates=(1.0, 2.0)),
        Workload(rates=(-1.0,)),
        Workload(bursts=((0, 3, 1),)),
        Workload(arrival="bursty"),
        Workload(priority_mix=()),
    ],
)
def test_invalid_workload(wl):
    with pytest.raises(InvalidConfig):
        simulate_buffers(BufferConfig(), wl)


def test_uniform_arrivals_are_evenly_spaced():
    arr = generate_arrivals(Workload(duration_ms=2, rates=(4.0,)), 0)
    assert [t for t, _, _ in arr] == [0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75]


def test_load_simulation_and_sweep_csv(tmp_path):
    p = tmp_path / "sim.json"
    p.write_text(json.dumps({"buffer": {"ring_capacity": 100, "policy": "drop"},
                             "workload": {"bursts": [[0, 0, 1000]]}}))
    cfg, wl = load_simulation(p)
    assert cfg.ring_capacity == 100 and wl.bursts == ((0.0, 0, 1000),)
    text = reports_to_csv(sweep(cfg, wl, 0, "ring_capacity", [100, 200]), "ring_capacity")
    lines = text.splitlines()
    assert lines[0].startswith("ring_capacity,produced,delivered")
    assert lines[1].split(",")[:3] == ["100", "1000", "100"]
    assert lines[2].split(",")[:3] == ["200", "1000", "200"]


def test_load_simulation_rejects_garbage(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("[1, 2]")
    with pytest.raises(InvalidConfig):
        load_simulation(p)
    p.write_text('{"buffer": {"bogus": 1}}')
    with pytest.raises(InvalidConfig):
        load_simulation(p)


def test_sweep_unknown_param():
    with pytest.raises(InvalidConfig):
        sweep(BufferConfig(), Workload(), 0, "nope", [1])
