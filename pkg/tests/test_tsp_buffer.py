"""
TSP 缓存测试
"""

import numpy as np
import pytest

from tsp_buffer import (
    PDU_SIZE_BITS, EnqueueResult, FlowClass, Pdu, SchemeVariant, TspBuffer, TspBufferConfig,
)
from utils import ConfigError, InvariantViolation


def make_pdu(flow: FlowClass, pdu_id: int = 0) -> Pdu:
    return Pdu(id=pdu_id, flow=flow, source_packet_id=pdu_id, created_at=0.0)


def fill(buffer: TspBuffer, flow: FlowClass, count: int, start_id: int = 0) -> None:
    for k in range(count):
        buffer.enqueue(make_pdu(flow, start_id + k), 0.0)


def small_config(**overrides) -> TspBufferConfig:
    values = dict(capacity_n=4, rt_limit_r=2, lower_l=None, upper_h=None, variant=SchemeVariant.ORIGINAL)
    values.update(overrides)
    return TspBufferConfig(**values)


def test_defaults_match_parameter_table():
    config = TspBufferConfig()
    assert (config.capacity_n, config.rt_limit_r, config.lower_l, config.upper_h) == (300, 20, 120, 240)
    assert config.variant is SchemeVariant.ENHANCED


def test_rt_blocked_at_limit():
    buffer = TspBuffer(small_config())
    fill(buffer, FlowClass.RT, 2)
    assert buffer.enqueue(make_pdu(FlowClass.RT, 9), 0.0) is EnqueueResult.BLOCKED
    assert buffer.counters.rt_blocked == 1
    assert buffer.occupancy().rt_count == 2


def test_original_pushes_out_nrt_tail_when_full():
    buffer = TspBuffer(small_config())
    fill(buffer, FlowClass.NRT, 4)
    result = buffer.enqueue(make_pdu(FlowClass.RT, 10), 1.0)

    assert result is EnqueueResult.ACCEPTED_WITH_PUSH_OUT
    assert [pdu.id for pdu in buffer.nrt_fifo] == [0, 1, 2]
    assert buffer.counters.nrt_pushed_out == 1
    assert buffer.occupancy() == (1, 3, 4)


def test_nrt_dropped_at_tail_when_full():
    buffer = TspBuffer(small_config())
    fill(buffer, FlowClass.NRT, 4)
    assert buffer.enqueue(make_pdu(FlowClass.NRT, 5), 0.0) is EnqueueResult.DROPPED_TAIL
    assert buffer.counters.nrt_dropped_tail == 1
    assert [pdu.id for pdu in buffer.nrt_fifo] == [0, 1, 2, 3]


def test_enhanced_full_rt_arrival_counts_anomaly():
    buffer = TspBuffer(small_config(capacity_n=5, lower_l=1, upper_h=3, variant=SchemeVariant.ENHANCED))
    fill(buffer, FlowClass.NRT, 5)
    assert buffer.enqueue(make_pdu(FlowClass.RT, 10), 0.0) is EnqueueResult.ACCEPTED_WITH_PUSH_OUT
    assert buffer.counters.enhanced_pushout_anomalies == 1


def test_enhanced_block_policy_rejects_rt_when_full():
    buffer = TspBuffer(small_config(variant=SchemeVariant.ENHANCED, enhanced_full_policy='block'))
    fill(buffer, FlowClass.NRT, 4)
    assert buffer.enqueue(make_pdu(FlowClass.RT, 10), 0.0) is EnqueueResult.BLOCKED
    assert buffer.counters.rt_blocked == 1
    assert buffer.counters.nrt_pushed_out == 0
    assert buffer.counters.enhanced_pushout_anomalies == 1
    buffer.check_conservation()


def test_dequeue_serves_rt_first_in_fifo_order():
    buffer = TspBuffer(small_config(capacity_n=10, rt_limit_r=5))
    fill(buffer, FlowClass.NRT, 3, start_id=0)
    fill(buffer, FlowClass.RT, 2, start_id=100)

    block = buffer.dequeue_up_to(3 * PDU_SIZE_BITS, 0.0)
    assert [pdu.id for pdu in block] == [100, 101, 0]


def test_dequeue_never_serves_nrt_while_rt_remains():
    buffer = TspBuffer(small_config(capacity_n=10, rt_limit_r=5))
    fill(buffer, FlowClass.NRT, 3, start_id=0)
    fill(buffer, FlowClass.RT, 5, start_id=100)

    block = buffer.dequeue_up_to(3 * PDU_SIZE_BITS, 0.0)
    assert all(pdu.flow is FlowClass.RT for pdu in block)
    assert len(block) == 3


def test_dequeue_budget_below_one_pdu_returns_nothing():
    buffer = TspBuffer(small_config())
    fill(buffer, FlowClass.RT, 1)
    assert buffer.dequeue_up_to(PDU_SIZE_BITS - 1, 0.0) == []
    assert len(buffer) == 1


def test_dequeue_rejects_negative_budget():
    with pytest.raises(ValueError):
        TspBuffer(small_config()).dequeue_up_to(-1, 0.0)


def test_enqueue_rt_rejects_nrt_pdu():
    with pytest.raises(ValueError):
        TspBuffer(small_config()).enqueue_rt(make_pdu(FlowClass.NRT), 0.0)


def test_pdu_size_is_fixed():
    with pytest.raises(ValueError):
        Pdu(id=0, flow=FlowClass.RT, source_packet_id=0, created_at=0.0, size_bits=320)


@pytest.mark.parametrize('overrides, key', [
    (dict(upper_h=400), 'thresholds.h'),
    (dict(lower_l=240, upper_h=240), 'thresholds.h'),
    (dict(lower_l=0), 'thresholds.l'),
    (dict(rt_limit_r=301), 'buffer.r'),
    (dict(rt_limit_r=0), 'buffer.r'),
    (dict(capacity_n=0, rt_limit_r=0), 'buffer.n'),
    (dict(enhanced_full_policy='drop'), 'buffer.enhanced_full_policy'),
])
def test_config_rejects_invalid_values(overrides, key):
    with pytest.raises(ConfigError) as excinfo:
        TspBufferConfig(**overrides)
    assert excinfo.value.key == key


def test_original_ignores_thresholds():
    config = TspBufferConfig(upper_h=400, variant=SchemeVariant.ORIGINAL)
    assert config.upper_h == 400


def test_conservation_detects_tampering():
    buffer = TspBuffer(small_config())
    fill(buffer, FlowClass.NRT, 2)
    buffer.nrt_fifo.pop()
    with pytest.raises(InvariantViolation):
        buffer.check_conservation()


def run_random_operations(config: TspBufferConfig, n_ops: int, seed: int) -> TspBuffer:
    rng = np.random.default_rng(seed)
    buffer = TspBuffer(config)
    ops = rng.integers(0, 3, size=n_ops)
    budgets = rng.integers(0, 4, size=n_ops)

    for k, (op, budget) in enumerate(zip(ops, budgets)):
        if op == 0:
            buffer.enqueue(make_pdu(FlowClass.RT, k), float(k))
        elif op == 1:
            buffer.enqueue(make_pdu(FlowClass.NRT, k), float(k))
        else:
            rt_before = buffer.occupancy().rt_count
            block = buffer.dequeue_up_to(int(budget) * PDU_SIZE_BITS, float(k))
            served_rt = sum(1 for pdu in block if pdu.flow is FlowClass.RT)
            if served_rt < len(block):
                # 出现 NRT 时所有 RT 必须已经取完
                assert served_rt == rt_before
            assert len(block) <= budget

        occupancy = buffer.occupancy()
        assert occupancy.rt_count <= config.rt_limit_r
        assert occupancy.total <= config.capacity_n

    buffer.check_conservation()
    return buffer


@pytest.mark.parametrize('variant, policy', [
    (SchemeVariant.ORIGINAL, 'push_out'),
    (SchemeVariant.ENHANCED, 'push_out'),
    (SchemeVariant.ENHANCED, 'block'),
])
def test_random_operations_keep_invariants(variant, policy):
    config = TspBufferConfig(capacity_n=12, rt_limit_r=5, lower_l=None, upper_h=None,
                             variant=variant, enhanced_full_policy=policy)
    buffer = run_random_operations(config, 200_000, seed=11)
    counters = buffer.counters
    assert counters.rt_arrivals + counters.nrt_arrivals > 0
    if policy == 'block':
        assert counters.nrt_pushed_out == 0


@pytest.mark.slow
def test_million_random_operations_keep_invariants():
    config = TspBufferConfig(capacity_n=30, rt_limit_r=8, lower_l=None, upper_h=None,
                             variant=SchemeVariant.ORIGINAL)
    run_random_operations(config, 1_000_000, seed=2024)
