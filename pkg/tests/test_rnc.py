"""
RNC 分段与 Iub 发送测试
"""

import pytest

from flow_control import CapacityGrant
from rnc import RncModel
from sources import Packet
from tsp_buffer import FlowClass
from utils import InvariantViolation


def packet(flow: FlowClass, bits: int, packet_id: int = 0, at: float = 0.0) -> Packet:
    return Packet(id=packet_id, flow=flow, size_bits=bits, generated_at=at, rnc_arrival_at=at + 0.05)


def grant(max_pdus: int, effective_at: float = 0.0, valid_for: float = 0.05) -> CapacityGrant:
    return CapacityGrant(max_pdus=max_pdus, issued_at=effective_at - 0.02, effective_at=effective_at,
                         valid_for=valid_for)


@pytest.mark.parametrize('bits, expected', [(304, 1), (320, 1), (321, 2), (3840, 12)])
def test_segmentation_counts(bits, expected):
    assert len(RncModel().segment(packet(FlowClass.NRT, bits))) == expected


def test_segments_carry_source_and_unique_ids():
    rnc = RncModel()
    first = rnc.accept_packet(packet(FlowClass.NRT, 3840, packet_id=4, at=1.0))
    second = rnc.accept_packet(packet(FlowClass.NRT, 640, packet_id=5, at=1.1))
    ids = [pdu.id for pdu in first + second]
    assert ids == list(range(14))
    assert all(pdu.source_packet_id == 4 for pdu in first)
    assert first[0].created_at == pytest.approx(1.05)


def test_ungated_transfer_sends_everything():
    rnc = RncModel(credit_gated=False)
    rnc.accept_packet(packet(FlowClass.RT, 304))
    rnc.accept_packet(packet(FlowClass.NRT, 3840))
    sent = rnc.transfer_tick(0.0)
    assert len(sent) == 13
    assert sent[0].flow is FlowClass.RT
    assert rnc.backlog() == (0, 0)


def test_gated_without_grant_holds_nrt_only():
    rnc = RncModel()
    rnc.accept_packet(packet(FlowClass.RT, 304))
    rnc.accept_packet(packet(FlowClass.NRT, 3840))
    sent = rnc.transfer_tick(0.0)
    assert [pdu.flow for pdu in sent] == [FlowClass.RT]
    assert rnc.backlog() == (0, 12)


def test_even_spread_over_frames():
    rnc = RncModel(frames_per_interval=5)
    for k in range(3):
        rnc.accept_packet(packet(FlowClass.NRT, 3840, packet_id=k))
    rnc.on_grant(grant(19), 0.0)

    per_frame = [len(rnc.transfer_tick(0.01 * f)) for f in range(6)]
    assert per_frame == [4, 4, 4, 4, 3, 0]
    assert rnc.state.dispatched_under_grant == 19


def test_burst_spread_uses_credit_at_once():
    rnc = RncModel(frames_per_interval=5, credit_spread='burst')
    for k in range(3):
        rnc.accept_packet(packet(FlowClass.NRT, 3840, packet_id=k))
    rnc.on_grant(grant(19), 0.0)
    assert len(rnc.transfer_tick(0.0)) == 19
    assert len(rnc.transfer_tick(0.01)) == 0


def test_credit_is_upper_bound_not_quota():
    rnc = RncModel()
    rnc.accept_packet(packet(FlowClass.NRT, 640))
    rnc.on_grant(grant(19), 0.0)
    assert len(rnc.transfer_tick(0.0)) == 2
    assert rnc.transfer_tick(0.01) == []


def test_grant_before_effective_time_is_rejected():
    with pytest.raises(InvariantViolation):
        RncModel().on_grant(grant(5, effective_at=1.0), 0.5)


def test_out_of_order_grant_is_ignored():
    rnc = RncModel()
    assert rnc.on_grant(grant(10, effective_at=1.0), 1.0)
    assert not rnc.on_grant(grant(3, effective_at=0.5), 1.0)
    assert rnc.state.active_grant.max_pdus == 10
    assert rnc.state.counters.stale_grants == 1


def test_new_grant_replaces_unused_credit():
    rnc = RncModel()
    rnc.on_grant(grant(10, effective_at=0.0), 0.0)
    rnc.on_grant(grant(2, effective_at=0.05), 0.05)
    assert rnc.state.grant_pdus_remaining == 2
    assert rnc.state.dispatched_under_grant == 0


def test_expired_grant_allows_nothing():
    rnc = RncModel()
    rnc.accept_packet(packet(FlowClass.NRT, 3840))
    rnc.on_grant(grant(19, effective_at=0.0, valid_for=0.05), 0.0)
    assert rnc.transfer_tick(0.05) == []


def test_conservation_holds_after_transfers():
    rnc = RncModel()
    rnc.accept_packet(packet(FlowClass.RT, 304))
    rnc.accept_packet(packet(FlowClass.NRT, 3840))
    rnc.on_grant(grant(7), 0.0)
    rnc.transfer_tick(0.0)
    rnc.check_conservation()
    assert rnc.state.counters.transferred[FlowClass.NRT] == 2
