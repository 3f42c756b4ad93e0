"""
Iub 流控测试
"""

import pytest

from flow_control import (
    CapacityGrant, CreditLedger, FlowControlParams, IubFlowController, RateLevel, grant_interval_default,
)
from utils import ConfigError


def controller(**overrides) -> IubFlowController:
    return IubFlowController(FlowControlParams(**overrides), lower_l=120, upper_h=240)


def test_default_grant_interval_is_fifty_ms():
    params = FlowControlParams()
    assert grant_interval_default(params) == pytest.approx(0.050)
    assert params.frames_per_interval == 5


def test_explicit_transfer_latency_changes_interval():
    params = FlowControlParams(pdu_transfer_latency_s=0.010)
    assert params.interval_s == pytest.approx(0.040)
    assert params.frames_per_interval == 4


@pytest.mark.parametrize('t', [1, 2, 5, 10, 30, 60])
def test_ewma_step_response(t):
    fc = controller(w_q=0.7)
    q = 1.0
    for _ in range(t):
        fc.update_aveq(q)
    expected = q * (1.0 - (1.0 - 0.7) ** t)
    assert abs(fc.state.aveq - expected) < 1e-12


def test_ewma_with_weight_one_tracks_queue():
    fc = controller(w_q=1.0)
    fc.update_aveq(17)
    assert fc.state.aveq == 17


@pytest.mark.parametrize('aveq, level, factor', [
    (0.0, RateLevel.FULL, 1.0),
    (120.0, RateLevel.FULL, 1.0),
    (120.5, RateLevel.REDUCED, 0.5),
    (240.0, RateLevel.REDUCED, 0.5),
    (240.01, RateLevel.STOPPED, 0.0),
])
def test_rate_levels(aveq, level, factor):
    fc = controller(lambda_nrt_bps=256_000.0, c_factor=0.5)
    fc.state.aveq = aveq
    assert fc.select_rate() == factor * 256_000.0
    assert fc.state.level is level


def test_first_grants_at_128_kbps():
    fc = controller(lambda_nrt_bps=128_000.0)
    grants = [fc.issue_grant(0.05 * k) for k in range(3)]
    assert [g.max_pdus for g in grants] == [19, 19, 19]
    assert all(g.level is RateLevel.FULL for g in grants)


def test_grant_timing_fields():
    grant = controller().issue_grant(1.0)
    assert isinstance(grant, CapacityGrant)
    assert grant.issued_at == 1.0
    assert grant.effective_at == pytest.approx(1.020)
    assert grant.valid_for == pytest.approx(0.050)


def test_fractional_credit_carries_over():
    fc = controller(lambda_nrt_bps=128_000.0)
    totals = [fc.issue_grant(0.05 * k).max_pdus for k in range(25)]
    # 每周期 19.047...，约 21 个周期累积出一个额外 PDU
    assert 20 in totals
    assert set(totals) <= {19, 20}


@pytest.mark.parametrize('rate_bps', [64_000.0, 128_000.0, 512_000.0, 1_024_000.0])
def test_long_run_credit_conservation(rate_bps):
    fc = controller(lambda_nrt_bps=rate_bps)
    intervals = 1000
    granted = sum(fc.issue_grant(0.05 * k).max_pdus for k in range(intervals))
    expected = rate_bps / 336 * 0.010 * 5 * intervals
    assert abs(granted - expected) <= 1.0


def test_stopped_level_grants_nothing():
    fc = controller()
    fc.state.aveq = 300.0
    grant = fc.issue_grant(0.0)
    assert grant.max_pdus == 0
    assert grant.level is RateLevel.STOPPED
    assert fc.level_counts[RateLevel.STOPPED] == 1


def test_reduced_level_halves_credit():
    fc = controller(lambda_nrt_bps=128_000.0, c_factor=0.5)
    fc.state.aveq = 200.0
    assert fc.issue_grant(0.0).max_pdus == 9


@pytest.mark.parametrize('overrides, key', [
    (dict(w_q=0.0), 'flow_control.w_q'),
    (dict(w_q=1.5), 'flow_control.w_q'),
    (dict(c_factor=1.0), 'flow_control.c'),
    (dict(iub_latency_s=-0.001), 'flow_control.iub_latency_ms'),
    (dict(grant_interval_s=0.055), 'flow_control.grant_interval_ms'),
    (dict(credit_spread='random'), 'flow_control.credit_spread'),
    (dict(allocation_factor=0.5), 'flow_control.allocation_factor'),
])
def test_params_reject_invalid_values(overrides, key):
    with pytest.raises(ConfigError) as excinfo:
        FlowControlParams(**overrides)
    assert excinfo.value.key == key


def test_spare_room_limit_caps_grant():
    fc = controller(lambda_nrt_bps=1_024_000.0)
    grant = fc.issue_grant(0.0, limit=40)
    assert grant.max_pdus == 40
    assert fc.capped_grants == 1
    assert fc.state.credit_fraction == 0.0


def test_limit_above_ideal_credit_is_ignored():
    fc = controller(lambda_nrt_bps=128_000.0)
    assert fc.issue_grant(0.0, limit=300).max_pdus == 19
    assert fc.capped_grants == 0


def test_exhausted_spare_room_grants_nothing():
    assert controller().issue_grant(0.0, limit=0).max_pdus == 0


def full_grant(max_pdus: int, issued_at: float) -> CapacityGrant:
    return CapacityGrant(max_pdus=max_pdus, issued_at=issued_at, effective_at=issued_at + 0.020, valid_for=0.050)


def test_ledger_counts_unarrived_credit():
    ledger = CreditLedger(transfer_latency_s=0.020)
    ledger.record_grant(full_grant(30, 0.0))
    assert ledger.outstanding(0.0) == 30

    # 窗口为 [0.040, 0.090)
    for _ in range(6):
        ledger.record_arrival(0.040)
    assert ledger.outstanding(0.050) == 24
    assert ledger.spare_room(capacity=300, occupancy=100, now=0.050) == 176


def test_ledger_settles_grant_at_window_end():
    ledger = CreditLedger(transfer_latency_s=0.020)
    ledger.record_grant(full_grant(30, 0.0))
    ledger.record_grant(full_grant(20, 0.050))
    for _ in range(5):
        ledger.record_arrival(0.080)
    # 0.090 起第一个授权结清，到达计入第二个授权
    ledger.record_arrival(0.090)
    assert ledger.outstanding(0.090) == 19
    assert len(ledger.grants) == 1


def test_ledger_ignores_arrivals_outside_windows():
    ledger = CreditLedger(transfer_latency_s=0.020)
    ledger.record_grant(full_grant(10, 0.0))
    ledger.record_arrival(0.030)
    assert ledger.outstanding(0.030) == 10


def test_spare_room_never_negative():
    ledger = CreditLedger(transfer_latency_s=0.020)
    ledger.record_grant(full_grant(50, 0.0))
    assert ledger.spare_room(capacity=300, occupancy=290, now=0.0) == 0
