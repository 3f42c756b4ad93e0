#!/usr/bin/env python3
"""
RNC 侧模型：RLC 分段、MAC-d 缓存与 Iub 发送
TSP仿真系统 v1.0

RT PDU 每帧立即发送，不受信用限制；NRT PDU 受 Node B 授权约束（增强方案），
授权内的信用默认均匀分摊到周期内各帧。原始方案不做信用控制。
"""

import math
import logging
from collections import deque
from dataclasses import dataclass, field
from itertools import count
from typing import Deque, Dict, List, Optional, Tuple

from flow_control import CapacityGrant
from sources import Packet
from tsp_buffer import PDU_SIZE_BITS, FlowClass, Pdu
from utils import InvariantViolation


SDU_SIZE_BITS = 320


@dataclass
class RncCounters:
    segmented: Dict[FlowClass, int] = field(default_factory=lambda: {f: 0 for f in FlowClass})
    transferred: Dict[FlowClass, int] = field(default_factory=lambda: {f: 0 for f in FlowClass})
    stale_grants: int = 0


@dataclass
class RncState:
    rt_pending: Deque[Pdu] = field(default_factory=deque)
    nrt_pending: Deque[Pdu] = field(default_factory=deque)
    active_grant: Optional[CapacityGrant] = None
    grant_pdus_remaining: int = 0
    grant_frames_remaining: int = 0
    dispatched_under_grant: int = 0
    counters: RncCounters = field(default_factory=RncCounters)


class RncModel:
    """RNC MAC-d 缓存与 Iub 发送端"""

    def __init__(self, frames_per_interval: int = 5, credit_gated: bool = True, credit_spread: str = 'even'):
        self.state = RncState()
        self.frames_per_interval = frames_per_interval
        self.credit_gated = credit_gated
        self.credit_spread = credit_spread
        self._pdu_ids = count()
        self.logger = logging.getLogger(__name__)

    def segment(self, packet: Packet) -> List[Pdu]:
        """按 320 bit SDU 分段，加 16 bit 头得到 336 bit PDU（末段补零）"""
        n_pdus = math.ceil(packet.size_bits / SDU_SIZE_BITS)
        created_at = packet.rnc_arrival_at if packet.rnc_arrival_at is not None else packet.generated_at
        return [
            Pdu(
                id=next(self._pdu_ids),
                flow=packet.flow,
                source_packet_id=packet.id,
                created_at=created_at,
                size_bits=PDU_SIZE_BITS,
            )
            for _ in range(n_pdus)
        ]

    def accept_packet(self, packet: Packet) -> List[Pdu]:
        """分组到达 RNC：分段后进入对应 MAC-d 缓存"""
        pdus = self.segment(packet)
        queue = self.state.rt_pending if packet.flow is FlowClass.RT else self.state.nrt_pending
        queue.extend(pdus)
        self.state.counters.segmented[packet.flow] += len(pdus)
        return pdus

    def on_grant(self, grant: CapacityGrant, now: float) -> bool:
        """收到新授权：替换旧授权，未用完的信用作废"""
        if now + 1e-9 < grant.effective_at:
            raise InvariantViolation(f"授权尚未生效就被使用: now={now}, effective_at={grant.effective_at}")

        active = self.state.active_grant
        if active is not None and grant.effective_at < active.effective_at:
            self.state.counters.stale_grants += 1
            self.logger.warning(f"忽略过期授权: effective_at={grant.effective_at:.3f} < {active.effective_at:.3f}")
            return False

        self.state.active_grant = grant
        self.state.grant_pdus_remaining = grant.max_pdus
        self.state.grant_frames_remaining = self.frames_per_interval
        self.state.dispatched_under_grant = 0
        return True

    def transfer_tick(self, now: float) -> List[Pdu]:
        """HS-DSCH 帧边界：发送全部 RT 与授权允许的 NRT"""
        state = self.state
        dispatched: List[Pdu] = list(state.rt_pending)
        state.rt_pending.clear()

        nrt_quota = self._nrt_quota(now)
        for _ in range(min(nrt_quota, len(state.nrt_pending))):
            dispatched.append(state.nrt_pending.popleft())

        nrt_count = sum(1 for pdu in dispatched if pdu.flow is FlowClass.NRT)
        rt_count = len(dispatched) - nrt_count

        if self.credit_gated and state.active_grant is not None:
            state.grant_pdus_remaining -= nrt_count
            state.dispatched_under_grant += nrt_count
            if state.dispatched_under_grant > state.active_grant.max_pdus:
                raise InvariantViolation(
                    f"NRT 发送超过授权: {state.dispatched_under_grant} > {state.active_grant.max_pdus}")

        state.counters.transferred[FlowClass.RT] += rt_count
        state.counters.transferred[FlowClass.NRT] += nrt_count
        return dispatched

    def _nrt_quota(self, now: float) -> int:
        state = self.state
        if not self.credit_gated:
            return len(state.nrt_pending)

        grant = state.active_grant
        if grant is None or state.grant_pdus_remaining <= 0:
            return 0
        if now + 1e-9 >= grant.effective_at + grant.valid_for or state.grant_frames_remaining <= 0:
            return 0

        if self.credit_spread == 'burst':
            quota = state.grant_pdus_remaining
        else:
            quota = math.ceil(state.grant_pdus_remaining / state.grant_frames_remaining)
        state.grant_frames_remaining -= 1
        return quota

    def backlog(self) -> Tuple[int, int]:
        return len(self.state.rt_pending), len(self.state.nrt_pending)

    def check_conservation(self) -> None:
        """RNC 无损：分段数 = 已发送 + 待发送"""
        counters = self.state.counters
        pending = {FlowClass.RT: len(self.state.rt_pending), FlowClass.NRT: len(self.state.nrt_pending)}
        for flow in FlowClass:
            if counters.segmented[flow] != counters.transferred[flow] + pending[flow]:
                raise InvariantViolation(f"RNC {flow.value} PDU 计数不守恒")
