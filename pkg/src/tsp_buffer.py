#!/usr/bin/env python3
"""
Node B 用户缓存（时间-空间优先级 TSP）
TSP仿真系统 v1.0

RT PDU 排在 NRT PDU 之前（非抢占式时间优先），RT 个数受阈值 R 限制，
为 NRT 让出空间（空间优先）。原始方案在缓存满时推出 NRT 队尾；
增强方案依赖 Iub 流控预留空余容量，不应出现推出。
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, List, NamedTuple, Optional

from utils import ConfigError, InvariantViolation


PDU_SIZE_BITS = 336


class FlowClass(str, Enum):
    """业务流类别"""
    RT = 'RT'
    NRT = 'NRT'


class SchemeVariant(str, Enum):
    """缓存管理方案"""
    ORIGINAL = 'Original'
    ENHANCED = 'Enhanced'


class EnqueueResult(Enum):
    ACCEPTED = 'Accepted'
    BLOCKED = 'Blocked'
    ACCEPTED_WITH_PUSH_OUT = 'AcceptedWithPushOut'
    DROPPED_TAIL = 'DroppedTail'


@dataclass
class Pdu:
    """MAC-d 协议数据单元"""
    id: int
    flow: FlowClass
    source_packet_id: int
    created_at: float
    size_bits: int = PDU_SIZE_BITS
    nodeb_enqueued_at: Optional[float] = None
    first_tx_at: Optional[float] = None

    def __post_init__(self):
        if self.size_bits != PDU_SIZE_BITS:
            raise ValueError(f"PDU 大小必须为 {PDU_SIZE_BITS} bit: {self.size_bits}")


@dataclass
class TspBufferConfig:
    """TSP 缓存参数（单位：PDU 个数）"""
    capacity_n: int = 300
    rt_limit_r: int = 20
    # None 表示只使用缓存机制、不配流控阈值
    lower_l: Optional[int] = 120
    upper_h: Optional[int] = 240
    variant: SchemeVariant = SchemeVariant.ENHANCED
    # 增强方案缓存满时 RT 到达的处理：push_out（记录异常）或 block
    enhanced_full_policy: str = 'push_out'

    def __post_init__(self):
        self.variant = SchemeVariant(self.variant)

        if self.capacity_n <= 0:
            raise ConfigError('buffer.n', f"N 必须为正整数，当前为 {self.capacity_n}")
        if not 0 < self.rt_limit_r <= self.capacity_n:
            raise ConfigError('buffer.r', f"需满足 0 < R <= N，当前 R={self.rt_limit_r}, N={self.capacity_n}")
        if self.enhanced_full_policy not in ('push_out', 'block'):
            raise ConfigError('buffer.enhanced_full_policy', "只能为 push_out 或 block")

        if self.variant is SchemeVariant.ENHANCED and self.has_thresholds:
            if self.lower_l is None or self.upper_h is None:
                raise ConfigError('thresholds.l', "L 与 H 必须同时给出")
            if not 0 < self.lower_l:
                raise ConfigError('thresholds.l', f"需满足 L > 0，当前 L={self.lower_l}")
            if not self.lower_l < self.upper_h:
                raise ConfigError('thresholds.h', f"需满足 L < H，当前 L={self.lower_l}, H={self.upper_h}")
            if not self.upper_h < self.capacity_n:
                raise ConfigError('thresholds.h', f"需满足 H < N，当前 H={self.upper_h}, N={self.capacity_n}")

    @property
    def has_thresholds(self) -> bool:
        return self.lower_l is not None or self.upper_h is not None


class Occupancy(NamedTuple):
    rt_count: int
    nrt_count: int
    total: int


@dataclass
class BufferCounters:
    """缓存计数器（整个运行期，不扣除预热）"""
    rt_arrivals: int = 0
    rt_accepted: int = 0
    rt_blocked: int = 0
    nrt_arrivals: int = 0
    nrt_accepted: int = 0
    nrt_dropped_tail: int = 0
    nrt_pushed_out: int = 0
    rt_dequeued: int = 0
    nrt_dequeued: int = 0
    enhanced_pushout_anomalies: int = 0


class TspBuffer:
    """Node B MAC-hs 单用户 TSP 缓存"""

    def __init__(self, config: TspBufferConfig):
        self.config = config
        self.rt_fifo: Deque[Pdu] = deque()
        self.nrt_fifo: Deque[Pdu] = deque()
        self.counters = BufferCounters()
        self.logger = logging.getLogger(__name__)

    def __len__(self) -> int:
        return len(self.rt_fifo) + len(self.nrt_fifo)

    def occupancy(self) -> Occupancy:
        rt_count = len(self.rt_fifo)
        nrt_count = len(self.nrt_fifo)
        return Occupancy(rt_count, nrt_count, rt_count + nrt_count)

    def enqueue(self, pdu: Pdu, now: float) -> EnqueueResult:
        if pdu.flow is FlowClass.RT:
            return self.enqueue_rt(pdu, now)
        return self.enqueue_nrt(pdu, now)

    def enqueue_rt(self, pdu: Pdu, now: float) -> EnqueueResult:
        """RT PDU 入队：受 R 限制，缓存满时按方案推出 NRT 队尾"""
        if pdu.flow is not FlowClass.RT:
            raise ValueError(f"enqueue_rt 只接受 RT PDU: {pdu.id}")

        self.counters.rt_arrivals += 1

        if len(self.rt_fifo) >= self.config.rt_limit_r:
            self.counters.rt_blocked += 1
            return EnqueueResult.BLOCKED

        if len(self) < self.config.capacity_n:
            self._admit_rt(pdu, now)
            return EnqueueResult.ACCEPTED

        # 缓存已满且 RT 未达上限
        if self.config.variant is SchemeVariant.ENHANCED:
            self.counters.enhanced_pushout_anomalies += 1
            # 只对首次异常告警，其余降为 DEBUG
            log = self.logger.warning if self.counters.enhanced_pushout_anomalies == 1 else self.logger.debug
            log(f"增强方案出现缓存满 RT 到达 (t={now:.3f}s, 第 {self.counters.enhanced_pushout_anomalies} 次)")
            if self.config.enhanced_full_policy == 'block':
                self.counters.rt_blocked += 1
                return EnqueueResult.BLOCKED

        self.nrt_fifo.pop()
        self.counters.nrt_pushed_out += 1
        self._admit_rt(pdu, now)
        return EnqueueResult.ACCEPTED_WITH_PUSH_OUT

    def enqueue_nrt(self, pdu: Pdu, now: float) -> EnqueueResult:
        """NRT PDU 入队：缓存满则尾部丢弃"""
        if pdu.flow is not FlowClass.NRT:
            raise ValueError(f"enqueue_nrt 只接受 NRT PDU: {pdu.id}")

        self.counters.nrt_arrivals += 1

        if len(self) >= self.config.capacity_n:
            self.counters.nrt_dropped_tail += 1
            return EnqueueResult.DROPPED_TAIL

        pdu.nodeb_enqueued_at = now
        self.nrt_fifo.append(pdu)
        self.counters.nrt_accepted += 1
        self._check_bounds()
        return EnqueueResult.ACCEPTED

    def dequeue_up_to(self, max_bits: int, now: float) -> List[Pdu]:
        """按 RT 优先、各类 FIFO 取出整 PDU，总长不超过 max_bits"""
        if max_bits < 0:
            raise ValueError(f"max_bits 不能为负: {max_bits}")

        block: List[Pdu] = []
        budget = max_bits
        for fifo in (self.rt_fifo, self.nrt_fifo):
            while fifo and fifo[0].size_bits <= budget:
                pdu = fifo.popleft()
                budget -= pdu.size_bits
                block.append(pdu)
            if fifo:
                # 当前类还有剩余说明预算已不足一个 PDU
                break

        for pdu in block:
            if pdu.flow is FlowClass.RT:
                self.counters.rt_dequeued += 1
            else:
                self.counters.nrt_dequeued += 1
        return block

    def _admit_rt(self, pdu: Pdu, now: float) -> None:
        pdu.nodeb_enqueued_at = now
        self.rt_fifo.append(pdu)
        self.counters.rt_accepted += 1
        self._check_bounds()

    def _check_bounds(self) -> None:
        if len(self.rt_fifo) > self.config.rt_limit_r:
            raise InvariantViolation(f"RT 队列超过 R: {len(self.rt_fifo)} > {self.config.rt_limit_r}")
        if len(self) > self.config.capacity_n:
            raise InvariantViolation(f"缓存总量超过 N: {len(self)} > {self.config.capacity_n}")

    def check_conservation(self) -> None:
        """校验计数守恒关系"""
        c = self.counters
        if c.rt_arrivals != c.rt_accepted + c.rt_blocked:
            raise InvariantViolation(f"RT 到达计数不守恒: {c}")
        if c.nrt_arrivals != c.nrt_accepted + c.nrt_dropped_tail:
            raise InvariantViolation(f"NRT 到达计数不守恒: {c}")
        if c.nrt_accepted != c.nrt_dequeued + len(self.nrt_fifo) + c.nrt_pushed_out:
            raise InvariantViolation(f"NRT 出队计数不守恒: {c}")
        if c.rt_accepted != c.rt_dequeued + len(self.rt_fifo):
            raise InvariantViolation(f"RT 出队计数不守恒: {c}")
