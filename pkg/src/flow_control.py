#!/usr/bin/env python3
"""
Iub 流控模块（Node B 侧）
TSP仿真系统 v1.0

每个 TTI 用指数加权平均跟踪队列长度，按阈值 L/H 选择三档 NRT 速率，
每个授权周期向 RNC 下发信用（PDU 个数），经 Iub 信令时延后生效。
"""

import math
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional

from utils import ConfigError


class RateLevel(str, Enum):
    FULL = 'Full'
    REDUCED = 'Reduced'
    STOPPED = 'Stopped'


@dataclass
class FlowControlParams:
    """流控参数（时间单位：秒，速率：bit/s）"""
    w_q: float = 0.7
    c_factor: float = 0.5
    # 初始分配的 NRT PDU 速率（含 RLC 头），由 FTP 速率与 allocation_factor 推出
    lambda_nrt_bps: float = 128_000.0
    allocation_factor: float = 1.25
    spare_room_cap: bool = True
    pdu_size_bits: int = 336
    tti_rlc_s: float = 0.010
    iub_latency_s: float = 0.020
    # None 表示与 Iub 信令时延相同
    pdu_transfer_latency_s: Optional[float] = None
    # None 表示取默认授权周期
    grant_interval_s: Optional[float] = None
    credit_spread: str = 'even'

    def __post_init__(self):
        if not 0 < self.w_q <= 1:
            raise ConfigError('flow_control.w_q', f"需满足 0 < w_q <= 1，当前为 {self.w_q}")
        if not 0 < self.c_factor < 1:
            raise ConfigError('flow_control.c', f"需满足 0 < C < 1，当前为 {self.c_factor}")
        if self.lambda_nrt_bps < 0:
            raise ConfigError('ftp.rate_kbps', f"NRT 速率不能为负: {self.lambda_nrt_bps}")
        if self.allocation_factor < 1:
            raise ConfigError('flow_control.allocation_factor', f"分配系数不能小于 1，当前为 {self.allocation_factor}")
        if self.tti_rlc_s <= 0:
            raise ConfigError('flow_control.frame_ms', "HS-DSCH 帧长必须为正")
        if self.iub_latency_s < 0:
            raise ConfigError('flow_control.iub_latency_ms', "Iub 时延不能为负")
        if self.pdu_transfer_latency_s is not None and self.pdu_transfer_latency_s < 0:
            raise ConfigError('flow_control.pdu_transfer_latency_ms', "PDU 传输时延不能为负")
        if self.credit_spread not in ('even', 'burst'):
            raise ConfigError('flow_control.credit_spread', "只能为 even 或 burst")

        frames = self.interval_s / self.tti_rlc_s
        if self.interval_s <= 0 or abs(frames - round(frames)) > 1e-9:
            raise ConfigError('flow_control.grant_interval_ms',
                              f"授权周期必须是帧长的正整数倍，当前为 {self.interval_s}s")

    @property
    def transfer_latency_s(self) -> float:
        if self.pdu_transfer_latency_s is None:
            return self.iub_latency_s
        return self.pdu_transfer_latency_s

    @property
    def interval_s(self) -> float:
        if self.grant_interval_s is None:
            return grant_interval_default(self)
        return self.grant_interval_s

    @property
    def frames_per_interval(self) -> int:
        return int(round(self.interval_s / self.tti_rlc_s))


def grant_interval_default(params: FlowControlParams) -> float:
    """授权周期 = Iub 信令时延 + PDU 传输时延 + HS-DSCH 帧长"""
    return params.iub_latency_s + params.transfer_latency_s + params.tti_rlc_s


@dataclass
class FlowControlState:
    aveq: float = 0.0
    current_lambda: float = 0.0
    credit_fraction: float = 0.0
    level: RateLevel = RateLevel.FULL


@dataclass(frozen=True)
class CapacityGrant:
    """容量授权消息"""
    max_pdus: int
    issued_at: float
    effective_at: float
    valid_for: float
    level: RateLevel = RateLevel.FULL


class IubFlowController:
    """基于阈值的 Iub 信用流控"""

    def __init__(self, params: FlowControlParams, lower_l: float, upper_h: float):
        self.params = params
        self.lower_l = lower_l
        self.upper_h = upper_h
        self.state = FlowControlState(current_lambda=params.lambda_nrt_bps)
        self.level_counts: Dict[RateLevel, int] = {level: 0 for level in RateLevel}
        self.capped_grants = 0
        self.logger = logging.getLogger(__name__)

    def update_aveq(self, q_tti: float) -> float:
        """每个 TTI 用总队长 (RT + NRT) 更新平均队长"""
        w_q = self.params.w_q
        self.state.aveq = w_q * q_tti + (1.0 - w_q) * self.state.aveq
        return self.state.aveq

    def select_rate(self) -> float:
        """按平均队长选择 NRT 速率（严格超过阈值才降档）"""
        aveq = self.state.aveq
        if aveq > self.upper_h:
            level, rate = RateLevel.STOPPED, 0.0
        elif aveq > self.lower_l:
            level, rate = RateLevel.REDUCED, self.params.c_factor * self.params.lambda_nrt_bps
        else:
            level, rate = RateLevel.FULL, self.params.lambda_nrt_bps

        self.state.level = level
        self.state.current_lambda = rate
        return rate

    def compute_grant(self, now: float, limit: Optional[int] = None) -> CapacityGrant:
        """按当前速率计算本授权周期的信用，小数部分累积到下一周期

        limit 为 Node B 缓存的剩余空间；信用被截断时不累积小数部分。
        """
        p = self.params
        per_frame = self.state.current_lambda / p.pdu_size_bits * p.tti_rlc_s
        total = per_frame * p.frames_per_interval + self.state.credit_fraction

        max_pdus = int(math.floor(total + 1e-9))
        self.state.credit_fraction = max(0.0, total - max_pdus)
        if limit is not None and max_pdus > limit:
            self.logger.debug(f"{now:.3f} 信用 {max_pdus} 截断为剩余空间 {limit}")
            max_pdus = max(0, limit)
            self.state.credit_fraction = 0.0
            self.capped_grants += 1

        grant = CapacityGrant(
            max_pdus=max_pdus,
            issued_at=now,
            effective_at=now + p.iub_latency_s,
            valid_for=p.interval_s,
            level=self.state.level,
        )
        self.level_counts[self.state.level] += 1
        self.logger.debug(f"{now:.3f},{self.state.aveq:.3f},{self.state.level.value},{max_pdus}")
        return grant

    def issue_grant(self, now: float, limit: Optional[int] = None) -> CapacityGrant:
        """选择速率并生成授权"""
        self.select_rate()
        return self.compute_grant(now, limit)


@dataclass
class _OutstandingGrant:
    max_pdus: int
    arrivals_from: float
    arrivals_until: float
    arrived: int = 0

    @property
    def unarrived(self) -> int:
        return max(0, self.max_pdus - self.arrived)


class CreditLedger:
    """Node B 侧的在途信用账

    授权 g 放行的 NRT PDU 在 [生效 + 传输时延, 生效 + 有效期 + 传输时延) 内到达 Node B；
    窗口内到达的 NRT PDU 记到该授权上，窗口结束即结清。
    """

    _EPS = 1e-9

    def __init__(self, transfer_latency_s: float):
        self.transfer_latency_s = transfer_latency_s
        self.grants: List[_OutstandingGrant] = []

    def record_grant(self, grant: CapacityGrant) -> None:
        start = grant.effective_at + self.transfer_latency_s
        self.grants.append(_OutstandingGrant(grant.max_pdus, start, start + grant.valid_for))

    def record_arrival(self, now: float) -> None:
        for entry in self.grants:
            if entry.arrivals_from - self._EPS <= now < entry.arrivals_until - self._EPS:
                entry.arrived += 1
                return

    def outstanding(self, now: float) -> int:
        """已授权但尚未到达 Node B 的 NRT PDU 数"""
        self.grants = [g for g in self.grants if now < g.arrivals_until - self._EPS]
        return sum(g.unarrived for g in self.grants)

    def spare_room(self, capacity: int, occupancy: int, now: float) -> int:
        return max(0, capacity - occupancy - self.outstanding(now))
