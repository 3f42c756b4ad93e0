#!/usr/bin/env python3
"""
VoIP ON/OFF 业务源（RT）
TSP仿真系统 v1.0

ON 期间每 20ms 发一个 304 bit 分组（15.2 kbps），ON/OFF 时长服从均值 3s 的负指数分布，
会话起始状态 ON/OFF 各 50%。
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from tsp_buffer import FlowClass
from utils import ConfigError
from .base import Packet, TrafficSource


class VoipPhase(str, Enum):
    ON = 'ON'
    OFF = 'OFF'


@dataclass
class VoipConfig:
    packet_bits: int = 304
    rate_bps: float = 15_200.0
    mean_phase_s: float = 3.0
    start_on_probability: float = 0.5

    def __post_init__(self):
        if self.packet_bits <= 0:
            raise ConfigError('voip.packet_bits', "分组长度必须为正")
        if self.rate_bps <= 0:
            raise ConfigError('voip.rate_bps', "速率必须为正")
        if self.mean_phase_s <= 0:
            raise ConfigError('voip.mean_phase_s', "ON/OFF 平均时长必须为正")
        if not 0 <= self.start_on_probability <= 1:
            raise ConfigError('voip.start_on_probability', "概率必须在 [0, 1] 内")

    @property
    def packet_interval_s(self) -> float:
        return self.packet_bits / self.rate_bps


@dataclass
class VoipSourceState:
    phase: VoipPhase
    phase_started_at: float
    phase_ends_at: float
    mean_phase_s: float = 3.0
    packet_interval_s: float = 0.020
    packet_bits: int = 304
    packets_in_phase: int = 0
    next_packet_id: int = 0


@dataclass(frozen=True)
class VoipEvent:
    time: float
    kind: str  # 'packet' 或 'phase'
    packet: Optional[Packet] = None
    phase: Optional[VoipPhase] = None


def initial_voip_state(config: VoipConfig, rng: np.random.Generator, start_at: float = 0.0) -> VoipSourceState:
    """会话开始：等概率处于 ON 或 OFF"""
    phase = VoipPhase.ON if rng.random() < config.start_on_probability else VoipPhase.OFF
    return VoipSourceState(
        phase=phase,
        phase_started_at=start_at,
        phase_ends_at=start_at + rng.exponential(config.mean_phase_s),
        mean_phase_s=config.mean_phase_s,
        packet_interval_s=config.packet_interval_s,
        packet_bits=config.packet_bits,
    )


def voip_next_event(state: VoipSourceState, rng: np.random.Generator) -> VoipEvent:
    """推进到下一个事件：ON 内的分组发送或 ON/OFF 切换"""
    if state.phase is VoipPhase.ON:
        # 由相位起点推算发送时刻，避免浮点累加误差
        t = state.phase_started_at + state.packets_in_phase * state.packet_interval_s
        if t < state.phase_ends_at:
            state.packets_in_phase += 1
            packet = Packet(
                id=state.next_packet_id,
                flow=FlowClass.RT,
                size_bits=state.packet_bits,
                generated_at=t,
            )
            state.next_packet_id += 1
            return VoipEvent(time=t, kind='packet', packet=packet)

    t = state.phase_ends_at
    state.phase = VoipPhase.OFF if state.phase is VoipPhase.ON else VoipPhase.ON

    state.phase_started_at = t
    state.phase_ends_at = t + rng.exponential(state.mean_phase_s)
    state.packets_in_phase = 0
    return VoipEvent(time=t, kind='phase', phase=state.phase)


class VoipSource(TrafficSource):
    """VoIP 业务源"""

    def __init__(self, config: VoipConfig, rng: np.random.Generator, start_at: float = 0.0):
        super().__init__()
        self.config = config
        self.rng = rng
        self.state = initial_voip_state(config, rng, start_at)
        self.on_periods: List[Tuple[float, float]] = []
        self.logger = logging.getLogger(__name__)

    def _generate(self) -> Packet:
        while True:
            started = self.state.phase_started_at
            was_on = self.state.phase is VoipPhase.ON
            event = voip_next_event(self.state, self.rng)
            if event.packet is not None:
                return event.packet
            if was_on:
                self.on_periods.append((started, event.time))

    def on_time_until(self, t: float) -> float:
        """[0, t] 内的累计 ON 时长"""
        on_time = sum(max(0.0, min(end, t) - start) for start, end in self.on_periods)
        if self.state.phase is VoipPhase.ON and t > self.state.phase_started_at:
            on_time += min(t, self.state.phase_ends_at) - self.state.phase_started_at
        return on_time
