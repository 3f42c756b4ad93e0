#!/usr/bin/env python3
"""
FTP 业务源（NRT，ETSI WWW 单分组呼叫）
TSP仿真系统 v1.0

到达间隔为几何分布的 TTI 个数（负指数分布的离散形式），均值 = 平均分组长度 / 速率。
分组长度默认固定 480 字节，可切换为同均值的几何分布。
"""

import logging
from dataclasses import dataclass

import numpy as np

from tsp_buffer import FlowClass
from utils import ConfigError
from .base import Packet, TrafficSource


@dataclass
class FtpConfig:
    rate_kbps: float = 128.0
    mean_packet_bytes: int = 480
    size_model: str = 'fixed'

    def __post_init__(self):
        if self.rate_kbps <= 0:
            raise ConfigError('ftp.rate_kbps', f"FTP 速率必须为正: {self.rate_kbps}")
        if self.mean_packet_bytes <= 0:
            raise ConfigError('ftp.mean_packet_bytes', "平均分组长度必须为正")
        if self.size_model not in ('fixed', 'geometric'):
            raise ConfigError('ftp.size_model', "只能为 fixed 或 geometric")

    @property
    def rate_bps(self) -> float:
        return self.rate_kbps * 1000.0


@dataclass
class FtpSourceState:
    offered_rate_bps: float
    tti_s: float = 0.002
    mean_packet_bytes: int = 480
    size_model: str = 'fixed'
    elapsed_ttis: int = 0
    next_packet_id: int = 0

    @property
    def mean_packet_bits(self) -> int:
        return self.mean_packet_bytes * 8

    @property
    def inter_arrival_mean_s(self) -> float:
        return self.mean_packet_bits / self.offered_rate_bps

    @property
    def arrival_probability(self) -> float:
        """每个 TTI 的到达概率（几何分布参数）"""
        return self.tti_s / self.inter_arrival_mean_s


def ftp_next_packet(state: FtpSourceState, rng: np.random.Generator) -> Packet:
    """抽取下一个 FTP 分组"""
    state.elapsed_ttis += int(rng.geometric(state.arrival_probability))

    if state.size_model == 'geometric':
        size_bits = int(rng.geometric(1.0 / state.mean_packet_bytes)) * 8
    else:
        size_bits = state.mean_packet_bits

    packet = Packet(
        id=state.next_packet_id,
        flow=FlowClass.NRT,
        size_bits=size_bits,
        generated_at=state.elapsed_ttis * state.tti_s,
    )
    state.next_packet_id += 1
    return packet


class FtpSource(TrafficSource):
    """FTP 业务源"""

    def __init__(self, config: FtpConfig, rng: np.random.Generator, tti_s: float = 0.002):
        super().__init__()
        self.config = config
        self.rng = rng
        self.state = FtpSourceState(
            offered_rate_bps=config.rate_bps,
            tti_s=tti_s,
            mean_packet_bytes=config.mean_packet_bytes,
            size_model=config.size_model,
        )
        if self.state.arrival_probability > 1:
            raise ConfigError('ftp.rate_kbps',
                              f"速率 {config.rate_kbps} kbps 超过每 TTI 一个分组的上限")
        self.logger = logging.getLogger(__name__)

    def _generate(self) -> Packet:
        return ftp_next_packet(self.state, self.rng)
