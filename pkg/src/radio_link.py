#!/usr/bin/env python3
"""
空口模型：移动性、路损、相关对数正态阴影、延迟 CQI、AMC 选择与 HARQ 软合并
TSP仿真系统 v1.0
"""

import math
import logging
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Deque, List, Optional, Sequence, Tuple

import numpy as np

from tsp_buffer import PDU_SIZE_BITS, Pdu, TspBuffer
from utils import ConfigError, db_to_linear, linear_to_db, watts_to_dbm


# SF16 单码道每 2ms TTI 的符号数
SYMBOLS_PER_CODE = 480

MODULATION_BITS = {'QPSK': 2, '16QAM': 4}


@dataclass(frozen=True)
class AmcScheme:
    """调制编码方案"""
    name: str
    bits_per_symbol: int
    code_rate: float
    sinr_threshold_db: float

    def tbs_bits(self, n_codes: int) -> int:
        return int(math.floor(n_codes * SYMBOLS_PER_CODE * self.bits_per_symbol * self.code_rate + 1e-9))


def parse_scheme_name(name: str, sinr_threshold_db: float) -> AmcScheme:
    """解析形如 QPSK-1/2、16QAM-3/4 的方案名"""
    try:
        modulation, rate = name.strip().upper().split('-')
        bits = MODULATION_BITS[modulation]
        code_rate = float(Fraction(rate))
    except (ValueError, KeyError, ZeroDivisionError):
        raise ConfigError('amc.schemes', f"无法识别的 AMC 方案: {name}")
    return AmcScheme(f"{modulation}-{rate}", bits, code_rate, float(sinr_threshold_db))


# 门限与 radio.noise_interference_dbm 一起标定：600m、无阴影时 SINR 约 31dB，
# 会话内以最高档为主，深阴影时落到 QPSK-3/4 以下
DEFAULT_AMC_SCHEMES: Tuple[AmcScheme, ...] = (
    AmcScheme('QPSK-1/4', 2, 0.25, -10.0),
    AmcScheme('QPSK-1/2', 2, 0.50, -4.5),
    AmcScheme('16QAM-1/4', 4, 0.25, -2.0),
    AmcScheme('QPSK-3/4', 2, 0.75, 4.5),
    AmcScheme('16QAM-1/2', 4, 0.50, 5.5),
    AmcScheme('16QAM-3/4', 4, 0.75, 9.0),
)


def validate_amc_table(schemes: Sequence[AmcScheme], n_codes: int) -> None:
    """门限严格递增，TBS 不减"""
    if not schemes:
        raise ConfigError('amc.schemes', "AMC 方案表不能为空")
    for lower, upper in zip(schemes, schemes[1:]):
        if not lower.sinr_threshold_db < upper.sinr_threshold_db:
            raise ConfigError('amc.thresholds_db', f"门限必须严格递增: {lower.name} -> {upper.name}")
        if upper.tbs_bits(n_codes) < lower.tbs_bits(n_codes):
            raise ConfigError('amc.schemes', f"TBS 不能递减: {lower.name} -> {upper.name}")


@dataclass
class RadioConfig:
    start_distance_m: float = 600.0
    speed_kmh: float = 3.0
    cell_radius_m: float = 1000.0
    shadow_sigma_db: float = 8.0
    shadow_rho: float = 0.5
    shadow_update_s: float = 0.5
    total_power_w: float = 15.0
    hsdsch_power_w: float = 7.0
    cpich_power_w: float = 2.0
    # VoIP 丢包标定场景见 scenarios/voip_calibration.conf
    noise_interference_dbm: float = -132.0
    antenna_gain_db: float = 0.0
    cqi_latency_ttis: int = 3
    n_codes: int = 2
    max_retx: int = 4
    amc_schemes: Tuple[AmcScheme, ...] = DEFAULT_AMC_SCHEMES

    def __post_init__(self):
        self.amc_schemes = tuple(self.amc_schemes)
        if not 0 <= self.start_distance_m <= self.cell_radius_m:
            raise ConfigError('radio.start_distance_m', "起始距离必须在 [0, 小区半径] 内")
        if self.cell_radius_m <= 0:
            raise ConfigError('radio.cell_radius_m', "小区半径必须为正")
        if self.speed_kmh < 0:
            raise ConfigError('radio.speed_kmh', "速度不能为负")
        if self.shadow_sigma_db < 0:
            raise ConfigError('radio.shadow_sigma_db', "阴影标准差不能为负")
        if not -1 < self.shadow_rho < 1:
            raise ConfigError('radio.shadow_rho', "相关系数必须在 (-1, 1) 内")
        if self.shadow_update_s <= 0:
            raise ConfigError('radio.shadow_update_s', "阴影更新间隔必须为正")
        if self.hsdsch_power_w <= 0 or self.hsdsch_power_w + self.cpich_power_w > self.total_power_w:
            raise ConfigError('radio.hsdsch_power_w', "HS-PDSCH 与 CPICH 功率之和不能超过总功率")
        if self.cqi_latency_ttis < 0:
            raise ConfigError('radio.cqi_latency_ttis', "CQI 时延不能为负")
        if not 1 <= self.n_codes <= 15:
            raise ConfigError('radio.n_codes', "码道数必须在 1..15 内")
        if self.max_retx < 1:
            raise ConfigError('radio.max_retx', "最大传输次数至少为 1")
        validate_amc_table(self.amc_schemes, self.n_codes)

    @property
    def speed_mps(self) -> float:
        return self.speed_kmh / 3.6


def path_loss_db(distance_m: float) -> float:
    """路损 148 + 40·log10(R)，R 单位 km"""
    if distance_m <= 0:
        raise ValueError(f"距离必须为正: {distance_m}")
    return 148.0 + 40.0 * math.log10(distance_m / 1000.0)


@dataclass
class ChannelState:
    distance_m: float
    shadow_db: float
    sinr_history: Deque[float]
    tti_index: int = -1


class ChannelModel:
    """单用户信道：线性远离基站 + AR(1) 对数正态阴影"""

    def __init__(self, config: RadioConfig, rng: np.random.Generator, tti_s: float = 0.002):
        self.config = config
        self.rng = rng
        self.tti_s = tti_s
        self.shadow_update_ttis = max(1, int(round(config.shadow_update_s / tti_s)))
        self.tx_power_dbm = watts_to_dbm(config.hsdsch_power_w)
        self.state = ChannelState(
            distance_m=config.start_distance_m,
            shadow_db=float(rng.normal(0.0, config.shadow_sigma_db)),
            sinr_history=deque(maxlen=config.cqi_latency_ttis + 1),
        )
        self.logger = logging.getLogger(__name__)

    def update_shadow(self) -> float:
        """AR(1) 更新，新息方差 σ²(1−ρ²) 保持平稳标准差 σ"""
        rho = self.config.shadow_rho
        innovation = self.config.shadow_sigma_db * math.sqrt(1.0 - rho * rho)
        self.state.shadow_db = rho * self.state.shadow_db + innovation * float(self.rng.normal())
        return self.state.shadow_db

    def distance_at(self, tti_index: int) -> float:
        travelled = self.config.speed_mps * tti_index * self.tti_s
        return min(self.config.start_distance_m + travelled, self.config.cell_radius_m)

    def sinr_db(self, distance_m: float, shadow_db: float) -> float:
        c = self.config
        return (self.tx_power_dbm + c.antenna_gain_db - path_loss_db(max(distance_m, 1.0))
                - shadow_db - c.noise_interference_dbm)

    def step(self, tti_index: int) -> float:
        """推进一个 TTI，返回当前实际 SINR (dB)"""
        if tti_index > 0 and tti_index % self.shadow_update_ttis == 0:
            self.update_shadow()

        self.state.tti_index = tti_index
        self.state.distance_m = self.distance_at(tti_index)
        sinr = self.sinr_db(self.state.distance_m, self.state.shadow_db)
        self.state.sinr_history.append(sinr)
        return sinr

    def stale_sinr(self) -> Optional[float]:
        history = self.state.sinr_history
        if len(history) <= self.config.cqi_latency_ttis:
            return None
        return history[-1 - self.config.cqi_latency_ttis]


def select_amc(sinr_history: Sequence[float], cqi_latency_ttis: int,
               schemes: Sequence[AmcScheme]) -> Optional[AmcScheme]:
    """按 cqi_latency_ttis 个 TTI 之前的 SINR 选择最高档可用方案"""
    if len(sinr_history) <= cqi_latency_ttis:
        return None

    stale = sinr_history[-1 - cqi_latency_ttis]
    selected = None
    for scheme in schemes:
        if scheme.sinr_threshold_db <= stale:
            selected = scheme
        else:
            break
    return selected


@dataclass
class HarqProcess:
    """单个停等 HARQ 进程"""
    block: List[Pdu]
    sinr_init_db: float
    scheme: AmcScheme
    tbs_bits: int
    first_tx_at: float
    tx_count: int = 1

    @property
    def effective_sinr_db(self) -> float:
        """软合并：有效 SINR = N × SINR_init（线性域）"""
        return linear_to_db(self.tx_count * db_to_linear(self.sinr_init_db))


@dataclass
class TtiOutcome:
    kind: str  # idle / delivered / retx_pending / discarded
    pdus: List[Pdu] = field(default_factory=list)
    new_block: bool = False
    scheme: Optional[AmcScheme] = None
    tbs_bits: int = 0


@dataclass
class LinkCounters:
    first_transmissions: int = 0
    retransmissions: int = 0
    delivered_blocks: int = 0
    discarded_blocks: int = 0
    discarded_pdus: int = 0
    idle_ttis: int = 0


class RadioLink:
    """HS-DSCH 发送端：AMC + 单进程 HARQ"""

    def __init__(self, config: RadioConfig, channel: ChannelModel):
        self.config = config
        self.channel = channel
        self.harq: Optional[HarqProcess] = None
        self.counters = LinkCounters()
        self.logger = logging.getLogger(__name__)

    def in_flight_pdus(self) -> List[Pdu]:
        return list(self.harq.block) if self.harq else []

    def transmit_tti(self, buffer: TspBuffer, sinr_now_db: float, now: float) -> TtiOutcome:
        """本 TTI 的发送：优先重传挂起的 HARQ 块，否则按 AMC 取新块"""
        if self.harq is not None:
            return self._retransmit()

        scheme = select_amc(self.channel.state.sinr_history, self.config.cqi_latency_ttis, self.config.amc_schemes)
        if scheme is None:
            self.counters.idle_ttis += 1
            return TtiOutcome('idle')

        tbs = scheme.tbs_bits(self.config.n_codes)
        if tbs < PDU_SIZE_BITS:
            # 不对 PDU 分片
            self.counters.idle_ttis += 1
            return TtiOutcome('idle', scheme=scheme, tbs_bits=tbs)

        block = buffer.dequeue_up_to(tbs, now)
        if not block:
            self.counters.idle_ttis += 1
            return TtiOutcome('idle', scheme=scheme, tbs_bits=tbs)

        for pdu in block:
            pdu.first_tx_at = now
        self.counters.first_transmissions += 1

        if sinr_now_db >= scheme.sinr_threshold_db:
            self.counters.delivered_blocks += 1
            return TtiOutcome('delivered', block, new_block=True, scheme=scheme, tbs_bits=tbs)

        if self.config.max_retx <= 1:
            return self._discard(block, scheme, tbs, new_block=True)

        self.harq = HarqProcess(block=block, sinr_init_db=sinr_now_db, scheme=scheme, tbs_bits=tbs, first_tx_at=now)
        return TtiOutcome('retx_pending', block, new_block=True, scheme=scheme, tbs_bits=tbs)

    def _retransmit(self) -> TtiOutcome:
        harq = self.harq
        harq.tx_count += 1
        self.counters.retransmissions += 1

        if harq.effective_sinr_db >= harq.scheme.sinr_threshold_db:
            self.harq = None
            self.counters.delivered_blocks += 1
            return TtiOutcome('delivered', harq.block, scheme=harq.scheme, tbs_bits=harq.tbs_bits)

        if harq.tx_count >= self.config.max_retx:
            self.harq = None
            return self._discard(harq.block, harq.scheme, harq.tbs_bits)

        return TtiOutcome('retx_pending', harq.block, scheme=harq.scheme, tbs_bits=harq.tbs_bits)

    def _discard(self, block: List[Pdu], scheme: AmcScheme, tbs: int, new_block: bool = False) -> TtiOutcome:
        self.counters.discarded_blocks += 1
        self.counters.discarded_pdus += len(block)
        self.logger.debug(f"HARQ 达到最大传输次数，丢弃 {len(block)} 个 PDU")
        return TtiOutcome('discarded', block, new_block=new_block, scheme=scheme, tbs_bits=tbs)
