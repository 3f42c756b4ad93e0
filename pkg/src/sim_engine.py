#!/usr/bin/env python3
"""
仿真引擎
TSP仿真系统 v1.0

虚拟时钟为整数微秒，由 simpy 驱动，每个 TTI 依次执行固定的阶段：
  rnc       RNC 接收授权、吸收业务分组、帧边界向 Iub 发送
  arrivals  Iub 上已到达的 PDU 进入 Node B 缓存
  channel   信道推进一个 TTI
  transmit  AMC/HARQ 发送
  aveq      用发送后的队长更新平均队长
  grant     到期则下发授权
同一时刻的事件严格按上述顺序处理，阶段内按插入顺序。
"""

import logging
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Deque, Dict, List, Optional, Tuple

import numpy as np
import simpy

from config import SimConfig
from flow_control import CapacityGrant, CreditLedger, IubFlowController, RateLevel
from radio_link import ChannelModel, RadioLink, TtiOutcome
from rnc import RncModel
from sources import FtpSource, VoipSource, apply_cn_delay
from tsp_buffer import (
    PDU_SIZE_BITS, BufferCounters, EnqueueResult, FlowClass, Pdu, SchemeVariant, TspBuffer, TspBufferConfig,
)
from utils import (
    InvariantViolation, confidence_interval, digest_of, rng_substream, safe_ratio, to_seconds, to_us,
)


@dataclass
class MetricsReport:
    """单次运行的测量结果（仅统计预热之后）"""
    scenario: str
    variant: str
    ftp_rate_kbps: float
    seed: int
    duration_s: float
    warmup_s: float
    measured_s: float
    rt_arrivals: int = 0
    rt_blocked: int = 0
    nrt_arrivals: int = 0
    nrt_dropped_tail: int = 0
    nrt_pushed_out: int = 0
    rt_delivered: int = 0
    nrt_delivered: int = 0
    rt_loss_prob: Optional[float] = None
    nrt_loss_prob: Optional[float] = None
    rt_mean_delay_s: Optional[float] = None
    rt_mean_delivery_delay_s: Optional[float] = None
    nrt_throughput_bps: float = 0.0
    rnc_backlog_mean_pdus: Optional[float] = None
    rnc_backlog_max_pdus: int = 0
    air_discards: int = 0
    harq_retransmissions: int = 0
    grant_share_full: Optional[float] = None
    grant_share_reduced: Optional[float] = None
    grant_share_stopped: Optional[float] = None
    enhanced_pushout_anomalies: int = 0
    voip_on_fraction: Optional[float] = None
    digest: str = ''

    def to_dict(self) -> Dict:
        return asdict(self)

    def compute_digest(self) -> str:
        payload = self.to_dict()
        payload.pop('digest')
        return digest_of(payload)


@dataclass
class RunTraces:
    """可选的运行轨迹，列顺序见 results_manager"""
    packets: List[Tuple] = field(default_factory=list)
    radio: List[Tuple] = field(default_factory=list)
    iub: List[Tuple] = field(default_factory=list)
    grants: List[Tuple] = field(default_factory=list)


class TtiDrivenSimulator:
    """按 TTI 推进的仿真骨架，子类实现各阶段"""

    STAGES = ('rnc', 'arrivals', 'channel', 'transmit', 'aveq', 'grant')

    def __init__(self, n_ttis: int, tti_us: int):
        self.n_ttis = n_ttis
        self.tti_us = tti_us
        self.env = simpy.Environment()
        self._stages = [getattr(self, f"stage_{name}") for name in self.STAGES]
        self._last_now = -1

    def _clock(self):
        for k in range(self.n_ttis):
            self.tti(k, int(self.env.now))
            yield self.env.timeout(self.tti_us)

    def tti(self, k: int, now_us: int) -> None:
        if now_us < self._last_now:
            raise InvariantViolation(f"虚拟时间倒退: {now_us} < {self._last_now}")
        self._last_now = now_us
        for stage in self._stages:
            stage(k, now_us)

    def run_clock(self) -> None:
        self.env.process(self._clock())
        self.env.run()

    def stage_rnc(self, k: int, now_us: int) -> None:
        pass

    def stage_arrivals(self, k: int, now_us: int) -> None:
        pass

    def stage_channel(self, k: int, now_us: int) -> None:
        pass

    def stage_transmit(self, k: int, now_us: int) -> None:
        pass

    def stage_aveq(self, k: int, now_us: int) -> None:
        pass

    def stage_grant(self, k: int, now_us: int) -> None:
        pass


class HsdpaSimulator(TtiDrivenSimulator):
    """单用户 HSDPA 下行完整模型"""

    def __init__(self, config: SimConfig, scenario: str = '', trace: Optional[bool] = None):
        tti_us = to_us(config.tti_s)
        super().__init__(n_ttis=int(round(config.duration_s / config.tti_s)), tti_us=tti_us)
        self.config = config
        self.scenario = scenario
        self.trace_enabled = config.trace if trace is None else trace
        self.traces = RunTraces()
        self.logger = logging.getLogger(__name__)

        fc = config.flow_control
        enhanced = config.variant is SchemeVariant.ENHANCED

        self.voip = VoipSource(config.voip, rng_substream(config.seed, 'voip'))
        self.ftp = FtpSource(config.ftp, rng_substream(config.seed, 'ftp'), tti_s=config.tti_s)
        self.channel = ChannelModel(config.radio, rng_substream(config.seed, 'shadowing'), tti_s=config.tti_s)
        self.link = RadioLink(config.radio, self.channel)
        self.buffer = TspBuffer(config.buffer)
        self.rnc = RncModel(frames_per_interval=fc.frames_per_interval, credit_gated=enhanced,
                            credit_spread=fc.credit_spread)
        self.controller = (IubFlowController(fc, config.buffer.lower_l, config.buffer.upper_h)
                           if enhanced else None)
        self.ledger = CreditLedger(fc.transfer_latency_s) if enhanced and fc.spare_room_cap else None

        self.cn_us = to_us(config.cn_delay_s)
        self.transfer_us = to_us(fc.transfer_latency_s)
        self.warmup_us = to_us(config.warmup_s)
        self.ttis_per_frame = config.ttis_per_frame
        self.ttis_per_interval = int(round(fc.interval_s / config.tti_s))

        self.iub_pipe: Deque[Tuple[int, Pdu]] = deque()
        self.grant_pipe: Deque[CapacityGrant] = deque()

        self.delivered = {flow: 0 for flow in FlowClass}
        self.discarded = {flow: 0 for flow in FlowClass}
        self.last_outcome: Optional[TtiOutcome] = None
        self._sinr_now = 0.0

        # 预热后的统计量
        self._baseline: Optional[BufferCounters] = None
        self._link_baseline = (0, 0)
        self.m_delivered = {flow: 0 for flow in FlowClass}
        self.m_rt_delay_sum = 0.0
        self.m_rt_delivery_delay_sum = 0.0
        self.m_backlog_sum = 0
        self.m_backlog_max = 0
        self.m_backlog_samples = 0
        self.m_grant_levels = {level: 0 for level in RateLevel}

    def measuring(self, now_us: int) -> bool:
        return now_us >= self.warmup_us

    def stage_rnc(self, k: int, now_us: int) -> None:
        now = to_seconds(now_us)
        if self._baseline is None and self.measuring(now_us):
            self._start_measurement()

        while self.grant_pipe and to_us(self.grant_pipe[0].effective_at) <= now_us:
            self.rnc.on_grant(self.grant_pipe.popleft(), now)

        for source in (self.voip, self.ftp):
            while to_us(source.peek().generated_at) + self.cn_us <= now_us:
                packet = apply_cn_delay(source.pop(), self.config.cn_delay_s)
                self.rnc.accept_packet(packet)
                if self.trace_enabled:
                    self.traces.packets.append((packet.generated_at, packet.flow.value, packet.size_bits))

        if k % self.ttis_per_frame == 0:
            dispatched = self.rnc.transfer_tick(now)
            arrival_us = now_us + self.transfer_us
            for pdu in dispatched:
                self.iub_pipe.append((arrival_us, pdu))
            if self.trace_enabled:
                self._trace_iub(now, dispatched)

    def stage_arrivals(self, k: int, now_us: int) -> None:
        now = to_seconds(now_us)
        while self.iub_pipe and self.iub_pipe[0][0] <= now_us:
            _, pdu = self.iub_pipe.popleft()
            self.buffer.enqueue(pdu, now)
            if self.ledger is not None and pdu.flow is FlowClass.NRT:
                self.ledger.record_arrival(now)

    def stage_channel(self, k: int, now_us: int) -> None:
        self._sinr_now = self.channel.step(k)

    def stage_transmit(self, k: int, now_us: int) -> None:
        now = to_seconds(now_us)
        outcome = self.link.transmit_tti(self.buffer, self._sinr_now, now)
        self.last_outcome = outcome

        if outcome.kind == 'delivered':
            for pdu in outcome.pdus:
                self.delivered[pdu.flow] += 1
            if self.measuring(now_us):
                self._measure_delivery(outcome.pdus, now)
        elif outcome.kind == 'discarded':
            for pdu in outcome.pdus:
                self.discarded[pdu.flow] += 1

        if self.measuring(now_us):
            backlog = sum(self.rnc.backlog())
            self.m_backlog_sum += backlog
            self.m_backlog_max = max(self.m_backlog_max, backlog)
            self.m_backlog_samples += 1

        if self.trace_enabled:
            state = self.channel.state
            stale = self.channel.stale_sinr()
            self.traces.radio.append((
                now, state.distance_m, self._sinr_now, stale,
                outcome.scheme.name if outcome.scheme else '', outcome.tbs_bits, outcome.kind,
            ))

    def stage_aveq(self, k: int, now_us: int) -> None:
        if self.controller is not None:
            self.controller.update_aveq(self.buffer.occupancy().total)

    def stage_grant(self, k: int, now_us: int) -> None:
        if self.controller is None or k % self.ttis_per_interval != 0:
            return

        now = to_seconds(now_us)
        limit = None
        if self.ledger is not None:
            limit = self.ledger.spare_room(self.buffer.config.capacity_n, self.buffer.occupancy().total, now)
        grant = self.controller.issue_grant(now, limit)
        self.grant_pipe.append(grant)
        if self.ledger is not None:
            self.ledger.record_grant(grant)
        if self.measuring(now_us):
            self.m_grant_levels[grant.level] += 1
        if self.trace_enabled:
            self.traces.grants.append((grant.issued_at, self.controller.state.aveq, grant.level.value, grant.max_pdus))

    def _start_measurement(self) -> None:
        self._baseline = replace(self.buffer.counters)
        self._link_baseline = (self.link.counters.discarded_pdus, self.link.counters.retransmissions)

    def _measure_delivery(self, pdus: List[Pdu], now: float) -> None:
        for pdu in pdus:
            self.m_delivered[pdu.flow] += 1
            if pdu.flow is FlowClass.RT:
                self.m_rt_delay_sum += pdu.first_tx_at - pdu.nodeb_enqueued_at
                self.m_rt_delivery_delay_sum += now - pdu.nodeb_enqueued_at

    def _trace_iub(self, now: float, dispatched: List[Pdu]) -> None:
        credits = self.rnc.state.grant_pdus_remaining if self.rnc.credit_gated else None
        for flow in FlowClass:
            count = sum(1 for pdu in dispatched if pdu.flow is flow)
            self.traces.iub.append((now, flow.value, count, credits))

    def check_conservation(self) -> None:
        """全局 PDU 守恒：分段 = 交付 + Node B 内 + RNC 内 + Iub 在途 + HARQ 中 + 丢弃"""
        self.buffer.check_conservation()
        self.rnc.check_conservation()

        c = self.buffer.counters
        in_rnc = {FlowClass.RT: len(self.rnc.state.rt_pending), FlowClass.NRT: len(self.rnc.state.nrt_pending)}
        in_nodeb = {FlowClass.RT: len(self.buffer.rt_fifo), FlowClass.NRT: len(self.buffer.nrt_fifo)}
        dropped = {FlowClass.RT: c.rt_blocked, FlowClass.NRT: c.nrt_dropped_tail + c.nrt_pushed_out}
        in_iub = {flow: 0 for flow in FlowClass}
        for _, pdu in self.iub_pipe:
            in_iub[pdu.flow] += 1
        in_harq = {flow: 0 for flow in FlowClass}
        for pdu in self.link.in_flight_pdus():
            in_harq[pdu.flow] += 1

        for flow in FlowClass:
            segmented = self.rnc.state.counters.segmented[flow]
            accounted = (self.delivered[flow] + in_nodeb[flow] + in_rnc[flow] + in_iub[flow]
                         + in_harq[flow] + dropped[flow] + self.discarded[flow])
            if segmented != accounted:
                self.logger.error(f"{flow.value} PDU 不守恒: 分段 {segmented}，可追踪 {accounted}")
                raise InvariantViolation(f"{flow.value} PDU 全局计数不守恒: {segmented} != {accounted}")

    def report(self) -> MetricsReport:
        config = self.config
        if self._baseline is None:
            self._start_measurement()

        base = self._baseline
        current = self.buffer.counters
        rt_arrivals = current.rt_arrivals - base.rt_arrivals
        rt_blocked = current.rt_blocked - base.rt_blocked
        nrt_arrivals = current.nrt_arrivals - base.nrt_arrivals
        nrt_dropped_tail = current.nrt_dropped_tail - base.nrt_dropped_tail
        nrt_pushed_out = current.nrt_pushed_out - base.nrt_pushed_out
        measured_s = max(0.0, config.duration_s - config.warmup_s)

        rt_delivered = self.m_delivered[FlowClass.RT]
        nrt_delivered = self.m_delivered[FlowClass.NRT]
        total_grants = sum(self.m_grant_levels.values())
        shares = {level: safe_ratio(count, total_grants) for level, count in self.m_grant_levels.items()}

        report = MetricsReport(
            scenario=self.scenario,
            variant=config.variant.value,
            ftp_rate_kbps=config.ftp.rate_kbps,
            seed=config.seed,
            duration_s=config.duration_s,
            warmup_s=config.warmup_s,
            measured_s=measured_s,
            rt_arrivals=rt_arrivals,
            rt_blocked=rt_blocked,
            nrt_arrivals=nrt_arrivals,
            nrt_dropped_tail=nrt_dropped_tail,
            nrt_pushed_out=nrt_pushed_out,
            rt_delivered=rt_delivered,
            nrt_delivered=nrt_delivered,
            rt_loss_prob=safe_ratio(rt_blocked, rt_arrivals),
            nrt_loss_prob=safe_ratio(nrt_dropped_tail + nrt_pushed_out, nrt_arrivals),
            rt_mean_delay_s=safe_ratio(self.m_rt_delay_sum, rt_delivered),
            rt_mean_delivery_delay_s=safe_ratio(self.m_rt_delivery_delay_sum, rt_delivered),
            nrt_throughput_bps=(nrt_delivered * PDU_SIZE_BITS / measured_s) if measured_s > 0 else 0.0,
            rnc_backlog_mean_pdus=safe_ratio(self.m_backlog_sum, self.m_backlog_samples),
            rnc_backlog_max_pdus=self.m_backlog_max,
            air_discards=self.link.counters.discarded_pdus - self._link_baseline[0],
            harq_retransmissions=self.link.counters.retransmissions - self._link_baseline[1],
            grant_share_full=shares[RateLevel.FULL],
            grant_share_reduced=shares[RateLevel.REDUCED],
            grant_share_stopped=shares[RateLevel.STOPPED],
            enhanced_pushout_anomalies=current.enhanced_pushout_anomalies - base.enhanced_pushout_anomalies,
            voip_on_fraction=safe_ratio(self.voip.on_time_until(config.duration_s), config.duration_s),
        )
        report.digest = report.compute_digest()
        return report

    def simulate(self) -> MetricsReport:
        self.logger.info(f"开始仿真: {self.config.variant.value}, FTP {self.config.ftp.rate_kbps:g} kbps, "
                         f"种子 {self.config.seed}, {self.config.duration_s:g}s")
        self.run_clock()
        self.check_conservation()
        report = self.report()
        self.logger.info(f"仿真完成: RT 丢失 {report.rt_loss_prob}, NRT 丢失 {report.nrt_loss_prob}, "
                         f"摘要 {report.digest[:12]}")
        return report


def run(config: SimConfig, scenario: str = '') -> MetricsReport:
    """执行一次仿真"""
    return HsdpaSimulator(config, scenario=scenario).simulate()


def run_with_traces(config: SimConfig, scenario: str = '') -> Tuple[MetricsReport, RunTraces]:
    simulator = HsdpaSimulator(config, scenario=scenario, trace=True)
    report = simulator.simulate()
    return report, simulator.traces


def run_replications(config: SimConfig, n_seeds: int,
                     runner: Callable[[SimConfig], MetricsReport] = run) -> Dict[str, Dict]:
    """独立种子重复实验：config.seed, config.seed+1, ..."""
    if n_seeds < 2:
        raise ValueError(f"重复次数至少为 2: {n_seeds}")

    reports = [runner(config.with_seed(config.seed + i)) for i in range(n_seeds)]
    return summarize(reports)


NUMERIC_METRICS = tuple(
    name for name, kind in MetricsReport.__annotations__.items()
    if name not in ('scenario', 'variant', 'ftp_rate_kbps', 'seed', 'digest')
)


def summarize(reports: List[MetricsReport]) -> Dict[str, Dict]:
    """逐指标汇总：各种子取值、均值、样本标准差、95% 半宽；存在缺失值的指标跳过"""
    summary = {}
    for name in NUMERIC_METRICS:
        values = [getattr(report, name) for report in reports]
        if any(value is None for value in values) or len(values) < 2:
            continue
        stats = confidence_interval(values)
        summary[name] = {'values': values, **stats}
    return summary


@dataclass
class SlottedResult:
    """退化模式的逐时隙记录"""
    rt_arrivals: int
    rt_blocked: int
    nrt_arrivals: int
    nrt_lost: int
    rt_arrival_flags: np.ndarray
    rt_blocked_flags: np.ndarray
    nrt_arrival_flags: np.ndarray
    nrt_lost_counts: np.ndarray

    @property
    def rt_block_prob(self) -> float:
        return self.rt_blocked / self.rt_arrivals if self.rt_arrivals else 0.0

    @property
    def nrt_drop_prob(self) -> float:
        return self.nrt_lost / self.nrt_arrivals if self.nrt_arrivals else 0.0


class SlottedTspSimulator(TtiDrivenSimulator):
    """退化模式：伯努利到达、每时隙以概率 serve_prob 服务一个 PDU，无空口、无流控"""

    def __init__(self, buffer_config: TspBufferConfig, p_rt: float, p_nrt: float, n_slots: int,
                 seed: int = 1, warmup_slots: int = 0, serve_prob: float = 1.0):
        super().__init__(n_ttis=warmup_slots + n_slots, tti_us=1)
        if not (0 <= p_rt <= 1 and 0 <= p_nrt <= 1):
            raise ValueError(f"到达概率必须在 [0, 1] 内: {p_rt}, {p_nrt}")
        if not 0 < serve_prob <= 1:
            raise ValueError(f"服务概率必须在 (0, 1] 内: {serve_prob}")

        self.buffer = TspBuffer(buffer_config)
        self.warmup_slots = warmup_slots
        rng = rng_substream(seed, 'slotted')
        total = warmup_slots + n_slots
        self.rt_draws = rng.random(total) < p_rt
        self.nrt_draws = rng.random(total) < p_nrt
        # 放在到达序列之后抽取，serve_prob = 1 时到达序列不变
        self.serve_draws = rng.random(total) < serve_prob
        self.rt_blocked_flags = np.zeros(total, dtype=np.int8)
        self.nrt_lost_counts = np.zeros(total, dtype=np.int8)
        self._ids = 0

    def _pdu(self, flow: FlowClass, now: float) -> Pdu:
        self._ids += 1
        return Pdu(id=self._ids, flow=flow, source_packet_id=self._ids, created_at=now)

    def stage_arrivals(self, k: int, now_us: int) -> None:
        now = float(k)
        lost_before = self.buffer.counters.nrt_dropped_tail + self.buffer.counters.nrt_pushed_out
        if self.rt_draws[k]:
            result = self.buffer.enqueue_rt(self._pdu(FlowClass.RT, now), now)
            self.rt_blocked_flags[k] = result is EnqueueResult.BLOCKED
        if self.nrt_draws[k]:
            self.buffer.enqueue_nrt(self._pdu(FlowClass.NRT, now), now)
        self.nrt_lost_counts[k] = (self.buffer.counters.nrt_dropped_tail
                                   + self.buffer.counters.nrt_pushed_out - lost_before)

    def stage_transmit(self, k: int, now_us: int) -> None:
        if self.serve_draws[k]:
            self.buffer.dequeue_up_to(PDU_SIZE_BITS, float(k))

    def simulate(self) -> SlottedResult:
        self.run_clock()
        self.buffer.check_conservation()

        window = slice(self.warmup_slots, None)
        rt_flags = self.rt_draws[window]
        nrt_flags = self.nrt_draws[window]
        rt_blocked = self.rt_blocked_flags[window]
        nrt_lost = self.nrt_lost_counts[window]
        return SlottedResult(
            rt_arrivals=int(rt_flags.sum()),
            rt_blocked=int(rt_blocked.sum()),
            nrt_arrivals=int(nrt_flags.sum()),
            nrt_lost=int(nrt_lost.sum()),
            rt_arrival_flags=rt_flags,
            rt_blocked_flags=rt_blocked,
            nrt_arrival_flags=nrt_flags,
            nrt_lost_counts=nrt_lost,
        )
