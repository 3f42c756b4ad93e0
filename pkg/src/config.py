#!/usr/bin/env python3
"""
配置管理模块
TSP仿真系统 v1.0

场景文件为逐行 `key = value` 文本：`#` 开头为注释，`[section]` 为节标题，
节内键与节名用点号拼接（也可直接写完整的点号键），列表用逗号分隔。
未出现的参数取参数表默认值。
"""

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, NamedTuple, Optional, Tuple

from flow_control import FlowControlParams
from radio_link import DEFAULT_AMC_SCHEMES, RadioConfig, parse_scheme_name
from rnc import SDU_SIZE_BITS
from sources import FtpConfig, VoipConfig
from tsp_buffer import SchemeVariant, TspBufferConfig
from utils import ConfigError, bytes_to_pdus


DEFAULT_FTP_RATES_KBPS: Tuple[float, ...] = (64.0, 128.0, 256.0, 512.0, 1024.0)


def allocated_nrt_rate_bps(ftp_rate_bps: float, params: FlowControlParams) -> float:
    """FTP 净荷速率 × PDU/SDU 长度比 × 分配系数"""
    return ftp_rate_bps * params.pdu_size_bits / SDU_SIZE_BITS * params.allocation_factor


@dataclass
class SimConfig:
    """单次仿真配置"""
    duration_s: float = 400.0
    warmup_s: float = 10.0
    seed: int = 1
    tti_s: float = 0.002
    cn_delay_s: float = 0.050
    trace: bool = False
    buffer: TspBufferConfig = field(default_factory=TspBufferConfig)
    flow_control: FlowControlParams = field(default_factory=FlowControlParams)
    voip: VoipConfig = field(default_factory=VoipConfig)
    ftp: FtpConfig = field(default_factory=FtpConfig)
    radio: RadioConfig = field(default_factory=RadioConfig)

    def __post_init__(self):
        if self.duration_s < 0:
            raise ConfigError('simulation.duration_s', "仿真时长不能为负")
        if not 0 <= self.warmup_s <= self.duration_s:
            raise ConfigError('simulation.warmup_s', f"需满足 0 <= warmup <= duration，当前 {self.warmup_s} / {self.duration_s}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError('simulation.seed', "种子必须是 64 位无符号整数")
        if self.tti_s <= 0:
            raise ConfigError('simulation.tti_ms', "TTI 必须为正")
        ratio = self.flow_control.tti_rlc_s / self.tti_s
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError('flow_control.frame_ms', f"HS-DSCH 帧长必须是 TTI 的整数倍，当前比值 {ratio}")
        if self.buffer.variant is SchemeVariant.ENHANCED and not self.buffer.has_thresholds:
            raise ConfigError('thresholds.l', "增强方案需要 L/H 阈值")
        if self.cn_delay_s < 0:
            raise ConfigError('core.cn_delay_ms', "核心网时延不能为负")
        if self.ftp.rate_bps * self.tti_s > self.ftp.mean_packet_bytes * 8:
            raise ConfigError('ftp.rate_kbps', f"速率 {self.ftp.rate_kbps} kbps 超过每 TTI 一个分组的上限")

        # λ_nrt 为初始分配的 PDU 速率：FTP 速率折算 RLC 头后再乘分配系数
        allocated = allocated_nrt_rate_bps(self.ftp.rate_bps, self.flow_control)
        if self.flow_control.lambda_nrt_bps != allocated:
            self.flow_control = replace(self.flow_control, lambda_nrt_bps=allocated)

    @property
    def variant(self) -> SchemeVariant:
        return self.buffer.variant

    @property
    def ttis_per_frame(self) -> int:
        return int(round(self.flow_control.tti_rlc_s / self.tti_s))

    def with_variant(self, variant: SchemeVariant) -> 'SimConfig':
        return replace(self, buffer=replace(self.buffer, variant=SchemeVariant(variant)))

    def with_ftp_rate(self, rate_kbps: float) -> 'SimConfig':
        return replace(self, ftp=replace(self.ftp, rate_kbps=float(rate_kbps)))

    def with_seed(self, seed: int) -> 'SimConfig':
        return replace(self, seed=int(seed))


class RunKey(NamedTuple):
    scenario: str
    variant: SchemeVariant
    ftp_rate_kbps: float
    seed: int


@dataclass
class Scenario:
    """实验场景：基础配置 + 扫描轴"""
    name: str = 'default'
    simulation: SimConfig = field(default_factory=SimConfig)
    ftp_rates_kbps: Tuple[float, ...] = DEFAULT_FTP_RATES_KBPS
    variants: Tuple[SchemeVariant, ...] = (SchemeVariant.ORIGINAL, SchemeVariant.ENHANCED)
    seeds: Tuple[int, ...] = (1, 2, 3, 4, 5)

    def __post_init__(self):
        self.ftp_rates_kbps = tuple(float(r) for r in self.ftp_rates_kbps)
        self.variants = tuple(SchemeVariant(v) for v in self.variants)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.ftp_rates_kbps:
            raise ConfigError('sweep.ftp_rate_kbps', "扫描速率列表不能为空")
        if not self.variants:
            raise ConfigError('sweep.variants', "方案列表不能为空")
        if not self.seeds:
            raise ConfigError('sweep.seeds', "种子列表不能为空")
        # 运行前校验所有组合
        for _ in self.run_configs():
            pass

    def run_configs(self, seeds: Optional[Tuple[int, ...]] = None) -> Iterator[Tuple[RunKey, SimConfig]]:
        for rate in self.ftp_rates_kbps:
            for variant in self.variants:
                for seed in (seeds or self.seeds):
                    config = self.simulation.with_ftp_rate(rate).with_variant(variant).with_seed(seed)
                    yield RunKey(self.name, variant, rate, seed), config


class ConfigKey(NamedTuple):
    name: str
    target: str
    attr: str
    kind: str
    note: str = ''


# 场景文件键表：target 为所属配置段，kind 决定解析方式
CONFIG_KEYS: Tuple[ConfigKey, ...] = (
    ConfigKey('scenario.name', 'scenario', 'name', 'str'),
    ConfigKey('sweep.ftp_rate_kbps', 'scenario', 'ftp_rates_kbps', 'float_list', 'FTP rates 64, 128, 256, 512, 1024 kbps'),
    ConfigKey('sweep.variants', 'scenario', 'variants', 'str_list'),
    ConfigKey('sweep.seeds', 'scenario', 'seeds', 'int_list'),
    ConfigKey('simulation.duration_s', 'simulation', 'duration_s', 'float'),
    ConfigKey('simulation.warmup_s', 'simulation', 'warmup_s', 'float'),
    ConfigKey('simulation.seed', 'simulation', 'seed', 'int'),
    ConfigKey('simulation.tti_ms', 'simulation', 'tti_s', 'ms', 'HS-PDSCH TTI 2ms'),
    ConfigKey('simulation.variant', 'buffer', 'variant', 'str'),
    ConfigKey('simulation.trace', 'simulation', 'trace', 'bool'),
    ConfigKey('core.cn_delay_ms', 'simulation', 'cn_delay_s', 'ms'),
    ConfigKey('buffer.n', 'buffer', 'capacity_n', 'int', 'N = 12,600 bytes = 300 PDU'),
    ConfigKey('buffer.r', 'buffer', 'rt_limit_r', 'int', 'R = 840 bytes = 20 PDU'),
    ConfigKey('thresholds.l', 'buffer', 'lower_l', 'int', 'L = 5040 bytes = 120 PDU'),
    ConfigKey('thresholds.h', 'buffer', 'upper_h', 'int', 'H = 10,080 bytes = 240 PDU'),
    ConfigKey('buffer.enhanced_full_policy', 'buffer', 'enhanced_full_policy', 'str'),
    ConfigKey('buffer.n_bytes', 'buffer', 'capacity_n', 'bytes'),
    ConfigKey('buffer.r_bytes', 'buffer', 'rt_limit_r', 'bytes'),
    ConfigKey('thresholds.l_bytes', 'buffer', 'lower_l', 'bytes'),
    ConfigKey('thresholds.h_bytes', 'buffer', 'upper_h', 'bytes'),
    ConfigKey('flow_control.w_q', 'flow_control', 'w_q', 'float', 'w_q = 0.7'),
    ConfigKey('flow_control.c', 'flow_control', 'c_factor', 'float', 'C = 0.5'),
    ConfigKey('flow_control.allocation_factor', 'flow_control', 'allocation_factor', 'float',
              '初始分配速率 = FTP 速率 × 336/320 × 系数'),
    ConfigKey('flow_control.spare_room_cap', 'flow_control', 'spare_room_cap', 'bool'),
    ConfigKey('flow_control.frame_ms', 'flow_control', 'tti_rlc_s', 'ms', 'HS-DSCH frame 10ms'),
    ConfigKey('flow_control.iub_latency_ms', 'flow_control', 'iub_latency_s', 'ms', 'Iub latency 20ms'),
    ConfigKey('flow_control.pdu_transfer_latency_ms', 'flow_control', 'pdu_transfer_latency_s', 'ms_auto'),
    ConfigKey('flow_control.grant_interval_ms', 'flow_control', 'grant_interval_s', 'ms_auto',
              'Iub 信令时延 + PDU 传输时延 + 帧长'),
    ConfigKey('flow_control.credit_spread', 'flow_control', 'credit_spread', 'str'),
    ConfigKey('voip.packet_bits', 'voip', 'packet_bits', 'int', 'Packet length=304bits'),
    ConfigKey('voip.rate_bps', 'voip', 'rate_bps', 'float', 'constant bit rate=15.2 kbps'),
    ConfigKey('voip.mean_phase_s', 'voip', 'mean_phase_s', 'float', 'ON/OFF mean duration 3 s'),
    ConfigKey('voip.start_on_probability', 'voip', 'start_on_probability', 'float', 'ON/OFF 50% probability'),
    ConfigKey('ftp.rate_kbps', 'ftp', 'rate_kbps', 'float'),
    ConfigKey('ftp.mean_packet_bytes', 'ftp', 'mean_packet_bytes', 'int', 'average packet size=480 bytes'),
    ConfigKey('ftp.size_model', 'ftp', 'size_model', 'str'),
    ConfigKey('radio.start_distance_m', 'radio', 'start_distance_m', 'float', 'starting position 600m'),
    ConfigKey('radio.speed_kmh', 'radio', 'speed_kmh', 'float', 'Velocity 3Km/h'),
    ConfigKey('radio.cell_radius_m', 'radio', 'cell_radius_m', 'float', 'Cell radius 1000m'),
    ConfigKey('radio.shadow_sigma_db', 'radio', 'shadow_sigma_db', 'float', 'Log-normal sigma = 8 dB'),
    ConfigKey('radio.shadow_rho', 'radio', 'shadow_rho', 'float', 'rho = 0.5'),
    ConfigKey('radio.shadow_update_s', 'radio', 'shadow_update_s', 'float'),
    ConfigKey('radio.total_power_w', 'radio', 'total_power_w', 'float', 'Total Node B power=15W'),
    ConfigKey('radio.hsdsch_power_w', 'radio', 'hsdsch_power_w', 'float', 'HS-PDSCH power=7W'),
    ConfigKey('radio.cpich_power_w', 'radio', 'cpich_power_w', 'float', 'CPICH power=2W'),
    ConfigKey('radio.noise_interference_dbm', 'radio', 'noise_interference_dbm', 'float', '标定常数'),
    ConfigKey('radio.antenna_gain_db', 'radio', 'antenna_gain_db', 'float'),
    ConfigKey('radio.cqi_latency_ttis', 'radio', 'cqi_latency_ttis', 'int', 'CQI latency 3 TTIs (6ms)'),
    ConfigKey('radio.n_codes', 'radio', 'n_codes', 'int', '2 out of 15 codes'),
    ConfigKey('radio.max_retx', 'radio', 'max_retx', 'int'),
    ConfigKey('amc.count', 'amc', 'count', 'int', 'six AMC schemes'),
    ConfigKey('amc.schemes', 'amc', 'schemes', 'str_list', 'QPSK 1/4, 1/2, 3/4, 16QAM 1/4, 1/2 (+3/4)'),
    ConfigKey('amc.thresholds_db', 'amc', 'thresholds_db', 'float_list'),
)

KEYS_BY_NAME: Dict[str, ConfigKey] = {key.name: key for key in CONFIG_KEYS}


def _parse_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ('true', 'yes', 'on', '1'):
        return True
    if lowered in ('false', 'no', 'off', '0'):
        return False
    raise ValueError(raw)


def _split_list(raw: str) -> List[str]:
    return [item.strip() for item in raw.split(',') if item.strip()]


PARSERS: Dict[str, Callable[[str], Any]] = {
    'str': str,
    'int': int,
    'float': float,
    'bool': _parse_bool,
    'ms': lambda raw: float(raw) / 1000.0,
    'ms_auto': lambda raw: None if raw.lower() == 'auto' else float(raw) / 1000.0,
    'bytes': lambda raw: bytes_to_pdus(int(raw)),
    'str_list': _split_list,
    'int_list': lambda raw: [int(item) for item in _split_list(raw)],
    'float_list': lambda raw: [float(item) for item in _split_list(raw)],
}


def _format_value(value: Any, kind: str) -> str:
    if value is None:
        return 'auto'
    if kind in ('ms', 'ms_auto'):
        value = round(value * 1000.0, 9)
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (list, tuple)):
        return ', '.join(_format_value(item, 'str') for item in value)
    if isinstance(value, SchemeVariant):
        return value.value
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


class ConfigManager:
    """场景配置管理器"""

    def __init__(self, scenario_file: Optional[str] = None):
        self.scenario_file = Path(scenario_file) if scenario_file else None
        self._scenario: Optional[Scenario] = None
        self.logger = logging.getLogger(__name__)

    def load_scenario(self, path: Optional[str] = None) -> Scenario:
        """加载并校验场景文件；未指定文件时返回默认场景"""
        target = Path(path) if path else self.scenario_file
        if target is None:
            self._scenario = Scenario()
            self.logger.info("未指定场景文件，使用默认参数")
            return self._scenario

        if not target.exists():
            self.logger.error(f"场景文件 {target} 不存在")
            raise FileNotFoundError(f"场景文件 {target} 不存在")

        text = target.read_text(encoding='utf-8')
        self._scenario = self.parse_text(text, default_name=target.stem)
        self.logger.info(f"场景文件加载成功: {target}")
        return self._scenario

    @property
    def scenario(self) -> Scenario:
        if self._scenario is None:
            self._scenario = self.load_scenario()
        return self._scenario

    def parse_text(self, text: str, default_name: str = 'default') -> Scenario:
        values: Dict[str, Dict[str, Any]] = {}
        lines: Dict[str, int] = {}
        seen: Dict[Tuple[str, str], Tuple[str, int]] = {}
        section = ''

        for line_no, raw_line in enumerate(text.splitlines(), 1):
            line = raw_line.split('#', 1)[0].strip()
            if not line:
                continue

            if line.startswith('['):
                if not line.endswith(']') or len(line) < 3:
                    raise ConfigError('<section>', f"节标题格式错误: {raw_line.strip()}", line_no)
                section = line[1:-1].strip()
                continue

            if '=' not in line:
                raise ConfigError('<syntax>', f"缺少 '=': {raw_line.strip()}", line_no)

            name, raw_value = (part.strip() for part in line.split('=', 1))
            full_name = f"{section}.{name}" if section else name
            key = KEYS_BY_NAME.get(full_name)
            if key is None:
                raise ConfigError(full_name, "未知配置项", line_no)
            # 字节键与 PDU 键指向同一字段，任一顺序同时出现都算重复
            first = seen.get((key.target, key.attr))
            if first is not None:
                first_name, first_line = first
                raise ConfigError(full_name, f"与 {first_name} 重复（首次出现在第 {first_line} 行）", line_no)

            try:
                parsed = PARSERS[key.kind](raw_value)
            except ValueError:
                raise ConfigError(full_name, f"类型不匹配，期望 {key.kind}，实际为 '{raw_value}'", line_no)

            values.setdefault(key.target, {})[key.attr] = parsed
            seen[(key.target, key.attr)] = (full_name, line_no)
            lines[full_name] = line_no
            lines.setdefault(full_name.rsplit('_bytes', 1)[0], line_no)

        try:
            return self._build_scenario(values, default_name)
        except ConfigError as e:
            if e.line is None and e.key in lines:
                raise ConfigError(e.key, e.constraint, lines[e.key]) from None
            raise

    def _build_scenario(self, values: Dict[str, Dict[str, Any]], default_name: str) -> Scenario:
        amc = values.get('amc', {})
        radio_values = dict(values.get('radio', {}))
        schemes = self._build_amc(amc)
        if schemes is not None:
            radio_values['amc_schemes'] = schemes

        sim_values = dict(values.get('simulation', {}))
        simulation = SimConfig(
            buffer=TspBufferConfig(**values.get('buffer', {})),
            flow_control=FlowControlParams(**values.get('flow_control', {})),
            voip=VoipConfig(**values.get('voip', {})),
            ftp=FtpConfig(**values.get('ftp', {})),
            radio=RadioConfig(**radio_values),
            **sim_values,
        )

        scenario_values = dict(values.get('scenario', {}))
        scenario_values.setdefault('name', default_name)
        if 'ftp_rates_kbps' not in scenario_values and 'rate_kbps' in values.get('ftp', {}):
            scenario_values['ftp_rates_kbps'] = (simulation.ftp.rate_kbps,)
        if 'variants' in scenario_values:
            try:
                scenario_values['variants'] = [SchemeVariant(v) for v in scenario_values['variants']]
            except ValueError as e:
                raise ConfigError('sweep.variants', f"未知方案: {e}")
        return Scenario(simulation=simulation, **scenario_values)

    @staticmethod
    def _build_amc(amc: Dict[str, Any]):
        if not amc:
            return None

        names = amc.get('schemes', [s.name for s in DEFAULT_AMC_SCHEMES])
        default_thresholds = [s.sinr_threshold_db for s in DEFAULT_AMC_SCHEMES]
        thresholds = amc.get('thresholds_db', default_thresholds if len(names) == len(default_thresholds) else None)
        if thresholds is None or len(thresholds) != len(names):
            raise ConfigError('amc.thresholds_db', "门限个数必须与方案个数一致")
        if 'count' in amc and amc['count'] != len(names):
            raise ConfigError('amc.count', f"方案个数为 {len(names)}，与 amc.count={amc['count']} 不符")
        return tuple(parse_scheme_name(name, threshold) for name, threshold in zip(names, thresholds))

    def dump(self, scenario: Scenario, with_notes: bool = True) -> str:
        """把场景写回文本格式（每行一个完整点号键）"""
        sim = scenario.simulation
        sources = {
            'scenario': scenario,
            'simulation': sim,
            'buffer': sim.buffer,
            'flow_control': sim.flow_control,
            'voip': sim.voip,
            'ftp': sim.ftp,
            'radio': sim.radio,
        }
        amc_values = {
            'count': len(sim.radio.amc_schemes),
            'schemes': [s.name for s in sim.radio.amc_schemes],
            'thresholds_db': [s.sinr_threshold_db for s in sim.radio.amc_schemes],
        }

        out = []
        for key in CONFIG_KEYS:
            if key.kind == 'bytes':
                continue
            if key.target == 'amc':
                value = amc_values[key.attr]
            else:
                value = getattr(sources[key.target], key.attr)
            line = f"{key.name} = {_format_value(value, key.kind)}"
            if with_notes and key.note:
                line = f"{line}  # {key.note}"
            out.append(line)
        return '\n'.join(out) + '\n'


def load_scenario(path: Optional[str] = None) -> Scenario:
    return ConfigManager().load_scenario(path)
