#!/usr/bin/env python3
"""
结果输出管理器
TSP仿真系统 v1.0

结果 CSV 列顺序固定，行按 (scenario, variant, ftp_rate_kbps, seed) 排序，
相同输入得到逐字节相同的文件。
"""

import csv
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import orjson

from analytic_oracle import OracleComparison
from sim_engine import MetricsReport, RunTraces, summarize
from utils import format_optional


RESULT_COLUMNS = (
    'scenario', 'variant', 'ftp_rate_kbps', 'seed', 'rt_loss', 'nrt_loss', 'rt_mean_delay_ms',
    'nrt_throughput_kbps', 'rnc_backlog_mean_pdus', 'air_discards',
)

TRACE_COLUMNS: Dict[str, Tuple[str, ...]] = {
    'packets': ('time_s', 'flow', 'bits'),
    'radio': ('time_s', 'distance_m', 'sinr_actual_db', 'sinr_stale_db', 'scheme', 'tbs_bits', 'outcome'),
    'iub': ('time_s', 'flow', 'pdus', 'credits_remaining'),
    'grants': ('time_s', 'aveq', 'level', 'max_pdus'),
}

ORACLE_COLUMNS = (
    'n', 'r', 'p_rt', 'p_nrt', 'serve_prob', 'variant', 'metric', 'exact', 'simulated', 'deviation', 'bound', 'passed',
)


def report_key(report: MetricsReport) -> Tuple:
    return report.scenario, report.variant, report.ftp_rate_kbps, report.seed


def result_row(report: MetricsReport) -> List[str]:
    """单个报告对应的 CSV 行（概率 6 位小数，速率 2 位）"""
    return [
        report.scenario,
        report.variant,
        f"{report.ftp_rate_kbps:.2f}",
        str(report.seed),
        format_optional(report.rt_loss_prob, 6),
        format_optional(report.nrt_loss_prob, 6),
        format_optional(report.rt_mean_delay_s, 3, scale=1000.0),
        format_optional(report.nrt_throughput_bps, 2, scale=0.001),
        format_optional(report.rnc_backlog_mean_pdus, 2),
        str(report.air_discards),
    ]


def _format_trace_value(value) -> str:
    if value is None:
        return ''
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


class ResultsManager:
    """结果、轨迹与汇总的写出"""

    def __init__(self, out_path: Optional[str] = None):
        self.out_path = Path(out_path) if out_path else None
        self.logger = logging.getLogger(__name__)

    def _open(self, path: Path):
        path.parent.mkdir(parents=True, exist_ok=True)
        return path.open('w', encoding='utf-8', newline='')

    def write_results(self, reports: Sequence[MetricsReport], path: Optional[str] = None) -> Path:
        """写出结果 CSV：表头 + 每个 (scenario, variant, rate, seed) 一行"""
        if not reports:
            raise ValueError("至少需要一个报告")
        target = Path(path) if path else self.out_path
        if target is None:
            raise ValueError("未指定输出路径")

        try:
            with self._open(target) as handle:
                writer = csv.writer(handle, lineterminator='\n')
                writer.writerow(RESULT_COLUMNS)
                for report in sorted(reports, key=report_key):
                    writer.writerow(result_row(report))
        except OSError as e:
            self.logger.error(f"写结果文件失败 {target}: {e}")
            raise

        self.logger.info(f"结果已写入 {target} ({len(reports)} 行)")
        return target

    def write_traces(self, traces: RunTraces, directory: str, prefix: str = '') -> List[Path]:
        """每类轨迹写一个 CSV"""
        written = []
        for name, columns in TRACE_COLUMNS.items():
            target = Path(directory) / f"{prefix}{name}.csv"
            with self._open(target) as handle:
                writer = csv.writer(handle, lineterminator='\n')
                writer.writerow(columns)
                for row in getattr(traces, name):
                    writer.writerow([_format_trace_value(value) for value in row])
            written.append(target)
        self.logger.info(f"轨迹已写入 {directory}（{len(written)} 个文件）")
        return written

    def write_summary_json(self, summary: Dict, path: str) -> Path:
        """重复实验汇总写为 JSON"""
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(orjson.dumps(summary, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS
                                        | orjson.OPT_SERIALIZE_NUMPY))
        return target

    def write_oracle_results(self, comparisons: Iterable[OracleComparison], path: Optional[str] = None) -> Path:
        target = Path(path) if path else self.out_path
        if target is None:
            raise ValueError("未指定输出路径")

        with self._open(target) as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(ORACLE_COLUMNS)
            for comparison in comparisons:
                writer.writerows(oracle_rows(comparison))
        return target


def oracle_rows(comparison: OracleComparison) -> List[List[str]]:
    model = comparison.model
    return [
        [
            str(model.n), str(model.r), f"{model.p_rt:g}", f"{model.p_nrt:g}", f"{model.serve_prob:g}",
            model.variant.value, check.name,
            f"{check.exact:.6f}", f"{check.simulated:.6f}", f"{check.deviation:.6f}", f"{check.bound:.6f}",
            'PASS' if check.passed else 'FAIL',
        ]
        for check in comparison.checks
    ]


def format_summary(report: MetricsReport) -> str:
    """单次运行的可读摘要"""
    def show(value: Optional[float], digits: int, scale: float = 1.0, unit: str = '') -> str:
        text = format_optional(value, digits, scale)
        return f"{text}{unit}" if text else "无数据"

    lines = [
        f"📊 {report.scenario or '场景'} | {report.variant} | FTP {report.ftp_rate_kbps:g} kbps | 种子 {report.seed}",
        f"   测量时长: {report.measured_s:g}s（预热 {report.warmup_s:g}s）",
        f"   VoIP 丢失率: {show(report.rt_loss_prob, 6)}  ({report.rt_blocked}/{report.rt_arrivals})",
        f"   VoIP 排队时延: {show(report.rt_mean_delay_s, 3, 1000.0, ' ms')}"
        f"  交付时延: {show(report.rt_mean_delivery_delay_s, 3, 1000.0, ' ms')}",
        f"   FTP 丢失率: {show(report.nrt_loss_prob, 6)}"
        f"  (尾丢 {report.nrt_dropped_tail}, 推出 {report.nrt_pushed_out} / {report.nrt_arrivals})",
        f"   FTP 吞吐量: {report.nrt_throughput_bps / 1000.0:.2f} kbps",
        f"   RNC 积压: 均值 {show(report.rnc_backlog_mean_pdus, 2)} / 最大 {report.rnc_backlog_max_pdus} PDU",
        f"   空口丢弃: {report.air_discards} PDU，HARQ 重传 {report.harq_retransmissions} 次",
    ]
    if report.grant_share_full is not None:
        lines.append(
            f"   授权档位: Full {report.grant_share_full:.1%} / Reduced {report.grant_share_reduced:.1%}"
            f" / Stopped {report.grant_share_stopped:.1%}"
        )
    if report.enhanced_pushout_anomalies:
        lines.append(f"   ⚠️ 增强方案缓存满 RT 到达: {report.enhanced_pushout_anomalies} 次")
    lines.append(f"   摘要: {report.digest[:16]}")
    return '\n'.join(lines)


COMPARE_METRICS = (
    ('nrt_loss_prob', 'NRT丢失'),
    ('nrt_throughput_bps', 'NRT吞吐(kbps)'),
    ('rt_loss_prob', 'RT丢失'),
    ('rt_mean_delay_s', 'RT时延(ms)'),
)


def comparison_table(reports: Sequence[MetricsReport]) -> List[Dict]:
    """按 (速率, 方案) 对各种子取平均"""
    groups: Dict[Tuple[float, str], List[MetricsReport]] = defaultdict(list)
    for report in reports:
        groups[(report.ftp_rate_kbps, report.variant)].append(report)

    rows = []
    for (rate, variant), group in sorted(groups.items()):
        row = {'ftp_rate_kbps': rate, 'variant': variant, 'seeds': len(group)}
        for name, _ in COMPARE_METRICS:
            values = [getattr(report, name) for report in group if getattr(report, name) is not None]
            row[name] = float(np.mean(values)) if values else None
        rows.append(row)
    return rows


def format_comparison(rows: Sequence[Dict]) -> str:
    """每个速率一行，原始方案与增强方案并排"""
    variants = sorted({row['variant'] for row in rows}, key=lambda v: (v != 'Original', v))
    by_key = {(row['ftp_rate_kbps'], row['variant']): row for row in rows}
    rates = sorted({row['ftp_rate_kbps'] for row in rows})

    header = ['速率(kbps)'] + [f"{label}[{variant}]" for _, label in COMPARE_METRICS for variant in variants]
    lines = [' | '.join(header)]
    for rate in rates:
        cells = [f"{rate:g}"]
        for name, _ in COMPARE_METRICS:
            for variant in variants:
                value = by_key.get((rate, variant), {}).get(name)
                if name == 'nrt_throughput_bps':
                    cells.append(format_optional(value, 2, scale=0.001) or '-')
                elif name == 'rt_mean_delay_s':
                    cells.append(format_optional(value, 3, scale=1000.0) or '-')
                else:
                    cells.append(format_optional(value, 6) or '-')
        lines.append(' | '.join(cells))
    return '\n'.join(lines)


def replication_summary(reports: Sequence[MetricsReport]) -> Dict[str, Dict]:
    """按 (方案, 速率) 分组做多种子汇总，单种子的分组跳过"""
    groups: Dict[Tuple[str, float], List[MetricsReport]] = defaultdict(list)
    for report in reports:
        groups[(report.variant, report.ftp_rate_kbps)].append(report)
    return {
        f"{variant}@{rate:g}kbps": summarize(group)
        for (variant, rate), group in sorted(groups.items())
        if len(group) >= 2
    }
