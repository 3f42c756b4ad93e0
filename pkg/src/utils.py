#!/usr/bin/env python3
"""
工具函数模块
TSP仿真系统 v1.0
"""

import hashlib
import math
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
import orjson


# 每个 MAC-d PDU 为 336 bit = 42 字节
BYTES_PER_PDU = 42

# 随机数子流标签，固定编号保证不同方案看到相同的业务序列
RNG_STREAMS: Dict[str, int] = {
    'voip': 0,
    'ftp': 1,
    'shadowing': 2,
    'slotted': 3,
}

US_PER_SECOND = 1_000_000


def logs_directory() -> Path:
    """项目根目录下的 logs/，不存在则创建"""
    current_file = Path(__file__).resolve()
    project_root = current_file.parent.parent if current_file.parent.name == 'src' else current_file.parent
    logs_dir = project_root / 'logs'
    logs_dir.mkdir(exist_ok=True)
    return logs_dir


def rng_substream(seed: int, label: str) -> np.random.Generator:
    """按标签派生独立的随机数子流"""
    if label not in RNG_STREAMS:
        raise ValueError(f"未知的随机数子流: {label}")
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(RNG_STREAMS[label],))
    return np.random.default_rng(sequence)


def to_us(seconds: float) -> int:
    """秒 -> 整数微秒（仿真时钟单位）"""
    return int(round(seconds * US_PER_SECOND))


def to_seconds(us: int) -> float:
    return us / US_PER_SECOND


def bytes_to_pdus(size_bytes: int) -> int:
    """字节阈值换算为 PDU 个数"""
    return int(size_bytes) // BYTES_PER_PDU


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


def linear_to_db(value: float) -> float:
    return 10.0 * math.log10(value)


def watts_to_dbm(power_w: float) -> float:
    if power_w <= 0:
        raise ValueError(f"功率必须为正: {power_w}")
    return 10.0 * math.log10(power_w) + 30.0


def safe_ratio(numerator: float, denominator: float) -> Optional[float]:
    """分母为零时返回 None 而不是 NaN"""
    if denominator == 0:
        return None
    return numerator / denominator


def digest_of(payload: dict) -> str:
    """计算结果摘要（用于确定性校验）"""
    encoded = orjson.dumps(payload, option=orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY)
    return hashlib.sha256(encoded).hexdigest()


def confidence_interval(values: Sequence[float], z: float = 1.96) -> Dict[str, float]:
    """独立重复实验的均值、样本标准差与正态近似半宽"""
    data = np.asarray(values, dtype=float)
    if data.size < 2:
        raise ValueError("至少需要两个样本才能计算置信区间")

    mean = float(data.mean())
    std = float(data.std(ddof=1))
    half_width = z * std / math.sqrt(data.size)
    return {'mean': mean, 'std': std, 'half_width': half_width}


def format_optional(value: Optional[float], digits: int, scale: float = 1.0) -> str:
    """CSV 字段格式化，缺失值输出空串"""
    if value is None:
        return ""
    return f"{value * scale:.{digits}f}"


class ConfigError(ValueError):
    """配置错误：指明出错的配置项、行号与违反的约束"""

    def __init__(self, key: str, constraint: str, line: Optional[int] = None):
        self.key = key
        self.constraint = constraint
        self.line = line
        location = f" (第 {line} 行)" if line is not None else ""
        super().__init__(f"配置项 {key}{location} 非法: {constraint}")

    def __reduce__(self):
        return (ConfigError, (self.key, self.constraint, self.line))


class InvariantViolation(AssertionError):
    """仿真不变量被破坏"""
