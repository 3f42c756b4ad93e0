#!/usr/bin/env python3
"""
业务源公共定义
TSP仿真系统 v1.0
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Optional

from tsp_buffer import FlowClass


@dataclass(frozen=True)
class Packet:
    """应用层分组（到达 RNC 前）"""
    id: int
    flow: FlowClass
    size_bits: int
    generated_at: float
    rnc_arrival_at: Optional[float] = None

    def __post_init__(self):
        if self.size_bits <= 0:
            raise ValueError(f"分组长度必须为正: {self.size_bits}")


def apply_cn_delay(packet: Packet, cn_delay_s: float) -> Packet:
    """核心网固定时延：不丢包、不乱序"""
    if cn_delay_s < 0:
        raise ValueError(f"核心网时延不能为负: {cn_delay_s}")
    return replace(packet, rnc_arrival_at=packet.generated_at + cn_delay_s)


class TrafficSource(ABC):
    """按时间顺序产生分组的业务源（带一个分组的预取）"""

    def __init__(self):
        self._lookahead: Optional[Packet] = None

    @abstractmethod
    def _generate(self) -> Packet:
        """产生下一个分组"""

    def peek(self) -> Packet:
        if self._lookahead is None:
            self._lookahead = self._generate()
        return self._lookahead

    def pop(self) -> Packet:
        packet = self.peek()
        self._lookahead = None
        return packet
