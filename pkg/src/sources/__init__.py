#!/usr/bin/env python3
"""
业务源模块包
TSP仿真系统 v1.0
"""

from .base import Packet, TrafficSource, apply_cn_delay
from .voip_source import VoipConfig, VoipSource, VoipPhase, voip_next_event, initial_voip_state
from .ftp_source import FtpConfig, FtpSource, ftp_next_packet

__all__ = [
    'Packet',
    'TrafficSource',
    'apply_cn_delay',
    'VoipConfig',
    'VoipSource',
    'VoipPhase',
    'voip_next_event',
    'initial_voip_state',
    'FtpConfig',
    'FtpSource',
    'ftp_next_packet',
]
