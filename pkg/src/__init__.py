#!/usr/bin/env python3
"""
仿真模块包
TSP仿真系统 v1.0
"""

__version__ = '1.0.0'
