"""
测试公共配置
TSP仿真系统 v1.0
"""

import sys
from pathlib import Path

import pytest

# 与 main.py 相同，把源码目录加入路径
src_path = Path(__file__).parent.parent / 'src'
if src_path.exists():
    sys.path.insert(0, str(src_path))


def pytest_addoption(parser):
    parser.addoption('--run-slow', action='store_true', default=False, help='运行长时间的统计检查')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--run-slow'):
        return
    skip_slow = pytest.mark.skip(reason='需要 --run-slow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def short_config():
    """短时长配置，用于引擎级测试"""
    from config import SimConfig

    return SimConfig(duration_s=4.0, warmup_s=1.0, seed=7)
