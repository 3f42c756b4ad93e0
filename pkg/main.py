#!/usr/bin/env python3
"""
TSP仿真系统 v1.0 - HSDPA 原始 TSP 与增强 TSP（Iub 信用流控）缓存管理仿真
"""

import logging
import sys
from datetime import datetime
from pathlib import Path

# 添加源码目录到Python路径
src_path = Path(__file__).parent / 'src'
if src_path.exists():
    sys.path.insert(0, str(src_path))

from cli import main as cli_main
from utils import logs_directory


def setup_logging(verbose: bool = False) -> None:
    """日志同时写入 logs/ 下的按日文件和终端"""
    log_format = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

    logs_dir = logs_directory()

    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=log_format,
        handlers=[
            logging.FileHandler(logs_dir / f'tspsim_{datetime.now().strftime("%Y%m%d")}.log', encoding='utf-8'),
            logging.StreamHandler()
        ]
    )


def main() -> int:
    setup_logging('--verbose' in sys.argv)
    try:
        return cli_main(sys.argv[1:])
    except Exception as e:
        print(f"❌ 启动失败: {e}")
        logging.error(f"启动失败: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
