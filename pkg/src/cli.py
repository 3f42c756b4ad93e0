#!/usr/bin/env python3
"""
命令行入口
TSP仿真系统 v1.0

子命令: run / sweep / compare / oracle-check / defaults
环境变量（前缀 TSPSIM_）与同名参数对应，命令行参数优先。
"""

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

from decouple import config as env_config
from tqdm import tqdm

from analytic_oracle import (
    DEFAULT_SLOTS, GRID_CAPACITIES, GRID_PROBABILITIES, GRID_SERVE_PROBS, OracleComparison, OracleModel, OracleVariant,
    compare_with_sim, default_grid,
)
from config import ConfigManager, RunKey, Scenario, SimConfig
from results_manager import (
    ResultsManager, comparison_table, format_comparison, format_summary, oracle_rows, replication_summary,
)
from sim_engine import MetricsReport, run, run_with_traces
from tsp_buffer import SchemeVariant
from utils import ConfigError


ENV_PREFIX = 'TSPSIM_'

logger = logging.getLogger(__name__)


def _optional_int(value) -> Optional[int]:
    if value is None or value == '':
        return None
    return int(value)


def _optional_str(value) -> Optional[str]:
    if value is None or value == '':
        return None
    return str(value)


def _int_list(text: str) -> List[int]:
    return [int(item) for item in text.split(',') if item.strip()]


def _float_list(text: str) -> List[float]:
    return [float(item) for item in text.split(',') if item.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--scenario', default=env_config(f'{ENV_PREFIX}SCENARIO', default=None, cast=_optional_str),
                        help='场景文件路径（缺省为参数表默认值）')
    common.add_argument('--out', default=env_config(f'{ENV_PREFIX}OUT', default=None, cast=_optional_str),
                        help='结果 CSV 输出路径')
    common.add_argument('--seed', type=int, default=env_config(f'{ENV_PREFIX}SEED', default=None, cast=_optional_int),
                        help='覆盖场景中的种子列表')
    common.add_argument('--jobs', type=int, default=env_config(f'{ENV_PREFIX}JOBS', default=1, cast=int),
                        help='并行进程数')
    common.add_argument('--verbose', action='store_true',
                        default=env_config(f'{ENV_PREFIX}VERBOSE', default=False, cast=bool),
                        help='输出 DEBUG 日志')
    common.add_argument('--trace-dir',
                        default=env_config(f'{ENV_PREFIX}TRACE_DIR', default=None, cast=_optional_str),
                        help='写出运行轨迹的目录')

    parser = argparse.ArgumentParser(prog='tspsim', description='HSDPA TSP / 增强 TSP 缓存管理仿真')
    subparsers = parser.add_subparsers(dest='command', required=True)

    subparsers.add_parser('run', parents=[common], help='运行单个配置')
    subparsers.add_parser('sweep', parents=[common], help='按场景扫描 速率 × 方案 × 种子')
    subparsers.add_parser('compare', parents=[common], help='配对种子比较原始方案与增强方案')

    oracle = subparsers.add_parser('oracle-check', parents=[common], help='与马尔可夫链精确解比对')
    oracle.add_argument('--n', type=_int_list, default=None, help='只检查这些缓存容量，例如 2 或 2,4')
    oracle.add_argument('--probs', type=_float_list, default=None, help='到达概率取值，例如 0.1,0.9')
    oracle.add_argument('--variant', choices=[v.value for v in OracleVariant], default=None)
    oracle.add_argument('--serve-probs', type=_float_list, default=None, help='每时隙服务概率，例如 1 或 1,0.6')
    oracle.add_argument('--slots', type=int, default=DEFAULT_SLOTS)

    subparsers.add_parser('defaults', parents=[common], help='打印默认参数及其出处')
    return parser


def _seeds_override(args) -> Optional[Tuple[int, ...]]:
    return (args.seed,) if args.seed is not None else None


def _run_task(task: Tuple[RunKey, SimConfig]) -> MetricsReport:
    key, config = task
    return run(config, scenario=key.scenario)


def execute(tasks: Sequence, worker: Callable, jobs: int = 1, desc: str = '仿真') -> List:
    """顺序或多进程执行，带进度条；结果顺序与任务顺序一致"""
    results = [None] * len(tasks)
    with tqdm(total=len(tasks), desc=desc, unit='run', disable=len(tasks) <= 1) as progress:
        if jobs <= 1:
            for index, task in enumerate(tasks):
                results[index] = worker(task)
                progress.update(1)
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = {pool.submit(worker, task): index for index, task in enumerate(tasks)}
                for future in as_completed(futures):
                    results[futures[future]] = future.result()
                    progress.update(1)
    return results


def run_scenario(scenario: Scenario, seeds: Optional[Tuple[int, ...]] = None, jobs: int = 1) -> List[MetricsReport]:
    tasks = list(scenario.run_configs(seeds))
    logger.info(f"场景 {scenario.name}: 共 {len(tasks)} 次运行，{jobs} 个进程")
    return execute(tasks, _run_task, jobs=jobs)


def _default_out(scenario: Scenario, command: str) -> Path:
    return Path('results') / f"{scenario.name}_{command}.csv"


def cmd_run(args, scenario: Scenario) -> int:
    config = scenario.simulation
    if args.seed is not None:
        config = config.with_seed(args.seed)

    if args.trace_dir or config.trace:
        report, traces = run_with_traces(config, scenario=scenario.name)
        ResultsManager().write_traces(traces, args.trace_dir or 'traces', prefix=f"{scenario.name}_")
    else:
        report = run(config, scenario=scenario.name)

    print(format_summary(report))
    if args.out:
        ResultsManager().write_results([report], args.out)
        print(f"✅ 结果已写入 {args.out}")
    return 0


def cmd_sweep(args, scenario: Scenario) -> int:
    reports = run_scenario(scenario, _seeds_override(args), jobs=args.jobs)
    out = Path(args.out) if args.out else _default_out(scenario, 'sweep')
    ResultsManager().write_results(reports, str(out))
    summary = replication_summary(reports)
    if summary:
        ResultsManager().write_summary_json(summary, str(out.with_suffix('.summary.json')))
    print(f"✅ 完成 {len(reports)} 次运行，结果已写入 {out}")
    return 0


def cmd_compare(args, scenario: Scenario) -> int:
    missing = {SchemeVariant.ORIGINAL, SchemeVariant.ENHANCED} - set(scenario.variants)
    if missing:
        raise ConfigError('sweep.variants', f"compare 需要两种方案，缺少 {', '.join(v.value for v in missing)}")

    reports = run_scenario(scenario, _seeds_override(args), jobs=args.jobs)
    out = Path(args.out) if args.out else _default_out(scenario, 'compare')
    ResultsManager().write_results(reports, str(out))

    print(format_comparison(comparison_table(reports)))
    anomalies = sum(report.enhanced_pushout_anomalies for report in reports)
    if anomalies:
        print(f"⚠️ 增强方案出现 {anomalies} 次缓存满 RT 到达")
    print(f"✅ 完成 {len(reports)} 次运行，结果已写入 {out}")
    return 0


def _oracle_task(task: Tuple[OracleModel, int, int]) -> OracleComparison:
    model, slots, seed = task
    return compare_with_sim(model, slots=slots, seed=seed)


def select_oracle_models(capacities: Optional[Iterable[int]] = None,
                         probabilities: Optional[Sequence[float]] = None,
                         variant: Optional[str] = None,
                         serve_probs: Optional[Sequence[float]] = None) -> List[OracleModel]:
    variants = (OracleVariant(variant),) if variant else tuple(OracleVariant)
    return default_grid(capacities or GRID_CAPACITIES, probabilities or GRID_PROBABILITIES, variants,
                        serve_probs or GRID_SERVE_PROBS)


def cmd_oracle_check(args, scenario: Scenario) -> int:
    models = select_oracle_models(args.n, args.probs, args.variant, args.serve_probs)
    seed = args.seed if args.seed is not None else scenario.simulation.seed
    comparisons = execute([(model, args.slots, seed) for model in models], _oracle_task,
                          jobs=args.jobs, desc='精确解比对')

    failed = [c for c in comparisons if not c.passed]
    for comparison in comparisons:
        for row in oracle_rows(comparison):
            print(','.join(row))
    if args.out:
        ResultsManager().write_oracle_results(comparisons, args.out)

    if failed:
        print(f"❌ {len(failed)}/{len(comparisons)} 个模型超出误差界")
        return 1
    print(f"✅ 全部 {len(comparisons)} 个模型通过")
    return 0


def cmd_defaults(args, scenario: Scenario) -> int:
    print(ConfigManager().dump(scenario))
    return 0


COMMANDS = {
    'run': cmd_run,
    'sweep': cmd_sweep,
    'compare': cmd_compare,
    'oracle-check': cmd_oracle_check,
    'defaults': cmd_defaults,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        scenario = ConfigManager(args.scenario).load_scenario()
        return COMMANDS[args.command](args, scenario)
    except ConfigError as e:
        logger.error(f"配置错误: {e}")
        print(f"❌ 配置错误: {e}")
        return 2
    except KeyboardInterrupt:
        print("\n⚠️  收到中断信号，已停止")
        return 130
    except Exception as e:
        logger.error(f"运行失败: {e}", exc_info=True)
        print(f"❌ 运行失败: {e}")
        return 1


if __name__ == '__main__':
    sys.exit(main())
