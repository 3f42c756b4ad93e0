#!/usr/bin/env python3
"""
小规模 TSP 缓存的离散时间马尔可夫链精确解
TSP仿真系统 v1.0

每个时隙依次：RT 伯努利到达、NRT 伯努利到达、以概率 serve_prob 按 RT 优先服务 1 个 PDU。
serve_prob = 1 时 RT 每时隙都被服务，时隙开始时 RT 队列恒空，R 限制不起作用。
状态 (i, j) 为时隙开始时的 RT/NRT 个数，i <= r, i + j <= n。
只覆盖缓存机制本身，不含流控闭环。
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from itertools import product
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from sim_engine import SlottedResult, SlottedTspSimulator
from tsp_buffer import SchemeVariant, TspBufferConfig


logger = logging.getLogger(__name__)

MAX_ORACLE_CAPACITY = 12
DEFAULT_SLOTS = 50_000
DEFAULT_WARMUP_SLOTS = 500
BATCHES = 20


class OracleVariant(str, Enum):
    ORIGINAL = 'original'
    # 增强方案的缓存机制（无流控）：缓存满时 RT 到达被阻塞
    NO_PUSH_OUT = 'no_push_out'


class OracleConvergenceError(RuntimeError):
    """幂迭代未收敛"""


@dataclass(frozen=True)
class OracleModel:
    n: int
    r: int
    p_rt: float
    p_nrt: float
    variant: OracleVariant = OracleVariant.ORIGINAL
    serve_prob: float = 1.0

    def __post_init__(self):
        if not 1 <= self.n <= MAX_ORACLE_CAPACITY:
            raise ValueError(f"n 必须在 1..{MAX_ORACLE_CAPACITY} 内: {self.n}")
        if not 1 <= self.r <= self.n:
            raise ValueError(f"需满足 1 <= r <= n: r={self.r}, n={self.n}")
        if not (0 <= self.p_rt <= 1 and 0 <= self.p_nrt <= 1):
            raise ValueError(f"到达概率必须在 [0, 1] 内: {self.p_rt}, {self.p_nrt}")
        if not 0 < self.serve_prob <= 1:
            raise ValueError(f"服务概率必须在 (0, 1] 内: {self.serve_prob}")
        object.__setattr__(self, 'variant', OracleVariant(self.variant))

    def states(self) -> List[Tuple[int, int]]:
        return [(i, j) for i in range(self.r + 1) for j in range(self.n - i + 1)]

    def buffer_config(self) -> TspBufferConfig:
        """退化仿真所用的缓存配置，与本模型同一套准入规则"""
        if self.variant is OracleVariant.ORIGINAL:
            return TspBufferConfig(capacity_n=self.n, rt_limit_r=self.r, lower_l=None, upper_h=None,
                                   variant=SchemeVariant.ORIGINAL)
        return TspBufferConfig(capacity_n=self.n, rt_limit_r=self.r, lower_l=None, upper_h=None,
                               variant=SchemeVariant.ENHANCED, enhanced_full_policy='block')


@dataclass
class OracleSolution:
    model: OracleModel
    states: List[Tuple[int, int]]
    stationary: np.ndarray
    transition: np.ndarray
    rt_block_prob: float
    nrt_drop_prob: float
    iterations: int
    residual: float

    def probability_of(self, state: Tuple[int, int]) -> float:
        return float(self.stationary[self.states.index(state)])


def _rt_arrival(model: OracleModel, i: int, j: int) -> Tuple[int, int, int, int]:
    """返回 (i', j', RT 阻塞数, NRT 推出数)"""
    if i >= model.r:
        return i, j, 1, 0
    if i + j < model.n:
        return i + 1, j, 0, 0
    if model.variant is OracleVariant.NO_PUSH_OUT:
        return i, j, 1, 0
    return i + 1, j - 1, 0, 1


def _nrt_arrival(model: OracleModel, i: int, j: int) -> Tuple[int, int, int]:
    if i + j >= model.n:
        return i, j, 1
    return i, j + 1, 0


def _serve(i: int, j: int) -> Tuple[int, int]:
    if i > 0:
        return i - 1, j
    if j > 0:
        return i, j - 1
    return i, j


def slot_outcomes(model: OracleModel, state: Tuple[int, int]) -> List[Tuple[float, Tuple[int, int], int, int]]:
    """单个时隙的所有分支：(概率, 下一状态, RT 阻塞数, NRT 丢失数)"""
    outcomes = []
    for rt_arrives, nrt_arrives, served in product((True, False), repeat=3):
        prob = ((model.p_rt if rt_arrives else 1 - model.p_rt)
                * (model.p_nrt if nrt_arrives else 1 - model.p_nrt)
                * (model.serve_prob if served else 1 - model.serve_prob))
        if prob == 0:
            continue
        i, j = state
        rt_blocked = nrt_lost = 0
        if rt_arrives:
            i, j, rt_blocked, pushed = _rt_arrival(model, i, j)
            nrt_lost += pushed
        if nrt_arrives:
            i, j, dropped = _nrt_arrival(model, i, j)
            nrt_lost += dropped
        outcomes.append((prob, _serve(i, j) if served else (i, j), rt_blocked, nrt_lost))
    return outcomes


def build_transition_matrix(model: OracleModel) -> Tuple[List[Tuple[int, int]], np.ndarray, np.ndarray, np.ndarray]:
    """返回状态表、转移矩阵与每个状态的期望 RT 阻塞数、NRT 丢失数"""
    states = model.states()
    index = {state: k for k, state in enumerate(states)}
    size = len(states)
    P = np.zeros((size, size))
    rt_loss = np.zeros(size)
    nrt_loss = np.zeros(size)

    for k, state in enumerate(states):
        for prob, nxt, rt_blocked, nrt_lost in slot_outcomes(model, state):
            P[k, index[nxt]] += prob
            rt_loss[k] += prob * rt_blocked
            nrt_loss[k] += prob * nrt_lost

    row_error = np.abs(P.sum(axis=1) - 1.0).max()
    if row_error > 1e-12:
        raise RuntimeError(f"转移矩阵行和偏离 1: {row_error:.3e}")
    return states, P, rt_loss, nrt_loss


def solve(model: OracleModel, tolerance: float = 1e-12, max_iterations: int = 1_000_000) -> OracleSolution:
    """幂迭代求平稳分布，并给出 RT 阻塞概率与 NRT 丢失概率（含推出）"""
    states, P, rt_loss, nrt_loss = build_transition_matrix(model)

    # 懒惰链 (P + I)/2 平稳分布相同且非周期
    lazy = 0.5 * (P + np.eye(len(states)))
    pi = np.zeros(len(states))
    pi[states.index((0, 0))] = 1.0

    residual = math.inf
    for iteration in range(1, max_iterations + 1):
        nxt = pi @ lazy
        residual = float(np.abs(nxt - pi).max())
        pi = nxt
        if residual < tolerance:
            break
    else:
        raise OracleConvergenceError(f"幂迭代 {max_iterations} 次未收敛，残差 {residual:.3e}: {model}")

    pi = pi / pi.sum()
    residual = float(np.abs(pi @ P - pi).max())

    rt_block = float(pi @ rt_loss) / model.p_rt if model.p_rt > 0 else 0.0
    nrt_drop = float(pi @ nrt_loss) / model.p_nrt if model.p_nrt > 0 else 0.0
    logger.debug(f"{model}: 迭代 {iteration} 次，残差 {residual:.2e}")

    return OracleSolution(
        model=model,
        states=states,
        stationary=pi,
        transition=P,
        rt_block_prob=rt_block,
        nrt_drop_prob=nrt_drop,
        iterations=iteration,
        residual=residual,
    )


def batch_means_sigma(losses: np.ndarray, arrivals: np.ndarray, batches: int = BATCHES) -> float:
    """分批比值的标准误，计入相邻时隙的相关性"""
    ratios = []
    for loss_batch, arrival_batch in zip(np.array_split(losses, batches), np.array_split(arrivals, batches)):
        total = arrival_batch.sum()
        if total > 0:
            ratios.append(loss_batch.sum() / total)
    if len(ratios) < 2:
        return 0.0
    return float(np.std(ratios, ddof=1) / math.sqrt(len(ratios)))


@dataclass
class MetricCheck:
    name: str
    exact: float
    simulated: float
    bound: float

    @property
    def deviation(self) -> float:
        return abs(self.simulated - self.exact)

    @property
    def passed(self) -> bool:
        return self.deviation <= self.bound


@dataclass
class OracleComparison:
    model: OracleModel
    slots: int
    checks: List[MetricCheck]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def max_deviation(self) -> Dict[str, float]:
        return {check.name: check.deviation for check in self.checks}


def _metric_check(name: str, exact: float, losses: np.ndarray, arrival_flags: np.ndarray, z: float) -> MetricCheck:
    arrivals = int(arrival_flags.sum())
    if arrivals == 0:
        return MetricCheck(name, exact, 0.0, 0.0)

    simulated = float(losses.sum()) / arrivals
    sigma_binomial = math.sqrt(max(exact * (1 - exact), 0.0) / arrivals)
    sigma_batches = batch_means_sigma(losses, arrival_flags)
    # 至少容许一次事件的分辨率
    bound = max(z * max(sigma_binomial, sigma_batches), 1.0 / arrivals)
    return MetricCheck(name, exact, simulated, bound)


def compare_with_sim(model: OracleModel, slots: int = DEFAULT_SLOTS, seed: int = 1, z: float = 3.0,
                     warmup_slots: int = DEFAULT_WARMUP_SLOTS,
                     sim_overrides: Optional[Dict] = None) -> OracleComparison:
    """在退化仿真模式下运行同一模型，与精确解比较

    sim_overrides 只作用于仿真侧的缓存配置（例如 {'capacity_n': n + 1} 或 {'rt_limit_r': r + 1}），用于变异检查。
    """
    exact = solve(model)

    buffer_config = model.buffer_config()
    if sim_overrides:
        buffer_config = replace(buffer_config, **sim_overrides)

    result: SlottedResult = SlottedTspSimulator(
        buffer_config, model.p_rt, model.p_nrt, slots, seed=seed, warmup_slots=warmup_slots,
        serve_prob=model.serve_prob,
    ).simulate()

    checks = [
        _metric_check('rt_block', exact.rt_block_prob, result.rt_blocked_flags, result.rt_arrival_flags, z),
        _metric_check('nrt_drop', exact.nrt_drop_prob, result.nrt_lost_counts, result.nrt_arrival_flags, z),
    ]
    comparison = OracleComparison(model=model, slots=slots, checks=checks)
    if not comparison.passed:
        logger.warning(f"仿真与精确解偏差超限: {model} {comparison.max_deviation()}")
    return comparison


GRID_CAPACITIES = (2, 4, 8)
GRID_PROBABILITIES = (0.1, 0.5, 0.9)
# 0.6 使 RT 队列能积压到 R
GRID_SERVE_PROBS = (1.0, 0.6)


def default_grid(capacities: Iterable[int] = GRID_CAPACITIES,
                 probabilities: Sequence[float] = GRID_PROBABILITIES,
                 variants: Iterable[OracleVariant] = tuple(OracleVariant),
                 serve_probs: Sequence[float] = GRID_SERVE_PROBS) -> List[OracleModel]:
    """n ∈ capacities，r ∈ {1, n/2}（去重），(p_rt, p_nrt) ∈ probabilities²，服务概率 ∈ serve_probs"""
    models = []
    for variant in variants:
        for n in capacities:
            for r in sorted({1, max(1, n // 2)}):
                for serve_prob in serve_probs:
                    for p_rt, p_nrt in product(probabilities, repeat=2):
                        models.append(OracleModel(n=n, r=r, p_rt=p_rt, p_nrt=p_nrt, variant=variant,
                                                  serve_prob=serve_prob))
    return models
