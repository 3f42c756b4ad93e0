"""
参数表默认场景的整体验收（耗时较长，需 --run-slow）
"""

from collections import defaultdict
from pathlib import Path

import numpy as np
import pytest
from decouple import config as env_config

from cli import run_scenario
from config import Scenario, SimConfig, load_scenario
from radio_link import DEFAULT_AMC_SCHEMES, ChannelModel, RadioConfig, select_amc
from rnc import SDU_SIZE_BITS
from sim_engine import run
from tsp_buffer import PDU_SIZE_BITS, SchemeVariant
from utils import rng_substream


pytestmark = pytest.mark.slow

RATES = (64.0, 128.0, 256.0, 512.0, 1024.0)
SCENARIOS = Path(__file__).parent.parent / 'scenarios'


@pytest.fixture(scope='module')
def grid():
    """(variant, rate) -> 该点 5 个种子的报告"""
    reports = run_scenario(Scenario(name='acceptance'), jobs=env_config('TSPSIM_JOBS', default=1, cast=int))
    groups = defaultdict(list)
    for report in reports:
        groups[(report.variant, report.ftp_rate_kbps)].append(report)
    return groups


def mean_of(reports, name):
    values = [getattr(report, name) for report in reports if getattr(report, name) is not None]
    return float(np.mean(values)) if values else 0.0


def test_grid_is_complete(grid):
    assert len(grid) == 10
    assert all(len(reports) == 5 for reports in grid.values())


def test_enhanced_nrt_loss_is_negligible(grid):
    for rate in RATES:
        assert mean_of(grid[('Enhanced', rate)], 'nrt_loss_prob') < 1e-3


def test_enhanced_has_no_tail_drops_or_push_outs(grid):
    for rate in RATES:
        reports = grid[('Enhanced', rate)]
        assert sum(report.nrt_dropped_tail for report in reports) == 0
        assert sum(report.nrt_pushed_out for report in reports) == 0
        assert sum(report.enhanced_pushout_anomalies for report in reports) == 0


def test_original_nrt_loss_grows_with_rate(grid):
    losses = [mean_of(grid[('Original', rate)], 'nrt_loss_prob') for rate in RATES]
    assert all(later >= earlier - 1e-4 for earlier, later in zip(losses, losses[1:]))
    for rate in (512.0, 1024.0):
        original = mean_of(grid[('Original', rate)], 'nrt_loss_prob')
        enhanced = mean_of(grid[('Enhanced', rate)], 'nrt_loss_prob')
        assert original > 0.0
        assert original >= 10.0 * enhanced


def test_lossless_throughput_carries_header_overhead(grid):
    checked = set()
    for (variant, rate), reports in grid.items():
        if mean_of(reports, 'nrt_loss_prob') >= 1e-3:
            continue
        expected = rate * PDU_SIZE_BITS / SDU_SIZE_BITS
        assert mean_of(reports, 'nrt_throughput_bps') / 1000.0 == pytest.approx(expected, rel=0.02)
        checked.add((variant, rate))
    assert {('Enhanced', rate) for rate in RATES} <= checked


def test_variants_agree_on_throughput_at_low_rates(grid):
    for rate in (64.0, 128.0, 256.0):
        original = mean_of(grid[('Original', rate)], 'nrt_throughput_bps')
        enhanced = mean_of(grid[('Enhanced', rate)], 'nrt_throughput_bps')
        assert enhanced == pytest.approx(original, rel=0.02)


def test_voip_is_insensitive_to_ftp_rate(grid):
    for variant in ('Original', 'Enhanced'):
        losses = [mean_of(grid[(variant, rate)], 'rt_loss_prob') for rate in RATES]
        assert max(losses) - min(losses) < 0.005

    for rate in RATES:
        original = grid[('Original', rate)]
        enhanced = grid[('Enhanced', rate)]
        assert abs(mean_of(original, 'rt_loss_prob') - mean_of(enhanced, 'rt_loss_prob')) < 0.005
        assert mean_of(enhanced, 'rt_mean_delay_s') == pytest.approx(mean_of(original, 'rt_mean_delay_s'),
                                                                     rel=0.10, abs=2e-4)


def mean_link_capacity_bps(seed: int, duration_s: float = 400.0, tti_s: float = 0.002) -> float:
    """按 CQI 选档的逐 TTI 可承载 PDU 数的时间平均"""
    config = RadioConfig()
    channel = ChannelModel(config, rng_substream(seed, 'shadowing'), tti_s=tti_s)
    pdus = 0
    ttis = int(round(duration_s / tti_s))
    for k in range(ttis):
        channel.step(k)
        scheme = select_amc(channel.state.sinr_history, config.cqi_latency_ttis, DEFAULT_AMC_SCHEMES)
        if scheme is not None:
            pdus += scheme.tbs_bits(config.n_codes) // PDU_SIZE_BITS
    return pdus * PDU_SIZE_BITS / duration_s


def test_default_calibration_sustains_more_than_one_point_one_mbps():
    capacities = [mean_link_capacity_bps(seed) for seed in (1, 2, 3, 4, 5)]
    assert min(capacities) > 1.1e6


def test_voip_calibration_scenario_puts_rt_loss_in_band():
    scenario = load_scenario(str(SCENARIOS / 'voip_calibration.conf'))
    config = scenario.simulation.with_ftp_rate(128).with_variant(SchemeVariant.ENHANCED)
    losses = [run(config.with_seed(seed)).rt_loss_prob for seed in scenario.seeds]
    assert 0.06 <= float(np.mean(losses)) <= 0.10


def test_default_scenario_digest_is_stable():
    config = SimConfig(duration_s=60.0, warmup_s=10.0, seed=11).with_variant(SchemeVariant.ENHANCED)
    digests = {run(config).digest for _ in range(3)}
    assert len(digests) == 1
