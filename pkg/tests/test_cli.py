"""
命令行测试
"""

import csv

import orjson
import pytest

from cli import main, select_oracle_models
from results_manager import RESULT_COLUMNS


SHORT_SCENARIO = """\
# 短场景
[simulation]
duration_s = 3
warmup_s = 1
seed = 2

[sweep]
ftp_rate_kbps = 64, 128
seeds = 1
"""


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / 'short.conf'
    path.write_text(SHORT_SCENARIO, encoding='utf-8')
    return str(path)


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ('SCENARIO', 'OUT', 'SEED', 'JOBS', 'VERBOSE', 'TRACE_DIR'):
        monkeypatch.delenv(f'TSPSIM_{name}', raising=False)


def read_rows(path):
    with open(path, encoding='utf-8', newline='') as handle:
        return list(csv.reader(handle))


def test_defaults_prints_parameter_table(capsys):
    assert main(['defaults']) == 0
    out = capsys.readouterr().out
    assert 'flow_control.iub_latency_ms = 20' in out
    assert 'voip.packet_bits = 304' in out
    assert 'amc.count = 6' in out


def test_run_writes_single_row(tmp_path, scenario_file, capsys):
    out = tmp_path / 'run.csv'
    assert main(['run', '--scenario', scenario_file, '--out', str(out)]) == 0
    rows = read_rows(out)
    assert tuple(rows[0]) == RESULT_COLUMNS
    assert len(rows) == 2
    assert rows[1][:4] == ['short', 'Enhanced', '128.00', '2']
    assert '✅' in capsys.readouterr().out


def test_seed_from_environment(tmp_path, scenario_file, monkeypatch):
    monkeypatch.setenv('TSPSIM_SEED', '9')
    out = tmp_path / 'run.csv'
    assert main(['run', '--scenario', scenario_file, '--out', str(out)]) == 0
    assert read_rows(out)[1][3] == '9'


def test_command_line_overrides_environment(tmp_path, scenario_file, monkeypatch):
    monkeypatch.setenv('TSPSIM_SEED', '9')
    out = tmp_path / 'run.csv'
    assert main(['run', '--scenario', scenario_file, '--out', str(out), '--seed', '4']) == 0
    assert read_rows(out)[1][3] == '4'


def test_run_with_trace_dir(tmp_path, scenario_file):
    trace_dir = tmp_path / 'traces'
    assert main(['run', '--scenario', scenario_file, '--trace-dir', str(trace_dir)]) == 0
    names = sorted(p.name for p in trace_dir.iterdir())
    assert names == ['short_grants.csv', 'short_iub.csv', 'short_packets.csv', 'short_radio.csv']


def test_sweep_covers_rates_and_variants(tmp_path, scenario_file):
    out = tmp_path / 'sweep.csv'
    assert main(['sweep', '--scenario', scenario_file, '--out', str(out)]) == 0
    rows = read_rows(out)[1:]
    assert len(rows) == 4
    assert {(row[1], row[2]) for row in rows} == {
        ('Original', '64.00'), ('Original', '128.00'), ('Enhanced', '64.00'), ('Enhanced', '128.00'),
    }


def test_compare_prints_side_by_side_table(tmp_path, scenario_file, capsys):
    out = tmp_path / 'compare.csv'
    assert main(['compare', '--scenario', scenario_file, '--out', str(out)]) == 0
    text = capsys.readouterr().out
    assert 'NRT丢失[Original] | NRT丢失[Enhanced]' in text
    assert len(read_rows(out)) == 5


def test_compare_needs_both_variants(tmp_path, capsys):
    path = tmp_path / 'single.conf'
    path.write_text("sweep.variants = Enhanced\nsimulation.duration_s = 2\nsimulation.warmup_s = 1\n",
                    encoding='utf-8')
    assert main(['compare', '--scenario', str(path)]) == 2
    assert 'sweep.variants' in capsys.readouterr().out


def test_invalid_scenario_exits_with_config_error(tmp_path, capsys):
    path = tmp_path / 'bad.conf'
    path.write_text("[thresholds]\nh = 400\n", encoding='utf-8')
    assert main(['run', '--scenario', str(path)]) == 2
    out = capsys.readouterr().out
    assert 'thresholds.h' in out
    assert '第 2 行' in out


def test_missing_scenario_file_fails(tmp_path):
    assert main(['run', '--scenario', str(tmp_path / 'nope.conf')]) == 1


def test_oracle_check_small_grid(capsys):
    code = main(['oracle-check', '--n', '2', '--probs', '0.1,0.9', '--variant', 'original', '--serve-probs', '1',
                 '--slots', '20000'])
    out = capsys.readouterr().out
    assert code == 0
    rows = [line for line in out.splitlines() if line.startswith('2,1,')]
    assert len([row for row in rows if ',rt_block,' in row]) == 4
    assert len([row for row in rows if ',nrt_drop,' in row]) == 4


def test_oracle_model_selection():
    assert len(select_oracle_models()) == 180
    assert len(select_oracle_models([2], [0.1, 0.9], 'original')) == 8
    assert len(select_oracle_models([2], [0.1, 0.9], 'original', [1.0])) == 4
    assert len(select_oracle_models([4])) == 2 * 2 * 2 * 9
    assert {m.serve_prob for m in select_oracle_models([2])} == {1.0, 0.6}


def test_sweep_with_seeds_writes_summary(tmp_path):
    path = tmp_path / 'seeds.conf'
    path.write_text("simulation.duration_s = 2\nsimulation.warmup_s = 1\nsweep.ftp_rate_kbps = 64\n"
                    "sweep.variants = Enhanced\nsweep.seeds = 1, 2\n", encoding='utf-8')
    out = tmp_path / 'sweep.csv'
    assert main(['sweep', '--scenario', str(path), '--out', str(out)]) == 0
    summary = orjson.loads((tmp_path / 'sweep.summary.json').read_bytes())
    assert list(summary) == ['Enhanced@64kbps']
    assert len(summary['Enhanced@64kbps']['rt_arrivals']['values']) == 2
