import math

import numpy as np
import pytest
import yaml

from subnet_bne.cli import main, parse_vary, point_label, sweep_points
from subnet_bne.discretization import BlockStrategy
from subnet_bne.engine import METRIC_COLUMNS
from subnet_bne.errors import ConfigError, OutputError
from subnet_bne.output import OutputPaths, csv_text, summary_text, write_strategies

BILINEAR = """
game:
  costs: bilinear
  action_box: [[-1.0, 1.0]]
  type_interval: [[0.0, 1.0], [0.0, 1.0]]
N: 2
engine:
  T: 40
"""

RENT_SEEKING = """
game: rent_seeking
N: 4
rho: 0.5
engine:
  T: 24
oracle:
  tol: 1.0e-4
"""

BROKEN_FRAMES = """
game: rent_seeking
N: 2
schedule:
  kind: frames
  R0: 1
  S0: 1
  frames:
    - within_1: [[1, 2], [2, 1]]
      cross_12: [[1, 1], [1, 2], [1, 3]]
      cross_21: [[1, 1], [1, 2], [1, 3]]
"""


@pytest.fixture
def write_config(tmp_path):
    def write(text, name="experiment.yml"):
        path = tmp_path / name
        path.write_text(text)
        return path

    return write


def test_run_writes_results(write_config, tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(write_config(BILINEAR)), "--out", str(out), "--quiet"]) == 0
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header == ",".join(METRIC_COLUMNS)
    summary = yaml.safe_load((out / "summary.yml").read_text())
    assert len(summary["config_digest"]) == 64
    assert summary["results"]["ticks"] == 40
    assert summary["accounting"]["bytes_total"] == summary["results"]["bytes_total"]
    assert summary["oracle"]["gap"] == 0.0
    assert (out / "strategies.csv").read_text().startswith("side,type_index,theta_point,action_dim,value\n")
    assert (out / "oracle_strategies.csv").exists()


def test_run_writes_trajectories(write_config, tmp_path):
    text = RENT_SEEKING + "outputs:\n  trajectory_types: [0.1, 0.8]\n"
    out = tmp_path / "out"
    assert main(["run", str(write_config(text)), "--out", str(out), "--quiet"]) == 0
    rows = (out / "trajectories.csv").read_text().splitlines()
    assert rows[0] == "tick,side,agent,theta,action_dim,value"
    # ticks 0, 4, ..., 24 for two sides of three agents at two types
    assert len(rows) == 1 + 7 * 2 * 3 * 2
    assert rows[1].startswith("0,1,1,0.1,1,")


def test_run_without_trajectories_writes_no_file(write_config, tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(write_config(BILINEAR)), "--out", str(out), "--quiet"]) == 0
    assert not (out / "trajectories.csv").exists()


def test_oversized_oracle_grid_skips_the_oracle(write_config, tmp_path):
    text = BILINEAR.replace("costs: bilinear", "costs: separable_quadratic").replace(
        "action_box: [[-1.0, 1.0]]", "action_box: [[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]]"
    )
    out = tmp_path / "out"
    assert main(["run", str(write_config(text)), "--out", str(out), "--quiet"]) == 0
    summary = yaml.safe_load((out / "summary.yml").read_text())
    assert "oracle" not in summary
    assert summary["results"]["ticks"] == 40
    assert not (out / "oracle_strategies.csv").exists()


def test_reruns_are_byte_identical(write_config, tmp_path):
    config = str(write_config(RENT_SEEKING))
    assert main(["run", config, "--out", str(tmp_path / "a"), "--quiet"]) == 0
    assert main(["run", config, "--out", str(tmp_path / "b"), "--quiet"]) == 0
    for name in ("metrics.csv", "summary.yml", "strategies.csv", "oracle_strategies.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_oracle_command(write_config, tmp_path):
    out = tmp_path / "oracle"
    assert main(["oracle", str(write_config(RENT_SEEKING)), "--out", str(out)]) == 0
    rows = (out / "strategies.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 4
    assert yaml.safe_load((out / "summary.yml").read_text())["oracle"]["gap"] <= 1e-4


def test_validate_passes_generated_schedule(write_config):
    assert main(["validate", str(write_config(RENT_SEEKING))]) == 0


def test_validate_reports_disconnected_frames(write_config):
    assert main(["validate", str(write_config(BROKEN_FRAMES))]) == 2


def test_config_errors_exit_with_two(write_config, tmp_path):
    assert main(["run", str(tmp_path / "missing.yml")]) == 2
    assert main(["run", str(write_config("N: 0\n"))]) == 2


def test_no_command_prints_help():
    assert main([]) == 2


def test_versions_command():
    assert main(["versions"]) == 0


def test_partial_run_keeps_its_files(write_config, tmp_path):
    text = RENT_SEEKING.replace("T: 24", "T: 4000\n  wall_clock_budget: 1.0e-12")
    out = tmp_path / "partial"
    assert main(["run", str(write_config(text)), "--out", str(out), "--quiet"]) == 1
    summary = yaml.safe_load((out / "summary.yml").read_text())
    assert summary["partial"]["tick"] == summary["results"]["ticks"]
    assert summary["results"]["ticks"] < 4000


def test_sweep_runs_every_point(write_config, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", str(write_config(BILINEAR)), "--vary", "rho=1,0.5;N=2", "--out", str(out), "--quiet"]) == 0
    assert (out / "rho=1_N=2" / "metrics.csv").exists()
    assert (out / "rho=0.5_N=2" / "summary.yml").exists()


def test_sweep_reports_worst_failure(write_config, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", str(write_config(BILINEAR)), "--vary", "rho=1,0", "--out", str(out), "--quiet"]) == 2
    assert (out / "rho=1" / "metrics.csv").exists()


def test_parse_vary():
    assert parse_vary("N=10,20;rho=0.5,1") == {"N": [10, 20], "rho": [0.5, 1]}
    assert parse_vary(" engine.T=5 ; ") == {"engine.T": [5]}
    for text in ("", "N", "N=", ";;"):
        with pytest.raises(ConfigError):
            parse_vary(text)


def test_sweep_points_cover_the_product():
    points = sweep_points({"N": [10, 20], "rho": [0.5, 1]})
    assert len(points) == 4
    assert points[0] == {"N": 10, "rho": 0.5}
    assert point_label(points[-1]) == "N=20_rho=1"


def test_csv_cells():
    text = csv_text(("a", "b", "c"), [(1, 0.1, math.nan), (np.int64(2), np.float64(1e-20), "x")])
    assert text == "a,b,c\n1,0.1,nan\n2,1e-20,x\n"


def test_summary_text_converts_numpy():
    text = summary_text({"d": np.array([1, 2]), "gap": np.float64(0.5), "n": (np.int32(3), 4)})
    assert yaml.safe_load(text) == {"d": [1, 2], "gap": 0.5, "n": [3, 4]}


def test_unwritable_output_reported(tmp_path, rent_seeking_model):
    blocked = tmp_path / "blocked"
    blocked.write_text("")
    paths = OutputPaths.in_directory(blocked)
    with pytest.raises(OutputError) as info:
        write_strategies(paths.strategies, rent_seeking_model, (BlockStrategy.constant(1, 4, 0.5),))
    assert info.value.path == paths.strategies
