import logging

import pytest

from qtensor_fd.config import parse_config
from qtensor_fd.errors import ConfigError


def _write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_empty_config_needs_grid_size(tmp_path):
    with pytest.raises(ConfigError, match="missing grid size"):
        parse_config(_write(tmp_path, "# nothing here\n"))


def test_catalog_experiment_resolves():
    cfg = parse_config(overrides=["experiment=example1"])
    spec = cfg.spec
    assert (spec.n_cells, spec.steps, spec.T, spec.params.dt) == (80, 400, 0.4, 0.001)
    assert cfg.snapshots == (0.0, 0.4)
    assert cfg.solver.rel_tolerance == 1e-10 and cfg.deterministic is False


def test_negative_quartic_coefficient_names_the_line(tmp_path):
    path = _write(tmp_path, "experiment = example1\nmodel.c = -1\n")
    with pytest.raises(ConfigError) as exc:
        parse_config(path)
    assert exc.value.category == "config"
    assert f"{path}:2: model.c = -1" in str(exc.value)


def test_command_line_beats_file_and_is_logged(tmp_path, caplog):
    path = _write(tmp_path, "experiment = example1\ntime.dt = 0.01\n")
    with caplog.at_level(logging.INFO, logger="qtensor_fd.config"):
        cfg = parse_config(path, overrides=["time.dt=0.005"])
    assert cfg.spec.params.dt == 0.005 and cfg.spec.steps == 80
    assert any("time.dt" in m and "--set time.dt=0.005" in m and "overrides" in m for m in caplog.messages)


def test_defaults_are_logged(caplog):
    with caplog.at_level(logging.INFO, logger="qtensor_fd.config"):
        parse_config(overrides=["grid.n=8", "initial=example1", "grid.side=2", "time.dt=0.01", "time.steps=4", "model.L1=0.001"])
    assert any(m.startswith("model.A0 = 500.0 (defaulted)") for m in caplog.messages)
    assert any(m.startswith("model.L1 = 0.001 (--set") for m in caplog.messages)


@pytest.mark.parametrize(
    "item,message",
    [
        ("grid.size=3", "unknown key"),
        ("grid.n=abc", "cannot parse"),
        ("grid.n=1", "grid.n must be"),
        ("noequals", "key = value"),
        ("experiment=example9", "unknown experiment"),
        ("solver.preconditioner=ilu", "preconditioner"),
    ],
)
def test_bad_overrides(item, message):
    base = ["experiment=example1"] if not item.startswith("experiment") else []
    with pytest.raises(ConfigError, match=message):
        parse_config(overrides=base + [item])


def test_time_settings_must_agree():
    with pytest.raises(ConfigError, match="does not equal"):
        parse_config(overrides=["experiment=example1", "time.dt=0.01", "time.steps=10", "time.T=0.4"])
    cfg = parse_config(overrides=["experiment=example1", "time.dt=0.01", "time.steps=40", "time.T=0.4"])
    assert cfg.spec.steps == 40
    with pytest.raises(ConfigError, match="integer multiple"):
        parse_config(overrides=["experiment=example1", "time.dt=0.003"])
    cfg = parse_config(overrides=["experiment=example1", "time.steps=100"])
    assert cfg.spec.params.dt == pytest.approx(0.004) and cfg.spec.T == 0.4


def test_snapshot_times_snap_to_steps(caplog):
    with caplog.at_level(logging.INFO):
        cfg = parse_config(overrides=["experiment=example1", "time.steps=40", "output.snapshots=0,0.104,0.4"])
    assert cfg.snapshots == pytest.approx((0.0, 0.1, 0.4))
    assert any("snapped" in m for m in caplog.messages)
    with pytest.raises(ConfigError):
        parse_config(overrides=["experiment=example1", "output.snapshots=0.5"])


def test_short_run_drops_catalog_snapshots():
    cfg = parse_config(overrides=["experiment=example2_defect", "time.T=1.0", "time.steps=1000"])
    assert cfg.snapshots == (0.0, 0.5, 1.0)


def test_header_lines_are_sorted_and_omit_output_dir(tmp_path):
    cfg = parse_config(overrides=["experiment=zero", f"output.dir={tmp_path}"])
    lines = cfg.header_lines()
    assert lines == sorted(lines)
    assert "experiment = zero" in lines and "time.steps = 100" in lines
    assert not any(line.startswith("output.dir") for line in lines)
    assert cfg.out_dir == tmp_path


def test_convergence_scales():
    desk = parse_config(command="convergence-time")
    assert desk.spec.name == "example1" and desk.spec.n_cells == 50
    assert desk.ladder == (40, 80, 160, 320) and desk.reference_steps == 1280
    full = parse_config(command="convergence-time", overrides=["convergence.scale=full"])
    assert full.spec.n_cells == 100 and full.reference_steps == 8000 and len(full.ladder) == 6
    assert desk.solver.rel_tolerance == 1e-13
    space = parse_config(command="convergence-space")
    assert space.ladder == (10, 20, 40) and (space.reference_n, space.reference_steps) == (160, 1600)
    with pytest.raises(ConfigError):
        parse_config(command="convergence-time", overrides=["convergence.scale=huge"])


def test_model_alias_and_comments(tmp_path):
    path = _write(tmp_path, "# comment\n\nexperiment = example3_hole\nmodel.L = 0.005\n")
    cfg = parse_config(path)
    assert cfg.spec.params.L1 == 0.005 and cfg.spec.params.a == -0.2


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config("/nonexistent/run.cfg")
