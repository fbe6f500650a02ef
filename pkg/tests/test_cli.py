import pytest

from steinmix.cli import build_parser, main

MICRO_VARIANCE_TOML = """\
[variance]
dims = [1, 2]
methods = ["svgd"]
smi_particle_counts = [1]
smi_elbo_draws = [8]
n_particles = 3
max_steps = 20
smi_max_steps = 20
"""


def test_parser_defaults():
    args = build_parser().parse_args(["variance"])
    assert args.command == "variance"
    assert args.seed == 0
    assert args.scale == "desk"
    assert args.out is None
    assert args.config is None


def test_parser_rejects_unknown_scale():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["variance", "--scale", "huge"])


def test_parser_requires_subcommand():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_sanity_passes_and_prints_check_lines(tmp_path, capsys):
    code = main(["sanity", "--out", str(tmp_path)])
    assert code == 0
    lines = [line for line in capsys.readouterr().out.splitlines() if line]
    assert len(lines) == 5
    assert all(line.startswith("PASS ") for line in lines)
    assert (tmp_path / "run.log").exists()


def test_variance_run_via_toml_overrides(tmp_path, capsys):
    config = tmp_path / "overrides.toml"
    config.write_text(MICRO_VARIANCE_TOML)
    out = tmp_path / "out"
    code = main(["variance", "--config", str(config), "--seed", "1", "--out", str(out)])
    assert code == 0
    assert "done" in capsys.readouterr().out
    assert (out / "metrics.csv").exists()
    assert (out / "particles.json").exists()
    log = (out / "run.log").read_text()
    assert "command=variance seed=1" in log
    assert "summary" in log


def test_rerun_writes_byte_identical_metrics(tmp_path):
    config = tmp_path / "overrides.toml"
    config.write_text(MICRO_VARIANCE_TOML)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["variance", "--config", str(config), "--seed", "2", "--out", str(out)]) == 0
        outs.append((out / "metrics.csv").read_bytes())
    assert outs[0] == outs[1]


def test_config_error_exits_2(tmp_path, capsys):
    config = tmp_path / "overrides.toml"
    config.write_text("[variance]\nlearning_rate = 0.5\n")
    code = main(["variance", "--config", str(config), "--out", str(tmp_path / "out")])
    assert code == 2
    err = capsys.readouterr().err
    assert "configuration error" in err
    assert "variance.learning_rate" in err


def test_invalid_override_value_exits_2(tmp_path, capsys):
    config = tmp_path / "overrides.toml"
    config.write_text("[variance]\nn_particles = 1\n")
    code = main(["variance", "--config", str(config), "--out", str(tmp_path / "out")])
    assert code == 2
    assert "variance.n_particles" in capsys.readouterr().err
