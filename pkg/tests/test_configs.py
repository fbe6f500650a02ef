import dataclasses

import pytest

from steinmix.configs import (
    CONFIG_KINDS,
    CsvRegConfig,
    Reg1dConfig,
    RecoveryConfig,
    VarianceConfig,
    build_config,
    config_hash,
    load_toml,
    version_string,
)


def test_presets_validate():
    for kind, cls in CONFIG_KINDS.items():
        for preset in (cls.full(), cls.desk()):
            if kind == "csvreg":
                preset = dataclasses.replace(preset, path="data.csv", target_column="y")
            preset.validate(kind)


def test_variance_defaults_match_published_protocol():
    config = VarianceConfig.full()
    assert config.max_steps == 60000
    assert config.smi_max_steps == 60000
    assert config.svgd_step_size == 0.05
    assert config.smi_step_size == 0.05
    assert config.svgd_init_half_width == 20.0
    assert config.smi_loc_init_half_width == 2.0
    assert config.smi_scale_init == 0.1
    assert len(config.smi_elbo_draws) == len(config.smi_particle_counts)


def test_desk_variance_is_smaller():
    full, desk = VarianceConfig.full(), VarianceConfig.desk()
    assert len(desk.dims) < len(full.dims)
    assert desk.max_steps < full.max_steps
    assert desk.smi_max_steps < full.smi_max_steps
    assert len(desk.smi_elbo_draws) == len(desk.smi_particle_counts)


def test_validation_reports_field_path():
    with pytest.raises(ValueError, match=r"variance\.dims"):
        dataclasses.replace(VarianceConfig.full(), dims=()).validate()
    with pytest.raises(ValueError, match=r"variance\.smi_elbo_draws"):
        dataclasses.replace(VarianceConfig.full(), smi_elbo_draws=(10,)).validate()
    with pytest.raises(ValueError, match=r"reg1d\.hdi_mass"):
        dataclasses.replace(Reg1dConfig.full(), hdi_mass=1.3).validate()
    with pytest.raises(ValueError, match=r"recovery\.step_size"):
        dataclasses.replace(RecoveryConfig.full(), step_size=-0.1).validate()
    with pytest.raises(ValueError, match=r"csvreg\.path"):
        CsvRegConfig.full().validate()
    with pytest.raises(ValueError, match=r"csvreg\.activation"):
        dataclasses.replace(CsvRegConfig.full(), path="a.csv", target_column="y", activation="selu").validate()


def test_build_config_presets():
    assert build_config("variance", "full") == VarianceConfig.full()
    assert build_config("variance", "desk") == VarianceConfig.desk()
    with pytest.raises(ValueError, match="unknown experiment"):
        build_config("sampling")
    with pytest.raises(ValueError, match="scale"):
        build_config("variance", "huge")


def test_build_config_applies_overrides():
    config = build_config("variance", "desk", {"max_steps": 17, "dims": [2, 3]})
    assert config.max_steps == 17
    assert config.dims == (2, 3)


def test_build_config_reads_experiment_table():
    overrides = {"reg1d": {"repeats": 2, "step_size": 1}}
    config = build_config("reg1d", "desk", overrides)
    assert config.repeats == 2
    assert config.step_size == 1.0 and isinstance(config.step_size, float)


def test_build_config_rejects_unknown_key():
    with pytest.raises(ValueError, match=r"variance\.learning_rate: unknown setting"):
        build_config("variance", "desk", {"learning_rate": 0.1})


def test_build_config_rejects_wrong_type():
    with pytest.raises(ValueError, match=r"variance\.max_steps"):
        build_config("variance", "desk", {"max_steps": "many"})


def test_build_config_validates_result():
    with pytest.raises(ValueError, match=r"variance\.n_particles"):
        build_config("variance", "desk", {"n_particles": 1})


def test_load_toml_roundtrip(tmp_path):
    path = tmp_path / "overrides.toml"
    path.write_text('[variance]\nmax_steps = 12\ndims = [1, 4]\n')
    config = build_config("variance", "desk", load_toml(path))
    assert config.max_steps == 12
    assert config.dims == (1, 4)


def test_config_hash_stable_and_sensitive():
    a = config_hash(VarianceConfig.full())
    b = config_hash(VarianceConfig.full())
    c = config_hash(dataclasses.replace(VarianceConfig.full(), max_steps=59999))
    assert a == b
    assert a != c
    assert len(a) == 12 and all(ch in "0123456789abcdef" for ch in a)


def test_config_hash_differs_across_kinds():
    assert config_hash(VarianceConfig.full()) != config_hash(Reg1dConfig.full())


def test_version_string_smoke():
    v = version_string()
    assert isinstance(v, str) and v
