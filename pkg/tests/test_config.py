import textwrap

import pytest

from dockbench.config import (
    PRESETS,
    ConfigError,
    MissionScript,
    Stage,
    config_digest,
    dump_config,
    from_dict,
    load_config,
    real0p5m,
    sim2m,
    to_dict,
)


def write(tmp_path, text):
    p = tmp_path / "cfg.yaml"
    p.write_text(textwrap.dedent(text))
    return p


def test_presets_valid_and_distinct():
    for make in PRESETS.values():
        assert make().validate() == []
    assert sim2m().spec.g[2] == 2.0 and real0p5m().spec.g[2] == 0.5
    assert config_digest(sim2m()) != config_digest(real0p5m())


def test_dict_round_trip_preserves_digest():
    cfg = real0p5m()
    assert config_digest(from_dict(to_dict(cfg))) == config_digest(cfg)


def test_yaml_round_trip(tmp_path):
    cfg = sim2m()
    p = write(tmp_path, dump_config(cfg))
    assert config_digest(load_config(p)) == config_digest(cfg)


def test_preset_layering(tmp_path):
    p = write(tmp_path, """
        preset: real0p5m
        sensors:
          mocap_pos_noise: 0.01
    """)
    cfg = load_config(p)
    assert cfg.sensors.mocap_pos_noise == 0.01
    assert cfg.spec.g == real0p5m().spec.g


def test_crossed_tolerances_name_both_fields(tmp_path):
    p = write(tmp_path, """
        tol:
          eps_b_fine: 0.1
          eps_b_coarse: 0.05
    """)
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    msg = str(exc.value)
    assert "eps_b_fine" in msg and "eps_b_coarse" in msg
    assert f"{p}:3:" in msg  # the line of the first field named


def test_unknown_and_mistyped_fields(tmp_path):
    p = write(tmp_path, """
        dt: fast
        world:
          bogus: 1
    """)
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    text = str(exc.value)
    assert "dt" in text and "world.bogus" in text


def test_yaml_errors_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "a: [1, 2\n"))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "- 1\n- 2\n"))
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "nope.yaml")


def test_script_validation():
    bad = MissionScript((Stage("hold"), Stage("land")))
    errs = " ".join(bad.validate())
    assert "docking_window" in errs and "takeoff" in errs
