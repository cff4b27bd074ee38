import json

import pytest

from dreamcycle.config import DEFAULTS, SPOOL_ENV, ConfigError, default_config, load_config


def test_shipped_defaults_match_code(root):
    shipped = json.loads((root / "config.default.json").read_text())
    assert shipped == json.loads(json.dumps(DEFAULTS))


def test_default_parameters(default_cfg):
    r = default_cfg.reverse_params()
    assert (r.bin_width, r.delta_max, r.support_min, r.co_min, r.gate, r.conf_eps, r.lambda_v) == \
        (5, 3, 3, 0.9, 0.5, 0.05, 0.25)
    assert r.activation_for(default_cfg.brain_params().pop_size) == 8
    assert default_cfg.server["port"] == 7474 and default_cfg.server["backoff"] == [1, 2, 4]
    assert default_cfg.day["max_ticks"] == 2000


def test_out_of_range_rejected(make_config):
    with pytest.raises(ConfigError):
        load_config(make_config(reverse={"gate": 1.5}))
    with pytest.raises(ConfigError):
        load_config(make_config(snn={"p_conn": -0.1}))
    with pytest.raises(ConfigError):
        load_config(make_config(seeds=[]))


def test_unknown_parameter_rejected(make_config):
    with pytest.raises(ConfigError):
        load_config(make_config(reverse={"bogus": 1}))


def test_not_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("[1, 2")
    with pytest.raises(ConfigError):
        load_config(p)


def test_relative_paths_resolve_against_config(tmp_path, root):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"world": str(root / "worlds" / "basic.json"),
                             "rules": str(root / "rules" / "basic.rules"), "out_dir": "o"}))
    cfg = load_config(p)
    assert cfg.out_dir == tmp_path / "o"


def test_spool_env_override(default_cfg, monkeypatch, tmp_path):
    monkeypatch.setenv(SPOOL_ENV, str(tmp_path / "sp"))
    assert default_cfg.spool_dir == tmp_path / "sp"


def test_override_validates(tmp_path):
    cfg = default_config(tmp_path)
    assert cfg.override(episodes=3).episodes == 3
    with pytest.raises(ConfigError):
        cfg.override(cycles=0)
