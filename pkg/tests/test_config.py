import pytest

from dumoga.config import Config, ConfigError, load_config, parse_config


def test_defaults():
    cfg = Config()
    assert cfg.signature.hops == 2 and cfg.signature.bins == 6
    assert cfg.optimizer.lr == 2e-5 and cfg.optimizer.batch == 64
    assert cfg.model.max_objects == 10
    assert (cfg.model.visual_dim, cfg.model.text_dim) == (1024, 768)
    assert cfg.signature.landmarks is None


def test_parse_sections():
    cfg = parse_config("""
[signature]
hops = 3
discount = 0.25
landmarks = 8

[optimizer]
lr = 1e-3
batch = 16

[corpus]
offline = yes
endpoint = http://localhost:8080/v1/chat
""")
    assert cfg.signature.hops == 3 and cfg.signature.discount == 0.25 and cfg.signature.landmarks == 8
    assert cfg.optimizer.lr == 1e-3 and cfg.optimizer.batch == 16
    assert cfg.corpus.offline is True and cfg.corpus.endpoint.endswith("/v1/chat")
    assert cfg.signature_config().length == 2 * 6 * 3


def test_unknown_section_and_key():
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[training]\nlr = 1\n")
    with pytest.raises(ConfigError, match="unknown key 'learning_rate'"):
        parse_config("[optimizer]\nlearning_rate = 1\n")


def test_bad_values():
    with pytest.raises(ConfigError, match="hops"):
        parse_config("[signature]\nhops = two\n")
    with pytest.raises(ConfigError, match="signature"):
        parse_config("[signature]\nhops = 0\n")
    with pytest.raises(ConfigError, match="optimizer"):
        parse_config("[optimizer]\nbeta1 = 1.5\n")
    with pytest.raises(ConfigError, match="boolean"):
        parse_config("[corpus]\noffline = maybe\n")
    with pytest.raises(ConfigError):
        parse_config("no section header\n")


def test_optional_none():
    assert parse_config("[signature]\nlandmarks = none\n").signature.landmarks is None


def test_load_config(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[model]\nhidden = 64\n")
    assert load_config(p).model.hidden == 64
    assert load_config(p).to_dict()["model"]["hidden"] == 64
