import pytest

from zsvad.config import PipelineConfig, dump_config, load_config, parse_config
from zsvad.errors import ConfigError


def test_empty_file_is_defaults():
    assert parse_config("") == PipelineConfig()


def test_dump_round_trips():
    cfg = parse_config("[compression]\nratio = 0.5\n[run]\nseed = 7\n")
    assert cfg.compression.ratio == 0.5 and cfg.run.seed == 7
    assert parse_config(dump_config(cfg)) == cfg


@pytest.mark.parametrize("text", [
    "[nope]\nx = 1\n",
    "[run]\nbogus = 1\n",
    "[run]\nseed = abc\n",
    "[compression]\nratio = 2\n",
    "[semantic]\nprovider = fixture\n",
    "[semantic]\nprovider = magic\n",
    "[encoder]\npatch_size = 0\n",
    "not an ini",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_hash_ignores_worker_count():
    base = PipelineConfig()
    assert base.replace("run", workers=4).config_hash() == base.config_hash()
    assert base.replace("run", seed=1).config_hash() != base.config_hash()


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.ini")
