import pytest

from invbss.config import RunConfig, dump_config, load_config, parse_config, thread_count
from invbss.errors import ConfigError


def test_empty_text_gives_defaults():
    assert parse_config("") == RunConfig()


def test_dump_round_trip():
    cfg = parse_config("[cells]\ncells_per_axis = 8\n[synth]\npitches_hz = 120, 180\n",
                       ["search.null_shifts=5", "features.pair_average=no"])
    assert cfg.cells.cells_per_axis == 8
    assert cfg.synth.pitches_hz == (120.0, 180.0)
    assert cfg.search.null_shifts == 5 and cfg.features.pair_average is False
    assert parse_config(dump_config(cfg)) == cfg


def test_optional_values_accept_none():
    cfg = parse_config("[cells]\ncells_per_axis = 6\n", ["cells.cells_per_axis=none"])
    assert cfg.cells.cells_per_axis is None


def test_overrides_win_over_the_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[runtime]\nthreads = 2\n[linearity]\nthreshold = 0.1\n")
    cfg = load_config(path, ["linearity.threshold=0.02"])
    assert cfg.runtime.threads == 2 and cfg.linearity.threshold == 0.02


@pytest.mark.parametrize("text,overrides", [
    ("[nonsense]\na = 1\n", ()),
    ("[cells]\ncolour = red\n", ()),
    ("[cells]\nmin_count = many\n", ()),
    ("[features]\nn_mel = 0\n", ()),
    ("[reduce]\nenabled = perhaps\n", ()),
    ("not an ini file", ()),
    ("", ["threads=4"]),
    ("", ["runtime.threads"]),
])
def test_bad_configs_are_rejected(text, overrides):
    with pytest.raises(ConfigError):
        parse_config(text, overrides)


def test_runtime_section_can_be_left_out():
    text = dump_config(RunConfig(), runtime=False)
    assert "[runtime]" not in text and "[cells]" in text


def test_thread_count():
    cfg = parse_config("[runtime]\nthreads = 3\n")
    assert thread_count(cfg) == 3
    assert thread_count(cfg, 8) == 8
    assert thread_count(cfg, 0) == 1
