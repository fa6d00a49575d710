from pathlib import Path

import pytest

from roler_lab.config import METHODS, dump_config, field_names, load_config, parse_config
from roler_lab.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MINIMAL = """
[run]
method = roler
seed = 4

[dataset]
seed = 11
"""


def test_minimal_config_fills_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.method == "roler"
    assert cfg.seed == 4 and cfg.a2c.seed == 4
    assert cfg.dataset.synthetic.seed == 11
    assert cfg.shaping.k == 9


@pytest.mark.parametrize("drop,field", [("method = roler\n", "run.method"), ("seed = 4\n", "run.seed"),
                                        ("seed = 11\n", "dataset.seed")])
def test_missing_required_field_is_named(drop, field):
    text = MINIMAL
    # drop only the occurrence inside the intended section
    if field == "dataset.seed":
        head, tail = text.split("[dataset]")
        text = head + "[dataset]" + tail.replace(drop, "")
    else:
        head, tail = text.split("[dataset]")
        text = head.replace(drop, "") + "[dataset]" + tail
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.field == field
    assert field in str(info.value)


def test_required_fields_depend_on_command():
    parse_config("[dataset]\nseed = 1\n", command="generate")
    parse_config("[bound]\nseed = 1\n", command="verify-bound")
    with pytest.raises(ConfigError, match="bound.seed"):
        parse_config("[dataset]\nseed = 1\n", command="verify-bound")
    with pytest.raises(ConfigError, match="ablate.methods"):
        parse_config("[dataset]\nseed = 1\n[ablate]\nseeds = 0 1\n", command="ablate")


@pytest.mark.parametrize("extra,field", [
    ("[shaping]\nk = nine\n", "shaping.k"),
    ("[shaping]\nk = 0\n", "shaping.k"),
    ("[shaping]\nbogus = 1\n", "shaping.bogus"),
    ("[nowhere]\nx = 1\n", "nowhere"),
    ("[shaping]\nvariant = squared\n", "shaping.variant"),
    ("[a2c]\ngamma = 1.0\n", "a2c.gamma"),
    ("[bound]\ndelta = 0\n", "bound.delta"),
    ("[eval]\ngreedy = maybe\n", "eval.greedy"),
])
def test_bad_values_are_named(extra, field):
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL + extra)
    assert info.value.field == field


def test_bad_method():
    with pytest.raises(ConfigError, match="run.method"):
        parse_config(MINIMAL.replace("method = roler", "method = dqn"))


def test_files_kind_needs_paths():
    text = "[run]\nmethod = roler\nseed = 0\n[dataset]\nkind = files\n"
    with pytest.raises(ConfigError, match="dataset"):
        parse_config(text)


def test_inline_comments_and_lists():
    cfg = parse_config(MINIMAL + "[ablate]\nseeds = 0 1 2  # three seeds\nks = 1 3 9\n")
    assert cfg.ablate.seeds == (0, 1, 2)
    assert tuple(cfg.ablate.ks) == (1, 3, 9)


def test_shipped_config_round_trips():
    cfg = load_config(CONFIGS / "synthetic.ini")
    again = parse_config(dump_config(cfg))
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()


def test_hash_tracks_content():
    a = parse_config(MINIMAL)
    b = parse_config(MINIMAL.replace("seed = 4", "seed = 5"))
    assert a.config_hash() != b.config_hash()
    assert a.config_hash() == parse_config(MINIMAL).config_hash()
    assert len(a.config_hash()) == 16


def test_with_seed_sets_training_seed():
    cfg = parse_config(MINIMAL).with_seed(9)
    assert cfg.seed == cfg.a2c.seed == 9


def test_every_method_validates():
    for m in METHODS:
        parse_config(MINIMAL.replace("method = roler", f"method = {m}"))


def test_field_names_cover_sections():
    names = field_names()
    assert {"run", "dataset", "shaping", "a2c", "eval", "ablate", "bound"} <= set(names)
    assert "k" in names["shaping"]


def test_missing_file_raises_oserror(tmp_path):
    with pytest.raises(OSError):
        load_config(tmp_path / "absent.ini")
