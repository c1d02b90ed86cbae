import pytest

from leb.deloc import ConfigurationError
from leb.deloc.cli import DEFAULTS, Config, load_config, parse_override
from leb.deloc.ensembles import Field, Kind


@pytest.fixture
def ini(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(
        "[run]\nn = 32\nseed = 7\n\n"
        "[ensembles]\nkind = rademacher\nfield = complex-split\n\n"
        "[experiments]\nn_list = 16, 32\n",
        "utf-8",
    )
    return path


def test_defaults():
    expected = {
        section: {k: list(v) if isinstance(v, tuple) else v for k, v in keys.items()}
        for section, keys in DEFAULTS.items()
    }

    assert load_config().to_dict() == expected


def test_file_values_are_typed(ini):
    config = load_config(ini)

    assert config.get("run", "n") == 32
    assert config.get("run", "seed") == 7
    assert config.get("run", "trials") == DEFAULTS["run"]["trials"]
    assert config.get("experiments", "n_list") == [16, 32]
    assert config.dist().kind is Kind.RADEMACHER
    assert config.dist().field is Field.COMPLEX_SPLIT


def test_overrides_win(ini):
    config = load_config(ini, ["run.n=64", "test_projection.z_imag=0.5"])

    assert config.get("run", "n") == 64
    assert config.z() == 0.5j


@pytest.mark.parametrize("text", ["run.n", "n=3", "run.size=3", "network.n=3"])
def test_bad_overrides(text):
    with pytest.raises(ConfigurationError):
        parse_override(text)


def test_unknown_key_in_file(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[run]\nsize = 3\n", "utf-8")

    with pytest.raises(ConfigurationError, match="run.size"):
        load_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.ini")


@pytest.mark.parametrize("override", ["run.n=many", "run.t=fast", "experiments.n_list=a,b"])
def test_uncoercible_values(override):
    with pytest.raises(ConfigurationError):
        load_config(overrides=[override])


def test_invalid_distribution():
    config = load_config(overrides=["ensembles.variance=0.5"])

    with pytest.raises(ConfigurationError):
        config.dist()


def test_snapshot_round_trip(ini):
    config = load_config(ini, ["run.l=4"])

    assert Config(config.to_dict()) == config
    assert config.get("run", "l") == "4"
