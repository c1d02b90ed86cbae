import configparser
import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple, Union

from leb.deloc import ConfigurationError, Validation
from leb.deloc.ensembles import DistributionSpec

__all__ = [
    "Config",
    "DEFAULTS",
    "load_config",
    "parse_override",
]

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "run": {
        "n": 64,
        "trials": 100,
        "seed": 0,
        "threads": 1,
        "l": "auto",
        "t": 2.0,
        "s": 0,
    },
    "ensembles": {
        "kind": "gaussian",
        "field": "real",
        "variance": 1.0,
        "alpha": 2.0,
    },
    "spectral_window": {
        "c_window": 0.125,
    },
    "test_projection": {
        "z_real": 0.0,
        "z_imag": 0.0,
    },
    "distances": {
        "k": 0,
        "k0": 0,
        "k1": 0,
        "shift": "identity",
        "ratio": 0.97,
        "max_violation_rate": 0.01,
    },
    "sv_probes": {
        "probe": "smallest_sv",
        "max_violation_rate": 0.01,
    },
    "experiments": {
        "n_list": (),
        "w": 1.0,
        "net_samples": 8,
        "rounds": 8,
        "iterations": 200,
        "starts": 16,
        "max_witness_rate": 0.05,
    },
}


def _check_key(section: str, key: str) -> None:
    if section not in DEFAULTS:
        raise ConfigurationError(f"unknown config section: [{section}]")
    if key not in DEFAULTS[section]:
        raise ConfigurationError(f"unknown config key: {section}.{key}")


def _coerce(section: str, key: str, raw: Any) -> Any:
    default = DEFAULTS[section][key]
    if not isinstance(raw, str):
        return list(raw) if isinstance(default, tuple) else raw
    try:
        if isinstance(default, bool):
            return configparser.ConfigParser.BOOLEAN_STATES[raw.strip().lower()]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return [int(item) for item in raw.split(",") if item.strip()]
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(f"invalid value for {section}.{key}: {raw!r}") from exc
    return raw.strip()


def parse_override(text: str) -> Tuple[str, str, str]:
    """Splits `section.key=value` and rejects unknown keys."""
    target, sep, value = text.partition("=")
    section, dot, key = target.strip().partition(".")
    if not sep or not dot:
        raise ConfigurationError(f"overrides take the form section.key=value, got {text!r}")
    _check_key(section, key)
    return section, key, value


@dataclass(frozen=True)
class Config(Validation):
    """A complete, typed configuration: every section and key of DEFAULTS with a value.

    The snapshot returned by `to_dict` is JSON serializable and loads back into an equal Config.

    """

    values: Mapping[str, Mapping[str, Any]]

    def validate_values(self, value: Mapping[str, Mapping[str, Any]], **_) -> Dict:
        merged = copy.deepcopy(DEFAULTS)
        for section, entries in value.items():
            for key, raw in entries.items():
                _check_key(section, key)
                merged[section][key] = _coerce(section, key, raw)
        for section, entries in merged.items():
            for key, default in entries.items():
                if isinstance(default, tuple):
                    entries[key] = list(entries[key])
        return merged

    def __getitem__(self, section: str) -> Mapping[str, Any]:
        return self.values[section]

    def get(self, section: str, key: str) -> Any:
        return self.values[section][key]

    def dist(self) -> DistributionSpec:
        try:
            return DistributionSpec.from_dict(self.values["ensembles"])
        except ValueError as exc:
            raise ConfigurationError(f"invalid [ensembles] section: {exc}") from exc

    def z(self) -> complex:
        return complex(self.get("test_projection", "z_real"), self.get("test_projection", "z_imag"))

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return copy.deepcopy(dict(self.values))


def load_config(
    path: Optional[Union[str, Path]] = None, overrides: Iterable[str] = ()
) -> Config:
    """Reads an INI file and applies `section.key=value` overrides on top of DEFAULTS.

    Unknown sections or keys, in the file or in the overrides, raise ConfigurationError.

    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # type: ignore
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigurationError(f"cannot parse {path}: {exc}") from exc

    values: Dict[str, Dict[str, Any]] = {
        section: dict(parser.items(section)) for section in parser.sections()
    }
    for text in overrides:
        section, key, value = parse_override(text)
        values.setdefault(section, {})[key] = value
    return Config(values)
