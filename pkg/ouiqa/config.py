# coding: utf-8
"""Configuration of the command line tools.

A configuration file is YAML with one mapping per section::

    data:
      crop_size: 64
      variants: 5
    loss:
      lambda_align: 0.3

It is validated against the ``Config`` definition of ``ouiqa.schema.yaml``
(unknown sections or keys are rejected) and merged over :data:`DEFAULTS`;
command line flags are merged last. Every default carries its provenance:
``published`` if it is the value of the published training recipe, or
``desk`` if it was chosen for desk-scale runs, in which case the published
value, when there is one, is kept alongside.
"""

from typing import Any, Dict, List, Mapping, NamedTuple, Optional
import os

from jsonschema import ValidationError  # type: ignore

from .model import remove_namedtuple_defaultdoc
from .util import parse_seed, read_yaml, validate_against
from .dataset import DatasetSettings
from .losses import LossSettings
from .scorer import OptimizerSettings

CONFIG_ENV = "OUIQA_CONFIG"


class ConfigError(ValueError):
    """The configuration is malformed"""


@remove_namedtuple_defaultdoc
class Default(NamedTuple):
    """Default value of a setting and where it comes from."""

    value: Any
    """Any: the default value."""
    provenance: str
    """str: ``"published"`` or ``"desk"``."""
    published: Any = None
    """Any: published value, for desk defaults which depart from it."""


DEFAULTS: Dict[str, Dict[str, Default]] = {
    "data": {
        "crop_size": Default(64, "desk", 384),
        "grid_rows": Default(8, "desk"),
        "grid_cols": Default(8, "desk"),
        "variants": Default(5, "published"),
        "master_seed": Default(0, "desk"),
        "vocab_seed": Default(0, "desk"),
        "jobs": Default(1, "desk"),
    },
    "degradation": {
        "max_steps": Default(7, "published"),
        "sigma_off": Default(0.3, "published"),
        "registry": Default(None, "desk"),
    },
    "model": {
        "preset": Default("small", "desk"),
        "hidden": Default(None, "desk"),
        "embed": Default(None, "desk", 1024),
        "text_width": Default(64, "desk", 512),
        "seed": Default(0, "desk"),
    },
    "loss": {
        "lambda_rank": Default(1.0, "desk"),
        "lambda_mreg": Default(1.0, "desk"),
        "lambda_align": Default(0.3, "desk"),
        "lambda_emb": Default(0.5, "desk"),
        "lambda_cov": Default(0.01, "desk"),
        "t_d": Default(0.1, "desk"),
        "t_q": Default(0.05, "desk"),
        "combo_cap": Default(512, "desk"),
        "ranking": Default("pair-of-pairs", "published"),
        "margin": Default(0.1, "desk"),
        "align": Default(True, "published"),
        "embdist": Default(True, "published"),
    },
    "optim": {
        "lr0": Default(5e-3, "desk", 3e-6),
        "lr_min": Default(1e-4, "desk", 8e-7),
        "total_steps": Default(None, "desk", 7000),
        "weight_decay": Default(1e-5, "published"),
        "beta1": Default(0.9, "desk"),
        "beta2": Default(0.999, "desk"),
        "eps": Default(1e-8, "desk"),
    },
    "train": {
        "epochs": Default(3, "published"),
        "batch_size": Default(8, "desk"),
    },
    "eval": {
        "bins": Default(50, "desk"),
        "resize_short": Default(None, "desk", 768),
        "min_srocc": Default(None, "desk"),
        "min_plcc": Default(None, "desk"),
        "max_overlap": Default(None, "desk"),
        "epsilon": Default(1e-4, "desk"),
        "tolerance": Default(1e-4, "desk"),
    },
    "paths": {
        "manifest": Default(None, "desk"),
        "checkpoint": Default(None, "desk"),
        "log": Default(None, "desk"),
        "prompt_embeddings": Default(None, "desk"),
    },
}
"""Default of every setting, by section and key. ``total_steps: null``
means ``epochs * batches per epoch``."""


class Config:
    """Merged configuration, with the origin of each value (``default``,
    the name of the configuration file, or ``flag``)."""

    def __init__(
        self, values: Dict[str, Dict[str, Any]], origins: Dict[str, Dict[str, str]]
    ) -> None:
        self.values = values
        self.origins = origins

    def __getitem__(self, section: str) -> Dict[str, Any]:
        return self.values[section]

    def get(self, dotted: str) -> Any:
        """Value of a ``"section.key"`` setting."""
        section, key = _split(dotted)
        return self.values[section][key]

    def as_dict(self) -> Dict[str, Dict[str, Any]]:
        """Plain nested dictionary of the values."""
        return {section: dict(values) for section, values in self.values.items()}

    def __repr__(self):
        return "<Config {}>".format(self.as_dict())


def _split(dotted: str):
    section, _, key = dotted.partition(".")
    if section not in DEFAULTS or key not in DEFAULTS[section]:
        raise ConfigError("Unknown setting {!r}".format(dotted))
    return section, key


def _validate(data: Any, origin: str) -> None:
    try:
        validate_against(data, "Config")
    except ValidationError as excep:
        where = "/".join(str(part) for part in excep.absolute_path) or "top level"
        raise ConfigError("{}: {} (at {})".format(origin, excep.message, where)) from excep


def load_config(
    path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None
) -> Config:
    """Builds the configuration.

    Args:
        path: YAML configuration file. If None, the file named by the
            ``OUIQA_CONFIG`` environment variable, if any, is used.
        overrides: ``{"section.key": value}`` taken from command line
            flags; None values are ignored.

    Raises:
        ConfigError: if the file or the overrides do not validate.
    """
    values = {
        section: {key: item.value for key, item in items.items()}
        for section, items in DEFAULTS.items()
    }
    origins = {section: {key: "default" for key in items} for section, items in DEFAULTS.items()}

    path = path or os.environ.get(CONFIG_ENV) or None
    if path is not None:
        try:
            data = read_yaml(path)
        except (OSError, ValueError) as excep:
            raise ConfigError("Cannot read configuration {}: {}".format(path, excep)) from excep
        data = data or {}
        _validate(data, path)
        for section, items in data.items():
            for key, value in (items or {}).items():
                values[section][key] = value
                origins[section][key] = path

    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, key = _split(dotted)
        values[section][key] = value
        origins[section][key] = "flag"
    _validate(values, "command line flags" if overrides else "defaults")
    return Config(values, origins)


def _show(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def config_lines(config: Config) -> List[str]:
    """One line per setting: value, provenance of the default and, when the
    value does not come from the defaults, its origin."""
    lines = []
    for section, items in DEFAULTS.items():
        for key, default in items.items():
            value = _show(config[section][key])
            line = "{}.{} = {}  [{}".format(section, key, value, default.provenance)
            if default.published is not None:
                line += ", published: {}".format(_show(default.published))
            line += "]"
            origin = config.origins[section][key]
            if origin != "default":
                line += "  (from {})".format(origin)
            lines.append(line)
    return lines


###############################################################################
# Settings of the other modules
###############################################################################
def dataset_settings(config: Config) -> DatasetSettings:
    """Settings of :func:`ouiqa.dataset.build_manifest`."""
    data, degradation = config["data"], config["degradation"]
    return DatasetSettings(
        crop_size=data["crop_size"],
        grid_rows=data["grid_rows"],
        grid_cols=data["grid_cols"],
        variants=data["variants"],
        max_steps=degradation["max_steps"],
        sigma_off=float(degradation["sigma_off"]),
        master_seed=parse_seed(data["master_seed"]),
        text_width=config["model"]["text_width"],
        vocab_seed=parse_seed(data["vocab_seed"]),
        registry=degradation["registry"],
    )


def loss_settings(config: Config) -> LossSettings:
    """Settings of :func:`ouiqa.losses.total_loss`."""
    loss = config["loss"]
    return LossSettings(
        lambda_rank=float(loss["lambda_rank"]),
        lambda_mreg=float(loss["lambda_mreg"]),
        lambda_align=float(loss["lambda_align"]),
        lambda_emb=float(loss["lambda_emb"]),
        lambda_cov=float(loss["lambda_cov"]),
        t_d=float(loss["t_d"]),
        t_q=float(loss["t_q"]),
        combo_cap=loss["combo_cap"],
        ranking=loss["ranking"],
        margin=float(loss["margin"]),
        align=bool(loss["align"]),
        embdist=bool(loss["embdist"]),
    )


def optimizer_settings(config: Config, steps_per_epoch: int = 1) -> OptimizerSettings:
    """Settings of the optimizer; a null ``total_steps`` spans the whole
    training run."""
    optim = config["optim"]
    total_steps = optim["total_steps"] or config["train"]["epochs"] * max(1, steps_per_epoch)
    return OptimizerSettings(
        lr0=float(optim["lr0"]),
        lr_min=float(optim["lr_min"]),
        total_steps=int(total_steps),
        weight_decay=float(optim["weight_decay"]),
        beta1=float(optim["beta1"]),
        beta2=float(optim["beta2"]),
        eps=float(optim["eps"]),
    )


__all__ = [
    "CONFIG_ENV",
    "DEFAULTS",
    "ConfigError",
    "Config",
    "load_config",
    "config_lines",
    "dataset_settings",
    "loss_settings",
    "optimizer_settings",
]
