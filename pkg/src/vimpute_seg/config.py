"""Run configuration: flat key-value text with dotted keys.

A config file holds `key = value` lines (`#` comments and blank lines
ignored). Every key has a default, unknown keys are rejected, and parse
errors name the offending key. The fully-resolved mapping can be written
back out verbatim, which is how runs freeze their configuration.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .augment import AugmentConfig, StraussParams
from .model import ModelConfig
from .postprocess import PostprocessConfig
from .preprocess import PreprocessConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def _pbool(v: str) -> bool:
    if v.lower() in ("true", "1", "yes"):
        return True
    if v.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _pints(v: str) -> tuple[int, ...]:
    return tuple(int(part) for part in v.split(","))


def _pint_or_auto(v: str):
    return None if v.lower() == "auto" else int(v)


# key -> (parser, default as written in a config file)
SCHEMA: dict[str, tuple] = {
    "run_name": (str, "run"),
    "data_root": (str, ""),
    "seed": (int, "0"),
    "preprocess.height": (int, "640"),
    "preprocess.width": (int, "512"),
    "preprocess.equalize": (_pbool, "true"),
    "preprocess.bins": (int, "256"),
    "augment.p_aug": (float, "0.9"),
    "augment.enable_standard": (_pbool, "true"),
    "augment.enable_block": (_pbool, "false"),
    "augment.enable_diffuse": (_pbool, "false"),
    "augment.rotation_max_deg": (float, "10.0"),
    "augment.disk_radius_min": (float, "20.0"),
    "augment.disk_radius_max": (float, "80.0"),
    "augment.gaussian_sigma": (float, "16.0"),
    "augment.saturation_level": (float, "0.95"),
    "augment.strauss_beta": (float, "1.8310546875e-05"),
    "augment.strauss_gamma": (float, "0.5"),
    "augment.strauss_radius": (float, "100.0"),
    "augment.strauss_steps": (int, "2000"),
    "model.variant": (str, "proposed"),
    "model.base_features": (_pint_or_auto, "auto"),
    "model.kernel_size": (int, "3"),
    "model.n_resolutions": (int, "4"),
    "model.down_factors": (_pints, "4,4,2,2"),
    "model.latent_dim": (int, "8"),
    "model.n_1d_conv_layers": (int, "4"),
    "train.batch_size": (int, "12"),
    "train.learning_rate": (float, "1e-4"),
    "train.max_epochs": (int, "200"),
    "train.patience": (int, "20"),
    "post.threshold": (float, "0.5"),
    "post.min_area_frac": (float, "0.015625"),
    "post.closing_radius": (int, "10"),
    "post.connectivity": (int, "4"),
}

_SAFE_NAME = re.compile(r"^[A-Za-z0-9._-]+$")


def parse_config_text(text: str) -> dict[str, str]:
    """Parse `key = value` lines into a raw string mapping."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key '{key}'")
        raw[key] = value
    return raw


def apply_overrides(raw: dict[str, str], overrides) -> dict[str, str]:
    out = dict(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key '{key}'")
        out[key] = value
    return out


def resolve(raw: dict[str, str]) -> dict[str, str]:
    """Fill in defaults for unspecified keys, keeping raw string values."""
    full = {k: default for k, (_, default) in SCHEMA.items()}
    full.update(raw)
    return full


def _typed(flat: dict[str, str], key: str):
    parser, _ = SCHEMA[key]
    try:
        return parser(flat[key])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"config key '{key}': {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    flat: dict

    def __post_init__(self):
        name = self.run_name
        if not name or not _SAFE_NAME.match(name):
            raise ConfigError(f"config key 'run_name': {name!r} is not filesystem-safe")
        # construct every sub-config once so invalid values fail fast,
        # with the offending key attached
        for section in ("preprocess", "augment", "model", "train", "post"):
            getattr(self, section)()

    @property
    def run_name(self) -> str:
        return self.flat["run_name"]

    @property
    def data_root(self) -> str:
        return self.flat["data_root"]

    @property
    def seed(self) -> int:
        return _typed(self.flat, "seed")

    def preprocess(self) -> PreprocessConfig:
        try:
            return PreprocessConfig(
                target_height=_typed(self.flat, "preprocess.height"),
                target_width=_typed(self.flat, "preprocess.width"),
                equalize=_typed(self.flat, "preprocess.equalize"),
                n_bins=_typed(self.flat, "preprocess.bins"),
            )
        except ValueError as exc:
            raise ConfigError(f"config section 'preprocess': {exc}") from exc

    def augment(self) -> AugmentConfig:
        try:
            return AugmentConfig(
                p_aug=_typed(self.flat, "augment.p_aug"),
                enable_standard=_typed(self.flat, "augment.enable_standard"),
                enable_block=_typed(self.flat, "augment.enable_block"),
                enable_diffuse=_typed(self.flat, "augment.enable_diffuse"),
                rotation_max_deg=_typed(self.flat, "augment.rotation_max_deg"),
                strauss=StraussParams(
                    beta=_typed(self.flat, "augment.strauss_beta"),
                    gamma=_typed(self.flat, "augment.strauss_gamma"),
                    interaction_radius_px=_typed(self.flat, "augment.strauss_radius"),
                    mcmc_steps=_typed(self.flat, "augment.strauss_steps"),
                ),
                disk_radius_range=(
                    _typed(self.flat, "augment.disk_radius_min"),
                    _typed(self.flat, "augment.disk_radius_max"),
                ),
                gaussian_sigma_px=_typed(self.flat, "augment.gaussian_sigma"),
                saturation_level=_typed(self.flat, "augment.saturation_level"),
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"config section 'augment': {exc}") from exc

    def model(self, variant: str | None = None) -> ModelConfig:
        try:
            return ModelConfig(
                variant=variant or self.flat["model.variant"],
                base_features=_typed(self.flat, "model.base_features"),
                kernel_size=_typed(self.flat, "model.kernel_size"),
                n_resolutions=_typed(self.flat, "model.n_resolutions"),
                down_factors=_typed(self.flat, "model.down_factors"),
                latent_dim=_typed(self.flat, "model.latent_dim"),
                n_1d_conv_layers=_typed(self.flat, "model.n_1d_conv_layers"),
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"config section 'model': {exc}") from exc

    def train(self, checkpoint_dir=None, seed: int | None = None) -> TrainConfig:
        try:
            return TrainConfig(
                batch_size=_typed(self.flat, "train.batch_size"),
                learning_rate=_typed(self.flat, "train.learning_rate"),
                max_epochs=_typed(self.flat, "train.max_epochs"),
                patience=_typed(self.flat, "train.patience"),
                seed=self.seed if seed is None else seed,
                checkpoint_dir=str(checkpoint_dir) if checkpoint_dir else None,
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"config section 'train': {exc}") from exc

    def post(self) -> PostprocessConfig:
        try:
            return PostprocessConfig(
                threshold=_typed(self.flat, "post.threshold"),
                min_area_frac=_typed(self.flat, "post.min_area_frac"),
                closing_radius=_typed(self.flat, "post.closing_radius"),
                connectivity=_typed(self.flat, "post.connectivity"),
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"config section 'post': {exc}") from exc


def load_run_config(path=None, overrides=None) -> RunConfig:
    raw = parse_config_text(Path(path).read_text()) if path else {}
    return RunConfig(resolve(apply_overrides(raw, overrides)))


def config_text(cfg: RunConfig) -> str:
    lines = [f"{k} = {cfg.flat[k]}" for k in SCHEMA]
    return "\n".join(lines) + "\n"


def freeze(cfg: RunConfig, out_dir) -> Path:
    """Write the fully-resolved config next to a run's outputs."""
    path = Path(out_dir) / "config.resolved.cfg"
    path.write_text(config_text(cfg))
    return path
