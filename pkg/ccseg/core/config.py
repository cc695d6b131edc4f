"""
Configuration for the ccseg toolkit.
Handles process-wide defaults and the resolved configuration of one CLI run.
"""

from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Type

from pydantic import Field
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

from ccseg.core.errors import ConfigurationError


class Settings(BaseSettings):
    """Process-wide defaults, overridable from the environment or a .env file."""

    # Application
    app_name: str = "ccseg"
    version: str = "1.0.0"
    log_level: str = "INFO"

    # Paths
    output_dir: Path = Path("runs")

    # Reproducibility
    default_seed: int = 0

    # Evaluation constants
    tau: float = 13.0
    percentile: float = 0.05

    # Inference and benchmark constants
    display_confidence: float = 0.3
    repetitions: int = 10
    warmup: int = 2

    model_config = SettingsConfigDict(
        env_prefix="CCSEG_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


# Global settings instance
settings = Settings()


Subcommand = Literal["synth", "infer", "eval", "rank", "bench", "gradcheck", "selftest"]


class RunConfig(BaseSettings):
    """Resolved configuration of a single CLI invocation."""

    subcommand: Subcommand
    seed: int = Field(default_factory=lambda: settings.default_seed)
    output_dir: Path = Field(default_factory=lambda: settings.output_dir)
    verbosity: str = Field(default_factory=lambda: settings.log_level)

    # synth
    stage: Literal["train", "1", "2", "3"] = "train"
    count: int = Field(16, ge=0)
    image_size: int = Field(256, ge=32)
    sequence: bool = False

    # Inputs
    input: Optional[Path] = None
    gt: Optional[Path] = None
    pred: Optional[Path] = None
    manifest: Optional[Path] = None
    frame_scores: List[str] = []
    aggregates: Optional[Path] = None
    name: str = "algorithm"

    # infer / bench
    variant: Literal["none", "backbone", "fpn", "both"] = "backbone"
    confidence: float = Field(default_factory=lambda: settings.display_confidence, ge=0.0, le=1.0)
    weights: Optional[Path] = None

    # eval / rank
    tau: float = Field(default_factory=lambda: settings.tau, ge=0.0)
    percentile: float = Field(default_factory=lambda: settings.percentile, ge=0.0, le=1.0)
    report_format: Literal["csv", "json", "boxplot-data"] = "csv"

    # bench
    repetitions: int = Field(default_factory=lambda: settings.repetitions, ge=1)
    warmup: int = Field(default_factory=lambda: settings.warmup, ge=0)
    frames: int = Field(64, ge=1)
    parallel: bool = False
    workers: int = Field(4, ge=1)
    compare: bool = False

    # gradcheck / selftest
    seeds: int = Field(10, ge=1)

    model_config = SettingsConfigDict(env_prefix="CCSEG_", extra="forbid")

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        # Flags beat the environment, which beats the config file.
        sources = [init_settings, env_settings]
        if settings_cls.model_config.get("toml_file"):
            sources.append(TomlConfigSettingsSource(settings_cls))
        return tuple(sources)

    def echo(self) -> Dict[str, Any]:
        """JSON-ready view of the resolved configuration."""
        return self.model_dump(mode="json")


def load_run_config(config_file: Optional[Path] = None, **flags: Any) -> RunConfig:
    """
    Build the resolved configuration for one run.

    Args:
        config_file: Optional TOML document of key/value overrides
        **flags: Command-line values; None means "not given"

    Returns:
        RunConfig with flags > environment > file > defaults
    """
    given = {key: value for key, value in flags.items() if value is not None}

    if config_file is None:
        return RunConfig(**given)

    config_file = Path(config_file)
    if not config_file.is_file():
        raise ConfigurationError(f"Config file not found: {config_file}")

    file_backed = type(
        "FileBackedRunConfig",
        (RunConfig,),
        {"model_config": SettingsConfigDict(toml_file=config_file)},
    )
    return file_backed(**given)
