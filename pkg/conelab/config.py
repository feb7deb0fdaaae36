"""Application configuration settings."""

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Process settings loaded from CONE_* environment variables."""

    # Logging
    LOG: str = "info"  # debug | info | warning

    # Paths
    OUTPUT_DIR: str = "./runs"
    DUMP_DIR: str = "./runs/dumps"
    REPORT_TEMPLATE_DIR: str = str(Path(__file__).parent / "templates")

    # Gradient verification
    GRADCHECK_STEP: float = 1e-6
    GRADCHECK_INSTANCES: int = 100

    class Config:
        env_prefix = "CONE_"
        env_file = ".env"
        env_file_encoding = "utf-8"


settings = Settings()


class ConfigError(ValueError):
    """Raised when a run configuration cannot be loaded or validated."""


SEED_PURPOSES = ("data", "split", "init", "shuffle", "augment", "gradcheck")


def derive_seed(seed: int, purpose: str) -> int:
    """Derive a stable 63-bit sub-seed for one purpose from the run seed."""
    digest = hashlib.sha256(f"{seed}:{purpose}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


class TrainConfig(BaseModel):
    """All hyperparameters of a training run.

    Field names are the JSON keys of the config file and of ``--set``
    overrides. Loss weights and temperatures default to the full-scale
    values; schedule lengths are scaled down to desk size.
    """

    model_config = ConfigDict(extra="forbid")

    # Loss weights and temperatures
    lambda_sup: float = Field(0.7, ge=0.0)
    lambda_dc: float = Field(0.4, ge=0.0)
    tau_sup: float = Field(0.1, gt=0.0)
    tau_dc: float = Field(0.07, gt=0.0)

    # Memory bank
    bank_capacity: int = Field(4096, gt=0)
    top_n: int = Field(32, gt=0)

    # Optimization
    batch_size: int = Field(64, gt=0)
    epochs: int = Field(30, ge=0)
    warmup_epochs: int = Field(3, ge=0)
    base_lr: float = Field(0.4, gt=0.0)
    weight_decay: float = Field(1e-4, ge=0.0)
    sgd_momentum: float = Field(0.9, ge=0.0, lt=1.0)
    ema_base_momentum: float = Field(0.996, ge=0.0, le=1.0)
    seed: int = Field(0, ge=0)

    # Ablation flags
    use_ce: bool = True
    use_sup_in: bool = True
    use_sup_out: bool = False
    use_dc: bool = True
    classifier_on_projection: bool = False
    contrastive_view: bool = False
    track_margins: bool = False

    # Model shape
    hidden_dims: List[int] = Field(default_factory=lambda: [64, 32])
    proj_dims: List[int] = Field(default_factory=lambda: [32, 16])
    activation: Literal["relu", "identity"] = "relu"

    # Data
    data_path: Optional[str] = None
    data_classes: int = Field(4, gt=0)
    data_modes: int = Field(2, gt=0)
    data_dim: int = Field(2, gt=0)
    data_n_per_mode: int = Field(250, gt=0)
    data_separation: float = Field(1.0, gt=0.0)
    data_std: float = Field(0.1, ge=0.0)
    test_fraction: float = Field(0.2, gt=0.0, lt=1.0)
    augment_std: float = Field(0.0, ge=0.0)

    @model_validator(mode="after")
    def _check_combination(self) -> "TrainConfig":
        if not (self.use_ce or self.use_sup_in or self.use_sup_out or self.use_dc):
            raise ValueError("at least one of use_ce, use_sup_in, use_sup_out, use_dc must be enabled")
        if self.use_sup_in and self.use_sup_out:
            raise ValueError("use_sup_in and use_sup_out are mutually exclusive")
        if not self.hidden_dims or any(d <= 0 for d in self.hidden_dims):
            raise ValueError("hidden_dims must be a non-empty list of positive integers")
        if len(self.proj_dims) != 2 or any(d <= 0 for d in self.proj_dims):
            raise ValueError("proj_dims must list exactly two positive integers (hidden, output)")
        return self

    @classmethod
    def imagenet_scale(cls, **overrides: Any) -> "TrainConfig":
        """Large-bank preset: 65536 stored features, Top-512, 5 of 100 epochs warmup."""
        values: Dict[str, Any] = {
            "bank_capacity": 65536,
            "top_n": 512,
            "epochs": 100,
            "warmup_epochs": 5,
            "batch_size": 1024,
            "base_lr": 0.1,
        }
        values.update(overrides)
        return cls(**values)

    def with_updates(self, **updates: Any) -> "TrainConfig":
        """Validated copy with some fields replaced."""
        values = self.model_dump()
        values.update(updates)
        try:
            return TrainConfig.model_validate(values)
        except ValidationError as exc:
            raise ConfigError(_format_validation_error(exc)) from exc

    def canonical_json(self) -> str:
        """Sorted-key JSON with every default materialized."""
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def sub_seeds(self) -> Dict[str, int]:
        return {purpose: derive_seed(self.seed, purpose) for purpose in SEED_PURPOSES}


def _format_validation_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        field = ".".join(str(loc) for loc in err["loc"]) or "config"
        parts.append(f"{field}: {err['msg']}")
    return "; ".join(parts)


def parse_override(item: str) -> tuple:
    """Split ``KEY=VALUE``; VALUE is read as JSON, else kept as a string."""
    if "=" not in item:
        raise ConfigError(f"override '{item}' must have the form KEY=VALUE")
    key, raw = item.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def load_train_config(
    path: Optional[str] = None,
    overrides: Sequence[str] = (),
    seed: Optional[int] = None,
    base: Optional[Dict[str, Any]] = None,
) -> TrainConfig:
    """Load a JSON config file, apply ``--set`` overrides and validate.

    ``base`` supplies starting values (e.g. a run manifest's config) when no
    file is given.
    """
    data: Dict[str, Any] = dict(base or {})
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top-level JSON value must be an object")

    for item in overrides:
        key, value = parse_override(item)
        if key not in TrainConfig.model_fields:
            raise ConfigError(f"unknown config key '{key}'")
        data[key] = value

    if seed is not None:
        data["seed"] = seed

    try:
        return TrainConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_validation_error(exc)) from exc
