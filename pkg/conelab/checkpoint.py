"""Model checkpoints and memory-bank dumps as versioned JSON documents.

Each tensor is stored as ``{"name", "shape", "values"}`` with row-major
values. Floats are written with their shortest round-trip representation,
so a save/load cycle is exact and re-saving gives identical bytes.
"""

import json
import logging
import re
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from .memory_bank import MemoryBank
from .network import DenseLayer, ModelParams

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "CONE-CKPT"
BANK_MAGIC = "CONE-BANK"
FORMAT_VERSION = 1

_LAYER_NAME = re.compile(r"^(backbone|projection)\.(\d+)\.(weight|bias)$")


class CheckpointFormatError(ValueError):
    """Raised for unreadable files, wrong magic strings or unsupported versions."""


class IncompatibleArtifactsError(ValueError):
    """Raised when a checkpoint and a bank dump cannot be used together."""


class TensorRecord(BaseModel):
    name: str
    shape: List[int]
    values: List[float]

    @classmethod
    def from_array(cls, name: str, arr: np.ndarray) -> "TensorRecord":
        return cls(name=name, shape=list(arr.shape), values=[float(v) for v in arr.reshape(-1)])

    def to_array(self) -> np.ndarray:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.size != int(np.prod(self.shape)):
            raise CheckpointFormatError(f"tensor '{self.name}' has {arr.size} values for shape {self.shape}")
        return arr.reshape(self.shape)


class CheckpointFile(BaseModel):
    magic: str = CHECKPOINT_MAGIC
    version: int = FORMAT_VERSION
    activation: str
    classifier_on_projection: bool
    metadata: Dict[str, Any] = Field(default_factory=dict)
    tensors: List[TensorRecord]


class BankFile(BaseModel):
    magic: str = BANK_MAGIC
    version: int = FORMAT_VERSION
    capacity: int
    feature_dim: int
    num_classes: int
    features: TensorRecord
    dists: TensorRecord
    labels: List[int]


def _write_json(payload: BaseModel, path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(payload.model_dump(mode="python"), sort_keys=True, separators=(",", ":"))
    Path(path).write_text(text + "\n", encoding="utf-8")


def _read_json(path: str, model: type, magic: str):
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable ({exc})") from exc
    if not isinstance(raw, dict) or raw.get("magic") != magic:
        raise CheckpointFormatError(f"{path}: expected magic '{magic}'")
    if raw.get("version") != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {raw.get('version')}")
    try:
        return model.model_validate(raw)
    except ValidationError as exc:
        raise CheckpointFormatError(f"{path}: {exc.error_count()} invalid fields") from exc


def save_checkpoint(params: ModelParams, path: str, metadata: Optional[Dict[str, Any]] = None) -> None:
    payload = CheckpointFile(
        activation=params.activation,
        classifier_on_projection=params.classifier_on_projection,
        metadata=metadata or {},
        tensors=[TensorRecord.from_array(name, arr) for name, arr in params.named_tensors()],
    )
    _write_json(payload, path)
    logger.debug(f"checkpoint written to {path}")


def load_checkpoint(path: str) -> ModelParams:
    payload: CheckpointFile = _read_json(path, CheckpointFile, CHECKPOINT_MAGIC)
    layers: Dict[str, Dict[int, Dict[str, np.ndarray]]] = {"backbone": {}, "projection": {}}
    classifier = None
    for record in payload.tensors:
        if record.name == "classifier":
            classifier = record.to_array()
            continue
        match = _LAYER_NAME.match(record.name)
        if not match:
            raise CheckpointFormatError(f"{path}: unknown tensor '{record.name}'")
        group, index, kind = match.group(1), int(match.group(2)), match.group(3)
        layers[group].setdefault(index, {})[kind] = record.to_array()

    def build(group: str) -> List[DenseLayer]:
        entries = layers[group]
        if sorted(entries) != list(range(len(entries))):
            raise CheckpointFormatError(f"{path}: {group} layers are not numbered 0..n-1")
        try:
            return [DenseLayer(weight=entries[i]["weight"], bias=entries[i]["bias"]) for i in range(len(entries))]
        except KeyError as exc:
            raise CheckpointFormatError(f"{path}: {group} layer is missing its {exc.args[0]}") from None

    if classifier is None:
        raise CheckpointFormatError(f"{path}: missing classifier tensor")
    backbone, projection = build("backbone"), build("projection")
    if not backbone or len(projection) != 2:
        raise CheckpointFormatError(f"{path}: expected backbone layers and two projection layers")
    return ModelParams(
        backbone=backbone,
        projection=projection,
        classifier=classifier,
        activation=payload.activation,
        classifier_on_projection=payload.classifier_on_projection,
    )


def read_checkpoint_metadata(path: str) -> Dict[str, Any]:
    return _read_json(path, CheckpointFile, CHECKPOINT_MAGIC).metadata


def save_bank(bank: MemoryBank, path: str) -> None:
    snap = bank.snapshot()
    payload = BankFile(
        capacity=bank.capacity,
        feature_dim=bank.feature_dim,
        num_classes=bank.num_classes,
        features=TensorRecord.from_array("features", snap.features),
        dists=TensorRecord.from_array("dists", snap.dists),
        labels=[int(v) for v in snap.labels],
    )
    _write_json(payload, path)
    logger.debug(f"bank dump ({snap.count} entries) written to {path}")


def load_bank(path: str) -> MemoryBank:
    payload: BankFile = _read_json(path, BankFile, BANK_MAGIC)
    count = len(payload.labels)
    features = payload.features.to_array().reshape(count, payload.feature_dim)
    dists = payload.dists.to_array().reshape(count, payload.num_classes)
    bank = MemoryBank(payload.capacity, payload.feature_dim, payload.num_classes)
    if count:
        bank.push_arrays(features, dists, np.asarray(payload.labels, dtype=np.int64))
    return bank


def check_compatible(params: ModelParams, bank: MemoryBank) -> None:
    """Bank features must live in the projection space and cover the same classes."""
    if bank.feature_dim != params.proj_dim:
        raise IncompatibleArtifactsError(
            f"bank stores {bank.feature_dim}-dim features but the model projects to {params.proj_dim}"
        )
    if bank.num_classes != params.num_classes:
        raise IncompatibleArtifactsError(
            f"bank stores {bank.num_classes}-class distributions but the model has {params.num_classes} classes"
        )
