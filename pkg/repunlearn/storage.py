"""
Persistence for every artifact the harness produces.

Models and transformations are versioned JSON documents validated by pydantic,
with floats in the shortest form that reads back to the same double. Datasets
and reports are CSV tables written through pandas with 17 significant digits
and LF line endings, so reruns are byte-identical.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Type, TypeVar, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from repunlearn.datasets import AccessLog, LabeledDataset
from repunlearn.encoder import FeedForwardNet
from repunlearn.errors import DatasetError, NumericsError, StorageError, UnlearningError
from repunlearn.schemas import ExperimentConfig, TrainConfig, UnlearnConfig
from repunlearn.unlearning import Transformation

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
FLOAT_FORMAT = "%.17g"
PathLike = Union[str, Path]


@dataclass(frozen=True)
class OutputLayout:
    """File locations under one output directory"""
    root: Path

    @property
    def data_dir(self) -> Path:
        return self.root / "data"

    @property
    def train_csv(self) -> Path:
        return self.data_dir / "train.csv"

    @property
    def test_csv(self) -> Path:
        return self.data_dir / "test.csv"

    def seed_dir(self, seed: int) -> Path:
        return self.root / f"seed_{seed}"

    def model_path(self, seed: int, name: str) -> Path:
        return self.seed_dir(seed) / f"{name}.json"

    def access_log_path(self, seed: int) -> Path:
        return self.seed_dir(seed) / "access_log.json"

    def collapse_path(self, seed: int) -> Path:
        return self.seed_dir(seed) / "collapse.json"

    @property
    def config_json(self) -> Path:
        return self.root / "config.json"

    @property
    def report_csv(self) -> Path:
        return self.root / "report.csv"

    @property
    def summary_csv(self) -> Path:
        return self.root / "summary.csv"

    @property
    def sweep_dir(self) -> Path:
        return self.root / "sweep"

    @property
    def bounds_csv(self) -> Path:
        return self.root / "bounds.csv"

    @property
    def figures_dir(self) -> Path:
        return self.root / "figures"


# JSON documents
def _write_text(path: PathLike, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
    except OSError as e:
        raise StorageError(f"Cannot write {path}: {e}") from e
    return path


def _read_text(path: PathLike) -> str:
    path = Path(path)
    try:
        return path.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise StorageError(f"File not found: {path}") from e
    except OSError as e:
        raise StorageError(f"Cannot read {path}: {e}") from e


def write_json(path: PathLike, document: Dict[str, Any]) -> Path:
    """Sorted keys; floats use the shortest repr that reads back to the same double"""
    return _write_text(path, json.dumps(document, sort_keys=True, indent=2, allow_nan=True) + "\n")


def read_json(path: PathLike) -> Dict[str, Any]:
    text = _read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise StorageError(f"Cannot parse {path}: {e}") from e


class ModelDocument(BaseModel):
    """Versioned on-disk form of a FeedForwardNet; weights are row-major nested lists"""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["model"] = "model"
    format_version: Literal[1] = FORMAT_VERSION
    layer_dims: List[int]
    activation: str
    weights: List[List[List[float]]]
    biases: List[List[float]]
    training_config: Optional[TrainConfig] = None
    seed: Optional[int] = None

    @classmethod
    def from_net(cls, net: FeedForwardNet, training_config: Optional[TrainConfig] = None, seed: Optional[int] = None) -> "ModelDocument":
        return cls(
            layer_dims=list(net.layer_dims),
            activation=net.activation,
            weights=[W.tolist() for W in net.weights],
            biases=[b.tolist() for b in net.biases],
            training_config=training_config,
            seed=seed,
        )

    def to_net(self) -> FeedForwardNet:
        try:
            return FeedForwardNet(
                layer_dims=list(self.layer_dims),
                weights=[np.array(W, dtype=np.float64) for W in self.weights],
                biases=[np.array(b, dtype=np.float64) for b in self.biases],
                activation=self.activation,
            )
        except (ValueError, NumericsError) as e:
            raise StorageError(f"Model document does not describe a network: {e}") from e


class TransformationDocument(BaseModel):
    """Versioned on-disk form of a Transformation"""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["transformation"] = "transformation"
    format_version: Literal[1] = FORMAT_VERSION
    dim: int
    depth: int
    activation: str
    weights: List[List[List[float]]]
    biases: List[List[float]]
    unlearn_config: Optional[UnlearnConfig] = None
    seed: Optional[int] = None

    @model_validator(mode='after')
    def validate_depth_tag(self):
        if len(self.weights) - 1 != self.depth:
            raise ValueError(f"depth tag {self.depth} does not match {len(self.weights)} layers")
        return self

    @classmethod
    def from_transformation(cls, f: Transformation, config: Optional[UnlearnConfig] = None, seed: Optional[int] = None) -> "TransformationDocument":
        if config is not None:
            config = UnlearnConfig.model_validate(config.model_dump(include=set(UnlearnConfig.model_fields)))
        return cls(
            dim=f.dim,
            depth=f.depth,
            activation=f.activation,
            weights=[W.tolist() for W in f.weights],
            biases=[b.tolist() for b in f.biases],
            unlearn_config=config,
            seed=seed,
        )

    def to_transformation(self) -> Transformation:
        try:
            return Transformation(
                dim=self.dim,
                weights=[np.array(W, dtype=np.float64) for W in self.weights],
                biases=[np.array(b, dtype=np.float64) for b in self.biases],
                activation=self.activation,
            )
        except (ValueError, IndexError, UnlearningError) as e:
            raise StorageError(f"Transformation document does not describe a map: {e}") from e


DocumentT = TypeVar("DocumentT", ModelDocument, TransformationDocument)


def write_document(path: PathLike, document: BaseModel) -> Path:
    return _write_text(path, document.model_dump_json(indent=2) + "\n")


def read_document(path: PathLike, document_type: Type[DocumentT]) -> DocumentT:
    text = _read_text(path)
    try:
        return document_type.model_validate_json(text)
    except ValidationError as e:
        raise StorageError(f"Invalid {document_type.__name__} in {path}:\n{e}") from e


def save_model(path: PathLike, net: FeedForwardNet, training_config: Optional[TrainConfig] = None, seed: Optional[int] = None) -> Path:
    return write_document(path, ModelDocument.from_net(net, training_config, seed))


def load_model(path: PathLike) -> FeedForwardNet:
    return read_document(path, ModelDocument).to_net()


def save_transformation(path: PathLike, f: Transformation, config: Optional[UnlearnConfig] = None, seed: Optional[int] = None) -> Path:
    return write_document(path, TransformationDocument.from_transformation(f, config, seed))


def load_transformation(path: PathLike) -> Transformation:
    return read_document(path, TransformationDocument).to_transformation()


def save_access_log(path: PathLike, log: AccessLog, allowed: np.ndarray) -> Path:
    rows = log.indices()
    return write_json(path, {
        "n_reads": len(log.reads),
        "rows_read": rows.tolist(),
        "rows_outside_forget_set": log.count_outside(allowed),
    })


def save_collapse(path: PathLike, alignment: np.ndarray, variability: float) -> Path:
    """Per-class head/mean cosines (null for classes absent from the data) and the variability ratio"""
    return write_json(path, {
        "prototype_alignment": [None if np.isnan(a) else float(a) for a in alignment],
        "within_class_variability": float(variability),
    })


# Configuration
def load_config(path: PathLike) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise StorageError(f"Cannot read config {path}: {e}") from e
    try:
        return ExperimentConfig.model_validate_json(text)
    except ValidationError as e:
        raise StorageError(f"Invalid config {path}:\n{e}") from e


def dump_config(config: ExperimentConfig) -> str:
    return config.model_dump_json(indent=2) + "\n"


def save_config(path: PathLike, config: ExperimentConfig) -> Path:
    return _write_text(path, dump_config(config))


# Tables
def write_table(df: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", encoding="utf-8")
    except OSError as e:
        raise StorageError(f"Cannot write {path}: {e}") from e
    return path


def read_table(path: PathLike) -> pd.DataFrame:
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError as e:
        raise StorageError(f"File not found: {path}") from e
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise StorageError(f"Cannot parse {path}: {e}") from e


def dataset_frame(dataset: LabeledDataset) -> pd.DataFrame:
    df = pd.DataFrame(dataset.features, columns=[f"f{i}" for i in range(dataset.dim)])
    df["label"] = dataset.labels
    return df


def save_dataset(path: PathLike, dataset: LabeledDataset) -> Path:
    """CSV with header f0..f{d-1},label"""
    return write_table(dataset_frame(dataset), path)


def load_dataset(path: PathLike, n_classes: Optional[int] = None) -> LabeledDataset:
    df = read_table(path)
    features = [c for c in df.columns if c != "label"]
    if "label" not in df.columns or features != [f"f{i}" for i in range(len(features))]:
        raise StorageError(f"{path}: expected header f0..f{{d-1}},label, got {list(df.columns)}")
    labels = df["label"].to_numpy(dtype=np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 1
    try:
        return LabeledDataset(df[features].to_numpy(dtype=np.float64), labels, n_classes)
    except DatasetError as e:
        raise StorageError(f"{path}: {e}") from e


# Excel export
def _sheet_name(path: Path, root: Path, used: List[str]) -> str:
    base = "_".join(path.relative_to(root).with_suffix("").parts)[-31:]
    name, i = base, 1
    while name in used:
        suffix = f"~{i}"
        name = base[:31 - len(suffix)] + suffix
        i += 1
    used.append(name)
    return name


def export_workbook(root: PathLike, output: PathLike) -> Path:
    """Every CSV under `root` as one sheet of an .xlsx workbook"""
    root, output = Path(root), Path(output)
    tables = sorted(root.rglob("*.csv"))
    if not tables:
        raise StorageError(f"No CSV tables under {root}")
    used: List[str] = []
    try:
        output.parent.mkdir(parents=True, exist_ok=True)
        with pd.ExcelWriter(output, engine="openpyxl") as writer:
            for table in tables:
                read_table(table).to_excel(writer, sheet_name=_sheet_name(table, root, used), index=False)
    except OSError as e:
        raise StorageError(f"Cannot write {output}: {e}") from e
    logger.info("Exported %d tables to %s", len(tables), output)
    return output
