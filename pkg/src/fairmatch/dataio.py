"""Loading, encoding, scaling and splitting of tabular fairness datasets.

Every random choice in the toolkit goes through :func:`make_rng`, a numpy
``Generator`` over the PCG64 bit generator seeded with a single unsigned
integer.  PCG64 output is stable across platforms and numpy releases, so a
(dataset, fraction, seed) triple always yields the same split.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

DATA_ENV = "FAIRMATCH_DATA"
VENDORED = ("german", "heart")


class SchemaError(ValueError):
    """A CSV or schema document does not match what the loader expects."""


class DegenerateDatasetError(ValueError):
    """Fewer than two protected groups or label values remain."""


class DegenerateSplitError(ValueError):
    """A split is too small or leaves a protected group empty."""


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True)
class FeatureColumn:
    name: str
    kind: str  # "numeric" | "categorical"
    categories: Optional[tuple] = None


@dataclass(frozen=True)
class DatasetSchema:
    """Column roles for one dataset and one choice of protected attribute.

    ``privileged_value`` and ``favorable_value`` accept a scalar (equality),
    a list (membership) or a ``{"op": ">=", "value": 25}`` comparison, so
    numeric attributes such as age can be binarised declaratively.
    """

    name: str
    feature_columns: tuple[FeatureColumn, ...]
    protected_attribute: str
    privileged_value: Any
    label_column: str
    favorable_value: Any
    pa_name: str = ""
    include_pa: bool = True
    filters: tuple = ()
    delimiter: str = ","
    na_values: tuple = ()
    file: str = ""

    @property
    def display_name(self) -> str:
        return f"{self.name}:{self.pa_name or self.protected_attribute}"


@dataclass(frozen=True)
class LoadReport:
    n_raw: int
    n_filtered: int
    n_dropped_missing: int
    n_rows: int


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    pa: np.ndarray
    row_ids: np.ndarray
    schema: DatasetSchema
    feature_names: tuple[str, ...] = ()
    scaled: bool = True
    report: Optional[LoadReport] = None

    def __post_init__(self):
        object.__setattr__(self, "features", np.array(self.features, dtype=float, ndmin=2))
        object.__setattr__(self, "labels", np.array(self.labels, dtype=np.int8))
        object.__setattr__(self, "pa", np.array(self.pa, dtype=np.int8))
        object.__setattr__(self, "row_ids", np.array(self.row_ids, dtype=np.int64))
        n = len(self.row_ids)
        if not (self.features.shape[0] == len(self.labels) == len(self.pa) == n):
            raise ValueError("features, labels, pa and row_ids must have the same number of rows")
        if self.scaled and self.features.size and (
            np.nanmin(self.features) < 0.0 or np.nanmax(self.features) > 1.0
        ):
            raise ValueError("scaled features must lie in [0, 1]")
        for arr in (self.features, self.labels, self.pa, self.row_ids):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.row_ids)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def take(self, positions: np.ndarray) -> "Dataset":
        """Subset by positional index (not by row id)."""
        positions = np.asarray(positions, dtype=np.int64)
        return replace(
            self,
            features=self.features[positions],
            labels=self.labels[positions],
            pa=self.pa[positions],
            row_ids=self.row_ids[positions],
            report=None,
        )

    def positions_of(self, ids: Sequence[int]) -> np.ndarray:
        """Positional indices of the given row ids, in the order given."""
        lookup = {int(r): i for i, r in enumerate(self.row_ids)}
        try:
            return np.array([lookup[int(r)] for r in ids], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"row id {exc.args[0]} not in dataset") from None

    def select_ids(self, ids: Sequence[int]) -> "Dataset":
        return self.take(self.positions_of(ids))


@dataclass(frozen=True, eq=False)
class SplitPair:
    train: Dataset
    test: Dataset
    seed: int
    train_fraction: float = 0.7

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.train.row_ids, dtype="<i8").tobytes())
        h.update(b"|")
        h.update(np.ascontiguousarray(self.test.row_ids, dtype="<i8").tobytes())
        return h.hexdigest()[:16]


# --------------------------------------------------------------------------
# schemas

def schema_dir() -> Path:
    return Path(str(resources.files("fairmatch") / "data" / "schemas"))


def available_schemas() -> list[str]:
    return sorted(p.stem for p in schema_dir().glob("*.json"))


def load_schema(
    name_or_path: str | os.PathLike,
    protected_attr: Optional[str] = None,
    include_pa: bool = True,
) -> DatasetSchema:
    """Read a schema document and bind it to one protected attribute.

    ``name_or_path`` is either a shipped schema id (``"adult"``) or a path to a
    JSON file with the same layout.
    """
    path = Path(name_or_path)
    if not path.suffix:
        path = schema_dir() / f"{name_or_path}.json"
    if not path.exists():
        raise SchemaError(f"unknown schema {name_or_path!r}; shipped: {available_schemas()}")
    doc = json.loads(path.read_text())
    pas = doc.get("protected_attributes") or {}
    pa_name = protected_attr or doc.get("default_protected_attribute")
    if pa_name not in pas:
        raise SchemaError(
            f"schema {doc['name']!r} has no protected attribute {pa_name!r}; choose from {sorted(pas)}"
        )
    pa_doc = pas[pa_name]
    cols = doc["feature_columns"]
    if cols == "auto":
        feature_columns: tuple = ()
    else:
        feature_columns = tuple(
            FeatureColumn(
                c["name"], c["kind"], tuple(c["categories"]) if c.get("categories") else None
            )
            for c in cols
        )
    for fc in feature_columns:
        if fc.kind not in ("numeric", "categorical"):
            raise SchemaError(f"column {fc.name!r}: unknown kind {fc.kind!r}")
    return DatasetSchema(
        name=doc["name"],
        feature_columns=feature_columns,
        protected_attribute=pa_doc["column"],
        privileged_value=pa_doc["privileged_value"],
        label_column=doc["label_column"],
        favorable_value=doc["favorable_value"],
        pa_name=pa_name,
        include_pa=include_pa,
        filters=tuple(tuple(sorted(f.items())) for f in doc.get("filters", [])),
        delimiter=doc.get("delimiter", ","),
        na_values=tuple(doc.get("na_values", [])),
        file=doc.get("file", f"{doc['name']}.csv"),
    )


_OPS = {
    "==": np.equal,
    "!=": np.not_equal,
    ">=": np.greater_equal,
    ">": np.greater,
    "<=": np.less_equal,
    "<": np.less,
}


def _matches(values: pd.Series, spec: Any) -> np.ndarray:
    if isinstance(spec, dict):
        op = _OPS[spec["op"]]
        return np.asarray(op(values.to_numpy(), spec["value"]), dtype=bool)
    if isinstance(spec, (list, tuple)):
        return values.isin(list(spec)).to_numpy()
    return (values == spec).to_numpy()


# --------------------------------------------------------------------------
# data files

def data_dir() -> Path:
    return Path(os.environ.get(DATA_ENV, Path.home() / ".cache" / "fairmatch"))


def dataset_path(schema: DatasetSchema) -> Path:
    """Where the CSV for ``schema`` lives: the data directory, else the vendored copy."""
    local = data_dir() / schema.file
    if local.exists():
        return local
    vendored = Path(str(resources.files("fairmatch") / "data" / schema.file))
    if vendored.exists():
        return vendored
    raise FileNotFoundError(
        f"{schema.file} not found in {data_dir()}; run `fairmatch fetch {schema.name}`"
    )


def load_dataset(
    path: str | os.PathLike | None,
    schema: DatasetSchema,
    scale: bool = True,
) -> Dataset:
    """Read a CSV, apply schema filters, drop incomplete rows and encode.

    Categorical columns are one-hot encoded against the schema's pinned
    category list (or the sorted observed values when none is pinned).  The
    binarised protected attribute is appended as the last feature when
    ``schema.include_pa`` is set.  Min-max scaling is applied to the whole
    table unless ``scale`` is false.
    """
    path = Path(path) if path is not None else dataset_path(schema)
    df = pd.read_csv(
        path,
        sep=schema.delimiter,
        na_values=list(schema.na_values) or None,
        skipinitialspace=True,
    )
    df.columns = [str(c).strip() for c in df.columns]
    n_raw = len(df)
    df.index = pd.RangeIndex(n_raw)

    feature_columns = schema.feature_columns
    if not feature_columns:
        feature_columns = tuple(
            FeatureColumn(c, "numeric")
            for c in df.columns
            if c not in (schema.label_column, schema.protected_attribute)
        )
    used = [fc.name for fc in feature_columns] + [schema.protected_attribute, schema.label_column]
    missing = [c for c in dict.fromkeys(used) if c not in df.columns]
    if missing:
        raise SchemaError(f"{path.name}: missing columns {missing}")

    keep = np.ones(n_raw, dtype=bool)
    for f in schema.filters:
        f = dict(f)
        col = df[f["column"]]
        with np.errstate(invalid="ignore"):
            keep &= _matches(col, {"op": f["op"], "value": f["value"]}) & col.notna().to_numpy()
    n_filtered = int((~keep).sum())
    df = df[keep]

    complete = df[list(dict.fromkeys(used))].notna().all(axis=1)
    n_dropped = int((~complete).sum())
    df = df[complete]
    if n_dropped:
        log.info("%s: dropped %d rows with missing values", schema.name, n_dropped)

    labels = _matches(df[schema.label_column], schema.favorable_value).astype(np.int8)
    pa = _matches(df[schema.protected_attribute], schema.privileged_value).astype(np.int8)
    if len(np.unique(labels)) < 2:
        raise DegenerateDatasetError(f"{schema.name}: label takes a single value after encoding")
    if len(np.unique(pa)) < 2:
        raise DegenerateDatasetError(f"{schema.name}: protected attribute has a single group")

    blocks, names = [], []
    for fc in feature_columns:
        if fc.name == schema.protected_attribute:
            continue
        col = df[fc.name]
        if fc.kind == "numeric":
            vals = pd.to_numeric(col, errors="coerce").to_numpy(dtype=float)
            if not np.all(np.isfinite(vals)):
                raise SchemaError(f"column {fc.name!r} has non-numeric entries")
            blocks.append(vals[:, None])
            names.append(fc.name)
        else:
            text = col.astype(str).str.strip()
            cats = fc.categories or tuple(sorted(text.unique()))
            for c in cats:
                blocks.append((text == str(c)).to_numpy(dtype=float)[:, None])
                names.append(f"{fc.name}={c}")
    if schema.include_pa:
        blocks.append(pa.astype(float)[:, None])
        names.append(f"{schema.pa_name or schema.protected_attribute}(privileged)")
    features = np.hstack(blocks) if blocks else np.zeros((len(df), 0))

    data = Dataset(
        features=features,
        labels=labels,
        pa=pa,
        row_ids=df.index.to_numpy(dtype=np.int64),
        schema=schema,
        feature_names=tuple(names),
        scaled=False,
        report=LoadReport(n_raw, n_filtered, n_dropped, len(df)),
    )
    return minmax_scale(data) if scale else data


# --------------------------------------------------------------------------
# scaling and splitting

@dataclass(frozen=True)
class ScalingParams:
    minimum: np.ndarray
    maximum: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "ScalingParams":
        if features.shape[0] == 0:
            raise ValueError("cannot fit scaling on an empty matrix")
        return cls(features.min(axis=0), features.max(axis=0))

    def transform(self, features: np.ndarray) -> np.ndarray:
        span = self.maximum - self.minimum
        safe = np.where(span > 0, span, 1.0)
        out = (features - self.minimum) / safe
        # constant columns map to zero so the column count stays fixed
        out[:, span <= 0] = 0.0
        return np.clip(out, 0.0, 1.0)


def minmax_scale(raw: Dataset, params: Optional[ScalingParams] = None) -> Dataset:
    """Map each column to [0, 1] by its min and max.

    With ``params`` given (fitted elsewhere, e.g. on a training split) values
    outside the fitted range are clipped.
    """
    params = params or ScalingParams.fit(raw.features)
    return replace(raw, features=params.transform(raw.features.astype(float)), scaled=True)


def split(data: Dataset, train_fraction: float = 0.7, seed: int = 0, strict_scaling: bool = False) -> SplitPair:
    """Seeded shuffle followed by a prefix split.

    ``strict_scaling`` refits min-max scaling on the training rows only and
    applies it (clipped) to the test rows; the default keeps the scaling of
    the full table.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n = len(data)
    if n < 10:
        raise DegenerateSplitError(f"need at least 10 rows to split, got {n}")
    order = make_rng(seed).permutation(n)
    n_train = int(np.floor(train_fraction * n))
    train, test = data.take(order[:n_train]), data.take(order[n_train:])
    for part, label in ((train, "train"), (test, "test")):
        if len(np.unique(part.pa)) < 2:
            raise DegenerateSplitError(f"seed {seed}: {label} part lacks a protected group")
    if strict_scaling:
        params = ScalingParams.fit(train.features)
        train, test = minmax_scale(train, params), minmax_scale(test, params)
    return SplitPair(train=train, test=test, seed=int(seed), train_fraction=float(train_fraction))


def load(name: str, protected_attr: Optional[str] = None, include_pa: bool = True) -> Dataset:
    """Shortcut: shipped schema id -> scaled Dataset."""
    schema = load_schema(name, protected_attr, include_pa=include_pa)
    return load_dataset(None, schema)
