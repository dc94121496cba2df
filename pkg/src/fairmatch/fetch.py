"""Download the public fairness datasets into the data directory.

Each raw file is pinned by SHA-256.  Sources are tried in order: the
canonical host first, then a published PyPI wheel that bundles the same
file.  Downloads that do not match the pinned digest are rejected.
"""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import urllib.request
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from .dataio import data_dir

log = logging.getLogger(__name__)

_RESPONSIBLY = (
    "https://files.pythonhosted.org/packages/44/64/"
    "72211de680c21fe6cea67da182db965861603d311c67839ab39cc7226780/"
    "responsibly-0.1.2-py3-none-any.whl"
)
_SKLEGO = (
    "https://files.pythonhosted.org/packages/c1/84/"
    "faa0ebdd72002c297024a3799c990bb01d0acf1bbb73308f4b0dddabbd17/"
    "scikit_lego-0.9.10-py3-none-any.whl"
)

ADULT_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
]
GERMAN_COLUMNS = [
    "status", "duration", "credit_history", "purpose", "credit_amount", "savings",
    "employment", "installment_rate", "personal_status", "other_debtors",
    "residence_since", "property", "age", "installment_plans", "housing",
    "existing_credits", "job", "people_liable", "telephone", "foreign_worker", "credit",
]


@dataclass(frozen=True)
class Source:
    url: str
    member: Optional[str] = None  # path inside a zip/wheel archive
    nested: Optional[str] = None  # path inside a zip stored within ``member``


@dataclass(frozen=True)
class RawFile:
    name: str
    sha256: Optional[str]
    sources: tuple[Source, ...]


@dataclass(frozen=True)
class DatasetSource:
    name: str
    files: tuple[RawFile, ...]
    build: Callable[[dict[str, bytes]], bytes]
    note: str = ""


def _adult(raw: dict[str, bytes]) -> bytes:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(ADULT_COLUMNS)
    for key in ("adult.data", "adult.test"):
        for line in raw[key].decode("utf-8").splitlines():
            if not line.strip() or line.startswith("|"):
                continue
            cells = [c.strip() for c in line.split(",")]
            cells[-1] = cells[-1].rstrip(".")
            w.writerow(cells)
    return out.getvalue().encode()


def _german(raw: dict[str, bytes]) -> bytes:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(GERMAN_COLUMNS)
    for line in raw["german.data"].decode("utf-8").splitlines():
        if line.strip():
            w.writerow(line.split())
    return out.getvalue().encode()


def _single(key: str) -> Callable[[dict[str, bytes]], bytes]:
    return lambda raw: raw[key]


SOURCES: dict[str, DatasetSource] = {
    "adult": DatasetSource(
        "adult",
        (
            RawFile(
                "adult.data",
                "5b00264637dbfec36bdeaab5676b0b309ff9eb788d63554ca0a249491c86603d",
                (
                    Source("https://archive.ics.uci.edu/ml/machine-learning-databases/adult/adult.data"),
                    Source(_RESPONSIBLY, "responsibly/dataset/adult/adult.data"),
                ),
            ),
            RawFile(
                "adult.test",
                "a2a9044bc167a35b2361efbabec64e89d69ce82d9790d2980119aac5fd7e9c05",
                (
                    Source("https://archive.ics.uci.edu/ml/machine-learning-databases/adult/adult.test"),
                    Source(_RESPONSIBLY, "responsibly/dataset/adult/adult.test"),
                ),
            ),
        ),
        _adult,
    ),
    "compas": DatasetSource(
        "compas",
        (
            RawFile(
                "compas-scores-two-years.csv",
                "c451db85908b2f7fef1d83203bedf6b71ecda0d5af468d82ae62178f91d0cc7d",
                (
                    Source(
                        "https://raw.githubusercontent.com/propublica/compas-analysis/"
                        "master/compas-scores-two-years.csv"
                    ),
                    Source(_RESPONSIBLY, "responsibly/dataset/compas/compas-scores-two-years.csv"),
                ),
            ),
        ),
        _single("compas-scores-two-years.csv"),
    ),
    "german": DatasetSource(
        "german",
        (
            RawFile(
                "german.data",
                "b21f3d81db8071257d5ff1deaeba1fd4303b62712e6fcc9715c7a86202cb5871",
                (
                    Source(
                        "https://archive.ics.uci.edu/ml/machine-learning-databases/"
                        "statlog/german/german.data"
                    ),
                    Source(_RESPONSIBLY, "responsibly/dataset/german/german.data"),
                ),
            ),
        ),
        _german,
        note="also vendored with the package",
    ),
    "heart": DatasetSource(
        "heart",
        (
            RawFile(
                "heart.csv",
                "a91c81831bb2126e5fde6ce4ebde147a78429da12005108a6677ba57ecde9244",
                (
                    Source("https://storage.googleapis.com/download.tensorflow.org/data/heart.csv"),
                    Source(_SKLEGO, "sklego/data/hearts.zip", "heart.csv"),
                ),
            ),
        ),
        _single("heart.csv"),
        note="also vendored with the package",
    ),
    "bank": DatasetSource(
        "bank",
        (
            RawFile(
                "bank-full.csv",
                None,
                (
                    Source(
                        "https://archive.ics.uci.edu/ml/machine-learning-databases/00222/bank.zip",
                        "bank-full.csv",
                    ),
                ),
            ),
        ),
        _single("bank-full.csv"),
        note="digest not pinned",
    ),
}

MEPS_NOTE = (
    "MEPS cannot be redistributed.  Download panel 19 (h181.csv) from "
    "https://meps.ahrq.gov, derive RACE and UTILIZATION as AIF360 does, and "
    "save the result as meps.csv in the data directory."
)


def _download(url: str, timeout: float) -> bytes:
    with urllib.request.urlopen(url, timeout=timeout) as resp:  # noqa: S310 - fixed https URLs
        return resp.read()


def _unpack(blob: bytes, src: Source) -> bytes:
    if src.member is None:
        return blob
    inner = zipfile.ZipFile(io.BytesIO(blob)).read(src.member)
    if src.nested is not None:
        inner = zipfile.ZipFile(io.BytesIO(inner)).read(src.nested)
    return inner


def fetch_raw(raw: RawFile, timeout: float = 60.0, opener=_download) -> bytes:
    errors = []
    for src in raw.sources:
        try:
            data = _unpack(opener(src.url, timeout), src)
        except Exception as exc:  # network and archive errors alike: try the next source
            errors.append(f"{src.url}: {exc}")
            continue
        digest = hashlib.sha256(data).hexdigest()
        if raw.sha256 is not None and digest != raw.sha256:
            errors.append(f"{src.url}: sha256 {digest} != pinned {raw.sha256}")
            continue
        if raw.sha256 is None:
            log.warning("%s has no pinned digest (got %s)", raw.name, digest)
        return data
    raise RuntimeError(f"could not fetch {raw.name}:\n  " + "\n  ".join(errors))


def fetch(name: str, dest: Optional[Path] = None, force: bool = False, timeout: float = 60.0) -> Path:
    """Fetch one dataset and write its normalised CSV; returns the CSV path."""
    if name == "meps":
        raise RuntimeError(MEPS_NOTE)
    if name not in SOURCES:
        raise KeyError(f"unknown dataset {name!r}; known: {sorted(SOURCES)} + meps")
    spec = SOURCES[name]
    dest = Path(dest) if dest is not None else data_dir()
    out = dest / f"{name}.csv"
    if out.exists() and not force:
        return out
    raw = {f.name: fetch_raw(f, timeout=timeout) for f in spec.files}
    dest.mkdir(parents=True, exist_ok=True)
    tmp = out.with_suffix(".tmp")
    tmp.write_bytes(spec.build(raw))
    tmp.replace(out)
    log.info("wrote %s", out)
    return out
