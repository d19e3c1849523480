"""Correlation studies over externally measured training sets, and selection composition."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import LOCAL_ID_BITS, SourcePool
from .errors import DataFormatError, NumericError


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataFormatError(f"series must be 1-D and equal length, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise DataFormatError("pearson needs at least 2 pairs")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise NumericError("correlation undefined for a zero-variance series")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class CorrelationRow:
    label: str
    fid: float
    num_ids: float
    score: float


def load_correlation_csv(path: str | Path) -> list[CorrelationRow]:
    """Rows of a ``label,fid,num_ids,score`` CSV."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["label", "fid", "num_ids", "score"]:
            raise DataFormatError(f"{path}: header must be label,fid,num_ids,score")
        for row in reader:
            try:
                rows.append(CorrelationRow(row["label"], float(row["fid"]), float(row["num_ids"]), float(row["score"])))
            except (TypeError, ValueError):
                raise DataFormatError(f"{path}: row {reader.line_num}: unparseable value") from None
    return rows


def correlate(rows: Sequence[CorrelationRow]) -> dict[str, float]:
    """The three pairwise correlations of a FID / #IDs / score study."""
    fid = [r.fid for r in rows]
    ids = [r.num_ids for r in rows]
    score = [r.score for r in rows]
    return {
        "fid_vs_score": pearson(fid, score),
        "num_ids_vs_score": pearson(ids, score),
        "fid_vs_num_ids": pearson(fid, ids),
    }


@dataclass(frozen=True)
class DatasetShare:
    name: str
    images: int
    image_fraction: float
    identities: int
    identity_fraction: float


@dataclass(frozen=True)
class CompositionReport:
    datasets: list[DatasetShare]
    total_images: int
    total_identities: int
    achieved_fid: float | None = None
    budget: dict | None = field(default=None)

    def share(self, name: str) -> DatasetShare:
        return next(d for d in self.datasets if d.name == name)

    def to_dict(self) -> dict:
        return {
            "datasets": [
                {
                    "name": d.name,
                    "images": d.images,
                    "image_fraction": d.image_fraction,
                    "identities": d.identities,
                    "identity_fraction": d.identity_fraction,
                }
                for d in self.datasets
            ],
            "total_images": self.total_images,
            "total_identities": self.total_identities,
            "achieved_fid": self.achieved_fid,
            "budget": self.budget,
        }


def composition(pool: SourcePool, selected: Sequence[int], achieved_fid: float | None = None,
                budget: dict | None = None) -> CompositionReport:
    """Per-dataset image and identity counts/fractions of a selection."""
    idx = np.asarray(selected, dtype=np.int64)
    if idx.size == 0:
        raise DataFormatError("empty selection")
    if idx.min() < 0 or idx.max() >= len(pool):
        raise DataFormatError(f"selection index out of range [0, {len(pool)})")
    k = len(pool.datasets)
    ds = pool.dataset_ids[idx]
    images = np.bincount(ds, minlength=k)
    uniq = np.unique(pool.identity_ids[idx])
    ident = np.bincount((uniq >> np.uint64(LOCAL_ID_BITS)).astype(np.int64), minlength=k)
    n_img, n_id = int(images.sum()), int(ident.sum())
    shares = [
        DatasetShare(name, int(images[i]), float(images[i] / n_img), int(ident[i]), float(ident[i] / n_id))
        for i, name in enumerate(pool.datasets)
    ]
    return CompositionReport(shares, n_img, n_id, achieved_fid, budget)
