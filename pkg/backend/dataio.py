import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from errors import InvalidArgument, MissingLabelColumn, ParseError, TooSmall
from kernelcore import PointSet

logger = logging.getLogger(__name__)


class Regime(str, Enum):
    NORMAL = "normal"  # x, y ~ N(0, sigma^2 I)
    SPHERE = "sphere"  # x, y uniform on the sphere of radius sigma
    HETEROGEN = "heterogen"  # x ~ N(0, sigma^2 I), y ~ N(sigma 1, sigma^2 I)


@dataclass(frozen=True)
class RegimeSpec:
    regime: Regime
    sigma: float
    l: int  # points per set
    d: int

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0.0):
            raise InvalidArgument(f"sigma must be positive, got {self.sigma}")
        if self.l < 1 or self.d < 1:
            raise InvalidArgument(f"need l >= 1 and d >= 1, got l={self.l}, d={self.d}")


@dataclass(frozen=True)
class LabeledDataset:
    """Points with integer class labels"""

    points: PointSet
    labels: np.ndarray  # class indices in [0, class_count)
    class_count: int
    class_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.class_count < 2:
            raise InvalidArgument(
                f"classification needs at least 2 classes, got {self.class_count}"
            )
        if self.labels.shape != (self.points.size,):
            raise InvalidArgument(
                f"{self.labels.shape[0]} labels for {self.points.size} points"
            )
        if np.any(self.labels < 0) or np.any(self.labels >= self.class_count):
            raise InvalidArgument(f"labels must lie in [0, {self.class_count})")

    @property
    def size(self) -> int:
        return self.points.size

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(
            points=PointSet(points=self.points.points[indices]),
            labels=self.labels[indices],
            class_count=self.class_count,
            class_names=self.class_names,
        )


# ============================================================================
# Synthetic data
# ============================================================================


def synth_regime(spec: RegimeSpec, rng: np.random.Generator) -> Tuple[PointSet, PointSet]:
    """Draw the x and y sets of one sampling regime"""
    shape = (spec.l, spec.d)
    if spec.regime is Regime.SPHERE:
        sets = []
        for _ in range(2):
            g = rng.standard_normal(shape)
            norms = np.linalg.norm(g, axis=1, keepdims=True)
            sets.append(spec.sigma * g / norms)
        return PointSet(points=sets[0]), PointSet(points=sets[1])

    x = rng.normal(0.0, spec.sigma, size=shape)
    y = rng.normal(0.0, spec.sigma, size=shape)
    if spec.regime is Regime.HETEROGEN:
        y = y + spec.sigma
    return PointSet(points=x), PointSet(points=y)


def synth_blobs(
    n_per_class: int, d: int, separation: float, rng: np.random.Generator
) -> LabeledDataset:
    """Two unit-variance Gaussian classes whose means are `separation` apart along e1"""
    if n_per_class < 1 or d < 1:
        raise InvalidArgument(f"need n_per_class >= 1 and d >= 1, got {n_per_class}, {d}")
    offset = np.zeros(d)
    offset[0] = 0.5 * separation
    points = np.vstack(
        [
            rng.standard_normal((n_per_class, d)) - offset,
            rng.standard_normal((n_per_class, d)) + offset,
        ]
    )
    labels = np.repeat(np.arange(2), n_per_class)
    return LabeledDataset(
        points=PointSet(points=points), labels=labels, class_count=2, class_names=["0", "1"]
    )


# ============================================================================
# CSV ingestion
# ============================================================================


def load_csv(path: str, label_column: Optional[str] = None) -> Union[LabeledDataset, PointSet]:
    """
    Read a header-first, comma-separated UTF-8 file of decimal features.

    Args:
        path: CSV file
        label_column: name of the class column; every other column is a feature

    Returns:
        LabeledDataset when a label column is given, otherwise a PointSet

    Raises:
        ParseError: malformed file or a non-numeric feature cell (row is the
            1-based data row, header excluded)
        MissingLabelColumn: label_column is not in the header
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError as e:
        raise InvalidArgument(f"CSV file not found: {path}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ParseError(f"cannot parse {path}: {e}") from e

    if label_column is not None and label_column not in frame.columns:
        raise MissingLabelColumn(f"label column {label_column!r} not in {list(frame.columns)}")
    feature_columns = [c for c in frame.columns if c != label_column]
    if not feature_columns or frame.empty:
        raise ParseError(f"{path} has no feature data")

    values = np.empty((len(frame), len(feature_columns)))
    for j, column in enumerate(feature_columns):
        parsed = pd.to_numeric(frame[column].str.strip(), errors="coerce")
        bad = np.flatnonzero(parsed.isna().to_numpy())
        if bad.size:
            row = int(bad[0]) + 1
            raise ParseError(
                f"non-numeric value {frame[column].iloc[bad[0]]!r} at row {row}, column {column!r}",
                row=row,
                column=column,
            )
        values[:, j] = parsed.to_numpy(dtype=float)

    points = PointSet(points=values)
    logger.info("loaded %d x %d points from %s", points.size, points.dim, path)
    if label_column is None:
        return points

    codes, uniques = pd.factorize(frame[label_column], sort=False)
    return LabeledDataset(
        points=points,
        labels=codes.astype(int),
        class_count=len(uniques),
        class_names=[str(u) for u in uniques],
    )


# ============================================================================
# Splits
# ============================================================================


def split_indices(n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shuffled 90/5/5 index partition: floor(0.9 n), floor(0.05 n), remainder"""
    if n < 20:
        raise TooSmall(f"a 90/5/5 split needs at least 20 points, got {n}")
    order = rng.permutation(n)
    n_train = 9 * n // 10
    n_val = n // 20
    return order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]


def split_905_5(
    ds: LabeledDataset, rng: np.random.Generator
) -> Tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    train, val, test = split_indices(ds.size, rng)
    return ds.subset(train), ds.subset(val), ds.subset(test)
