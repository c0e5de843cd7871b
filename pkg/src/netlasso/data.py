"""Loading, normalization, and windowing of node time series.

Data arrives as a wide CSV: header row of node identifiers, first column a
timestamp label, numeric body, no gaps. Normalization is per-column z-score
with population standard deviation, fit on the training rows only. Windows
slide chronologically; the split drops the trailing windows of each earlier
part so that no later part's target rows are ever visible during training.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .attention import EdgeSet
from .model import WindowSample


class DataError(ValueError):
    """Malformed input data or an invalid preprocessing request."""


@dataclass
class Dataset:
    """T rows of N node values with their labels, plus an optional prior graph."""

    timestamps: list
    node_ids: list
    values: np.ndarray
    edges: EdgeSet | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"values must be a T x N matrix, got shape "
                            f"{self.values.shape}")
        if len(self.timestamps) != self.values.shape[0]:
            raise DataError(f"{len(self.timestamps)} timestamps for "
                            f"{self.values.shape[0]} rows")
        if len(self.node_ids) != self.values.shape[1]:
            raise DataError(f"{len(self.node_ids)} node ids for "
                            f"{self.values.shape[1]} columns")
        if not np.isfinite(self.values).all():
            raise DataError("values contain non-finite entries")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_columns(self) -> int:
        return self.values.shape[1]


def load_csv(path) -> Dataset:
    """Read a wide CSV; every cell must be present and numeric."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) < 2:
        raise DataError(f"{path}: need a header with a timestamp column and "
                        f"at least one node column")
    header = rows[0]
    node_ids = [h.strip() for h in header[1:]]
    if any(not n for n in node_ids):
        raise DataError(f"{path}: empty node id in header")
    seen = set()
    for n in node_ids:
        if n in seen:
            raise DataError(f"{path}: duplicate node id {n!r}")
        seen.add(n)
    if len(rows) < 2:
        raise DataError(f"{path}: no data rows")
    timestamps = []
    values = np.empty((len(rows) - 1, len(node_ids)))
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} cells, "
                            f"expected {len(header)}")
        timestamps.append(row[0].strip())
        for c, cell in enumerate(row[1:]):
            text = cell.strip()
            if not text:
                raise DataError(f"{path}: missing value at row {r}, "
                                f"column {node_ids[c]!r}")
            try:
                v = float(text)
            except ValueError:
                raise DataError(f"{path}: non-numeric value {text!r} at "
                                f"row {r}, column {node_ids[c]!r}") from None
            if not np.isfinite(v):
                raise DataError(f"{path}: non-finite value at row {r}, "
                                f"column {node_ids[c]!r}")
            values[r - 2, c] = v
    return Dataset(timestamps=timestamps, node_ids=node_ids, values=values)


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp"] + list(dataset.node_ids))
        for ts, row in zip(dataset.timestamps, dataset.values):
            writer.writerow([ts] + [repr(float(v)) for v in row])


def load_edges(path, n_nodes: int, node_ids=None) -> EdgeSet:
    """Edge-list text: one 'source target' pair per line, ids or indices."""
    index = {str(n): i for i, n in enumerate(node_ids)} if node_ids else None
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataError(f"{path}: line {lineno}: expected "
                                f"'source target', got {raw.strip()!r}")
            if index is not None and parts[0] in index and parts[1] in index:
                pairs.append((index[parts[0]], index[parts[1]]))
            else:
                try:
                    pairs.append((int(parts[0]), int(parts[1])))
                except ValueError:
                    raise DataError(f"{path}: line {lineno}: unknown node in "
                                    f"{raw.strip()!r}") from None
    return EdgeSet.from_pairs(n_nodes, pairs)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def zscore(values: np.ndarray, fit_range: tuple[int, int],
           node_ids=None) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """Standardize each column using stats fit on rows [lo, hi) only.

    Population standard deviation (divide by the row count) so the forward
    and inverse maps round-trip exactly. Returns the fully transformed
    matrix and the (mean, std) stats.
    """
    values = np.asarray(values, dtype=np.float64)
    lo, hi = fit_range
    if not (0 <= lo < hi <= values.shape[0]):
        raise DataError(f"fit range [{lo}, {hi}) invalid for "
                        f"{values.shape[0]} rows")
    fit = values[lo:hi]
    mean = fit.mean(axis=0)
    std = fit.std(axis=0)
    for c, s in enumerate(std):
        if s == 0.0:
            name = repr(node_ids[c]) if node_ids else f"column {c}"
            raise DataError(f"cannot z-score {name}: zero variance on the "
                            f"fit range")
    return (values - mean) / std, (mean, std)


def inverse_zscore(values: np.ndarray,
                   stats: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    mean, std = stats
    return np.asarray(values, dtype=np.float64) * std + mean


# ---------------------------------------------------------------------------
# windowing and splitting
# ---------------------------------------------------------------------------

def window_count(n_rows: int, window: int, horizon: int) -> int:
    n = n_rows - window - horizon + 1
    if n < 1:
        raise DataError(f"{n_rows} rows cannot fit even one window of "
                        f"{window} inputs plus {horizon} targets")
    return n


@dataclass(frozen=True)
class Split:
    """Window-start index ranges [lo, hi) per part, chronological."""

    train: tuple[int, int]
    val: tuple[int, int]
    test: tuple[int, int]

    def part(self, samples: list, name: str) -> list:
        lo, hi = getattr(self, name)
        return samples[lo:hi]


def chronological_split(n_windows: int, horizon: int,
                        fractions: tuple[float, float, float] = (0.7, 0.1, 0.2),
                        ) -> Split:
    """Contiguous train/val/test ranges over window starts.

    The last (horizon - 1) windows of train and of val are dropped so that
    no row a later part predicts was ever inside an earlier part's windows.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions) \
            or abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions must be three non-negative numbers "
                        f"summing to 1, got {fractions}")
    b1 = int(n_windows * fractions[0])
    b2 = b1 + int(n_windows * fractions[1])
    trim = horizon - 1
    split = Split(train=(0, max(b1 - trim, 0)),
                  val=(b1, max(b2 - trim, b1)),
                  test=(b2, n_windows))
    if split.train[1] <= split.train[0]:
        raise DataError(f"{n_windows} windows leave no training windows "
                        f"under fractions {fractions} and horizon {horizon}")
    return split


def train_fit_range(split: Split, window: int, horizon: int) -> tuple[int, int]:
    """Rows touched by training windows: normalization must see only these."""
    last_start = split.train[1] - 1
    return (0, last_start + window + horizon)


def make_windows(values: np.ndarray, window: int, horizon: int,
                 d_x: int = 1) -> list[WindowSample]:
    """All sliding windows in chronological start order.

    Rows of ``values`` hold node-major stacked features: node i owns
    columns [i*d_x, (i+1)*d_x).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DataError(f"values must be 2-D, got shape {values.shape}")
    if values.shape[1] % d_x != 0:
        raise DataError(f"{values.shape[1]} columns do not stack into "
                        f"features of width {d_x}")
    n = window_count(values.shape[0], window, horizon)
    n_nodes = values.shape[1] // d_x
    shaped = values.reshape(values.shape[0], n_nodes, d_x)
    return [WindowSample(inputs=shaped[s:s + window],
                         targets=shaped[s + window:s + window + horizon])
            for s in range(n)]
