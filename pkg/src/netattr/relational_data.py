"""Observed network and attribute data: containers, CSV I/O, centering, binarization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError

KINDS = ("continuous", "binary", "rank", "ordinal")


def _default_labels(n):
    return tuple(str(i + 1) for i in range(n))


@dataclass(frozen=True)
class RelationalMatrix:
    """Directed relations ``y[i, j]`` among ``n`` nodes.

    ``values`` holds NaN wherever ``observed`` is False; the diagonal is never
    observed.  For ``kind="rank"`` entries are fixed-rank-nomination ranks
    (``max_nominations`` = highest, 1 = lowest listed, 0 = not listed).
    """

    values: np.ndarray
    kind: str = "continuous"
    observed: Optional[np.ndarray] = None
    max_nominations: Optional[int] = None
    labels: Optional[tuple] = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
            raise ValidationError(f"network must be a square matrix, got shape {vals.shape}")
        n = vals.shape[0]
        if self.kind not in KINDS:
            raise ValidationError(f"unknown relation kind {self.kind!r}")
        obs = ~np.isnan(vals) if self.observed is None else np.array(self.observed, dtype=bool)
        if obs.shape != vals.shape:
            raise ValidationError("observed mask does not match network shape")
        obs = obs & ~np.isnan(vals)
        np.fill_diagonal(obs, False)
        if not np.all(np.isfinite(vals[obs])):
            raise ValidationError("observed relations must be finite")
        vals[~obs] = np.nan
        labels = _default_labels(n) if self.labels is None else tuple(str(x) for x in self.labels)
        if len(labels) != n:
            raise ValidationError("label count does not match network size")
        cap = self.max_nominations
        if self.kind == "binary":
            if not np.all(np.isin(vals[obs], (0.0, 1.0))):
                raise ValidationError("binary networks may only contain 0 and 1")
        elif self.kind == "ordinal":
            if not np.all(vals[obs] == np.round(vals[obs])) or np.any(vals[obs] < 1):
                raise ValidationError("ordinal relations must be integer levels >= 1")
        elif self.kind == "rank":
            if cap is None or int(cap) < 1:
                raise ValidationError("rank networks need a positive max_nominations")
            cap = int(cap)
            _check_ranks(vals, obs, cap)
        vals.setflags(write=False)
        obs.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "max_nominations", cap)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def filled(self, fill=0.0):
        out = self.values.copy()
        out[~self.observed] = fill
        return out


def _check_ranks(vals, obs, cap):
    for i in range(vals.shape[0]):
        row = vals[i, obs[i]]
        if np.any(row != np.round(row)) or np.any(row < 0):
            raise ValidationError(f"row {i}: ranks must be non-negative integers")
        if np.any(row > cap):
            raise ValidationError(f"row {i}: rank exceeds max_nominations={cap}")
        nz = row[row > 0]
        if nz.size != np.unique(nz).size:
            raise ValidationError(f"row {i}: nonzero ranks must be distinct")


@dataclass(frozen=True)
class AttributeMatrix:
    """Continuous nodal attributes, one row per node; NaN marks missing entries."""

    values: np.ndarray
    observed: Optional[np.ndarray] = None
    centered: bool = False
    names: Optional[tuple] = None
    labels: Optional[tuple] = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2:
            raise ValidationError("attributes must be an n x p matrix")
        obs = ~np.isnan(vals) if self.observed is None else np.array(self.observed, dtype=bool) & ~np.isnan(vals)
        if obs.shape != vals.shape:
            raise ValidationError("observed mask does not match attribute shape")
        if not np.all(np.isfinite(vals[obs])):
            raise ValidationError("observed attributes must be finite")
        vals[~obs] = np.nan
        n, p = vals.shape
        if self.centered:
            full = obs.all(axis=0)
            if full.any():
                cols = vals[:, full]
                scale = np.maximum(1.0, np.abs(cols).max(axis=0))
                if np.any(np.abs(cols.mean(axis=0)) > 1e-10 * scale):
                    raise ValidationError("attributes flagged as centered have a column with nonzero mean")
        names = tuple(f"x{j + 1}" for j in range(p)) if self.names is None else tuple(self.names)
        labels = _default_labels(n) if self.labels is None else tuple(str(x) for x in self.labels)
        if len(names) != p or len(labels) != n:
            raise ValidationError("attribute names/labels do not match matrix shape")
        vals.setflags(write=False)
        obs.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class DyadCovariate:
    """A pairwise covariate ``w[i, j]`` (e.g. same-grade indicator)."""

    label: str
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
            raise ValidationError(f"dyadic covariate {self.label!r} must be square")
        off = ~np.eye(vals.shape[0], dtype=bool)
        if not np.all(np.isfinite(vals[off])):
            raise ValidationError(f"dyadic covariate {self.label!r} has non-finite entries")
        vals = np.where(off, vals, 0.0)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------


def _parse_cell(cell, where):
    cell = cell.strip()
    if cell == "":
        return math.nan
    try:
        return float(cell)
    except ValueError:
        raise ValidationError(f"non-numeric cell {cell!r} at {where}") from None


def _read_rows(path):
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise ValidationError(f"{path} is empty")
    return rows


def read_dense_matrix(path):
    """Read a square CSV with a header row and a first column of node labels."""
    rows = _read_rows(path)
    header = [c.strip() for c in rows[0][1:]]
    body = rows[1:]
    labels = [r[0].strip() for r in body]
    if len(body) != len(header) or any(len(r) - 1 != len(header) for r in body):
        raise ValidationError(f"{path}: dense matrix must be square ({len(body)} rows, {len(header)} columns)")
    if labels != header:
        raise ValidationError(f"{path}: row labels must match column labels")
    vals = np.array(
        [[_parse_cell(c, f"{path}:{i + 2}:{j + 2}") for j, c in enumerate(r[1:])] for i, r in enumerate(body)]
    ).reshape(len(body), len(body))
    return vals, tuple(labels)


def _node_sort_key(label):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def load_network(path, format="dense-csv", kind="continuous", max_nominations=None, nodes: Sequence | None = None):
    """Read a network from CSV.

    Parameters
    ----------
    path : path-like
    format : {"dense-csv", "edge-list-csv"}
        Dense files have node labels in the header row and first column, with
        empty cells for missing relations.  Edge lists have a ``src,dst,value``
        header; pairs absent from the list are 0 for binary and rank kinds and
        missing for continuous and ordinal kinds.
    kind : {"continuous", "binary", "rank", "ordinal"}
    max_nominations : int, optional
        Nomination cap, required for ``kind="rank"``.
    nodes : sequence of labels, optional
        Node set for edge lists; defaults to every label that appears.
    """
    if format == "dense-csv":
        vals, labels = read_dense_matrix(path)
    elif format == "edge-list-csv":
        rows = _read_rows(path)
        head = [c.strip().lower() for c in rows[0]]
        if head[:3] != ["src", "dst", "value"]:
            raise ValidationError(f"{path}: edge list header must be src,dst,value")
        edges = []
        for ln, r in enumerate(rows[1:], start=2):
            if len(r) < 3:
                raise ValidationError(f"{path}:{ln}: expected three fields")
            edges.append((r[0].strip(), r[1].strip(), _parse_cell(r[2], f"{path}:{ln}")))
        if nodes is None:
            seen = {s for s, _, _ in edges} | {d for _, d, _ in edges}
            labels = tuple(sorted(seen, key=_node_sort_key))
        else:
            labels = tuple(str(x) for x in nodes)
        index = {lab: i for i, lab in enumerate(labels)}
        n = len(labels)
        fill = 0.0 if kind in ("binary", "rank") else math.nan
        vals = np.full((n, n), fill)
        for s, d, v in edges:
            if s not in index or d not in index:
                raise ValidationError(f"{path}: edge ({s}, {d}) references an unknown node")
            if s == d:
                raise ValidationError(f"{path}: self-relation for node {s}")
            vals[index[s], index[d]] = v
    else:
        raise ValidationError(f"unknown network format {format!r}")
    np.fill_diagonal(vals, np.nan)
    return RelationalMatrix(vals, kind=kind, max_nominations=max_nominations, labels=labels)


def _fmt(x):
    return "" if np.isnan(x) else repr(float(x))


def save_network(Y: RelationalMatrix, path, format="dense-csv"):
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if format == "dense-csv":
            w.writerow([""] + list(Y.labels))
            for lab, row in zip(Y.labels, Y.values):
                w.writerow([lab] + [_fmt(x) for x in row])
        elif format == "edge-list-csv":
            w.writerow(["src", "dst", "value"])
            for i, j in zip(*np.nonzero(Y.observed)):
                v = Y.values[i, j]
                if Y.kind in ("binary", "rank") and v == 0:
                    continue
                w.writerow([Y.labels[i], Y.labels[j], repr(float(v))])
        else:
            raise ValidationError(f"unknown network format {format!r}")


def load_attributes(path):
    """Read an attribute table: header ``node,<name>,...``, one row per node."""
    rows = _read_rows(path)
    names = tuple(c.strip() for c in rows[0][1:])
    if not names:
        raise ValidationError(f"{path}: no attribute columns")
    labels, data = [], []
    for ln, r in enumerate(rows[1:], start=2):
        if len(r) - 1 != len(names):
            raise ValidationError(f"{path}:{ln}: expected {len(names)} attribute values")
        labels.append(r[0].strip())
        data.append([_parse_cell(c, f"{path}:{ln}") for c in r[1:]])
    return AttributeMatrix(np.array(data, dtype=np.float64).reshape(len(labels), len(names)),
                           names=names, labels=tuple(labels))


def save_attributes(X: AttributeMatrix, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node"] + list(X.names))
        for lab, row in zip(X.labels, X.values):
            w.writerow([lab] + [_fmt(x) for x in row])


def load_covariate(path, label=None):
    vals, _ = read_dense_matrix(path)
    return DyadCovariate(label or Path(path).stem, np.nan_to_num(vals, nan=0.0))


def align_attributes(X: AttributeMatrix, labels):
    """Reorder attribute rows to match network node labels."""
    if tuple(X.labels) == tuple(labels):
        return X
    index = {lab: i for i, lab in enumerate(X.labels)}
    missing = [lab for lab in labels if lab not in index]
    if missing:
        raise ValidationError(f"attribute file lacks nodes {missing[:5]}")
    order = [index[lab] for lab in labels]
    return AttributeMatrix(X.values[order], observed=X.observed[order], centered=X.centered,
                           names=X.names, labels=tuple(labels))


# ---------------------------------------------------------------------------
# transformations
# ---------------------------------------------------------------------------


def center_attributes(X: AttributeMatrix) -> AttributeMatrix:
    """Subtract from each column the mean of its observed entries."""
    counts = X.observed.sum(axis=0)
    if np.any(counts == 0):
        bad = [X.names[j] for j in np.nonzero(counts == 0)[0]]
        raise ValidationError(f"attribute columns with no observed entries: {bad}")
    means = np.nansum(X.values, axis=0) / counts
    return AttributeMatrix(X.values - means, observed=X.observed, centered=True, names=X.names, labels=X.labels)


def binarize(Y: RelationalMatrix, d: float) -> RelationalMatrix:
    """Threshold a continuous network at density ``d``.

    Exactly ``floor(d * n * (n - 1))`` relations are set to 1: those strictly
    above the threshold value, then ties at the threshold in ascending
    ``(i, j)`` order.
    """
    if not 0.0 < d < 1.0:
        raise ValidationError(f"density must lie in (0, 1), got {d}")
    n = Y.n
    off = ~np.eye(n, dtype=bool)
    if not np.all(Y.observed[off]):
        raise ValidationError("binarize needs a fully observed network")
    flat = np.flatnonzero(off)
    vals = Y.values.ravel()[flat]
    m = flat.size
    count = int(math.floor(d * m + 1e-9))
    order = np.lexsort((flat, -vals))
    out = np.zeros(n * n)
    out[flat[order[:count]]] = 1.0
    out = out.reshape(n, n)
    np.fill_diagonal(out, np.nan)
    return RelationalMatrix(out, kind="binary", labels=Y.labels)
