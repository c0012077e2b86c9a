"""Stacked two-file layout, CSV ingestion and emission.

Rows ``0 .. n_A-1`` come from file A (X and Y observed, Z missing); rows
``n_A .. n-1`` come from file B (X and Z observed, Y missing). Columns are
always held in canonical (X, Y, Z) order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

OBSERVED = "observed"
NN = "nn"
PARAMETRIC = "parametric"


@dataclass(frozen=True)
class BlockSpec:
    """Column names of the X, Y and Z blocks."""

    x: tuple[str, ...]
    y: tuple[str, ...]
    z: tuple[str, ...]

    def __post_init__(self):
        for name in ("x", "y", "z"):
            object.__setattr__(self, name, tuple(str(c) for c in getattr(self, name)))
        if not (self.x and self.y and self.z):
            raise DataError("each of the X, Y and Z blocks needs at least one column")
        names = self.x + self.y + self.z
        if len(set(names)) != len(names):
            dupes = sorted({c for c in names if names.count(c) > 1})
            raise DataError(f"column names must be unique across blocks: {dupes}")

    @classmethod
    def default(cls, d_x=1, d_y=1, d_z=1):
        return cls(
            tuple(f"x{i + 1}" for i in range(d_x)),
            tuple(f"y{i + 1}" for i in range(d_y)),
            tuple(f"z{i + 1}" for i in range(d_z)),
        )

    @property
    def dims(self):
        return len(self.x), len(self.y), len(self.z)

    @property
    def d(self):
        return sum(self.dims)

    @property
    def columns(self):
        return self.x + self.y + self.z

    @property
    def sx(self):
        return slice(0, len(self.x))

    @property
    def sy(self):
        return slice(len(self.x), len(self.x) + len(self.y))

    @property
    def sz(self):
        return slice(len(self.x) + len(self.y), self.d)

    def columns_for(self, tag):
        if tag == "A":
            return self.x + self.y
        if tag == "B":
            return self.x + self.z
        raise DataError(f"dataset tag must be 'A' or 'B', got {tag!r}")

    def to_dict(self):
        return {"x": list(self.x), "y": list(self.y), "z": list(self.z)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["x"]), tuple(d["y"]), tuple(d["z"]))


def block_mask(n_a, n_b, spec):
    """Observed-cell mask of the stacked layout (True = observed)."""
    mask = np.ones((n_a + n_b, spec.d), dtype=bool)
    mask[:n_a, spec.sz] = False
    mask[n_a:, spec.sy] = False
    mask.setflags(write=False)
    return mask


@dataclass(frozen=True, eq=False)
class StackedDataset:
    """Stacked n x d matrix with the structured missingness of the two files.

    Missing cells hold NaN in ``values`` but ``mask`` is authoritative.
    """

    values: np.ndarray
    n_a: int
    n_b: int
    spec: BlockSpec
    mask: np.ndarray = field(init=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        n = self.n_a + self.n_b
        if self.n_a < 1 or self.n_b < 1:
            raise DataError("both datasets must contain at least one row")
        if values.shape != (n, self.spec.d):
            raise DataError(f"values shape {values.shape} != ({n}, {self.spec.d})")
        mask = block_mask(self.n_a, self.n_b, self.spec)
        bad = mask & ~np.isfinite(values)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise DataError(
                f"non-finite observed value at row {r}, column {self.spec.columns[c]!r}",
                row=int(r), column=self.spec.columns[c],
            )
        values[~mask] = np.nan
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def n(self):
        return self.n_a + self.n_b

    @property
    def x(self):
        return self.values[:, self.spec.sx]

    @property
    def xa(self):
        return self.values[: self.n_a, self.spec.sx]

    @property
    def xb(self):
        return self.values[self.n_a :, self.spec.sx]

    @property
    def ya(self):
        return self.values[: self.n_a, self.spec.sy]

    @property
    def zb(self):
        return self.values[self.n_a :, self.spec.sz]

    @property
    def a_block(self):
        """Observed (X, Y) rows of file A."""
        return np.hstack([self.xa, self.ya])

    @property
    def b_block(self):
        """Observed (X, Z) rows of file B."""
        return np.hstack([self.xb, self.zb])

    def unstack(self):
        """Return the two source matrices (A with X,Y columns; B with X,Z)."""
        return self.a_block, self.b_block


def stack(dataset_a, dataset_b, spec, columns_a=None, columns_b=None):
    """Stack file A (X, Y) over file B (X, Z).

    ``dataset_a`` / ``dataset_b`` are 2-D arrays in canonical block order, or in
    the order given by ``columns_a`` / ``columns_b`` (which must then name
    exactly the expected columns).
    """
    a = _as_matrix(dataset_a, "A")
    b = _as_matrix(dataset_b, "B")
    a = _canonical(a, spec, "A", columns_a)
    b = _canonical(b, spec, "B", columns_b)
    n_a, n_b = a.shape[0], b.shape[0]
    if n_a == 0 or n_b == 0:
        raise DataError("empty dataset")
    values = np.full((n_a + n_b, spec.d), np.nan)
    values[:n_a, spec.sx] = a[:, spec.sx]
    values[:n_a, spec.sy] = a[:, len(spec.x) :]
    values[n_a:, spec.sx] = b[:, spec.sx]
    values[n_a:, spec.sz] = b[:, len(spec.x) :]
    return StackedDataset(values, n_a, n_b, spec)


def _as_matrix(m, tag):
    m = np.asarray(m, dtype=float)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise DataError(f"dataset {tag} must be a 2-D matrix")
    return m


def _canonical(m, spec, tag, columns):
    expected = spec.columns_for(tag)
    if columns is None:
        if m.shape[1] != len(expected):
            raise DataError(
                f"dataset {tag} has {m.shape[1]} columns, expected {len(expected)} {list(expected)}"
            )
        return m
    columns = tuple(columns)
    if sorted(columns) != sorted(expected) or len(columns) != m.shape[1]:
        raise DataError(f"dataset {tag} columns {list(columns)} do not match {list(expected)}")
    order = [columns.index(c) for c in expected]
    return m[:, order]


def load_csv(path, spec, dataset_tag, ignore=()):
    """Parse a numeric CSV for file A or B into canonical column order.

    Columns listed in ``ignore`` (e.g. a group label) are skipped. Every other
    header entry must belong to the tagged dataset's blocks.
    """
    path = Path(path)
    expected = spec.columns_for(dataset_tag)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        keep = [h for h in header if h not in ignore]
        missing = [c for c in expected if c not in keep]
        extra = [c for c in keep if c not in expected]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}", column=missing[0])
        if extra:
            raise DataError(f"{path}: unexpected column(s) {extra}", column=extra[0])
        if len(set(keep)) != len(keep):
            raise DataError(f"{path}: duplicated header entries")
        idx = [header.index(c) for c in expected]
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(header):
                raise DataError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}", row=lineno
                )
            row = []
            for j in idx:
                row.append(_parse_cell(rec[j], path, lineno, header[j]))
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.array(rows, dtype=float)


def _parse_cell(text, path, lineno, column):
    try:
        v = float(text.strip())
    except ValueError:
        raise DataError(
            f"{path}:{lineno}: cannot parse {text!r} in column {column!r}", row=lineno, column=column
        ) from None
    if not math.isfinite(v):
        raise DataError(
            f"{path}:{lineno}: non-finite value {text!r} in column {column!r}", row=lineno, column=column
        )
    return v


def load_column(path, column):
    """Read one column of a CSV as strings (e.g. a group label)."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if column not in (reader.fieldnames or []):
            raise DataError(f"{path}: no column {column!r}", column=column)
        return [rec[column] for rec in reader if any(v.strip() for v in rec.values() if v)]


@dataclass(frozen=True, eq=False)
class ImputedDataset:
    """Completed n x d matrix with per-row provenance.

    ``tags`` holds one tag per row for the imputed block (A rows: Z, B rows: Y);
    ``donor`` is the stacked row index of the donor for nearest-neighbour rows
    and -1 otherwise; ``component`` is the mixture component drawn for
    parametric mixture imputation and -1 otherwise.
    """

    values: np.ndarray
    n_a: int
    n_b: int
    spec: BlockSpec
    tags: tuple[str, ...]
    donor: np.ndarray
    component: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.shape != (self.n_a + self.n_b, self.spec.d):
            raise DataError("imputed values have the wrong shape")
        if not np.all(np.isfinite(values)):
            raise DataError("imputed dataset is not fully observed")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        donor = np.asarray(self.donor, dtype=np.int64)
        object.__setattr__(self, "donor", donor)
        if self.component is None:
            object.__setattr__(self, "component", np.full(self.n, -1, dtype=np.int64))
        for i, t in enumerate(self.tags):
            if t == NN:
                lo, hi = (self.n_a, self.n) if i < self.n_a else (0, self.n_a)
                if not lo <= donor[i] < hi:
                    raise DataError(f"row {i}: donor {donor[i]} outside the opposite dataset")

    @property
    def n(self):
        return self.n_a + self.n_b

    @property
    def mask(self):
        return block_mask(self.n_a, self.n_b, self.spec)

    def cell_provenance(self):
        """Per-cell tag matrix (n x d) of 'observed' / 'nn' / 'parametric'."""
        out = np.full((self.n, self.spec.d), OBSERVED, dtype=object)
        out[: self.n_a, self.spec.sz] = np.array(self.tags[: self.n_a], dtype=object)[:, None]
        out[self.n_a :, self.spec.sy] = np.array(self.tags[self.n_a :], dtype=object)[:, None]
        return out


def emit_csv(imputed, path):
    """Write the completed table and its provenance sidecar.

    The sidecar (``<stem>.provenance.csv``) has one line per row with columns
    ``row, column, tag, donor_row, component``; ``column`` lists the imputed columns
    joined by ``|``.
    """
    path = Path(path)
    side = provenance_path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(imputed.spec.columns)
            for row in imputed.values:
                w.writerow([format(v, ".17g") for v in row])
        with side.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "column", "tag", "donor_row", "component"])
            ycols = "|".join(imputed.spec.y)
            zcols = "|".join(imputed.spec.z)
            for i, tag in enumerate(imputed.tags):
                cols = zcols if i < imputed.n_a else ycols
                donor = "" if imputed.donor[i] < 0 else str(int(imputed.donor[i]))
                comp = "" if imputed.component[i] < 0 else str(int(imputed.component[i]))
                w.writerow([i, cols, tag, donor, comp])
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
    return path, side


def provenance_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".provenance.csv")


def load_imputed(path, spec):
    """Re-load a table written by :func:`emit_csv`."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != spec.columns:
            raise DataError(f"{path}: header {list(header)} != {list(spec.columns)}")
        values = np.array([[float(v) for v in rec] for rec in reader if rec], dtype=float)
    tags, donor, comp = [], [], []
    n_a = 0
    zcols = "|".join(spec.z)
    with provenance_path(path).open(newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            tags.append(rec["tag"])
            donor.append(int(rec["donor_row"]) if rec["donor_row"] else -1)
            comp.append(int(rec["component"]) if rec.get("component") else -1)
            if rec["column"] == zcols:
                n_a += 1
    return ImputedDataset(
        values, n_a, len(tags) - n_a, spec, tuple(tags), np.array(donor), np.array(comp)
    )


def fixture_paths():
    """Paths of the bundled 60-row example (30 rows per file; columns x1, y1 / x1, z1)."""
    base = Path(__file__).resolve().parent / "data"
    return base / "fixture_a.csv", base / "fixture_b.csv"
