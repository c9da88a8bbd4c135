"""Dataset ingestion, validation, group stratification and design matrices.

A dataset holds one row per individual: treatment indicator ``d``, period
indicator ``t`` (0 = pre-reform, 1 = post-reform), an inclusion weight ``w``,
``K`` already-encoded covariates, an ``H``-month outcome series and, for
treated individuals, a record of the programme they attended.

The allocation system ``s`` is never read from data on its own: it is
``"m"`` (mandatory) in the pre-reform period and ``"v"`` (voucher) after it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import GroupError, LoadError, MediatorError

PROGRAMME_TYPES = (
    "practice_firm",
    "short_training",
    "long_training",
    "retraining",
    "other",
)
DURATION_CATEGORIES = ("<6m", "6-12m", "12-24m", ">24m")
# First day of the 6-12m, 12-24m and >24m categories.
DURATION_BOUNDARIES = (183, 366, 731)
REFERENCE_CATEGORY = ">24m"
MEDIATOR_COLUMN_NAMES = (
    "dur_lt6m",
    "dur_6_12m",
    "dur_12_24m",
    "days_x_lt6m",
    "days_x_6_12m",
    "days_x_12_24m",
)
DEFAULT_ACTUAL_CAP = 1826


def duration_category_index(days) -> np.ndarray:
    """Map planned durations in days to category indices 0..3."""
    return np.searchsorted(DURATION_BOUNDARIES, np.asarray(days), side="right")


def duration_category(days: int) -> str:
    return DURATION_CATEGORIES[int(duration_category_index(days))]


@dataclass(frozen=True)
class GroupKey:
    """Cell identifier ``(d, t, s)``."""

    d: int
    t: int
    s: str

    def __post_init__(self):
        if self.d not in (0, 1) or self.t not in (0, 1) or self.s not in ("m", "v"):
            raise GroupError(f"invalid group key {self!r}")

    @property
    def observable(self) -> bool:
        return self.s == ("v" if self.t == 1 else "m")

    @property
    def label(self) -> str:
        return f"{self.d}{self.t}{self.s}"

    @classmethod
    def parse(cls, label: str) -> "GroupKey":
        label = label.strip().strip("()").replace(",", "").replace(" ", "")
        if len(label) != 3:
            raise GroupError(f"cannot parse group key {label!r}")
        return cls(int(label[0]), int(label[1]), label[2])

    def __str__(self):
        return f"({self.d},{self.t},{self.s})"


TREATED_PRE = GroupKey(1, 0, "m")
CONTROL_PRE = GroupKey(0, 0, "m")
TREATED_POST = GroupKey(1, 1, "v")
CONTROL_POST = GroupKey(0, 1, "v")
OBSERVABLE_CELLS = (TREATED_PRE, CONTROL_PRE, TREATED_POST, CONTROL_POST)


@dataclass(frozen=True)
class MediatorRecord:
    programme_type: str
    planned_duration_days: int
    actual_duration_days: int

    @property
    def duration_category(self) -> str:
        return duration_category(self.planned_duration_days)


@dataclass(frozen=True)
class Unit:
    id: str
    d: int
    t: int
    covariates: tuple
    outcomes: tuple
    inclusion_weight: float = 1.0
    mediator: MediatorRecord | None = None
    history: tuple | None = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented, immutable collection of units.

    ``programme_type`` holds ``""`` and ``planned_days``/``actual_days`` hold 0
    for units without a mediator record.
    """

    ids: np.ndarray
    d: np.ndarray
    t: np.ndarray
    w: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    covariate_names: tuple
    programme_type: np.ndarray | None = None
    planned_days: np.ndarray | None = None
    actual_days: np.ndarray | None = None
    history: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("ids", "d", "t", "w", "X", "Y", "programme_type",
                     "planned_days", "actual_days", "history"):
            arr = getattr(self, name)
            if arr is not None:
                arr.flags.writeable = False

    @property
    def N(self) -> int:
        return len(self.ids)

    @property
    def K(self) -> int:
        return self.X.shape[1]

    @property
    def H(self) -> int:
        return self.Y.shape[1]

    @property
    def s(self) -> np.ndarray:
        return np.where(self.t == 1, "v", "m")

    @property
    def has_mediator(self) -> np.ndarray:
        if self.programme_type is None:
            return np.zeros(self.N, dtype=bool)
        return self.planned_days > 0

    def unit(self, i: int) -> Unit:
        med = None
        if self.has_mediator[i]:
            med = MediatorRecord(str(self.programme_type[i]),
                                 int(self.planned_days[i]),
                                 int(self.actual_days[i]))
        hist = None if self.history is None else tuple(self.history[i])
        return Unit(str(self.ids[i]), int(self.d[i]), int(self.t[i]),
                    tuple(self.X[i]), tuple(self.Y[i]), float(self.w[i]), med, hist)

    @property
    def units(self) -> list[Unit]:
        return [self.unit(i) for i in range(self.N)]

    def take(self, idx) -> "Dataset":
        """Row subset (duplicates allowed, as in bootstrap resamples)."""
        idx = np.asarray(idx)
        opt = lambda a: None if a is None else a[idx]
        return Dataset(self.ids[idx], self.d[idx], self.t[idx], self.w[idx],
                       self.X[idx], self.Y[idx], self.covariate_names,
                       opt(self.programme_type), opt(self.planned_days),
                       opt(self.actual_days), opt(self.history), dict(self.meta))

    def with_weights(self, w) -> "Dataset":
        return Dataset(self.ids, self.d, self.t, np.asarray(w, dtype=float), self.X,
                       self.Y, self.covariate_names, self.programme_type,
                       self.planned_days, self.actual_days, self.history,
                       dict(self.meta))

    def with_outcomes(self, Y) -> "Dataset":
        return Dataset(self.ids, self.d, self.t, self.w, self.X,
                       np.asarray(Y, dtype=float), self.covariate_names,
                       self.programme_type, self.planned_days, self.actual_days,
                       self.history, dict(self.meta))

    def select_covariates(self, names: Sequence[str]) -> "Dataset":
        pos = [self.covariate_names.index(n) for n in names]
        return Dataset(self.ids, self.d, self.t, self.w, self.X[:, pos], self.Y,
                       tuple(names), self.programme_type, self.planned_days,
                       self.actual_days, self.history, dict(self.meta))

    @classmethod
    def from_units(cls, units: Iterable[Unit], covariate_names=None,
                   validate: bool = True, require_cells: bool = False) -> "Dataset":
        units = list(units)
        if not units:
            raise LoadError("dataset has no units")
        K = len(units[0].covariates)
        names = tuple(covariate_names or (f"x{k}" for k in range(K)))
        any_med = any(u.mediator is not None for u in units)
        any_hist = any(u.history is not None for u in units)
        ptype = planned = actual = None
        if any_med:
            ptype = np.array([u.mediator.programme_type if u.mediator else ""
                              for u in units], dtype=object)
            planned = np.array([u.mediator.planned_duration_days if u.mediator else 0
                                for u in units], dtype=np.int64)
            actual = np.array([u.mediator.actual_duration_days if u.mediator else 0
                               for u in units], dtype=np.int64)
        ds = cls(
            ids=np.array([str(u.id) for u in units], dtype=object),
            d=np.array([u.d for u in units], dtype=np.int64),
            t=np.array([u.t for u in units], dtype=np.int64),
            w=np.array([u.inclusion_weight for u in units], dtype=float),
            X=np.array([u.covariates for u in units], dtype=float).reshape(len(units), K),
            Y=np.array([u.outcomes for u in units], dtype=float).reshape(len(units), -1),
            covariate_names=names,
            programme_type=ptype,
            planned_days=planned,
            actual_days=actual,
            history=(np.array([u.history for u in units], dtype=float)
                     if any_hist else None),
        )
        if validate:
            validate_dataset(ds, require_cells=require_cells)
        return ds


def validate_dataset(ds: Dataset, require_cells: bool = True, unique_ids: bool = True,
                     actual_cap: int = DEFAULT_ACTUAL_CAP) -> None:
    """Check every unit and dataset invariant; raise ``LoadError`` on the first breach.

    Row numbers in messages are 1-based data rows.
    """
    n = ds.N
    if ds.X.shape[0] != n or ds.Y.shape[0] != n or len(ds.d) != n or len(ds.t) != n:
        raise LoadError("column lengths disagree")
    if len(ds.covariate_names) != ds.K:
        raise LoadError("covariate_names length differs from covariate dimension")

    def first_bad(mask):
        return int(np.flatnonzero(mask)[0]) + 1

    bad = ~np.isin(ds.d, (0, 1))
    if bad.any():
        raise LoadError(f"invalid treatment indicator, row {first_bad(bad)} (column 'd')")
    bad = ~np.isin(ds.t, (0, 1))
    if bad.any():
        raise LoadError(f"invalid period indicator, row {first_bad(bad)} (column 't')")
    bad = ~np.isfinite(ds.w) | (ds.w <= 0)
    if bad.any():
        raise LoadError(f"inclusion weight must be positive and finite, row {first_bad(bad)} "
                        "(column 'w')")
    for k, name in enumerate(ds.covariate_names):
        bad = ~np.isfinite(ds.X[:, k])
        if bad.any():
            raise LoadError(f"non-finite value, row {first_bad(bad)} (column 'x_{name}')")
    bad_rows = ~np.isfinite(ds.Y).all(axis=1)
    if bad_rows.any():
        r = first_bad(bad_rows)
        h = int(np.flatnonzero(~np.isfinite(ds.Y[r - 1]))[0])
        raise LoadError(f"non-finite value, row {r} (column 'y_{h}')")
    if ds.history is not None and not np.isfinite(ds.history).all():
        r = first_bad(~np.isfinite(ds.history).all(axis=1))
        raise LoadError(f"non-finite value, row {r} (history column)")
    if ds.programme_type is not None:
        med = ds.has_mediator
        bad = med & (ds.d == 0)
        if bad.any():
            raise LoadError(f"mediator present for non-treated unit, row {first_bad(bad)} "
                            "(column 'c_type')")
        bad = med & ~np.isin(ds.programme_type, PROGRAMME_TYPES)
        if bad.any():
            raise LoadError(f"unknown programme type, row {first_bad(bad)} (column 'c_type')")
        bad = med & (ds.actual_days <= 0)
        if bad.any():
            raise LoadError(f"actual duration must be positive, row {first_bad(bad)} "
                            "(column 'c_actual')")
        bad = med & (ds.actual_days > actual_cap)
        if bad.any():
            raise LoadError(f"actual duration exceeds cap of {actual_cap} days, row "
                            f"{first_bad(bad)} (column 'c_actual')")
        bad = ~med & ((ds.programme_type != "") | (ds.actual_days != 0))
        if bad.any():
            raise LoadError(f"incomplete mediator record, row {first_bad(bad)} "
                            "(column 'c_planned')")
    if unique_ids:
        _, first, counts = np.unique(ds.ids.astype(str), return_index=True,
                                     return_counts=True)
        if (counts > 1).any():
            dup = ds.ids[first[counts > 1][0]]
            rows = np.flatnonzero(ds.ids.astype(str) == str(dup))
            raise LoadError(f"duplicate id {dup!r}, row {int(rows[1]) + 1} (column 'id')")
    if require_cells:
        for g in OBSERVABLE_CELLS:
            if not ((ds.d == g.d) & (ds.t == g.t)).any():
                raise LoadError(f"empty group cell {g}")


def group_members(ds: Dataset, g: GroupKey) -> np.ndarray:
    """Indices of the units in cell ``g``."""
    if not g.observable:
        raise GroupError(f"counterfactual cell has no observations: {g}")
    return np.flatnonzero((ds.d == g.d) & (ds.t == g.t))


def group_mask(ds: Dataset, g: GroupKey) -> np.ndarray:
    if not g.observable:
        raise GroupError(f"counterfactual cell has no observations: {g}")
    return (ds.d == g.d) & (ds.t == g.t)


def mediator_columns(planned_days) -> np.ndarray:
    """Three category dummies (reference ``>24m``) and their interactions with days."""
    days = np.asarray(planned_days, dtype=float)
    cat = duration_category_index(days)
    dummies = np.stack([(cat == k).astype(float) for k in range(3)], axis=1)
    return np.hstack([dummies, dummies * days[:, None]])


def design_matrix(ds: Dataset, include_mediator_moments: bool = False,
                  rows=None) -> np.ndarray:
    """Constant, covariates and optionally the mediator moment columns."""
    idx = np.arange(ds.N) if rows is None else np.asarray(rows)
    parts = [np.ones((len(idx), 1)), ds.X[idx]]
    if include_mediator_moments:
        has = ds.has_mediator[idx]
        if not has.all():
            bad = ds.ids[idx[np.flatnonzero(~has)[0]]]
            raise MediatorError(f"mediator requested but missing for unit {bad!r}")
        parts.append(mediator_columns(ds.planned_days[idx]))
    return np.hstack(parts)


def design_column_names(ds: Dataset, include_mediator_moments: bool = False) -> list[str]:
    names = ["const", *ds.covariate_names]
    if include_mediator_moments:
        names += list(MEDIATOR_COLUMN_NAMES)
    return names


# ---------------------------------------------------------------------------
# CSV input / output


def _parse_float_column(values: Sequence[str], column: str) -> np.ndarray:
    try:
        out = np.array(values, dtype=float)
    except ValueError:
        for r, v in enumerate(values, start=1):
            try:
                float(v)
            except ValueError:
                raise LoadError(f"unparseable value {v!r}, row {r} (column '{column}')") from None
        raise
    bad = ~np.isfinite(out)
    if bad.any():
        raise LoadError(f"non-finite value, row {int(np.flatnonzero(bad)[0]) + 1} "
                        f"(column '{column}')")
    return out


def _parse_int_column(values: Sequence[str], column: str, allow_empty=False) -> np.ndarray:
    out = np.zeros(len(values), dtype=np.int64)
    for r, v in enumerate(values):
        if v == "" and allow_empty:
            continue
        try:
            f = float(v)
        except ValueError:
            f = math.nan
        if not math.isfinite(f) or f != int(f):
            label = {"d": "invalid treatment indicator", "t": "invalid period indicator"}
            msg = label.get(column, f"invalid integer {v!r}")
            raise LoadError(f"{msg}, row {r + 1} (column '{column}')")
        out[r] = int(f)
    return out


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise LoadError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise LoadError(f"empty file: {path}") from None
        rows = []
        for r, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise LoadError(f"expected {len(header)} fields, got {len(row)}, row {r}")
            rows.append([c.strip() for c in row])
    return header, rows


_FIXED_COLUMNS = ("id", "d", "t", "w", "s", "c_type", "c_planned", "c_actual")


def _build(header, columns: dict, n: int, y_cols, hist_cols, actual_cap,
           require_cells, source="row") -> Dataset:
    for req in ("id", "d", "t", "w"):
        if req not in columns:
            raise LoadError(f"missing required column '{req}'")
    x_cols = [h for h in header if h.startswith("x_")]
    known = set(_FIXED_COLUMNS) | set(x_cols) | {name for name, _ in y_cols}
    known |= {name for name, _ in hist_cols}
    for h in header:
        if h not in known:
            raise LoadError(f"unrecognized column '{h}' (covariates need the 'x_' prefix)")
    d = _parse_int_column(columns["d"], "d")
    t = _parse_int_column(columns["t"], "t")
    bad = ~np.isin(d, (0, 1))
    if bad.any():
        raise LoadError(f"invalid treatment indicator, row {int(np.flatnonzero(bad)[0]) + 1} "
                        "(column 'd')")
    bad = ~np.isin(t, (0, 1))
    if bad.any():
        raise LoadError(f"invalid period indicator, row {int(np.flatnonzero(bad)[0]) + 1} "
                        "(column 't')")
    if "s" in columns:
        expected = np.where(t == 1, "v", "m")
        bad = np.array(columns["s"], dtype=object) != expected
        if bad.any():
            raise LoadError("system indicator conflicts with period, row "
                            f"{int(np.flatnonzero(bad)[0]) + 1} (column 's')")
    w = _parse_float_column(columns["w"], "w")
    X = (np.column_stack([_parse_float_column(columns[c], c) for c in x_cols])
         if x_cols else np.zeros((n, 0)))
    Y = np.column_stack([_parse_float_column(col, name) for name, col in y_cols])
    history = (np.column_stack([_parse_float_column(col, name) for name, col in hist_cols])
               if hist_cols else None)
    ptype = planned = actual = None
    med_cols = [c for c in ("c_type", "c_planned", "c_actual") if c in columns]
    if med_cols:
        if len(med_cols) != 3:
            missing = {"c_type", "c_planned", "c_actual"} - set(med_cols)
            raise LoadError(f"missing required column '{sorted(missing)[0]}'")
        ptype = np.array(columns["c_type"], dtype=object)
        planned = _parse_int_column(columns["c_planned"], "c_planned", allow_empty=True)
        actual = _parse_int_column(columns["c_actual"], "c_actual", allow_empty=True)
        present = (ptype != "") | (planned != 0) | (actual != 0)
        bad = present & (d == 0)
        if bad.any():
            raise LoadError(f"mediator present for non-treated unit, row "
                            f"{int(np.flatnonzero(bad)[0]) + 1} (column 'c_type')")
        bad = present & (planned <= 0)
        if bad.any():
            raise LoadError(f"planned duration must be positive, row "
                            f"{int(np.flatnonzero(bad)[0]) + 1} (column 'c_planned')")
    ds = Dataset(
        ids=np.array(columns["id"], dtype=object),
        d=d, t=t, w=w, X=X, Y=Y,
        covariate_names=tuple(c[2:] for c in x_cols),
        programme_type=ptype, planned_days=planned, actual_days=actual,
        history=history,
    )
    validate_dataset(ds, require_cells=require_cells, actual_cap=actual_cap)
    return ds


def _numbered(header, prefix):
    cols = [h for h in header if h.startswith(prefix) and h[len(prefix):].lstrip("-").isdigit()]
    return sorted(cols, key=lambda c: int(c[len(prefix):]))


def load_dataset(path, format: str | None = None, actual_cap: int = DEFAULT_ACTUAL_CAP,
                 require_cells: bool = True) -> Dataset:
    """Read a wide or long CSV file into a validated :class:`Dataset`.

    With ``format=None`` the layout is inferred from the presence of a
    ``month`` column.
    """
    header, rows = _read_rows(path)
    if len(set(header)) != len(header):
        raise LoadError("duplicate column names in header")
    if format is None:
        format = "long" if "month" in header else "wide"
    if not rows:
        raise LoadError("file has no data rows")
    columns = {h: [r[j] for r in rows] for j, h in enumerate(header)}
    if format == "wide":
        y_names = _numbered(header, "y_")
        if not y_names:
            raise LoadError("missing required column 'y_0'")
        if y_names != [f"y_{h}" for h in range(len(y_names))]:
            raise LoadError("outcome columns must be y_0..y_{H-1} without gaps")
        hist_names = _numbered(header, "h_")
        return _build(header, columns, len(rows), [(c, columns[c]) for c in y_names],
                      [(c, columns[c]) for c in hist_names], actual_cap, require_cells)
    if format != "long":
        raise LoadError(f"unknown format {format!r}")
    for req in ("month", "y"):
        if req not in columns:
            raise LoadError(f"missing required column '{req}'")
    months = _parse_int_column(columns["month"], "month")
    yvals = _parse_float_column(columns["y"], "y")
    static = [h for h in header if h not in ("month", "y")]
    order: list[str] = []
    first_row: dict[str, int] = {}
    cells: dict[tuple[str, int], float] = {}
    for r, uid in enumerate(columns["id"]):
        if uid not in first_row:
            first_row[uid] = r
            order.append(uid)
        else:
            f = first_row[uid]
            for h in static:
                if columns[h][r] != columns[h][f]:
                    raise LoadError(f"value varies within unit {uid!r}, row {r + 1} "
                                    f"(column '{h}')")
        key = (uid, int(months[r]))
        if key in cells:
            raise LoadError(f"duplicate (id, month) pair, row {r + 1} (column 'month')")
        cells[key] = yvals[r]
    H = int(months.max()) + 1
    if months.min() < 0:
        raise LoadError("negative month index")
    Y = np.empty((len(order), H))
    for i, uid in enumerate(order):
        for h in range(H):
            try:
                Y[i, h] = cells[(uid, h)]
            except KeyError:
                raise LoadError(f"missing month {h} for unit {uid!r} (column 'month')") from None
    wide_cols = {h: [columns[h][first_row[u]] for u in order] for h in static}
    return _build(static, wide_cols, len(order), [(f"y_{h}", Y[:, h]) for h in range(H)],
                  [], actual_cap, require_cells)


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_dataset(ds: Dataset, path, format: str = "wide") -> None:
    """Write ``ds`` so that :func:`load_dataset` reproduces it bit-exactly."""
    med = ds.programme_type is not None
    head = ["id", "d", "t", "w"]
    if med:
        head += ["c_type", "c_planned", "c_actual"]
    head += [f"x_{n}" for n in ds.covariate_names]
    if format == "wide" and ds.history is not None:
        head += [f"h_{j}" for j in range(ds.history.shape[1])]
    has = ds.has_mediator

    def static(i):
        row = [str(ds.ids[i]), str(int(ds.d[i])), str(int(ds.t[i])), _fmt(ds.w[i])]
        if med:
            row += ([str(ds.programme_type[i]), str(int(ds.planned_days[i])),
                     str(int(ds.actual_days[i]))] if has[i] else ["", "", ""])
        row += [_fmt(v) for v in ds.X[i]]
        return row

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if format == "wide":
            writer.writerow(head + [f"y_{h}" for h in range(ds.H)])
            for i in range(ds.N):
                hist = [] if ds.history is None else [_fmt(v) for v in ds.history[i]]
                writer.writerow(static(i) + hist + [_fmt(v) for v in ds.Y[i]])
        elif format == "long":
            writer.writerow(head + ["month", "y"])
            for i in range(ds.N):
                base = static(i)
                for h in range(ds.H):
                    writer.writerow(base + [str(h), _fmt(ds.Y[i, h])])
        else:
            raise ValueError(f"unknown format {format!r}")


def check_mediator_overlap(ds: Dataset, target: GroupKey = TREATED_POST,
                           source: GroupKey = TREATED_PRE) -> None:
    """Every duration category seen in ``target`` must also occur in ``source``."""
    from .errors import SupportError

    for g in (target, source):
        rows = group_members(ds, g)
        if not ds.has_mediator[rows].all():
            bad = ds.ids[rows[np.flatnonzero(~ds.has_mediator[rows])[0]]]
            raise MediatorError(f"mediator requested but missing for unit {bad!r}")
    cat_t = set(duration_category_index(ds.planned_days[group_members(ds, target)]).tolist())
    cat_s = set(duration_category_index(ds.planned_days[group_members(ds, source)]).tolist())
    missing = sorted(cat_t - cat_s)
    if missing:
        names = [DURATION_CATEGORIES[k] for k in missing]
        rows = group_members(ds, target)
        cats = duration_category_index(ds.planned_days[rows])
        units = [str(u) for u in ds.ids[rows[np.isin(cats, missing)]]]
        raise SupportError(
            f"duration categories {names} occur in {target} but not in {source}", units=units)
