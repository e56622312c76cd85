"""CSV ingestion, design-matrix construction, offsets and result writers.

All CSV files use ``,`` separators, ``.`` decimals, UTF-8 and LF line ends.
Floats are written with :func:`repr`, which round-trips exactly, so outputs
are byte-identical across runs with the same inputs.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pln import check_design

__all__ = [
    "CountTable",
    "CovariateTable",
    "Design",
    "CsvFormatError",
    "load_counts",
    "write_counts",
    "load_covariates",
    "write_covariates",
    "build_design",
    "load_matrix",
    "write_matrix",
    "make_offsets",
    "write_edges",
    "write_dot",
    "write_curve",
    "write_json",
    "OFFSET_MODES",
]

OFFSET_MODES = ("zero", "provided", "log-row-total", "log-column-total")
TYPE_SUFFIXES = {"num": "numeric", "ord": "ordinal", "cat": "categorical"}


class CsvFormatError(ValueError):
    pass


def _fmt(v):
    return repr(float(v))


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh)]
    rows = [r for r in rows if r]
    if len(rows) < 2:
        raise CsvFormatError(f"{path}: need a header row and at least one data row")
    width = len(rows[0])
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != width:
            raise CsvFormatError(
                f"{path}: line {i} has {len(r)} fields, header has {width}"
            )
    return rows[0], rows[1:]


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        w.writerows(rows)


@dataclass
class CountTable:
    counts: np.ndarray
    sites: list
    species: list
    dropped: list = field(default_factory=list)


def load_counts(path, drop_zero_columns=True):
    """Read a sites-by-species integer table.

    The header row holds species names (its first cell labels the site
    column) and the first column holds site ids.  Species whose counts are all
    zero are reported with a warning and, by default, dropped.
    """
    header, rows = _read_rows(path)
    species = header[1:]
    if len(set(species)) != len(species):
        raise CsvFormatError(f"{path}: duplicated species names")
    sites = [r[0] for r in rows]
    y = np.empty((len(rows), len(species)), dtype=np.int64)
    for i, r in enumerate(rows):
        for j, cell in enumerate(r[1:]):
            try:
                v = int(cell.strip())
            except ValueError:
                raise CsvFormatError(
                    f"{path}: non-integer count {cell!r} at site {sites[i]!r} "
                    f"(line {i + 2}), species {species[j]!r} (column {j + 2})"
                ) from None
            if v < 0:
                raise CsvFormatError(
                    f"{path}: negative count {v} at site {sites[i]!r}, species {species[j]!r}"
                )
            y[i, j] = v
    zero = [species[j] for j in np.flatnonzero(y.sum(axis=0) == 0)]
    if zero:
        warnings.warn(
            f"degenerate all-zero species columns: {', '.join(zero)}"
            + (" (dropped)" if drop_zero_columns else ""),
            RuntimeWarning, stacklevel=2,
        )
        if drop_zero_columns:
            keep = y.sum(axis=0) > 0
            y = y[:, keep]
            species = [s for s, k in zip(species, keep) if k]
    return CountTable(counts=y, sites=sites, species=species, dropped=zero if drop_zero_columns else [])


def write_counts(path, counts, sites=None, species=None):
    counts = np.asarray(counts)
    n, p = counts.shape
    sites = sites or [f"site{i + 1}" for i in range(n)]
    species = species or [f"sp{j + 1}" for j in range(p)]
    _write_rows(path, ["site"] + list(species),
                [[s] + [str(int(v)) for v in row] for s, row in zip(sites, counts)])


@dataclass
class CovariateTable:
    sites: list
    columns: dict  # name -> list of raw strings
    types: dict  # name -> "numeric" | "ordinal" | "categorical"


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_covariates(path):
    """Read a covariate table; the first column holds site ids.

    A header ``name:num``, ``name:ord`` or ``name:cat`` fixes the column type.
    Without a suffix, a column whose cells all parse as numbers is numeric and
    any other column is categorical.
    """
    header, rows = _read_rows(path)
    columns, types = {}, {}
    for j, raw in enumerate(header[1:], start=1):
        name, _, suffix = raw.partition(":")
        if suffix and suffix not in TYPE_SUFFIXES:
            raise CsvFormatError(f"{path}: unknown type suffix {suffix!r} in {raw!r}")
        if name in columns:
            raise CsvFormatError(f"{path}: duplicated covariate {name!r}")
        values = [r[j].strip() for r in rows]
        if suffix:
            kind = TYPE_SUFFIXES[suffix]
        else:
            kind = "numeric" if all(_is_number(v) for v in values) else "categorical"
        if kind == "numeric" and not all(_is_number(v) for v in values):
            bad = next(v for v in values if not _is_number(v))
            raise CsvFormatError(f"{path}: numeric column {name!r} has value {bad!r}")
        columns[name] = values
        types[name] = kind
    return CovariateTable(sites=[r[0] for r in rows], columns=columns, types=types)


def write_covariates(path, x, names, sites=None):
    """Write numeric covariate columns with ``:num`` headers (intercept skipped)."""
    x = np.asarray(x, dtype=float)
    sites = sites or [f"site{i + 1}" for i in range(x.shape[0])]
    keep = [j for j, nm in enumerate(names) if nm != "intercept"]
    _write_rows(path, ["site"] + [f"{names[j]}:num" for j in keep],
                [[s] + [_fmt(x[i, j]) for j in keep] for i, s in enumerate(sites)])


@dataclass
class Design:
    x: np.ndarray
    names: list
    manifest: list  # one dict per column: name, source, type, level / reference


def _ordinal_codes(values):
    if all(_is_number(v) for v in values):
        return np.array([float(v) for v in values])
    levels = sorted(set(values))
    return np.array([levels.index(v) + 1.0 for v in values])


def build_design(table, selection=(), sites=None):
    """Intercept plus the selected covariates in reference coding.

    Numeric columns enter as they are, ordinal columns as numeric codes
    (their values, or ranks of sorted labels), and a categorical column with
    ``k`` levels as ``k - 1`` indicators against its first level in sorted
    order.  ``sites`` reorders the rows to match a count table.  Raises
    ``RankDeficientDesignError`` listing aliased columns.
    """
    n = len(table.sites) if table is not None else len(sites)
    order = np.arange(n)
    if table is not None and sites is not None:
        index = {s: i for i, s in enumerate(table.sites)}
        missing = [s for s in sites if s not in index]
        if missing:
            raise CsvFormatError(f"sites missing from covariates: {', '.join(missing[:5])}")
        order = np.array([index[s] for s in sites])
        n = len(sites)
    cols = [np.ones(n)]
    names = ["intercept"]
    manifest = [{"name": "intercept", "source": None, "type": "intercept"}]
    for name in selection:
        if table is None or name not in table.columns:
            raise CsvFormatError(f"covariate {name!r} not found")
        values = [table.columns[name][i] for i in order]
        kind = table.types[name]
        if kind == "numeric":
            cols.append(np.array([float(v) for v in values]))
            names.append(name)
            manifest.append({"name": name, "source": name, "type": kind})
        elif kind == "ordinal":
            cols.append(_ordinal_codes(values))
            names.append(name)
            manifest.append({"name": name, "source": name, "type": kind})
        else:
            levels = sorted(set(values))
            for lev in levels[1:]:
                col = f"{name}={lev}"
                cols.append(np.array([v == lev for v in values], dtype=float))
                names.append(col)
                manifest.append({"name": col, "source": name, "type": kind,
                                 "level": lev, "reference": levels[0]})
    x = np.column_stack(cols)
    check_design(x, names)
    return Design(x=x, names=names, manifest=manifest)


def load_matrix(path):
    """Square matrix with row and column labels (as written by :func:`write_matrix`)."""
    header, rows = _read_rows(path)
    labels = header[1:]
    if [r[0] for r in rows] != labels:
        raise CsvFormatError(f"{path}: row labels differ from column labels")
    try:
        a = np.array([[float(c) for c in r[1:]] for r in rows])
    except ValueError as exc:
        raise CsvFormatError(f"{path}: {exc}") from None
    return a, labels


def write_matrix(path, a, labels):
    a = np.asarray(a, dtype=float)
    _write_rows(path, [""] + list(labels),
                [[lab] + [_fmt(v) for v in row] for lab, row in zip(labels, a)])


def make_offsets(mode, counts, path=None, sites=None, species=None):
    """Offsets for one of :data:`OFFSET_MODES`.

    ``log-row-total`` uses the log of each site's total count, and
    ``log-column-total`` the log of each species' total count.  ``provided``
    reads an ``n x p`` table laid out like the count file.
    """
    y = np.asarray(counts, dtype=float)
    if mode == "zero":
        return np.zeros_like(y)
    if mode == "log-row-total":
        tot = y.sum(axis=1)
        if np.any(tot <= 0):
            raise ValueError("log-row-total offsets need every site total > 0")
        return np.repeat(np.log(tot)[:, None], y.shape[1], axis=1)
    if mode == "log-column-total":
        tot = y.sum(axis=0)
        if np.any(tot <= 0):
            raise ValueError("log-column-total offsets need every species total > 0")
        return np.repeat(np.log(tot)[None, :], y.shape[0], axis=0)
    if mode == "provided":
        if path is None:
            raise ValueError("offset mode 'provided' needs an offsets file")
        header, rows = _read_rows(path)
        col = {name: j for j, name in enumerate(header[1:])}
        row = {r[0]: i for i, r in enumerate(rows)}
        species = species or header[1:]
        sites = sites or [r[0] for r in rows]
        try:
            o = np.array([[float(rows[row[s]][col[sp] + 1]) for sp in species] for s in sites])
        except KeyError as exc:
            raise CsvFormatError(f"{path}: missing site or species {exc}") from None
        if o.shape != y.shape or not np.all(np.isfinite(o)):
            raise CsvFormatError(f"{path}: offsets must be finite with shape {y.shape}")
        return o
    raise ValueError(f"offset mode must be one of {OFFSET_MODES}, got {mode!r}")


def write_edges(path, scores, labels, selected):
    """Long table ``node_a,node_b,score,selected`` over unordered pairs."""
    scores = np.asarray(scores, dtype=float)
    p = scores.shape[0]
    rows = [[labels[j], labels[k], _fmt(scores[j, k]), str(int(selected[j, k]))]
            for j in range(p) for k in range(j + 1, p)]
    _write_rows(path, ["node_a", "node_b", "score", "selected"], rows)


def write_dot(path, adjacency, scores, labels, max_width=5.0):
    """Undirected DOT graph of the selected edges, pen width proportional to score."""
    adjacency = np.asarray(adjacency)
    scores = np.asarray(scores, dtype=float)
    p = adjacency.shape[0]
    top = max(float(np.max(np.where(adjacency != 0, scores, 0.0))), 0.0)
    lines = ["graph network {", "  node [shape=circle];"]
    lines += [f'  "{lab}";' for lab in labels]
    for j in range(p):
        for k in range(j + 1, p):
            if adjacency[j, k]:
                width = float(max_width * scores[j, k] / top) if top > 0 else 1.0
                lines.append(
                    f'  "{labels[j]}" -- "{labels[k]}" '
                    f'[penwidth={width!r}, weight={float(scores[j, k])!r}];'
                )
    lines.append("}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_curve(path, grid, counts):
    _write_rows(path, ["threshold", "n_edges"],
                [[_fmt(g), str(int(c))] for g, c in zip(grid, counts)])


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def write_json(path, payload):
    Path(path).write_text(
        json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
