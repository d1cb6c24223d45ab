"""Reading and writing loss tables.

CSV (shared grid)::

    lambda,0.1,0.2,0.3
    loss,1,0.5,0
    loss,0.5,0.5,0

The header lists ascending grid points ``g_1 < ... < g_m``. A row of ``m``
values gives the loss on ``[g_j, g_{j+1})`` (the last value from ``g_m`` on)
and the table's domain starts at ``g_1``. A row of ``m + 1`` values adds a
leading value for ``lam < g_1`` and leaves the domain unbounded below. All
loss rows have the same width. A ``size,...`` row after a loss row gives that
sample's prediction-set size on the same grid. Blank lines and lines starting
with ``#`` are ignored.

JSON: ``{"B": 1.0, "lambdas": [...], "losses": [[...], ...]}`` with the same
width rule, or ``{"B": 1.0, "domain_min": null, "rows": [{"breakpoints": [...],
"values": [...]}, ...]}``. Either form may carry a parallel ``"sizes"`` entry.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .steps import LossTable, StepLoss, TableError


class TableFormatError(ValueError):
    """Unparseable loss table file; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, path=None):
        where = "" if path is None else f"{path}: "
        where += "" if line is None else f"line {line}: "
        super().__init__(where + message)
        self.line = line


def _fmt_of(path: Path, fmt: str | None) -> str:
    if fmt:
        fmt = fmt.lower()
    else:
        fmt = path.suffix.lower().lstrip(".")
    if fmt not in ("csv", "json"):
        raise TableFormatError(f"unknown table format {fmt!r} (use csv or json)", path=path)
    return fmt


def _float(cell: str, line: int, path) -> float:
    try:
        x = float(cell)
    except ValueError:
        raise TableFormatError(f"not a number: {cell!r}", line, path) from None
    if not math.isfinite(x):
        raise TableFormatError(f"non-finite value {cell!r}", line, path)
    return x


def _grid_rows(grid, rows, width_line, path, what="loss"):
    """Turn shared-grid value rows into StepLoss objects."""
    m = len(grid)
    out = []
    for vals, line in rows:
        if len(vals) == m:
            if m == 0:
                raise TableFormatError(f"{what} row needs at least one value", line, path)
            out.append(StepLoss(grid[1:], vals, domain_min=grid[0]))
        elif len(vals) == m + 1:
            out.append(StepLoss(grid, vals))
        else:
            raise TableFormatError(
                f"{what} row has {len(vals)} values; grid of {m} needs {m} or {m + 1}", line, path
            )
    widths = {len(v) for v, _ in rows}
    if len(widths) > 1:
        raise TableFormatError("rows have different widths", width_line, path)
    return out


def _check_grid(grid, line, path):
    for a, b in zip(grid, grid[1:]):
        if not b > a:
            raise TableFormatError("lambda grid must be strictly ascending", line, path)


def _assemble(losses, bound, sizes, path, lines=None) -> LossTable:
    for i, row in enumerate(losses):
        over = np.flatnonzero(row.values > bound)
        if over.size:
            line = None if lines is None else lines[i]
            where = f"row {i}" if line is None else "row"
            raise TableFormatError(
                f"{where} has loss {row.values[over[0]]!r} above B={bound!r}", line, path
            )
    try:
        table = LossTable(losses, bound, sizes=sizes)
    except TableError as e:
        line = None if lines is None or e.row is None else lines[e.row]
        raise TableFormatError(str(e), line, path) from None
    return table.canonical()


def _load_csv(text: str, bound: float, path) -> LossTable:
    reader = csv.reader(io.StringIO(text))
    grid = None
    losses: list[tuple[list[float], int]] = []
    sizes: list[tuple[list[float], int]] = []
    header_line = None
    for lineno, cells in enumerate(reader, start=1):
        cells = [c.strip() for c in cells]
        if not cells or not any(cells) or cells[0].startswith("#"):
            continue
        tag = cells[0].lower()
        if grid is None:
            if tag != "lambda":
                raise TableFormatError("header must start with 'lambda'", lineno, path)
            grid = [_float(c, lineno, path) for c in cells[1:]]
            _check_grid(grid, lineno, path)
            header_line = lineno
            continue
        vals = [_float(c, lineno, path) for c in cells[1:]]
        if tag == "loss":
            for v in vals:
                if v > bound:
                    raise TableFormatError(f"loss {v!r} exceeds B={bound!r}", lineno, path)
            losses.append((vals, lineno))
        elif tag == "size":
            if len(sizes) != len(losses) - 1:
                raise TableFormatError("size row must follow its loss row", lineno, path)
            sizes.append((vals, lineno))
        else:
            raise TableFormatError(f"unknown row tag {cells[0]!r}", lineno, path)
    if grid is None:
        raise TableFormatError("missing 'lambda' header", 1, path)
    if not losses:
        raise TableFormatError("no loss rows", header_line, path)
    if sizes and len(sizes) != len(losses):
        raise TableFormatError("size rows must accompany every loss row or none", None, path)
    rows = _grid_rows(grid, losses, losses[-1][1], path)
    size_rows = _grid_rows(grid, sizes, sizes[-1][1], path, "size") if sizes else None
    return _assemble(rows, bound, size_rows, path, [ln for _, ln in losses])


def _json_rows(obj, key, path, domain_min):
    out = []
    for i, r in enumerate(obj):
        try:
            out.append(StepLoss(r["breakpoints"], r["values"], domain_min))
        except (KeyError, TypeError) as e:
            raise TableFormatError(f"{key}[{i}] needs 'breakpoints' and 'values' ({e})", None, path)
        except TableError as e:
            raise TableFormatError(f"{key}[{i}]: {e}", None, path) from None
    return out


def _load_json(text: str, bound: float | None, path) -> LossTable:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise TableFormatError(e.msg, e.lineno, path) from None
    if not isinstance(obj, dict):
        raise TableFormatError("top level must be an object", 1, path)
    b = obj.get("B", bound if bound is not None else 1.0)
    if bound is not None:
        b = bound
    b = float(b)
    if "lambdas" in obj:
        grid = [float(x) for x in obj["lambdas"]]
        _check_grid(grid, None, path)
        losses = [([float(v) for v in row], None) for row in obj.get("losses", [])]
        if not losses:
            raise TableFormatError("no loss rows", None, path)
        rows = _grid_rows(grid, losses, None, path)
        sizes = obj.get("sizes")
        size_rows = None
        if sizes is not None:
            size_rows = _grid_rows(grid, [([float(v) for v in r], None) for r in sizes], None, path, "size")
    elif "rows" in obj:
        dmin = obj.get("domain_min")
        dmin = -math.inf if dmin is None else float(dmin)
        rows = _json_rows(obj["rows"], "rows", path, dmin)
        if not rows:
            raise TableFormatError("no loss rows", None, path)
        sizes = obj.get("sizes")
        size_rows = None if sizes is None else _json_rows(sizes, "sizes", path, dmin)
    else:
        raise TableFormatError("expected a 'lambdas' grid or a 'rows' list", None, path)
    return _assemble(rows, b, size_rows, path)


def load_loss_table(path, fmt: str | None = None, bound: float | None = None) -> LossTable:
    """Read a loss table; the format defaults to the file suffix.

    ``bound`` sets B for CSV input (default 1.0) and overrides the ``"B"``
    field of JSON input when given. The result is canonical: adjacent equal
    segments are merged.
    """
    path = Path(path)
    fmt = _fmt_of(path, fmt)
    text = path.read_text(encoding="utf-8")
    if fmt == "csv":
        return _load_csv(text, 1.0 if bound is None else float(bound), path)
    return _load_json(text, bound, path)


def _grid_matrix(table: LossTable, rows_of, grid):
    cols = [np.array([r.values[0] for r in rows_of])] if table.domain_min == -math.inf else []
    for g in grid:
        cols.append(np.array([r(g) for r in rows_of]))
    return np.column_stack(cols) if cols else np.zeros((len(rows_of), 0))


def save_loss_table(table: LossTable, path, fmt: str | None = None) -> None:
    """Write ``table`` so that :func:`load_loss_table` reproduces it exactly."""
    path = Path(path)
    fmt = _fmt_of(path, fmt)
    if fmt == "json":
        dmin = None if table.domain_min == -math.inf else table.domain_min
        obj = {
            "B": table.bound,
            "domain_min": dmin,
            "rows": [
                {"breakpoints": r.breakpoints.tolist(), "values": r.values.tolist()} for r in table
            ],
        }
        if table.sizes is not None:
            obj["sizes"] = [
                {"breakpoints": r.breakpoints.tolist(), "values": r.values.tolist()}
                for r in table.sizes
            ]
        path.write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")
        return

    pts = [table._bp]
    if table.sizes is not None:
        pts += [r.breakpoints for r in table.sizes]
    grid = np.unique(np.concatenate(pts)).tolist()
    if table.domain_min != -math.inf:
        grid = [table.domain_min] + [g for g in grid if g > table.domain_min]
    loss_mat = _grid_matrix(table, table.rows, grid)
    size_mat = None if table.sizes is None else _grid_matrix(table, table.sizes, grid)
    lines = [",".join(["lambda"] + [repr(float(g)) for g in grid])]
    for i in range(table.n):
        lines.append(",".join(["loss"] + [repr(float(v)) for v in loss_mat[i]]))
        if size_mat is not None:
            lines.append(",".join(["size"] + [repr(float(v)) for v in size_mat[i]]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_scores(path) -> list[float]:
    """Conformal scores from a JSON list or a text/CSV file of numbers."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise TableFormatError(e.msg, e.lineno, path) from None
        if isinstance(data, dict):
            data = data.get("scores")
        if not isinstance(data, list):
            raise TableFormatError("expected a list of scores", None, path)
        return [float(x) for x in data]
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        for cell in line.replace(",", " ").split():
            try:
                out.append(_float(cell, lineno, path))
            except TableFormatError:
                if lineno == 1 and not out:
                    break  # header
                raise
    return out
