"""Table domain types: boxes, grid lattices, cells and whole-table structure.

Also holds the pure post-processing on top of them: turning merge maps into
cells, routing text tokens into cells by IOU, and HTML export/import.
"""

from __future__ import annotations

import html
import re
import warnings
from dataclasses import dataclass, field, replace
from html.parser import HTMLParser
from typing import Iterable, Sequence

import numpy as np


class StructureError(ValueError):
    """Raised when table data violates a structural invariant."""


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 <= self.x2 and self.y1 <= self.y2):
            raise StructureError(f"inverted box {self.as_list()}")
        if min(self.x1, self.y1) < 0:
            raise StructureError(f"negative coordinate in {self.as_list()}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    def union(self, other: "BBox") -> "BBox":
        return BBox(min(self.x1, other.x1), min(self.y1, other.y1),
                    max(self.x2, other.x2), max(self.y2, other.y2))

    @classmethod
    def from_list(cls, v: Sequence[float]) -> "BBox":
        x1, y1, x2, y2 = (float(t) for t in v)
        return cls(x1, y1, x2, y2)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; zero for disjoint or zero-area boxes."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


@dataclass(frozen=True)
class GridLattice:
    """Internal row/column lines of a table image and the grid they induce.

    Image edges are implicit boundaries; ``row_lines``/``col_lines`` hold
    only the internal ones. Grids are numbered row-major.
    """

    image_h: int
    image_w: int
    row_lines: tuple[float, ...] = ()
    col_lines: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "row_lines", tuple(float(v) for v in self.row_lines))
        object.__setattr__(self, "col_lines", tuple(float(v) for v in self.col_lines))
        for name, lines, limit in (("row", self.row_lines, self.image_h),
                                   ("col", self.col_lines, self.image_w)):
            prev = 0.0
            for v in lines:
                if not prev < v < limit:
                    raise StructureError(f"{name} lines must be strictly increasing inside (0, {limit}): {lines}")
                prev = v

    @property
    def n_rows(self) -> int:
        return len(self.row_lines) + 1

    @property
    def n_cols(self) -> int:
        return len(self.col_lines) + 1

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def n_grids(self) -> int:
        return self.n_rows * self.n_cols

    @property
    def row_bounds(self) -> tuple[float, ...]:
        return (0.0, *self.row_lines, float(self.image_h))

    @property
    def col_bounds(self) -> tuple[float, ...]:
        return (0.0, *self.col_lines, float(self.image_w))

    @property
    def grid_boxes(self) -> list[BBox]:
        ys, xs = self.row_bounds, self.col_bounds
        return [BBox(xs[c], ys[r], xs[c + 1], ys[r + 1])
                for r in range(self.n_rows) for c in range(self.n_cols)]

    def grid_array(self) -> np.ndarray:
        """Grid boxes as an (M*N, 4) float array."""
        return np.array([b.as_list() for b in self.grid_boxes], dtype=np.float64).reshape(-1, 4)

    def span_box(self, start_row: int, end_row: int, start_col: int, end_col: int) -> BBox:
        ys, xs = self.row_bounds, self.col_bounds
        return BBox(xs[start_col], ys[start_row], xs[end_col + 1], ys[end_row + 1])


@dataclass
class Cell:
    start_row: int
    end_row: int
    start_col: int
    end_col: int
    bbox: BBox | None = None
    content: str | None = None
    content_boxes: list[BBox] | None = None
    # set when the cell came out of a repaired (non-rectangular) merge map
    rectified: bool = False

    def __post_init__(self):
        if self.start_row > self.end_row or self.start_col > self.end_col:
            raise StructureError(f"bad span {self.span}")
        if min(self.start_row, self.start_col) < 0:
            raise StructureError(f"negative span {self.span}")

    @property
    def span(self) -> tuple[int, int, int, int]:
        return (self.start_row, self.end_row, self.start_col, self.end_col)

    @property
    def rowspan(self) -> int:
        return self.end_row - self.start_row + 1

    @property
    def colspan(self) -> int:
        return self.end_col - self.start_col + 1

    def grids(self) -> Iterable[tuple[int, int]]:
        for r in range(self.start_row, self.end_row + 1):
            for c in range(self.start_col, self.end_col + 1):
                yield r, c


@dataclass
class TableStructure:
    lattice: GridLattice
    cells: list[Cell] = field(default_factory=list)

    def __post_init__(self):
        self.cells = sorted(self.cells, key=lambda c: (c.start_row, c.start_col))
        check_partition(self.cells, self.lattice.n_rows, self.lattice.n_cols)

    @property
    def shape(self) -> tuple[int, int]:
        return self.lattice.shape

    def spans(self) -> set[tuple[int, int, int, int]]:
        return {c.span for c in self.cells}

    def owner_grid(self) -> np.ndarray:
        """(M, N) array holding, per grid, the index of the owning cell."""
        owner = np.full(self.shape, -1, dtype=np.int64)
        for k, cell in enumerate(self.cells):
            owner[cell.start_row:cell.end_row + 1, cell.start_col:cell.end_col + 1] = k
        return owner


def check_partition(cells: Sequence[Cell], n_rows: int, n_cols: int) -> None:
    seen = np.zeros((n_rows, n_cols), dtype=np.int64)
    for cell in cells:
        if cell.end_row >= n_rows or cell.end_col >= n_cols:
            raise StructureError(f"cell {cell.span} outside {n_rows}x{n_cols} grid")
        seen[cell.start_row:cell.end_row + 1, cell.start_col:cell.end_col + 1] += 1
    if not np.all(seen == 1):
        raise StructureError("cells do not partition the grid")


# ---------------------------------------------------------------------------
# merge maps <-> cells


def cells_to_maps(cells: Sequence[Cell], n_rows: int, n_cols: int) -> np.ndarray:
    """Indicator vectors (C, M*N) of the grids each cell occupies, cells sorted."""
    ordered = sorted(cells, key=lambda c: (c.start_row, c.start_col))
    maps = np.zeros((len(ordered), n_rows * n_cols), dtype=np.int64)
    for t, cell in enumerate(ordered):
        for r, c in cell.grids():
            maps[t, r * n_cols + c] = 1
    return maps


def _grow_from_anchor(avail: np.ndarray, r0: int, c0: int) -> tuple[int, int, int, int]:
    # widest run to the right, then extend down while the whole row segment is free
    c1 = c0
    while c1 + 1 < avail.shape[1] and avail[r0, c1 + 1]:
        c1 += 1
    r1 = r0
    while r1 + 1 < avail.shape[0] and avail[r1 + 1, c0:c1 + 1].all():
        r1 += 1
    return r0, r1, c0, c1


def assemble_structure(lattice: GridLattice, merge_maps) -> TableStructure:
    """Build cells from a sequence of binary merge maps over the lattice grids.

    Raw maps must be disjoint and cover every grid. A map whose grids do not
    form a rectangle is replaced by its bounding rectangle; grids that the
    rectangle takes from later maps are removed from those maps, and the
    resulting cell is flagged ``rectified``.
    """
    n_rows, n_cols = lattice.shape
    maps = np.asarray(getattr(merge_maps, "maps", merge_maps))
    if maps.ndim == 1:
        maps = maps[None, :]
    maps = maps.reshape(len(maps), -1) if maps.size else np.zeros((0, n_rows * n_cols))
    if maps.shape[1] != n_rows * n_cols:
        raise StructureError(f"merge maps have length {maps.shape[1]}, lattice has {n_rows * n_cols} grids")
    if not np.isin(maps, (0, 1)).all():
        raise StructureError("merge maps must be binary")
    maps = maps.astype(bool)
    total = maps.sum(axis=0)
    if (total > 1).any():
        raise StructureError("merge maps overlap")
    if (total < 1).any():
        raise StructureError("merge maps do not cover every grid")

    claimed = np.zeros((n_rows, n_cols), dtype=bool)
    cells: list[Cell] = []
    for m in maps:
        grid = m.reshape(n_rows, n_cols) & ~claimed
        if not grid.any():
            continue
        rows, cols = np.nonzero(grid)
        r0, r1, c0, c1 = rows.min(), rows.max(), cols.min(), cols.max()
        rect = np.zeros_like(claimed)
        rect[r0:r1 + 1, c0:c1 + 1] = True
        if (rect & claimed).any():
            # bounding rectangle collides with an earlier cell: shrink around the anchor
            r0, r1, c0, c1 = _grow_from_anchor(~claimed & grid, rows[0], cols[0])
            rect[:] = False
            rect[r0:r1 + 1, c0:c1 + 1] = True
        repaired = not np.array_equal(rect, m.reshape(n_rows, n_cols))
        claimed |= rect
        cells.append(Cell(int(r0), int(r1), int(c0), int(c1),
                          bbox=lattice.span_box(r0, r1, c0, c1), rectified=repaired))
    for r, c in zip(*np.nonzero(~claimed)):
        # leftovers of maps that lost their anchor region
        cells.append(Cell(int(r), int(r), int(c), int(c), bbox=lattice.span_box(r, r, c, c), rectified=True))
    if any(c.rectified for c in cells):
        warnings.warn("non-rectangular merge maps were rectified", RuntimeWarning, stacklevel=2)
    return TableStructure(lattice, cells)


# ---------------------------------------------------------------------------
# content matching


def reading_order(tokens: Sequence[tuple[str, BBox]]) -> list[tuple[str, BBox]]:
    """Sort tokens into lines (by center y, tolerance half the median height) then by x."""
    if not tokens:
        return []
    tol = 0.5 * float(np.median([b.height for _, b in tokens]))
    by_y = sorted(tokens, key=lambda t: t[1].center[1])
    lines: list[list[tuple[str, BBox]]] = []
    line_y = None
    for tok in by_y:
        y = tok[1].center[1]
        if lines and abs(y - line_y) <= tol:
            lines[-1].append(tok)
        else:
            lines.append([tok])
            line_y = y
    return [t for line in lines for t in sorted(line, key=lambda t: t[1].center[0])]


def assign_tokens(boxes: Sequence[BBox], tokens: Sequence[tuple[str, BBox]]) -> tuple[list[list[int]], list[int]]:
    """Index of the max-IOU box for every token; tokens with zero overlap are unassigned."""
    groups: list[list[int]] = [[] for _ in boxes]
    unassigned = []
    for k, (_, tb) in enumerate(tokens):
        scores = [iou(tb, b) for b in boxes]
        best = int(np.argmax(scores)) if scores else -1
        if best < 0 or scores[best] <= 0:
            unassigned.append(k)
        else:
            groups[best].append(k)
    return groups, unassigned


def join_tokens(tokens: Sequence[tuple[str, BBox]]) -> str:
    return normalize_text(" ".join(t for t, _ in reading_order(tokens)))


def match_content(structure: TableStructure, tokens: Sequence[tuple[str, BBox]]) -> tuple[TableStructure, list[int]]:
    """Attach text tokens to cells by maximal IOU.

    Returns the new structure and the indices of tokens that overlapped no cell.
    """
    boxes = [c.bbox if c.bbox is not None else structure.lattice.span_box(*c.span) for c in structure.cells]
    groups, unassigned = assign_tokens(boxes, tokens)
    cells = []
    for cell, idx in zip(structure.cells, groups):
        toks = [tokens[k] for k in idx]
        cells.append(replace(cell, content=join_tokens(toks), content_boxes=[b for _, b in toks]))
    return TableStructure(structure.lattice, cells), unassigned


# ---------------------------------------------------------------------------
# HTML trees

_WS = re.compile(r"\s+")


def normalize_text(text: str | None) -> str:
    return _WS.sub(" ", text or "").strip()


@dataclass
class HTMLNode:
    tag: str
    children: list["HTMLNode"] = field(default_factory=list)
    rowspan: int = 1
    colspan: int = 1
    text: str = ""

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)

    def iter(self):
        yield self
        for c in self.children:
            yield from c.iter()

    def to_html(self) -> str:
        if self.tag == "td":
            attrs = ""
            if self.rowspan > 1:
                attrs += f' rowspan="{self.rowspan}"'
            if self.colspan > 1:
                attrs += f' colspan="{self.colspan}"'
            return f"<td{attrs}>{html.escape(normalize_text(self.text), quote=False)}</td>"
        inner = "".join(c.to_html() for c in self.children)
        return f"<{self.tag}>{inner}</{self.tag}>"


def to_html_tree(structure: TableStructure, include_content: bool = True) -> HTMLNode:
    n_rows = structure.lattice.n_rows
    rows = [HTMLNode("tr") for _ in range(n_rows)]
    for cell in structure.cells:
        text = normalize_text(cell.content) if include_content else ""
        rows[cell.start_row].children.append(HTMLNode("td", rowspan=cell.rowspan, colspan=cell.colspan, text=text))
    return HTMLNode("table", rows)


def to_html(structure: TableStructure, include_content: bool = True) -> str:
    return to_html_tree(structure, include_content).to_html()


class _TableHTMLParser(HTMLParser):
    # flattens thead/tbody; nested tables are not supported
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.root: HTMLNode | None = None
        self._row: HTMLNode | None = None
        self._cell: HTMLNode | None = None

    def handle_starttag(self, tag, attrs):
        a = dict(attrs)
        if tag == "table":
            if self.root is not None:
                raise StructureError("nested tables are not supported")
            self.root = HTMLNode("table")
        elif tag == "tr":
            self._row = HTMLNode("tr")
            self.root.children.append(self._row)
        elif tag in ("td", "th"):
            self._cell = HTMLNode("td", rowspan=int(a.get("rowspan") or 1), colspan=int(a.get("colspan") or 1))
            self._row.children.append(self._cell)

    def handle_endtag(self, tag):
        if tag in ("td", "th") and self._cell is not None:
            self._cell.text = normalize_text(self._cell.text)
            self._cell = None

    def handle_data(self, data):
        if self._cell is not None:
            self._cell.text += data


def parse_html(source: str) -> HTMLNode:
    """Parse an HTML table string into a table/tr/td tree."""
    if "<table" not in source:
        source = f"<table>{source}</table>"
    p = _TableHTMLParser()
    p.feed(source)
    p.close()
    if p.root is None:
        raise StructureError("no <table> element found")
    return p.root


def cells_from_tree(tree: HTMLNode) -> tuple[list[Cell], int, int]:
    """Grid spans of every td, resolving rowspan/colspan with an occupancy grid."""
    occupied: dict[tuple[int, int], bool] = {}
    cells = []
    n_cols = 0
    for r, tr in enumerate(tree.children):
        c = 0
        for td in tr.children:
            while occupied.get((r, c)):
                c += 1
            cell = Cell(r, r + td.rowspan - 1, c, c + td.colspan - 1, content=td.text)
            for g in cell.grids():
                if occupied.get(g):
                    raise StructureError(f"overlapping spans at {g}")
                occupied[g] = True
            cells.append(cell)
            c += td.colspan
            n_cols = max(n_cols, c)
    n_rows = max([len(tree.children)] + [cell.end_row + 1 for cell in cells])
    return cells, n_rows, n_cols


def structure_from_html(source: str | HTMLNode, image_size: tuple[int, int] | None = None) -> TableStructure:
    """Rebuild a TableStructure (spans and text, uniform lattice) from HTML.

    Grids left uncovered by the markup become empty 1x1 cells.
    """
    tree = parse_html(source) if isinstance(source, str) else source
    cells, n_rows, n_cols = cells_from_tree(tree)
    n_cols = max(n_cols, 1)
    covered = np.zeros((n_rows, n_cols), dtype=bool)
    for cell in cells:
        covered[cell.start_row:cell.end_row + 1, cell.start_col:cell.end_col + 1] = True
    cells += [Cell(int(r), int(r), int(c), int(c), content="") for r, c in zip(*np.nonzero(~covered))]
    lattice = uniform_lattice(n_rows, n_cols, image_size)
    for cell in cells:
        cell.bbox = lattice.span_box(*cell.span)
    return TableStructure(lattice, cells)


def uniform_lattice(n_rows: int, n_cols: int, image_size: tuple[int, int] | None = None) -> GridLattice:
    h, w = image_size or (max(32, 10 * n_rows), max(32, 10 * n_cols))
    return GridLattice(h, w, tuple(h * k / n_rows for k in range(1, n_rows)),
                       tuple(w * k / n_cols for k in range(1, n_cols)))


# ---------------------------------------------------------------------------
# JSON exchange format


def structure_to_json(structure: TableStructure) -> dict:
    lat = structure.lattice
    cells = []
    for c in structure.cells:
        d = {"row": [c.start_row, c.end_row], "col": [c.start_col, c.end_col],
             "bbox": (c.bbox or lat.span_box(*c.span)).as_list(),
             "content": c.content or ""}
        if c.rectified:
            d["rectified"] = True
        cells.append(d)
    return {"image_size": [lat.image_h, lat.image_w],
            "row_lines": list(lat.row_lines), "col_lines": list(lat.col_lines),
            "cells": cells}


def structure_from_json(data: dict) -> TableStructure:
    h, w = data["image_size"]
    lattice = GridLattice(int(h), int(w), tuple(data.get("row_lines", ())), tuple(data.get("col_lines", ())))
    cells = []
    for d in data["cells"]:
        boxes = d.get("content_boxes")
        cells.append(Cell(d["row"][0], d["row"][1], d["col"][0], d["col"][1],
                          bbox=BBox.from_list(d["bbox"]) if d.get("bbox") else None,
                          content=d.get("content"),
                          content_boxes=[BBox.from_list(b) for b in boxes] if boxes else None,
                          rectified=bool(d.get("rectified", False))))
    if not lattice.row_lines and not lattice.col_lines and cells:
        # files that only carry spans: fall back to a uniform lattice of the right shape
        n_rows = max(c.end_row for c in cells) + 1
        n_cols = max(c.end_col for c in cells) + 1
        if (n_rows, n_cols) != (1, 1):
            lattice = uniform_lattice(n_rows, n_cols, (int(h), int(w)))
    return TableStructure(lattice, cells)


STRUCTURE_SCHEMA = {
    "type": "object",
    "required": ["image_size", "row_lines", "col_lines", "cells"],
    "properties": {
        "image_size": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2},
        "row_lines": {"type": "array", "items": {"type": "number"}},
        "col_lines": {"type": "array", "items": {"type": "number"}},
        "cells": {"type": "array", "items": {
            "type": "object",
            "required": ["row", "col", "bbox"],
            "properties": {
                "row": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2},
                "col": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2},
                "bbox": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
                "content": {"type": "string"},
            },
        }},
    },
}


def is_rectangular(mask: np.ndarray) -> bool:
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        return False
    return rows.size == (rows.max() - rows.min() + 1) * (cols.max() - cols.min() + 1)


__all__ = [
    "BBox", "Cell", "GridLattice", "HTMLNode", "StructureError", "TableStructure",
    "assemble_structure", "cells_to_maps", "check_partition", "iou", "is_rectangular", "match_content",
    "parse_html", "structure_from_html", "structure_from_json", "structure_to_json",
    "to_html", "to_html_tree",
]
