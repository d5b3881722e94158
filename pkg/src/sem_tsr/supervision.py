"""Training targets derived from cell-level annotations.

Separator labels are full-width (row) and full-height (column) bands, as wide
as possible without touching the content of any cell lying entirely on one
side of the boundary. Cells that straddle a boundary are spanning cells and
their content may be crossed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .splitter import SeparatorLabels
from .structure import BBox, Cell, GridLattice, StructureError, cells_to_maps, check_partition


class InvalidAnnotation(ValueError):
    pass


@dataclass
class Annotation:
    image_h: int
    image_w: int
    cells: list[Cell]
    # (text, box) per text line; derived from the cells when not given
    tokens: list[tuple[str, BBox]] = field(default_factory=list)
    image_id: str = ""

    def __post_init__(self):
        self.cells = sorted(self.cells, key=lambda c: (c.start_row, c.start_col))
        if not self.cells:
            raise InvalidAnnotation("annotation has no cells")
        try:
            check_partition(self.cells, self.n_rows, self.n_cols)
        except StructureError as exc:
            raise InvalidAnnotation(str(exc)) from exc
        if not self.tokens:
            for c in self.cells:
                if c.content_boxes:
                    box = c.content_boxes[0]
                    for b in c.content_boxes[1:]:
                        box = box.union(b)
                    self.tokens.append((c.content or "", box))

    @property
    def n_rows(self) -> int:
        return max(c.end_row for c in self.cells) + 1

    @property
    def n_cols(self) -> int:
        return max(c.end_col for c in self.cells) + 1

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def image_size(self) -> tuple[int, int]:
        return (self.image_h, self.image_w)


def flip_annotation(ann: Annotation, horizontal: bool = False, vertical: bool = False) -> Annotation:
    """The annotation of the mirrored image: spans, cell boxes and tokens all reflect."""
    H, W, M, N = ann.image_h, ann.image_w, ann.n_rows, ann.n_cols

    def box(b: BBox | None) -> BBox | None:
        if b is None:
            return None
        x1, x2 = (W - b.x2, W - b.x1) if horizontal else (b.x1, b.x2)
        y1, y2 = (H - b.y2, H - b.y1) if vertical else (b.y1, b.y2)
        return BBox(x1, y1, x2, y2)

    cells = []
    for c in ann.cells:
        r0, r1 = (M - 1 - c.end_row, M - 1 - c.start_row) if vertical else (c.start_row, c.end_row)
        c0, c1 = (N - 1 - c.end_col, N - 1 - c.start_col) if horizontal else (c.start_col, c.end_col)
        boxes = None if c.content_boxes is None else [box(b) for b in c.content_boxes]
        cells.append(Cell(r0, r1, c0, c1, box(c.bbox), c.content, boxes))
    tokens = [(t, box(b)) for t, b in ann.tokens]
    return Annotation(H, W, cells, tokens, ann.image_id)


def _extent(cell: Cell, axis: int) -> tuple[int, int]:
    return (cell.start_row, cell.end_row) if axis == 0 else (cell.start_col, cell.end_col)


def _side_limit(cells: list[Cell], k: int, below: bool, axis: int) -> float | None:
    """Innermost content edge on one side of the boundary after grid line ``k``.

    ``axis`` 0 works on rows / y, 1 on columns / x.
    """
    lo_edge, hi_edge = (1, 3) if axis == 0 else (0, 2)
    vals = []
    for c in cells:
        start, end = _extent(c, axis)
        if (start >= k + 1) if below else (end <= k):
            vals += [b.as_list()[lo_edge if below else hi_edge] for b in c.content_boxes or ()]
    if vals:
        return min(vals) if below else max(vals)
    # no content on this side: fall back to the centers of the adjacent cells' boxes
    centers = [c.bbox.center[1 - axis] for c in cells
               if c.bbox is not None and (_extent(c, axis)[0] == k + 1 if below else _extent(c, axis)[1] == k)]
    if centers:
        return min(centers) if below else max(centers)
    return None


def separator_bands(ann: Annotation) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """Half-open pixel ranges of every row band and column band, in boundary order."""
    out = []
    for axis, n, limit in ((0, ann.n_rows, ann.image_h), (1, ann.n_cols, ann.image_w)):
        bands = []
        for k in range(n - 1):
            upper = _side_limit(ann.cells, k, below=False, axis=axis)
            lower = _side_limit(ann.cells, k, below=True, axis=axis)
            if upper is None or lower is None:
                raise InvalidAnnotation(f"no geometry on one side of {'row' if axis == 0 else 'col'} boundary {k}")
            if lower < upper:
                raise InvalidAnnotation(f"content overlaps across {'row' if axis == 0 else 'col'} boundary {k}")
            a, b = math.ceil(upper), math.floor(lower)
            if b <= a:
                a = int(math.floor(0.5 * (upper + lower)))
                b = a + 1
            a, b = max(a, 0), min(b, limit)
            bands.append((a, b))
        for k, (a, b) in enumerate(bands):
            if a <= 0 or b >= limit:
                raise InvalidAnnotation("separator band touches the image border")
            if k and bands[k - 1][1] >= a:
                raise InvalidAnnotation("adjacent separator bands touch or overlap")
        out.append(bands)
    return out[0], out[1]


def make_separator_labels(ann: Annotation) -> SeparatorLabels:
    row_bands, col_bands = separator_bands(ann)
    row = np.zeros((ann.image_h, ann.image_w), dtype=np.int64)
    col = np.zeros_like(row)
    for a, b in row_bands:
        row[a:b, :] = 1
    for a, b in col_bands:
        col[:, a:b] = 1
    return SeparatorLabels(row, col)


def gt_lattice(ann: Annotation) -> GridLattice:
    """Lattice whose internal lines sit at the middle of each separator band."""
    row_bands, col_bands = separator_bands(ann)
    return GridLattice(ann.image_h, ann.image_w,
                       tuple((a + b - 1) // 2 for a, b in row_bands),
                       tuple((a + b - 1) // 2 for a, b in col_bands))


def make_merge_targets(ann: Annotation, lattice: GridLattice) -> np.ndarray:
    """(C, M*N) indicator rows, cells ordered top-to-bottom then left-to-right."""
    if lattice.shape != ann.shape:
        raise InvalidAnnotation(f"lattice {lattice.shape} does not match annotation grid {ann.shape}")
    return cells_to_maps(ann.cells, *ann.shape)
