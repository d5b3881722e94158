"""Synthetic table images with exact structure annotations.

Cells hold short words rendered either as glyph blobs (one dark box per
character, unreadable by design) or as bitmap text. Layout, spans, ruling
lines and noise are driven by a single seeded generator, so a seed fully
determines the image and its annotation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from PIL import Image, ImageDraw

from .structure import BBox, Cell
from .supervision import Annotation, InvalidAnnotation, separator_bands

SYNTH_SCHEMA_VERSION = 1


@dataclass
class SynthConfig:
    rows: tuple[int, int] = (2, 5)
    cols: tuple[int, int] = (2, 4)
    span_prob: float = 0.12
    empty_prob: float = 0.05
    # chance that a rowspan cell writes one line per spanned row
    multiline_prob: float = 0.0
    glyph_h: tuple[int, int] = (6, 9)
    ruling_prob: float = 0.3
    # "mixed": cell borders or header rules at random; "grid": cell borders; "header": header rules
    ruling_style: str = "mixed"
    pad: tuple[int, int] = (3, 6)
    margin: tuple[int, int] = (3, 8)
    max_size: tuple[int, int] = (512, 512)
    render: str = "blob"
    noise: float = 3.0
    seed: int = 0
    version: int = SYNTH_SCHEMA_VERSION

    def __post_init__(self):
        for name in ("rows", "cols", "glyph_h", "pad", "margin", "max_size"):
            lo, hi = getattr(self, name)
            setattr(self, name, (int(lo), int(hi)))
            if lo > hi:
                raise ValueError(f"{name} range is empty: {lo}..{hi}")
        if self.rows[0] < 1 or self.cols[0] < 1:
            raise ValueError("tables need at least one row and column")
        for name in ("span_prob", "empty_prob", "multiline_prob", "ruling_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        if self.render not in ("blob", "text"):
            raise ValueError("render must be 'blob' or 'text'")
        if self.ruling_style not in ("mixed", "grid", "header"):
            raise ValueError("ruling_style must be 'mixed', 'grid' or 'header'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


_LOWER = "abcdefghijklmnopqrstuvwxyz"


def _word(rng: np.random.Generator, capital: bool = True) -> str:
    n = int(rng.integers(2, 7))
    w = "".join(rng.choice(list(_LOWER), size=n))
    return w.capitalize() if capital else w


def _number(rng: np.random.Generator) -> str:
    kind = rng.integers(3)
    if kind == 0:
        return str(int(rng.integers(0, 1000)))
    if kind == 1:
        return f"{rng.uniform(0, 100):.{int(rng.integers(1, 3))}f}"
    return f"{rng.uniform(0, 1):.2f}"


def _cell_text(rng: np.random.Generator) -> str:
    if rng.random() < 0.5:
        return _number(rng)
    words = [_word(rng)] + ([_word(rng, capital=False)] if rng.random() < 0.3 else [])
    return " ".join(words)


def _layout(rng, n_rows, n_cols, cfg: SynthConfig):
    """Rectangular spans (r0, r1, c0, c1) tiling the grid, in raster order."""
    free = np.ones((n_rows, n_cols), dtype=bool)
    spans = []
    for r in range(n_rows):
        for c in range(n_cols):
            if not free[r, c]:
                continue
            rs = cs = 1
            if rng.random() < cfg.span_prob:
                rs = int(rng.integers(1, min(3, n_rows - r) + 1))
                cs = int(rng.integers(1, min(3, n_cols - c) + 1))
                while cs > 1 and not free[r, c:c + cs].all():
                    cs -= 1
                if rs == 1 and cs == 1 and n_cols - c > 1 and free[r, c + 1]:
                    cs = 2
            free[r:r + rs, c:c + cs] = False
            spans.append((r, r + rs - 1, c, c + cs - 1))
    return spans


def _well_formed(spans, filled, n_rows, n_cols) -> bool:
    # every grid row and column needs a non-spanning cell with content, otherwise
    # neighbouring separator bands merge and the grid is not recoverable
    rows = {s[0] for s, f in zip(spans, filled) if f and s[0] == s[1]}
    cols = {s[2] for s, f in zip(spans, filled) if f and s[2] == s[3]}
    return rows == set(range(n_rows)) and cols == set(range(n_cols))


class _Renderer:
    def __init__(self, cfg: SynthConfig, glyph_h: int, rng: np.random.Generator):
        self.cfg, self.glyph_h, self.rng = cfg, glyph_h, rng
        if cfg.render == "text":
            from PIL import ImageFont
            self.font = ImageFont.load_default()
            left, top, right, bottom = self.font.getbbox("Ag")
            self.glyph_h = bottom - top
            self.char_w = max(1, int(round(self.font.getlength("abcdefghij0123456789") / 20)))
        else:
            self.font = None
            self.char_w = max(3, int(round(0.6 * glyph_h)))

    def width(self, text: str) -> int:
        if self.font is not None:
            return max(1, int(np.ceil(self.font.getlength(text))))
        return len(text) * self.char_w

    def draw(self, draw: ImageDraw.ImageDraw, x: int, y: int, text: str, ink: int):
        if self.font is not None:
            top = self.font.getbbox(text)[1]
            draw.text((x, y - top), text, fill=(ink, ink, ink), font=self.font)
            return
        for k, ch in enumerate(text):
            if ch == " ":
                continue
            gx = x + k * self.char_w
            shrink = int(self.rng.integers(0, max(1, self.glyph_h // 3) + 1))
            top = y + (shrink if self.rng.random() < 0.5 else 0)
            bottom = y + self.glyph_h - 1 - (0 if top > y else shrink)
            draw.rectangle([gx, top, gx + self.char_w - 2, max(top, bottom)], fill=(ink, ink, ink))


def synth_table(cfg: SynthConfig, seed: int | None = None, max_tries: int = 50) -> tuple[np.ndarray, Annotation]:
    """Render one table; returns an (H, W, 3) uint8 image and its annotation."""
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        try:
            return _synth_once(cfg, rng, seed)
        except InvalidAnnotation:
            continue
    raise RuntimeError(f"could not generate a valid table for seed {seed}")


def _synth_once(cfg: SynthConfig, rng: np.random.Generator, seed: int):
    n_rows = int(rng.integers(cfg.rows[0], cfg.rows[1] + 1))
    n_cols = int(rng.integers(cfg.cols[0], cfg.cols[1] + 1))
    glyph_h = int(rng.integers(cfg.glyph_h[0], cfg.glyph_h[1] + 1))
    ren = _Renderer(cfg, glyph_h, rng)
    glyph_h = ren.glyph_h

    for _ in range(20):
        spans = _layout(rng, n_rows, n_cols, cfg)
        filled = [rng.random() >= cfg.empty_prob for _ in spans]
        if _well_formed(spans, filled, n_rows, n_cols):
            break
    else:
        spans = [(r, r, c, c) for r in range(n_rows) for c in range(n_cols)]
        filled = [True] * len(spans)

    align = [int(rng.integers(3)) for _ in range(n_cols)]  # left / center / right
    lines: list[list[str]] = []
    for (r0, r1, c0, c1), f in zip(spans, filled):
        if not f:
            lines.append([])
        elif r1 > r0 and c0 == c1 and rng.random() < cfg.multiline_prob:
            lines.append([_word(rng)] + [_word(rng, capital=False) for _ in range(r1 - r0)])
        else:
            lines.append([_cell_text(rng)])

    pad_x = int(rng.integers(cfg.pad[0], cfg.pad[1] + 1))
    pad_y = int(rng.integers(cfg.pad[0], cfg.pad[1] + 1))
    col_w = np.full(n_cols, 2 * pad_x + ren.char_w, dtype=np.int64)
    for (r0, r1, c0, c1), ls in zip(spans, lines):
        if c0 == c1 and ls:
            col_w[c0] = max(col_w[c0], max(ren.width(t) for t in ls) + 2 * pad_x)
    for (r0, r1, c0, c1), ls in zip(spans, lines):
        if c1 > c0 and ls:
            need = max(ren.width(t) for t in ls) + 2 * pad_x - col_w[c0:c1 + 1].sum()
            if need > 0:
                col_w[c1] += need
    row_h = np.full(n_rows, glyph_h + 2 * pad_y, dtype=np.int64)

    mx = int(rng.integers(cfg.margin[0], cfg.margin[1] + 1))
    my = int(rng.integers(cfg.margin[0], cfg.margin[1] + 1))
    width, height = int(col_w.sum()), int(row_h.sum())
    mx = max(mx, (32 - width + 1) // 2)
    my = max(my, (32 - height + 1) // 2)
    W, H = width + 2 * mx, height + 2 * my
    if H > cfg.max_size[0] or W > cfg.max_size[1]:
        raise InvalidAnnotation("table exceeds the maximum image size")
    xs = mx + np.concatenate([[0], np.cumsum(col_w)])
    ys = my + np.concatenate([[0], np.cumsum(row_h)])

    img = Image.new("RGB", (W, H), (255, 255, 255))
    draw = ImageDraw.Draw(img)
    ink = int(rng.integers(0, 60))
    cells, tokens = [], []
    for (r0, r1, c0, c1), ls in zip(spans, lines):
        box = BBox(float(xs[c0]), float(ys[r0]), float(xs[c1 + 1]), float(ys[r1 + 1]))
        boxes = []
        multi = len(ls) > 1
        for k, text in enumerate(ls):
            tw = ren.width(text)
            inner_l, inner_r = xs[c0] + pad_x, xs[c1 + 1] - pad_x
            a = align[c0] if c0 == c1 else 1
            x = inner_l if a == 0 else (inner_l + inner_r - tw) // 2 if a == 1 else inner_r - tw
            if multi:
                y = ys[r0 + k] + (row_h[r0 + k] - glyph_h) // 2
            else:
                y = (ys[r0] + ys[r1 + 1] - glyph_h) // 2
            x, y = int(x), int(y)
            ren.draw(draw, x, y, text, ink)
            tb = BBox(float(x), float(y), float(x + tw), float(y + glyph_h))
            boxes.append(tb)
            tokens.append((text, tb))
        cells.append(Cell(r0, r1, c0, c1, bbox=box, content=" ".join(ls), content_boxes=boxes or None))

    if rng.random() < cfg.ruling_prob:
        gray = int(rng.integers(40, 140))
        grid = rng.random() < 0.5
        if cfg.ruling_style != "mixed":
            grid = cfg.ruling_style == "grid"
        if grid:
            for c in cells:
                b = c.bbox
                draw.rectangle([b.x1, b.y1, b.x2, b.y2], outline=(gray, gray, gray))
        else:
            for y in (ys[0], ys[1], ys[-1]):
                draw.line([xs[0], y, xs[-1], y], fill=(gray, gray, gray))

    arr = np.asarray(img, dtype=np.float64)
    if cfg.noise > 0:
        arr = arr + rng.normal(0, cfg.noise, size=arr.shape[:2])[..., None]
    arr = np.clip(np.round(arr), 0, 255).astype(np.uint8)

    ann = Annotation(H, W, cells, tokens, image_id=f"synth-{seed:06d}")
    separator_bands(ann)  # raises InvalidAnnotation when the layout is not learnable
    return arr, ann


def has_spanning_cell(ann: Annotation) -> bool:
    return any(c.rowspan > 1 or c.colspan > 1 for c in ann.cells)
