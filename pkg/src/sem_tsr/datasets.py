"""Reading and writing annotated table images.

The native layout is a directory of ``<id>.png`` images next to ``<id>.json``
annotations in the structure JSON format, extended with per-cell ``tokens``.
SciTSR-style JSON and PubTabNet-style JSONL are normalized into the same
:class:`Annotation` type.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .structure import BBox, Cell, StructureError, cells_from_tree, parse_html
from .supervision import Annotation, InvalidAnnotation

log = logging.getLogger(__name__)


def annotation_to_json(ann: Annotation, lattice=None) -> dict:
    by_cell: dict[int, list] = {}
    for text, box in ann.tokens:
        # tokens are stored under the cell whose content boxes contain them
        for k, c in enumerate(ann.cells):
            if c.content_boxes and box in c.content_boxes:
                by_cell.setdefault(k, []).append({"text": text, "bbox": box.as_list()})
                break
    cells = []
    for k, c in enumerate(ann.cells):
        d = {"row": [c.start_row, c.end_row], "col": [c.start_col, c.end_col],
             "bbox": c.bbox.as_list() if c.bbox else None, "content": c.content or "",
             "content_boxes": [b.as_list() for b in c.content_boxes or ()]}
        if k in by_cell:
            d["tokens"] = by_cell[k]
        cells.append(d)
    return {"image_id": ann.image_id, "image_size": [ann.image_h, ann.image_w],
            "row_lines": list(lattice.row_lines) if lattice else [],
            "col_lines": list(lattice.col_lines) if lattice else [],
            "cells": cells}


def annotation_from_json(data: dict) -> Annotation:
    h, w = data["image_size"]
    cells, tokens = [], []
    for d in data["cells"]:
        boxes = [BBox.from_list(b) for b in d.get("content_boxes") or ()]
        cells.append(Cell(d["row"][0], d["row"][1], d["col"][0], d["col"][1],
                          bbox=BBox.from_list(d["bbox"]) if d.get("bbox") else None,
                          content=d.get("content", ""), content_boxes=boxes or None))
        tokens += [(t["text"], BBox.from_list(t["bbox"])) for t in d.get("tokens", ())]
    return Annotation(int(h), int(w), cells, tokens, image_id=str(data.get("image_id", "")))


def save_sample(out_dir, name: str, image: np.ndarray, ann: Annotation) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image).save(out / f"{name}.png")
    (out / f"{name}.json").write_text(json.dumps(annotation_to_json(ann)))


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def iter_dataset(data_dir, rejects: list | None = None) -> Iterator[tuple[str, np.ndarray, Annotation]]:
    """(name, image, annotation) for every readable ``<id>.json`` + ``<id>.png`` pair.

    Broken samples are skipped and recorded in ``rejects`` when given.
    """
    for js in sorted(Path(data_dir).glob("*.json")):
        png = js.with_suffix(".png")
        if not png.exists():
            continue
        try:
            ann = annotation_from_json(json.loads(js.read_text()))
            img = load_image(png)
        except (OSError, KeyError, TypeError, ValueError) as exc:
            log.warning("skipping %s: %s", js.name, exc)
            if rejects is not None:
                rejects.append({"file": str(js), "reason": str(exc)})
            continue
        yield js.stem, img, ann


def load_dataset(data_dir, rejects: list | None = None) -> tuple[list[np.ndarray], list[Annotation]]:
    """Images and annotations of a native dataset directory; broken samples go to ``rejects``."""
    images, anns = [], []
    for _, img, ann in iter_dataset(data_dir, rejects):
        images.append(img)
        anns.append(ann)
    return images, anns


# ---------------------------------------------------------------------------
# external formats


def scitsr_annotation(data: dict, image_size: tuple[int, int], image_id: str = "") -> Annotation:
    """SciTSR-style structure: ``cells`` with start/end row/col, ``content`` (string or
    word list) and an optional ``pos`` box ``[x1, x2, y1, y2]`` or ``bbox`` ``[x1, y1, x2, y2]``."""
    cells, tokens = [], []
    for d in data["cells"]:
        content = d.get("content", "")
        if isinstance(content, list):
            content = " ".join(content)
        box = None
        if d.get("bbox"):
            box = BBox.from_list(d["bbox"])
        elif d.get("pos"):
            x1, x2, y1, y2 = d["pos"]
            box = BBox(float(x1), float(y1), float(x2), float(y2))
        cells.append(Cell(int(d["start_row"]), int(d["end_row"]), int(d["start_col"]), int(d["end_col"]),
                          content=content, content_boxes=[box] if box else None))
        if box is not None and content:
            tokens.append((content, box))
    return Annotation(int(image_size[0]), int(image_size[1]), cells, tokens, image_id=image_id)


def pubtabnet_annotation(record: dict, image_size: tuple[int, int] | None = None) -> Annotation:
    """One PubTabNet JSONL record: HTML structure tokens plus per-cell token lists and bboxes."""
    html = record["html"]
    structure = "".join(html["structure"]["tokens"])
    tree = parse_html(f"<table>{structure}</table>")
    spans, _, _ = cells_from_tree(tree)
    if len(spans) != len(html["cells"]):
        raise InvalidAnnotation(f"{len(spans)} <td> tags but {len(html['cells'])} cell records")
    cells, tokens = [], []
    for span, rec in zip(spans, html["cells"]):
        text = "".join(t for t in rec.get("tokens", ()) if not (t.startswith("<") and t.endswith(">")))
        box = BBox.from_list(rec["bbox"]) if rec.get("bbox") else None
        cells.append(Cell(span.start_row, span.end_row, span.start_col, span.end_col,
                          content=text, content_boxes=[box] if box else None))
        if box is not None:
            tokens.append((text, box))
    if image_size is None:
        xs = [b.x2 for _, b in tokens] or [32.0]
        ys = [b.y2 for _, b in tokens] or [32.0]
        image_size = (int(np.ceil(max(ys))) + 1, int(np.ceil(max(xs))) + 1)
    return Annotation(int(image_size[0]), int(image_size[1]), cells, tokens,
                      image_id=str(record.get("filename", record.get("imgid", ""))))


def load_pubtabnet(jsonl_path, image_dir=None, rejects: list | None = None) -> Iterator[tuple[np.ndarray | None, Annotation]]:
    with open(jsonl_path) as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            img = None
            try:
                if image_dir is not None:
                    img = load_image(Path(image_dir) / record["filename"])
                ann = pubtabnet_annotation(record, img.shape[:2] if img is not None else None)
            except (OSError, KeyError, ValueError, StructureError) as exc:
                if rejects is not None:
                    rejects.append({"file": record.get("filename"), "reason": str(exc)})
                log.warning("skipping %s: %s", record.get("filename"), exc)
                continue
            yield img, ann
