import json
import warnings

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_partition, random_structure
from sem_tsr.structure import (STRUCTURE_SCHEMA, BBox, Cell, GridLattice, StructureError, TableStructure,
                               assemble_structure, assign_tokens, cells_to_maps, check_partition, iou,
                               is_rectangular, match_content, parse_html, reading_order, structure_from_html,
                               structure_from_json, structure_to_json, to_html)


def test_bbox_validation():
    with pytest.raises(StructureError):
        BBox(3, 0, 1, 1)
    b = BBox(1, 2, 4, 6)
    assert (b.width, b.height, b.area, b.center) == (3, 4, 12, (2.5, 4.0))
    assert BBox.from_list(b.as_list()) == b


def test_iou_values():
    assert iou(BBox(0, 0, 2, 1), BBox(1, 0, 3, 1)) == pytest.approx(1 / 3)
    assert iou(BBox(0, 0, 1, 1), BBox(2, 2, 3, 3)) == 0.0
    assert iou(BBox(0, 0, 5, 5), BBox(0, 0, 5, 5)) == 1.0


@given(st.lists(st.floats(0, 50), min_size=8, max_size=8))
def test_iou_symmetric_and_bounded(v):
    a = BBox(min(v[0], v[1]), min(v[2], v[3]), max(v[0], v[1]), max(v[2], v[3]))
    b = BBox(min(v[4], v[5]), min(v[6], v[7]), max(v[4], v[5]), max(v[6], v[7]))
    assert iou(a, b) == pytest.approx(iou(b, a))
    assert 0.0 <= iou(a, b) <= 1.0


def test_lattice_rejects_lines_outside():
    with pytest.raises(StructureError):
        GridLattice(40, 40, (0.0,), ())
    with pytest.raises(StructureError):
        GridLattice(40, 40, (), (40.0,))
    with pytest.raises(StructureError):
        GridLattice(40, 40, (20.0, 10.0), ())


def test_grid_boxes_tile_image(rng):
    for _ in range(50):
        s = random_structure(rng, int(rng.integers(1, 7)), int(rng.integers(1, 7)))
        lat = s.lattice
        assert sum(b.area for b in lat.grid_boxes) == pytest.approx(lat.image_h * lat.image_w)
        assert len(lat.grid_boxes) == lat.n_grids
        # row-major: second box is to the right of the first when there are columns
        if lat.n_cols > 1:
            assert lat.grid_boxes[1].x1 == lat.grid_boxes[0].x2


def test_check_partition_detects_overlap_and_gap():
    with pytest.raises(StructureError):
        check_partition([Cell(0, 0, 0, 1), Cell(0, 0, 1, 1)], 1, 2)
    with pytest.raises(StructureError):
        check_partition([Cell(0, 0, 0, 0)], 1, 2)
    check_partition([Cell(0, 0, 0, 1)], 1, 2)


def test_assemble_roundtrip_of_rectangular_maps(rng):
    for _ in range(200):
        s = random_structure(rng, int(rng.integers(1, 7)), int(rng.integers(1, 7)))
        maps = cells_to_maps(s.cells, *s.shape)
        assert (maps.sum(axis=0) == 1).all()
        out = assemble_structure(s.lattice, maps[rng.permutation(len(maps))])
        assert out.spans() == s.spans()
        assert not any(c.rectified for c in out.cells)


def test_assemble_rejects_overlap_and_gaps():
    lat = GridLattice(40, 40, (20.0,), (20.0,))
    with pytest.raises(StructureError):
        assemble_structure(lat, np.array([[1, 1, 0, 0], [0, 1, 1, 1]]))
    with pytest.raises(StructureError):
        assemble_structure(lat, np.array([[1, 1, 0, 0]]))


def test_assemble_rectifies_l_shape():
    lat = GridLattice(40, 40, (20.0,), (20.0,))
    with pytest.warns(RuntimeWarning):
        s = assemble_structure(lat, np.array([[1, 1, 1, 0], [0, 0, 0, 1]]))
    assert s.spans() == {(0, 1, 0, 1)}
    assert s.cells[0].rectified


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.data())
def test_assemble_always_partitions(m, n, data):
    labels = data.draw(st.lists(st.integers(0, m * n - 1), min_size=m * n, max_size=m * n))
    uniq = sorted(set(labels))
    maps = np.array([[int(lab == u) for lab in labels] for u in uniq])
    lat = GridLattice(40, 40, tuple(40 * k / m for k in range(1, m)), tuple(40 * k / n for k in range(1, n)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        s = assemble_structure(lat, maps)
    check_partition(s.cells, m, n)
    for c in s.cells:
        mask = np.zeros((m, n), bool)
        mask[c.start_row:c.end_row + 1, c.start_col:c.end_col + 1] = True
        assert is_rectangular(mask)


def test_reading_order_lines_then_x():
    toks = [("b", BBox(20, 0, 30, 10)), ("c", BBox(0, 20, 10, 30)), ("a", BBox(0, 1, 10, 11))]
    assert [t for t, _ in reading_order(toks)] == ["a", "b", "c"]


def test_match_content_by_iou():
    lat = GridLattice(40, 60, (20.0,), (30.0,))
    cells = [Cell(0, 0, 0, 1), Cell(1, 1, 0, 0), Cell(1, 1, 1, 1)]
    for c in cells:
        c.bbox = lat.span_box(*c.span)
    s = TableStructure(lat, cells)
    toks = [("Head", BBox(20, 5, 40, 12)), ("x", BBox(5, 25, 12, 32)), ("y", BBox(35, 25, 45, 32)),
            ("lost", BBox(100, 100, 110, 110))]
    out, unassigned = match_content(s, toks)
    assert [c.content for c in out.cells] == ["Head", "x", "y"]
    assert unassigned == [3]


def test_assign_tokens_max_iou():
    boxes = [BBox(0, 0, 10, 10), BBox(10, 0, 20, 10)]
    groups, un = assign_tokens(boxes, [("t", BBox(8, 0, 18, 10))])
    assert groups == [[], [0]] and un == []


def test_html_roundtrip(rng):
    for _ in range(100):
        s = random_structure(rng, int(rng.integers(1, 7)), int(rng.integers(1, 7)))
        for k, c in enumerate(s.cells):
            c.content = f"c{k} & <x>"
        back = structure_from_html(to_html(s))
        assert back.spans() == s.spans()
        assert sorted(c.content for c in back.cells) == sorted(c.content for c in s.cells)


def test_html_attributes_only_when_spanning():
    lat = GridLattice(40, 40, (), (20.0,))
    s = TableStructure(lat, [Cell(0, 0, 0, 1, content="a")])
    assert to_html(s) == '<table><tr><td colspan="2">a</td></tr></table>'


def test_parse_html_th_and_tbody():
    tree = parse_html("<table><thead><tr><th>a</th><th>b</th></tr></thead><tbody><tr><td colspan=2>c</td></tr></tbody></table>")
    assert [len(tr.children) for tr in tree.children] == [2, 1]
    assert structure_from_html(tree).spans() == {(0, 0, 0, 0), (0, 0, 1, 1), (1, 1, 0, 1)}


def test_json_roundtrip_and_schema(rng):
    for _ in range(50):
        s = random_structure(rng, int(rng.integers(1, 7)), int(rng.integers(1, 7)))
        doc = json.loads(json.dumps(structure_to_json(s)))
        jsonschema.validate(doc, STRUCTURE_SCHEMA)
        back = structure_from_json(doc)
        assert back.spans() == s.spans()
        assert back.lattice == s.lattice


def test_structure_rejects_bad_partition():
    lat = GridLattice(40, 40, (), (20.0,))
    with pytest.raises(StructureError):
        TableStructure(lat, [Cell(0, 0, 0, 0)])


def test_random_partition_helper_is_partition(rng):
    for _ in range(100):
        m, n = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        check_partition(random_partition(rng, m, n), m, n)
