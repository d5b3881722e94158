import itertools

import numpy as np
import pytest

from conftest import random_structure
from oracles import ted_by_forests, ted_by_mappings
from sem_tsr.metrics import (MAX_TREE_NODES, adjacency_relations, exact_structure, f1, levenshtein,
                             node_rename_cost, prf_from_counts, teds, teds_structures, text_distance,
                             tree_edit_distance)
from sem_tsr.structure import Cell, GridLattice, HTMLNode, TableStructure, structure_from_html


def shapes(n):
    """Every ordered tree shape with n nodes, as nested child lists."""
    if n == 1:
        return [[]]
    out = []
    for kids in forests(n - 1):
        out.append(kids)
    return out


def forests(n):
    if n == 0:
        return [[]]
    out = []
    for first in range(1, n + 1):
        for t in shapes(first):
            for rest in forests(n - first):
                out.append([t] + rest)
    return out


TAGS = ["table", "tr", "td"]


def build(shape, depth=0, texts=None):
    node = HTMLNode(TAGS[min(depth, 2)])
    if node.tag == "td" and texts:
        node.text = texts[len(shape) % len(texts)]
    node.children = [build(s, depth + 1, texts) for s in shape]
    return node


def random_tree(rng, n):
    nodes = [HTMLNode("table")]
    depth = [0]
    for _ in range(n - 1):
        p = int(rng.integers(0, len(nodes)))
        d = depth[p] + 1
        child = HTMLNode(TAGS[min(d, 2)], rowspan=int(rng.integers(1, 3)),
                         text=str(rng.choice(["", "a", "ab", "ba", "abc"])))
        nodes[p].children.insert(int(rng.integers(0, len(nodes[p].children) + 1)), child)
        nodes.append(child)
        depth.append(d)
    return nodes[0]


def test_catalan_enumeration():
    assert [len(shapes(n)) for n in range(1, 8)] == [1, 1, 2, 5, 14, 42, 132]


def test_ted_exhaustive_small_pairs():
    trees = [build(s, 0, ["x", "yy"]) for n in range(1, 9) for s in shapes(n)]
    checked = 0
    for a, b in itertools.product(trees, repeat=2):
        if a.size() + b.size() > 10:
            continue
        assert tree_edit_distance(a, b) == pytest.approx(ted_by_mappings(a, b, node_rename_cost))
        checked += 1
    assert checked == 4057


def test_ted_random_pairs_vs_forest_recursion(rng):
    for _ in range(100):
        a = random_tree(rng, int(rng.integers(1, 21)))
        b = random_tree(rng, int(rng.integers(1, 21)))
        assert tree_edit_distance(a, b) == pytest.approx(ted_by_forests(a, b, node_rename_cost))


def test_teds_identity(rng):
    for _ in range(50):
        a = random_tree(rng, int(rng.integers(1, 30)))
        b = random_tree(rng, int(rng.integers(1, 30)))
        assert teds(a, a).score == 1.0
        assert teds(a, b).score <= 1.0


def test_teds_range_on_tables(rng):
    for _ in range(50):
        a = random_structure(rng, int(rng.integers(1, 7)), int(rng.integers(1, 7)))
        b = random_structure(rng, int(rng.integers(1, 7)), int(rng.integers(1, 7)))
        assert teds_structures(a, a).score == 1.0
        assert 0.0 <= teds_structures(a, b, structure_only=True).score <= 1.0


def test_teds_known_value():
    a = structure_from_html("<table><tr><td>a</td><td>b</td></tr></table>")
    b = structure_from_html("<table><tr><td colspan=2>a b</td></tr></table>")
    # 4 vs 3 nodes: delete one td and rename the other (span mismatch costs 1)
    assert teds_structures(a, b).edit_distance == 2
    assert teds_structures(a, b).score == pytest.approx(0.5)


def test_structure_only_ignores_text():
    a = structure_from_html("<table><tr><td>a</td></tr></table>")
    b = structure_from_html("<table><tr><td>zzz</td></tr></table>")
    assert teds_structures(a, b, structure_only=True).score == 1.0
    assert teds_structures(a, b).score < 1.0


def test_levenshtein():
    assert levenshtein("kitten", "sitting") == 3
    assert text_distance("", "") == 0.0
    assert text_distance("ab", "") == 1.0


def test_node_guard():
    big = HTMLNode("table", [HTMLNode("tr") for _ in range(MAX_TREE_NODES + 1)])
    with pytest.raises(ValueError):
        tree_edit_distance(big, HTMLNode("table"))


def _simple(m, n):
    lat = GridLattice(10 * m + 40, 10 * n + 40, tuple(10.0 * k for k in range(1, m)), tuple(10.0 * k for k in range(1, n)))
    return TableStructure(lat, [Cell(r, r, c, c) for r in range(m) for c in range(n)])


def test_adjacency_closed_form():
    for m in range(1, 11):
        for n in range(1, 11):
            assert len(adjacency_relations(_simple(m, n))) == m * (n - 1) + n * (m - 1)


def test_adjacency_with_span():
    s = structure_from_html("<table><tr><td colspan=2>h</td></tr><tr><td>a</td><td>b</td></tr></table>")
    rels = {(s.cells[r.a].span, s.cells[r.b].span, r.direction) for r in adjacency_relations(s)}
    assert rels == {((0, 0, 0, 1), (1, 1, 0, 0), "vertical"), ((0, 0, 0, 1), (1, 1, 1, 1), "vertical"),
                    ((1, 1, 0, 0), (1, 1, 1, 1), "horizontal")}


def test_f1_identity_and_errors(rng):
    for _ in range(30):
        s = random_structure(rng, int(rng.integers(1, 7)), int(rng.integers(1, 7)))
        assert tuple(f1(s, s)) == (1.0, 1.0, 1.0)
        assert exact_structure(s, s)
    a = _simple(2, 2)
    b = structure_from_html("<table><tr><td colspan=2></td></tr><tr><td></td><td></td></tr></table>")
    p, r, f = f1(b, a)
    assert (p, r) == (pytest.approx(1 / 3), pytest.approx(1 / 4))
    assert not exact_structure(a, b)


def test_f1_content_matching():
    a = structure_from_html("<table><tr><td>x</td><td>y</td></tr></table>")
    b = structure_from_html("<table><tr><td> x </td><td>y</td></tr></table>")
    assert f1(a, b, match="content").f1 == 1.0
    with pytest.raises(ValueError):
        f1(a, b, match="nope")


def test_prf_edge_cases():
    assert tuple(prf_from_counts(0, 0, 0)) == (1.0, 1.0, 1.0)
    assert tuple(prf_from_counts(0, 3, 0)) == (0.0, 0.0, 0.0)
