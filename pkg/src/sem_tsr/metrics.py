"""Adjacency-relation precision/recall/F1 and tree-edit-distance similarity (TEDS)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

from .structure import HTMLNode, TableStructure, normalize_text, to_html_tree

MAX_TREE_NODES = 50_000


class AdjacencyRelation(NamedTuple):
    a: int
    b: int
    direction: str  # "horizontal" | "vertical"


def adjacency_relations(s: TableStructure) -> set[AdjacencyRelation]:
    """Neighbouring cell pairs: per occupied grid row the next cell to the right,
    per occupied grid column the next cell below."""
    owner = s.owner_grid()
    n_rows, n_cols = owner.shape
    rels = set()
    for k, cell in enumerate(s.cells):
        if cell.end_col + 1 < n_cols:
            for r in range(cell.start_row, cell.end_row + 1):
                j = int(owner[r, cell.end_col + 1])
                rels.add(AdjacencyRelation(min(k, j), max(k, j), "horizontal"))
        if cell.end_row + 1 < n_rows:
            for c in range(cell.start_col, cell.end_col + 1):
                j = int(owner[cell.end_row + 1, c])
                rels.add(AdjacencyRelation(min(k, j), max(k, j), "vertical"))
    return rels


def _relation_keys(s: TableStructure, match: str) -> set[tuple]:
    if match == "span":
        key = [c.span for c in s.cells]
    elif match == "content":
        key = [normalize_text(c.content) for c in s.cells]
    else:
        raise ValueError(f"unknown match mode {match!r}")
    return {(key[r.a], key[r.b], r.direction) for r in adjacency_relations(s)}


@dataclass
class PRF:
    precision: float
    recall: float
    f1: float
    tp: int = 0
    n_pred: int = 0
    n_gt: int = 0

    def __iter__(self):
        return iter((self.precision, self.recall, self.f1))


def prf_from_counts(tp: int, n_pred: int, n_gt: int) -> PRF:
    if n_pred == 0 and n_gt == 0:
        return PRF(1.0, 1.0, 1.0, 0, 0, 0)
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gt if n_gt else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return PRF(p, r, f, tp, n_pred, n_gt)


def f1(pred: TableStructure, gt: TableStructure, match: str = "span") -> PRF:
    """Relations match when both endpoint cells coincide (by grid span, or by
    normalized text with ``match="content"``) and the direction agrees."""
    p, g = _relation_keys(pred, match), _relation_keys(gt, match)
    return prf_from_counts(len(p & g), len(p), len(g))


def exact_structure(pred: TableStructure, gt: TableStructure) -> bool:
    return pred.shape == gt.shape and pred.spans() == gt.spans()


# ---------------------------------------------------------------------------
# tree edit distance


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def text_distance(a: str, b: str) -> float:
    """Levenshtein distance normalized by the longer string; 0 for two empty strings."""
    n = max(len(a), len(b))
    return levenshtein(a, b) / n if n else 0.0


def node_rename_cost(a: HTMLNode, b: HTMLNode, structure_only: bool = False) -> float:
    if a.tag != b.tag:
        return 1.0
    if a.tag == "td":
        if (a.rowspan, a.colspan) != (b.rowspan, b.colspan):
            return 1.0
        if not structure_only:
            return text_distance(normalize_text(a.text), normalize_text(b.text))
    return 0.0


def _postorder(root: HTMLNode):
    nodes, lml = [], []

    def visit(n):
        first = None
        for c in n.children:
            leaf = visit(c)
            if first is None:
                first = leaf
        idx = len(nodes)
        nodes.append(n)
        lml.append(idx if first is None else first)
        return lml[idx]

    visit(root)
    return nodes, lml


def _keyroots(lml: list[int]) -> list[int]:
    # the highest node for every distinct leftmost leaf
    last = {}
    for i, leaf in enumerate(lml):
        last[leaf] = i
    return sorted(last.values())


def tree_edit_distance(a: HTMLNode, b: HTMLNode,
                       rename: Callable[[HTMLNode, HTMLNode], float] | None = None) -> float:
    """Ordered tree edit distance (Zhang-Shasha) with unit insert/delete costs."""
    rename = rename or node_rename_cost
    an, al = _postorder(a)
    bn, bl = _postorder(b)
    if len(an) > MAX_TREE_NODES or len(bn) > MAX_TREE_NODES:
        raise ValueError(f"trees larger than {MAX_TREE_NODES} nodes are rejected")
    akr, bkr = _keyroots(al), _keyroots(bl)
    td = [[0.0] * len(bn) for _ in an]

    for i in akr:
        for j in bkr:
            li, lj = al[i], bl[j]
            m, n = i - li + 2, j - lj + 2
            fd = [[0.0] * n for _ in range(m)]
            for x in range(1, m):
                fd[x][0] = fd[x - 1][0] + 1
            for y in range(1, n):
                fd[0][y] = fd[0][y - 1] + 1
            for x in range(1, m):
                ii = li + x - 1
                for y in range(1, n):
                    jj = lj + y - 1
                    if al[ii] == li and bl[jj] == lj:
                        fd[x][y] = min(fd[x - 1][y] + 1, fd[x][y - 1] + 1,
                                       fd[x - 1][y - 1] + rename(an[ii], bn[jj]))
                        td[ii][jj] = fd[x][y]
                    else:
                        fd[x][y] = min(fd[x - 1][y] + 1, fd[x][y - 1] + 1,
                                       fd[al[ii] - li][bl[jj] - lj] + td[ii][jj])
    return td[-1][-1]


@dataclass
class TEDSResult:
    score: float
    edit_distance: float
    size_a: int
    size_b: int


def teds(a: HTMLNode, b: HTMLNode, structure_only: bool = False) -> TEDSResult:
    na, nb = a.size(), b.size()
    dist = tree_edit_distance(a, b, lambda x, y: node_rename_cost(x, y, structure_only))
    return TEDSResult(1.0 - dist / max(na, nb), dist, na, nb)


def teds_structures(pred: TableStructure, gt: TableStructure, structure_only: bool = False) -> TEDSResult:
    include = not structure_only
    return teds(to_html_tree(pred, include), to_html_tree(gt, include), structure_only)
