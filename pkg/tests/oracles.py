"""Independent slow references used by the tests and the acceptance gate."""

import math

import numpy as np


def bce_scalar(x: float, y: float) -> float:
    # direct -[y log s + (1-y) log(1-s)] with a stable log-sigmoid
    log_s = -math.log1p(math.exp(-x)) if x >= 0 else x - math.log1p(math.exp(x))
    log_1ms = -x + log_s
    return -(y * log_s + (1 - y) * log_1ms)


def splitter_loss_loop(logits: np.ndarray, mask: np.ndarray) -> float:
    h, w = logits.shape
    total, pos = 0.0, 0
    for i in range(h):
        for j in range(w):
            total += bce_scalar(float(logits[i, j]), float(mask[i, j]))
            pos += int(mask[i, j])
    return total / pos


def sigmoid(x: float) -> float:
    return 1 / (1 + math.exp(-x)) if x >= 0 else math.exp(x) / (1 + math.exp(x))


def project_loop(row_logits: np.ndarray, col_logits: np.ndarray):
    h, w = row_logits.shape
    row = [sum(sigmoid(float(row_logits[i, j])) for j in range(w)) / w for i in range(h)]
    col = [sum(sigmoid(float(col_logits[i, j])) for i in range(h)) / h for j in range(w)]
    return np.array(row), np.array(col)


def lines_loop(profile, binary) -> list[int]:
    """Scan for maximal runs of ones not touching the border; argmax with first-index ties."""
    n = len(binary)
    lines, i = [], 0
    while i < n:
        if binary[i] != 1:
            i += 1
            continue
        j = i
        while j + 1 < n and binary[j + 1] == 1:
            j += 1
        if i > 0 and j < n - 1:
            best = i
            for k in range(i, j + 1):
                if profile[k] > profile[best]:
                    best = k
            lines.append(best)
        i = j + 1
    return lines


def context_loop(m, E):
    n, d = E.shape
    total = sum(float(v) for v in m)
    if total == 0:
        return np.zeros(d)
    out = np.zeros(d)
    for i in range(n):
        for k in range(d):
            out[k] += float(m[i]) * float(E[i, k])
    return out / total


def merger_loss_loop(energies: np.ndarray, targets: np.ndarray) -> float:
    c, n = targets.shape
    total = 0.0
    for t in range(c):
        size = sum(targets[t])
        s = 0.0
        for i in range(n):
            s += bce_scalar(float(energies[t, i]), float(targets[t, i]))
        total += s / (c * size)
    return total


def lr_formula(t, lr_min, lr_max, t_max):
    if t >= t_max:
        return lr_min
    return lr_min + 0.5 * (lr_max - lr_min) * (1 + math.cos(t / t_max * math.pi))


def central_diff(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        gf[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-12))


# ---------------------------------------------------------------------------
# ordered tree edit distance


def _flatten(root):
    """Postorder nodes with, per node, the set of its ancestors' postorder indices."""
    nodes, anc = [], []

    def visit(n, path):
        for c in n.children:
            visit(c, path + [n])
        nodes.append(n)
        anc.append(path)

    visit(root, [])
    index = {id(n): i for i, n in enumerate(nodes)}
    return nodes, [{index[id(p)] for p in a} for a in anc]


def ted_by_mappings(a, b, rename) -> float:
    """Minimum over every valid ordered mapping: rename matched pairs, delete/insert the rest."""
    an, aa = _flatten(a)
    bn, ba = _flatten(b)
    best = [float("inf")]

    def ok(pairs, i, j):
        # earlier postorder nodes can only be descendants of the new pair
        for i2, j2 in pairs:
            if (i in aa[i2]) != (j in ba[j2]):
                return False
        return True

    def rec(i, last_j, pairs, cost):
        if i == len(an):
            total = cost + (len(an) - len(pairs)) + (len(bn) - len(pairs))
            best[0] = min(best[0], total)
            return
        rec(i + 1, last_j, pairs, cost)
        for j in range(last_j + 1, len(bn)):
            if ok(pairs, i, j):
                pairs.append((i, j))
                rec(i + 1, j, pairs, cost + rename(an[i], bn[j]))
                pairs.pop()

    rec(0, -1, [], 0.0)
    return best[0]


def ted_by_forests(a, b, rename) -> float:
    """Classic recursion on the rightmost roots of two forests, memoized on the forests."""
    from functools import lru_cache

    def freeze(n):
        return (id(n), tuple(freeze(c) for c in n.children))

    lookup = {}
    for t in (a, b):
        for n in t.iter():
            lookup[id(n)] = n

    def size(f):
        return sum(1 + size(t[1]) for t in f)

    @lru_cache(maxsize=None)
    def d(f, g):
        if not f and not g:
            return 0.0
        if not g:
            return float(size(f))
        if not f:
            return float(size(g))
        v, w = f[-1], g[-1]
        return min(
            d(f[:-1] + v[1], g) + 1,
            d(f, g[:-1] + w[1]) + 1,
            d(v[1], w[1]) + d(f[:-1], g[:-1]) + rename(lookup[v[0]], lookup[w[0]]),
        )

    return d((freeze(a),), (freeze(b),))
