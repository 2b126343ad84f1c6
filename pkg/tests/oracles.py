"""Slow, independent reference implementations used only by the tests.

Nothing here imports the package's topology code; everything is plain
Python over coordinates so that a bug in the vectorized kernels cannot hide
in a shared helper.
"""

from __future__ import annotations

import itertools

import numpy as np

MIN, MAX, JOIN, SPLIT = 1, 2, 4, 8


def coords(dims, v):
    out = []
    for d in reversed(dims):
        out.append(v % d)
        v //= d
    return tuple(reversed(out))


def index(dims, c):
    v = 0
    for d, x in zip(dims, c):
        v = v * d + x
    return v


def offsets(ndim):
    pos = [o for o in itertools.product((0, 1), repeat=ndim) if any(o)]
    return pos + [tuple(-x for x in o) for o in pos]


def neighbors(dims, v):
    c = coords(dims, v)
    out = []
    for o in offsets(len(dims)):
        n = tuple(a + b for a, b in zip(c, o))
        if all(0 <= x < d for x, d in zip(n, dims)):
            out.append(index(dims, n))
    return sorted(out)


def below(values, u, v):
    """SoS: u strictly below v."""
    return (values[u], u) < (values[v], v)


def _components(nodes, adjacent):
    nodes = set(nodes)
    seen, count = set(), 0
    for s in nodes:
        if s in seen:
            continue
        count += 1
        stack = [s]
        seen.add(s)
        while stack:
            x = stack.pop()
            for y in nodes:
                if y not in seen and adjacent(x, y):
                    seen.add(y)
                    stack.append(y)
    return count


def link_counts(values, dims, v):
    """(lower, upper) link component counts of ``v``.

    The Freudenthal triangulation is a flag complex, so two link vertices are
    joined in the link exactly when they are grid neighbors of each other.
    """
    nb = neighbors(dims, v)
    nbset = {u: set(neighbors(dims, u)) for u in nb}
    adj = lambda a, b: b in nbset[a]
    lo = [u for u in nb if below(values, u, v)]
    hi = [u for u in nb if below(values, v, u)]
    return _components(lo, adj), _components(hi, adj)


def flags(values, dims):
    values = np.asarray(values, dtype=float).ravel()
    out = np.zeros(values.size, dtype=np.uint8)
    for v in range(values.size):
        lo, hi = link_counts(values, dims, v)
        f = 0
        if lo == 0:
            f |= MIN
        if hi == 0:
            f |= MAX
        if lo >= 2:
            f |= JOIN
        if hi >= 2:
            f |= SPLIT
        out[v] = f
    return out


def merge_tree_arcs(values, dims, join=True):
    """Arcs of the join (or split) tree by a naive set-merging sweep.

    Each component is labelled by its extremal extremum (lowest minimum for
    the join tree).  When a vertex merges several components, all but the
    one with the most extreme label end an arc at that vertex.  The final
    component ends at the opposite global extremum.
    """
    values = np.asarray(values, dtype=float).ravel()
    n = values.size
    key = [(values[v], v) for v in range(n)]
    order = sorted(range(n), key=lambda v: key[v], reverse=not join)
    comps: list[tuple[set, int]] = []
    arcs = set()
    for v in order:
        nb = set(neighbors(dims, v))
        touching = [c for c in comps if c[0] & nb]
        if not touching:
            comps.append(({v}, v))
            continue
        labels = sorted((c[1] for c in touching), key=lambda m: key[m], reverse=not join)
        winner = labels[0]
        if len(touching) >= 2:
            for m in labels[1:]:
                arcs.add((m, v))
        merged = set().union(*(c[0] for c in touching)) | {v}
        comps = [c for c in comps if c not in touching] + [(merged, winner)]
    assert len(comps) == 1
    root = order[-1]
    arcs.add((comps[0][1], root))
    return arcs


def longest_path_vertices(n, edges):
    """Vertices on the longest directed path, by exhaustive DFS."""
    succ = {u: [] for u in range(n)}
    for u, v in edges:
        succ[u].append(v)

    def walk(u, depth):
        best = depth
        for v in succ[u]:
            best = max(best, walk(v, depth + 1))
        return best

    if not edges:
        return 0
    return max(walk(u, 1) for u in range(n))


def cascade_1d(fhat, f, xi, steps):
    """Adjacent-pair correction of a strictly decreasing 1D sequence.

    Each pass lowers the later vertex of every adjacent pair that is not
    strictly decreasing in SoS order.  Returns (passes, final values,
    targets per pass).
    """
    g = list(map(float, fhat))
    counts = [0] * len(g)
    delta = xi / steps
    history = []
    while True:
        t = [i + 1 for i in range(len(g) - 1) if not (g[i], i) > (g[i + 1], i + 1)]
        history.append(t)
        if not t:
            return len(history), g, history
        for v in t:
            c = counts[v] + 1
            val = fhat[v] - c * delta
            if c <= steps and val >= f[v] - xi:
                g[v], counts[v] = val, c
            else:
                g[v], counts[v] = f[v] - xi, 0
