"""Random k-regular multispecies graphs and their local neighbourhoods.

Each class block ``(a, b)`` with ``a <= b`` is sampled independently as a
configuration-model matching of half-edges.  Loops and repeated edges are
then removed by double-edge swaps inside the block, which keep every
per-class degree fixed.  If the repair gets stuck the block is resampled.
"""

from __future__ import annotations

import json
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from .errors import FeasibilityError, SamplingError, StructuralError
from .model import ModelSpec, class_sizes, is_feasible_size
from .stats import Estimate, binomial

MAX_RESAMPLES = 100
FORMAT_VERSION = 1


@dataclass
class MultispeciesGraph:
    """Simple undirected graph in CSR form with a class label per vertex."""

    N: int
    class_of: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    seed: int | None = None

    @property
    def adjacency(self) -> list[np.ndarray]:
        return [self.indices[self.indptr[i]:self.indptr[i + 1]] for i in range(self.N)]

    def neighbours(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def degree(self, v: int) -> int:
        return int(self.indptr[v + 1] - self.indptr[v])

    def edges(self) -> np.ndarray:
        """Edge list ``(u, v)`` with ``u < v``, lexicographically sorted."""
        src = np.repeat(np.arange(self.N), np.diff(self.indptr))
        keep = src < self.indices
        return np.column_stack([src[keep], self.indices[keep]])

    @property
    def n_edges(self) -> int:
        return len(self.indices) // 2

    @classmethod
    def from_edges(cls, N: int, class_of, edges, seed: int | None = None) -> "MultispeciesGraph":
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        indptr = np.zeros(N + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        return cls(N, np.asarray(class_of, dtype=np.int64), np.cumsum(indptr), dst, seed)

    def to_networkx(self):
        import networkx as nx

        g = nx.Graph()
        for v in range(self.N):
            g.add_node(v, cls=int(self.class_of[v]))
        g.add_edges_from(map(tuple, self.edges().tolist()))
        return g


def _block_rng(seed: int, a: int, b: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(a, b)))


def _bad_indices(u: np.ndarray, v: np.ndarray) -> list[int]:
    seen = set()
    bad = []
    for i, (x, y) in enumerate(zip(u.tolist(), v.tolist())):
        key = (x, y) if x < y else (y, x)
        if x == y or key in seen:
            bad.append(i)
        else:
            seen.add(key)
    return bad


def _repair(u: np.ndarray, v: np.ndarray, same_class: bool, rng: np.random.Generator,
            max_tries: int) -> bool:
    """Remove loops and multi-edges in place by double-edge swaps."""
    m = len(u)
    mult = Counter((min(x, y), max(x, y)) for x, y in zip(u.tolist(), v.tolist()))

    def is_bad(i):
        x, y = int(u[i]), int(v[i])
        return x == y or mult[(min(x, y), max(x, y))] > 1

    bad = _bad_indices(u, v)
    tries = 0
    while bad:
        i = bad[-1]
        if not is_bad(i):
            bad.pop()
            continue
        tries += 1
        if tries > max_tries:
            return False
        j = int(rng.integers(m))
        if j == i:
            continue
        x1, y1, x2, y2 = int(u[i]), int(v[i]), int(u[j]), int(v[j])
        # bipartite blocks must keep the class sides; intra-class blocks may
        # also use the crossed variant
        if same_class and rng.random() < 0.5:
            n1, n2 = (x1, x2), (y1, y2)
        else:
            n1, n2 = (x1, y2), (x2, y1)
        k1, k2 = (min(n1), max(n1)), (min(n2), max(n2))
        if n1[0] == n1[1] or n2[0] == n2[1] or k1 == k2 or mult[k1] or mult[k2]:
            continue
        mult[(min(x1, y1), max(x1, y1))] -= 1
        mult[(min(x2, y2), max(x2, y2))] -= 1
        mult[k1] += 1
        mult[k2] += 1
        u[i], v[i] = n1
        u[j], v[j] = n2
        if is_bad(j):
            bad.append(j)
    return True


def _sample_block(first_a: np.ndarray, first_b: np.ndarray, k_ab: int, k_ba: int,
                  same_class: bool, rng: np.random.Generator, diagnostics: list, block):
    for attempt in range(MAX_RESAMPLES):
        if same_class:
            stubs = rng.permutation(np.repeat(first_a, k_ab))
            u, v = stubs[0::2].copy(), stubs[1::2].copy()
        else:
            u = np.repeat(first_a, k_ab)
            v = rng.permutation(np.repeat(first_b, k_ba))
        initial = len(_bad_indices(u, v))
        if _repair(u, v, same_class, rng, max_tries=200 * len(u) + 1000):
            return u, v
        diagnostics.append({"block": list(block), "attempt": attempt, "initial_defects": initial})
    raise SamplingError(f"block {block}: no simple matching after {MAX_RESAMPLES} resamples",
                        diagnostics)


def _check_size(spec: ModelSpec, N: int) -> list[int]:
    if not is_feasible_size(spec, N):
        raise FeasibilityError(f"N = {N} is not a feasible size for this spec")
    sizes = class_sizes(spec, N)
    for a in range(spec.n):
        if spec.k[a][a] > sizes[a] - 1:
            raise FeasibilityError(f"class {a} has {sizes[a]} vertices, too few for k_aa = {spec.k[a][a]}")
        for b in range(spec.n):
            if b != a and spec.k[a][b] > sizes[b]:
                raise FeasibilityError(f"class {b} has {sizes[b]} vertices, too few for k_{a}{b} = {spec.k[a][b]}")
    return sizes


def generate(spec: ModelSpec, N: int, seed: int) -> MultispeciesGraph:
    """Sample a simple k-regular multispecies graph on ``N`` vertices.

    Vertices ``0..N_0-1`` have class 0, the next ``N_1`` class 1, and so on.
    The result is a deterministic function of ``(spec, N, seed)``.
    """
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    sizes = _check_size(spec, N)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    class_of = np.repeat(np.arange(spec.n), sizes)
    parts = []
    diagnostics: list = []
    for a in range(spec.n):
        for b in range(a, spec.n):
            if spec.k[a][b] == 0:
                continue
            va = np.arange(offsets[a], offsets[a + 1])
            vb = np.arange(offsets[b], offsets[b + 1])
            u, v = _sample_block(va, vb, spec.k[a][b], spec.k[b][a], a == b,
                                 _block_rng(seed, a, b), diagnostics, (a, b))
            parts.append(np.column_stack([u, v]))
    edges = np.concatenate(parts) if parts else np.zeros((0, 2), dtype=np.int64)
    return MultispeciesGraph.from_edges(N, class_of, edges, seed)


def class_neighbour_counts(graph: MultispeciesGraph, n_classes: int) -> np.ndarray:
    """``(N, n)`` matrix of neighbour counts per class."""
    src = np.repeat(np.arange(graph.N), np.diff(graph.indptr))
    out = np.zeros((graph.N, n_classes), dtype=np.int64)
    np.add.at(out, (src, graph.class_of[graph.indices]), 1)
    return out


def is_simple(graph: MultispeciesGraph) -> bool:
    for v in range(graph.N):
        nb = graph.neighbours(v)
        if np.any(nb == v) or len(np.unique(nb)) != len(nb):
            return False
    e = graph.edges()
    return len(e) * 2 == len(graph.indices)


def verify_regularity(graph: MultispeciesGraph, spec: ModelSpec) -> bool:
    """True iff the graph is simple and every class-a vertex has exactly
    ``k_ab`` neighbours of class ``b``."""
    if len(graph.class_of) != graph.N or np.any(graph.class_of < 0) or np.any(graph.class_of >= spec.n):
        return False
    if not is_simple(graph):
        return False
    counts = class_neighbour_counts(graph, spec.n)
    return bool(np.array_equal(counts, spec.k_array[graph.class_of]))


def edge_type_counts(graph: MultispeciesGraph) -> dict[tuple[int, int], int]:
    e = graph.edges()
    ca, cb = graph.class_of[e[:, 0]], graph.class_of[e[:, 1]]
    lo, hi = np.minimum(ca, cb), np.maximum(ca, cb)
    return dict(Counter(zip(lo.tolist(), hi.tolist())))


def expected_edge_type_counts(spec: ModelSpec, N: int) -> dict[tuple[int, int], int]:
    """``N alpha_a k_ab / 2^[a == b]`` for every class pair ``a <= b``."""
    out = {}
    for a in range(spec.n):
        for b in range(a, spec.n):
            if spec.k[a][b]:
                x = spec.alpha[a] * N * spec.k[a][b] / (2 if a == b else 1)
                out[(a, b)] = int(x)
    return out


# -- balls ------------------------------------------------------------------------


@dataclass
class Ball:
    center: tuple
    radius: int
    vertices: np.ndarray
    edges: list = field(default_factory=list)
    distance: dict = field(default_factory=dict)

    @property
    def is_tree(self) -> bool:
        if len(self.edges) != len(self.vertices) - 1:
            return False
        # connectivity through the induced edges
        adj = {v: [] for v in self.vertices.tolist()}
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        start = int(self.vertices[0])
        seen = {start}
        todo = [start]
        while todo:
            x = todo.pop()
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    todo.append(y)
        return len(seen) == len(self.vertices)


def ball(graph: MultispeciesGraph, center, t: int) -> Ball:
    """Induced subgraph on the vertices within distance ``t`` of ``center``
    (a vertex, or an edge ``(u, v)`` meaning either endpoint)."""
    if t < 0:
        raise ValueError("radius must be non-negative")
    roots = (int(center),) if np.isscalar(center) else tuple(int(x) for x in center)
    for r in roots:
        if not 0 <= r < graph.N:
            raise StructuralError(f"vertex {r} is not in the graph")
    if len(roots) == 2 and roots[1] not in graph.neighbours(roots[0]):
        raise StructuralError(f"{roots} is not an edge")
    dist = {r: 0 for r in roots}
    todo = deque(roots)
    while todo:
        x = todo.popleft()
        if dist[x] == t:
            continue
        for y in graph.neighbours(x).tolist():
            if y not in dist:
                dist[y] = dist[x] + 1
                todo.append(y)
    verts = np.array(sorted(dist))
    inside = set(dist)
    edges = [(u, w) for u in verts.tolist() for w in graph.neighbours(u).tolist()
             if u < w and w in inside]
    return Ball(roots, t, verts, edges, dist)


def tree_fraction_estimate(spec: ModelSpec, N: int, t: int, trials: int, seed: int) -> Estimate:
    """Fraction of (graph, uniform vertex) draws whose radius-``t`` ball is a tree."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    _check_size(spec, N)
    ss = np.random.SeedSequence(seed)
    hits = 0
    for child in ss.spawn(trials):
        gseed, cseed = child.generate_state(2, dtype=np.uint64)
        g = generate(spec, N, int(gseed))
        center = int(np.random.default_rng(int(cseed)).integers(N))
        hits += ball(g, center, t).is_tree
    return binomial(hits, trials)


# -- files --------------------------------------------------------------------------


def write_edgelist(graph: MultispeciesGraph, path, spec: ModelSpec | None = None) -> None:
    """Text format: ``N n`` header, ``N`` lines ``vertex class``, then one
    ``u v`` line per edge.  A JSON sidecar ``<path>.json`` records the seed
    and the spec digest."""
    n = int(graph.class_of.max()) + 1 if spec is None else spec.n
    with open(path, "w") as fh:
        fh.write(f"{graph.N} {n}\n")
        for v, c in enumerate(graph.class_of.tolist()):
            fh.write(f"{v} {c}\n")
        for u, v in graph.edges().tolist():
            fh.write(f"{u} {v}\n")
    side = {"schema_version": FORMAT_VERSION, "N": graph.N, "n": n, "seed": graph.seed,
            "edges": graph.n_edges, "spec_sha256": spec.digest() if spec is not None else None}
    with open(f"{path}.json", "w") as fh:
        json.dump(side, fh, indent=2)


def read_edgelist(path) -> MultispeciesGraph:
    with open(path) as fh:
        rows = [line.split() for line in fh if line.strip()]
    try:
        N, _ = int(rows[0][0]), int(rows[0][1])
        cls_rows = rows[1:1 + N]
        if len(cls_rows) != N:
            raise ValueError(f"expected {N} class lines, found {len(cls_rows)}")
        class_of = np.zeros(N, dtype=np.int64)
        for v, c in cls_rows:
            class_of[int(v)] = int(c)
        edges = [(int(u), int(v)) for u, v in rows[1 + N:]]
    except (IndexError, ValueError) as exc:
        raise StructuralError(f"malformed edge list {path}: {exc}") from exc
    seed = None
    try:
        with open(f"{path}.json") as fh:
            seed = json.load(fh).get("seed")
    except FileNotFoundError:
        pass
    return MultispeciesGraph.from_edges(N, class_of, edges, seed)

