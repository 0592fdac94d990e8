"""Problem instances: the class structure (n, k, alpha), couplings and fields.

Classes are labelled ``0 .. n-1`` throughout the package.  The directed class
pairs ``(a, b)`` with ``k[a][b] != 0`` are kept in lexicographic order; that
order is the index map of every cavity vector and non-backtracking matrix.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import SpecError, StructuralError

SPEC_KEYS = ("n", "k", "alpha", "beta", "h")


def _to_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise SpecError(f"alpha entry {x!r} is not a rational number")
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        # decimal reading: 0.1 -> 1/10 rather than the binary expansion
        return Fraction(repr(x))
    if isinstance(x, str):
        try:
            return Fraction(x.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise SpecError(f"cannot parse alpha entry {x!r}") from exc
    raise SpecError(f"alpha entry {x!r} is not a rational number")


@dataclass(frozen=True)
class ModelSpec:
    """Full problem instance.

    Attributes:
        n: number of classes.
        k: ``n x n`` non-negative integer matrix; ``k[a][b]`` is the number of
            class-``b`` neighbours of each class-``a`` vertex.
        alpha: class proportions as exact fractions.
        beta: coupling per unordered class pair, keyed by ``(a, b)`` with
            ``a <= b``.  Every pair in the support of ``k`` must be present.
        h: external field per class.

    ``beta`` and ``h`` also accept a scalar, meaning a homogeneous value.
    """

    n: int
    k: tuple
    alpha: tuple
    beta: Mapping
    h: tuple

    def __post_init__(self):
        n = self.n
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
            raise SpecError(f"n must be a positive integer, got {n!r}")
        n = int(n)
        object.__setattr__(self, "n", n)

        try:
            rows = [list(r) for r in self.k]
        except TypeError as exc:
            raise SpecError("k must be a matrix (sequence of rows)") from exc
        if len(rows) != n or any(len(r) != n for r in rows):
            raise SpecError(f"k must be {n}x{n}")
        k = []
        for r in rows:
            row = []
            for v in r:
                if isinstance(v, bool) or not float(v).is_integer() or v < 0:
                    raise SpecError(f"k entries must be non-negative integers, got {v!r}")
                row.append(int(v))
            k.append(tuple(row))
        object.__setattr__(self, "k", tuple(k))

        alpha = tuple(_to_fraction(x) for x in self.alpha)
        if len(alpha) != n:
            raise SpecError(f"alpha must have {n} entries, got {len(alpha)}")
        if any(x <= 0 for x in alpha):
            raise SpecError("alpha entries must be positive")
        object.__setattr__(self, "alpha", alpha)

        h = self.h
        if np.isscalar(h):
            h = (float(h),) * n
        h = tuple(float(x) for x in h)
        if len(h) != n:
            raise SpecError(f"h must have {n} entries, got {len(h)}")
        if not all(math.isfinite(x) for x in h):
            raise SpecError("fields must be finite")
        object.__setattr__(self, "h", h)

        support = {(min(a, b), max(a, b)) for a in range(n) for b in range(n)
                   if k[a][b] != 0}
        beta = self.beta
        if np.isscalar(beta):
            beta = {p: float(beta) for p in support}
        norm: dict[tuple[int, int], float] = {}
        for key, value in dict(beta).items():
            try:
                a, b = (int(x) for x in key)
            except (TypeError, ValueError) as exc:
                raise SpecError(f"beta key {key!r} is not a class pair") from exc
            p = (min(a, b), max(a, b))
            if not (0 <= p[0] and p[1] < n):
                raise SpecError(f"beta key {key!r} out of range")
            if p not in support:
                raise SpecError(f"beta given for pair {p} outside the support of k")
            v = float(value)
            if not math.isfinite(v):
                raise SpecError(f"beta{p} must be finite")
            if v < 0:
                raise SpecError(f"beta{p} = {v} is negative; only ferromagnetic couplings are supported")
            if p in norm and norm[p] != v:
                raise SpecError(f"conflicting values for beta{p}")
            norm[p] = v
        missing = sorted(support - norm.keys())
        if missing:
            raise SpecError(f"beta missing for class pairs {missing}")
        object.__setattr__(self, "beta", dict(sorted(norm.items())))

    # -- derived quantities -------------------------------------------------

    @property
    def k_array(self) -> np.ndarray:
        return np.array(self.k, dtype=np.int64)

    @property
    def degrees(self) -> tuple[int, ...]:
        """k_a = sum_b k_ab."""
        return tuple(sum(r) for r in self.k)

    def coupling(self, a: int, b: int) -> float:
        return self.beta[(min(a, b), max(a, b))]

    def beta_matrix(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        for (a, b), v in self.beta.items():
            out[a, b] = out[b, a] = v
        return out

    @property
    def h_array(self) -> np.ndarray:
        return np.array(self.h, dtype=float)

    def is_homogeneous_beta(self) -> bool:
        return len(set(self.beta.values())) <= 1

    def with_beta(self, beta) -> "ModelSpec":
        """Copy with couplings replaced (scalar) or partially updated (mapping)."""
        if np.isscalar(beta):
            new = float(beta)
        else:
            new = dict(self.beta)
            for (a, b), v in dict(beta).items():
                new[(min(a, b), max(a, b))] = float(v)
        return ModelSpec(self.n, self.k, self.alpha, new, self.h)

    def with_h(self, h) -> "ModelSpec":
        return ModelSpec(self.n, self.k, self.alpha, self.beta, h)

    def scaled(self, t: float) -> "ModelSpec":
        """All couplings multiplied by ``t``."""
        return ModelSpec(self.n, self.k, self.alpha,
                         {p: t * v for p, v in self.beta.items()}, self.h)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "k": [list(r) for r in self.k],
            "alpha": [f"{x.numerator}/{x.denominator}" for x in self.alpha],
            "beta": [{"a": a, "b": b, "value": v} for (a, b), v in self.beta.items()],
            "h": list(self.h),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ModelSpec":
        if not isinstance(doc, Mapping):
            raise SpecError("spec document must be a JSON object")
        unknown = set(doc) - set(SPEC_KEYS)
        if unknown:
            raise SpecError(f"unknown keys in spec document: {sorted(unknown)}")
        missing = [key for key in SPEC_KEYS if key not in doc]
        if missing:
            raise SpecError(f"missing keys in spec document: {missing}")
        beta_doc = doc["beta"]
        if not isinstance(beta_doc, list):
            raise SpecError("beta must be a list of {a, b, value} objects")
        beta = {}
        for item in beta_doc:
            if not isinstance(item, Mapping) or set(item) != {"a", "b", "value"}:
                raise SpecError(f"bad beta entry {item!r}; expected keys a, b, value")
            key = (item["a"], item["b"])
            if any(isinstance(x, bool) or not isinstance(x, int) for x in key):
                raise SpecError(f"beta class labels must be integers: {item!r}")
            p = (min(key), max(key))
            if p in beta and beta[p] != item["value"]:
                raise SpecError(f"conflicting values for beta{p}")
            beta[p] = item["value"]
        for name in ("alpha", "h", "k"):
            if not isinstance(doc[name], list):
                raise SpecError(f"{name} must be a list")
        try:
            return cls(doc["n"], doc["k"], doc["alpha"], beta, doc["h"])
        except (TypeError, ValueError) as exc:
            if isinstance(exc, SpecError):
                raise
            raise SpecError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form."""
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def load_spec(path) -> ModelSpec:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: not valid JSON ({exc})") from exc
    except OSError as exc:
        raise SpecError(f"cannot read spec {path}: {exc.strerror}") from exc
    return ModelSpec.from_dict(doc)


def save_spec(spec: ModelSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2)
        fh.write("\n")


# -- class edge set -----------------------------------------------------------


@dataclass(frozen=True)
class ClassEdgeSet:
    """Directed class pairs with nonzero k, lexicographically ordered."""

    pairs: tuple[tuple[int, int], ...]
    index: Mapping[tuple[int, int], int] = field(repr=False)
    neighbours: tuple[tuple[int, ...], ...] = field(repr=False)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __contains__(self, pair) -> bool:
        return tuple(pair) in self.index

    @property
    def source(self) -> np.ndarray:
        """Class ``a`` of each pair ``(a, b)``."""
        return np.array([a for a, _ in self.pairs], dtype=np.int64)

    @property
    def target(self) -> np.ndarray:
        return np.array([b for _, b in self.pairs], dtype=np.int64)

    @property
    def reverse(self) -> np.ndarray:
        """Index of ``(b, a)`` for each ``(a, b)``."""
        return np.array([self.index[(b, a)] for a, b in self.pairs], dtype=np.int64)


@lru_cache(maxsize=256)
def _edge_set_for(k: tuple) -> ClassEdgeSet:
    n = len(k)
    pairs = tuple((a, b) for a in range(n) for b in range(n) if k[a][b] != 0)
    index = {p: i for i, p in enumerate(pairs)}
    nbrs = tuple(tuple(b for b in range(n) if k[a][b] != 0) for a in range(n))
    return ClassEdgeSet(pairs, index, nbrs)


def class_edge_set(spec: ModelSpec) -> ClassEdgeSet:
    es = _edge_set_for(spec.k)
    for a, b in es.pairs:
        if (b, a) not in es.index:
            raise StructuralError(
                f"k_{a}{b} != 0 but k_{b}{a} == 0: the class graph is not symmetric")
    return es


# -- feasibility --------------------------------------------------------------


@dataclass
class FeasibilityReport:
    verdict: bool
    violated_conditions: list[str]
    smallest_feasible_N: int | None
    simply_cyclic: bool
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "violated_conditions": list(self.violated_conditions),
            "smallest_feasible_N": self.smallest_feasible_N,
            "simply_cyclic": self.simply_cyclic,
            "notes": list(self.notes),
        }


def _strongly_connected(adj: np.ndarray) -> bool:
    """Strong connectivity of the digraph with boolean adjacency ``adj``."""
    m = adj.shape[0]
    if m == 0:
        return True

    def reach(mat):
        seen = np.zeros(m, dtype=bool)
        seen[0] = True
        todo = deque([0])
        while todo:
            u = todo.popleft()
            for v in np.flatnonzero(mat[u]):
                if not seen[v]:
                    seen[v] = True
                    todo.append(v)
        return seen.all()

    return reach(adj) and reach(adj.T)


def is_irreducible(spec: ModelSpec) -> bool:
    return _strongly_connected(spec.k_array > 0)


def validate_spec(spec: ModelSpec) -> FeasibilityReport:
    """Check conditions i (proportions sum to one), ii (edge balance) and
    irreducibility of k.  The size-dependent conditions are handled by
    :func:`feasible_sizes`."""
    violated = []
    if sum(spec.alpha) != 1:
        violated.append("i")
    n, k, al = spec.n, spec.k, spec.alpha
    if any(al[a] * k[a][b] != al[b] * k[b][a]
           for a in range(n) for b in range(a + 1, n)):
        violated.append("ii")
    if not is_irreducible(spec):
        violated.append("irreducibility")
    notes = [f"beta{p} = 0 on a class edge; couplings are expected to be positive"
             for p, v in spec.beta.items() if v == 0]
    verdict = not violated
    return FeasibilityReport(
        verdict=verdict,
        violated_conditions=violated,
        smallest_feasible_N=_smallest_size(spec) if verdict else None,
        simply_cyclic=is_simply_cyclic(spec),
        notes=notes,
    )


def _size_ok(spec: ModelSpec, N: int) -> bool:
    for a in range(spec.n):
        Na = spec.alpha[a] * N
        if Na.denominator != 1 or (Na.numerator * spec.k[a][a]) % 2:
            return False
    return True


def _lcm_denominator(spec: ModelSpec) -> int:
    return math.lcm(*(x.denominator for x in spec.alpha))


def _smallest_size(spec: ModelSpec) -> int:
    step = _lcm_denominator(spec)
    return step if _size_ok(spec, step) else 2 * step


def feasible_sizes(spec: ModelSpec, n_max: int) -> list[int]:
    """All N <= n_max with every alpha_a N integer and alpha_a N k_aa even."""
    step = _lcm_denominator(spec)
    return [N for N in range(step, n_max + 1, step) if _size_ok(spec, N)]


def is_feasible_size(spec: ModelSpec, N: int) -> bool:
    return N >= 1 and _size_ok(spec, N)


def class_sizes(spec: ModelSpec, N: int) -> list[int]:
    return [int(x * N) for x in spec.alpha]


# -- class-graph topology -------------------------------------------------------


def is_simply_cyclic(spec: ModelSpec) -> bool:
    """Two oppositely directed cycles, one of which never allows backtracking.

    A single class is never simply cyclic (its only edge is a self-edge).
    """
    n, k = spec.n, spec.k
    if n == 1:
        return False
    plus = {(a, (a + 1) % n) for a in range(n)}
    minus = {(a, (a - 1) % n) for a in range(n)}
    for a in range(n):
        for b in range(n):
            if (k[a][b] > 0) != ((a, b) in plus or (a, b) in minus):
                return False
    heavy_plus = any(k[a][b] >= 2 for a, b in plus)
    heavy_minus = any(k[a][b] >= 2 for a, b in minus)
    return not (heavy_plus and heavy_minus)


def star_walk_reach(spec: ModelSpec, a: int, b: int) -> list[int | None]:
    """First depth at which each class appears in the pruned tree rooted at a
    class-``a`` vertex that lost one class-``b`` child.

    Breadth-first search over (class, parent class) states; a vertex of class
    ``x`` whose parent has class ``p`` has ``k[x][y] - [y == p]`` children of
    class ``y``.  Entries are ``None`` for classes never reached.
    """
    from .errors import RegimeError

    es = class_edge_set(spec)
    if (a, b) not in es:
        raise StructuralError(f"({a}, {b}) is not a class edge")
    for c, kc in enumerate(spec.degrees):
        if kc < 2:
            raise RegimeError(f"class {c} has degree {kc} < 2", reason="degree")
    depth: list[int | None] = [None] * spec.n
    depth[a] = 0
    seen = {(a, b)}
    frontier = [(a, b)]
    s = 0
    while frontier:
        s += 1
        nxt = []
        for x, p in frontier:
            for y in es.neighbours[x]:
                if spec.k[x][y] - (y == p) < 1:
                    continue
                if depth[y] is None:
                    depth[y] = s
                if (y, x) not in seen:
                    seen.add((y, x))
                    nxt.append((y, x))
        frontier = nxt
    return depth


# -- random instances ------------------------------------------------------------


def alpha_from_k(k: Sequence[Sequence[int]]) -> tuple[Fraction, ...] | None:
    """Class proportions balancing ``alpha_a k_ab = alpha_b k_ba``, if any.

    Returns ``None`` when k is not irreducible or the balance equations are
    inconsistent.
    """
    n = len(k)
    ratio: list[Fraction | None] = [None] * n
    ratio[0] = Fraction(1)
    todo = deque([0])
    while todo:
        a = todo.popleft()
        for b in range(n):
            if k[a][b] == 0:
                continue
            if k[b][a] == 0:
                return None
            r = ratio[a] * Fraction(k[a][b], k[b][a])
            if ratio[b] is None:
                ratio[b] = r
                todo.append(b)
            elif ratio[b] != r:
                return None
    if any(r is None for r in ratio):
        return None
    total = sum(ratio)
    return tuple(r / total for r in ratio)


def random_spec(
    rng: np.random.Generator,
    n_max: int = 3,
    k_max: int = 3,
    min_degree: int = 1,
    beta_range: tuple[float, float] = (0.0, 1.0),
    h_range: tuple[float, float] = (0.0, 1.0),
    max_degree: int | None = None,
    homogeneous_beta: bool = False,
) -> ModelSpec:
    """Draw a feasible instance by rejection sampling on k."""
    for _ in range(100_000):
        n = int(rng.integers(1, n_max + 1))
        k = rng.integers(0, k_max + 1, size=(n, n))
        # sparsify so that irregular supports are common
        k[rng.random((n, n)) < 0.3] = 0
        k = [[int(x) for x in row] for row in k]
        deg = [sum(r) for r in k]
        if min(deg) < max(min_degree, 1):
            continue
        if max_degree is not None and max(deg) > max_degree:
            continue
        alpha = alpha_from_k(k)
        if alpha is None:
            continue
        pairs = {(min(a, b), max(a, b)) for a in range(n) for b in range(n) if k[a][b]}
        if homogeneous_beta:
            beta = float(rng.uniform(*beta_range))
        else:
            beta = {p: float(rng.uniform(*beta_range)) for p in sorted(pairs)}
        h = [float(x) for x in rng.uniform(*h_range, size=n)]
        return ModelSpec(n, k, alpha, beta, h)
    raise RuntimeError("random_spec: rejection sampling did not find an instance")


def figure_one_spec(beta: float = 0.3, h: float | Sequence[float] = 0.1) -> ModelSpec:
    """Three-class example used throughout the tests and docs."""
    return ModelSpec(
        3, [[0, 2, 0], [1, 1, 1], [0, 2, 2]],
        [Fraction(1, 4), Fraction(1, 2), Fraction(1, 4)], beta, h)


def regular_spec(degree: int, beta: float = 0.0, h: float = 0.0) -> ModelSpec:
    """Single-class random ``degree``-regular graph."""
    return ModelSpec(1, [[degree]], [Fraction(1)], beta, [h])


def iter_pairs_upper(spec: ModelSpec) -> Iterable[tuple[int, int]]:
    """Unordered class pairs (a <= b) carrying edges."""
    return iter(spec.beta.keys())
