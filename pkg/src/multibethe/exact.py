"""Brute-force Gibbs sums on small spin systems and explicit k-regular trees.

Everything here is deliberately naive: sums run over all configurations of
the free spins, so the results serve as an independent oracle for the
cavity recursion and the closed-form observables.  Vertices carrying an
infinite field are pinned to the corresponding sign; the partition function
is then the sum over the remaining spins, with the (infinite) pinning energy
left out.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .cavity import boundary_vector, f_beta, trajectory
from .errors import RegimeError, SizeError, StructuralError
from .model import ModelSpec, class_edge_set

MAX_FREE_SPINS = 26
MAX_TREE_VERTICES = 1_000_000
_CHUNK_BITS = 16


@dataclass
class SpinSystem:
    """Ising model ``H = -sum_e beta_e s_u s_v - sum_i h_i s_i`` on a small graph."""

    n_vertices: int
    edges: list[tuple[int, int]]
    couplings: np.ndarray
    fields: np.ndarray

    def __post_init__(self):
        self.edges = [(int(u), int(v)) for u, v in self.edges]
        self.couplings = np.asarray(self.couplings, dtype=float).reshape(len(self.edges))
        self.fields = np.asarray(self.fields, dtype=float).reshape(self.n_vertices)
        for u, v in self.edges:
            if not (0 <= u < self.n_vertices and 0 <= v < self.n_vertices) or u == v:
                raise StructuralError(f"bad edge ({u}, {v})")
        if np.any(np.isnan(self.fields)) or not np.all(np.isfinite(self.couplings)):
            raise StructuralError("couplings must be finite and fields not NaN")

    @property
    def pinned(self) -> np.ndarray:
        """+1 / -1 for vertices with infinite field, 0 for free ones."""
        return np.where(np.isinf(self.fields), np.sign(self.fields), 0.0)

    @property
    def free(self) -> np.ndarray:
        return np.flatnonzero(~np.isinf(self.fields))


@dataclass
class GibbsResult:
    log_z: float
    mean: np.ndarray
    corr: np.ndarray
    third: np.ndarray | None = None


def _reduced(system: SpinSystem):
    """Fold pinned spins into effective fields on the free ones."""
    free = system.free
    m = len(free)
    if m > MAX_FREE_SPINS:
        raise SizeError(f"{m} free spins exceed the enumeration limit of {MAX_FREE_SPINS}")
    pin = system.pinned
    pos = -np.ones(system.n_vertices, dtype=np.int64)
    pos[free] = np.arange(m)
    h = system.fields[free].copy()
    const = 0.0
    eu, ev, eb = [], [], []
    for (u, v), b in zip(system.edges, system.couplings):
        pu, pv = pos[u], pos[v]
        if pu >= 0 and pv >= 0:
            eu.append(pu)
            ev.append(pv)
            eb.append(b)
        elif pu >= 0:
            h[pu] += b * pin[v]
        elif pv >= 0:
            h[pv] += b * pin[u]
        else:
            const += b * pin[u] * pin[v]
    return free, h, np.array(eu, dtype=np.int64), np.array(ev, dtype=np.int64), np.array(eb), const


def _configs(start: int, stop: int, m: int) -> np.ndarray:
    idx = np.arange(start, stop, dtype=np.int64)
    bits = (idx[:, None] >> np.arange(m, dtype=np.int64)) & 1
    return 1.0 - 2.0 * bits


def _log_weights(sig, h, eu, ev, eb, const):
    lw = sig @ h + const
    if len(eb):
        lw = lw + (sig[:, eu] * sig[:, ev]) @ eb
    return lw


def gibbs_enumerate(system: SpinSystem, third: bool = False) -> GibbsResult:
    """Exact log Z, magnetizations and pair correlations (and optionally all
    third moments) by summing over every configuration of the free spins."""
    free, h, eu, ev, eb, const = _reduced(system)
    m = len(free)
    n = system.n_vertices
    total = 1 << m
    chunk = 1 << min(m, _CHUNK_BITS)
    shift = -math.inf
    z = 0.0
    s1 = np.zeros(m)
    s2 = np.zeros((m, m))
    s3 = np.zeros((m, m, m)) if third else None
    for start in range(0, total, chunk):
        sig = _configs(start, min(start + chunk, total), m)
        lw = _log_weights(sig, h, eu, ev, eb, const)
        top = float(lw.max())
        if top > shift:
            scale = math.exp(shift - top) if math.isfinite(shift) else 0.0
            z *= scale
            s1 *= scale
            s2 *= scale
            if third:
                s3 *= scale
            shift = top
        w = np.exp(lw - shift)
        z += w.sum()
        ws = sig * w[:, None]
        s1 += ws.sum(axis=0)
        s2 += sig.T @ ws
        if third:
            s3 += np.einsum("ci,cj,ck->ijk", ws, sig, sig, optimize=True)
    pin = system.pinned
    mean = pin.copy()
    mean[free] = s1 / z
    corr = np.outer(pin, pin)
    corr[np.ix_(free, free)] = s2 / z
    fm = s1 / z
    for p in np.flatnonzero(pin):
        corr[p, free] = corr[free, p] = pin[p] * fm
    np.fill_diagonal(corr, 1.0)
    t3 = None
    if third:
        t3 = np.einsum("i,j,k->ijk", pin, pin, pin)
        fr = np.ix_(free, free, free)
        t3[fr] = s3 / z
        # fill mixed pinned/free entries from lower moments
        for i, j, k in itertools.product(range(n), repeat=3):
            p = [x for x in (i, j, k) if pin[x] != 0]
            if p and len(p) < 3:
                rest = [x for x in (i, j, k) if pin[x] == 0]
                sign = np.prod([pin[x] for x in p])
                if len(rest) == 1:
                    t3[i, j, k] = sign * mean[rest[0]]
                else:
                    t3[i, j, k] = sign * corr[rest[0], rest[1]]
        # repeated indices: s_i^2 = 1
        for i, j, k in itertools.product(range(n), repeat=3):
            if i == j:
                t3[i, j, k] = mean[k]
            elif i == k:
                t3[i, j, k] = mean[j]
            elif j == k:
                t3[i, j, k] = mean[i]
    return GibbsResult(float(shift + math.log(z)), mean, corr, t3)


def gibbs_distribution(system: SpinSystem, max_free: int = 20):
    """All configurations (rows of +-1 over every vertex) with probabilities."""
    free, h, eu, ev, eb, const = _reduced(system)
    m = len(free)
    if m > max_free:
        raise SizeError(f"{m} free spins exceed {max_free}")
    sig = _configs(0, 1 << m, m)
    lw = _log_weights(sig, h, eu, ev, eb, const)
    p = np.exp(lw - lw.max())
    p /= p.sum()
    full = np.tile(system.pinned, (len(p), 1))
    full[:, free] = sig
    return full, p


# -- explicit k-regular trees ----------------------------------------------------


@dataclass
class ExplicitTree:
    """Rooted tree with class labels, generated level by level.

    ``parent_class[v]`` is the class of the parent of ``v``; for the root of a
    pruned tree it is the class of the removed neighbour, for the root of a
    full tree it is ``-1``.
    """

    root_class: int
    depth_limit: int
    classes: np.ndarray
    parent: np.ndarray
    depth: np.ndarray
    parent_class: np.ndarray
    variant: str

    @property
    def size(self) -> int:
        return len(self.classes)

    @property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(self.depth == self.depth_limit)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(int(p), v) for v, p in enumerate(self.parent) if p >= 0]

    def children(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.parent == v)

    def generation_counts(self) -> list[int]:
        return np.bincount(self.depth, minlength=self.depth_limit + 1).tolist()


def tree_size(spec: ModelSpec, a: int, t: int, pruned_parent: int | None = None) -> int:
    """Vertex count of the tree without building it."""
    es = class_edge_set(spec)
    level = {(a, -1 if pruned_parent is None else pruned_parent): 1}
    total = 1
    for _ in range(t):
        nxt: dict = {}
        for (x, p), cnt in level.items():
            for y in es.neighbours[x]:
                c = spec.k[x][y] - (y == p)
                if c > 0:
                    nxt[(y, x)] = nxt.get((y, x), 0) + cnt * c
        level = nxt
        total += sum(level.values())
    return total


def build_tree(spec: ModelSpec, a: int, t: int, pruned_parent: int | None = None) -> ExplicitTree:
    """The k-regular tree of depth ``t`` rooted at class ``a``.

    With ``pruned_parent = b`` the root has one fewer class-``b`` child, i.e.
    it behaves like a class-``a`` vertex whose parent has class ``b``.
    """
    es = class_edge_set(spec)
    if pruned_parent is not None and (a, pruned_parent) not in es:
        raise StructuralError(f"({a}, {pruned_parent}) is not a class edge")
    if tree_size(spec, a, t, pruned_parent) > MAX_TREE_VERTICES:
        raise SizeError("tree exceeds the vertex cap")
    classes = [a]
    parent = [-1]
    depth = [0]
    pclass = [-1 if pruned_parent is None else pruned_parent]
    frontier = [0]
    for g in range(1, t + 1):
        nxt = []
        for v in frontier:
            x, p = classes[v], pclass[v]
            for y in es.neighbours[x]:
                for _ in range(spec.k[x][y] - (y == p)):
                    classes.append(y)
                    parent.append(v)
                    depth.append(g)
                    pclass.append(x)
                    nxt.append(len(classes) - 1)
        frontier = nxt
    return ExplicitTree(a, t, np.array(classes), np.array(parent), np.array(depth),
                        np.array(pclass), "full" if pruned_parent is None else "pruned")


def tree_spin_system(tree: ExplicitTree, spec: ModelSpec, boundary=0.0) -> SpinSystem:
    """Ising model on ``tree`` with class fields and couplings plus the extra
    boundary field ``boundary[(c, p)]`` on depth-``t`` vertices of class ``c``
    with parent class ``p``.  ``boundary`` is a scalar or a cavity vector."""
    es = class_edge_set(spec)
    fields = np.array([spec.h[c] for c in tree.classes], dtype=float)
    scalar = np.isscalar(boundary)
    hb = None if scalar else boundary_vector(spec, boundary)
    for v in tree.boundary:
        c, p = tree.classes[v], tree.parent_class[v]
        if scalar:
            fields[v] += float(boundary)
        elif p < 0:
            raise StructuralError("a full tree of depth 0 only takes a scalar boundary field")
        else:
            fields[v] += hb[es.index[(c, p)]]
    edges = tree.edges
    betas = [spec.coupling(tree.classes[u], tree.classes[v]) for u, v in edges]
    return SpinSystem(tree.size, edges, np.array(betas), fields)


def _joined_edge_system(spec: ModelSpec, a: int, b: int, t: int, boundary):
    ta = build_tree(spec, a, t, pruned_parent=b)
    tb = build_tree(spec, b, t, pruned_parent=a)
    sa = tree_spin_system(ta, spec, boundary)
    sb = tree_spin_system(tb, spec, boundary)
    off = sa.n_vertices
    edges = sa.edges + [(u + off, v + off) for u, v in sb.edges] + [(0, off)]
    betas = np.concatenate([sa.couplings, sb.couplings, [spec.coupling(a, b)]])
    joined = SpinSystem(off + sb.n_vertices, edges, betas,
                        np.concatenate([sa.fields, sb.fields]))
    return sa, sb, joined, off


# -- comparisons -------------------------------------------------------------------


@dataclass
class ComparisonRecord:
    kind: str
    params: dict
    formula: float
    exact: float
    gap: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.gap <= self.tolerance

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out


def _jsonable_boundary(boundary):
    if np.isscalar(boundary):
        return float(boundary)
    return [float(x) for x in boundary]


def tree_recursion_oracle(spec: ModelSpec, a: int, t: int, boundary=0.0,
                          pruned_parent: int | None = None,
                          tolerance: float = 1e-10) -> ComparisonRecord:
    """Root magnetization from the cavity recursion vs. exact enumeration."""
    es = class_edge_set(spec)
    tree = build_tree(spec, a, t, pruned_parent)
    exact = float(gibbs_enumerate(tree_spin_system(tree, spec, boundary)).mean[0])
    if pruned_parent is not None:
        z = trajectory(spec, boundary, t)[t][es.index[(a, pruned_parent)]]
    elif t == 0:
        if not np.isscalar(boundary):
            raise StructuralError("a full tree of depth 0 only takes a scalar boundary field")
        z = spec.h[a] + float(boundary)
    else:
        zt = trajectory(spec, boundary, t - 1)[t - 1]
        z = spec.h[a] + sum(spec.k[a][c] * f_beta(spec.coupling(a, c), zt[es.index[(c, a)]])
                            for c in es.neighbours[a])
    formula = math.tanh(z)
    return ComparisonRecord(
        "tree_recursion",
        {"root_class": a, "depth": t, "pruned_parent": pruned_parent,
         "boundary": _jsonable_boundary(boundary), "vertices": tree.size},
        formula, exact, abs(formula - exact), tolerance)


def tree_two_point_oracle(spec: ModelSpec, a: int, b: int, t: int, boundary=0.0,
                          tolerance: float = 1e-12) -> ComparisonRecord:
    """Edge correlation at the centre of an edge-rooted tree: the closed form
    in the two split-subtree root magnetizations vs. direct enumeration."""
    if (a, b) not in class_edge_set(spec):
        raise StructuralError(f"({a}, {b}) is not a class edge")
    sa, sb, joined, off = _joined_edge_system(spec, a, b, t, boundary)
    ma = float(gibbs_enumerate(sa).mean[0])
    mb = float(gibbs_enumerate(sb).mean[0])
    exact = float(gibbs_enumerate(joined).corr[0, off])
    formula = math.tanh(spec.coupling(a, b) + math.atanh(ma * mb))
    return ComparisonRecord(
        "tree_two_point",
        {"a": a, "b": b, "depth": t, "boundary": _jsonable_boundary(boundary),
         "vertices": joined.n_vertices, "m_a": ma, "m_b": mb},
        formula, exact, abs(formula - exact), tolerance)


# -- correlation inequalities ------------------------------------------------------


@dataclass
class InequalityReport:
    which: str
    margins: list[tuple[str, float]] = field(default_factory=list)
    threshold: float = -1e-12

    @property
    def worst_margin(self) -> float:
        return min((m for _, m in self.margins), default=math.inf)

    @property
    def holds(self) -> bool:
        return self.worst_margin >= self.threshold

    def worst(self, count: int = 5):
        return sorted(self.margins, key=lambda x: x[1])[:count]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["inequality", "check", "margin"])
            for label, m in self.margins:
                w.writerow([self.which, label, repr(m)])

    def to_dict(self) -> dict:
        return {"which": self.which, "holds": self.holds, "worst_margin": self.worst_margin,
                "checks": len(self.margins), "worst": [list(x) for x in self.worst()]}


def _check_ferro(system: SpinSystem, need_nonneg_field: bool, which: str) -> None:
    if np.any(system.couplings < 0):
        raise RegimeError(f"{which} needs non-negative couplings", reason="precondition")
    if need_nonneg_field and np.any(system.fields < 0):
        raise RegimeError(f"{which} needs non-negative fields", reason="precondition")


def _parity(sig: np.ndarray, subset) -> np.ndarray:
    if len(subset) == 0:
        return np.ones(len(sig))
    return np.prod(sig[:, list(subset)], axis=1)


def _gks(system: SpinSystem, rng: np.random.Generator, report: InequalityReport):
    sig, p = gibbs_distribution(system)
    n = system.n_vertices
    small = [c for r in range(1, 4) for c in itertools.combinations(range(n), r)]
    par = np.array([_parity(sig, s) for s in small])
    ex = par @ p
    joint = (par * p) @ par.T
    cov = joint - np.outer(ex, ex)
    for i, A in enumerate(small):
        for j, B in enumerate(small):
            if j < i:
                continue
            report.margins.append((f"A={list(A)} B={list(B)}", float(cov[i, j])))
    for _ in range(50):
        if n < 4:
            break
        ra = int(rng.integers(4, n + 1))
        rb = int(rng.integers(1, n + 1))
        A = sorted(rng.choice(n, size=ra, replace=False).tolist())
        B = sorted(rng.choice(n, size=rb, replace=False).tolist())
        sa, sb = _parity(sig, A), _parity(sig, B)
        report.margins.append((f"A={A} B={B}", float(p @ (sa * sb) - (p @ sa) * (p @ sb))))
    # the four derivative forms, written as covariances of exact moments
    g = gibbs_enumerate(system, third=True)
    m, c2, c3 = g.mean, g.corr, g.third
    pairs = list(itertools.combinations(range(n), 2))
    for i in range(n):
        for j in range(n):
            report.margins.append((f"dm{i}/dh{j}", float(c2[i, j] - m[i] * m[j])))
        for j, k in pairs:
            report.margins.append((f"dm{i}/dbeta{j}{k}", float(c3[i, j, k] - m[i] * c2[j, k])))
    for i, j in pairs:
        for k in range(n):
            report.margins.append((f"d<s{i}s{j}>/dh{k}", float(c3[i, j, k] - c2[i, j] * m[k])))
        for k, l in pairs:
            four = p @ (sig[:, i] * sig[:, j] * sig[:, k] * sig[:, l])
            report.margins.append((f"d<s{i}s{j}>/dbeta{k}{l}", float(four - c2[i, j] * c2[k, l])))


def random_monotone_function(rng: np.random.Generator, n: int):
    """Increasing function of the spins: a threshold ``1[w.s >= theta]`` with
    ``w >= 0`` (probability 1/2), otherwise the linear form ``w.s``."""
    w = rng.uniform(0, 1, size=n)
    if rng.random() < 0.5:
        theta = rng.uniform(-w.sum(), w.sum())
        return lambda sig: (sig @ w >= theta).astype(float)
    return lambda sig: sig @ w


def _fkg(system: SpinSystem, rng: np.random.Generator, report: InequalityReport, pairs=200):
    sig, p = gibbs_distribution(system)
    n = system.n_vertices
    for i in range(n):
        for j in range(n):
            report.margins.append((f"s{i},s{j}", float(p @ (sig[:, i] * sig[:, j])
                                                       - (p @ sig[:, i]) * (p @ sig[:, j]))))
    for r in range(pairs):
        f = random_monotone_function(rng, n)(sig)
        g = random_monotone_function(rng, n)(sig)
        report.margins.append((f"random pair {r}", float(p @ (f * g) - (p @ f) * (p @ g))))


def _ghs(system: SpinSystem, report: InequalityReport):
    g = gibbs_enumerate(system, third=True)
    m, c2, c3 = g.mean, g.corr, g.third
    n = system.n_vertices
    for i, j, k in itertools.product(range(n), repeat=3):
        u = (c3[i, j, k] - m[i] * c2[j, k] - m[j] * c2[i, k] - m[k] * c2[i, j]
             + 2 * m[i] * m[j] * m[k])
        report.margins.append((f"d2m{i}/dh{j}dh{k}", float(-u)))


def inequality_suite(system: SpinSystem, which: str, seed: int = 0) -> InequalityReport:
    """Evaluate GKS, FKG or GHS on ``system``; each margin must be >= -1e-12.

    Margins are the covariances (GKS, FKG) or minus the second field
    derivative of the magnetization (GHS), so they are non-negative exactly
    when the inequality holds.
    """
    which = which.upper()
    rng = np.random.default_rng(seed)
    rep = InequalityReport(which)
    if which == "GKS":
        _check_ferro(system, True, which)
        _gks(system, rng, rep)
    elif which == "FKG":
        _check_ferro(system, False, which)
        _fkg(system, rng, rep)
    elif which == "GHS":
        _check_ferro(system, True, which)
        _ghs(system, rep)
    else:
        raise ValueError(f"unknown inequality {which!r}")
    return rep


def random_spin_system(rng: np.random.Generator, n_min: int = 2, n_max: int = 8,
                       edge_prob: float = 0.5, beta_range=(0.0, 1.0),
                       h_range=(0.0, 1.0), pin_prob: float = 0.0) -> SpinSystem:
    """Random small graph with couplings and fields drawn uniformly.

    With ``pin_prob > 0`` some vertices get an infinite field of the sign of
    the lower end of ``h_range`` if negative fields are allowed, else ``+inf``.
    """
    n = int(rng.integers(n_min, n_max + 1))
    edges = [(u, v) for u, v in itertools.combinations(range(n), 2) if rng.random() < edge_prob]
    betas = rng.uniform(*beta_range, size=len(edges))
    fields = rng.uniform(*h_range, size=n)
    if pin_prob > 0:
        pin = rng.random(n) < pin_prob
        signs = np.where(rng.random(n) < 0.5, -1.0, 1.0) if h_range[0] < 0 else np.ones(n)
        fields = np.where(pin, signs * np.inf, fields)
    return SpinSystem(n, edges, betas, fields)
