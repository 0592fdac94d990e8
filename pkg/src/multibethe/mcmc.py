"""Heat-bath Glauber dynamics on generated graphs.

The kernel sweeps the vertices in order and redraws each spin from its
conditional law given the neighbours.  Uniform variates come from a numpy
``Generator`` per replica, so a run is a deterministic function of the
configuration seed.  Observables are accumulated per vertex group (a class,
or a single vertex for small systems) and per edge group.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .exact import SpinSystem
from .graphgen import MultispeciesGraph, edge_type_counts, generate
from .model import ModelSpec, class_edge_set
from .observables import free_pressure
from .stats import DEFAULT_BATCHES, Estimate, batch_means, inverse_variance

_CHUNK_SWEEPS = 64


@dataclass(frozen=True)
class McmcConfig:
    sweeps: int = 4000
    burn_in_sweeps: int = 500
    thinning: int = 1
    replica_count: int = 2
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not self.sweeps > self.burn_in_sweeps >= 0:
            raise ValueError("need sweeps > burn_in_sweeps >= 0")
        if self.replica_count < 1 or self.thinning < 1 or self.threads < 1:
            raise ValueError("replica_count, thinning and threads must be >= 1")

    @property
    def samples(self) -> int:
        return (self.sweeps - self.burn_in_sweeps) // self.thinning


@njit(cache=True, nogil=True)
def _heat_bath(indptr, indices, coup, h, spins, uniforms):
    n_sweeps, n = uniforms.shape
    for s in range(n_sweeps):
        for i in range(n):
            loc = h[i]
            for p in range(indptr[i], indptr[i + 1]):
                loc += coup[p] * spins[indices[p]]
            if uniforms[s, i] * (1.0 + math.exp(-2.0 * loc)) < 1.0:
                spins[i] = 1.0
            else:
                spins[i] = -1.0


@njit(cache=True, nogil=True)
def _measure(spins, vgroup, n_vgroups, eu, ev, egroup, n_egroups, out_v, out_e):
    for g in range(n_vgroups):
        out_v[g] = 0.0
    for g in range(n_egroups):
        out_e[g] = 0.0
    for i in range(spins.shape[0]):
        out_v[vgroup[i]] += spins[i]
    for e in range(eu.shape[0]):
        out_e[egroup[e]] += spins[eu[e]] * spins[ev[e]]


@dataclass
class _Problem:
    """Flattened sampler input."""

    indptr: np.ndarray
    indices: np.ndarray
    coup: np.ndarray
    h: np.ndarray
    vgroup: np.ndarray
    vcount: np.ndarray
    eu: np.ndarray
    ev: np.ndarray
    egroup: np.ndarray
    ecount: np.ndarray


def _csr_couplings(N, edges, betas):
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    w = np.concatenate([betas, betas]).astype(float)
    order = np.lexsort((dst, src))
    indptr = np.zeros(N + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    return np.cumsum(indptr), dst[order], w[order]


def _graph_problem(graph: MultispeciesGraph, spec: ModelSpec):
    pairs = [p for p in class_edge_set(spec).pairs if p[0] <= p[1]]
    pidx = {p: i for i, p in enumerate(pairs)}
    e = graph.edges()
    ca, cb = graph.class_of[e[:, 0]], graph.class_of[e[:, 1]]
    lo, hi = np.minimum(ca, cb), np.maximum(ca, cb)
    egroup = np.array([pidx[(a, b)] for a, b in zip(lo.tolist(), hi.tolist())], dtype=np.int64)
    bm = spec.beta_matrix()
    betas = bm[lo, hi]
    indptr, indices, coup = _csr_couplings(graph.N, e, betas)
    prob = _Problem(indptr, indices, coup, spec.h_array[graph.class_of].astype(float),
                    graph.class_of.astype(np.int64),
                    np.bincount(graph.class_of, minlength=spec.n).astype(float),
                    e[:, 0].copy(), e[:, 1].copy(), egroup,
                    np.bincount(egroup, minlength=len(pairs)).astype(float))
    return prob, pairs


def _run_replica(prob: _Problem, config: McmcConfig, seed_seq: np.random.SeedSequence):
    rng = np.random.default_rng(seed_seq)
    n = len(prob.h)
    spins = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    spins[np.isposinf(prob.h)] = 1.0
    spins[np.isneginf(prob.h)] = -1.0
    nv, ne = len(prob.vcount), len(prob.ecount)
    vbuf, ebuf = np.zeros(nv), np.zeros(ne)
    vs, es, sweeps_at = [], [], []
    done = 0
    while done < config.sweeps:
        step = min(_CHUNK_SWEEPS, config.sweeps - done)
        if done < config.burn_in_sweeps:
            step = min(step, config.burn_in_sweeps - done)
            _heat_bath(prob.indptr, prob.indices, prob.coup, prob.h, spins, rng.random((step, n)))
            done += step
            continue
        for _ in range(step):
            _heat_bath(prob.indptr, prob.indices, prob.coup, prob.h, spins, rng.random((1, n)))
            done += 1
            if (done - config.burn_in_sweeps) % config.thinning == 0:
                _measure(spins, prob.vgroup, nv, prob.eu, prob.ev, prob.egroup, ne, vbuf, ebuf)
                vs.append(vbuf / np.maximum(prob.vcount, 1))
                es.append(ebuf / np.maximum(prob.ecount, 1))
                sweeps_at.append(done)
    return np.array(vs), np.array(es), np.array(sweeps_at)


def _run_all(prob: _Problem, config: McmcConfig):
    seeds = np.random.SeedSequence(config.seed).spawn(config.replica_count)
    if config.threads > 1 and config.replica_count > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            return list(pool.map(lambda s: _run_replica(prob, config, s), seeds))
    return [_run_replica(prob, config, s) for s in seeds]


def _combine(series_per_replica, col):
    return inverse_variance(batch_means(r[:, col], DEFAULT_BATCHES) for r in series_per_replica)


@dataclass
class McmcResult:
    magnetization: list[Estimate]
    edge_correlation: dict
    average_magnetization: Estimate
    abs_average_magnetization: Estimate
    edge_correlation_density: Estimate
    config: McmcConfig
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "magnetization": [e.to_dict() for e in self.magnetization],
            "edge_correlation": [{"a": a, "b": b, **e.to_dict()}
                                 for (a, b), e in self.edge_correlation.items()],
            "average_magnetization": self.average_magnetization.to_dict(),
            "abs_average_magnetization": self.abs_average_magnetization.to_dict(),
            "edge_correlation_density": self.edge_correlation_density.to_dict(),
            "config": self.config.__dict__,
            "notes": list(self.notes),
        }


def _write_trace(path, runs, labels):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["schema_version", "replica", "sweep"] + labels)
        for r, (vs, es, at) in enumerate(runs):
            for i, s in enumerate(at.tolist()):
                w.writerow([1, r, s] + [repr(float(x)) for x in vs[i]] + [repr(float(x)) for x in es[i]])


def estimate_observables(graph: MultispeciesGraph, spec: ModelSpec, config: McmcConfig,
                         trace_path=None) -> McmcResult:
    """Per-class magnetizations and per-class-pair edge correlations.

    Each replica gives batch-means estimates (32 batches); replicas are
    combined with inverse-variance weights.  The absolute average
    magnetization is the symmetrised estimator used at zero field, where a
    finite chain flips between the two phases.
    """
    prob, pairs = _graph_problem(graph, spec)
    runs = _run_all(prob, config)
    vs_all = [r[0] for r in runs]
    es_all = [r[1] for r in runs]
    mags = [_combine(vs_all, a) for a in range(spec.n)]
    corr = {p: _combine(es_all, i) for i, p in enumerate(pairs)}
    alpha = np.array([float(x) for x in spec.alpha])
    avg = [v @ alpha for v in vs_all]
    weights = np.array([prob.ecount[i] / graph.N for i in range(len(pairs))])
    dens = [e @ weights for e in es_all]
    avg_est = inverse_variance(batch_means(x) for x in avg)
    abs_est = inverse_variance(batch_means(np.abs(x)) for x in avg)
    dens_est = inverse_variance(batch_means(x) for x in dens)
    if trace_path is not None:
        labels = [f"m_{a}" for a in range(spec.n)] + [f"c_{a}-{b}" for a, b in pairs]
        _write_trace(trace_path, runs, labels)
    notes = []
    if all(x == 0 for x in spec.h):
        notes.append("zero field: use abs_average_magnetization as the estimator of S")
    return McmcResult(mags, corr, avg_est, abs_est, dens_est, config, notes)


def ensemble_observables(spec: ModelSpec, N: int, graphs: int, config: McmcConfig,
                         graph_seed: int = 0):
    """Run :func:`estimate_observables` on ``graphs`` independent realizations.

    Returns ``(combined, per_graph)``; the combination is inverse-variance
    over graphs, and the per-graph list shows the ensemble spread.
    """
    seeds = np.random.SeedSequence(graph_seed).generate_state(graphs, dtype=np.uint64)
    per = []
    for i, s in enumerate(seeds.tolist()):
        g = generate(spec, N, int(s))
        cfg = McmcConfig(config.sweeps, config.burn_in_sweeps, config.thinning,
                         config.replica_count, config.seed + i, config.threads)
        per.append(estimate_observables(g, spec, cfg))
    combined = McmcResult(
        [inverse_variance(r.magnetization[a] for r in per) for a in range(spec.n)],
        {p: inverse_variance(r.edge_correlation[p] for r in per) for p in per[0].edge_correlation},
        inverse_variance(r.average_magnetization for r in per),
        inverse_variance(r.abs_average_magnetization for r in per),
        inverse_variance(r.edge_correlation_density for r in per),
        config, per[0].notes)
    return combined, per


def thermo_integrate_pressure(spec: ModelSpec, N: int, beta_grid, config: McmcConfig,
                              graph: MultispeciesGraph | None = None,
                              graph_seed: int = 0) -> Estimate:
    """Pressure at ``spec.scaled(beta_grid[-1])`` by integrating the edge
    correlations along the homothety ``t -> t * beta``.

    ``beta_grid`` holds scale factors and must start at 0, where the pressure
    is ``log 2 + sum_a alpha_a log cosh h_a`` exactly.  The integrand is
    ``sum_types beta_ab (edges_ab / N) <s_i s_j>_ab``; the trapezoid errors
    add in quadrature.
    """
    grid = np.asarray(beta_grid, dtype=float)
    if grid.ndim != 1 or len(grid) == 0 or grid[0] != 0:
        raise ValueError("beta_grid must be a non-empty sequence starting at 0")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("beta_grid must be strictly increasing")
    p0 = free_pressure(spec)
    if len(grid) == 1:
        return Estimate(p0, 0.0, 0)
    if graph is None:
        graph = generate(spec, N, graph_seed)
    counts = edge_type_counts(graph)
    pairs = [p for p in class_edge_set(spec).pairs if p[0] <= p[1]]
    slope = np.array([spec.coupling(a, b) * counts.get((a, b), 0) / graph.N for a, b in pairs])
    vals, errs = [], []
    for i, t in enumerate(grid):
        if t == 0:
            # independent spins: every edge correlation is tanh h_a tanh h_b
            c = np.array([math.tanh(spec.h[a]) * math.tanh(spec.h[b]) for a, b in pairs])
            vals.append(float(slope @ c))
            errs.append(0.0)
            continue
        cfg = McmcConfig(config.sweeps, config.burn_in_sweeps, config.thinning,
                         config.replica_count, config.seed + i, config.threads)
        res = estimate_observables(graph, spec.scaled(float(t)), cfg)
        c = np.array([res.edge_correlation[p].mean for p in pairs])
        se = np.array([res.edge_correlation[p].se for p in pairs])
        vals.append(float(slope @ c))
        errs.append(float(math.sqrt(np.sum((slope * se) ** 2))))
    w = np.zeros(len(grid))
    d = np.diff(grid)
    w[:-1] += d / 2
    w[1:] += d / 2
    mean = p0 + float(w @ np.array(vals))
    se = float(math.sqrt(np.sum((w * np.array(errs)) ** 2)))
    return Estimate(mean, se, len(grid))


def sample_spin_system(system: SpinSystem, config: McmcConfig):
    """Heat-bath estimates of every single-site magnetization and every edge
    correlation of a small :class:`SpinSystem` (used against exact sums)."""
    n = system.n_vertices
    indptr, indices, coup = _csr_couplings(n, system.edges, system.couplings)
    e = np.asarray(system.edges, dtype=np.int64).reshape(-1, 2)
    prob = _Problem(indptr, indices, coup, system.fields.astype(float),
                    np.arange(n, dtype=np.int64), np.ones(n), e[:, 0].copy(), e[:, 1].copy(),
                    np.arange(len(e), dtype=np.int64), np.ones(len(e)))
    runs = _run_all(prob, config)
    mags = [_combine([r[0] for r in runs], i) for i in range(n)]
    corr = [_combine([r[1] for r in runs], i) for i in range(len(e))]
    return mags, corr
