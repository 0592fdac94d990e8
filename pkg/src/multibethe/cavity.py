"""Cavity recursion on k-regular trees and its fixed points.

A cavity vector holds one field ``z[(a, b)]`` per class edge, in the order of
:func:`multibethe.model.class_edge_set`.  It is the effective field acting on
a class-``a`` vertex of a tree whose parent (of class ``b``) was removed.
One step of the recursion reads

    z'[(a, b)] = h_a + sum_c (k_ac - [c == b]) F(beta_ac, z[(c, a)])

with ``F(beta, x) = atanh(tanh(beta) tanh(x))``.  Because ``F`` only depends
on the source entry ``(c, a)``, a step is ``h_src + Mbar @ F(beta_src, z)``
where ``Mbar`` is the unweighted non-backtracking matrix.

Entries may be ``+inf`` / ``-inf`` only in the initial vector (boundary
conditions); every step returns finite values.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, RegimeError, StructuralError
from .model import ClassEdgeSet, ModelSpec, class_edge_set, is_simply_cyclic

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 1_000_000
STALL_WINDOW = 10_000
STALL_RATIO = 0.99
CRITICAL_WINDOW = 1e-6


def f_beta(beta, x):
    """``atanh(tanh(beta) * tanh(x))``, with ``F(beta, +-inf) = +-beta``.

    Vectorised over both arguments.  Large products switch to the equivalent
    ``(logcosh(beta + x) - logcosh(beta - x)) / 2`` form, with the linear parts
    of the two log-cosh terms cancelled by hand: ``F = sign(x) (min(beta, |x|)
    + (log1p(e^(-2(beta+|x|))) - log1p(e^(-2|beta-|x||))) / 2)``.  This stays
    accurate when ``tanh(beta) tanh(x)`` rounds to one and never exceeds
    ``min(beta, |x|)`` in magnitude.
    """
    beta = np.asarray(beta, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(beta < 0):
        raise ValueError("F_beta is defined for beta >= 0 only")
    shape = np.broadcast_shapes(beta.shape, x.shape)
    beta = np.broadcast_to(beta, shape).ravel()
    x = np.broadcast_to(x, shape).ravel()
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        p = np.tanh(beta) * np.tanh(x)
        out = np.arctanh(p)
        big = np.abs(p) > 0.5
        if np.any(big):
            ax, bb = np.abs(x[big]), beta[big]
            tail = np.log1p(np.exp(-2.0 * (bb + ax))) - np.log1p(np.exp(-2.0 * np.abs(bb - ax)))
            out[big] = np.sign(x[big]) * (np.minimum(bb, ax) + 0.5 * tail)
        inf = np.isinf(x)
        if np.any(inf):
            out[inf] = np.sign(x[inf]) * beta[inf]
    if not shape:
        return float(out[0])
    return out.reshape(shape)


def f_beta_prime(beta, x):
    """dF/dx = tanh(b) (1 - tanh(x)^2) / (1 - tanh(b)^2 tanh(x)^2)."""
    t = np.tanh(beta)
    u = np.tanh(x)
    return t * (1 - u * u) / (1 - (t * u) ** 2)


# -- recursion plan -------------------------------------------------------------


@dataclass(frozen=True)
class Recursion:
    """Precomputed arrays for one instance.

    ``counts[i, j] = k_ac - [c == b]`` when ``i = (a, b)`` and ``j = (c, a)``.
    """

    edges: ClassEdgeSet
    h_src: np.ndarray
    beta_src: np.ndarray
    counts: np.ndarray

    @classmethod
    def from_spec(cls, spec: ModelSpec) -> "Recursion":
        es = class_edge_set(spec)
        m = len(es)
        counts = np.zeros((m, m))
        for i, (a, b) in enumerate(es.pairs):
            for c in es.neighbours[a]:
                counts[i, es.index[(c, a)]] = spec.k[a][c] - (c == b)
        h = np.array(spec.h)
        beta_src = np.array([spec.coupling(a, b) for a, b in es.pairs])
        return cls(es, h[es.source], beta_src, counts)

    def step(self, z: np.ndarray) -> np.ndarray:
        return self.h_src + self.counts @ f_beta(self.beta_src, z)

    @property
    def cavity_degree(self) -> np.ndarray:
        """k_a - 1 for each pair (a, b)."""
        return self.counts.sum(axis=1)


def _plan(spec: ModelSpec) -> Recursion:
    return Recursion.from_spec(spec)


def boundary_vector(spec: ModelSpec, value) -> np.ndarray:
    """Broadcast a scalar (possibly infinite) or validate a per-pair vector."""
    m = len(class_edge_set(spec))
    if np.isscalar(value):
        return np.full(m, float(value))
    v = np.asarray(value, dtype=float)
    if v.shape != (m,):
        raise StructuralError(f"cavity vector has shape {v.shape}, expected ({m},)")
    if np.any(np.isnan(v)):
        raise StructuralError("cavity vector contains NaN")
    return v


def recursion_step(spec: ModelSpec, z) -> np.ndarray:
    """One application of the cavity recursion."""
    z = boundary_vector(spec, z)
    return _plan(spec).step(z)


def cavity_bounds(spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Bounds h_a -/+ sum_c (k_ac - [c == b]) beta_ac valid after one step."""
    plan = _plan(spec)
    spread = plan.counts @ plan.beta_src
    return plan.h_src - spread, plan.h_src + spread


# -- single trajectory ----------------------------------------------------------


class Monotonicity(str, enum.Enum):
    NONDECREASING = "nondecreasing"
    NONINCREASING = "nonincreasing"
    NONE = "none"


def _slack(z):
    return 4e-15 * np.maximum(1.0, np.abs(np.where(np.isfinite(z), z, 0.0)))


@dataclass
class FixedPointResult:
    """Outcome of a fixed-point computation.

    ``residual`` is the sup-norm of the last one-step change.  Sandwich
    solvers also fill ``gap``: the sup-distance between the lower and upper
    trajectories, which bounds the distance to the true fixed point.
    """

    z: np.ndarray
    pairs: tuple
    iterations: int
    residual: float
    converged: bool
    monotonicity_witness: Monotonicity = Monotonicity.NONE
    nondecreasing: bool = False
    nonincreasing: bool = False
    stalled: bool = False
    extrapolated: np.ndarray | None = None
    gap: float | None = None
    regime: str = "unspecified"
    rho: float | None = None
    notes: list[str] = field(default_factory=list)

    def component(self, a: int, b: int) -> float:
        return float(self.z[self.pairs.index((a, b))])

    def to_dict(self) -> dict:
        out = {
            "pairs": [list(p) for p in self.pairs],
            "z": [float(x) for x in self.z],
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "monotonicity_witness": self.monotonicity_witness.value,
            "stalled": self.stalled,
            "regime": self.regime,
        }
        if self.gap is not None:
            out["gap"] = self.gap
        if self.rho is not None:
            out["rho"] = self.rho
        if self.extrapolated is not None:
            out["extrapolated"] = [float(x) for x in self.extrapolated]
        if self.notes:
            out["notes"] = list(self.notes)
        return out


def _aitken(z_prev, z, r_prev, r):
    """Geometric-tail extrapolation from the last two residuals."""
    if not (r_prev > 0 and 0 < r < r_prev):
        return None
    q = r / r_prev
    return z + (z - z_prev) * q / (1 - q)


def trajectory(spec: ModelSpec, h_star, steps: int) -> np.ndarray:
    """All iterates ``z(0) .. z(steps)`` from boundary field ``h_star``."""
    plan = _plan(spec)
    z = plan.h_src + boundary_vector(spec, h_star)
    out = [z]
    for _ in range(steps):
        z = plan.step(z)
        out.append(z)
    return np.array(out)


def iterate(spec: ModelSpec, h_star=0.0, tol: float = DEFAULT_TOL,
            max_iter: int = DEFAULT_MAX_ITER) -> FixedPointResult:
    """Run the recursion from ``z(0) = h + h_star`` until the sup-norm change
    drops to ``tol`` or ``max_iter`` steps have been taken.

    Non-convergence is reported through ``converged=False`` (and ``stalled``
    when the residual stops shrinking), never raised.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    plan = _plan(spec)
    z = plan.h_src + boundary_vector(spec, h_star)
    up = down = True
    first_move = None
    residual = math.inf
    history = [math.inf]
    z_prev = z
    r_prev = math.inf
    it = 0
    stalled = False
    while it < max_iter:
        z_new = plan.step(z)
        it += 1
        diff = z_new - z
        with np.errstate(invalid="ignore"):
            sl = _slack(z)
            if np.any(diff < -sl):
                up = False
            if np.any(diff > sl):
                down = False
        if first_move is None:
            if np.any(np.abs(diff) > sl):
                first_move = (Monotonicity.NONDECREASING
                              if np.all(diff >= -sl) else Monotonicity.NONINCREASING)
        z_prev, r_prev = z, residual
        residual = float(np.max(np.abs(diff))) if diff.size else 0.0
        z = z_new
        if residual <= tol:
            break
        if it % STALL_WINDOW == 0:
            if residual > STALL_RATIO * history[-1]:
                stalled = True
                break
            history.append(residual)
    converged = residual <= tol
    if up and down:
        witness = Monotonicity.NONDECREASING if first_move is None else first_move
    elif up:
        witness = Monotonicity.NONDECREASING
    elif down:
        witness = Monotonicity.NONINCREASING
    else:
        witness = Monotonicity.NONE
    extrap = None
    if not converged:
        extrap = _aitken(z_prev, z, r_prev, residual)
    return FixedPointResult(
        z=z, pairs=plan.edges.pairs, iterations=it, residual=residual,
        converged=converged, monotonicity_witness=witness,
        nondecreasing=up, nonincreasing=down, stalled=stalled,
        extrapolated=extrap)


def _sandwich(spec: ModelSpec, lower0, upper0, tol: float, max_iter: int):
    """Iterate a lower and an upper trajectory in lockstep.

    Stops once both residuals and their sup-gap are at most ``tol``.
    Returns ``(lower, upper, iterations, residual, gap, stalled, up, down)``.
    """
    plan = _plan(spec)
    lo = plan.h_src + boundary_vector(spec, lower0)
    hi = plan.h_src + boundary_vector(spec, upper0)
    up = down = True
    it = 0
    residual = gap = math.inf
    last_gap = math.inf
    stalled = False
    while it < max_iter:
        lo_new = plan.step(lo)
        hi_new = plan.step(hi)
        it += 1
        with np.errstate(invalid="ignore"):
            if np.any(lo_new - lo < -_slack(lo)):
                up = False
            if np.any(hi_new - hi > _slack(hi)):
                down = False
            residual = float(max(np.max(np.abs(lo_new - lo)), np.max(np.abs(hi_new - hi))))
        lo, hi = lo_new, hi_new
        gap = float(np.max(np.abs(hi - lo)))
        if residual <= tol and gap <= tol:
            break
        if it % STALL_WINDOW == 0:
            if gap > STALL_RATIO * last_gap:
                stalled = True
                break
            last_gap = gap
    return lo, hi, it, residual, gap, stalled, up, down


# -- fixed points in the field regimes --------------------------------------------


def fixed_point_nonneg(spec: ModelSpec, tol: float = DEFAULT_TOL,
                       max_iter: int = DEFAULT_MAX_ITER) -> FixedPointResult:
    """The non-negative fixed point for non-negative fields.

    Valid when every field is positive, or when the fields are non-negative
    with at least one positive and every class has degree at least two.  The
    free-boundary trajectory (``h* = 0``, non-decreasing) and the
    plus-boundary trajectory (``h* = +inf``, non-increasing) squeeze the
    fixed point; their average is returned.
    """
    h = np.array(spec.h)
    if np.any(h < 0):
        raise RegimeError("fixed_point_nonneg needs non-negative fields", reason="negative-field")
    if not np.any(h > 0):
        raise RegimeError("all fields are zero: use fixed_point_zero_field_positive",
                          reason="zero-field")
    if not np.all(h > 0) and min(spec.degrees) < 2:
        raise RegimeError(
            "some field is zero and some class has degree < 2; use iterate/high_temp_contraction_check",
            reason="degree")
    lo, hi, it, res, gap, stalled, up, down = _sandwich(spec, 0.0, math.inf, tol, max_iter)
    agree = gap <= 10 * tol
    result = FixedPointResult(
        z=0.5 * (lo + hi), pairs=class_edge_set(spec).pairs, iterations=it,
        residual=res, converged=agree and res <= tol,
        monotonicity_witness=Monotonicity.NONE, nondecreasing=up, nonincreasing=down,
        stalled=stalled, gap=gap, regime="positive-field")
    if not agree:
        result.notes.append(f"boundary limits differ by {gap:.3e} > 10*tol")
    return result


def fixed_point_zero_field_positive(spec: ModelSpec, tol: float = DEFAULT_TOL,
                                    max_iter: int = DEFAULT_MAX_ITER) -> FixedPointResult:
    """The strictly positive fixed point at zero field when rho(M) > 1.

    The lower trajectory starts at ``eps * v`` with ``v`` the Perron vector of
    the weighted non-backtracking matrix; ``eps`` starts at ``1e-3 * min(v)``
    and is halved until the strict small-boundary condition holds.  The upper
    trajectory starts at ``+inf``.  For rho(M) < 1 the zero vector is
    returned with ``regime="zero"``; inside the critical window
    ``|rho - 1| < 1e-6`` it is returned with ``regime="critical"``.
    """
    from .spectral import build_M, perron_vector, spectral_radius

    if np.any(np.array(spec.h) != 0):
        raise RegimeError("fixed_point_zero_field_positive needs h == 0", reason="nonzero-field")
    if min(spec.degrees) < 2:
        raise RegimeError("every class needs degree >= 2", reason="degree")
    if is_simply_cyclic(spec):
        raise RegimeError("simply cyclic class graph is not supported", reason="simply-cyclic")
    es = class_edge_set(spec)
    M = build_M(spec)
    rho = spectral_radius(M)
    zero = np.zeros(len(es))
    if abs(rho - 1) < CRITICAL_WINDOW:
        return FixedPointResult(zero, es.pairs, 0, 0.0, False, regime="critical", rho=rho,
                                notes=["critical - no guarantee"])
    if rho < 1:
        return FixedPointResult(zero, es.pairs, 0, 0.0, True, regime="zero", rho=rho)
    v = perron_vector(M)
    eps = 1e-3 * float(v.min())
    for _ in range(61):
        cond = check_condition_h_small(spec, eps * v)
        if cond.holds_strictly:
            break
        eps *= 0.5
    else:
        raise NumericError("no eps found for which eps*v satisfies the strict condition",
                           traces={"eps": [eps]})
    lo, hi, it, res, gap, stalled, up, down = _sandwich(spec, eps * v, math.inf, tol, max_iter)
    agree = gap <= 10 * tol
    result = FixedPointResult(
        z=0.5 * (lo + hi), pairs=es.pairs, iterations=it, residual=res,
        converged=agree and res <= tol, nondecreasing=up, nonincreasing=down,
        stalled=stalled, gap=gap, regime="positive", rho=rho)
    result.notes.append(f"eps = {eps:.6e}")
    if not agree:
        result.notes.append(f"eps*v and +inf limits differ by {gap:.3e}")
    return result


# -- existence / uniqueness conditions ------------------------------------------


@dataclass
class ConditionReport:
    holds: bool
    holds_strictly: bool
    fails_at: list
    positive_boundary: bool | None = None

    def to_dict(self) -> dict:
        return {
            "holds": self.holds,
            "holds_strictly": self.holds_strictly,
            "fails_at": [list(p) for p in self.fails_at],
            "positive_boundary": self.positive_boundary,
        }


def _boundary_lhs(spec: ModelSpec, hb: np.ndarray) -> np.ndarray:
    plan = _plan(spec)
    return plan.counts @ f_beta(plan.beta_src, plan.h_src + hb)


def check_condition_h_small(spec: ModelSpec, h_low) -> ConditionReport:
    """Does ``h_low`` start a non-decreasing trajectory?

    Checks ``sum_c (k_ac - [c == b]) F(beta_ac, h_c + h_low[(c, a)]) >= h_low[(a, b)]``
    for every pair; ``holds_strictly`` asks for strict inequality on every
    pair whose class has degree at least two.  ``positive_boundary`` reports
    ``h_low[(a, b)] >= -h_a``.
    """
    plan = _plan(spec)
    hb = boundary_vector(spec, h_low)
    lhs = _boundary_lhs(spec, hb)
    ok = lhs >= hb
    strict_rows = plan.cavity_degree >= 1
    strict = np.where(strict_rows, lhs > hb, ok)
    pairs = plan.edges.pairs
    return ConditionReport(
        holds=bool(ok.all()),
        holds_strictly=bool(strict.all()),
        fails_at=[pairs[i] for i in np.flatnonzero(~ok)],
        positive_boundary=bool(np.all(hb >= -plan.h_src)),
    )


def check_condition_h_big(spec: ModelSpec, h_high) -> ConditionReport:
    """Mirror image: does ``h_high`` start a non-increasing trajectory?"""
    plan = _plan(spec)
    hb = boundary_vector(spec, h_high)
    lhs = _boundary_lhs(spec, hb)
    ok = lhs <= hb
    strict_rows = plan.cavity_degree >= 1
    strict = np.where(strict_rows, lhs < hb, ok)
    pairs = plan.edges.pairs
    return ConditionReport(
        holds=bool(ok.all()),
        holds_strictly=bool(strict.all()),
        fails_at=[pairs[i] for i in np.flatnonzero(~ok)],
    )


def strict_increase_witness(spec: ModelSpec, h_low, s_max: int = 1000) -> dict:
    """First step ``s`` with ``z(s) > z(s-1)`` along the trajectory from
    ``h_low``, per pair of degree-two-or-more classes (``None`` if not seen
    within ``s_max`` steps).  This is only reported, not used to certify
    uniqueness."""
    plan = _plan(spec)
    traj = trajectory(spec, h_low, s_max)
    out = {}
    for i, pair in enumerate(plan.edges.pairs):
        if plan.cavity_degree[i] < 1:
            continue
        inc = np.flatnonzero(np.diff(traj[:, i]) > 0)
        out[pair] = int(inc[0]) + 1 if inc.size else None
    return out


# -- concavity -------------------------------------------------------------------


@dataclass
class ConcavityTable:
    """Second differences indexed ``[delta, s, pair]``."""

    deltas: np.ndarray
    direction: tuple
    values: np.ndarray
    pairs: tuple

    @property
    def max(self) -> float:
        return float(np.max(self.values))

    def rows(self):
        for d, delta in enumerate(self.deltas):
            for s in range(self.values.shape[1]):
                for i, p in enumerate(self.pairs):
                    yield float(delta), s, p, float(self.values[d, s, i])


def concavity_probe(spec: ModelSpec, h_star_base, direction, deltas=(1e-2, 1e-3),
                    s_max: int = 12) -> ConcavityTable:
    """Second differences of ``z(s, h*)`` along one boundary coordinate.

    For each ``delta`` the difference is centred at ``base + delta e`` using
    the points ``base``, ``base + delta e`` and ``base + 2 delta e``, so that
    every evaluation point stays above the base boundary.
    """
    es = class_edge_set(spec)
    base = boundary_vector(spec, h_star_base)
    if not np.all(np.isfinite(base)):
        raise RegimeError("concavity probe needs a finite base boundary", reason="infinite-base")
    cond = check_condition_h_small(spec, base)
    if not (cond.holds and cond.positive_boundary):
        raise RegimeError("base boundary violates the small-boundary or positivity condition",
                          reason="precondition")
    j = direction if isinstance(direction, (int, np.integer)) else es.index[tuple(direction)]
    e = np.zeros(len(es))
    e[j] = 1.0
    deltas = np.asarray(deltas, dtype=float)
    vals = np.empty((len(deltas), s_max + 1, len(es)))
    z0 = trajectory(spec, base, s_max)
    for d, delta in enumerate(deltas):
        z1 = trajectory(spec, base + delta * e, s_max)
        z2 = trajectory(spec, base + 2 * delta * e, s_max)
        vals[d] = (z0 - 2 * z1 + z2) / delta**2
    return ConcavityTable(deltas, es.pairs[j], vals, es.pairs)


# -- high temperature --------------------------------------------------------------


@dataclass
class HighTempReport:
    rho: float
    unique: bool
    gap: np.ndarray
    zbar: np.ndarray | None
    iterations: int
    pairs: tuple

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "unique": self.unique,
            "gap": [float(x) for x in self.gap],
            "zbar": None if self.zbar is None else [float(x) for x in self.zbar],
            "iterations": self.iterations,
            "pairs": [list(p) for p in self.pairs],
        }


def high_temp_contraction_check(spec: ModelSpec, tol: float = DEFAULT_TOL,
                                max_iter: int = DEFAULT_MAX_ITER) -> HighTempReport:
    """rho(M) and, when it is below one, the terminal gap between the
    ``h* = -inf`` and ``h* = +inf`` trajectories."""
    from .spectral import build_M, spectral_radius

    es = class_edge_set(spec)
    rho = spectral_radius(build_M(spec))
    if rho >= 1:
        return HighTempReport(rho, False, np.full(len(es), np.inf), None, 0, es.pairs)
    lo, hi, it, res, gap, stalled, _, _ = _sandwich(spec, -math.inf, math.inf, tol, max_iter)
    gapv = hi - lo
    unique = bool(np.max(np.abs(gapv)) <= 10 * tol)
    return HighTempReport(rho, unique, gapv, 0.5 * (lo + hi), it, es.pairs)


def solve(spec: ModelSpec, tol: float = DEFAULT_TOL,
          max_iter: int = DEFAULT_MAX_ITER) -> FixedPointResult:
    """Pick the solver matching the field regime.

    * all fields >= 0, some > 0 (and the degree condition): squeeze from 0/+inf
    * all fields zero: the positive fixed point (or zero below criticality)
    * rho(M) < 1, any fields: squeeze from -inf/+inf
    Otherwise a :class:`RegimeError` is raised.
    """
    h = np.array(spec.h)
    if np.all(h >= 0) and np.any(h > 0) and (np.all(h > 0) or min(spec.degrees) >= 2):
        return fixed_point_nonneg(spec, tol, max_iter)
    if np.all(h == 0) and min(spec.degrees) >= 2 and not is_simply_cyclic(spec):
        return fixed_point_zero_field_positive(spec, tol, max_iter)
    rep = high_temp_contraction_check(spec, tol, max_iter)
    if rep.zbar is not None:
        gap = float(np.max(np.abs(rep.gap)))
        return FixedPointResult(rep.zbar, rep.pairs, rep.iterations, gap, rep.unique,
                                gap=gap, regime="high-temperature", rho=rep.rho)
    raise RegimeError(
        f"no uniqueness statement applies (rho(M) = {rep.rho:.6g} >= 1 with these fields)",
        reason="uncovered")
