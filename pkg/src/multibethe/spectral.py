"""Weighted and unweighted non-backtracking matrices on class edges.

Rows and columns follow the class-edge order.  Entry ``((a, b), (c, d))`` is
nonzero only when ``d == a``; it equals ``tanh(beta_ac) (k_ac - 1)`` on the
backtracking column ``c == b`` and ``tanh(beta_ac) k_ac`` otherwise.  The
linearisation of the cavity recursion at zero is exactly this matrix, so
``rho(M) = 1`` is the phase boundary at zero field.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, RegimeError, StructuralError
from .model import ModelSpec, class_edge_set

DEFAULT_TOL = 1e-12


@dataclass(frozen=True)
class NonBacktrackingMatrix:
    matrix: np.ndarray
    pairs: tuple
    weighted: bool

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)

    @property
    def shape(self):
        return self.matrix.shape

    def to_csv(self, path) -> None:
        labels = [f"{a}-{b}" for a, b in self.pairs]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row"] + labels)
            for lab, row in zip(labels, self.matrix):
                w.writerow([lab] + [repr(float(x)) for x in row])


def _build(spec: ModelSpec, weighted: bool) -> NonBacktrackingMatrix:
    es = class_edge_set(spec)
    m = len(es)
    out = np.zeros((m, m))
    for i, (a, b) in enumerate(es.pairs):
        for c in es.neighbours[a]:
            w = math.tanh(spec.coupling(a, c)) if weighted else 1.0
            out[i, es.index[(c, a)]] = w * (spec.k[a][c] - (c == b))
    return NonBacktrackingMatrix(out, es.pairs, weighted)


def build_M(spec: ModelSpec) -> NonBacktrackingMatrix:
    """Weighted non-backtracking matrix."""
    return _build(spec, weighted=True)


def build_Mbar(spec: ModelSpec) -> NonBacktrackingMatrix:
    """Same sparsity and multiplicities as :func:`build_M`, without tanh weights."""
    return _build(spec, weighted=False)


def _as_matrix(M) -> np.ndarray:
    A = np.asarray(M.matrix if isinstance(M, NonBacktrackingMatrix) else M, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise StructuralError(f"expected a square matrix, got shape {A.shape}")
    return A


def _reach(adj: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[start] = True
    todo = deque([start])
    while todo:
        u = todo.popleft()
        for v in np.flatnonzero(adj[u]):
            if not seen[v]:
                seen[v] = True
                todo.append(v)
    return seen


def _unreachable_pair(A: np.ndarray) -> tuple[int, int] | None:
    adj = A > 0
    fwd = _reach(adj, 0)
    if not fwd.all():
        return 0, int(np.flatnonzero(~fwd)[0])
    back = _reach(adj.T, 0)
    if not back.all():
        return int(np.flatnonzero(~back)[0]), 0
    return None


def is_irreducible_matrix(M) -> bool:
    """Strong connectivity of the support digraph (a 1x1 matrix is irreducible
    by convention)."""
    A = _as_matrix(M)
    if A.shape[0] == 1:
        return True
    return _unreachable_pair(A) is None


def gelfand_radius(M, tol: float = DEFAULT_TOL, max_squarings: int = 60):
    """Spectral radius from ``||B^s||_inf^(1/s)`` with ``B = M + I`` along
    ``s = 1, 2, 4, ...`` by repeated squaring.

    For non-negative ``M``, ``rho(M + I) = rho(M) + 1`` and the shift makes
    ``B`` primitive whenever ``M`` is irreducible, so periodic matrices do not
    produce repeated norms.  The estimate behaves like ``rho (1 + c / s)``;
    consecutive values are combined by Richardson extrapolation, and the loop
    stops after two successive changes below ``tol``.  Powers are renormalised
    at every squaring so the log-norm accumulates without overflow.
    Returns ``(estimate, trace)`` where the trace holds the raw estimates of
    ``rho(M)``.
    """
    A = _as_matrix(M)
    trace = []
    B = A + np.eye(A.shape[0])
    log_scale = 0.0
    s = 1
    prev = None
    quiet = 0
    best = None
    for _ in range(max_squarings + 1):
        nrm = np.max(np.sum(np.abs(B), axis=1))
        est = math.exp((log_scale + math.log(nrm)) / s) - 1.0
        trace.append(est)
        if prev is not None:
            best = 2 * est - prev
            quiet = quiet + 1 if abs(est - prev) <= tol * max(1.0, est) else 0
            if quiet >= 2:
                return max(best, 0.0), trace
        prev = est
        log_scale += math.log(nrm)
        B = B / nrm
        B = B @ B
        log_scale *= 2
        s *= 2
    return max(trace[-1] if best is None else best, 0.0), trace


def _power_bracket(A: np.ndarray, tol: float, max_iter: int):
    """Power iteration on ``A + I`` with Collatz-Wielandt bounds.

    For an irreducible non-negative ``A`` and a positive vector ``x``,
    ``min (Ax)_i / x_i <= rho(A) <= max (Ax)_i / x_i``.  The shift makes the
    iteration converge for periodic matrices too.
    Returns ``(rho, x, trace, converged)``.
    """
    m = A.shape[0]
    S = A + np.eye(m)
    x = np.ones(m) / math.sqrt(m)
    trace = []
    for _ in range(max_iter):
        y = S @ x
        ratio = y / x
        lo, hi = float(ratio.min()), float(ratio.max())
        trace.append(0.5 * (lo + hi) - 1.0)
        x = y / np.linalg.norm(y)
        if hi - lo <= tol:
            return 0.5 * (lo + hi) - 1.0, x, trace, True
    return trace[-1], x, trace, False


def spectral_radius(M, tol: float = DEFAULT_TOL, max_iter: int = 1_000_000) -> float:
    """rho(M) for a square non-negative matrix.

    Irreducible matrices use shifted power iteration with a Collatz-Wielandt
    bracket; the Gelfand estimate is computed as well and must agree within
    ``tol`` (relative to ``max(1, rho)``).  Reducible matrices use the Gelfand
    estimate alone.
    """
    A = _as_matrix(M)
    if np.any(A < 0):
        raise StructuralError("spectral_radius expects a non-negative matrix")
    if A.shape[0] == 1:
        return float(A[0, 0])
    g, gtrace = gelfand_radius(A, tol)
    if not is_irreducible_matrix(A):
        return g
    rho, _, ptrace, ok = _power_bracket(A, tol, max_iter)
    if not ok or abs(rho - g) > 10 * tol * max(1.0, rho):
        raise NumericError(
            f"spectral radius estimators disagree (power {rho!r}, Gelfand {g!r})",
            traces={"power": ptrace[-20:], "gelfand": gtrace})
    return rho


def perron_vector(M, tol: float = DEFAULT_TOL, max_iter: int = 1_000_000) -> np.ndarray:
    """Positive unit-norm eigenvector for rho(M) of an irreducible matrix."""
    A = _as_matrix(M)
    if A.shape[0] == 1:
        return np.ones(1)
    bad = _unreachable_pair(A)
    if bad is not None:
        raise StructuralError(f"matrix is reducible: no path from index {bad[0]} to {bad[1]}")
    rho, x, trace, ok = _power_bracket(A, tol * 1e-2, max_iter)
    if not ok:
        raise NumericError("power iteration did not converge", traces={"power": trace[-20:]})
    x = np.abs(x) / np.linalg.norm(x)
    return x


def critical_beta(spec: ModelSpec) -> float:
    """Critical inverse temperature ``atanh(1 / rho(Mbar))`` for homogeneous
    couplings; ``+inf`` when ``rho(Mbar) <= 1``."""
    if not spec.is_homogeneous_beta():
        raise RegimeError("critical_beta assumes homogeneous couplings", reason="inhomogeneous")
    r = spectral_radius(build_Mbar(spec))
    if r <= 1:
        return math.inf
    return math.atanh(1.0 / r)


def _atanh_inv(d: int) -> float:
    return math.atanh(1.0 / d) if d > 1 else math.inf


def critical_beta_bounds(spec: ModelSpec) -> tuple[float, float]:
    """``(atanh(1/(max k_a - 1)), atanh(1/(min k_a - 1)))``.

    The upper bound is ``+inf`` whenever ``min k_a <= 2``.
    """
    deg = spec.degrees
    return _atanh_inv(max(deg) - 1), _atanh_inv(min(deg) - 1)
