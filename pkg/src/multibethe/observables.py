"""Thermodynamic-limit observables evaluated at a cavity fixed point."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cavity import CRITICAL_WINDOW, DEFAULT_TOL, f_beta, fixed_point_zero_field_positive, solve
from .errors import CriticalPointError, RegimeError, StructuralError
from .model import ModelSpec, class_edge_set, is_simply_cyclic
from .spectral import build_M, spectral_radius


def _zbar(spec: ModelSpec, zbar) -> np.ndarray:
    z = np.asarray(getattr(zbar, "z", zbar), dtype=float)
    m = len(class_edge_set(spec))
    if z.shape != (m,):
        raise StructuralError(f"cavity vector has shape {z.shape}, expected ({m},)")
    return z


def edge_weight(spec: ModelSpec, a: int, b: int) -> float:
    """alpha_a k_ab / 2^[a == b]: edges of type {a, b} per vertex."""
    w = float(spec.alpha[a]) * spec.k[a][b]
    return w / 2 if a == b else w


def local_field(spec: ModelSpec, zbar, a: int) -> float:
    """Full effective field on a class-a vertex: h_a + sum_c k_ac F(beta_ac, z[(c, a)])."""
    es = class_edge_set(spec)
    z = _zbar(spec, zbar)
    total = spec.h[a]
    for c in es.neighbours[a]:
        total += spec.k[a][c] * f_beta(spec.coupling(a, c), z[es.index[(c, a)]])
    return total


def magnetization(spec: ModelSpec, zbar, a: int) -> float:
    return math.tanh(local_field(spec, zbar, a))


def edge_correlation(spec: ModelSpec, zbar, a: int, b: int) -> float:
    """Limit of <s_i s_j> over edges joining classes a and b."""
    es = class_edge_set(spec)
    if (a, b) not in es:
        raise StructuralError(f"({a}, {b}) is not a class edge")
    z = _zbar(spec, zbar)
    m = math.tanh(z[es.index[(a, b)]]) * math.tanh(z[es.index[(b, a)]])
    return math.tanh(spec.coupling(a, b) + math.atanh(m))


def averages(spec: ModelSpec, zbar) -> tuple[float, float]:
    """(mean magnetization per vertex, sum of edge correlations per vertex)."""
    mag = sum(float(spec.alpha[a]) * magnetization(spec, zbar, a) for a in range(spec.n))
    dens = sum(edge_weight(spec, a, b) * edge_correlation(spec, zbar, a, b)
               for a, b in class_edge_set(spec).pairs)
    return mag, dens


def bethe_pressure(spec: ModelSpec, zbar) -> float:
    """Limit of N^-1 log Z evaluated at the fixed point ``zbar``."""
    es = class_edge_set(spec)
    z = _zbar(spec, zbar)
    if not np.all(np.isfinite(z)):
        raise StructuralError("bethe_pressure needs a finite fixed point")
    mm = np.tanh(z)
    edge_part = 0.0
    site_part = 0.0
    for a in range(spec.n):
        al = float(spec.alpha[a])
        plus = spec.h[a]
        minus = -spec.h[a]
        inner = 0.0
        for b in es.neighbours[a]:
            th = math.tanh(spec.coupling(a, b))
            kab = spec.k[a][b]
            m_ab, m_ba = mm[es.index[(a, b)]], mm[es.index[(b, a)]]
            inner += kab * (0.5 * math.log1p(-th * th) + math.log1p(th * m_ab * m_ba))
            plus += kab * math.log1p(th * m_ba)
            minus += kab * math.log1p(-th * m_ba)
        edge_part += al * inner
        site_part += al * np.logaddexp(plus, minus)
    return float(-0.5 * edge_part + site_part)


def pressure_beta_derivative(spec: ModelSpec, zbar, a: int, b: int) -> float:
    """d p / d beta_ab = (alpha_a k_ab / 2^[a == b]) * edge correlation."""
    return edge_weight(spec, a, b) * edge_correlation(spec, zbar, a, b)


def free_pressure(spec: ModelSpec) -> float:
    """Pressure of independent spins: log 2 + sum_a alpha_a log cosh h_a."""
    return math.log(2.0) + sum(float(al) * math.log(math.cosh(h))
                               for al, h in zip(spec.alpha, spec.h))


def regime_of(rho: float) -> str:
    if abs(rho - 1) < CRITICAL_WINDOW:
        return "critical"
    return "subcritical" if rho < 1 else "supercritical"


def spontaneous_magnetization(spec: ModelSpec, a: int, tol: float = DEFAULT_TOL) -> float:
    """h -> 0+ limit of the class-a magnetization.

    Zero when rho(M) < 1, ``tanh(sum_c k_ac F(beta_ac, z+[(c, a)]))`` with the
    positive zero-field fixed point when rho(M) > 1.  Raises
    :class:`CriticalPointError` inside the critical window.
    """
    if any(x != 0 for x in spec.h):
        raise RegimeError("spontaneous magnetization is defined at zero field", reason="nonzero-field")
    if min(spec.degrees) < 2:
        raise RegimeError("every class needs degree >= 2", reason="degree")
    if is_simply_cyclic(spec):
        raise RegimeError("simply cyclic class graph is not supported", reason="simply-cyclic")
    res = fixed_point_zero_field_positive(spec, tol)
    if res.regime == "critical":
        raise CriticalPointError(f"rho(M) = {res.rho!r} is within {CRITICAL_WINDOW} of 1", res.rho)
    if res.regime == "zero":
        return 0.0
    return magnetization(spec, res.z, a)


@dataclass
class ObservableReport:
    pairs: tuple
    magnetization: list[float]
    edge_correlation: dict
    average_magnetization: float
    edge_correlation_density: float
    bethe_pressure: float
    rho: float
    regime: str
    spontaneous_magnetization: list[float] | None = None
    fixed_point: dict | None = None
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "magnetization": list(self.magnetization),
            "edge_correlation": [{"a": a, "b": b, "value": v}
                                 for (a, b), v in self.edge_correlation.items()],
            "average_magnetization": self.average_magnetization,
            "edge_correlation_density": self.edge_correlation_density,
            "bethe_pressure": self.bethe_pressure,
            "rho": self.rho,
            "regime": self.regime,
            "spontaneous_magnetization": self.spontaneous_magnetization,
            "fixed_point": self.fixed_point,
            "flags": list(self.flags),
        }


def report(spec: ModelSpec, zbar, fixed_point: dict | None = None) -> ObservableReport:
    """Collect every observable at ``zbar``.

    At zero field (with the degree and topology hypotheses) the spontaneous
    magnetizations are added; inside the critical window they are omitted and
    a ``critical`` flag is set instead.
    """
    z = _zbar(spec, zbar)
    rho = spectral_radius(build_M(spec))
    regime = regime_of(rho)
    mags = [magnetization(spec, z, a) for a in range(spec.n)]
    corr = {(a, b): edge_correlation(spec, z, a, b)
            for a, b in class_edge_set(spec).pairs if a <= b}
    avg_m, dens = averages(spec, z)
    flags = []
    spont = None
    if all(x == 0 for x in spec.h) and min(spec.degrees) >= 2 and not is_simply_cyclic(spec):
        if regime == "critical":
            flags.append("critical")
        else:
            spont = [spontaneous_magnetization(spec, a) for a in range(spec.n)]
    return ObservableReport(
        pairs=class_edge_set(spec).pairs, magnetization=mags, edge_correlation=corr,
        average_magnetization=avg_m, edge_correlation_density=dens,
        bethe_pressure=bethe_pressure(spec, z), rho=rho, regime=regime,
        spontaneous_magnetization=spont, fixed_point=fixed_point, flags=flags)


def solve_and_report(spec: ModelSpec, tol: float = DEFAULT_TOL) -> ObservableReport:
    res = solve(spec, tol)
    return report(spec, res.z, res.to_dict())
