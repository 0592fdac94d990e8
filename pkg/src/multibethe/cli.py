"""Command line interface: ``multibethe {validate,solve,sweep,verify,generate}``.

Exit codes: 0 success, 2 bad input (flags or spec file), 3 infeasible spec
or size, 4 solver regime error, 5 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import secrets
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .cavity import DEFAULT_TOL, iterate, solve
from .errors import (CriticalPointError, FeasibilityError, MultibetheError, RegimeError,
                     SamplingError, SpecError, StructuralError)
from .model import load_spec, validate_spec

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_REGIME, EXIT_VERIFY = 0, 2, 3, 4, 5


@dataclass
class RunManifest:
    command: str
    argv: list
    spec_sha256: str | None
    seeds: list
    tool_version: str = __version__
    schema_version: int = SCHEMA_VERSION
    started: str = ""
    finished: str = ""
    outputs: list = field(default_factory=list)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _positive_float(text: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (x > 0 and math.isfinite(x)):
        raise argparse.ArgumentTypeError(f"must be positive and finite: {text!r}")
    return x


def _positive_int(text: str) -> int:
    try:
        x = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if x < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text!r}")
    return x


def _seed(text: str) -> int:
    try:
        x = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= x < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return x


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("MULTIBETHE_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def _emit(doc: dict) -> None:
    sys.stdout.write(json.dumps(doc, indent=2, allow_nan=True) + "\n")


def _fail(code: int, message: str, **extra) -> int:
    _emit({"schema_version": SCHEMA_VERSION, "error": message, **extra})
    return code


class _Run:
    """Collects outputs and writes the manifest when ``--out`` is given."""

    def __init__(self, args, spec=None, seeds=()):
        self.out = Path(args.out) if getattr(args, "out", None) else None
        self.manifest = RunManifest(args.command, list(getattr(args, "argv", [])),
                                    spec.digest() if spec is not None else None,
                                    list(seeds), started=_now())

    def write(self, name: str, text: str) -> None:
        if self.out is None:
            return
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / name).write_text(text)
        self.manifest.outputs.append(name)

    def close(self) -> None:
        if self.out is None:
            return
        self.manifest.finished = _now()
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "manifest.json").write_text(json.dumps(asdict(self.manifest), indent=2) + "\n")


def _read_spec(path):
    if path is None:
        raise SpecError("--spec is required")
    return load_spec(path)


# -- validate ------------------------------------------------------------------------


def cmd_validate(args) -> int:
    spec = _read_spec(args.spec)
    rep = validate_spec(spec)
    doc = {"schema_version": SCHEMA_VERSION, **rep.to_dict(), "manifest": "manifest.json"}
    run = _Run(args, spec)
    run.write("report.json", json.dumps(doc, indent=2) + "\n")
    run.close()
    _emit(doc)
    return EXIT_OK if rep.verdict else EXIT_INFEASIBLE


# -- solve ---------------------------------------------------------------------------


def _boundary_value(args, spec):
    if args.boundary == "zero":
        return 0.0
    if args.boundary == "plus":
        return math.inf
    if args.boundary == "minus":
        return -math.inf
    if args.boundary_file is None:
        raise SpecError("--boundary file needs --boundary-file PATH")
    try:
        doc = json.loads(Path(args.boundary_file).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SpecError(f"cannot read boundary file: {exc}") from exc
    values = doc.get("boundary") if isinstance(doc, dict) else doc
    if isinstance(values, (int, float)):
        return float(values)
    return np.array([float(x) for x in values])


def _solve_doc(spec, args):
    from .observables import report

    if args.boundary is None:
        res = solve(spec, args.tol, args.max_iter)
    else:
        res = iterate(spec, _boundary_value(args, spec), args.tol, args.max_iter)
        res.regime = f"boundary-{args.boundary}"
    if not np.all(np.isfinite(res.z)):
        raise RegimeError("fixed point is not finite", reason="non-finite")
    rep = report(spec, res.z, res.to_dict())
    if not res.converged:
        rep.flags.append("not-converged")
    return rep


def cmd_solve(args) -> int:
    spec = _read_spec(args.spec)
    rep = _solve_doc(spec, args)
    doc = {"schema_version": SCHEMA_VERSION, **rep.to_dict(), "manifest": "manifest.json"}
    run = _Run(args, spec)
    run.write("report.json", json.dumps(doc, indent=2) + "\n")
    run.close()
    _emit(doc)
    return EXIT_OK


# -- sweep ---------------------------------------------------------------------------


def _sweep_row(spec, beta: float, tol: float) -> dict:
    from .observables import bethe_pressure, edge_correlation, magnetization, spontaneous_magnetization
    from .spectral import build_M, spectral_radius

    s = spec.with_beta(beta)
    row = {"beta": beta, "rho": spectral_radius(build_M(s)), "status": "ok"}
    pairs = [p for p in _pairs(spec)]
    try:
        res = solve(s, tol)
        row["m"] = [magnetization(s, res.z, a) for a in range(s.n)]
        row["gamma"] = [edge_correlation(s, res.z, a, b) for a, b in pairs]
        row["p"] = bethe_pressure(s, res.z)
    except RegimeError as exc:
        row["status"] = exc.reason
        row["m"] = [math.nan] * s.n
        row["gamma"] = [math.nan] * len(pairs)
        row["p"] = math.nan
    row["S"] = [math.nan] * s.n
    if all(x == 0 for x in s.h):
        try:
            row["S"] = [spontaneous_magnetization(s, a, tol) for a in range(s.n)]
        except CriticalPointError:
            row["status"] = "critical"
        except RegimeError:
            pass
    return row


def _pairs(spec):
    from .model import class_edge_set

    return [p for p in class_edge_set(spec).pairs if p[0] <= p[1]]


def sweep_table(spec, start: float, stop: float, points: int, tol: float = DEFAULT_TOL,
                threads: int = 1) -> tuple[str, float | None]:
    """CSV text of the phase-diagram sweep and the critical beta (if defined)."""
    from .spectral import critical_beta

    betas = np.linspace(start, stop, points).tolist()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda b: _sweep_row(spec, b, tol), betas))
    else:
        rows = [_sweep_row(spec, b, tol) for b in betas]
    try:
        bc = critical_beta(spec)
    except RegimeError:
        bc = None
    pairs = _pairs(spec)
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION} manifest=manifest.json beta_c={bc!r}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["beta", "rho", "side"] + [f"m_{a}" for a in range(spec.n)]
               + [f"gamma_{a}-{b}" for a, b in pairs] + ["p"]
               + [f"S_{a}" for a in range(spec.n)] + ["status"])
    for r in rows:
        if r["status"] == "critical":
            side = "critical"
        else:
            side = "below" if r["rho"] < 1 else "above"
        w.writerow([repr(r["beta"]), repr(r["rho"]), side] + [repr(x) for x in r["m"]]
                   + [repr(x) for x in r["gamma"]] + [repr(r["p"])]
                   + [repr(x) for x in r["S"]] + [r["status"]])
    return buf.getvalue(), bc


def cmd_sweep(args) -> int:
    spec = _read_spec(args.spec)
    if args.param != "beta":
        raise SpecError("only --param beta is supported")
    text, bc = sweep_table(spec, args.start, args.stop, args.points, args.tol, _threads(args))
    run = _Run(args, spec)
    run.write("sweep.csv", text)
    run.close()
    if args.format == "json":
        rows = list(csv.DictReader(line for line in text.splitlines() if not line.startswith("#")))
        _emit({"schema_version": SCHEMA_VERSION, "beta_c": bc, "rows": rows})
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- verify --------------------------------------------------------------------------


def _suite_trees(seed: int):
    from .exact import tree_recursion_oracle, tree_two_point_oracle, tree_size
    from .model import class_edge_set, random_spec

    rng = np.random.default_rng(seed)
    records = []
    while len(records) < 24:
        spec = random_spec(rng, n_max=3, k_max=3, beta_range=(0.0, 1.0), h_range=(0.0, 1.0))
        a = int(rng.integers(spec.n))
        t = int(rng.integers(0, 4))
        if tree_size(spec, a, t) > 22:
            continue
        bd = [0.0, math.inf, -math.inf][len(records) % 3]
        records.append(tree_recursion_oracle(spec, a, t, bd))
        a, b = class_edge_set(spec).pairs[int(rng.integers(len(class_edge_set(spec))))]
        tt = min(t, 2)
        if tree_size(spec, a, tt, b) + tree_size(spec, b, tt, a) <= 22:
            records.append(tree_two_point_oracle(spec, a, b, tt, bd))
    return [r.to_dict() for r in records]


def _suite_inequalities(seed: int):
    from .exact import inequality_suite, random_spin_system

    rng = np.random.default_rng(seed)
    out = []
    for i in range(30):
        which = ["GKS", "FKG", "GHS"][i % 3]
        hr = (-1.0, 1.0) if which == "FKG" else (0.0, 1.0)
        system = random_spin_system(rng, n_max=7, h_range=hr)
        rep = inequality_suite(system, which, seed=i)
        out.append({"kind": which, "passed": rep.holds, "worst_margin": rep.worst_margin})
    return out


def _suite_mcmc(seed: int):
    from .exact import SpinSystem, gibbs_enumerate
    from .graphgen import generate
    from .mcmc import McmcConfig, estimate_observables, sample_spin_system
    from .model import regular_spec
    from .observables import solve_and_report

    out = []
    system = SpinSystem(3, [(0, 1), (1, 2)], [0.5, 0.8], [0.1, -0.2, 0.3])
    exact = gibbs_enumerate(system)
    mags, _ = sample_spin_system(system, McmcConfig(sweeps=60000, burn_in_sweeps=1000, seed=seed))
    for i, m in enumerate(mags):
        out.append({"kind": "three-spin", "vertex": i, "estimate": m.mean, "se": m.se,
                    "exact": float(exact.mean[i]), "passed": m.within(exact.mean[i], nse=4.0)})
    spec = regular_spec(3, beta=0.2, h=0.1)
    bp = solve_and_report(spec)
    res = estimate_observables(generate(spec, 600, seed), spec,
                               McmcConfig(sweeps=3000, burn_in_sweeps=300, seed=seed))
    m = res.magnetization[0]
    out.append({"kind": "regular-3", "estimate": m.mean, "se": m.se,
                "bp": bp.magnetization[0], "passed": m.within(bp.magnetization[0], floor=0.01)})
    return out


def _suite_spectral(seed: int):
    from .model import figure_one_spec, random_spec, regular_spec
    from .spectral import build_Mbar, critical_beta, critical_beta_bounds, spectral_radius

    out = []
    bc = critical_beta(regular_spec(3, beta=0.5))
    out.append({"kind": "critical_beta_k3", "value": bc, "expected": math.atanh(0.5),
                "passed": abs(bc - math.atanh(0.5)) <= 1e-9})
    A = build_Mbar(figure_one_spec()).matrix
    r = spectral_radius(A)
    ev = float(np.max(np.abs(np.linalg.eigvals(A))))
    out.append({"kind": "fig1_rho", "value": r, "expected": ev, "passed": abs(r - ev) <= 1e-9})
    rng = np.random.default_rng(seed)
    for _ in range(20):
        spec = random_spec(rng, min_degree=2, homogeneous_beta=True)
        lo, hi = critical_beta_bounds(spec)
        b = critical_beta(spec)
        out.append({"kind": "bounds", "value": b, "lower": lo, "upper": hi,
                    "passed": lo - 1e-12 <= b <= hi + 1e-12})
    return out


SUITES = {"trees": _suite_trees, "inequalities": _suite_inequalities,
          "mcmc": _suite_mcmc, "spectral": _suite_spectral}


def cmd_verify(args) -> int:
    seed = args.seed
    names = list(SUITES) if args.suite == "all" else [args.suite]
    summary = {"schema_version": SCHEMA_VERSION, "seed": seed, "suites": {},
               "manifest": "manifest.json"}
    failures = []
    for name in names:
        records = SUITES[name](seed)
        bad = [r for r in records if not r["passed"]]
        summary["suites"][name] = {"checks": len(records), "failed": len(bad)}
        failures.extend({"suite": name, **r} for r in bad)
    summary["passed"] = not failures
    if failures:
        summary["failures"] = failures
    run = _Run(args, None, [seed])
    run.write("verify.json", json.dumps(summary, indent=2, default=str) + "\n")
    run.close()
    sys.stdout.write(json.dumps(summary, indent=2, default=str) + "\n")
    return EXIT_OK if not failures else EXIT_VERIFY


# -- generate ------------------------------------------------------------------------


def cmd_generate(args) -> int:
    from .graphgen import edge_type_counts, generate, verify_regularity, write_edgelist

    spec = _read_spec(args.spec)
    g = generate(spec, args.N, args.seed)
    run = _Run(args, spec, [args.seed])
    if run.out is not None:
        run.out.mkdir(parents=True, exist_ok=True)
        write_edgelist(g, run.out / "graph.txt", spec)
        run.manifest.outputs += ["graph.txt", "graph.txt.json"]
    run.close()
    _emit({"schema_version": SCHEMA_VERSION, "N": g.N, "seed": args.seed, "edges": g.n_edges,
           "regular": verify_regularity(g, spec),
           "edge_types": [{"a": a, "b": b, "count": c}
                          for (a, b), c in sorted(edge_type_counts(g).items())]})
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, spec_required: bool = True) -> None:
    p.add_argument("--spec", required=spec_required, help="model spec JSON file")
    p.add_argument("--seed", type=_seed, default=None, help="64-bit RNG seed (drawn if absent)")
    p.add_argument("--tol", type=_positive_float, default=DEFAULT_TOL)
    p.add_argument("--out", default=None, help="directory for reports and manifest.json")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--threads", type=_positive_int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multibethe", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="feasibility report for a spec")
    _common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="cavity fixed point and observables")
    _common(p)
    p.add_argument("--boundary", choices=["zero", "plus", "minus", "file"], default=None,
                   help="iterate from this boundary instead of the regime-aware solver")
    p.add_argument("--boundary-file", default=None)
    p.add_argument("--max-iter", type=_positive_int, default=1_000_000)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="homogeneous-beta phase diagram as CSV")
    _common(p)
    p.add_argument("--param", default="beta", choices=["beta"])
    p.add_argument("--from", dest="start", type=float, required=True)
    p.add_argument("--to", dest="stop", type=float, required=True)
    p.add_argument("--points", type=_positive_int, default=51)
    p.set_defaults(func=cmd_sweep, format="csv")

    p = sub.add_parser("verify", help="run an oracle suite")
    _common(p, spec_required=False)
    p.add_argument("--suite", choices=list(SUITES) + ["all"], default="all")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("generate", help="sample a k-regular multispecies graph")
    _common(p)
    p.add_argument("--N", type=_positive_int, required=True)
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    args.argv = argv
    if args.seed is None:
        args.seed = secrets.randbits(64)
        if args.command in ("generate", "verify"):
            print(f"seed: {args.seed}", file=sys.stderr)
    try:
        return args.func(args)
    except (SpecError, StructuralError) as exc:
        return _fail(EXIT_INPUT, str(exc))
    except FeasibilityError as exc:
        return _fail(EXIT_INFEASIBLE, str(exc))
    except SamplingError as exc:
        return _fail(EXIT_INFEASIBLE, str(exc), diagnostics=exc.diagnostics)
    except RegimeError as exc:
        return _fail(EXIT_REGIME, str(exc), reason=exc.reason)
    except MultibetheError as exc:
        return _fail(EXIT_REGIME, str(exc), reason=type(exc).__name__)


if __name__ == "__main__":
    sys.exit(main())
