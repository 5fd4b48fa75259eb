"""Command-line front end.

Every subcommand prints a JSON report to stdout; tabular data goes to CSV
files named from ``--out`` (default: the case file's stem). Exit codes:
0 success / not on boundary, 10 on boundary, 11 alarm fired, 2 input error,
3 solver failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import geometry, oracle, pareto, thevenin
from .boundary import ConstraintSet, binding_q_limits, check_alarm, check_on_boundary, margin
from .case_io import (ModelPolicy, bundled_path, case_voltage_state, full_model_consumption, load_matpower, model_network,
                      parse_network_json)
from .errors import (DegenerateCircle, Disjoint, LoadkitError, NonConvergence, NotPareto, SingularSystem,
                     SolverFailure)
from .lp import FEAS_TOL
from .powerflow import all_injections, injections, jacobian, solve_power_flow, state_from_json

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_BOUNDARY = 10
EXIT_ALARM = 11


class InputError(Exception):
    pass


def resolve(path: str) -> Path:
    """``path`` itself, or the bundled case or fixture of that name when no such file exists."""
    p = Path(path)
    if not p.exists() and p.parent == Path("."):
        try:
            return bundled_path(p.name)
        except FileNotFoundError:
            pass
    return p


class Study:
    """A modeled network, its operating state and, for case files, the raw case."""

    def __init__(self, path: str, state: str | None, pv_source: str):
        self.path = resolve(path)
        try:
            data = self.path.read_bytes()
        except OSError as exc:
            raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None
        self.digest = hashlib.sha256(data).hexdigest()
        self.case = None
        text = data.decode("utf-8", errors="replace")
        if self.path.suffix.lower() == ".json":
            self.net = parse_network_json(text)
        else:
            self.case = load_matpower(self.path)
            self.net = model_network(self.case, ModelPolicy(pv_source="case" if pv_source == "case" else "gen"))
        if state:
            try:
                self.v = state_from_json(resolve(state).read_text(), self.net)
            except OSError as exc:
                raise InputError(f"cannot read {state}: {exc.strerror or exc}") from None
            self.state_source = "file"
        elif self.case is not None and pv_source == "case":
            self.v = case_voltage_state(self.case, self.net)
            self.state_source = "case voltages"
        else:
            init = case_voltage_state(self.case, self.net) if self.case is not None else None
            self.v = solve_power_flow(self.net, init=init)
            self.state_source = "power flow"

    def reactive(self) -> dict[int, float]:
        """Per-unit reactive consumption used to judge limits."""
        if self.case is not None:
            volts = dict(zip(self.net.all_ids, self.v.complex))
            for b in self.case.buses:
                volts.setdefault(b.id, b.vm * np.exp(1j * np.radians(b.va)))
            s = full_model_consumption(self.case, volts)
            return {b: s[b].imag for b in self.net.all_ids}
        _, q = all_injections(self.net, self.v)
        return dict(zip(self.net.all_ids, q))


def _parse_q_limit(text: str, study: Study) -> tuple[int, tuple[float, float]]:
    """``bus=69,min=-50,max=50`` (generator MVAr) -> consumption limits in per unit."""
    try:
        kv = dict(item.split("=", 1) for item in text.split(","))
        bus = int(kv["bus"])
        lo, hi = float(kv["min"]), float(kv["max"])
    except (KeyError, ValueError):
        raise InputError(f"--q-limit expects bus=<id>,min=<MVAr>,max=<MVAr>, got {text!r}") from None
    if bus not in study.net.all_ids:
        raise InputError(f"--q-limit names unknown bus {bus}")
    base = study.net.base_power
    q_load = 0.0
    if study.case is not None:
        q_load = next(b.q_load for b in study.case.buses if b.id == bus)
    return bus, (q_load - hi / base, q_load - lo / base)


def _constraints(args, study: Study) -> tuple[ConstraintSet | None, list]:
    limits = {}
    if args.q_limits:
        limits.update(study.net.q_limits)
    for spec in args.q_limit or []:
        bus, lim = _parse_q_limit(spec, study)
        limits[bus] = lim
    if not limits:
        return None, []
    net = dataclasses.replace(study.net, q_limits=limits)
    q = study.reactive()
    binding = binding_q_limits(net, study.v, q=q)
    info = [{"bus": b, "sense": s, "q": q[b], "limits": list(limits[b])} for b, s in binding]
    return ConstraintSet(q_buses=binding), info


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("case", help="MATPOWER .m case or native .json network (bare names find bundled data)")
    p.add_argument("--state", help="voltage state JSON to analyze instead of the default operating point")
    p.add_argument("--pv-source", choices=("case", "gen"), default="case",
                   help="for .m cases: operate at the stored voltages (case) or re-solve with gen-table targets")
    p.add_argument("--out", help="prefix for CSV outputs (default: the case file stem)")
    p.add_argument("--format", choices=("json", "csv"), default="json",
                   help="csv prints the main table to stdout instead of the JSON report")
    p.add_argument("--seed", type=int, default=None, help="reserved; grids are deterministic")


def _add_limits(p: argparse.ArgumentParser) -> None:
    p.add_argument("--q-limits", action="store_true", help="add rows for gen reactive limits that bind")
    p.add_argument("--q-limit", action="append", metavar="bus=ID,min=MVAR,max=MVAR",
                   help="declare a generator reactive limit (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="loadkit", description="Loadability boundary analysis")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="is the operating point on the loadability boundary?")
    _add_common(p)
    _add_limits(p)
    p.add_argument("--epsilon", type=float, default=0.0, help="early-alarm threshold per bus")
    p.add_argument("--tol", type=float, default=FEAS_TOL, help="LP feasibility tolerance")

    p = sub.add_parser("margin", help="margin to the boundary")
    _add_common(p)
    _add_limits(p)

    p = sub.add_parser("pareto", help="boundary points, front sweeps and margin traces")
    _add_common(p)
    p.add_argument("--z", help="growth direction, comma separated")
    p.add_argument("--sweep", type=int, help="number of directions on an angular grid (two loads)")
    p.add_argument("--trace", type=int, help="margin trace with this many steps towards the boundary")
    p.add_argument("--floor", type=float, default=0.2,
                   help="trace: smallest weight, as a fraction of the largest, in the load-profile direction")

    p = sub.add_parser("circles", help="per-bus power circles")
    _add_common(p)
    p.add_argument("--bus", type=int, action="append", help="bus id (default: all PQ buses)")
    p.add_argument("--samples", type=int, default=100)

    p = sub.add_parser("region", help="brute-force region, front and singular locus")
    _add_common(p)
    p.add_argument("--grid", default="0:1.2:0.01", help="lo:hi:step, with :complex to grid imaginary parts too")
    p.add_argument("--allow-large", action="store_true", help="allow more than four gridded variables")

    p = sub.add_parser("thevenin", help="Thevenin-equivalent margin and load sweep")
    _add_common(p)
    p.add_argument("--bus", type=int, help="load bus (default: first PQ bus)")
    p.add_argument("--sweep", help="step[:max] load sweep along unit active loads on every PQ bus")
    p.add_argument("--method", choices=("sensitivity", "admittance"), default="sensitivity")
    p.add_argument("--metric", choices=("power", "impedance"), default="power")
    return parser


def _prefix(args) -> str:
    return args.out if args.out else Path(args.case).stem


def _write(path: str, text: str) -> str:
    Path(path).write_text(text)
    return path


def _floats(a) -> list[float]:
    return [float(x) for x in np.asarray(a).ravel()]


def cmd_check(args, study: Study) -> tuple[dict, int, str | None]:
    cs, info = _constraints(args, study)
    J = jacobian(study.net, study.v)
    if args.epsilon > 0:
        verdict = check_alarm(J, cs, args.epsilon, tol=args.tol, v=study.v)
        code = EXIT_ALARM if verdict.on_boundary else EXIT_OK
    else:
        verdict = check_on_boundary(J, cs, tol=args.tol, v=study.v)
        code = EXIT_BOUNDARY if verdict.on_boundary else EXIT_OK
    res = verdict.to_dict()
    res["q_limits"] = info
    return res, code, None


def cmd_margin(args, study: Study) -> tuple[dict, int, str | None]:
    cs, info = _constraints(args, study)
    res = margin(jacobian(study.net, study.v), cs, v=study.v).to_dict()
    res["q_limits"] = info
    return res, EXIT_OK, None


def cmd_pareto(args, study: Study) -> tuple[dict, int, str | None]:
    net = study.net
    res: dict = {}
    table = None
    if not (args.z or args.sweep or args.trace):
        raise InputError("pareto needs --z, --sweep or --trace")
    if args.z:
        try:
            z = [float(x) for x in args.z.split(",")]
        except ValueError:
            raise InputError(f"bad --z {args.z!r}") from None
        pt = pareto.locate_boundary_point(net, z)
        res["point"] = pt.to_dict()
        table = pareto.front_csv([pt])
    if args.sweep:
        sweep = pareto.sweep_front(net, count=args.sweep)
        table = pareto.front_csv(sweep.points)
        res["sweep"] = {"located": len(sweep.points),
                        "failed": [{"z": _floats(z), "error": str(e)} for z, e in sweep.failures],
                        "csv": _write(f"{_prefix(args)}_front.csv", table) if args.format == "json" else None}
    if args.trace:
        z = pareto.profile_direction(injections(net, study.v)[0], args.floor)
        end = pareto.locate_boundary_point(net, z, allow_degenerate=True, second_order=False)
        trace = pareto.ray_margin_trace(net, study.v, end.v, args.trace)
        table = pareto.trace_csv(trace)
        res["trace"] = {"z": _floats(z), "degenerate_end": end.degenerate,
                        "margins": [t.margin for t in trace], "sum_p": [t.sum_p for t in trace],
                        "csv": _write(f"{_prefix(args)}_trace.csv", table) if args.format == "json" else None}
    return res, EXIT_OK, table


def cmd_circles(args, study: Study) -> tuple[dict, int, str | None]:
    net = study.net
    buses = args.bus or list(net.bus_ids)
    circles, summary = [], []
    for bus in buses:
        if bus not in net.bus_ids:
            raise InputError(f"bus {bus} is not a PQ bus")
        entry: dict = {"bus": bus}
        pair = []
        for kind in ("active", "reactive"):
            try:
                pair.append(geometry.power_circle(net, study.v, bus, kind))
            except DegenerateCircle as exc:
                entry.setdefault("degenerate", []).append(str(exc))
        circles.extend(pair)
        try:
            if len(pair) < 2:
                raise Disjoint("a degenerate locus has no circle intersection")
            entry.update(geometry.intersect(*pair).to_dict())
        except Disjoint as exc:
            entry.update({"gap": None, "points": [], "error": str(exc)})
        summary.append(entry)
    table = geometry.circles_csv([c for c in circles if c.radius_sq >= 0], args.samples)
    res = {"intersections": summary}
    if args.format == "json":
        res["csv"] = _write(f"{_prefix(args)}_circles.csv", table)
    return res, EXIT_OK, table


def cmd_region(args, study: Study) -> tuple[dict, int, str | None]:
    net = study.net
    try:
        grid = oracle.GridSpec.parse(net, args.grid)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    sample = oracle.sample_region(net, grid, allow_large=args.allow_large)
    front = oracle.pareto_front(sample.p)
    locus = oracle.singular_locus(sample, front=front)
    table = oracle.region_csv(sample)
    res: dict = {"points": len(sample), "front_points": len(front),
                 "locus": {"boundary": sum(pt.kind == "boundary" for pt in locus),
                           "interior": sum(pt.kind == "interior" for pt in locus)}}
    if len(sample):
        i = int(np.argmax(sample.p.sum(axis=1)))
        res["max_total"] = {"p": _floats(sample.p[i]), "x": _floats(sample.x[i])}
    if args.format == "json":
        pre = _prefix(args)
        res["csv"] = [_write(f"{pre}_region.csv", table),
                      _write(f"{pre}_oracle_front.csv", oracle.front_csv(front, net.bus_ids)),
                      _write(f"{pre}_locus.csv", oracle.locus_csv(net, locus))]
    return res, EXIT_OK, table


def cmd_thevenin(args, study: Study) -> tuple[dict, int, str | None]:
    net = study.net
    bus = args.bus if args.bus is not None else net.bus_ids[0]
    if bus not in net.bus_ids:
        raise InputError(f"bus {bus} is not a PQ bus")
    eq = thevenin.thevenin_at(net, study.v, bus, args.method)
    res: dict = {"bus": bus, "z_thev": [eq.z_thev.real, eq.z_thev.imag],
                 "e_thev": [eq.e_thev.real, eq.e_thev.imag],
                 "margin": thevenin.thevenin_margin(net, study.v, bus, method=args.method, metric=args.metric)}
    table = None
    if args.sweep:
        try:
            bits = [float(x) for x in args.sweep.split(":")]
            step, top = bits[0], (bits[1] if len(bits) > 1 else None)
        except (ValueError, IndexError):
            raise InputError(f"--sweep expects step[:max], got {args.sweep!r}") from None
        rows = thevenin.load_sweep(net, bus, step=step, max_load=top, method=args.method, metric=args.metric)
        table = thevenin.sweep_csv(rows)
        res["sweep"] = {"rows": len(rows),
                        "zero_load": {"thevenin": thevenin.zero_load(rows, "thevenin_margin"),
                                      "proposed": thevenin.zero_load(rows, "proposed_margin")}}
        if args.format == "json":
            res["sweep"]["csv"] = _write(f"{_prefix(args)}_thevenin.csv", table)
    return res, EXIT_OK, table


COMMANDS = {"check": cmd_check, "margin": cmd_margin, "pareto": cmd_pareto, "circles": cmd_circles,
            "region": cmd_region, "thevenin": cmd_thevenin}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    start = time.perf_counter()
    report: dict = {"command": [args.command, args.case]}
    table = None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            study = Study(args.case, args.state, args.pv_source)
            report["input"] = {"path": args.case, "sha256": study.digest, "state": study.state_source}
            results, code, table = COMMANDS[args.command](args, study)
            report["results"] = results
        except (InputError, FileNotFoundError, ValueError) as exc:
            report["error"], code = str(exc), EXIT_INPUT
        except (NonConvergence, SolverFailure, SingularSystem, NotPareto, np.linalg.LinAlgError) as exc:
            report["error"], code = f"{type(exc).__name__}: {exc}", EXIT_SOLVER
        except LoadkitError as exc:
            report["error"], code = f"{type(exc).__name__}: {exc}", EXIT_INPUT
    report["warnings"] = sorted({str(w.message) for w in caught})
    report["exit_code"] = code
    report["timing"] = round(time.perf_counter() - start, 6)
    if args.format == "csv" and table is not None and code in (EXIT_OK, EXIT_BOUNDARY, EXIT_ALARM):
        sys.stdout.write(table)
    else:
        sys.stdout.write(json.dumps(_jsonable(report), indent=1, sort_keys=True) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
