"""Case ingestion: MATPOWER text, the native JSON network schema, and the
modeling step that turns a raw case into a slack + PQ network.

Per-unit conventions
--------------------
Everything stored on :class:`NetworkCase` and :class:`Network` is per-unit on
``base_power``. Bus injection targets on :class:`Network` are
consumption-positive: a load of 0.7 pu is ``p = 0.7`` and a generator producing
0.7 pu enters as ``p = -0.7``.
"""

from __future__ import annotations

import json
import math
import re
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import InvariantViolation, MalformedCase, SchemaError, UnsupportedFeature


class ModelingWarning(UserWarning):
    """Raised (as a warning) when modeling drops or approximates case data."""


BusKind = Literal["slack", "pq", "pv"]
_MATPOWER_KIND = {1: "pq", 2: "pv", 3: "slack"}


@dataclass(frozen=True)
class CaseBus:
    id: int
    kind: BusKind
    p_load: float
    q_load: float
    shunt_g: float
    shunt_b: float
    vm: float
    va: float


@dataclass(frozen=True)
class CaseBranch:
    frm: int
    to: int
    r: float
    x: float
    total_charging_b: float
    tap_ratio: float | None
    phase_shift: float
    status: bool = True


@dataclass(frozen=True)
class CaseGen:
    bus: int
    pg: float
    qg: float
    qmax: float
    qmin: float
    status: bool = True


@dataclass(frozen=True)
class NetworkCase:
    """Raw parsed case, before any modeling decision."""

    base_power: float
    buses: tuple[CaseBus, ...]
    branches: tuple[CaseBranch, ...]
    gens: tuple[CaseGen, ...] = ()
    name: str = ""

    @property
    def slack(self) -> CaseBus:
        return next(b for b in self.buses if b.kind == "slack")


@dataclass(frozen=True)
class Line:
    """Series admittance ``g + j b`` between buses ``frm`` and ``to``."""

    frm: int
    to: int
    g: float
    b: float


@dataclass(frozen=True, eq=False)
class Network:
    """Slack + PQ network with series line admittances only.

    ``bus_ids`` fixes the state ordering of the non-slack buses. Internally
    bus index 0 is the slack and index ``i + 1`` is ``bus_ids[i]``.
    """

    slack_id: int
    slack_voltage: complex
    bus_ids: tuple[int, ...]
    p: np.ndarray
    q: np.ndarray
    lines: tuple[Line, ...]
    base_power: float = 100.0
    q_limits: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "slack_voltage", complex(self.slack_voltage))
        _validate_network(self)

    @property
    def n(self) -> int:
        return len(self.bus_ids)

    @cached_property
    def index(self) -> dict[int, int]:
        """Bus id -> internal index (slack is 0)."""
        idx = {self.slack_id: 0}
        idx.update({b: i + 1 for i, b in enumerate(self.bus_ids)})
        return idx

    @cached_property
    def all_ids(self) -> tuple[int, ...]:
        return (self.slack_id, *self.bus_ids)

    @cached_property
    def line_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """Symmetric (G, B) neighbor matrices with zero diagonal."""
        size = self.n + 1
        G = np.zeros((size, size))
        B = np.zeros((size, size))
        for ln in self.lines:
            i, j = self.index[ln.frm], self.index[ln.to]
            G[i, j] += ln.g
            G[j, i] += ln.g
            B[i, j] += ln.b
            B[j, i] += ln.b
        G.setflags(write=False)
        B.setflags(write=False)
        return G, B

    def neighbors(self, bus: int) -> list[int]:
        out = []
        for ln in self.lines:
            if ln.frm == bus:
                out.append(ln.to)
            elif ln.to == bus:
                out.append(ln.frm)
        return sorted(set(out))

    def with_targets(self, p, q) -> "Network":
        return Network(self.slack_id, self.slack_voltage, self.bus_ids, np.array(p, float),
                       np.array(q, float), self.lines, self.base_power, dict(self.q_limits), self.name)

    def with_q_limits(self, q_limits: dict) -> "Network":
        limits = dict(self.q_limits)
        limits.update(q_limits)
        return Network(self.slack_id, self.slack_voltage, self.bus_ids, self.p.copy(),
                       self.q.copy(), self.lines, self.base_power, limits, self.name)

    def is_connected(self) -> bool:
        seen = {self.slack_id}
        stack = [self.slack_id]
        adj: dict[int, list[int]] = {b: [] for b in self.all_ids}
        for ln in self.lines:
            adj[ln.frm].append(ln.to)
            adj[ln.to].append(ln.frm)
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == self.n + 1


def _validate_network(net: Network) -> None:
    ids = net.all_ids
    if len(set(ids)) != len(ids):
        raise InvariantViolation("duplicate bus id (a PQ bus may not reuse the slack id)")
    if net.p.shape != (net.n,) or net.q.shape != (net.n,):
        raise InvariantViolation("injection targets must have one entry per PQ bus")
    known = set(ids)
    for ln in net.lines:
        if ln.frm not in known or ln.to not in known:
            raise InvariantViolation(f"line {ln.frm}-{ln.to} references an unknown bus")
        if ln.frm == ln.to:
            raise InvariantViolation(f"line {ln.frm}-{ln.to} is a self loop")
        if not (math.isfinite(ln.g) and math.isfinite(ln.b)):
            raise InvariantViolation(f"line {ln.frm}-{ln.to} has a non-finite admittance")
    for bus in net.q_limits:
        if bus not in known:
            raise InvariantViolation(f"q limit declared for unknown bus {bus}")


def merge_lines(lines) -> tuple[Line, ...]:
    """Merge parallel lines by admittance addition.

    Sums use :func:`math.fsum`, so the result does not depend on input order.
    """
    groups: dict[tuple[int, int], list[Line]] = {}
    for ln in lines:
        key = (min(ln.frm, ln.to), max(ln.frm, ln.to))
        groups.setdefault(key, []).append(ln)
    merged = []
    for (a, b), grp in sorted(groups.items()):
        merged.append(Line(a, b, math.fsum(ln.g for ln in grp), math.fsum(ln.b for ln in grp)))
    return tuple(merged)


# ---------------------------------------------------------------- MATPOWER

_ASSIGN = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")
_MIN_COLUMNS = {"bus": 13, "branch": 13, "gen": 10}


def _strip_comment(line: str) -> str:
    in_str = False
    for i, ch in enumerate(line):
        if ch == "'":
            in_str = not in_str
        elif ch == "%" and not in_str:
            return line[:i]
    return line


def _scan_matpower(text: str) -> tuple[dict[str, float], dict[str, list[tuple[int, list[float]]]]]:
    scalars: dict[str, float] = {}
    matrices: dict[str, list[tuple[int, list[float]]]] = {}
    current: str | None = None
    skipping_cell = False
    rows: list[tuple[int, list[float]]] = []
    row: list[float] = []
    row_line = 0

    def consume(chunk: str, lineno: int, col0: int) -> bool:
        """Feed matrix text; returns True when the closing bracket is hit."""
        nonlocal row, row_line
        for m in re.finditer(r"[^\s,;\]]+|;|\]", chunk):
            tok = m.group(0)
            if tok == ";":
                if row:
                    rows.append((row_line, row))
                row = []
                continue
            if tok == "]":
                if row:
                    rows.append((row_line, row))
                row = []
                return True
            try:
                val = float(tok)
            except ValueError:
                raise MalformedCase(f"non-numeric cell {tok!r} in mpc.{current}",
                                    lineno, col0 + m.start() + 1) from None
            if not row:
                row_line = lineno
            row.append(val)
        # a newline also terminates a row
        if row:
            rows.append((row_line, row))
            row = []
        return False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if skipping_cell:
            if "}" in line:
                skipping_cell = False
            continue
        if current is not None:
            if consume(line, lineno, 0):
                matrices[current] = rows
                current = None
            continue
        m = _ASSIGN.match(line)
        if not m:
            continue
        name, value = m.group(1), m.group(2).strip()
        if value.startswith("["):
            current, rows, row = name, [], []
            col0 = line.index("[") + 1
            if consume(value[1:], lineno, col0):
                matrices[name] = rows
                current = None
        elif value.startswith("{"):
            skipping_cell = "}" not in value
        else:
            value = value.rstrip(";").strip()
            try:
                scalars[name] = float(value)
            except ValueError:
                pass  # strings such as mpc.version
    if current is not None:
        raise MalformedCase(f"unterminated matrix mpc.{current}")
    return scalars, matrices


def parse_matpower(text: str, name: str = "") -> NetworkCase:
    """Parse a MATPOWER ``.m`` case (function/struct style) into a NetworkCase.

    Quantities are converted to per-unit on ``mpc.baseMVA``. Out-of-service
    branches and generators and isolated buses (type 4) are dropped.
    """
    scalars, matrices = _scan_matpower(text)
    if "baseMVA" not in scalars:
        raise MalformedCase("missing mpc.baseMVA")
    base = scalars["baseMVA"]
    if not base > 0:
        raise MalformedCase("mpc.baseMVA must be positive")
    for req in ("bus", "branch"):
        if req not in matrices:
            raise MalformedCase(f"missing mpc.{req}")
    for mat, rows in matrices.items():
        need = _MIN_COLUMNS.get(mat)
        if need is None:
            continue
        for lineno, r in rows:
            if len(r) < need:
                raise MalformedCase(f"mpc.{mat} row has {len(r)} columns, need at least {need}", lineno)

    buses: list[CaseBus] = []
    seen: set[int] = set()
    isolated: set[int] = set()
    for lineno, r in matrices["bus"]:
        bid = int(r[0])
        if bid != r[0]:
            raise MalformedCase(f"bus id {r[0]} is not an integer", lineno, 1)
        if bid in seen:
            raise MalformedCase(f"duplicate bus id {bid}", lineno, 1)
        seen.add(bid)
        btype = int(r[1])
        if btype == 4:
            isolated.add(bid)
            continue
        if btype not in _MATPOWER_KIND:
            raise MalformedCase(f"unknown bus type {r[1]}", lineno)
        buses.append(CaseBus(bid, _MATPOWER_KIND[btype], r[2] / base, r[3] / base,
                             r[4] / base, r[5] / base, r[7], r[8]))
    slack = [b for b in buses if b.kind == "slack"]
    if not slack:
        raise MalformedCase("no slack bus")
    if len(slack) > 1:
        raise MalformedCase(f"{len(slack)} slack buses, exactly one is supported")

    live = {b.id for b in buses}
    branches: list[CaseBranch] = []
    for lineno, r in matrices["branch"]:
        if r[10] == 0:
            continue
        frm, to = int(r[0]), int(r[1])
        if frm in isolated or to in isolated:
            continue
        for bid in (frm, to):
            if bid not in live:
                raise MalformedCase(f"branch references unknown bus {bid}", lineno)
        if r[2] < 0:
            raise MalformedCase(f"branch {frm}-{to} has negative resistance", lineno)
        if r[2] == 0 and r[3] == 0:
            raise MalformedCase(f"branch {frm}-{to} has zero impedance (r = x = 0)", lineno)
        tap = r[8] if r[8] != 0 else None
        branches.append(CaseBranch(frm, to, r[2], r[3], r[4], tap, r[9], True))

    gens: list[CaseGen] = []
    for lineno, r in matrices.get("gen", []):
        if r[7] <= 0:
            continue
        bid = int(r[0])
        if bid in isolated:
            continue
        if bid not in live:
            raise MalformedCase(f"generator references unknown bus {bid}", lineno)
        gens.append(CaseGen(bid, r[1] / base, r[2] / base, r[3] / base, r[4] / base, True))

    return NetworkCase(base, tuple(buses), tuple(branches), tuple(gens), name)


def load_matpower(path: str | Path) -> NetworkCase:
    path = Path(path)
    return parse_matpower(path.read_text(), name=path.stem)


# ---------------------------------------------------------------- modeling

@dataclass(frozen=True)
class ModelPolicy:
    """How :func:`model_network` treats data the slack + PQ model cannot hold.

    pv_source
        ``"gen"`` takes the reactive output of PV buses from the case gen
        table; ``"state"`` derives every target from ``state`` instead;
        ``"case"`` derives them from the voltages stored in the case file, so
        that those voltages solve the modeled network exactly.
    shunts
        ``"drop"`` ignores bus shunts; ``"fold"`` turns them into constant
        power load evaluated at the case voltage magnitude.
    strict
        Reject (``UnsupportedFeature``) instead of dropping shunts, line
        charging, taps and phase shifts.
    """

    pv_source: Literal["gen", "state", "case"] = "gen"
    state: object | None = None
    shunts: Literal["drop", "fold"] = "drop"
    strict: bool = False


def model_network(case: NetworkCase, policy: ModelPolicy | None = None) -> Network:
    """Convert a raw case to a slack + PQ :class:`Network`.

    Every non-slack bus becomes PQ with consumption-positive targets
    ``p_load - sum(pg)`` and ``q_load - sum(qg)``. Each in-service branch
    contributes ``1 / (r + jx)``; parallel branches are merged.
    """
    policy = policy or ModelPolicy()
    has_shunt = any(b.shunt_g or b.shunt_b for b in case.buses)
    has_charging = any(br.total_charging_b for br in case.branches)
    has_tap = any(br.tap_ratio not in (None, 1.0) or br.phase_shift for br in case.branches)
    if policy.strict:
        for flag, what in ((has_shunt, "bus shunts"), (has_charging, "line charging"),
                           (has_tap, "transformer taps or phase shifts")):
            if flag:
                raise UnsupportedFeature(f"case uses {what}, rejected by strict policy")
    if has_shunt and policy.shunts == "drop":
        warnings.warn("bus shunts dropped (series-admittance model)", ModelingWarning, stacklevel=2)
    if has_charging:
        warnings.warn("line charging dropped (series-admittance model)", ModelingWarning, stacklevel=2)
    if has_tap:
        warnings.warn("transformer taps and phase shifts ignored", ModelingWarning, stacklevel=2)

    lines = []
    for br in case.branches:
        y = 1.0 / complex(br.r, br.x)
        lines.append(Line(br.frm, br.to, y.real, y.imag))
    lines = merge_lines(lines)

    slack = case.slack
    va = math.radians(slack.va)
    slack_v = complex(slack.vm * math.cos(va), slack.vm * math.sin(va))
    pq = [b for b in case.buses if b.kind != "slack"]
    bus_ids = tuple(b.id for b in pq)

    pg: dict[int, float] = {}
    qg: dict[int, float] = {}
    qmin: dict[int, float] = {}
    qmax: dict[int, float] = {}
    for g in case.gens:
        pg[g.bus] = pg.get(g.bus, 0.0) + g.pg
        qg[g.bus] = qg.get(g.bus, 0.0) + g.qg
        qmin[g.bus] = qmin.get(g.bus, 0.0) + g.qmin
        qmax[g.bus] = qmax.get(g.bus, 0.0) + g.qmax

    p = np.array([b.p_load - pg.get(b.id, 0.0) for b in pq])
    q = np.array([b.q_load - qg.get(b.id, 0.0) for b in pq])
    if has_shunt and policy.shunts == "fold":
        p = p + np.array([b.shunt_g * b.vm ** 2 for b in pq])
        q = q - np.array([b.shunt_b * b.vm ** 2 for b in pq])

    # generator limits become consumption-side limits: q = q_load - qg
    load_q = {b.id: b.q_load for b in case.buses}
    q_limits = {bus: (load_q[bus] - qmax[bus], load_q[bus] - qmin[bus]) for bus in qmax}

    net = Network(slack.id, slack_v, bus_ids, p, q, lines, case.base_power, q_limits, case.name)
    if policy.pv_source == "state":
        if policy.state is None:
            raise ValueError("pv_source='state' needs a solved VoltageState")
        from .powerflow import injections

        tp, tq = injections(net, policy.state)
        net = net.with_targets(tp, tq)
    elif policy.pv_source == "case":
        from .powerflow import injections

        tp, tq = injections(net, case_voltage_state(case, net))
        net = net.with_targets(tp, tq)
    return net


def case_voltage_state(case: NetworkCase, net: Network):
    """VoltageState built from the Vm/Va columns stored in the case file."""
    from .powerflow import VoltageState

    by_id = {b.id: b for b in case.buses}
    vm = np.array([by_id[b].vm for b in net.all_ids])
    va = np.radians([by_id[b].va for b in net.all_ids])
    vr, vi = vm * np.cos(va), vm * np.sin(va)
    vr[0], vi[0] = net.slack_voltage.real, net.slack_voltage.imag
    return VoltageState(vr, vi)


def full_model_consumption(case: NetworkCase, v=None) -> dict[int, complex]:
    """Complex consumption per bus under the complete branch model.

    Unlike :func:`model_network`, this keeps line charging, off-nominal taps,
    phase shifts and bus shunts (MATPOWER's standard pi model). Voltages
    default to the Vm/Va columns of the case; ``v`` may map bus id to a
    complex voltage instead. Useful for judging generator reactive limits,
    which the series-only model misstates.
    """
    ids = [b.id for b in case.buses]
    pos = {b: i for i, b in enumerate(ids)}
    Y = np.zeros((len(ids), len(ids)), dtype=complex)
    for br in case.branches:
        ys = 1.0 / complex(br.r, br.x)
        tap = br.tap_ratio if br.tap_ratio else 1.0
        t = tap * np.exp(1j * math.radians(br.phase_shift))
        bc = 0.5j * br.total_charging_b
        f, k = pos[br.frm], pos[br.to]
        Y[f, f] += (ys + bc) / (t * np.conj(t))
        Y[f, k] += -ys / np.conj(t)
        Y[k, f] += -ys / t
        Y[k, k] += ys + bc
    for b in case.buses:
        Y[pos[b.id], pos[b.id]] += complex(b.shunt_g, b.shunt_b)
    if v is None:
        V = np.array([b.vm * np.exp(1j * math.radians(b.va)) for b in case.buses])
    else:
        V = np.array([complex(v[b]) for b in ids])
    s_inj = V * np.conj(Y @ V)
    return {b: complex(-s_inj[pos[b]]) for b in ids}


# ---------------------------------------------------------------- JSON

def _require(obj: dict, key: str, kind, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"{where}: missing key {key!r}")
    val = obj[key]
    if kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise SchemaError(f"{where}.{key}: expected a number, got {val!r}")
        return float(val)
    if kind is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise SchemaError(f"{where}.{key}: expected an integer, got {val!r}")
        return val
    if not isinstance(val, kind):
        raise SchemaError(f"{where}.{key}: expected {kind.__name__}")
    return val


def _optional_float(obj: dict, key: str, where: str) -> float | None:
    val = obj.get(key)
    if val is None:
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise SchemaError(f"{where}.{key}: expected a number or null")
    return float(val)


def parse_network_json(text: str) -> Network:
    """Build a Network from the native JSON schema.

    ``{"base_power": f, "slack": {"id", "v_re", "v_im"}, "buses": [{"id", "p",
    "q", "qmin", "qmax"}], "lines": [{"from", "to", "g", "b"}]}``. Line
    admittances are given directly; the slack object may also carry
    ``qmin``/``qmax``.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("top level must be an object")
    if isinstance(doc.get("slack"), list):
        raise InvariantViolation("exactly one slack bus is allowed")
    base = _require(doc, "base_power", float, "network")
    slack = _require(doc, "slack", dict, "network")
    sid = _require(slack, "id", int, "slack")
    v = complex(_require(slack, "v_re", float, "slack"), _require(slack, "v_im", float, "slack"))
    buses = _require(doc, "buses", list, "network")
    lines_raw = _require(doc, "lines", list, "network")

    ids, p, q = [], [], []
    limits: dict[int, tuple[float | None, float | None]] = {}
    lo, hi = _optional_float(slack, "qmin", "slack"), _optional_float(slack, "qmax", "slack")
    if lo is not None or hi is not None:
        limits[sid] = (lo, hi)
    for i, b in enumerate(buses):
        where = f"buses[{i}]"
        if isinstance(b, dict) and b.get("kind") == "slack":
            raise InvariantViolation("exactly one slack bus is allowed")
        bid = _require(b, "id", int, where)
        ids.append(bid)
        p.append(_require(b, "p", float, where))
        q.append(_require(b, "q", float, where))
        lo, hi = _optional_float(b, "qmin", where), _optional_float(b, "qmax", where)
        if lo is not None or hi is not None:
            limits[bid] = (lo, hi)
    lines = []
    for i, ln in enumerate(lines_raw):
        where = f"lines[{i}]"
        lines.append(Line(_require(ln, "from", int, where), _require(ln, "to", int, where),
                          _require(ln, "g", float, where), _require(ln, "b", float, where)))
    net = Network(sid, v, tuple(ids), np.array(p), np.array(q), merge_lines(lines), base, limits,
                  doc.get("name", "") if isinstance(doc.get("name", ""), str) else "")
    if any(ln.b > 0 for ln in net.lines):
        warnings.warn("non-inductive network: reactive circle monotonicity assumption violated",
                      ModelingWarning, stacklevel=2)
    return net


def network_to_json(net: Network) -> str:
    """Serialize a Network to the native JSON schema (exact float round trip)."""
    slack = {"id": net.slack_id, "v_re": net.slack_voltage.real, "v_im": net.slack_voltage.imag}
    if net.slack_id in net.q_limits:
        slack["qmin"], slack["qmax"] = net.q_limits[net.slack_id]
    doc = {
        "name": net.name,
        "base_power": net.base_power,
        "slack": slack,
        "buses": [
            {"id": b, "p": float(net.p[i]), "q": float(net.q[i]),
             "qmin": net.q_limits.get(b, (None, None))[0],
             "qmax": net.q_limits.get(b, (None, None))[1]}
            for i, b in enumerate(net.bus_ids)
        ],
        "lines": [{"from": ln.frm, "to": ln.to, "g": ln.g, "b": ln.b} for ln in net.lines],
    }
    return json.dumps(doc, indent=1)


def load_network(path: str | Path, policy: ModelPolicy | None = None) -> Network:
    """Load a ``.m`` case (modeled with ``policy``) or a native ``.json`` network."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return parse_network_json(text)
    return model_network(parse_matpower(text, name=path.stem), policy)


def bundled_path(name: str) -> Path:
    """Path of a bundled case (``case14``) or fixture (``tri3_resistive``)."""
    root = Path(__file__).parent / "data"
    for sub, ext in (("cases", ".m"), ("fixtures", ".json")):
        cand = root / sub / (name if name.endswith(ext) else name + ext)
        if cand.exists():
            return cand
    raise FileNotFoundError(f"no bundled case or fixture named {name!r}")
