"""Loadability-boundary tests and margins.

An operating point is on the boundary when no state direction ``y`` raises
some bus's active consumption without lowering another's, i.e. when

    y . h_d >= 0 for every PQ bus d,   sum_d y . h_d = 1

has no solution (``h_d`` is the active-power gradient of bus ``d``). The margin
is the largest first-order gain ``sum_d y . h_d`` over unit vectors in that
cone, computed as the norm of the projection of ``sum_d h_d`` onto the cone.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import cone
from .case_io import Network
from .errors import SolverFailure
from .lp import FEAS_TOL, lp_feasibility
from .powerflow import JacobianMatrix, VoltageState, all_injections

log = logging.getLogger(__name__)

MARGIN_TOL = 1e-6
BOUNDARY_TOL = 1e-7
_DEGENERATE_ROW = 1e-12

Sense = str  # "max" or "min"


@dataclass
class ConstraintSet:
    """Binding operating limits, each turned into a homogeneous row ``y . a >= 0``.

    ``q_buses``
        ``(bus, sense)``: reactive consumption at its max (``y . g <= 0``) or
        min (``y . g >= 0``). The slack bus is allowed.
    ``p_bounds``
        ``(bus, "max")``: active consumption may not grow (``y . h <= 0``).
    ``voltage_box``
        ``(bus, part, sense)`` with part ``"re"``, ``"im"`` or ``"mag"``.
    ``current_limits``
        ``(from, to, sense)``: squared current magnitude of a line at a limit.
    ``rows``
        Extra user rows ``a`` meaning ``y . a >= 0``.
    """

    q_buses: list = field(default_factory=list)
    p_bounds: list = field(default_factory=list)
    voltage_box: list = field(default_factory=list)
    current_limits: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.q_buses or self.p_bounds or self.voltage_box or self.current_limits or self.rows)

    def labels(self) -> list[str]:
        out = [f"q{bus}:{sense}" for bus, sense in self.q_buses]
        out += [f"p{bus}:{sense}" for bus, sense in self.p_bounds]
        out += [f"v{bus}.{part}:{sense}" for bus, part, sense in self.voltage_box]
        out += [f"i{a}-{b}:{sense}" for a, b, sense in self.current_limits]
        out += [f"row{i}" for i in range(len(self.rows))]
        return out

    def matrix(self, J: JacobianMatrix, v: VoltageState | None = None) -> np.ndarray:
        """Stack every constraint as a row ``a`` with ``y . a >= 0``."""
        net = J.net
        n = net.n
        out = []
        for bus, sense in self.q_buses:
            out.append(-J.g(bus) if _sense(sense) == "max" else J.g(bus))
        for bus, sense in self.p_bounds:
            out.append(-J.h(bus) if _sense(sense) == "max" else J.h(bus))
        if (self.voltage_box or self.current_limits) and v is None:
            raise ValueError("voltage and current rows need the operating voltage")
        for bus, part, sense in self.voltage_box:
            i = net.index[bus] - 1
            if i < 0:
                raise ValueError("the slack voltage is fixed and cannot carry a limit row")
            row = np.zeros(2 * n)
            if part == "re":
                row[i] = 1.0
            elif part == "im":
                row[n + i] = 1.0
            elif part == "mag":
                row[i], row[n + i] = 2 * v.v_re[i + 1], 2 * v.v_im[i + 1]
            else:
                raise ValueError(f"unknown voltage component {part!r}")
            out.append(-row if _sense(sense) == "max" else row)
        for frm, to, sense in self.current_limits:
            row = current_magnitude_gradient(net, v, frm, to)
            out.append(-row if _sense(sense) == "max" else row)
        out.extend(np.asarray(r, dtype=float) for r in self.rows)
        return np.array(out, dtype=float).reshape(len(out), 2 * n)


def _sense(s: str) -> str:
    if s not in ("max", "min"):
        raise ValueError(f"limit sense must be 'max' or 'min', got {s!r}")
    return s


def current_magnitude_gradient(net: Network, v: VoltageState, frm: int, to: int) -> np.ndarray:
    """Gradient of ``|i|^2`` for the line current ``y (v_frm - v_to)``."""
    line = next((ln for ln in net.lines if {ln.frm, ln.to} == {frm, to}), None)
    if line is None:
        raise ValueError(f"no line between {frm} and {to}")
    y = complex(line.g, line.b)
    a, b = net.index[frm], net.index[to]
    cur = y * (v.complex[a] - v.complex[b])
    n = net.n
    grad = np.zeros(2 * n)
    # d|i|^2 = 2 Re(conj(i) di),  di = y dv_a - y dv_b
    for idx, s in ((a, 1.0), (b, -1.0)):
        if idx == 0:
            continue
        k = idx - 1
        grad[k] += 2 * s * (np.conj(cur) * y).real
        grad[n + k] += 2 * s * (np.conj(cur) * y * 1j).real
    return grad


def binding_q_limits(net: Network, v: VoltageState, q=None, tol: float = 1e-6) -> list:
    """Buses whose reactive consumption sits at (or beyond) a declared limit.

    ``q`` maps bus id to the reactive consumption used for the comparison; by
    default the modeled consumption at ``v`` (slack included).
    """
    if q is None:
        _, q_all = all_injections(net, v)
        q = dict(zip(net.all_ids, q_all))
    out = []
    for bus in sorted(net.q_limits):
        lo, hi = net.q_limits[bus]
        val = q[bus]
        if hi is not None and val >= hi - tol:
            out.append((bus, "max"))
        elif lo is not None and val <= lo + tol:
            out.append((bus, "min"))
    return out


@dataclass
class BoundaryVerdict:
    on_boundary: bool
    direction: np.ndarray | None
    binding_info: list
    certificate: dict | None = None
    epsilon: float = 0.0

    def to_dict(self) -> dict:
        return {
            "on_boundary": self.on_boundary,
            "epsilon": self.epsilon,
            "direction": None if self.direction is None else [float(x) for x in self.direction],
            "binding": self.binding_info,
            "certificate": self.certificate,
        }


@dataclass
class MarginResult:
    m: float
    direction: np.ndarray
    binding_info: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"margin": self.m, "direction": [float(x) for x in self.direction],
                "binding": self.binding_info}


def _rows(J: JacobianMatrix, cs: ConstraintSet | None, v: VoltageState | None):
    """Gradient rows (degenerate ones dropped), their labels, and the sum of the h rows."""
    H = J.H
    labels = [f"h{b}" for b in J.net.bus_ids]
    keep = np.linalg.norm(H, axis=1) >= _DEGENERATE_ROW
    if not keep.all():
        dropped = [labels[i] for i in np.flatnonzero(~keep)]
        warnings.warn(f"dropping electrically isolated rows {dropped}", RuntimeWarning, stacklevel=3)
    H = H[keep]
    labels = [lab for lab, k in zip(labels, keep) if k]
    c = H.sum(axis=0)
    if cs:
        extra = cs.matrix(J, v)
        return np.vstack([H, extra]), labels + cs.labels(), c, H.shape[0]
    return H, labels, c, H.shape[0]


def _box_radius(A: np.ndarray) -> float:
    scale = max(1.0, float(np.linalg.norm(A, axis=1).max(initial=0.0)))
    return 1.0 / (BOUNDARY_TOL * scale)


def _verdict(J, cs, v, eps: float, tol: float) -> BoundaryVerdict:
    A, labels, c, nh = _rows(J, cs, v)
    rhs = np.zeros(A.shape[0])
    rhs[:nh] = eps
    res = lp_feasibility(A, c, 1.0, rhs, tol=tol)
    radius = _box_radius(A)
    if res.feasible:
        y = res.y
        # shortest direction with the same row image keeps every row value
        y_short = np.linalg.lstsq(A, A @ y, rcond=None)[0] if A.size else y
        if np.all(A @ y_short >= rhs - tol * max(1.0, np.abs(A).max())) and abs(c @ y_short - 1) <= 1e-9:
            y = y_short
        if np.abs(y).max(initial=0.0) > radius:
            # only a huge direction works: decide within the box |y_i| <= radius
            size = A.shape[1]
            boxed = np.vstack([A, np.eye(size), -np.eye(size)])
            brhs = np.r_[rhs, -radius * np.ones(2 * size)]
            res = lp_feasibility(boxed, c, 1.0, brhs, tol=tol)
            if not res.feasible:
                m = A.shape[0]
                support = [lab for lab, lam in zip(labels, res.lam[:m]) if lam > 1e-12]
                cert = {"lambda": [float(x) for x in res.lam[:m]], "mu": float(res.mu), "rows": labels,
                        "box_radius": radius, "box_lambda": [float(x) for x in res.lam[m:]]}
                return BoundaryVerdict(True, None, support, cert, eps)
            y = res.y
        active = [lab for lab, val, r in zip(labels, A @ y, rhs) if abs(val - r) <= 1e-9]
        return BoundaryVerdict(False, y, active, None, eps)
    support = [lab for lab, lam in zip(labels, res.lam) if lam > 1e-12]
    cert = {"lambda": [float(x) for x in res.lam], "mu": float(res.mu), "rows": labels}
    return BoundaryVerdict(True, None, support, cert, eps)


def check_on_boundary(J: JacobianMatrix, cs: ConstraintSet | None = None, tol: float = FEAS_TOL,
                      v: VoltageState | None = None) -> BoundaryVerdict:
    """Decide boundary membership with a certified LP.

    Not on the boundary comes with an improving direction; on the boundary
    comes with a Farkas certificate ``(lambda, mu)``. Directions are limited
    to ``|y_i| <= 1 / (BOUNDARY_TOL * s)``, ``s`` the largest row norm, so a
    state within round-off of a boundary point is reported on it; in that
    case the certificate also carries the box multipliers.
    """
    return _verdict(J, cs, v, 0.0, tol)


def check_alarm(J: JacobianMatrix, cs: ConstraintSet | None = None, epsilon: float = 0.0,
                tol: float = FEAS_TOL, v: VoltageState | None = None) -> BoundaryVerdict:
    """Early-warning variant: every bus must gain at least ``epsilon``.

    ``on_boundary`` is True when the alarm fires (the system is infeasible).
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    return _verdict(J, cs, v, float(epsilon), tol)


def margin(J: JacobianMatrix, cs: ConstraintSet | None = None, v: VoltageState | None = None
           ) -> MarginResult:
    """Largest ``sum_d y . h_d`` over ``||y|| <= 1`` inside the improving cone."""
    A, labels, c, _ = _rows(J, cs, v)
    proj, lam = cone.project(A, c)
    m = float(np.linalg.norm(proj))
    scale = max(1.0, float(np.abs(A).max(initial=0.0)), float(np.linalg.norm(c)))
    # KKT re-check of the projection
    if A.size:
        if np.min(A @ proj, initial=0.0) < -1e-8 * scale * max(1.0, m):
            raise SolverFailure("cone projection violates a cone row")
        if abs(float(lam @ (A @ proj))) > 1e-8 * scale * scale * max(1.0, m):
            raise SolverFailure("cone projection fails complementarity")
    if m <= 1e-12 * scale:
        m = 0.0
        direction = np.zeros_like(c)
    else:
        direction = proj / m
    active = [lab for lab, val in zip(labels, A @ direction) if abs(val) <= 1e-9] if m else labels
    return MarginResult(m, direction, active)
