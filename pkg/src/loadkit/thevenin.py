"""Thevenin-equivalent stability margin seen from one load bus.

Two reductions are offered. ``"sensitivity"`` (the default) holds every other
load at constant power and reads the equivalent off the operating point's
first-order response: grow the load at ``d`` along its own power factor,
take ``z = -dV/dI`` and ``e = V + z I``. This is the limit of the two-sample
estimate used with local measurements, and it matches the system exactly at
a fold, where ``|z_app| = |z_thev|``. ``"admittance"`` instead turns the other
loads into constant admittances ``conj(s_k)/|v_k|^2`` and reduces the
admittance matrix with the slack grounded.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .boundary import margin as proposed_margin
from .case_io import Network
from .errors import LoadkitError, NonConvergence, SingularNetwork
from .powerflow import VoltageState, all_injections, jacobian, solve_power_flow

SINGULAR_RATIO = 1e-12


@dataclass(frozen=True)
class TheveninEquivalent:
    bus: int
    z_thev: complex
    e_thev: complex


def _pq_position(net: Network, d: int) -> int:
    if d == net.slack_id or d not in net.index:
        raise ValueError(f"bus {d} is not a PQ bus")
    return net.index[d] - 1


def admittance_matrix(net: Network) -> np.ndarray:
    """Complex bus admittance matrix over all buses (slack first)."""
    G, B = net.line_matrices
    Y = -(G + 1j * B)
    Y[np.diag_indices_from(Y)] = (G + 1j * B).sum(axis=1)
    return Y


def _by_admittance(net: Network, v: VoltageState, d: int) -> TheveninEquivalent:
    i = _pq_position(net, d) + 1
    Y = admittance_matrix(net)
    p, q = all_injections(net, v)
    mag2 = v.v_re ** 2 + v.v_im ** 2
    for k in range(1, net.n + 1):
        if k != i:
            if mag2[k] == 0:
                raise SingularNetwork(f"bus {net.all_ids[k]} has zero voltage")
            Y[k, k] += np.conj(complex(p[k], q[k])) / mag2[k]
    red = Y[1:, 1:]
    try:
        Z = np.linalg.inv(red)
    except np.linalg.LinAlgError:
        raise SingularNetwork("reduced admittance matrix is singular") from None
    if not np.all(np.isfinite(Z)):
        raise SingularNetwork("reduced admittance matrix is singular")
    v_open = Z @ (-Y[1:, 0] * complex(net.slack_voltage))
    return TheveninEquivalent(d, complex(Z[i - 1, i - 1]), complex(v_open[i - 1]))


def _by_sensitivity(net: Network, v: VoltageState, d: int) -> TheveninEquivalent:
    i = _pq_position(net, d)
    n = net.n
    p, q = all_injections(net, v)
    S = complex(p[i + 1], q[i + 1])
    V = complex(v.v_re[i + 1], v.v_im[i + 1])
    if V == 0:
        raise SingularNetwork(f"bus {d} has zero voltage")
    phi = math.atan2(S.imag, S.real) if S != 0 else 0.0
    J = jacobian(net, v).matrix
    U, sv, Wt = np.linalg.svd(J)
    if sv[-1] <= SINGULAR_RATIO * sv[0]:
        # at a fold the response is along the null vector with no first-order power change
        dx, dS = Wt[-1], 0j
    else:
        e = np.zeros(2 * n)
        e[i], e[n + i] = math.cos(phi), math.sin(phi)
        dx, dS = np.linalg.solve(J, e), complex(math.cos(phi), math.sin(phi))
    dV = complex(dx[i], dx[n + i])
    I = np.conj(S / V)
    dI = np.conj(dS / V - S * dV / V ** 2)
    if abs(dI) == 0 or not np.isfinite(dI):
        raise SingularNetwork(f"bus {d}: current does not respond to its load")
    z = -dV / dI
    return TheveninEquivalent(d, complex(z), complex(V + z * I))


def thevenin_at(net: Network, v: VoltageState, d: int, method: str = "sensitivity") -> TheveninEquivalent:
    """Thevenin equivalent of the network seen from PQ bus ``d`` at state ``v``."""
    if method == "sensitivity":
        return _by_sensitivity(net, v, d)
    if method == "admittance":
        return _by_admittance(net, v, d)
    raise ValueError(f"unknown method {method!r}")


def thevenin_margin(net: Network, v: VoltageState, d: int, s_d: complex | None = None,
                    method: str = "sensitivity", metric: str = "power") -> float:
    """Distance to maximum power transfer through the equivalent, in ``[0, 1]``.

    ``metric="power"`` is ``1 - |s| / |s_max|`` with ``s_max`` the largest
    apparent power the equivalent delivers at the load's power factor;
    ``metric="impedance"`` is ``1 - |z_thev| / |z_app|``. Both vanish exactly
    when ``|z_app| = |z_thev|`` and equal 1 at zero load.
    """
    i = _pq_position(net, d)
    if s_d is None:
        p, q = all_injections(net, v)
        s_d = complex(p[i + 1], q[i + 1])
    if abs(s_d) == 0:
        return 1.0
    eq = thevenin_at(net, v, d, method)
    V2 = v.v_re[i + 1] ** 2 + v.v_im[i + 1] ** 2
    if metric == "impedance":
        value = 1.0 - abs(eq.z_thev) * abs(s_d) / V2
    elif metric == "power":
        zt = abs(eq.z_thev)
        if zt == 0:
            return 1.0
        beta = math.atan2(eq.z_thev.imag, eq.z_thev.real)
        phi = math.atan2(s_d.imag, s_d.real)
        denom = 2 * zt * (1 + math.cos(beta - phi))
        if denom == 0:
            return 1.0
        s_max = abs(eq.e_thev) ** 2 / denom
        value = 1.0 - abs(s_d) / s_max
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return float(min(1.0, max(0.0, value)))


@dataclass(frozen=True)
class SweepRow:
    load: float
    thevenin_margin: float
    proposed_margin: float
    state: VoltageState


def load_sweep(net: Network, bus: int, step: float = 1e-3, profile=None, max_load: float | None = None,
               method: str = "sensitivity", metric: str = "power", include_nose: bool = True) -> list[SweepRow]:
    """Grow every load along ``profile`` (default: active power 1 per PQ bus) and track both margins.

    The load level runs ``0, step, 2 step, ...`` until the power flow fails
    (or ``max_load``). With ``include_nose``, when the boundary point for the
    profile direction lies on the ray, the grid stops short of it and the
    exact fold is appended as the last row.
    """
    from .pareto import locate_boundary_point

    if profile is None:
        p_dir, q_dir = np.ones(net.n), np.zeros(net.n)
    else:
        p_dir, q_dir = (np.asarray(a, dtype=float) for a in profile)
    nose = None
    if include_nose and np.all(p_dir >= 0) and np.any(p_dir > 0) and not np.any(q_dir):
        try:
            pt = locate_boundary_point(net, p_dir)
        except LoadkitError:
            pt = None
        if pt is not None:
            scale = float(pt.p @ p_dir / (p_dir @ p_dir))
            _, q_nose = all_injections(net, pt.v)
            if np.allclose(pt.p, scale * p_dir, atol=1e-9) and np.allclose(q_nose[1:], 0, atol=1e-9):
                nose = (scale, pt.v)
    rows = []
    v = VoltageState.flat(net)
    k = 0
    while True:
        level = k * step
        if max_load is not None and level > max_load + 1e-12:
            break
        if nose is not None and level >= nose[0] - 1e-12:
            break
        try:
            v = solve_power_flow(net.with_targets(level * p_dir, level * q_dir), init=v)
        except NonConvergence:
            break
        rows.append(_row(net, bus, level, v, method, metric))
        k += 1
    if nose is not None and (max_load is None or nose[0] <= max_load + 1e-12):
        rows.append(_row(net, bus, nose[0], nose[1], method, metric))
    return rows


def _row(net, bus, level, v, method, metric) -> SweepRow:
    prop = proposed_margin(jacobian(net, v), v=v).m
    return SweepRow(float(level), thevenin_margin(net, v, bus, method=method, metric=metric), prop, v)


def zero_load(rows, key: str, tol: float = 1e-6) -> float | None:
    """First load level at which margin ``key`` is at most ``tol``."""
    for r in rows:
        if getattr(r, key) <= tol:
            return r.load
    return None


def sweep_csv(rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["load", "thevenin_margin", "proposed_margin"])
    for r in rows:
        w.writerow([repr(r.load), repr(r.thevenin_margin), repr(r.proposed_margin)])
    return out.getvalue()
