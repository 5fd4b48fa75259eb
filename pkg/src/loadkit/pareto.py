"""Loadability-boundary points for chosen growth directions.

A boundary point in direction ``z >= 0`` maximizes ``z . p`` over the state,
so its gradient vanishes: ``J_p(v)^T z = 0``. Every ``p_d`` is a homogeneous
quadratic in the bus voltages, so that gradient is linear in ``v``:

    grad_re = (2 Z T1 + Z G + G Z) v_re + (B Z - Z B) v_im
    grad_im = (Z B - B Z) v_re + (2 Z T1 + Z G + G Z) v_im

with ``Z = diag(z)`` (zero at the slack) and ``T1 = diag(t1)``. Fixing the
slack voltage leaves a square linear system in the PQ voltages.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .boundary import BoundaryVerdict, ConstraintSet, check_on_boundary, margin
from .case_io import Network
from .errors import LoadkitError, NotPareto, SingularSystem
from .powerflow import VoltageState, injections, jacobian

log = logging.getLogger(__name__)

RANK_TOL = 1e-10


@dataclass
class ParetoPoint:
    z: np.ndarray
    v: VoltageState
    p: np.ndarray
    residual_norm: float
    degenerate: bool = False
    verdict: BoundaryVerdict | None = None

    def to_dict(self) -> dict:
        return {"z": [float(x) for x in self.z], "p": [float(x) for x in self.p],
                "v_re": [float(x) for x in self.v.v_re], "v_im": [float(x) for x in self.v.v_im],
                "residual": self.residual_norm, "degenerate": self.degenerate,
                "on_boundary": None if self.verdict is None else self.verdict.on_boundary}


def growth_direction(net: Network, z) -> np.ndarray:
    """Validate ``z`` (one weight per PQ bus, nonnegative, not all zero)."""
    z = np.asarray(z, dtype=float).ravel()
    if z.shape != (net.n,):
        raise ValueError(f"z needs {net.n} entries, got {z.size}")
    if not np.all(np.isfinite(z)) or np.any(z < 0) or not np.any(z > 0):
        raise ValueError("z must be finite, nonnegative and not all zero")
    return z


def profile_direction(p, floor: float = 0.0) -> np.ndarray:
    """Growth direction following a load profile.

    Buses that generate (negative consumption) cannot grow in that sense, so
    weights are clipped at ``floor`` times the largest weight.
    """
    p = np.asarray(p, dtype=float)
    z = np.maximum(p, 0.0)
    top = z.max(initial=0.0)
    if top <= 0:
        raise ValueError("profile has no consuming bus")
    return np.maximum(z, floor * top)


def stationarity_system(net: Network, z, form: str = "gradient") -> tuple[np.ndarray, np.ndarray]:
    """``A, b`` with ``A x = b`` the stationarity conditions of ``z . p``.

    ``form="printed"`` uses the bus's own voltage in the coupling terms
    instead of the neighbor's; it agrees with the gradient form only at
    symmetric solutions and exists for comparison.
    """
    z = growth_direction(net, z)
    G, B = net.line_matrices
    zall = np.r_[0.0, z]
    Z = np.diag(zall)
    T1 = np.diag(-G.sum(axis=1))
    if form == "gradient":
        Hrr = 2 * Z @ T1 + Z @ G + G @ Z
        Hri = B @ Z - Z @ B
        Hir = Z @ B - B @ Z
    elif form == "printed":
        Hrr = 2 * Z @ T1 + Z @ G + np.diag(G @ zall)
        Hri = -Z @ B + np.diag(B @ zall)
        Hir = Z @ B - np.diag(B @ zall)
    else:
        raise ValueError(f"unknown form {form!r}")
    Hii = Hrr
    H = np.block([[Hrr, Hri], [Hir, Hii]])
    size = net.n + 1
    keep = np.r_[np.arange(1, size), size + np.arange(1, size)]
    slack_cols = [0, size]
    A = H[np.ix_(keep, keep)]
    b = -H[np.ix_(keep, slack_cols)] @ np.array([net.slack_voltage.real, net.slack_voltage.imag])
    return A, b


def locate_boundary_point(net: Network, z, form: str = "gradient", allow_degenerate: bool = False,
                          cs: ConstraintSet | None = None, check: bool = True,
                          second_order: bool = True) -> ParetoPoint:
    """Solve the stationarity system for direction ``z`` and certify the result.

    Raises :class:`SingularSystem` when the system is rank deficient (unless
    ``allow_degenerate``, which returns the minimum-norm solution flagged as
    degenerate) and :class:`NotPareto` when the solution is not on the
    boundary. With ``second_order`` a stationary point is also rejected when
    ``z . p`` is not locally concave there (the system matrix is its
    Hessian), since a saddle maximizes nothing.
    """
    z = growth_direction(net, z)
    A, b = stationarity_system(net, z, form)
    s = np.linalg.svd(A, compute_uv=False)
    rank = int(np.sum(s > RANK_TOL * max(s[0], 1e-300)))
    degenerate = rank < A.shape[0]
    if degenerate:
        if not allow_degenerate:
            raise SingularSystem(f"stationarity system for z={z.tolist()} is singular", A.shape[0] - rank)
        x = np.linalg.lstsq(A, b, rcond=RANK_TOL)[0]
    else:
        x = np.linalg.solve(A, b)
    v = VoltageState.from_vector(net, x)
    p, _ = injections(net, v)
    res = float(np.linalg.norm(A @ x - b))
    point = ParetoPoint(z, v, p, res, degenerate)
    if check and second_order and form == "gradient":
        top = float(np.linalg.eigvalsh(0.5 * (A + A.T)).max())
        if top > RANK_TOL * max(s[0], 1.0):
            raise NotPareto(f"stationary point for z={z.tolist()} is a saddle of z.p "
                            f"(Hessian eigenvalue {top:.3g} > 0)", point)
    if check:
        point.verdict = check_on_boundary(jacobian(net, v), cs, v=v)
        if not point.verdict.on_boundary:
            raise NotPareto(f"stationary point for z={z.tolist()} is not on the boundary", point)
    return point


def angular_directions(count: int) -> list[np.ndarray]:
    """``count`` directions ``(cos a, sin a)`` strictly inside the first quadrant."""
    if count < 1:
        raise ValueError("count must be positive")
    angles = np.pi / 2 * np.arange(1, count + 1) / (count + 1)
    return [np.array([math.cos(a), math.sin(a)]) for a in angles]


@dataclass
class FrontSweep:
    points: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (z, error)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("LOADKIT_THREADS", "1")))
    except ValueError:
        return 1


def sweep_front(net: Network, zs=None, count: int | None = None, **kwargs) -> FrontSweep:
    """Locate one boundary point per direction, collecting failures.

    ``count`` builds an angular grid (two-load networks only). For two loads
    the located points are ordered by angle in the ``p`` plane.
    """
    if zs is None:
        if count is None:
            raise ValueError("give directions or a count")
        if net.n != 2:
            raise ValueError("an angular grid needs exactly two PQ buses")
        zs = angular_directions(count)
    zs = [growth_direction(net, z) for z in zs]
    kwargs.setdefault("allow_degenerate", True)

    def one(z):
        try:
            return locate_boundary_point(net, z, **kwargs), None
        except (LoadkitError, np.linalg.LinAlgError) as exc:
            return None, exc

    workers = _threads()
    if workers > 1 and len(zs) > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, zs))
    else:
        results = [one(z) for z in zs]
    out = FrontSweep()
    for z, (pt, err) in zip(zs, results):
        if pt is None:
            log.info("direction %s failed: %s", z.tolist(), err)
            out.failures.append((z, err))
        else:
            out.points.append(pt)
    if net.n == 2:
        out.points.sort(key=lambda pt: math.atan2(pt.p[1], pt.p[0]))
    return out


@dataclass(frozen=True)
class TracePoint:
    scale: float
    sum_p: float
    margin: float


def ray_margin_trace(net: Network, v_start: VoltageState, v_end: VoltageState, steps: int,
                     cs: ConstraintSet | None = None) -> list[TracePoint]:
    """Margins along the straight segment from ``v_start`` to ``v_end``.

    ``sum_p`` is the total active consumption divided by its value at
    ``v_end``.
    """
    if steps < 2:
        raise ValueError("steps must be at least 2")
    x0, x1 = v_start.x, v_end.x
    total_end = float(np.sum(injections(net, v_end)[0]))
    out = []
    for s in np.linspace(0.0, 1.0, steps):
        v = VoltageState.from_vector(net, (1 - s) * x0 + s * x1)
        total = float(np.sum(injections(net, v)[0]))
        m = margin(jacobian(net, v), cs, v=v).m
        out.append(TracePoint(float(s), total / total_end if total_end else math.nan, m))
    return out


def front_csv(points) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    if not points:
        return ""
    n = len(points[0].z)
    w.writerow([f"z{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)]
               + ["residual", "on_boundary"])
    for pt in points:
        on = "" if pt.verdict is None else str(pt.verdict.on_boundary).lower()
        w.writerow([repr(float(x)) for x in pt.z] + [repr(float(x)) for x in pt.p]
                   + [repr(pt.residual_norm), on])
    return out.getvalue()


def trace_csv(trace) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["scale", "sum_p", "margin"])
    for t in trace:
        w.writerow([repr(t.scale), repr(t.sum_p), repr(t.margin)])
    return out.getvalue()


def read_csv(text: str) -> list[dict]:
    """Parse any CSV written by this package into dicts of floats (strings kept)."""
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        row = {}
        for k, val in r.items():
            try:
                row[k] = float(val)
            except ValueError:
                row[k] = val
        rows.append(row)
    return rows
