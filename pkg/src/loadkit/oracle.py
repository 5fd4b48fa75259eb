"""Brute-force ground truth for small networks.

Voltages are swept over a regular grid, every grid state is mapped to its
active consumption and Jacobian determinant, and the region's Pareto front
and singular locus are read off the samples.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field

import numpy as np

from .boundary import check_on_boundary
from .case_io import Network
from .errors import GridTooLarge
from .powerflow import VoltageState, jacobian

MAX_POINTS = 10 ** 7
MAX_VARIABLES = 4
CUSP_TOL = 1e-6


@dataclass(frozen=True)
class Axis:
    bus: int
    part: str  # "re" or "im"
    lo: float
    hi: float
    step: float

    def values(self) -> np.ndarray:
        if self.step <= 0:
            raise ValueError("grid step must be positive")
        if self.hi < self.lo:
            return np.zeros(0)
        count = int(np.floor((self.hi - self.lo) / self.step + 1e-9)) + 1
        return self.lo + self.step * np.arange(count)


@dataclass(frozen=True)
class GridSpec:
    """Axes of the voltage grid; state entries not on an axis stay at ``fixed``."""

    axes: tuple[Axis, ...]
    fixed: tuple[float, ...] | None = None

    @classmethod
    def uniform(cls, net: Network, lo: float, hi: float, step: float, real_only: bool = True) -> "GridSpec":
        parts = ("re",) if real_only else ("re", "im")
        return cls(tuple(Axis(b, part, lo, hi, step) for part in parts for b in net.bus_ids))

    @classmethod
    def parse(cls, net: Network, text: str) -> "GridSpec":
        """``lo:hi:step`` (real parts only) or ``lo:hi:step:complex``."""
        bits = text.split(":")
        if len(bits) not in (3, 4) or (len(bits) == 4 and bits[3] != "complex"):
            raise ValueError(f"grid spec must be lo:hi:step[:complex], got {text!r}")
        lo, hi, step = (float(x) for x in bits[:3])
        return cls.uniform(net, lo, hi, step, real_only=len(bits) == 3)

    def shape(self) -> tuple[int, ...]:
        return tuple(len(a.values()) for a in self.axes)


@dataclass
class RegionSample:
    grid: GridSpec
    shape: tuple[int, ...]
    x: np.ndarray  # (N, 2n) states
    p: np.ndarray  # (N, n) active consumption
    det_j: np.ndarray  # (N,)
    net: Network = field(repr=False, default=None)

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def points(self):
        for x, p, d in zip(self.x, self.p, self.det_j):
            yield VoltageState.from_vector(self.net, x), p, d


def _column(net: Network, axis: Axis) -> int:
    i = net.index[axis.bus] - 1
    if i < 0:
        raise ValueError("the slack voltage is fixed and cannot be gridded")
    if axis.part not in ("re", "im"):
        raise ValueError(f"unknown voltage part {axis.part!r}")
    return i if axis.part == "re" else net.n + i


def batch_power(net: Network, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Active and reactive consumption for many states at once (rows of ``x``)."""
    n = net.n
    G, B = net.line_matrices
    s = net.slack_voltage
    vr = np.column_stack([np.full(len(x), s.real), x[:, :n]])
    vi = np.column_stack([np.full(len(x), s.imag), x[:, n:]])
    t1, t4 = -G.sum(axis=1), B.sum(axis=1)
    t2 = vr @ G - vi @ B
    t3 = vr @ B + vi @ G
    mag2 = vr ** 2 + vi ** 2
    p = t1 * mag2 + t2 * vr + t3 * vi
    q = t4 * mag2 - t3 * vr + t2 * vi
    return p[:, 1:], q[:, 1:]


def batch_det(net: Network, x: np.ndarray, chunk: int = 100_000) -> np.ndarray:
    """Determinant of the power flow Jacobian for many states."""
    n = net.n
    G, B = net.line_matrices
    s = net.slack_voltage
    out = np.empty(len(x))
    idx = np.arange(n + 1)
    t1, t4 = -G.sum(axis=1), B.sum(axis=1)
    for start in range(0, len(x), chunk):
        xs = x[start:start + chunk]
        k = len(xs)
        vr = np.column_stack([np.full(k, s.real), xs[:, :n]])
        vi = np.column_stack([np.full(k, s.imag), xs[:, n:]])
        t2 = vr @ G - vi @ B
        t3 = vr @ B + vi @ G
        a, c = vr[:, :, None], vi[:, :, None]
        dp_dr = G * a + B * c
        dp_di = G * c - B * a
        dq_dr = G * c - B * a
        dq_di = -G * a - B * c
        dp_dr[:, idx, idx] = 2 * t1 * vr + t2
        dp_di[:, idx, idx] = 2 * t1 * vi + t3
        dq_dr[:, idx, idx] = 2 * t4 * vr - t3
        dq_di[:, idx, idx] = 2 * t4 * vi + t2
        J = np.concatenate([
            np.concatenate([dp_dr[:, 1:, 1:], dp_di[:, 1:, 1:]], axis=2),
            np.concatenate([dq_dr[:, 1:, 1:], dq_di[:, 1:, 1:]], axis=2),
        ], axis=1)
        out[start:start + k] = np.linalg.det(J)
    return out


def sample_region(net: Network, grid: GridSpec, allow_large: bool = False,
                  with_det: bool = True) -> RegionSample:
    """Evaluate consumption and ``det J`` at every grid state.

    ``with_det=False`` skips the determinants (left as NaN).
    """
    shape = grid.shape()
    total = int(np.prod(shape)) if shape else 0
    if total > MAX_POINTS:
        raise GridTooLarge(f"grid has {total} points, limit is {MAX_POINTS}")
    if len(grid.axes) > MAX_VARIABLES and not allow_large:
        raise GridTooLarge(f"{len(grid.axes)} gridded variables exceed the default limit of "
                           f"{MAX_VARIABLES}; pass allow_large to override")
    return _evaluate(net, grid, [a.values() for a in grid.axes], with_det)


def _evaluate(net: Network, grid: GridSpec, values: list, with_det: bool) -> RegionSample:
    shape = tuple(len(v) for v in values)
    total = int(np.prod(shape)) if shape else 0
    base = np.zeros(2 * net.n) if grid.fixed is None else np.asarray(grid.fixed, dtype=float)
    if total == 0:
        return RegionSample(grid, shape, np.zeros((0, 2 * net.n)), np.zeros((0, net.n)), np.zeros(0), net)
    x = np.tile(base, (total, 1))
    mesh = np.meshgrid(*values, indexing="ij")
    for axis, vals in zip(grid.axes, mesh):
        x[:, _column(net, axis)] = vals.ravel()
    p, _ = batch_power(net, x)
    det = batch_det(net, x) if with_det else np.full(total, np.nan)
    return RegionSample(grid, shape, x, p, det, net)


def front_of_grid(net: Network, grid: GridSpec, tile_points: int = 2_000_000) -> np.ndarray:
    """Pareto front of a grid too large to hold at once.

    The first axis is cut into tiles; the front of the union is the front of
    the tile fronts.
    """
    if not grid.axes:
        return np.zeros((0, net.n))
    values = [a.values() for a in grid.axes]
    per_row = int(np.prod([len(v) for v in values[1:]]))
    rows = max(1, tile_points // max(per_row, 1))
    fronts = []
    for start in range(0, len(values[0]), rows):
        sub = _evaluate(net, grid, [values[0][start:start + rows]] + values[1:], with_det=False)
        fronts.append(pareto_front(sub.p))
    return pareto_front(np.vstack(fronts))


def pareto_front(points) -> np.ndarray:
    """Nondominated subset (maximization) of a set of vectors, duplicates kept once."""
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return pts.reshape(0, pts.shape[-1] if pts.ndim == 2 else 0)
    if pts.shape[1] == 2:
        order = np.lexsort((-pts[:, 1], -pts[:, 0]))
        s = pts[order]
        # sorted by x descending: a point survives if its y beats every earlier y
        # (which also drops exact duplicates)
        prev_best = np.r_[-np.inf, np.maximum.accumulate(s[:-1, 1])]
        return s[s[:, 1] > prev_best]
    pts = np.unique(pts, axis=0)
    keep = np.ones(len(pts), dtype=bool)
    for i in range(len(pts)):
        if not keep[i]:
            continue
        dominated = np.all(pts >= pts[i], axis=1) & np.any(pts > pts[i], axis=1)
        if dominated.any():
            keep[i] = False
    return pts[keep]


def grid_step_in_p(sample: RegionSample) -> float:
    """Largest distance in ``p`` between two neighboring grid states."""
    ps = sample.p.reshape(*sample.shape, -1)
    best = 0.0
    for ax in range(len(sample.shape)):
        if sample.shape[ax] > 1:
            best = max(best, float(np.linalg.norm(np.diff(ps, axis=ax), axis=-1).max()))
    return best


def distance_to_front(front: np.ndarray, p) -> float:
    return float(np.min(np.linalg.norm(front - np.asarray(p), axis=1)))


def dominated_by(samples: np.ndarray, p, tol: float = 1e-12) -> bool:
    """True when some sample strictly dominates ``p`` beyond ``tol``."""
    p = np.asarray(p)
    ge = np.all(samples >= p - tol, axis=1)
    gt = np.any(samples > p + tol, axis=1)
    return bool(np.any(ge & gt))


@dataclass
class SingularPointClass:
    x: np.ndarray
    p: np.ndarray
    kind: str  # "boundary" or "interior"
    distance: float

    def state(self, net: Network) -> VoltageState:
        return VoltageState.from_vector(net, self.x)


def _bisect(net: Network, xa, xb, fa, tol: float) -> np.ndarray:
    a, b = np.array(xa), np.array(xb)
    while np.linalg.norm(b - a) > tol:
        mid = 0.5 * (a + b)
        fm = batch_det(net, mid[None, :])[0]
        if fm == 0:
            return mid
        if np.sign(fm) == np.sign(fa):
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


def singular_locus(sample: RegionSample, tol: float | None = None, refine: float = 1e-8,
                   front: np.ndarray | None = None, max_points: int | None = None
                   ) -> list[SingularPointClass]:
    """Singular-Jacobian states found on the grid, refined and classified.

    Sign changes of ``det J`` between grid neighbors are bisected to
    ``refine``; grid-line local minima of ``|det J|`` below ``CUSP_TOL`` catch
    touching zeros. A refined point whose ``p`` lies within ``tol`` of the
    sampled front is ``boundary``, otherwise ``interior``. ``tol`` defaults
    to two grid steps measured in ``p``: twice the largest change of ``p``
    between neighboring grid states.
    """
    net = sample.net
    if len(sample) == 0:
        return []
    shape = sample.shape
    det = sample.det_j.reshape(shape)
    xs = sample.x.reshape(*shape, -1)
    if front is None:
        front = pareto_front(sample.p)
    if tol is None:
        tol = 2 * grid_step_in_p(sample)
    found = []
    for ax in range(len(shape)):
        lo = [slice(None)] * len(shape)
        hi = [slice(None)] * len(shape)
        lo[ax], hi[ax] = slice(0, -1), slice(1, None)
        da, db = det[tuple(lo)], det[tuple(hi)]
        change = np.argwhere(np.sign(da) * np.sign(db) < 0)
        xa_all, xb_all = xs[tuple(lo)], xs[tuple(hi)]
        for idx in change:
            key = tuple(idx)
            found.append(_bisect(net, xa_all[key], xb_all[key], da[key], refine))
        if shape[ax] >= 3:
            mid = [slice(None)] * len(shape)
            mid[ax] = slice(1, -1)
            prev = [slice(None)] * len(shape)
            prev[ax] = slice(0, -2)
            nxt = [slice(None)] * len(shape)
            nxt[ax] = slice(2, None)
            a, m, b = np.abs(det[tuple(prev)]), np.abs(det[tuple(mid)]), np.abs(det[tuple(nxt)])
            same_sign = (np.sign(det[tuple(prev)]) == np.sign(det[tuple(mid)])) & \
                        (np.sign(det[tuple(mid)]) == np.sign(det[tuple(nxt)]))
            touch = np.argwhere((m <= a) & (m <= b) & (m <= CUSP_TOL) & same_sign)
            xm = xs[tuple(mid)]
            for idx in touch:
                found.append(np.array(xm[tuple(idx)]))
    if not found:
        return []
    pts = np.unique(np.round(np.array(found), 12), axis=0)
    if max_points is not None and len(pts) > max_points:
        pick = np.linspace(0, len(pts) - 1, max_points).round().astype(int)
        pts = pts[pick]
    p_all, _ = batch_power(net, pts)
    out = []
    for x, p in zip(pts, p_all):
        dist = distance_to_front(front, p)
        out.append(SingularPointClass(x, p, "boundary" if dist <= tol else "interior", dist))
    return out


def agreement(net: Network, locus) -> list[tuple[SingularPointClass, bool]]:
    """Pair each locus point with the LP boundary verdict at its state."""
    out = []
    for pt in locus:
        v = pt.state(net)
        out.append((pt, check_on_boundary(jacobian(net, v), v=v).on_boundary))
    return out


def region_csv(sample: RegionSample) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    names = [f"v{b}_re" for b in sample.net.bus_ids] + [f"v{b}_im" for b in sample.net.bus_ids]
    w.writerow(names + [f"p{b}" for b in sample.net.bus_ids] + ["det_j"])
    for x, p, d in zip(sample.x, sample.p, sample.det_j):
        w.writerow([repr(float(a)) for a in itertools.chain(x, p)] + [repr(float(d))])
    return out.getvalue()


def front_csv(front: np.ndarray, bus_ids) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow([f"p{b}" for b in bus_ids])
    for row in front:
        w.writerow([repr(float(a)) for a in row])
    return out.getvalue()


def locus_csv(net: Network, locus) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    names = [f"v{b}_re" for b in net.bus_ids] + [f"v{b}_im" for b in net.bus_ids]
    w.writerow(names + [f"p{b}" for b in net.bus_ids] + ["distance", "class"])
    for pt in locus:
        w.writerow([repr(float(a)) for a in itertools.chain(pt.x, pt.p)] + [repr(pt.distance), pt.kind])
    return out.getvalue()
