"""Per-bus power circles in the (v_re, v_im) plane.

With the neighbor voltages frozen, the active and reactive equations of a
bus are each a circle in that bus's own voltage plane. Completing the square
in ``p = t1 |v|^2 + t2 v_re + t3 v_im`` gives

    (x + t2/(2 t1))^2 + (y + t3/(2 t1))^2 = p/t1 + (t2^2 + t3^2)/(4 t1^2)

and likewise for ``q`` with ``t4``. The operating voltage sits on both circles;
how far apart the two intersections are shows how much room the bus has left.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .case_io import Network
from .errors import DegenerateCircle, Disjoint
from .powerflow import VoltageState, injections, t_coefficients


@dataclass(frozen=True)
class CircleDescriptor:
    bus: int
    kind: str  # "active" or "reactive"
    center: tuple[float, float]
    radius_sq: float

    @property
    def radius(self) -> float:
        if self.radius_sq < 0:
            raise Disjoint(f"{self.kind} circle of bus {self.bus} is empty (radius^2 = {self.radius_sq:.3g})")
        return math.sqrt(self.radius_sq)

    def sample(self, count: int) -> np.ndarray:
        """``count`` points spaced evenly in angle, as rows ``(theta, x, y)``."""
        theta = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
        r = self.radius
        return np.column_stack([theta, self.center[0] + r * np.cos(theta),
                                self.center[1] + r * np.sin(theta)])

    def distance(self, point) -> float:
        """Distance from ``point`` to the circle."""
        dx, dy = point[0] - self.center[0], point[1] - self.center[1]
        return abs(math.hypot(dx, dy) - self.radius)


@dataclass(frozen=True)
class CircleIntersection:
    points: tuple[tuple[float, float], ...]
    gap: float

    def to_dict(self) -> dict:
        return {"points": [list(p) for p in self.points], "gap": self.gap}


def power_circle(net: Network, v: VoltageState, d: int, kind: str, value: float | None = None
                 ) -> CircleDescriptor:
    """One circle of bus ``d``: ``kind`` is ``"active"`` or ``"reactive"``.

    ``value`` (``p_d`` or ``q_d``) defaults to the consumption at ``v``.
    """
    t = t_coefficients(net, v, d)
    if value is None:
        p, q = injections(net, v)
        value = (p if kind == "active" else q)[net.index[d] - 1]
    s = t.t2 ** 2 + t.t3 ** 2
    if kind == "active":
        if t.t1 == 0:
            raise DegenerateCircle(f"bus {d}: no conductance, the active locus is a line")
        return CircleDescriptor(d, kind, (-t.t2 / (2 * t.t1), -t.t3 / (2 * t.t1)),
                                value / t.t1 + s / (4 * t.t1 ** 2))
    if kind == "reactive":
        if t.t4 == 0:
            raise DegenerateCircle(f"bus {d}: no susceptance, the reactive locus is a line")
        return CircleDescriptor(d, kind, (t.t3 / (2 * t.t4), -t.t2 / (2 * t.t4)),
                                value / t.t4 + s / (4 * t.t4 ** 2))
    raise ValueError(f"unknown circle kind {kind!r}")


def power_circles(net: Network, v: VoltageState, d: int, p_d: float | None = None,
                  q_d: float | None = None) -> tuple[CircleDescriptor, CircleDescriptor]:
    """Active and reactive circles of bus ``d`` with neighbors held at ``v``.

    ``p_d``/``q_d`` default to the consumption at ``v``, so the bus's own
    voltage lies on both circles.
    """
    return power_circle(net, v, d, "active", p_d), power_circle(net, v, d, "reactive", q_d)


def max_consumption(net: Network, v: VoltageState, d: int) -> float:
    """Largest ``p_d`` the active circle admits: ``-(t2^2 + t3^2) / (4 t1)``."""
    t = t_coefficients(net, v, d)
    if t.t1 == 0:
        raise DegenerateCircle(f"bus {d}: no conductance, active power is unbounded")
    return -(t.t2 ** 2 + t.t3 ** 2) / (4 * t.t1)


def intersect(c1: CircleDescriptor, c2: CircleDescriptor, rel_tol: float = 1e-12) -> CircleIntersection:
    """Intersection of two circles; raises :class:`Disjoint` when there is none."""
    r1, r2 = c1.radius, c2.radius
    (x1, y1), (x2, y2) = c1.center, c2.center
    dx, dy = x2 - x1, y2 - y1
    dist = math.hypot(dx, dy)
    scale = max(1.0, r1, r2, dist)
    if dist <= rel_tol * scale:
        raise Disjoint("concentric circles have no isolated intersection")
    if dist > r1 + r2 + rel_tol * scale or dist < abs(r1 - r2) - rel_tol * scale:
        raise Disjoint(f"circles of bus {c1.bus} do not meet: no local solution for these neighbors")
    a = (r1 ** 2 - r2 ** 2 + dist ** 2) / (2 * dist)
    h_sq = r1 ** 2 - a ** 2
    bx, by = x1 + a * dx / dist, y1 + a * dy / dist
    if h_sq <= (rel_tol * scale) ** 2 * 4:
        return CircleIntersection(((bx, by),), 0.0)
    h = math.sqrt(h_sq)
    ox, oy = -dy / dist * h, dx / dist * h
    return CircleIntersection(((bx + ox, by + oy), (bx - ox, by - oy)), 2 * h)


def circles_csv(circles, samples: int) -> str:
    """CSV rows ``bus,kind,theta,x,y`` sampled around each circle."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["bus", "kind", "theta", "x", "y"])
    for c in circles:
        for theta, x, y in c.sample(samples):
            w.writerow([c.bus, c.kind, repr(float(theta)), repr(float(x)), repr(float(y))])
    return out.getvalue()


def read_circles_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [{"bus": int(r["bus"]), "kind": r["kind"], "theta": float(r["theta"]),
             "x": float(r["x"]), "y": float(r["y"])} for r in rows]
