"""Rectangular-coordinate power flow.

With ``v_d = v_re + j v_im`` the consumption at bus ``d`` is

    p_d = t1 (v_re^2 + v_im^2) + t2 v_re + t3 v_im
    q_d = t4 (v_re^2 + v_im^2) - t3 v_re + t2 v_im

where ``t1 = -sum g_kd`` and ``t4 = sum b_kd`` depend only on the lines and
``t2``, ``t3`` are linear in the neighbor voltages. Every Jacobian entry is
therefore affine in the state.

State vectors are ordered ``[v_re(bus_ids), v_im(bus_ids)]``; the slack is fixed
and never part of the state.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .case_io import Network
from .errors import NonConvergence, SchemaError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class VoltageState:
    """Real and imaginary voltage parts over all buses, slack first."""

    v_re: np.ndarray
    v_im: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v_re", np.asarray(self.v_re, dtype=float))
        object.__setattr__(self, "v_im", np.asarray(self.v_im, dtype=float))

    @classmethod
    def flat(cls, net: Network) -> "VoltageState":
        """Slack voltage replicated to every bus."""
        size = net.n + 1
        return cls(np.full(size, net.slack_voltage.real), np.full(size, net.slack_voltage.imag))

    @classmethod
    def from_vector(cls, net: Network, x) -> "VoltageState":
        x = np.asarray(x, dtype=float)
        n = net.n
        return cls(np.r_[net.slack_voltage.real, x[:n]], np.r_[net.slack_voltage.imag, x[n:]])

    @classmethod
    def from_complex(cls, net: Network, v) -> "VoltageState":
        """From complex voltages of the PQ buses (``bus_ids`` order)."""
        v = np.asarray(v, dtype=complex)
        return cls.from_vector(net, np.r_[v.real, v.imag])

    @property
    def x(self) -> np.ndarray:
        """Non-slack state vector ``[v_re, v_im]``."""
        return np.r_[self.v_re[1:], self.v_im[1:]]

    @property
    def complex(self) -> np.ndarray:
        return self.v_re + 1j * self.v_im

    def validate(self, net: Network) -> None:
        if self.v_re.shape != (net.n + 1,) or self.v_im.shape != (net.n + 1,):
            raise SchemaError(f"voltage state must cover {net.n + 1} buses")
        if complex(self.v_re[0], self.v_im[0]) != net.slack_voltage:
            raise SchemaError("slack entry of the voltage state differs from the network slack voltage")
        if not (np.all(np.isfinite(self.v_re)) and np.all(np.isfinite(self.v_im))):
            raise SchemaError("voltage state has non-finite entries")


def state_to_json(net: Network, v: VoltageState) -> str:
    buses = [{"id": b, "v_re": float(v.v_re[i]), "v_im": float(v.v_im[i])}
             for i, b in enumerate(net.all_ids)]
    return json.dumps({"buses": buses}, indent=1)


def state_from_json(text: str, net: Network) -> VoltageState:
    """Parse ``{"buses": [{"id", "v_re", "v_im"}]}``.

    The slack entry may be omitted; if present it must equal the network's
    slack voltage.
    """
    try:
        doc = json.loads(text)
        rows = doc["buses"]
        values = {int(r["id"]): (float(r["v_re"]), float(r["v_im"])) for r in rows}
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad voltage state document: {exc}") from None
    missing = [b for b in net.bus_ids if b not in values]
    if missing:
        raise SchemaError(f"voltage state lacks buses {missing[:5]}")
    values.setdefault(net.slack_id, (net.slack_voltage.real, net.slack_voltage.imag))
    vr = np.array([values[b][0] for b in net.all_ids])
    vi = np.array([values[b][1] for b in net.all_ids])
    state = VoltageState(vr, vi)
    state.validate(net)
    return state


@dataclass(frozen=True)
class TCoefficients:
    t1: float
    t2: float
    t3: float
    t4: float


def _t_all(net: Network, v: VoltageState):
    G, B = net.line_matrices
    t1 = -G.sum(axis=1)
    t4 = B.sum(axis=1)
    t2 = G @ v.v_re - B @ v.v_im
    t3 = B @ v.v_re + G @ v.v_im
    return t1, t2, t3, t4


def t_coefficients(net: Network, v: VoltageState, d: int) -> TCoefficients:
    """The four neighbor sums for bus id ``d`` (slack included when adjacent)."""
    if d == net.slack_id:
        raise ValueError("t coefficients are defined for non-slack buses")
    i = net.index[d]
    G, B = net.line_matrices
    row_g, row_b = G[i], B[i]
    return TCoefficients(
        t1=float(-row_g.sum()),
        t2=float(row_g @ v.v_re - row_b @ v.v_im),
        t3=float(row_b @ v.v_re + row_g @ v.v_im),
        t4=float(row_b.sum()),
    )


def all_injections(net: Network, v: VoltageState) -> tuple[np.ndarray, np.ndarray]:
    """Consumption ``(p, q)`` at every bus, slack included (index 0)."""
    t1, t2, t3, t4 = _t_all(net, v)
    mag2 = v.v_re ** 2 + v.v_im ** 2
    p = t1 * mag2 + t2 * v.v_re + t3 * v.v_im
    q = t4 * mag2 - t3 * v.v_re + t2 * v.v_im
    return p, q


def injections(net: Network, v: VoltageState) -> tuple[np.ndarray, np.ndarray]:
    """Consumption ``(p, q)`` at the PQ buses, in ``bus_ids`` order."""
    p, q = all_injections(net, v)
    return p[1:], q[1:]


def residual(net: Network, v: VoltageState, targets=None) -> np.ndarray:
    """Stacked mismatch ``[p(v) - p*, q(v) - q*]`` over PQ buses."""
    p_star, q_star = (net.p, net.q) if targets is None else targets
    p, q = injections(net, v)
    return np.r_[p - p_star, q - q_star]


@dataclass(frozen=True, eq=False)
class JacobianMatrix:
    """Partials of consumption with respect to the non-slack state.

    ``full`` has one row per bus (slack first) for each of p and q, so the
    gradients of the slack's own power are available for limit rows;
    ``matrix`` is the square ``2n x 2n`` power flow Jacobian.
    """

    net: Network
    dp: np.ndarray  # (n+1, 2n)
    dq: np.ndarray  # (n+1, 2n)

    @property
    def matrix(self) -> np.ndarray:
        return np.vstack([self.dp[1:], self.dq[1:]])

    @property
    def H(self) -> np.ndarray:
        """Active-power gradients of the PQ buses, one row per bus."""
        return self.dp[1:]

    def h(self, bus: int) -> np.ndarray:
        return self.dp[self.net.index[bus]]

    def g(self, bus: int) -> np.ndarray:
        return self.dq[self.net.index[bus]]

    def det(self) -> float:
        return float(np.linalg.det(self.matrix))


def jacobian(net: Network, v: VoltageState) -> JacobianMatrix:
    """Analytic Jacobian with respect to ``[v_re, v_im]`` of the PQ buses."""
    G, B = net.line_matrices
    t1, t2, t3, t4 = _t_all(net, v)
    vr, vi = v.v_re[:, None], v.v_im[:, None]
    # off-diagonal partials; G and B have zero diagonals
    dp_dr = G * vr + B * vi
    dp_di = G * vi - B * vr
    dq_dr = G * vi - B * vr
    dq_di = -G * vr - B * vi
    idx = np.arange(len(t1))
    dp_dr[idx, idx] = 2 * t1 * v.v_re + t2
    dp_di[idx, idx] = 2 * t1 * v.v_im + t3
    dq_dr[idx, idx] = 2 * t4 * v.v_re - t3
    dq_di[idx, idx] = 2 * t4 * v.v_im + t2
    dp = np.hstack([dp_dr[:, 1:], dp_di[:, 1:]])
    dq = np.hstack([dq_dr[:, 1:], dq_di[:, 1:]])
    return JacobianMatrix(net, dp, dq)


def solve_power_flow(net: Network, init: VoltageState | None = None, tol: float = 1e-10,
                     max_iter: int = 50, step_damping: bool = True) -> VoltageState:
    """Newton's method on the rectangular equations.

    The step is halved (at most 10 times) whenever it fails to reduce the
    residual norm. Raises :class:`NonConvergence` when the budget runs out or
    the iterate becomes non-finite.
    """
    v = init if init is not None else VoltageState.flat(net)
    x = v.x
    f = residual(net, v)
    norm = float(np.max(np.abs(f))) if f.size else 0.0
    for it in range(max_iter + 1):
        if norm <= tol:
            log.debug("power flow converged in %d iterations", it)
            return VoltageState.from_vector(net, x)
        if it == max_iter:
            break
        J = jacobian(net, VoltageState.from_vector(net, x)).matrix
        try:
            dx = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(J, -f, rcond=None)[0]
        if not np.all(np.isfinite(dx)):
            raise NonConvergence("non-finite Newton step", norm, it)
        step = 1.0
        for _ in range(11 if step_damping else 1):
            x_new = x + step * dx
            f_new = residual(net, VoltageState.from_vector(net, x_new))
            norm_new = float(np.max(np.abs(f_new)))
            if np.isfinite(norm_new) and norm_new < norm:
                break
            step *= 0.5
        if not np.isfinite(norm_new):
            raise NonConvergence("non-finite residual", norm, it)
        x, f, norm = x_new, f_new, norm_new
    raise NonConvergence("iteration budget exhausted", norm, max_iter)
