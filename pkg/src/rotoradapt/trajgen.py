"""Smooth reference trajectories from random waypoint walks.

A walk of six (x, y, phi) waypoints is fitted with piecewise polynomials over
five equal-duration segments: degree 7 in x and y minimizing integrated
squared snap, degree 5 in phi minimizing integrated squared angular
acceleration, with derivative continuity at interior knots (orders 1-4 for
x/y, 1-2 for phi) and zero velocity/acceleration(/jerk) at both endpoints.
Each axis is an equality-constrained QP solved through its KKT system; with
equal segment durations the cost is expressed in unit-time segment
coordinates, which leaves the minimizer unchanged and keeps the KKT matrix
well conditioned.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .prng import RandomStream

N_WAYPOINTS = 6
N_SEGMENTS = N_WAYPOINTS - 1
N_COEFFS = 8  # degree-7 storage; phi uses the first 6 and zero-pads

DEFAULT_WALK_BOUNDS = np.array([2.0, 2.0, np.pi / 6.0])

# per-axis spline setup: (number of coefficients, continuity order,
# zeroed endpoint-derivative order, cost-derivative order)
_AXIS_SETUP = {
    "xy": (8, 4, 3, 4),
    "phi": (6, 2, 2, 2),
}


class SplineFitError(RuntimeError):
    pass


def random_walk(rng: RandomStream, bounds: np.ndarray | None = None) -> np.ndarray:
    """Six waypoints starting at the origin with uniform increments.

    Returns an array [6, 3]; increments are i.i.d. uniform in
    [-bounds[i], +bounds[i]] per coordinate.
    """
    bounds = DEFAULT_WALK_BOUNDS if bounds is None else np.asarray(bounds, dtype=np.float64)
    if np.any(bounds < 0):
        raise ValueError("walk bounds must be non-negative")
    steps = rng.uniform(-1.0, 1.0, size=(N_WAYPOINTS - 1, 3)) * bounds
    points = np.zeros((N_WAYPOINTS, 3))
    points[1:] = np.cumsum(steps, axis=0)
    return points


def _deriv_row(n: int, k: int, tau: float) -> np.ndarray:
    """Row of d^k/dtau^k [tau^0 .. tau^(n-1)] evaluated at tau."""
    row = np.zeros(n)
    for i in range(k, n):
        row[i] = factorial(i) / factorial(i - k) * tau ** (i - k)
    return row


def _cost_gram(n: int, r: int) -> np.ndarray:
    """Gram matrix of the order-r derivative of the monomial basis on [0,1]."""
    H = np.zeros((n, n))
    for i in range(r, n):
        for j in range(r, n):
            ci = factorial(i) / factorial(i - r)
            cj = factorial(j) / factorial(j - r)
            H[i, j] = ci * cj / (i + j - 2 * r + 1)
    return H


def _fit_axis(waypoints: np.ndarray, kind: str) -> tuple[np.ndarray, float]:
    """Solve one axis' QP; returns (coeffs [N_SEGMENTS, n], KKT residual)."""
    n, cont, endp, costr = _AXIS_SETUP[kind]
    nv = n * N_SEGMENTS

    H = np.zeros((nv, nv))
    gram = _cost_gram(n, costr)
    for s in range(N_SEGMENTS):
        H[s * n:(s + 1) * n, s * n:(s + 1) * n] = gram

    rows, rhs = [], []

    def constrain(seg: int, k: int, tau: float, value: float, seg2: int | None = None):
        row = np.zeros(nv)
        row[seg * n:(seg + 1) * n] = _deriv_row(n, k, tau)
        if seg2 is not None:
            row[seg2 * n:(seg2 + 1) * n] -= _deriv_row(n, k, 0.0)
        rows.append(row)
        rhs.append(value)

    for s in range(N_SEGMENTS):
        constrain(s, 0, 0.0, waypoints[s])
        constrain(s, 0, 1.0, waypoints[s + 1])
    for s in range(1, N_SEGMENTS):
        for k in range(1, cont + 1):
            constrain(s - 1, k, 1.0, 0.0, seg2=s)
    for k in range(1, endp + 1):
        constrain(0, k, 0.0, 0.0)
        constrain(N_SEGMENTS - 1, k, 1.0, 0.0)

    A = np.array(rows)
    b = np.array(rhs)
    nc = len(b)

    kkt = np.zeros((nv + nc, nv + nc))
    kkt[:nv, :nv] = 2.0 * H
    kkt[:nv, nv:] = A.T
    kkt[nv:, :nv] = A
    full_rhs = np.concatenate([np.zeros(nv), b])
    try:
        sol = np.linalg.solve(kkt, full_rhs)
    except np.linalg.LinAlgError as exc:
        raise SplineFitError(f"singular KKT system for {kind} axis") from exc
    residual = np.abs(kkt @ sol - full_rhs).max()
    return sol[:nv].reshape(N_SEGMENTS, n), residual


@dataclass
class ReferenceTrajectory:
    """Piecewise polynomial q_d(t) on [0, duration] in unit-time segment coordinates.

    coeffs[s, i, c] is the tau^i coefficient of coordinate c on segment s,
    where tau = (t - knots[s]) / segment_duration; physical derivatives pick
    up 1/segment_duration per order.
    """

    knots: np.ndarray  # [N_SEGMENTS + 1]
    coeffs: np.ndarray  # [N_SEGMENTS, N_COEFFS, 3]
    kkt_residual: float = 0.0

    @property
    def duration(self) -> float:
        return float(self.knots[-1])

    def segment_of(self, t: np.ndarray) -> np.ndarray:
        delta = self.knots[1] - self.knots[0]
        return np.clip((np.asarray(t) / delta).astype(int), 0, N_SEGMENTS - 1)

    def derivatives(self, t, max_order: int = 2) -> list[np.ndarray]:
        """[q_d^(k)(t) for k in 0..max_order]; t scalar or array."""
        t_arr = np.asarray(t, dtype=np.float64)
        if np.any(t_arr < -1e-9) or np.any(t_arr > self.duration + 1e-9):
            raise ValueError(f"time outside [0, {self.duration}]")
        t_arr = np.clip(t_arr, 0.0, self.duration)
        delta = float(self.knots[1] - self.knots[0])
        seg = self.segment_of(t_arr)
        tau = (t_arr - self.knots[seg]) / delta
        c = self.coeffs[seg]  # [..., N_COEFFS, 3]
        return _poly_derivs(c, tau, delta, max_order)

    def evaluate(self, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(q_d, qdot_d, qddot_d) at time t."""
        d = self.derivatives(t, 2)
        return d[0], d[1], d[2]


def _poly_derivs(c: np.ndarray, tau: np.ndarray, delta: float, max_order: int) -> list[np.ndarray]:
    """Horner evaluation of tau-basis coefficients c [..., n, 3] and derivatives."""
    n = c.shape[-2]
    tau = np.asarray(tau)[..., None]
    out = []
    for k in range(max_order + 1):
        acc = np.zeros(np.broadcast_shapes(c.shape[:-2] + (3,), tau.shape))
        for i in range(n - 1, k - 1, -1):
            fac = factorial(i) / factorial(i - k)
            acc = acc * tau + fac * c[..., i, :]
        out.append(acc / delta**k)
    return out


def fit_spline(waypoints: np.ndarray, duration: float) -> ReferenceTrajectory:
    """Fit the minimum-snap / minimum-acceleration spline through a walk."""
    waypoints = np.asarray(waypoints, dtype=np.float64)
    if waypoints.shape != (N_WAYPOINTS, 3):
        raise ValueError(f"expected {N_WAYPOINTS} waypoints, got {waypoints.shape}")
    if not duration > 0:
        raise ValueError("duration must be positive")
    coeffs = np.zeros((N_SEGMENTS, N_COEFFS, 3))
    worst = 0.0
    for axis, kind in ((0, "xy"), (1, "xy"), (2, "phi")):
        c, res = _fit_axis(waypoints[:, axis], kind)
        coeffs[:, : c.shape[1], axis] = c
        worst = max(worst, res)
    knots = np.linspace(0.0, duration, N_SEGMENTS + 1)
    return ReferenceTrajectory(knots=knots, coeffs=coeffs, kkt_residual=worst)


def random_reference(rng: RandomStream, duration: float, bounds: np.ndarray | None = None) -> ReferenceTrajectory:
    """Walk + fit in one call (the shape every pipeline stage uses)."""
    return fit_spline(random_walk(rng, bounds), duration)


def stack_references(refs: list[ReferenceTrajectory]) -> "StackedReferences":
    knots = refs[0].knots
    for r in refs[1:]:
        if not np.array_equal(r.knots, knots):
            raise ValueError("stacked references must share knots")
    return StackedReferences(knots=knots, coeffs=np.stack([r.coeffs for r in refs]))


@dataclass
class StackedReferences:
    """A batch of same-duration references evaluated at a common time."""

    knots: np.ndarray  # [N_SEGMENTS + 1]
    coeffs: np.ndarray  # [B, N_SEGMENTS, N_COEFFS, 3]

    @property
    def batch(self) -> int:
        return self.coeffs.shape[0]

    @property
    def duration(self) -> float:
        return float(self.knots[-1])

    def derivatives(self, t: float, max_order: int = 2) -> list[np.ndarray]:
        """[B, 3] per derivative order at one shared time t."""
        delta = float(self.knots[1] - self.knots[0])
        if t < -1e-9 or t > self.duration + 1e-9:
            raise ValueError(f"time outside [0, {self.duration}]")
        t = min(max(t, 0.0), self.duration)
        seg = min(int(t / delta), N_SEGMENTS - 1)
        tau = (t - self.knots[seg]) / delta
        return _poly_derivs(self.coeffs[:, seg], np.full(self.batch, tau), delta, max_order)
