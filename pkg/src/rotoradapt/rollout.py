"""Fixed-step RK4 simulation of the closed loop (plant or learned model).

The augmented state per task is (q, qdot, A, c): vehicle state, the
controller's adapted parameters, and the running tracking cost

    c(T) = integral of ||x - r||^2 + alpha ||u||^2,   loss = c(T) / T,

integrated by the same RK4 scheme as the dynamics.  Tasks are batched on a
leading axis; because the whole integrator is written in autodiff ops it runs
either as plain numpy (plant evaluation, finite-difference checks) or as a
taped computation whose loss is differentiable in the controller parameters.

Two control modes share the integrator:

* continuous -- the control law is re-evaluated inside every RK4 stage
  (meta-training rollouts);
* zero-order hold -- u is computed from the sampled state at the control rate
  and held across stages (plant evaluation at 100 Hz).

During meta-training a task whose state leaves `divergence_limit` is frozen
(its stage derivatives are masked to zero) and contributes the fixed penalty
instead of aborting the step; in `raise` mode the blow-up time is reported.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ops
from .autodiff.tape import Var
from .trajgen import ReferenceTrajectory, StackedReferences, stack_references


class DivergenceError(RuntimeError):
    def __init__(self, time: float, tasks: np.ndarray):
        super().__init__(f"state diverged at t={time:.3f}s for task(s) {tasks.tolist()}")
        self.time = time
        self.tasks = tasks


@dataclass(frozen=True)
class RolloutConfig:
    horizon: float
    dt: float = 0.01
    control_rate: float = 100.0
    alpha: float = 1e-3
    divergence_limit: float = 1e6
    divergence_penalty: float = 1e6
    zoh: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        n = self.horizon / self.dt
        if abs(n - round(n)) > 1e-9:
            raise ValueError("horizon must be a multiple of dt")
        k = 1.0 / (self.control_rate * self.dt)
        if abs(k - round(k)) > 1e-9:
            raise ValueError("control period must be a multiple of dt")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def hold_steps(self) -> int:
        return int(round(1.0 / (self.control_rate * self.dt)))


class RefTables:
    """Reference derivatives pre-evaluated on the half-step stage grid."""

    def __init__(self, sref: StackedReferences, cfg: RolloutConfig):
        n = cfg.n_steps
        half = cfg.dt / 2.0
        B = sref.batch
        self.q = np.empty((2 * n + 1, B, 3))
        self.dq = np.empty((2 * n + 1, B, 3))
        self.ddq = np.empty((2 * n + 1, B, 3))
        for j in range(2 * n + 1):
            d = sref.derivatives(min(j * half, sref.duration), 2)
            self.q[j], self.dq[j], self.ddq[j] = d

    def at(self, j: int):
        return self.q[j], self.dq[j], self.ddq[j]


@dataclass
class SimResult:
    loss: object  # [B]; ndarray or tape Var
    cost: object  # [B] accumulated integral (unnormalized)
    diverged: np.ndarray  # bool [B]
    blowup_time: np.ndarray  # [B], nan where finite
    times: np.ndarray | None = None
    states: np.ndarray | None = None  # [n+1, B, 6]
    adapted: np.ndarray | None = None  # [n+1, B, ...]
    costs: np.ndarray | None = None  # [n+1, B]
    controls: np.ndarray | None = None  # sampled (t, u) pairs in zoh mode

    @property
    def loss_value(self) -> np.ndarray:
        return self.loss.value if isinstance(self.loss, Var) else self.loss


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else x


def _mask_mul(x, alive_col):
    return ops.mul(x, alive_col) if alive_col is not None else x


def simulate(
    dynamics,
    controller,
    refs: StackedReferences | ReferenceTrajectory | list,
    cfg: RolloutConfig,
    adapted0=None,
    divergence: str = "raise",
    record_trajectory: bool = False,
    tables: RefTables | None = None,
) -> SimResult:
    """Closed-loop rollout from x(0) = r(0), A(0) = 0.

    `dynamics(q, qdot, u) -> qddot` and `controller.stage(q, qdot, refd, A)
    -> (u, dA, e, edot)` may be numpy functions or traced closures over tape
    variables; the integrator follows suit.
    """
    if isinstance(refs, ReferenceTrajectory):
        refs = stack_references([refs])
    elif isinstance(refs, list):
        refs = stack_references(refs)
    if divergence not in ("raise", "clamp"):
        raise ValueError("divergence must be 'raise' or 'clamp'")
    if abs(refs.duration - cfg.horizon) > 1e-9:
        raise ValueError("reference duration does not match rollout horizon")

    B = refs.batch
    if tables is None:
        tables = RefTables(refs, cfg)
    h = cfg.dt
    n = cfg.n_steps

    # x(0) = r(0), A(0) = 0, c(0) = 0
    q = np.ascontiguousarray(tables.q[0])
    qdot = np.ascontiguousarray(tables.dq[0])
    A = np.zeros((B,) + tuple(controller.adapted_shape)) if adapted0 is None else adapted0
    c = np.zeros(B)

    alive = np.ones(B)
    alive_col = None  # lazily created once a task dies
    blowup = np.full(B, np.nan)

    rec_states = rec_adapted = rec_costs = None
    controls = []
    if record_trajectory:
        rec_states = np.empty((n + 1, B, 6))
        rec_adapted = np.empty((n + 1,) + _val(A).shape)
        rec_costs = np.empty((n + 1, B))
        rec_states[0] = np.concatenate([_val(q), _val(qdot)], axis=1)
        rec_adapted[0] = _val(A)
        rec_costs[0] = _val(c)

    u_held = None

    def stage(j, q_s, qdot_s, A_s):
        refd = tables.at(j)
        u_s, dA, e, edot = controller.stage(q_s, qdot_s, refd, A_s)
        u_use = u_held if cfg.zoh else u_s
        out = dynamics(q_s, qdot_s, u_use)
        if isinstance(out, tuple):  # fully generic learned models supply dq too
            qdot_s, qddot = out
        else:
            qddot = out
        cdot = ops.add(
            ops.add(ops.sumsq_tail(e), ops.sumsq_tail(edot)),
            ops.scale(ops.sumsq_tail(u_use), cfg.alpha),
        )
        ks = (qdot_s, qddot, dA, cdot)
        if alive_col is None:
            return ks
        return tuple(_mask_mul(k, m) for k, m in zip(ks, (alive_col, alive_col, alive_mat, alive_vec)))

    for i in range(n):
        if cfg.zoh and i % cfg.hold_steps == 0:
            u_held = controller.stage(q, qdot, tables.at(2 * i), A)[0]
            controls.append((i * h, _val(u_held).copy()))

        k1 = stage(2 * i, q, qdot, A)
        q2 = ops.axpy(q, k1[0], h / 2)
        qd2 = ops.axpy(qdot, k1[1], h / 2)
        A2 = ops.axpy(A, k1[2], h / 2)
        k2 = stage(2 * i + 1, q2, qd2, A2)
        q3 = ops.axpy(q, k2[0], h / 2)
        qd3 = ops.axpy(qdot, k2[1], h / 2)
        A3 = ops.axpy(A, k2[2], h / 2)
        k3 = stage(2 * i + 1, q3, qd3, A3)
        q4 = ops.axpy(q, k3[0], h)
        qd4 = ops.axpy(qdot, k3[1], h)
        A4 = ops.axpy(A, k3[2], h)
        k4 = stage(2 * i + 2, q4, qd4, A4)

        q = ops.rk4_merge(q, k1[0], k2[0], k3[0], k4[0], h)
        qdot = ops.rk4_merge(qdot, k1[1], k2[1], k3[1], k4[1], h)
        A = ops.rk4_merge(A, k1[2], k2[2], k3[2], k4[2], h)
        c = ops.rk4_merge(c, k1[3], k2[3], k3[3], k4[3], h)

        qv, qdv, av = _val(q), _val(qdot), _val(A)
        bad = ~(
            np.isfinite(qv).all(axis=1)
            & np.isfinite(qdv).all(axis=1)
            & np.isfinite(av).reshape(B, -1).all(axis=1)
            & (np.abs(qv).max(axis=1) < cfg.divergence_limit)
            & (np.abs(qdv).max(axis=1) < cfg.divergence_limit)
        )
        newly = bad & (alive > 0.5)
        if newly.any():
            t_now = (i + 1) * h
            if divergence == "raise":
                raise DivergenceError(t_now, np.flatnonzero(newly))
            blowup[newly] = t_now
            alive = alive * (~newly)
            alive_vec = alive
            alive_col = alive[:, None]
            alive_mat = alive.reshape((B,) + (1,) * len(controller.adapted_shape))

        if record_trajectory:
            rec_states[i + 1] = np.concatenate([_val(q), _val(qdot)], axis=1)
            rec_adapted[i + 1] = _val(A)
            rec_costs[i + 1] = _val(c)

    loss = ops.scale(c, 1.0 / cfg.horizon)
    diverged = alive < 0.5
    if diverged.any():
        # frozen tasks contribute the fixed penalty; gradient flows only to live ones
        loss = ops.add(ops.mul(loss, alive), (1.0 - alive) * cfg.divergence_penalty)

    return SimResult(
        loss=loss,
        cost=c,
        diverged=diverged,
        blowup_time=blowup,
        times=np.arange(n + 1) * h if record_trajectory else None,
        states=rec_states,
        adapted=rec_adapted,
        costs=rec_costs,
        controls=controls if cfg.zoh else None,
    )


@dataclass
class PlantLog:
    """Sampled (t, x, u) records of a plant rollout at the control rate."""

    times: np.ndarray  # [K+1]
    states: np.ndarray  # [K+1, B, 6]
    controls: np.ndarray  # [K+1, B, 3]; final row repeats the last held input
    winds: np.ndarray  # [B]
    diverged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def simulate_plant(wind, controller, refs, cfg: RolloutConfig, divergence: str = "raise"):
    """Ground-truth rollout with zero-order-hold control; logs at the control rate.

    Returns (PlantLog, SimResult).  `wind` is a WindField whose `w` may be a
    scalar or per-task array.
    """
    from .dynamics import true_dynamics

    if not cfg.zoh:
        cfg = RolloutConfig(
            horizon=cfg.horizon, dt=cfg.dt, control_rate=cfg.control_rate,
            alpha=cfg.alpha, divergence_limit=cfg.divergence_limit,
            divergence_penalty=cfg.divergence_penalty, zoh=True,
        )

    def dyn(q, qdot, u):
        return true_dynamics(q, qdot, u, wind)[1]

    res = simulate(dyn, controller, refs, cfg, divergence=divergence, record_trajectory=True)

    hold = cfg.hold_steps
    idx = np.arange(0, cfg.n_steps + 1, hold)
    t = res.times[idx]
    states = res.states[idx]
    u = np.stack([uv for _, uv in res.controls] + [res.controls[-1][1]])
    B = states.shape[1]
    w = np.broadcast_to(np.asarray(wind.w, dtype=np.float64), (B,)).copy()
    log = PlantLog(times=t, states=states, controls=u, winds=w, diverged=res.diverged)
    return log, res
