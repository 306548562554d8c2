"""Per-trajectory dynamics models fitted by one-step prediction.

Each recorded trajectory carries one latent wind value, so one small network
is fitted to each trajectory as a stand-in for the true dynamics under that
wind.  The model keeps the known structure (kinematics, gravity, thrust map)
and learns only the residual force as a function of (q, qdot):

    qddot_hat = -g_vec + R(phi) u + mlp(q, qdot)

Training minimizes the squared error of one RK4 step across each transition
tuple (with the recorded input held) plus an L2 weight penalty, using Adam
with a random 75/25 train/validation split; the returned weights are those
with the lowest recorded validation loss.  A fully generic variant
(mlp(q, qdot, u) -> full state derivative) is kept behind `residual=False`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import AdamState, adam_step, gradient, ops
from .autodiff.tape import Tape
from .controllers import FeatureConfig
from .dynamics import GRAVITY
from .prng import RandomStream

HIDDEN = 32


@dataclass
class TrajectoryLog:
    """Sampled (t, x, u) rows of one recorded trajectory; u is held over each interval."""

    traj_id: int
    wind: float
    times: np.ndarray  # [K+1]
    states: np.ndarray  # [K+1, 6]
    controls: np.ndarray  # [K+1, 3]; the final row is the last held input

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if len(self.times) != len(self.states) or len(self.times) != len(self.controls):
            raise ValueError("inconsistent trajectory log lengths")

    @property
    def n_tuples(self) -> int:
        return len(self.times) - 1

    def tuples(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(x_k, u_k, dt_k, x_{k+1}) arrays over all transitions."""
        return (
            self.states[:-1],
            self.controls[:-1],
            np.diff(self.times),
            self.states[1:],
        )


@dataclass
class EnsembleModel:
    """Residual-force network (or fully generic derivative network)."""

    weights: list[np.ndarray]
    residual: bool = True
    feature_cfg: FeatureConfig = field(default_factory=FeatureConfig)

    @property
    def input_weights(self) -> np.ndarray:
        w6 = self.feature_cfg.input_weights()
        if self.residual:
            return w6
        return np.concatenate([w6, np.ones(3)])


@dataclass(frozen=True)
class EnsembleHyper:
    mu_ensem: float = 1e-4
    epochs: int = 1000
    step_size: float = 1e-2
    batch_frac: float = 0.25
    train_frac: float = 0.75
    residual: bool = True


def init_model_weights(rng: RandomStream, residual: bool = True, hidden: int = HIDDEN) -> list[np.ndarray]:
    n_in, n_out = (6, 3) if residual else (9, 6)
    return [
        rng.split("layer0").glorot_uniform(n_in, hidden), np.zeros(hidden),
        rng.split("layer1").glorot_uniform(hidden, hidden), np.zeros(hidden),
        rng.split("layer2").glorot_uniform(hidden, n_out), np.zeros(n_out),
    ]


def _phi_of(q):
    if isinstance(q, np.ndarray):
        return np.ascontiguousarray(q[..., 2])
    return ops.getitem(q, (slice(None), 2))


def _mlp(weights, xn):
    w1, b1, w2, b2, w3, b3 = weights
    h = ops.layer_tanh(xn, w1, b1)
    h = ops.layer_tanh(h, w2, b2)
    return ops.linear(h, w3, b3)


def model_dynamics(model: EnsembleModel, weights=None):
    """Closure (q, qdot, u) -> qddot (residual) or (dq, qddot) (generic).

    `weights` overrides the stored arrays (used to pass tape variables during
    training)."""
    w = model.weights if weights is None else weights
    win = model.input_weights

    if model.residual:
        def deriv(q, qdot, u):
            xn = ops.scale_concat2(q, qdot, win)
            res = _mlp(w, xn)
            thrust = ops.planar_rotate(_phi_of(q), u, transpose=False)
            return ops.add(ops.sub(thrust, GRAVITY), res)
        return deriv

    def deriv(q, qdot, u):
        xn = ops.mul(ops.concat([q, qdot, u], axis=1), win)
        full = _mlp(w, xn)
        return ops.getitem(full, (slice(None), slice(0, 3))), ops.getitem(full, (slice(None), slice(3, 6)))

    return deriv


def model_derivative(model: EnsembleModel, q, qdot, u) -> np.ndarray:
    """Full state derivative [..., 6] predicted by the model."""
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    qdot = np.atleast_2d(np.asarray(qdot, dtype=np.float64))
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    out = model_dynamics(model)(q, qdot, u)
    dq, qddot = out if isinstance(out, tuple) else (qdot, out)
    return np.squeeze(np.concatenate([dq, qddot], axis=1))


def stacked_model_dynamics(models: list[EnsembleModel], task_model_idx: np.ndarray):
    """Batched closure where row b of the state batch uses models[task_model_idx[b]].

    Model weights are constants (they are never differentiated), stacked per
    task so one rollout tape covers the whole task grid.
    """
    if not models:
        raise ValueError("empty ensemble")
    residual = models[0].residual
    win = models[0].input_weights
    idx = np.asarray(task_model_idx, dtype=int)
    stacked = [
        np.ascontiguousarray(np.stack([m.weights[i] for m in models])[idx])
        for i in range(6)
    ]
    w1, b1, w2, b2, w3, b3 = stacked

    def net(xn):
        h = ops.layer_tanh_pb(xn, w1, b1)
        h = ops.layer_tanh_pb(h, w2, b2)
        return ops.linear_pb(h, w3, b3)

    if residual:
        def deriv(q, qdot, u):
            xn = ops.scale_concat2(q, qdot, win)
            thrust = ops.planar_rotate(_phi_of(q), u, transpose=False)
            return ops.add(ops.sub(thrust, GRAVITY), net(xn))
        return deriv

    def deriv(q, qdot, u):
        xn = ops.mul(ops.concat([q, qdot, u], axis=1), win)
        full = net(xn)
        return ops.getitem(full, (slice(None), slice(0, 3))), ops.getitem(full, (slice(None), slice(3, 6)))

    return deriv


def rk4_one_step(deriv, q, qdot, u, h: float):
    """Single RK4 step of the model derivative with u held."""
    def f(q_s, qd_s):
        out = deriv(q_s, qd_s, u)
        return (qd_s, out) if not isinstance(out, tuple) else out

    k1q, k1v = f(q, qdot)
    k2q, k2v = f(ops.axpy(q, k1q, h / 2), ops.axpy(qdot, k1v, h / 2))
    k3q, k3v = f(ops.axpy(q, k2q, h / 2), ops.axpy(qdot, k2v, h / 2))
    k4q, k4v = f(ops.axpy(q, k3q, h), ops.axpy(qdot, k3v, h))
    return ops.rk4_merge(q, k1q, k2q, k3q, k4q, h), ops.rk4_merge(qdot, k1v, k2v, k3v, k4v, h)


def one_step_loss(weights, model: EnsembleModel, x, u, h: float, x_next, mu: float, n_reg: int):
    """Mean squared one-step prediction error plus mu * ||psi||^2 / n_reg."""
    q, qdot = x[:, :3], x[:, 3:]
    deriv = model_dynamics(model, weights=weights)
    qn, qdn = rk4_one_step(deriv, q, qdot, u, h)
    err = ops.add(
        ops.sumsq_tail(ops.sub(qn, np.ascontiguousarray(x_next[:, :3]))),
        ops.sumsq_tail(ops.sub(qdn, np.ascontiguousarray(x_next[:, 3:]))),
    )
    loss = ops.scale(ops.sum_all(err), 1.0 / x.shape[0])
    if mu > 0.0:
        reg = None
        for w in weights:
            t = ops.sum_all(ops.mul(w, w))
            reg = t if reg is None else ops.add(reg, t)
        loss = ops.add(loss, ops.scale(reg, mu / n_reg))
    return loss


def _uniform_dt(dt: np.ndarray) -> float:
    h = float(dt[0])
    if np.abs(dt - h).max() > 1e-9:
        raise ValueError("one-step training expects uniformly sampled tuples")
    return h


def validation_loss(model: EnsembleModel, weights, x, u, dt, x_next) -> float:
    h = _uniform_dt(dt)
    loss = one_step_loss(weights, model, x, u, h, x_next, mu=0.0, n_reg=1)
    return float(loss)


def train_model(
    log: TrajectoryLog,
    rng: RandomStream,
    hyper: EnsembleHyper = EnsembleHyper(),
    feature_cfg: FeatureConfig | None = None,
) -> tuple[EnsembleModel, np.ndarray]:
    """Fit one model to one trajectory; returns (model, curve).

    curve rows: (epoch, train loss of last batch, validation loss).
    """
    if log.n_tuples < 8:
        raise ValueError(f"trajectory {log.traj_id}: need at least 8 tuples, have {log.n_tuples}")
    feature_cfg = feature_cfg or FeatureConfig()
    x, u, dt, x_next = log.tuples()
    h = _uniform_dt(dt)
    n = log.n_tuples

    perm = rng.split("split").permutation(n)
    n_train = int(np.floor(hyper.train_frac * n))
    train_idx, valid_idx = perm[:n_train], perm[n_train:]
    batch = max(1, int(np.floor(hyper.batch_frac * n_train)))

    weights = init_model_weights(rng.split("init"), residual=hyper.residual)
    model = EnsembleModel(weights=weights, residual=hyper.residual, feature_cfg=feature_cfg)
    state = AdamState.zeros_like(weights)

    xv, uv, dtv, xnv = x[valid_idx], u[valid_idx], dt[valid_idx], x_next[valid_idx]
    best_val = validation_loss(model, weights, xv, uv, dtv, xnv)
    best_weights = [w.copy() for w in weights]
    curve = [(0, np.nan, best_val)]

    step = 0
    for epoch in range(1, hyper.epochs + 1):
        order = rng.split(f"epoch/{epoch}").permutation(n_train)
        train_loss = np.nan
        for lo in range(0, n_train, batch):
            sel = train_idx[order[lo:lo + batch]]
            tape = Tape(check_finite=True)
            w_vars = [tape.add_input(w) for w in weights]
            loss = one_step_loss(w_vars, model, x[sel], u[sel], h, x_next[sel],
                                 mu=hyper.mu_ensem, n_reg=n_train)
            tape.mark_output(loss)
            grads = gradient(tape)
            step += 1
            weights, state = adam_step(weights, grads, state, hyper.step_size, step)
            train_loss = float(loss.value)
        val = validation_loss(model, weights, xv, uv, dtv, xnv)
        if val < best_val:
            best_val = val
            best_weights = [w.copy() for w in weights]
        curve.append((epoch, train_loss, val))

    return (
        EnsembleModel(weights=best_weights, residual=hyper.residual, feature_cfg=feature_cfg),
        np.array(curve),
    )


def train_ensemble(
    logs: list[TrajectoryLog],
    rng: RandomStream,
    hyper: EnsembleHyper = EnsembleHyper(),
    feature_cfg: FeatureConfig | None = None,
    threads: int = 1,
) -> tuple[list[EnsembleModel], list[np.ndarray]]:
    """One model per trajectory; per-model streams come from the trajectory id,
    so permuting `logs` permutes the models identically."""
    if not logs:
        raise ValueError("no trajectories to fit")

    def job(log: TrajectoryLog):
        try:
            return train_model(log, rng.split(f"model/{log.traj_id}"), hyper, feature_cfg)
        except Exception as exc:
            raise RuntimeError(f"training failed for trajectory {log.traj_id}") from exc

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, logs))
    else:
        results = [job(log) for log in logs]
    return [m for m, _ in results], [c for _, c in results]
