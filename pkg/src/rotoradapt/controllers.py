"""Tracking controllers: neural-feature adaptive law, PID, and the PD collector.

All control laws are pure functions of (state, reference point, parameters,
adapted state) built from autodiff ops, so the same code runs as plain numpy
during plant evaluation and as taped operations during meta-training.  States
are batched [B, 3]; the adapted state is owned by the rollout that integrates
it.

The adaptive controller follows the classic sliding-variable design for
fully-actuated mechanical systems, specialized to the rotorcraft (inertia
identity, no Coriolis, constant gravity, input map R(phi)):

    e = q - q_d,  s = edot + Lam e,  vdot = qddot_d - Lam edot
    u = R(phi)^T (vdot + g_vec - A y(q, qdot) - K s)
    Adot = Gam s y(q, qdot)^T

with positive-definite gains (Lam, K, Gam) reconstructed from unconstrained
log-Cholesky parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ops
from .dynamics import GRAVITY
from .prng import RandomStream

HIDDEN_WIDTH = 32
N_COORDS = 3


@dataclass(frozen=True)
class FeatureConfig:
    """Feature-network input normalization (fixed scales, optional)."""

    normalize: bool = True
    pos_scale: float = 10.0
    ang_scale: float = float(np.pi)
    vel_scale: float = 5.0

    def input_weights(self) -> np.ndarray:
        if not self.normalize:
            return np.ones(6)
        return 1.0 / np.array(
            [self.pos_scale, self.pos_scale, self.ang_scale,
             self.vel_scale, self.vel_scale, self.vel_scale]
        )


def init_feature_weights(rng: RandomStream, hidden: int = HIDDEN_WIDTH) -> list[np.ndarray]:
    """Glorot-uniform weights, zero biases: 6 -> hidden -> hidden, all tanh."""
    w1 = rng.split("layer0").glorot_uniform(6, hidden)
    w2 = rng.split("layer1").glorot_uniform(hidden, hidden)
    return [w1, np.zeros(hidden), w2, np.zeros(hidden)]


def feature_fn(weights: list, cfg: FeatureConfig):
    """Closure (q, qdot) -> y [B, hidden]; works on arrays or tape Vars."""
    w_in = cfg.input_weights()
    w1, b1, w2, b2 = weights

    def features(q, qdot):
        xn = ops.scale_concat2(q, qdot, w_in)
        h = ops.layer_tanh(xn, w1, b1)
        return ops.layer_tanh(h, w2, b2)

    return features


def constant_features(q, qdot):
    """y == 1 (single constant feature); reduces the adaptive law to PID form."""
    phi = q[..., 2] if isinstance(q, np.ndarray) else ops.getitem(q, (slice(None), 2))
    return ops.reshape(phi * 0.0 + 1.0, (-1, 1))


@dataclass
class GainParams:
    """Unconstrained log-Cholesky encodings of (Lam, K, Gam), 6 reals each."""

    lam: np.ndarray = field(default_factory=lambda: np.zeros(6))
    k: np.ndarray = field(default_factory=lambda: np.zeros(6))
    gam: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def as_list(self) -> list[np.ndarray]:
        return [self.lam, self.k, self.gam]


def gains_from_log_cholesky(params: GainParams):
    """(Lam, K, Gam) as positive-definite 3x3 matrices; differentiable."""
    return (ops.logchol3(params.lam), ops.logchol3(params.k), ops.logchol3(params.gam))


def log_cholesky_of_scaled_identity(c: float) -> np.ndarray:
    """Parameters reconstructing c*I (c > 0)."""
    p = np.zeros(6)
    p[:3] = 0.5 * np.log(c)
    return p


def tracking_signals(q, qdot, qd, qdot_d, qddot_d, lam):
    """(e, edot, s, v, vdot) for gain matrix lam."""
    e = ops.sub(q, qd)
    edot = ops.sub(qdot, qdot_d)
    e_lam = ops.matrt(e, lam)
    s = ops.add(edot, e_lam)
    v = ops.sub(qdot_d, e_lam)
    vdot = ops.sub(qddot_d, ops.matrt(edot, lam))
    return e, edot, s, v, vdot


def _phi_of(q):
    if isinstance(q, np.ndarray):
        return np.ascontiguousarray(q[..., 2])
    return ops.getitem(q, (slice(None), 2))


class BoundAdaptive:
    """Adaptive controller with features and gain matrices already in place."""

    def __init__(self, features, lam, k, gam, n_features: int):
        self.features = features
        self.lam = lam
        self.k = k
        self.gam = gam
        self.adapted_shape = (N_COORDS, n_features)

    def stage(self, q, qdot, refd, adapted):
        """One control/adaptation evaluation.

        refd is the tuple (q_d, qdot_d, qddot_d) at the current time; adapted
        is the output-layer matrix A [B, 3, p].  Returns (u, dA, e, edot).
        """
        qd, qdot_d, qddot_d = refd
        e, edot, s, _v, vdot = tracking_signals(q, qdot, qd, qdot_d, qddot_d, self.lam)
        y = self.features(q, qdot)
        pre = ops.sub(ops.add(vdot, GRAVITY), ops.add(ops.apply_A(adapted, y), ops.matrt(s, self.k)))
        u = ops.planar_rotate(_phi_of(q), pre, transpose=True)
        d_adapted = ops.outer(ops.matrt(s, self.gam), y)
        return u, d_adapted, e, edot


class BoundPid:
    """PID with feed-forward; the adapted state is the error integral."""

    def __init__(self, kp, ki, kd):
        self.kp = kp
        self.ki = ki
        self.kd = kd
        self.adapted_shape = (N_COORDS,)

    def stage(self, q, qdot, refd, adapted):
        qd, qdot_d, qddot_d = refd
        e = ops.sub(q, qd)
        edot = ops.sub(qdot, qdot_d)
        fb = ops.add(ops.add(ops.matrt(e, self.kp), ops.matrt(adapted, self.ki)), ops.matrt(edot, self.kd))
        pre = ops.sub(ops.add(qddot_d, GRAVITY), fb)
        u = ops.planar_rotate(_phi_of(q), pre, transpose=True)
        return u, e, e, edot


class BoundPdCollect:
    """Scalar-gain PD law used to gather training data (no feed-forward)."""

    def __init__(self, kp: float = 10.0, kd: float = 0.1):
        if not (kp > 0 and kd > 0):
            raise ValueError("PD gains must be positive")
        self.kp = kp
        self.kd = kd
        self.adapted_shape = (0,)

    def stage(self, q, qdot, refd, adapted):
        qd, qdot_d, _ = refd
        e = ops.sub(q, qd)
        edot = ops.sub(qdot, qdot_d)
        pre = ops.sub(GRAVITY, ops.add(ops.scale(e, self.kp), ops.scale(edot, self.kd)))
        u = ops.planar_rotate(_phi_of(q), pre, transpose=True)
        dA = adapted  # zero-width state; derivative unused
        return u, dA, e, edot


def adaptive_control(q, qdot, refd, adapted, features, lam, k):
    """Control input of the adaptive law (standalone form)."""
    qd, qdot_d, qddot_d = refd
    _e, _edot, s, _v, vdot = tracking_signals(q, qdot, qd, qdot_d, qddot_d, lam)
    y = features(q, qdot)
    pre = ops.sub(ops.add(vdot, GRAVITY), ops.add(ops.apply_A(adapted, y), ops.matrt(s, k)))
    return ops.planar_rotate(_phi_of(q), pre, transpose=True)


def adaptation_law(q, qdot, refd, features, gam, lam):
    """Adapted-parameter derivative Adot = Gam s y^T."""
    qd, qdot_d, qddot_d = refd
    _e, _edot, s, _v, _vdot = tracking_signals(q, qdot, qd, qdot_d, qddot_d, lam)
    return ops.outer(ops.matrt(s, gam), features(q, qdot))


def pid_control(q, qdot, refd, integral, kp, ki, kd):
    return BoundPid(kp, ki, kd).stage(q, qdot, refd, integral)[0]


def pd_collect_control(q, qdot, refd, kp: float = 10.0, kd: float = 0.1):
    B = q.shape[0]
    return BoundPdCollect(kp, kd).stage(q, qdot, refd, np.zeros((B, 0)))[0]


def pid_gains_from_adaptive(lam: np.ndarray, k: np.ndarray, gam: np.ndarray):
    """The gain mapping making PID match the adaptive law with constant features."""
    return k @ lam + gam, gam @ lam, k + lam
