"""Primitive operations: eager numpy when given ndarrays, taped when given Vars.

Each primitive registers a forward function and a VJP.  The fused kernels
(`layer_tanh`, `planar_rotate`, ...) dispatch through the selected backend
(compiled extension or numpy fallback); everything else is plain numpy in both
cases.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from .backends import kernels as K
from .tape import Tape, UnsupportedPrimitiveError, Var


class OpDef(NamedTuple):
    forward: Callable
    vjp: Callable  # (g, out, in_vals, attrs) -> tuple of cotangents


OPS: dict[str, OpDef] = {}


def defop(name: str, forward: Callable, vjp: Callable) -> None:
    OPS[name] = OpDef(forward, vjp)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast cotangent back to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _apply(name: str, args: tuple, attrs: dict | None = None):
    """Dispatch: eager numpy if no Var argument, else record on the tape."""
    opdef = OPS.get(name)
    if opdef is None:
        raise UnsupportedPrimitiveError(name)
    tape: Tape | None = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ValueError("cannot mix variables from different tapes")
    kw = attrs or {}
    if tape is None:
        vals = tuple(np.asarray(a, dtype=np.float64) for a in args)
        return opdef.forward(*vals, **kw)
    in_ids = []
    vals = []
    for a in args:
        if isinstance(a, Var):
            in_ids.append(a.idx)
            vals.append(a.value)
        else:
            cv = tape.add_const(a)
            in_ids.append(cv.idx)
            vals.append(cv.value)
    out = opdef.forward(*vals, **kw)
    return tape.add_op(name, tuple(in_ids), attrs, out)


# ---------------------------------------------------------------------------
# elementwise arithmetic

defop("add", lambda a, b: a + b,
      lambda g, out, v, at: (_unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape)))
defop("sub", lambda a, b: a - b,
      lambda g, out, v, at: (_unbroadcast(g, v[0].shape), _unbroadcast(-g, v[1].shape)))
defop("mul", lambda a, b: a * b,
      lambda g, out, v, at: (_unbroadcast(g * v[1], v[0].shape), _unbroadcast(g * v[0], v[1].shape)))
defop("neg", lambda a: -a, lambda g, out, v, at: (-g,))
defop("scale", lambda a, c: c * a, lambda g, out, v, at: (at["c"] * g,))
defop("shift", lambda a, c: a + c, lambda g, out, v, at: (g,))

defop("tanh", np.tanh, lambda g, out, v, at: (g * (1.0 - out * out),))
defop("exp", np.exp, lambda g, out, v, at: (g * out,))
defop("sin", np.sin, lambda g, out, v, at: (g * np.cos(v[0]),))
defop("cos", np.cos, lambda g, out, v, at: (-g * np.sin(v[0]),))
defop("power", lambda a, p: a ** p,
      lambda g, out, v, at: (g * at["p"] * v[0] ** (at["p"] - 1),))
defop("abs", np.abs, lambda g, out, v, at: (g * np.sign(v[0]),))


# ---------------------------------------------------------------------------
# shape and reduction

defop("sum", lambda a: np.sum(a),
      lambda g, out, v, at: (np.broadcast_to(g, v[0].shape).copy(),))
defop("sum_axis", lambda a, axis: np.sum(a, axis=axis),
      lambda g, out, v, at: (np.broadcast_to(np.expand_dims(g, at["axis"]), v[0].shape).copy(),))
defop("reshape", lambda a, shape: a.reshape(shape),
      lambda g, out, v, at: (g.reshape(v[0].shape),))
defop("transpose", lambda a: a.T, lambda g, out, v, at: (g.T,))


def _getitem_vjp(g, out, v, at):
    buf = np.zeros_like(v[0])
    buf[at["key"]] = g
    return (buf,)


defop("getitem", lambda a, key: np.ascontiguousarray(a[key]), _getitem_vjp)


def _concat_vjp(g, out, v, at):
    axis = at["axis"]
    sizes = [x.shape[axis] for x in v]
    splits = np.cumsum(sizes)[:-1]
    return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))


defop("concat", lambda *xs, axis: np.concatenate(xs, axis=axis), _concat_vjp)


# ---------------------------------------------------------------------------
# linear algebra

defop("matmul", lambda a, b: a @ b,
      lambda g, out, v, at: (g @ v[1].T, v[0].T @ g))


def _solve_vjp(g, out, v, at):
    A, _b = v
    gb = np.linalg.solve(A.T, g)
    if out.ndim == 1:
        gA = -np.outer(gb, out)
    else:
        gA = -gb @ out.T
    return gA, gb


defop("solve", lambda A, b: np.linalg.solve(A, b), _solve_vjp)


def _logchol3_fwd(p):
    L = np.zeros((3, 3))
    L[0, 0] = np.exp(p[0])
    L[1, 1] = np.exp(p[1])
    L[2, 2] = np.exp(p[2])
    L[1, 0] = p[3]
    L[2, 0] = p[4]
    L[2, 1] = p[5]
    return L @ L.T


def _logchol3_vjp(g, out, v, at):
    p = v[0]
    L = np.zeros((3, 3))
    d = np.exp(p[:3])
    L[0, 0], L[1, 1], L[2, 2] = d
    L[1, 0], L[2, 0], L[2, 1] = p[3], p[4], p[5]
    gL = (g + g.T) @ L
    gp = np.empty(6)
    gp[0] = gL[0, 0] * d[0]
    gp[1] = gL[1, 1] * d[1]
    gp[2] = gL[2, 2] * d[2]
    gp[3] = gL[1, 0]
    gp[4] = gL[2, 0]
    gp[5] = gL[2, 1]
    return (gp,)


defop("logchol3", _logchol3_fwd, _logchol3_vjp)


# ---------------------------------------------------------------------------
# fused rollout kernels (backend-dispatched)

defop("layer_tanh", lambda x, W, b: K.layer_tanh_fwd(x, W, b),
      lambda g, out, v, at: K.layer_tanh_bwd(v[0], v[1], out, g))
defop("linear", lambda x, W, b: K.linear_fwd(x, W, b),
      lambda g, out, v, at: K.linear_bwd(v[0], v[1], g))
defop("matrt", lambda x, M: K.matrt_fwd(x, M),
      lambda g, out, v, at: K.matrt_bwd(v[0], v[1], g))
defop("planar_rotate", lambda phi, x, transpose: K.planar_rotate_fwd(phi, x, transpose),
      lambda g, out, v, at: K.planar_rotate_bwd(v[0], v[1], at["transpose"], g))
defop("apply_A", lambda A, y: K.apply_A_fwd(A, y),
      lambda g, out, v, at: K.apply_A_bwd(v[0], v[1], g))
defop("outer", lambda a, b: K.outer_fwd(a, b),
      lambda g, out, v, at: K.outer_bwd(v[0], v[1], g))
defop("scale_concat2", lambda a, b, w: K.scale_concat2_fwd(a, b, w),
      lambda g, out, v, at: K.scale_concat2_bwd(at["w"], g, v[0].shape[1]))
defop("sumsq_tail", lambda x: K.sumsq_tail_fwd(x),
      lambda g, out, v, at: (K.sumsq_tail_bwd(v[0], g),))
defop("axpy", lambda x, k, c: K.axpy_fwd(x, k, c),
      lambda g, out, v, at: (g, at["c"] * g))
defop("rk4_merge", lambda x, k1, k2, k3, k4, h: K.rk4_merge_fwd(x, k1, k2, k3, k4, h),
      lambda g, out, v, at: (g, (at["h"] / 6.0) * g, (at["h"] / 3.0) * g,
                             (at["h"] / 3.0) * g, (at["h"] / 6.0) * g))
# per-row-weight MLP layers for frozen ensemble nets: no weight cotangents
defop("layer_tanh_pb", lambda x, W, b: K.layer_tanh_pb_fwd(x, W, b),
      lambda g, out, v, at: (K.layer_tanh_pb_bwd_x(v[1], out, g), None, None))
defop("linear_pb", lambda x, W, b: K.linear_pb_fwd(x, W, b),
      lambda g, out, v, at: (K.linear_pb_bwd_x(v[1], g), None, None))


# ---------------------------------------------------------------------------
# public op functions

def add(a, b):
    return _apply("add", (a, b))


def sub(a, b):
    return _apply("sub", (a, b))


def mul(a, b):
    return _apply("mul", (a, b))


def neg(a):
    return _apply("neg", (a,))


def scale(a, c: float):
    """c * a for a static scalar c (kept off the tape as an attribute)."""
    return _apply("scale", (a,), {"c": float(c)})


def shift(a, c: float):
    return _apply("shift", (a,), {"c": float(c)})


def tanh(a):
    return _apply("tanh", (a,))


def exp(a):
    return _apply("exp", (a,))


def sin(a):
    return _apply("sin", (a,))


def cos(a):
    return _apply("cos", (a,))


def power(a, p: float):
    return _apply("power", (a,), {"p": float(p)})


def absval(a):
    return _apply("abs", (a,))


def sum_all(a):
    return _apply("sum", (a,))


def sum_axis(a, axis: int):
    return _apply("sum_axis", (a,), {"axis": int(axis)})


def reshape(a, shape):
    return _apply("reshape", (a,), {"shape": tuple(int(s) for s in shape)})


def transpose(a):
    return _apply("transpose", (a,))


def getitem(a, key):
    return _apply("getitem", (a,), {"key": key})


def concat(parts, axis: int = 0):
    return _apply("concat", tuple(parts), {"axis": int(axis)})


def matmul(a, b):
    return _apply("matmul", (a, b))


def solve(A, b):
    """Solution of A x = b; differentiable w.r.t. both arguments."""
    return _apply("solve", (A, b))


def logchol3(params):
    """Positive-definite 3x3 matrix from a 6-vector log-Cholesky encoding."""
    return _apply("logchol3", (params,))


def layer_tanh(x, W, b):
    """tanh(x @ W + b), fused."""
    return _apply("layer_tanh", (x, W, b))


def linear(x, W, b):
    return _apply("linear", (x, W, b))


def matrt(x, M):
    """x @ M.T for a small gain matrix M (row-vector convention)."""
    return _apply("matrt", (x, M))


def planar_rotate(phi, x, transpose: bool = False):
    """Apply the planar rotation R(phi) (or its transpose) to rows of x [B,3]."""
    return _apply("planar_rotate", (phi, x), {"transpose": bool(transpose)})


def apply_A(A, y):
    """Batched output layer: A [B,n,p] times features y [B,p]."""
    return _apply("apply_A", (A, y))


def outer(a, b):
    """Batched outer product a [B,n] x b [B,p] -> [B,n,p]."""
    return _apply("outer", (a, b))


def scale_concat2(a, b, w):
    """concat([a, b], axis=1) * w for a static weight row w."""
    return _apply("scale_concat2", (a, b), {"w": np.asarray(w, dtype=np.float64)})


def sumsq_tail(x):
    """Row-wise sum of squares over all trailing axes: [B,...] -> [B]."""
    return _apply("sumsq_tail", (x,))


def axpy(x, k, c: float):
    """x + c * k, fused."""
    return _apply("axpy", (x, k), {"c": float(c)})


def rk4_merge(x, k1, k2, k3, k4, h: float):
    """x + (h/6)(k1 + 2 k2 + 2 k3 + k4), fused."""
    return _apply("rk4_merge", (x, k1, k2, k3, k4), {"h": float(h)})


def layer_tanh_pb(x, W, b):
    """tanh layer with per-row weights W [B,n,m]; W and b are not differentiated."""
    return _apply("layer_tanh_pb", (x, W, b))


def linear_pb(x, W, b):
    """Linear layer with per-row weights; W and b are not differentiated."""
    return _apply("linear_pb", (x, W, b))


# ---------------------------------------------------------------------------
# operator sugar on Var

def _var_add(self, other):
    if isinstance(other, (int, float)):
        return shift(self, other)
    return add(self, other)


def _var_sub(self, other):
    if isinstance(other, (int, float)):
        return shift(self, -other)
    return sub(self, other)


def _var_rsub(self, other):
    return sub(other, self)


def _var_mul(self, other):
    if isinstance(other, (int, float)):
        return scale(self, other)
    return mul(self, other)


def _var_truediv(self, other):
    if isinstance(other, (int, float)):
        return scale(self, 1.0 / other)
    raise TypeError("Var division is only supported by a static scalar")


Var.__add__ = _var_add
Var.__radd__ = _var_add
Var.__sub__ = _var_sub
Var.__rsub__ = _var_rsub
Var.__mul__ = _var_mul
Var.__rmul__ = _var_mul
Var.__truediv__ = _var_truediv
Var.__neg__ = neg
Var.__matmul__ = matmul
Var.__pow__ = power
Var.__getitem__ = getitem
