"""Reverse-mode automatic differentiation on a flat tape of numpy arrays.

Values are 64-bit float ndarrays throughout.  A `Tape` is a topologically
ordered list of nodes; each node stores the primitive name, the indices of its
input nodes, any static attributes, and the forward value.  Recording is
eager: op functions (see `ops.py`) compute the value immediately and append a
node when any argument is a `Var`.  With plain ndarray arguments the same op
functions are ordinary numpy code, so one implementation serves both the
differentiable path and fast undifferentiated evaluation.

Tapes are single-threaded objects; independent tapes may be built and
differentiated concurrently.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class AutodiffError(Exception):
    """Base class for recording/differentiation failures."""


class UnsupportedPrimitiveError(AutodiffError):
    def __init__(self, name: str):
        super().__init__(f"unsupported primitive: {name!r}")
        self.primitive = name


class NonFiniteError(AutodiffError):
    """NaN/Inf surfaced during recording or the backward pass."""

    def __init__(self, message: str, node_index: int | None = None, op: str | None = None):
        super().__init__(message)
        self.node_index = node_index
        self.op = op


def as_tensor(x, check_finite: bool = True) -> np.ndarray:
    """Coerce to a float64 ndarray, optionally rejecting non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if check_finite and not np.isfinite(arr).all():
        raise NonFiniteError("non-finite entries in tensor")
    return arr


class Node:
    __slots__ = ("op", "inputs", "attrs", "value")

    def __init__(self, op: str, inputs: tuple[int, ...], attrs: dict | None, value: np.ndarray):
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.value = value


class Var:
    """Handle to one tape node; supports numpy-style operator sugar."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.idx].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Var(idx={self.idx}, shape={self.shape})"

    # Arithmetic operators are attached by ops.py to avoid a circular import.


class Tape:
    """Ordered record of primitive applications, replayable and differentiable."""

    def __init__(self, check_finite: bool = True):
        self.nodes: list[Node] = []
        self.input_ids: list[int] = []
        self.output_ids: list[int] = []
        self.check_finite = check_finite
        self._const_cache: dict[int, tuple] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, node: Node) -> Var:
        self.nodes.append(node)
        return Var(self, len(self.nodes) - 1)

    def add_input(self, value) -> Var:
        var = self._append(Node("input", (), None, as_tensor(value, self.check_finite)))
        self.input_ids.append(var.idx)
        return var

    def add_const(self, value) -> Var:
        # constants reappear every integrator stage (gravity, reference rows,
        # frozen model weights); dedupe by object identity
        key = id(value)
        hit = self._const_cache.get(key)
        if hit is not None and hit[0] is value:
            return Var(self, hit[1])
        var = self._append(Node("const", (), None, as_tensor(value, self.check_finite)))
        self._const_cache[key] = (value, var.idx)
        return var

    def add_op(self, op: str, inputs: tuple[int, ...], attrs: dict | None, value: np.ndarray) -> Var:
        if self.check_finite and not np.isfinite(value).all():
            raise NonFiniteError(
                f"non-finite value produced by {op!r} at node {len(self.nodes)}",
                node_index=len(self.nodes),
                op=op,
            )
        return self._append(Node(op, inputs, attrs, value))

    def mark_output(self, var: Var) -> None:
        if var.tape is not self:
            raise AutodiffError("output belongs to a different tape")
        self.output_ids.append(var.idx)

    @property
    def outputs(self) -> list[np.ndarray]:
        return [self.nodes[i].value for i in self.output_ids]

    @property
    def inputs(self) -> list[np.ndarray]:
        return [self.nodes[i].value for i in self.input_ids]


def record(
    f: Callable,
    inputs: Sequence[np.ndarray],
    check_finite: bool = True,
) -> tuple[list[np.ndarray], Tape]:
    """Evaluate `f` on tracer variables, returning its outputs and the tape.

    `f` must be composed of the primitives exposed in `ops.py`; anything else
    raises `UnsupportedPrimitiveError`.  Outputs equal eager evaluation of `f`.
    """
    tape = Tape(check_finite=check_finite)
    in_vars = [tape.add_input(x) for x in inputs]
    out = f(*in_vars)
    out_seq = out if isinstance(out, (tuple, list)) else (out,)
    for o in out_seq:
        if not isinstance(o, Var):
            # Constant output (no dependence on inputs); keep it on the tape.
            o = tape.add_const(o)
        tape.mark_output(o)
    return tape.outputs, tape


def replay(tape: Tape, inputs: Sequence[np.ndarray] | None = None) -> list[np.ndarray]:
    """Re-execute the tape front to back; with `inputs=None` this must
    reproduce the recorded forward values bit-exactly."""
    from . import ops  # late import; ops registers the primitive table

    values: list[np.ndarray] = [None] * len(tape.nodes)  # type: ignore[list-item]
    if inputs is not None and len(inputs) != len(tape.input_ids):
        raise AutodiffError(f"expected {len(tape.input_ids)} inputs, got {len(inputs)}")
    input_pos = {idx: k for k, idx in enumerate(tape.input_ids)}
    for i, node in enumerate(tape.nodes):
        if node.op == "input":
            values[i] = as_tensor(inputs[input_pos[i]]) if inputs is not None else node.value
        elif node.op == "const":
            values[i] = node.value
        else:
            opdef = ops.OPS.get(node.op)
            if opdef is None:
                raise UnsupportedPrimitiveError(node.op)
            values[i] = opdef.forward(*(values[j] for j in node.inputs), **(node.attrs or {}))
    return [values[i] for i in tape.output_ids]


def forward_inplace(tape: Tape, inputs: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Re-execute the tape with new input values, refreshing every node value.

    Unlike `replay` this updates the stored forward values, so a subsequent
    `gradient` call differentiates at the new point.  The tape's structure
    (including any constants captured at trace time) is reused as-is.
    """
    from . import ops

    if len(inputs) != len(tape.input_ids):
        raise AutodiffError(f"expected {len(tape.input_ids)} inputs, got {len(inputs)}")
    input_pos = {idx: k for k, idx in enumerate(tape.input_ids)}
    nodes = tape.nodes
    table = ops.OPS
    for i, node in enumerate(nodes):
        op = node.op
        if op == "const":
            continue
        if op == "input":
            node.value = as_tensor(inputs[input_pos[i]], check_finite=False)
            continue
        attrs = node.attrs
        fn = table[op].forward
        vals = tuple(nodes[j].value for j in node.inputs)
        node.value = fn(*vals, **attrs) if attrs else fn(*vals)
    return tape.outputs


def gradient(
    tape: Tape,
    seed: np.ndarray | Sequence[np.ndarray] | None = None,
    check_finite: bool = True,
) -> list[np.ndarray]:
    """Vector-Jacobian product through the tape: one cotangent per input.

    `seed` matches the tape outputs (a single array for a single output);
    scalar outputs default to a seed of 1.0.
    """
    from . import ops

    if not tape.output_ids:
        raise AutodiffError("tape has no marked outputs")
    if seed is None:
        seeds = []
        for i in tape.output_ids:
            val = tape.nodes[i].value
            if val.size != 1:
                raise AutodiffError("non-scalar output requires an explicit seed")
            seeds.append(np.ones_like(val))
    else:
        seed_seq = seed if isinstance(seed, (tuple, list)) else (seed,)
        if len(seed_seq) != len(tape.output_ids):
            raise AutodiffError(f"expected {len(tape.output_ids)} seeds, got {len(seed_seq)}")
        seeds = []
        for s, i in zip(seed_seq, tape.output_ids):
            s = as_tensor(s, check_finite=False)
            if s.shape != tape.nodes[i].value.shape:
                raise AutodiffError(f"seed shape {s.shape} does not match output shape {tape.nodes[i].value.shape}")
            seeds.append(s)

    cot: list[np.ndarray | None] = [None] * len(tape.nodes)
    for s, i in zip(seeds, tape.output_ids):
        cot[i] = s if cot[i] is None else cot[i] + s

    nodes = tape.nodes
    for i in range(len(nodes) - 1, -1, -1):
        g = cot[i]
        if g is None:
            continue
        node = nodes[i]
        if node.op in ("input", "const"):
            continue
        opdef = ops.OPS.get(node.op)
        if opdef is None:
            raise UnsupportedPrimitiveError(node.op)
        in_vals = tuple(nodes[j].value for j in node.inputs)
        partials = opdef.vjp(g, node.value, in_vals, node.attrs or {})
        for j, gj in zip(node.inputs, partials):
            if gj is None or nodes[j].op == "const":
                continue
            if check_finite and not np.isfinite(gj).all():
                raise NonFiniteError(
                    f"non-finite cotangent flowing into node {j} from {node.op!r} at node {i}",
                    node_index=i,
                    op=node.op,
                )
            cot[j] = gj if cot[j] is None else cot[j] + gj
        cot[i] = None  # free as soon as consumed

    out: list[np.ndarray] = []
    for i in tape.input_ids:
        gi = cot[i]
        out.append(np.zeros_like(nodes[i].value) if gi is None else gi)
    return out
