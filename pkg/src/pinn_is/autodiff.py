"""Tape-based automatic differentiation for PINN losses.

Every node holds a float64 array whose leading axis (when present) indexes
independent collocation points. Nothing couples rows except reductions
(``sum``), so input partials are per-point partials.

Input derivatives are built *into* the tape by forward-mode tangent
construction (:func:`input_partial`), which means a residual containing
``d2u/dx2`` is an ordinary node that :func:`grad_parameters` can sweep
backwards through exactly.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np


class DimensionError(ValueError):
    """Input or parameter values do not match the tape arity or shapes."""


class ContractError(ValueError):
    """A caller violated an operation precondition."""


class UnsupportedError(NotImplementedError):
    """Requested a capability the engine deliberately does not provide."""


_LEAF_OPS = ("constant", "input", "parameter")


class Node:
    __slots__ = ("tape", "id", "op", "args", "attr", "value")

    def __init__(self, tape, id_, op, args, attr, value):
        self.tape = tape
        self.id = id_
        self.op = op
        self.args = args
        self.attr = attr
        self.value = value

    def __repr__(self):
        shape = np.shape(self.value)
        return f"Node({self.id}, {self.op}, shape={shape})"

    @property
    def shape(self):
        return np.shape(self.value)

    def _wrap(self, other):
        if isinstance(other, Node):
            return other
        return self.tape.const(other)

    def __add__(self, other):
        return self.tape.apply("add", self, self._wrap(other))

    def __radd__(self, other):
        return self.tape.apply("add", self._wrap(other), self)

    def __sub__(self, other):
        return self.tape.apply("sub", self, self._wrap(other))

    def __rsub__(self, other):
        return self.tape.apply("sub", self._wrap(other), self)

    def __mul__(self, other):
        return self.tape.apply("mul", self, self._wrap(other))

    def __rmul__(self, other):
        return self.tape.apply("mul", self._wrap(other), self)

    def __truediv__(self, other):
        return self.tape.apply("div", self, self._wrap(other))

    def __rtruediv__(self, other):
        return self.tape.apply("div", self._wrap(other), self)

    def __neg__(self):
        return self.tape.apply("neg", self)

    def __pow__(self, p):
        if isinstance(p, Node):
            raise UnsupportedError("only constant exponents are supported")
        return self.tape.apply("pow", self, attr=float(p))

    def __matmul__(self, other):
        return self.tape.apply("matmul", self, self._wrap(other))


# ---------------------------------------------------------------- forward rules


def _sigmoid(a):
    # split by sign so exp never overflows
    out = np.empty_like(a, dtype=float)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def _sigmoid_any(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return _sigmoid(a.reshape(1))[0]
    return _sigmoid(a)


def _hstack(*vals):
    return np.concatenate(vals, axis=-1)


_FORWARD = {
    "add": lambda a, b, attr: a + b,
    "sub": lambda a, b, attr: a - b,
    "mul": lambda a, b, attr: a * b,
    "div": lambda a, b, attr: a / b,
    "neg": lambda a, attr: -a,
    "pow": lambda a, attr: a**attr,
    "sin": lambda a, attr: np.sin(a),
    "cos": lambda a, attr: np.cos(a),
    "exp": lambda a, attr: np.exp(a),
    "tanh": lambda a, attr: np.tanh(a),
    "sigmoid": lambda a, attr: _sigmoid_any(a),
    "swish": lambda a, attr: a * _sigmoid_any(a),
    "relu": lambda a, attr: np.maximum(a, 0.0),
    "step": lambda a, attr: (np.asarray(a) > 0).astype(float),
    "matmul": lambda a, b, attr: a @ b,
    "affine": lambda h, w, b, attr: h @ w + b,
    "hstack": lambda *vals: _hstack(*vals[:-1]),
    "col": lambda a, attr: a[..., attr : attr + 1],
    "sum": lambda a, attr: np.sum(a),
    "ones_like": lambda a, attr: np.ones_like(a, dtype=float),
    "zeros_like": lambda a, attr: np.zeros_like(a, dtype=float),
}


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _unbroadcast_rows(full, shape):
    """Reduce a per-point array ``full`` (leading axis B) to ``(B,) + shape``."""
    rows = full.shape[0]
    if len(shape) == full.ndim:
        if shape[0] != 1:
            raise ContractError("per-sample gradient needs a point axis")
        full = full.reshape((rows, 1) + full.shape[1:])
    else:
        lead = full.ndim - 1 - len(shape)
        if lead:
            full = full.sum(axis=tuple(range(1, 1 + lead)))
    axes = tuple(1 + i for i, n in enumerate(shape) if n == 1 and full.shape[1 + i] != 1)
    if axes:
        full = full.sum(axis=axes, keepdims=True)
    return full.reshape((rows,) + tuple(shape))


# ------------------------------------------------------------------ VJP rules
# Each rule returns one adjoint (or None) per argument, already unbroadcast.


def _vjp_add(g, vals, out, attr):
    return g, g


def _vjp_sub(g, vals, out, attr):
    return g, -g


def _vjp_mul(g, vals, out, attr):
    a, b = vals
    return g * b, g * a


def _vjp_div(g, vals, out, attr):
    a, b = vals
    ga = g / b
    return ga, -ga * out


_VJP = {
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "div": _vjp_div,
    "neg": lambda g, vals, out, attr: (-g,),
    "pow": lambda g, vals, out, attr: (g * attr * vals[0] ** (attr - 1.0),),
    "sin": lambda g, vals, out, attr: (g * np.cos(vals[0]),),
    "cos": lambda g, vals, out, attr: (-g * np.sin(vals[0]),),
    "exp": lambda g, vals, out, attr: (g * out,),
    "tanh": lambda g, vals, out, attr: (g * (1.0 - out * out),),
    "sigmoid": lambda g, vals, out, attr: (g * out * (1.0 - out),),
    "swish": lambda g, vals, out, attr: (
        g * (_sigmoid_any(vals[0]) + out * (1.0 - _sigmoid_any(vals[0]))),
    ),
    "relu": lambda g, vals, out, attr: (g * (vals[0] > 0),),
    "step": lambda g, vals, out, attr: (None,),
    "matmul": lambda g, vals, out, attr: (g @ vals[1].T, vals[0].T @ g),
    "affine": lambda g, vals, out, attr: (g @ vals[1].T, vals[0].T @ g, g),
    "col": None,  # handled inline, needs the argument shape
    "hstack": None,
    "sum": lambda g, vals, out, attr: (np.broadcast_to(g, np.shape(vals[0])),),
    "ones_like": lambda g, vals, out, attr: (None,),
    "zeros_like": lambda g, vals, out, attr: (None,),
}

# elementwise binary ops whose adjoints may need unbroadcasting
_BROADCASTING = frozenset({"add", "sub", "mul", "div"})


# -------------------------------------------------------------- tangent rules
# Forward-mode rules expressed with tape nodes, so the derivative is itself
# differentiable. ``ts`` holds the tangent node of each argument or None.


def _t_add(tape, n, ts):
    da, db = ts
    if da is None:
        return db
    if db is None:
        return da
    return da + db


def _t_sub(tape, n, ts):
    da, db = ts
    if db is None:
        return da
    if da is None:
        return -db
    return da - db


def _t_mul(tape, n, ts):
    (a, b), (da, db) = n.args, ts
    terms = []
    if da is not None:
        terms.append(da * b)
    if db is not None:
        terms.append(a * db)
    return terms[0] if len(terms) == 1 else terms[0] + terms[1]


def _t_div(tape, n, ts):
    (a, b), (da, db) = n.args, ts
    if db is None:
        return da / b
    if da is None:
        return -(n * db) / b
    return (da - n * db) / b


def _t_unary(deriv):
    def rule(tape, n, ts):
        (da,) = ts
        return deriv(tape, n, n.args[0]) * da

    return rule


def _t_matmul(tape, n, ts):
    (a, b), (da, db) = n.args, ts
    terms = []
    if da is not None:
        terms.append(da @ b)
    if db is not None:
        terms.append(a @ db)
    return terms[0] if len(terms) == 1 else terms[0] + terms[1]


def _t_affine(tape, n, ts):
    (h, w, b), (dh, dw, db) = n.args, ts
    terms = []
    if dh is not None:
        terms.append(dh @ w)
    if dw is not None:
        terms.append(h @ dw)
    if db is not None:
        terms.append(db)
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def _t_hstack(tape, n, ts):
    parts = [t if t is not None else tape.apply("zeros_like", a) for a, t in zip(n.args, ts)]
    return tape.apply("hstack", *parts)


def _sig_node(tape, a):
    return tape.apply("sigmoid", a)


_TANGENT = {
    "add": _t_add,
    "sub": _t_sub,
    "mul": _t_mul,
    "div": _t_div,
    "neg": lambda tape, n, ts: -ts[0],
    "pow": _t_unary(lambda tape, n, a: n.attr * a ** (n.attr - 1.0)),
    "sin": _t_unary(lambda tape, n, a: tape.apply("cos", a)),
    "cos": _t_unary(lambda tape, n, a: -tape.apply("sin", a)),
    "exp": _t_unary(lambda tape, n, a: n),
    "tanh": _t_unary(lambda tape, n, a: 1.0 - n * n),
    "sigmoid": _t_unary(lambda tape, n, a: n * (1.0 - n)),
    "swish": _t_unary(lambda tape, n, a: _sig_node(tape, a) + n * (1.0 - _sig_node(tape, a))),
    "relu": _t_unary(lambda tape, n, a: tape.apply("step", a)),
    "step": lambda tape, n, ts: None,
    "matmul": _t_matmul,
    "affine": _t_affine,
    "hstack": _t_hstack,
    "col": lambda tape, n, ts: tape.apply("col", ts[0], attr=n.attr),
    "sum": lambda tape, n, ts: tape.apply("sum", ts[0]),
    "ones_like": lambda tape, n, ts: None,
    "zeros_like": lambda tape, n, ts: None,
}

# ops whose value only depends on argument shapes/signs, never differentiable
_NON_SMOOTH_LEAVES = frozenset({"ones_like", "zeros_like", "step"})


class Tape:
    """Ordered list of nodes; node ids are a topological order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.inputs: list[Node] = []
        self.parameters: list[Node] = []
        self._memo: dict = {}
        self._tangents: dict = {}
        self._plans: dict = {}

    def __len__(self):
        return len(self.nodes)

    def _push(self, op, args, attr, value):
        node = Node(self, len(self.nodes), op, args, attr, value)
        self.nodes.append(node)
        return node

    def input(self, value) -> Node:
        node = self._push("input", (), None, np.asarray(value, dtype=float))
        self.inputs.append(node)
        return node

    def parameter(self, value) -> Node:
        node = self._push("parameter", (), None, np.array(value, dtype=float))
        self.parameters.append(node)
        return node

    def const(self, value) -> Node:
        if np.ndim(value) == 0:
            key = ("constant", float(value))
            node = self._memo.get(key)
            if node is None:
                node = self._push("constant", (), None, np.asarray(float(value)))
                self._memo[key] = node
            return node
        return self._push("constant", (), None, np.asarray(value, dtype=float))

    def apply(self, op, *args, attr=None) -> Node:
        """Append ``op(args)``; structurally identical nodes are shared."""
        for a in args:
            if a.tape is not self:
                raise ContractError("node belongs to a different tape")
        key = (op, tuple(a.id for a in args), attr)
        node = self._memo.get(key)
        if node is not None:
            return node
        vals = [a.value for a in args]
        value = _FORWARD[op](*vals, attr)
        node = self._push(op, tuple(args), attr, value)
        self._memo[key] = node
        return node

    # -- evaluation plans -------------------------------------------------

    def ancestors(self, outputs: Sequence[Node]) -> list[int]:
        """Ids of every node needed to compute ``outputs``, ascending."""
        seen = set()
        stack = [o.id for o in outputs]
        while stack:
            i = stack.pop()
            if i in seen:
                continue
            seen.add(i)
            stack.extend(a.id for a in self.nodes[i].args)
        return sorted(seen)

    def _plan(self, outputs):
        key = (tuple(o.id for o in outputs), len(self.nodes))
        plan = self._plans.get(key)
        if plan is None:
            order = self.ancestors(outputs)
            last_use = {}
            for i in order:
                for a in self.nodes[i].args:
                    last_use[a.id] = i
            keep = {o.id for o in outputs}
            free_after = {}
            for nid, user in last_use.items():
                if nid not in keep:
                    free_after.setdefault(user, []).append(nid)
            param_ids = {p.id for p in self.parameters}
            live = set()
            for i in order:
                if i in param_ids or any(a.id in live for a in self.nodes[i].args):
                    live.add(i)
            plan = (order, free_after, live)
            self._plans[key] = plan
        return plan


def _check_values(nodes, values, what):
    if len(values) != len(nodes):
        raise DimensionError(f"expected {len(nodes)} {what} values, got {len(values)}")
    out = []
    for node, v in zip(nodes, values):
        v = np.asarray(v, dtype=float)
        if v.ndim != np.ndim(node.value) or (
            what == "parameter" and v.shape != np.shape(node.value)
        ):
            raise DimensionError(
                f"{what} node {node.id}: shape {v.shape} incompatible with {np.shape(node.value)}"
            )
        out.append(v)
    return out


def evaluate(
    tape: Tape,
    input_values: Sequence | None = None,
    parameter_values: Sequence | None = None,
    outputs: Sequence[Node] | None = None,
    keep: bool = True,
) -> dict[int, np.ndarray]:
    """Re-run the tape on new inputs/parameters.

    Returns a workspace mapping node id to value. The tape itself is not
    mutated, so concurrent calls are safe. With ``keep=False`` intermediate
    values are dropped after their last use and only ``outputs`` remain.
    Input rows may differ from the ones used at construction.
    """
    ws: dict[int, np.ndarray] = {}
    if input_values is not None:
        for node, v in zip(tape.inputs, _check_values(tape.inputs, input_values, "input")):
            ws[node.id] = v
    if parameter_values is not None:
        for node, v in zip(
            tape.parameters, _check_values(tape.parameters, parameter_values, "parameter")
        ):
            ws[node.id] = v
    if outputs is None:
        outputs = [tape.nodes[-1]]
    order, free_after, _ = tape._plan(list(outputs))
    nodes = tape.nodes
    for i in order:
        if i in ws:
            continue
        n = nodes[i]
        if n.op in _LEAF_OPS:
            ws[i] = n.value
            continue
        vals = [ws[a.id] for a in n.args]
        ws[i] = _FORWARD[n.op](*vals, n.attr)
        if not keep:
            for j in free_after.get(i, ()):
                ws.pop(j, None)
    return ws


def grad_parameters(
    tape: Tape,
    output: Node,
    workspace: dict[int, np.ndarray] | None = None,
    per_sample: bool = False,
) -> list[np.ndarray]:
    """Reverse sweep: d(output)/d(parameter) for every tape parameter.

    ``output`` must be scalar unless ``per_sample`` is set, in which case it
    must be a ``(B, 1)`` per-point column and the result holds one gradient
    per point, shape ``(B,) + parameter.shape``.
    """
    if workspace is None:
        workspace = {n.id: n.value for n in tape.nodes}
    out_val = workspace[output.id]
    if per_sample:
        if out_val.ndim != 2 or out_val.shape[1] != 1:
            raise ContractError("per-sample output must be a (B, 1) column")
        rows = out_val.shape[0]
    elif np.size(out_val) != 1:
        raise ContractError(f"output must be scalar, got shape {np.shape(out_val)}")

    param_ids = {p.id for p in tape.parameters}
    adj: dict[int, np.ndarray] = {output.id: np.ones_like(out_val, dtype=float)}
    pgrad: dict[int, np.ndarray] = {}
    nodes = tape.nodes
    order, _, live = tape._plan([output])
    for i in reversed(order):
        g = adj.pop(i, None)
        if g is None:
            continue
        n = nodes[i]
        if n.op in _LEAF_OPS:
            if i in param_ids:
                pgrad[i] = pgrad[i] + g if i in pgrad else g
            continue
        vals = [workspace[a.id] for a in n.args]
        if n.op == "col":
            full = np.zeros(np.shape(vals[0]))
            full[..., n.attr : n.attr + 1] = g
            contribs = (full,)
        elif n.op == "hstack":
            edges = np.cumsum([np.shape(v)[-1] for v in vals])[:-1]
            contribs = tuple(np.split(g, edges, axis=-1))
        else:
            contribs = _VJP[n.op](g, vals, workspace[i], n.attr)
        for a, v, c in zip(n.args, vals, contribs):
            if c is None or a.id not in live:
                continue
            if per_sample and a.id in param_ids:
                c = _per_sample_param(n, a, vals, g, c)
            elif np.shape(c) != np.shape(v):
                c = _unbroadcast(np.asarray(c), np.shape(v))
            prev = adj.get(a.id)
            adj[a.id] = c if prev is None else prev + c
    out = []
    for p in tape.parameters:
        g = pgrad.get(p.id)
        if g is None:
            shape = ((rows,) if per_sample else ()) + np.shape(workspace[p.id])
            g = np.zeros(shape)
        out.append(np.asarray(g, dtype=float))
    return out


def _per_sample_param(n, a, vals, g, c):
    """Per-point contribution to parameter ``a`` from consumer node ``n``."""
    k = n.args.index(a)
    if n.op in ("matmul", "affine") and k == 1:
        return np.einsum("bi,bj->bij", vals[0], g)
    if n.op == "affine" and k == 2:
        return _unbroadcast_rows(g, np.shape(vals[2]))
    if n.op in _BROADCASTING:
        full = np.broadcast_to(c, np.broadcast_shapes(*(np.shape(v) for v in vals)))
        return _unbroadcast_rows(np.asarray(full), np.shape(vals[k]))
    raise ContractError(f"per-sample gradients unsupported through '{n.op}'")


def input_partial(output: Node, wrt: Node, order: int = 1) -> Node:
    """Append nodes computing d^order(output)/d(wrt)^order and return the last.

    ``wrt`` is an input node. Derivatives of intermediate nodes are cached per
    input so repeated calls share work (d/dx of u and v reuse the hidden
    layers' tangents; order 2 reuses order 1).
    """
    if order not in (1, 2):
        raise UnsupportedError(f"derivative order {order} is not supported (max 2)")
    node = output
    for _ in range(order):
        node = _tangent(node, wrt)
    return node


def _tangent(output: Node, wrt: Node) -> Node:
    tape = output.tape
    if wrt.op != "input":
        raise ContractError("input_partial differentiates with respect to input nodes")
    cache = tape._tangents.setdefault(wrt.id, {})
    if output.id in cache:
        return cache[output.id] if cache[output.id] is not None else tape.apply("zeros_like", output)
    cache[wrt.id] = tape.apply("ones_like", wrt)
    for i in tape.ancestors([output]):
        if i in cache:
            continue
        n = tape.nodes[i]
        if n.op in _LEAF_OPS or n.op in _NON_SMOOTH_LEAVES:
            cache[i] = None
            continue
        ts = [cache[a.id] for a in n.args]
        cache[i] = None if all(t is None for t in ts) else _TANGENT[n.op](tape, n, ts)
    result = cache[output.id]
    if result is None:
        return tape.apply("zeros_like", output)
    return result


# ---------------------------------------------------------- functional helpers


def sin(a):
    return a.tape.apply("sin", a)


def cos(a):
    return a.tape.apply("cos", a)


def exp(a):
    return a.tape.apply("exp", a)


def tanh(a):
    return a.tape.apply("tanh", a)


def sigmoid(a):
    return a.tape.apply("sigmoid", a)


def swish(a):
    return a.tape.apply("swish", a)


def relu(a):
    return a.tape.apply("relu", a)


def affine(h, w, b):
    return h.tape.apply("affine", h, w, b)


def hstack(*cols):
    return cols[0].tape.apply("hstack", *cols)


def col(a, k: int):
    return a.tape.apply("col", a, attr=int(k))


def total(a):
    return a.tape.apply("sum", a)


def square(a):
    return a * a


def central_difference_gradient(f, theta: np.ndarray, h: float = 1e-4, coords=None) -> np.ndarray:
    """Central differences of scalar ``f`` at flat ``theta`` (selected coords)."""
    theta = np.array(theta, dtype=float)
    coords = range(theta.size) if coords is None else coords
    out = np.zeros(theta.size)
    for k in coords:
        old = theta[k]
        theta[k] = old + h
        fp = f(theta)
        theta[k] = old - h
        fm = f(theta)
        theta[k] = old
        out[k] = (fp - fm) / (2.0 * h)
    return out


def relative_error(approx: np.ndarray, reference: np.ndarray) -> float:
    """max|approx - reference| scaled by max|reference| (guarded near zero)."""
    approx = np.ravel(approx)
    reference = np.ravel(reference)
    scale = max(np.max(np.abs(reference)), np.max(np.abs(approx)), 1e-300)
    return float(np.max(np.abs(approx - reference)) / scale)
