"""Scalar computation graphs whose derivatives are again graphs.

Every node is hash-consed on ``(op, children, payload)`` so structurally equal
subexpressions are the same object, and constructors apply a small set of
rewrites (constant folding, ``x + 0 -> x``, ``x * 0 -> 0``, ``x * 1 -> x``).
Differentiating a graph returns a new graph, which can itself be
differentiated; that is what lets a PDE residual containing ``u_xx`` be
differentiated once more with respect to model parameters.

Evaluation accepts scalars or numpy arrays in the bindings. Arrays are
treated as a batch of independent bindings evaluated in one pass.
"""

from __future__ import annotations

import itertools
import math
import threading
import weakref
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Node",
    "Primitive",
    "Program",
    "UnboundVariableError",
    "NonFiniteError",
    "ArityError",
    "const",
    "var",
    "add",
    "sub",
    "mul",
    "neg",
    "recip",
    "div",
    "sin",
    "cos",
    "tanh",
    "exp",
    "powi",
    "evaluate",
    "differentiate",
    "gradient",
    "register_primitive",
    "substitute",
    "free_variables",
    "topological_order",
    "to_dot",
]

CONST = "const"
VAR = "var"
ADD = "add"
MUL = "mul"
NEG = "neg"
RECIP = "recip"
SIN = "sin"
COS = "cos"
TANH = "tanh"
EXP = "exp"
POWI = "powi"
PRIM = "prim"


class UnboundVariableError(KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"variable {self.name!r} is not bound"


class NonFiniteError(FloatingPointError):
    def __init__(self, node: "Node"):
        super().__init__(f"non-finite value produced at node #{node.id} ({node.op})")
        self.node_id = node.id


class ArityError(TypeError):
    pass


_ids = itertools.count()
_table: "weakref.WeakValueDictionary[tuple, Node]" = weakref.WeakValueDictionary()
_table_lock = threading.Lock()


class Node:
    """One scalar operation. Construct through the module functions, not directly."""

    __slots__ = ("id", "op", "inputs", "payload", "__weakref__")

    def __init__(self, op: str, inputs: tuple["Node", ...], payload: Hashable):
        self.id = next(_ids)
        self.op = op
        self.inputs = inputs
        self.payload = payload

    def __repr__(self) -> str:
        if self.op == CONST:
            return f"const({self.payload!r})"
        if self.op == VAR:
            return f"var({self.payload!r})"
        if self.op == PRIM:
            return f"#{self.id}:{self.payload[0].name}"
        return f"#{self.id}:{self.op}"

    # Arithmetic sugar; floats are promoted to constants.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        if not isinstance(k, int):
            raise TypeError("only integer powers are supported")
        return powi(self, k)

    @property
    def is_const(self) -> bool:
        return self.op == CONST

    @property
    def value(self) -> float:
        if self.op != CONST:
            raise ValueError("not a constant node")
        return self.payload


def _intern(op: str, inputs: tuple[Node, ...], payload: Hashable, key_payload: Hashable = None) -> Node:
    key = (op, tuple(c.id for c in inputs), payload if key_payload is None else key_payload)
    with _table_lock:
        node = _table.get(key)
        if node is None:
            node = Node(op, inputs, payload)
            _table[key] = node
    return node


def _as_node(x) -> Node:
    if isinstance(x, Node):
        return x
    return const(x)


def const(value: float) -> Node:
    v = float(value)
    if v == 0.0:
        v = 0.0  # collapse -0.0
    return _intern(CONST, (), v)


def var(name: str) -> Node:
    return _intern(VAR, (), str(name))


ZERO = const(0.0)
ONE = const(1.0)


def _is(node: Node, v: float) -> bool:
    return node.op == CONST and node.payload == v


def add(*terms) -> Node:
    nodes = [_as_node(t) for t in terms]
    folded = 0.0
    rest = []
    for n in nodes:
        if n.op == CONST:
            folded += n.payload
        else:
            rest.append(n)
    if not rest:
        return const(folded)
    if folded != 0.0:
        rest.append(const(folded))
    if len(rest) == 1:
        return rest[0]
    rest.sort(key=lambda n: n.id)
    return _intern(ADD, tuple(rest), None)


def mul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    if b.op == CONST and a.op != CONST:
        a, b = b, a
    if a.op == CONST:
        if b.op == CONST:
            return const(a.payload * b.payload)
        if a.payload == 0.0:
            return ZERO
        if a.payload == 1.0:
            return b
        if b.op == MUL and b.inputs[0].op == CONST:
            return mul(a.payload * b.inputs[0].payload, b.inputs[1])
        return _intern(MUL, (a, b), None)
    if b.id < a.id:
        a, b = b, a
    return _intern(MUL, (a, b), None)


def neg(a) -> Node:
    a = _as_node(a)
    if a.op == CONST:
        return const(-a.payload)
    if a.op == NEG:
        return a.inputs[0]
    return _intern(NEG, (a,), None)


def sub(a, b) -> Node:
    return add(a, neg(b))


def _fold_unary(op: str, fn: Callable[[float], float], a: Node) -> Node:
    if a.op == CONST:
        try:
            v = fn(a.payload)
        except (OverflowError, ZeroDivisionError, ValueError):
            v = math.nan
        if math.isfinite(v):
            return const(v)
    return _intern(op, (a,), None)


def recip(a) -> Node:
    return _fold_unary(RECIP, lambda v: 1.0 / v, _as_node(a))


def div(a, b) -> Node:
    b = _as_node(b)
    if b.op == CONST and b.payload != 0.0:
        return mul(1.0 / b.payload, a)
    return mul(a, recip(b))


def sin(a) -> Node:
    return _fold_unary(SIN, math.sin, _as_node(a))


def cos(a) -> Node:
    return _fold_unary(COS, math.cos, _as_node(a))


def tanh(a) -> Node:
    return _fold_unary(TANH, math.tanh, _as_node(a))


def exp(a) -> Node:
    return _fold_unary(EXP, math.exp, _as_node(a))


def powi(a, k: int) -> Node:
    a = _as_node(a)
    k = int(k)
    if k == 0:
        return ONE
    if k == 1:
        return a
    if a.op == CONST:
        return _fold_unary(POWI, lambda v: v**k, a) if k > 0 else const(a.payload**k)
    return _intern(POWI, (a,), k)


class Primitive:
    """A user-defined scalar operation with a fixed number of arguments.

    ``value_fn(values, state)`` computes the output from the argument values
    (floats or broadcastable arrays). ``partial_rule(index, children, state)``
    returns a Node for the partial derivative with respect to argument
    ``index``; nesting derivatives works as long as that Node is itself built
    from differentiable operations.

    An optional ``vjp(values, state, g)`` returns, per argument, the adjoint
    contribution ``g * d out / d arg`` directly. :class:`Program` uses it in
    place of evaluating the partial-rule graphs; it must agree with them.
    """

    _counter = itertools.count()

    def __init__(self, name: str, arity: int, value_fn, partial_rule, vjp=None):
        if arity < 0:
            raise ValueError("arity must be non-negative")
        self.name = name
        self.arity = arity
        self.value_fn = value_fn
        self.partial_rule = partial_rule
        self.vjp = vjp
        self.tag = next(Primitive._counter)

    def __repr__(self) -> str:
        return f"Primitive({self.name!r}, arity={self.arity})"

    def __call__(self, *args, state: Hashable = None) -> Node:
        if len(args) != self.arity:
            raise ArityError(f"{self.name} expects {self.arity} arguments, got {len(args)}")
        children = tuple(_as_node(a) for a in args)
        return _intern(PRIM, children, (self, state), key_payload=(self.tag, state))


def register_primitive(name: str, arity: int, value_fn, partial_rule, vjp=None) -> Primitive:
    return Primitive(name, arity, value_fn, partial_rule, vjp)


def topological_order(roots: Node | Iterable[Node]) -> list[Node]:
    """Children-before-parents order of every node reachable from ``roots``."""
    if isinstance(roots, Node):
        roots = [roots]
    seen: set[int] = set()
    order: list[Node] = []
    for root in roots:
        if root.id in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.id in seen:
                continue
            seen.add(node.id)
            stack.append((node, True))
            for c in reversed(node.inputs):
                if c.id not in seen:
                    stack.append((c, False))
    return order


def free_variables(node: Node) -> list[str]:
    return sorted({n.payload for n in topological_order(node) if n.op == VAR})


def _apply(node: Node, args: list):
    op = node.op
    if op == ADD:
        s = args[0]
        for a in args[1:]:
            s = s + a
        return s
    if op == MUL:
        return args[0] * args[1]
    if op == NEG:
        return -args[0]
    if op == RECIP:
        # numpy scalars give inf instead of raising ZeroDivisionError
        return 1.0 / np.float64(args[0]) if not isinstance(args[0], np.ndarray) else 1.0 / args[0]
    if op == SIN:
        return np.sin(args[0])
    if op == COS:
        return np.cos(args[0])
    if op == TANH:
        return np.tanh(args[0])
    if op == EXP:
        return np.exp(args[0])
    if op == POWI:
        v = args[0] if isinstance(args[0], np.ndarray) else np.float64(args[0])
        return v ** node.payload
    if op == PRIM:
        prim, state = node.payload
        return prim.value_fn(args, state)
    raise ValueError(f"unknown op {op!r}")


def _finite(v) -> bool:
    if isinstance(v, float):
        return math.isfinite(v)
    return bool(np.all(np.isfinite(v)))


def _lookup(bindings: Mapping, name: str):
    try:
        return bindings[name]
    except KeyError:
        raise UnboundVariableError(name) from None


def evaluate(node: Node, bindings: Mapping[str, float] | None = None):
    """Value of ``node`` under ``bindings`` (variable name -> float or array)."""
    bindings = bindings or {}
    memo: dict[int, object] = {}
    with np.errstate(all="ignore"):
        for n in topological_order(node):
            if n.op == CONST:
                v = n.payload
            elif n.op == VAR:
                v = _lookup(bindings, n.payload)
                if not isinstance(v, np.ndarray):
                    v = float(v)
            else:
                v = _apply(n, [memo[c.id] for c in n.inputs])
                if not _finite(v):
                    raise NonFiniteError(n)
            memo[n.id] = v
    out = memo[node.id]
    if isinstance(out, np.ndarray) and out.ndim == 0:
        return float(out)
    if isinstance(out, np.floating):
        return float(out)
    return out


def _local_partial(node: Node, i: int) -> Node:
    """d node / d node.inputs[i] as a graph."""
    op = node.op
    a = node.inputs[i]
    if op == ADD:
        return ONE
    if op == MUL:
        return node.inputs[1 - i]
    if op == NEG:
        return const(-1.0)
    if op == RECIP:
        return neg(mul(node, node))
    if op == SIN:
        return cos(a)
    if op == COS:
        return neg(sin(a))
    if op == TANH:
        return add(1.0, neg(mul(node, node)))
    if op == EXP:
        return node
    if op == POWI:
        k = node.payload
        return mul(float(k), powi(a, k - 1))
    if op == PRIM:
        prim, state = node.payload
        return prim.partial_rule(i, node.inputs, state)
    raise ValueError(f"unknown op {op!r}")


def _depends(order: list[Node], names: set[str]) -> set[int]:
    dep: set[int] = set()
    for n in order:
        if n.op == VAR:
            if n.payload in names:
                dep.add(n.id)
        elif any(c.id in dep for c in n.inputs):
            dep.add(n.id)
    return dep


def differentiate(node: Node, wrt: str | Node) -> Node:
    """Graph for d node / d wrt (forward sweep over the graph)."""
    name = wrt.payload if isinstance(wrt, Node) else str(wrt)
    order = topological_order(node)
    dep = _depends(order, {name})
    if node.id not in dep:
        return ZERO
    tangent: dict[int, Node] = {}
    for n in order:
        if n.id not in dep:
            continue
        if n.op == VAR:
            tangent[n.id] = ONE
            continue
        terms = []
        for i, c in enumerate(n.inputs):
            if c.id not in dep:
                continue
            dc = tangent[c.id]
            if n.op == ADD:
                terms.append(dc)
            elif n.op == NEG:
                terms.append(neg(dc))
            else:
                terms.append(mul(_local_partial(n, i), dc))
        tangent[n.id] = add(*terms)
    return tangent[node.id]


def gradient(node: Node, wrt: Sequence[str | Node]) -> list[Node]:
    """Graphs for the partials of ``node`` w.r.t. each of ``wrt`` (one reverse sweep)."""
    names = [w.payload if isinstance(w, Node) else str(w) for w in wrt]
    order = topological_order(node)
    dep = _depends(order, set(names))
    contribs: dict[int, list[Node]] = {node.id: [ONE]}
    adjoint: dict[int, Node] = {}
    for n in reversed(order):
        if n.id not in dep or n.id not in contribs:
            continue
        bar = add(*contribs.pop(n.id))
        adjoint[n.id] = bar
        if n.op == VAR or _is(bar, 0.0):
            continue
        for i, c in enumerate(n.inputs):
            if c.id not in dep:
                continue
            if n.op == ADD:
                term = bar
            elif n.op == NEG:
                term = neg(bar)
            else:
                term = mul(bar, _local_partial(n, i))
            contribs.setdefault(c.id, []).append(term)
    var_ids = {n.payload: n.id for n in order if n.op == VAR}
    return [adjoint.get(var_ids.get(nm, -1), ZERO) for nm in names]


def substitute(node: Node, mapping: Mapping[str, float | Node]) -> Node:
    """Rebuild ``node`` with variables replaced by constants or other nodes."""
    repl = {k: _as_node(v) for k, v in mapping.items()}
    new: dict[int, Node] = {}
    for n in topological_order(node):
        if n.op == VAR:
            new[n.id] = repl.get(n.payload, n)
        elif n.op == CONST:
            new[n.id] = n
        else:
            new[n.id] = _rebuild(n, [new[c.id] for c in n.inputs])
    return new[node.id]


def _rebuild(n: Node, children: list[Node]) -> Node:
    if all(a is b for a, b in zip(children, n.inputs)):
        return n
    op = n.op
    if op == ADD:
        return add(*children)
    if op == MUL:
        return mul(*children)
    if op == NEG:
        return neg(children[0])
    if op == RECIP:
        return recip(children[0])
    if op == SIN:
        return sin(children[0])
    if op == COS:
        return cos(children[0])
    if op == TANH:
        return tanh(children[0])
    if op == EXP:
        return exp(children[0])
    if op == POWI:
        return powi(children[0], n.payload)
    if op == PRIM:
        prim, state = n.payload
        return prim(*children, state=state)
    raise ValueError(op)


def to_dot(roots: Node | Iterable[Node], name: str = "graph") -> str:
    """Graphviz DOT text for debugging."""
    if isinstance(roots, Node):
        roots = [roots]
    roots = list(roots)
    lines = [f"digraph {name} {{", "  rankdir=BT;"]
    for n in topological_order(roots):
        if n.op == CONST:
            label = f"{n.payload:.6g}"
        elif n.op == VAR:
            label = n.payload
        elif n.op == PRIM:
            label = f"{n.payload[0].name} {n.payload[1]!r}" if n.payload[1] is not None else n.payload[0].name
        elif n.op == POWI:
            label = f"pow {n.payload}"
        else:
            label = n.op
        label = label.replace('"', "'")
        shape = "box" if n.op in (VAR, CONST) else "ellipse"
        lines.append(f'  n{n.id} [label="{label}", shape={shape}];')
        for c in n.inputs:
            lines.append(f"  n{c.id} -> n{n.id};")
    for r in roots:
        lines.append(f"  n{r.id} [peripheries=2];")
    lines.append("}")
    return "\n".join(lines) + "\n"


class Program:
    """A frozen, linearized set of output graphs for repeated batch evaluation.

    With ``wrt`` given, :meth:`vjp` runs a numeric reverse sweep and returns
    exact gradients with respect to those variables. Primitive nodes are
    differentiated through their ``vjp`` hook when ``use_hooks`` is set and the
    primitive has one; otherwise their partial-rule graphs are compiled into
    the program and evaluated alongside the forward pass.

    Adjoints of nodes whose value is a scalar (batch-invariant, e.g. anything
    depending only on parameters) are kept summed over the batch.
    """

    def __init__(self, outputs: Sequence[Node], wrt: Sequence[str | Node] = (), use_hooks: bool = True):
        self.outputs = list(outputs)
        self.wrt = [w.payload if isinstance(w, Node) else str(w) for w in wrt]
        base = topological_order(self.outputs)
        dep = _depends(base, set(self.wrt)) if self.wrt else set()
        extra: list[Node] = []
        prim_partials: dict[int, list[tuple[int, Node]]] = {}
        hooked: set[int] = set()
        for n in base:
            if n.op == PRIM and n.id in dep:
                if use_hooks and n.payload[0].vjp is not None:
                    hooked.add(n.id)
                    continue
                parts = []
                for i, c in enumerate(n.inputs):
                    if c.id in dep:
                        p = _local_partial(n, i)
                        parts.append((i, p))
                        extra.append(p)
                prim_partials[n.id] = parts
        order = topological_order(self.outputs + extra)
        index = {n.id: k for k, n in enumerate(order)}
        self._order = order
        self._dep = {index[i] for i in dep}
        self._out_idx = [index[n.id] for n in self.outputs]
        self._var_idx = {n.payload: k for k, n in enumerate(order) if n.op == VAR}
        self.variables = sorted(self._var_idx)
        self._code = [(n.op, tuple(index[c.id] for c in n.inputs), n.payload, n) for n in order]
        # prim position -> [(child position, partial-graph position)]
        self._prim_code: dict[int, list[tuple[int, int]]] = {
            index[nid]: [(index[order[index[nid]].inputs[i].id], index[p.id]) for i, p in parts]
            for nid, parts in prim_partials.items()
        }
        self._hooked = {index[i] for i in hooked}

    def __len__(self) -> int:
        return len(self._order)

    def forward(self, bindings: Mapping[str, object]) -> list:
        vals: list = [None] * len(self._code)
        with np.errstate(all="ignore"):
            for k, (op, ins, payload, node) in enumerate(self._code):
                if op == CONST:
                    vals[k] = payload
                elif op == VAR:
                    v = _lookup(bindings, payload)
                    vals[k] = v if isinstance(v, np.ndarray) else float(v)
                elif op == ADD:
                    s = vals[ins[0]]
                    for j in ins[1:]:
                        s = s + vals[j]
                    vals[k] = s
                elif op == MUL:
                    vals[k] = vals[ins[0]] * vals[ins[1]]
                elif op == NEG:
                    vals[k] = -vals[ins[0]]
                elif op == TANH:
                    vals[k] = np.tanh(vals[ins[0]])
                else:
                    vals[k] = _apply(node, [vals[j] for j in ins])
        for k in self._out_idx:
            if not _finite(vals[k]):
                self._raise_nonfinite(vals)
        return vals

    def _raise_nonfinite(self, vals: list):
        for k, (op, _, _, node) in enumerate(self._code):
            if op not in (CONST, VAR) and not _finite(vals[k]):
                raise NonFiniteError(node)
        raise FloatingPointError("non-finite output")

    def outputs_of(self, vals: list) -> list:
        return [vals[k] for k in self._out_idx]

    def run(self, bindings: Mapping[str, object]) -> list:
        return self.outputs_of(self.forward(bindings))

    def vjp(self, vals: list, seeds: Sequence) -> dict[str, object]:
        """Reverse sweep seeded per output; returns the batch-summed adjoint of each ``wrt`` name."""
        adj: list = [None] * len(self._code)
        dep = self._dep

        def acc(j, c):
            if not isinstance(vals[j], np.ndarray) and isinstance(c, np.ndarray):
                c = float(np.sum(c))
            adj[j] = c if adj[j] is None else adj[j] + c

        for k, s in zip(self._out_idx, seeds):
            acc(k, s)
        with np.errstate(all="ignore"):
            for k in range(len(self._code) - 1, -1, -1):
                g = adj[k]
                if g is None or k not in dep:
                    continue
                op, ins, payload, node = self._code[k]
                if op == VAR or op == CONST:
                    continue
                if op == ADD:
                    for j in ins:
                        if j in dep:
                            acc(j, g)
                elif op == MUL:
                    a, b = ins
                    if a in dep:
                        acc(a, g * vals[b])
                    if b in dep:
                        acc(b, g * vals[a])
                elif op == PRIM:
                    if k in self._hooked:
                        prim, state = payload
                        contribs = prim.vjp([vals[j] for j in ins], state, g)
                        for j, c in zip(ins, contribs):
                            if j in dep and c is not None:
                                acc(j, c)
                    else:
                        for j, p in self._prim_code[k]:
                            acc(j, g * vals[p])
                else:
                    a = ins[0]
                    v = vals[k]
                    x = vals[a]
                    if op == NEG:
                        c = -g
                    elif op == TANH:
                        c = g * (1.0 - v * v)
                    elif op == RECIP:
                        c = -g * v * v
                    elif op == SIN:
                        c = g * np.cos(x)
                    elif op == COS:
                        c = -g * np.sin(x)
                    elif op == EXP:
                        c = g * v
                    elif op == POWI:
                        base = x if isinstance(x, np.ndarray) else np.float64(x)
                        c = g * payload * base ** (payload - 1)
                    else:
                        raise ValueError(op)
                    acc(a, c)
        out = {}
        for name in self.wrt:
            k = self._var_idx.get(name)
            g = 0.0 if k is None or adj[k] is None else adj[k]
            out[name] = float(np.sum(g)) if isinstance(g, np.ndarray) else float(g)
        return out
