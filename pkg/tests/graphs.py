"""Hypothesis strategies producing random well-defined expression graphs."""

from hypothesis import strategies as st

from teqpinn import exprgraph as eg

VARS = ("x", "y")

leaves = st.one_of(
    st.sampled_from(VARS).map(eg.var),
    st.floats(-2.0, 2.0, allow_nan=False).map(eg.const),
)


def _extend(children):
    unary = st.tuples(st.sampled_from(["sin", "cos", "tanh", "neg", "exp_small", "recip_safe", "sq"]), children)
    binary = st.tuples(st.sampled_from(["add", "mul", "sub"]), children, children)
    return st.one_of(unary, binary).map(_build)


def _build(shape):
    op = shape[0]
    if op == "add":
        return eg.add(shape[1], shape[2])
    if op == "mul":
        return eg.mul(shape[1], shape[2])
    if op == "sub":
        return eg.sub(shape[1], shape[2])
    a = shape[1]
    if op == "exp_small":
        return eg.exp(eg.tanh(a))
    if op == "recip_safe":
        return eg.recip(eg.add(2.0, eg.sin(a)))
    if op == "sq":
        return eg.powi(a, 2)
    return getattr(eg, op)(a)


graphs = st.recursive(leaves, _extend, max_leaves=12)
points = st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
