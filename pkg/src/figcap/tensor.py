"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is define-by-run: every primitive applied to a tensor that
requires gradients appends a graph node holding the inputs and a closure
for the local gradient rule.  ``backward`` walks the node set in reverse
topological order exactly once and accumulates gradients, summing over
all uses of a tensor.  Graphs are built per forward pass and become
unusable after their backward pass.

Only the primitives the model needs exist; there is no implicit
broadcasting beyond adding a bias vector along the last axis.
"""

import itertools
from contextlib import contextmanager

import numpy as np

from . import kernels


class DimensionError(ValueError):
    """Operand shapes do not satisfy the primitive's contract."""


class ContractError(ValueError):
    """A precondition other than a shape constraint was violated."""


class GraphStateError(RuntimeError):
    """The computation graph was used after its backward pass."""


_grad_enabled = True
_seq_counter = itertools.count()


@contextmanager
def no_grad():
    """Disable graph construction inside the block (used for decoding)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Node:
    """One graph node: primitive id, input tensors, and the gradient rule.

    ``seq`` increases monotonically with creation, so a node can only
    reference earlier nodes and the graph is acyclic by construction.
    """

    __slots__ = ("op", "parents", "grad_fn", "seq", "consumed")

    def __init__(self, op, parents, grad_fn):
        self.op = op
        self.parents = parents
        self.grad_fn = grad_fn
        self.seq = next(_seq_counter)
        self.consumed = False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.data.shape)}{flag})"


def _result(op, data, parents, grad_fn):
    """Wrap a forward result, attaching a node when gradients are on."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = Node(op, tuple(parents), grad_fn)
    return out


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b):
    """Matrix product of 2-D tensors [m, k] x [k, n] -> [m, n]."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: incompatible shapes {tuple(a.data.shape)} x {tuple(b.data.shape)}"
        )
    ad, bd = a.data, b.data

    def grad_fn(g):
        return kernels.matmul(g, bd.T), kernels.matmul(ad.T, g)

    return _result("matmul", kernels.matmul(ad, bd), (a, b), grad_fn)


def add(a, b):
    """Elementwise sum; also accepts a bias vector added along the last axis."""
    ad, bd = a.data, b.data
    if ad.shape == bd.shape:
        return _result("add", ad + bd, (a, b), lambda g: (g, g))
    if ad.ndim == 2 and bd.shape in ((ad.shape[1],), (1, ad.shape[1])):
        bias_shape = bd.shape

        def grad_fn(g):
            gb = g.sum(axis=0)
            return g, gb if bias_shape == gb.shape else gb.reshape(bias_shape)

        return _result("add", ad + bd, (a, b), grad_fn)
    raise DimensionError(f"add: incompatible shapes {tuple(ad.shape)} and {tuple(bd.shape)}")


def mul(a, b):
    """Hadamard product of equal-shape tensors."""
    if a.data.shape != b.data.shape:
        raise DimensionError(
            f"mul: incompatible shapes {tuple(a.data.shape)} and {tuple(b.data.shape)}"
        )
    ad, bd = a.data, b.data
    return _result("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def relu(a):
    out = kernels.relu(a.data)
    mask = a.data > 0
    return _result("relu", out, (a,), lambda g: (g * mask,))


def sigmoid(a):
    out = kernels.sigmoid(a.data)
    return _result("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    out = kernels.tanh(a.data)
    return _result("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


_ELEMENTWISE = {"add": add, "mul": mul, "relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def elementwise(op, a, b=None):
    """Dispatch an elementwise primitive by name."""
    if op not in _ELEMENTWISE:
        raise ContractError(f"unknown elementwise op {op!r}")
    fn = _ELEMENTWISE[op]
    if op in ("add", "mul"):
        if b is None:
            raise ContractError(f"elementwise {op!r} needs two operands")
        return fn(a, b)
    if b is not None:
        raise ContractError(f"elementwise {op!r} takes one operand")
    return fn(a)


def softmax(a):
    """Softmax along the last axis, computed with max subtraction."""
    ad = a.data
    two_d = ad if ad.ndim == 2 else ad.reshape(1, -1)
    p = kernels.softmax_rows(two_d)
    out = p if ad.ndim == 2 else p.reshape(ad.shape)

    def grad_fn(g):
        g2 = g if g.ndim == 2 else g.reshape(1, -1)
        dz = p * (g2 - (g2 * p).sum(axis=1, keepdims=True))
        return (dz.reshape(ad.shape),)

    return _result("softmax", out, (a,), grad_fn)


def layer_norm(a, gain, bias, eps=1e-5):
    """Per-last-axis normalization followed by gain and bias."""
    if eps <= 0:
        raise ContractError(f"layer_norm: eps must be positive, got {eps}")
    ad = a.data
    d = ad.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise DimensionError(
            f"layer_norm: gain {tuple(gain.data.shape)} / bias {tuple(bias.data.shape)} "
            f"do not match last axis of {tuple(ad.shape)}"
        )
    two_d = ad if ad.ndim == 2 else ad.reshape(1, -1)
    out, xhat, inv_std = kernels.layer_norm_rows(two_d, gain.data, bias.data, eps)
    gd = gain.data

    def grad_fn(g):
        g2 = g if g.ndim == 2 else g.reshape(1, -1)
        gy = g2 * gd
        mean_gy = gy.mean(axis=1, keepdims=True)
        mean_gy_xhat = (gy * xhat).mean(axis=1, keepdims=True)
        dx = (gy - mean_gy - xhat * mean_gy_xhat) * inv_std
        return dx.reshape(ad.shape), (g2 * xhat).sum(axis=0), g2.sum(axis=0)

    return _result(
        "layer_norm", out if ad.ndim == 2 else out.reshape(ad.shape), (a, gain, bias), grad_fn
    )


def embedding(table, ids):
    """Row lookup into a [vocab, d] table for a sequence of token ids."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ContractError(f"embedding: ids must be 1-D, got shape {tuple(idx.shape)}")
    rows = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        bad = int(idx[(idx < 0) | (idx >= rows)][0])
        raise ContractError(f"embedding: token id {bad} out of range for table with {rows} rows")

    def grad_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _result("embedding", table.data[idx], (table,), grad_fn)


def concat(tensors, axis=0):
    """Concatenate tensors of matching rank along ``axis``."""
    if not tensors:
        raise ContractError("concat: need at least one tensor")
    datas = [t.data for t in tensors]
    ndim = datas[0].ndim
    if any(d.ndim != ndim for d in datas) or axis >= ndim:
        raise DimensionError(
            f"concat: incompatible operands {[tuple(d.shape) for d in datas]} along axis {axis}"
        )
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        slicer = [slice(None)] * ndim
        grads = []
        for i in range(len(datas)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(slicer)])
        return tuple(grads)

    return _result("concat", np.concatenate(datas, axis=axis), tuple(tensors), grad_fn)


def slice_last(a, start, size):
    """Contiguous slice [start, start+size) along the last axis of a 2-D tensor."""
    ad = a.data
    if ad.ndim != 2:
        raise DimensionError(f"slice_last: expected 2-D tensor, got shape {tuple(ad.shape)}")
    if start < 0 or size <= 0 or start + size > ad.shape[1]:
        raise ContractError(
            f"slice_last: window [{start}, {start + size}) outside width {ad.shape[1]}"
        )

    def grad_fn(g):
        ga = np.zeros_like(ad)
        ga[:, start : start + size] = g
        return (ga,)

    return _result("slice_last", ad[:, start : start + size].copy(), (a,), grad_fn)


def transpose(a):
    if a.data.ndim != 2:
        raise DimensionError(f"transpose: expected 2-D tensor, got shape {tuple(a.data.shape)}")
    return _result("transpose", a.data.T.copy(), (a,), lambda g: (g.T.copy(),))


def reshape(a, shape):
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.data.size:
        raise DimensionError(f"reshape: cannot view {tuple(a.data.shape)} as {shape}")
    old = a.data.shape
    return _result("reshape", a.data.reshape(shape).copy(), (a,), lambda g: (g.reshape(old),))


def mean_rows(a):
    """Mean over the rows of [n, d], kept as a [1, d] tensor."""
    ad = a.data
    if ad.ndim != 2 or ad.shape[0] == 0:
        raise ContractError(f"mean_rows: expected non-empty 2-D tensor, got {tuple(ad.shape)}")
    n = ad.shape[0]
    return _result(
        "mean_rows",
        ad.mean(axis=0, keepdims=True),
        (a,),
        lambda g: (np.repeat(g / n, n, axis=0),),
    )


def sum_all(a):
    """Sum of all entries as a scalar tensor."""
    shape = a.data.shape
    return _result("sum_all", np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def scale(a, c):
    """Multiply by a python float constant."""
    c = float(c)
    return _result("scale", a.data * c, (a,), lambda g: (g * c,))


def masked_cross_entropy(scores, targets, mask):
    """Mean negative log softmax likelihood over unmasked positions.

    ``scores`` is [t, v] pre-softmax, ``targets`` [t] int ids, ``mask`` [t]
    with 1 for real positions.  Masked positions contribute exactly zero.
    """
    z = scores.data
    if z.ndim != 2:
        raise DimensionError(f"masked_cross_entropy: scores must be 2-D, got {tuple(z.shape)}")
    idx = np.asarray(targets, dtype=np.int64)
    m = np.asarray(mask, dtype=np.float64)
    if idx.shape != (z.shape[0],) or m.shape != (z.shape[0],):
        raise DimensionError(
            f"masked_cross_entropy: targets {tuple(idx.shape)} / mask {tuple(m.shape)} "
            f"do not match scores {tuple(z.shape)}"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= z.shape[1]):
        raise ContractError("masked_cross_entropy: target id out of range")
    total = m.sum()
    if total <= 0:
        raise ContractError("masked_cross_entropy: mask selects no positions")

    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    denom = e.sum(axis=1)
    p = e / denom[:, None]
    nll = np.log(denom) + zmax[:, 0] - z[np.arange(z.shape[0]), idx]
    loss = float((nll * m).sum() / total)

    def grad_fn(g):
        gz = p.copy()
        gz[np.arange(z.shape[0]), idx] -= 1.0
        gz *= (m / total)[:, None]
        return (gz * float(g),)

    return _result("masked_cross_entropy", np.asarray(loss), (scores,), grad_fn)


# ---------------------------------------------------------------------------
# backward


def _toposort(root):
    """Iterative post-order over graph nodes reachable from ``root``."""
    order = []
    leaves = []
    seen = set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t.node is None:
            leaves.append(t)
            continue
        stack.append((t, True))
        for p in t.node.parents:
            stack.append((p, False))
    return order, leaves


def backward(loss):
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``."""
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {tuple(loss.data.shape)}")
    if loss.node is None:
        raise ContractError("backward: loss is not attached to a computation graph")

    order, leaves = _toposort(loss)
    if any(t.node.consumed for t in order):
        raise GraphStateError("backward: graph already consumed by a previous backward pass")

    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        t.node.consumed = True
        if g is None:
            continue
        if t.requires_grad:
            t.grad = g if t.grad is None else t.grad + g
        parent_grads = t.node.grad_fn(g)
        for p, pg in zip(t.node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            acc = grads.get(id(p))
            grads[id(p)] = pg if acc is None else acc + pg

    for leaf in leaves:
        g = grads.pop(id(leaf), None)
        if g is None or not leaf.requires_grad:
            continue
        leaf.grad = g if leaf.grad is None else leaf.grad + g
