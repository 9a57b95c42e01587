"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Covers exactly the operations needed by the rest of the package: dense
matmul, row-bias addition, ReLU, masked softmax over modality rows,
pairwise squared distances, sparse-constant matrix products for graph
aggregation, and a stabilized cross-entropy. Everything is double
precision by default; float32 is opt-in for the scalability benchmark.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

DEFAULT_DTYPE = np.float64

# Additive mask value standing in for -inf; large enough that exp() of a
# masked logit underflows to 0 after row-max shifting, small enough to
# avoid inf arithmetic.
NEG_MASK = 1e30


class NumericsError(ValueError):
    pass


class Tensor:
    """Node in the implicit compute tape.

    ``data`` is a row-major numpy array, immutable by convention after
    creation. Non-leaf tensors carry references to their parents and a
    backward closure.
    """

    __slots__ = ("data", "requires_grad", "grad", "parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, parents=(), backward=None,
                 op="leaf", checked=False):
        arr = np.asarray(data)
        if arr.dtype.kind not in "fiu":
            raise NumericsError(f"non-numeric tensor data ({arr.dtype})")
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        if checked and not np.all(np.isfinite(arr)):
            raise NumericsError("non-finite values in tensor")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.parents = parents
        self._backward = backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape})"


def constant(data, checked=False):
    return Tensor(data, requires_grad=False, op="const", checked=checked)


def parameter(data):
    return Tensor(np.array(data, copy=True), requires_grad=True, op="param")


class GradientMap(dict):
    """Per-parameter gradients keyed by registry name."""


class ComputeGraph:
    """Named registry of leaf parameters plus the backward driver.

    The tape itself lives on the tensors (parent links); this object only
    tracks which leaves are trainable parameters.
    """

    def __init__(self):
        self.params = {}

    def register(self, name, tensor):
        if name in self.params:
            raise NumericsError(f"duplicate parameter name {name!r}")
        if not tensor.requires_grad:
            raise NumericsError(f"parameter {name!r} must require grad")
        self.params[name] = tensor
        return tensor

    def add_parameter(self, name, data):
        return self.register(name, parameter(data))

    def backward(self, loss):
        """Reverse-mode gradients of a scalar loss for all registered parameters."""
        if loss.data.shape != ():
            raise NumericsError("backward requires a scalar loss")
        topo = _toposort(loss)
        for node in topo:
            node.grad = None
        loss.grad = np.ones((), dtype=loss.data.dtype)
        for node in reversed(topo):
            if node.grad is None or node._backward is None:
                continue
            node._backward(node.grad)
        grads = GradientMap()
        for name, p in self.params.items():
            if p.grad is None:
                grads[name] = np.zeros_like(p.data)
            else:
                grads[name] = p.grad
        return grads

    def values(self):
        return {name: p.data for name, p in self.params.items()}

    def set_values(self, values):
        for name, p in self.params.items():
            p.data = np.asarray(values[name], dtype=p.data.dtype).reshape(p.data.shape)


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _accum(tensor, grad):
    if tensor.grad is None:
        tensor.grad = grad.copy()
    else:
        tensor.grad = tensor.grad + grad


# ---------------------------------------------------------------------------
# ops


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise NumericsError(f"matmul shape mismatch {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return Tensor(out_data, parents=(a, b), backward=backward, op="matmul")


def add(a, b):
    """Elementwise addition; the only broadcast allowed is a row-vector bias."""
    if a.data.shape == b.data.shape:
        def backward(g):
            _accum(a, g)
            _accum(b, g)
    elif a.data.ndim == 2 and b.data.ndim == 1 and b.data.shape[0] == a.data.shape[1]:
        def backward(g):
            _accum(a, g)
            _accum(b, g.sum(axis=0))
    else:
        raise NumericsError(f"add shape mismatch {a.shape} + {b.shape}")
    return Tensor(a.data + b.data, parents=(a, b), backward=backward, op="add")


def mul(a, b):
    if a.data.shape != b.data.shape:
        raise NumericsError(f"mul shape mismatch {a.shape} * {b.shape}")

    def backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return Tensor(a.data * b.data, parents=(a, b), backward=backward, op="mul")


def scale(a, c):
    c = float(c)

    def backward(g):
        _accum(a, g * c)

    return Tensor(a.data * c, parents=(a,), backward=backward, op="scale")


def shift(a, c):
    c = float(c)

    def backward(g):
        _accum(a, g)

    return Tensor(a.data + c, parents=(a,), backward=backward, op="shift")


def relu(a):
    keep = a.data > 0

    def backward(g):
        _accum(a, g * keep)

    return Tensor(a.data * keep, parents=(a,), backward=backward, op="relu")


def log(a):
    def backward(g):
        _accum(a, g / a.data)

    return Tensor(np.log(a.data), parents=(a,), backward=backward, op="log")


def reciprocal(a):
    out_data = 1.0 / a.data

    def backward(g):
        _accum(a, -g * out_data * out_data)

    return Tensor(out_data, parents=(a,), backward=backward, op="reciprocal")


def mean_rows(a):
    if a.data.ndim != 2:
        raise NumericsError("mean_rows expects a matrix")
    n = a.data.shape[0]

    def backward(g):
        _accum(a, np.broadcast_to(g / n, a.data.shape).copy())

    return Tensor(a.data.mean(axis=0), parents=(a,), backward=backward, op="mean_rows")


def sum_all(a):
    def backward(g):
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return Tensor(a.data.sum(), parents=(a,), backward=backward, op="sum_all")


def dot_const(a, weights):
    """Scalar sum(a * weights) with constant weights."""
    w = np.asarray(weights, dtype=a.data.dtype)
    if w.shape != a.data.shape:
        raise NumericsError(f"dot_const shape mismatch {a.shape} vs {w.shape}")

    def backward(g):
        _accum(a, g * w)

    return Tensor((a.data * w).sum(), parents=(a,), backward=backward, op="dot_const")


def concat_last_dim(tensors):
    if not tensors:
        raise NumericsError("concat of nothing")
    lead = tensors[0].data.shape[:-1]
    for t in tensors:
        if t.data.shape[:-1] != lead:
            raise NumericsError("concat leading-shape mismatch")
    out_data = np.concatenate([t.data for t in tensors], axis=-1)
    widths = [t.data.shape[-1] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            _accum(t, g[..., lo:hi])

    return Tensor(out_data, parents=tuple(tensors), backward=backward, op="concat")


def slice_last_dim(a, start, stop):
    def backward(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        _accum(a, full)

    return Tensor(a.data[..., start:stop].copy(), parents=(a,), backward=backward,
                  op="slice")


def reshape(a, shape):
    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return Tensor(a.data.reshape(shape), parents=(a,), backward=backward, op="reshape")


def rowwise_scale(a, s):
    """Scale each row of a matrix by a per-row coefficient (N,) or (N,1)."""
    coeff = s.data.reshape(-1, 1)
    if coeff.shape[0] != a.data.shape[0]:
        raise NumericsError("rowwise_scale length mismatch")

    def backward(g):
        _accum(a, g * coeff)
        _accum(s, (g * a.data).sum(axis=1).reshape(s.data.shape))

    return Tensor(a.data * coeff, parents=(a, s), backward=backward, op="rowscale")


def select_rows(a, idx):
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)

    return Tensor(a.data[idx].copy(), parents=(a,), backward=backward, op="select")


def sparse_matmul_const(mat, a):
    """Product of a constant scipy sparse matrix with a dense tensor."""
    out_data = np.asarray(mat @ a.data)
    mat_t = mat.T.tocsr()

    def backward(g):
        _accum(a, np.asarray(mat_t @ g))

    return Tensor(out_data, parents=(a,), backward=backward, op="spmm")


def dropout(a, rate, rng):
    if rate <= 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    keep = keep.astype(a.data.dtype)

    def backward(g):
        _accum(a, g * keep)

    return Tensor(a.data * keep, parents=(a,), backward=backward, op="dropout")


def masked_softmax(logits, mask):
    """Row-wise softmax restricted to mask==1 entries.

    Masked entries get exactly zero probability and exactly zero gradient;
    implemented as an additive -1e30 followed by explicit zeroing, avoiding
    true -inf arithmetic.
    """
    m = np.asarray(mask, dtype=logits.data.dtype)
    if m.shape != logits.data.shape:
        raise NumericsError("mask shape mismatch")
    if np.any(m.sum(axis=1) < 1):
        raise NumericsError("patient with no available modality")
    z = logits.data + (m - 1.0) * NEG_MASK
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z) * m
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        gp = g * p
        _accum(logits, gp - p * gp.sum(axis=1, keepdims=True))

    return Tensor(p, parents=(logits,), backward=backward, op="masked_softmax")


def cross_entropy_sum(logits, labels):
    """Sum over rows of -log softmax(logits)[label], log-sum-exp stabilized."""
    y = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or y.shape != (logits.data.shape[0],):
        raise NumericsError("cross_entropy shape mismatch")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(len(y))
    loss = (lse - z[rows, y]).sum()
    probs = np.exp(z - lse[:, None])

    def backward(g):
        d = probs.copy()
        d[rows, y] -= 1.0
        _accum(logits, g * d)

    return Tensor(np.asarray(loss), parents=(logits,), backward=backward, op="ce")


def squared_euclidean_pairwise(z):
    """All-pairs squared Euclidean distances between rows of z."""
    if z.data.ndim != 2:
        raise NumericsError("pairwise distance expects a matrix")
    sq = (z.data * z.data).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (z.data @ z.data.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)

    def backward(g):
        sym = g + g.T
        _accum(z, 2.0 * (sym.sum(axis=1)[:, None] * z.data - sym @ z.data))

    return Tensor(d, parents=(z,), backward=backward, op="pairwise_sqdist")


# ---------------------------------------------------------------------------
# finite-difference oracle


def grad_check(build_loss, param_values, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``build_loss`` maps a dict of plain numpy parameter values to a
    ``(loss Tensor, ComputeGraph)`` pair; it is re-invoked at perturbed
    parameter values for the numeric side.
    """
    loss, graph = build_loss(param_values)
    if not np.isfinite(loss.data):
        raise NumericsError("non-finite loss in grad_check")
    analytic = graph.backward(loss)

    def eval_at(values):
        l, _ = build_loss(values)
        v = float(l.data)
        if not np.isfinite(v):
            raise NumericsError("non-finite loss during finite differences")
        return v

    max_err = 0.0
    for name, base in param_values.items():
        base = np.asarray(base, dtype=DEFAULT_DTYPE)
        flat = base.ravel()
        for j in range(flat.size):
            bumped = {k: np.array(v, dtype=DEFAULT_DTYPE, copy=True)
                      for k, v in param_values.items()}
            bumped[name].ravel()[j] = flat[j] + eps
            up = eval_at(bumped)
            bumped[name].ravel()[j] = flat[j] - eps
            down = eval_at(bumped)
            numeric = (up - down) / (2.0 * eps)
            a = analytic[name].ravel()[j]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            max_err = max(max_err, err)
    return max_err


def edge_average_matrix(n_nodes, dst, dtype=DEFAULT_DTYPE):
    """Sparse (N x E) matrix averaging per-edge rows into their target node.

    Nodes with no incoming edges get an all-zero row (empty neighborhood
    aggregates to the zero vector).
    """
    n_edges = len(dst)
    if n_edges == 0:
        return sp.csr_matrix((n_nodes, 0), dtype=dtype)
    counts = np.bincount(dst, minlength=n_nodes).astype(dtype)
    vals = 1.0 / counts[dst]
    return sp.csr_matrix((vals, (dst, np.arange(n_edges))),
                         shape=(n_nodes, n_edges), dtype=dtype)


def row_selector_matrix(n_rows, idx, dtype=DEFAULT_DTYPE):
    """Sparse (len(idx) x n_rows) selector for gathering rows."""
    idx = np.asarray(idx, dtype=np.int64)
    return sp.csr_matrix((np.ones(len(idx), dtype=dtype),
                          (np.arange(len(idx)), idx)),
                         shape=(len(idx), n_rows), dtype=dtype)
