"""Closed-graph reverse-mode differentiation for the training objective.

The op vocabulary is fixed: matmul, transpose, add, scale, gram, row normalize,
column center, row softmax, matrix power, JS divergence, diagonal cross-entropy,
gelu. Each op computes its forward value eagerly and registers one VJP closure
per parent; backward walks the DAG once in reverse topological order.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import CycleDetected, NonScalarLoss


class Node:
    __slots__ = ("value", "parents", "vjps", "adjoint", "trainable", "name")

    def __init__(self, value, parents=(), vjps=(), trainable=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.vjps = tuple(vjps)
        self.adjoint = None
        self.trainable = trainable
        self.name = name


def constant(value, name=None) -> Node:
    return Node(value, name=name)


def param(value, name) -> Node:
    return Node(value, trainable=True, name=name)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def matmul(a: Node, b: Node) -> Node:
    return Node(
        a.value @ b.value,
        (a, b),
        (lambda g: g @ b.value.T, lambda g: a.value.T @ g),
    )


def transpose(a: Node) -> Node:
    return Node(a.value.T, (a,), (lambda g: g.T,))


def add(a: Node, b: Node) -> Node:
    return Node(
        a.value + b.value,
        (a, b),
        (lambda g: _unbroadcast(g, a.value.shape), lambda g: _unbroadcast(g, b.value.shape)),
    )


def scale(a: Node, c: float) -> Node:
    return Node(c * a.value, (a,), (lambda g: c * g,))


def gram(a: Node) -> Node:
    # G = A A^T; dL/dA = (g + g^T) A
    return Node(a.value @ a.value.T, (a,), (lambda g: (g + g.T) @ a.value,))


def row_normalize(a: Node, eps: float) -> Node:
    x = a.value
    norms = np.sqrt(np.sum(x * x, axis=1, keepdims=True))
    denom = np.maximum(norms, eps)
    y = x / denom
    clamped = norms <= eps

    def vjp(g):
        dot = np.sum(g * y, axis=1, keepdims=True)
        smooth = (g - dot * y) / denom
        # below the floor the map is exactly x/eps, which is linear
        return np.where(clamped, g / eps, smooth)

    return Node(y, (a,), (vjp,))


def center_cols(a: Node) -> Node:
    y = a.value - a.value.mean(axis=0, keepdims=True)
    return Node(y, (a,), (lambda g: g - g.mean(axis=0, keepdims=True),))


def row_softmax_op(s: Node) -> Node:
    z = s.value - s.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return p * (g - np.sum(g * p, axis=1, keepdims=True))

    return Node(p, (s,), (vjp,))


def matrix_power_op(p: Node, l: int) -> Node:
    if l < 1:
        raise ValueError("power must be >= 1")
    val = p.value
    powers = [np.eye(val.shape[0]), val]  # P^0, P^1, ...
    for _ in range(l - 1):
        powers.append(powers[-1] @ val)

    def vjp(g):
        # product rule over the l-fold product: sum_j (P^T)^j g (P^T)^(l-1-j)
        out = np.zeros_like(val)
        for j in range(l):
            out += powers[j].T @ g @ powers[l - 1 - j].T
        return out

    return Node(powers[l], (p,), (vjp,))


def js_div_op(p: Node, q: Node, eps: float) -> Node:
    pv, qv = p.value, q.value
    m = 0.5 * (pv + qv)
    lp, lq, lm = np.log(pv + eps), np.log(qv + eps), np.log(m + eps)
    value = 0.5 * (np.sum(pv * (lp - lm)) + np.sum(qv * (lq - lm)))

    def vjp_p(g):
        return float(g) * 0.5 * (lp - lm + pv / (pv + eps) - m / (m + eps))

    def vjp_q(g):
        return float(g) * 0.5 * (lq - lm + qv / (qv + eps) - m / (m + eps))

    return Node(value, (p, q), (vjp_p, vjp_q))


def xent_diag_rows(logits: Node) -> Node:
    """Mean over rows of -log softmax(row)[diagonal]; the positive pair sits on the diagonal."""
    lv = logits.value
    n = lv.shape[0]
    z = lv - lv.max(axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=1)) + lv.max(axis=1)
    value = float(np.mean(lse - np.diag(lv)))
    sm = np.exp(z) / np.sum(np.exp(z), axis=1, keepdims=True)

    def vjp(g):
        return float(g) * (sm - np.eye(n)) / n

    return Node(value, (logits,), (vjp,))


def sum_all(a: Node) -> Node:
    return Node(np.sum(a.value), (a,), (lambda g: float(g) * np.ones_like(a.value),))


def gelu(a: Node) -> Node:
    x = a.value
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return Node(x * cdf, (a,), (lambda g: g * (cdf + x * pdf),))


def topo_order(loss: Node):
    """Iterative post-order DFS; raises on back edges."""
    order, state = [], {}
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            state[id(node)] = 2
            order.append(node)
            continue
        st = state.get(id(node), 0)
        if st == 2:
            continue
        if st == 1:
            raise CycleDetected("graph contains a cycle")
        state[id(node)] = 1
        stack.append((node, True))
        for parent in node.parents:
            if state.get(id(parent), 0) == 1:
                raise CycleDetected("graph contains a cycle")
            if state.get(id(parent), 0) == 0:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> dict:
    """Accumulate adjoints; returns {name: grad} for trainable leaves."""
    if loss.value.shape != ():
        raise NonScalarLoss(f"loss has shape {loss.value.shape}")
    order = topo_order(loss)
    for node in order:
        node.adjoint = None
    loss.adjoint = np.ones(())
    grads = {}
    for node in reversed(order):
        if node.adjoint is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            contrib = vjp(node.adjoint)
            if parent.adjoint is None:
                parent.adjoint = np.zeros_like(parent.value)
            parent.adjoint = parent.adjoint + contrib
        if node.trainable:
            grads[node.name] = node.adjoint
    return grads


@dataclass
class GradReport:
    parameter_name: str
    analytic_grad_norm: float
    max_rel_error: float
    probe_count: int


def check_gradients(model, batch, cfg, probes: int = 24, seed: int = 0, fd_step: float = 1e-5) -> GradReport:
    """Compare analytic gradients against central finite differences on random coordinates."""
    from .rng import stream
    from .train import combined_loss

    if probes < 1:
        raise ValueError("probes must be >= 1")
    loss_node, _, _ = combined_loss(batch, model, cfg, step=cfg.lam_warmup_steps)
    grads = backward(loss_node)
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    rng = stream(seed, "gradcheck")
    names = sorted(model.params)
    worst, worst_name = 0.0, names[0]
    for _ in range(probes):
        name = names[int(rng.integers(len(names)))]
        arr = model.params[name]
        flat = int(rng.integers(arr.size))
        idx = np.unravel_index(flat, arr.shape)
        orig = arr[idx]
        arr[idx] = orig + fd_step
        up, _, _ = combined_loss(batch, model, cfg, step=cfg.lam_warmup_steps)
        arr[idx] = orig - fd_step
        dn, _, _ = combined_loss(batch, model, cfg, step=cfg.lam_warmup_steps)
        arr[idx] = orig
        fd = (float(up.value) - float(dn.value)) / (2 * fd_step)
        an = float(grads[name][idx])
        rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
        if rel > worst:
            worst, worst_name = rel, name
    return GradReport(worst_name, norm, worst, probes)
