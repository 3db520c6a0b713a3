"""Forward computation of the neighborhood-geometry regularizer and its building blocks.

Pipeline per input matrix: row l2-normalize -> column-center -> similarity logits
(gram / tau) -> row softmax -> optional matrix powers. The penalty is the
Jensen-Shannon divergence between the two resulting row-stochastic matrices,
summed over all entries, averaged over levels with weight 1/l.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import _kernels
from .errors import ShapeMismatch, UnknownKind


@dataclass
class StructureRegConfig:
    levels: int = 1
    tau: float = 0.05
    eps: float = 1e-8

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.tau <= 0 or self.eps <= 0:
            raise ValueError("tau and eps must be positive")


@dataclass
class SimilarityDistribution:
    P: np.ndarray  # N x N row-stochastic
    tau_used: float


def _as_array(x):
    data = getattr(x, "data", x)
    return np.asarray(data, dtype=np.float64)


def normalize_center(x, eps: float = 1e-8) -> np.ndarray:
    """Row l2-normalize (norm floored at eps), then subtract the column mean."""
    x = _as_array(x)
    norms = np.sqrt(np.sum(x * x, axis=1, keepdims=True))
    if np.any(norms <= eps):
        warnings.warn("zero-norm row in normalize_center; eps floor applied", RuntimeWarning)
    xhat = x / np.maximum(norms, eps)
    return xhat - xhat.mean(axis=0, keepdims=True)


def similarity_logits(xt, tau: float) -> np.ndarray:
    if tau <= 0:
        raise ValueError("tau must be positive")
    xt = _as_array(xt)
    return xt @ xt.T / tau


def row_softmax(s, tau_used: float = np.nan) -> SimilarityDistribution:
    s = _as_array(s)
    shifted = s - s.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return SimilarityDistribution(e / e.sum(axis=1, keepdims=True), tau_used)


def matrix_power(p, l: int) -> np.ndarray:
    if l < 1:
        raise ValueError("power must be >= 1")
    p = p.P if isinstance(p, SimilarityDistribution) else _as_array(p)
    out = p
    for _ in range(l - 1):
        out = out @ p
    return out


def js_divergence(p, q, eps: float) -> float:
    """0.5 KL(P||M) + 0.5 KL(Q||M), M=(P+Q)/2, natural log, eps inside every log,
    summed over all entries."""
    p = p.P if isinstance(p, SimilarityDistribution) else _as_array(p)
    q = q.P if isinstance(q, SimilarityDistribution) else _as_array(q)
    if p.shape != q.shape:
        raise ShapeMismatch(f"{p.shape} vs {q.shape}")
    return _kernels.js_sum(p, q, eps)


def reg_structure(x, a, cfg: StructureRegConfig = None) -> float:
    """Multi-level penalty: (1/L) * sum_l JS(P_x^l, P_a^l) / l."""
    if cfg is None:
        cfg = StructureRegConfig()
    x, a = _as_array(x), _as_array(a)
    if x.shape[0] != a.shape[0]:
        raise ShapeMismatch(f"N differs: {x.shape[0]} vs {a.shape[0]}")
    if x.shape[0] < 2:
        raise ShapeMismatch("need N >= 2")
    px = row_softmax(similarity_logits(normalize_center(x, cfg.eps), cfg.tau)).P
    pa = row_softmax(similarity_logits(normalize_center(a, cfg.eps), cfg.tau)).P
    px_l, pa_l = px, pa
    total = 0.0
    for level in range(1, cfg.levels + 1):
        if level > 1:
            px_l = px_l @ px
            pa_l = pa_l @ pa
        total += js_divergence(px_l, pa_l, cfg.eps) / level
    return total / cfg.levels


def _rbf_logits(xt):
    # squared distances from the gram; bandwidth = median pairwise distance
    g = xt @ xt.T
    sq = np.maximum(np.diag(g)[:, None] + np.diag(g)[None, :] - 2 * g, 0.0)
    dist = np.sqrt(sq)
    iu = np.triu_indices(len(dist), k=1)
    sigma = float(np.median(dist[iu])) if iu[0].size else 1.0
    if sigma <= 0:
        sigma = 1.0
    return -sq / (2.0 * sigma * sigma)


def _spearman_logits(xt, tau):
    ranks = np.vstack([rankdata(row, method="average") for row in xt])
    ranks = ranks - ranks.mean(axis=1, keepdims=True)
    denom = np.sqrt(np.sum(ranks * ranks, axis=1, keepdims=True))
    denom = np.maximum(denom, 1e-12)
    rn = ranks / denom
    return rn @ rn.T / tau


def sum_sq_distance_variants(xt, at, kind: str, tau: float = 0.05):
    """Alternate similarity backends for the ablation driver; cosine-gram is the default path."""
    xt, at = _as_array(xt), _as_array(at)
    if kind == "cosine-gram":
        sx, sa = similarity_logits(xt, tau), similarity_logits(at, tau)
    elif kind == "rbf":
        sx, sa = _rbf_logits(xt), _rbf_logits(at)
    elif kind == "spearman":
        sx, sa = _spearman_logits(xt, tau), _spearman_logits(at, tau)
    else:
        raise UnknownKind(kind)
    return row_softmax(sx, tau), row_softmax(sa, tau)
