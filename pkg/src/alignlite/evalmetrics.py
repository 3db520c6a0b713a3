"""Downstream and diagnostic metrics: retrieval, zero-shot classification,
neighborhood preservation, utility, modality gap, and the concentration-bound
calculators with their empirical checker.

All similarity comparisons use cosine; neighborhood ranks use 1 - cosine.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import (
    DeltaOutOfRange,
    EmptyOverlap,
    KOutOfRange,
    LabelOutOfRange,
    SensitivityBoundExceeded,
    ShapeMismatch,
)
from .rng import stream
from .structure import StructureRegConfig, reg_structure


def _as_array(x):
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def _normalize_rows(x):
    return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)


@dataclass
class RetrievalReport:
    direction: str
    recall_at: dict  # k -> fraction
    n: int


@dataclass
class ClassPrototypes:
    labels: list
    prototypes: object  # EmbeddingMatrix or ndarray, C x d


@dataclass
class BoundReport:
    n: int
    delta_n: float
    eps: float
    confidence: float


def retrieval(z_query, z_gallery, ks, direction: str = "i2t") -> RetrievalReport:
    """R@k by cosine similarity; row i of the gallery is the true match of query i.
    Ties at the match similarity resolve toward the lower gallery index."""
    q, g = _as_array(z_query), _as_array(z_gallery)
    if q.shape != g.shape:
        raise ShapeMismatch(f"{q.shape} vs {g.shape}")
    sims = _normalize_rows(q) @ _normalize_rows(g).T
    ranks = _kernels.match_ranks(sims)  # 0-based rank of the true match
    n = q.shape[0]
    recall = {}
    for k in ks:
        recall[int(k)] = float(np.mean(ranks < k))
    return RetrievalReport(direction, recall, n)


def zero_shot_classify(embeddings, prototypes: ClassPrototypes, true_labels):
    """Cosine argmax over class prototypes; ties resolve to the lowest class index.
    Returns {"top1": acc} plus "top5" when there are at least 5 classes."""
    emb = _as_array(embeddings)
    protos = _as_array(prototypes.prototypes)
    c = protos.shape[0]
    labels = np.asarray(true_labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= c:
        raise LabelOutOfRange(f"labels must lie in [0, {c})")
    sims = _normalize_rows(emb) @ _normalize_rows(protos).T
    pred = np.argmax(sims, axis=1)  # argmax takes the first (lowest) index on ties
    out = {"top1": float(np.mean(pred == labels))}
    if c >= 5:
        top5 = np.argsort(-sims, axis=1, kind="stable")[:, :5]
        out["top5"] = float(np.mean(np.any(top5 == labels[:, None], axis=1)))
    return out


def _neighbor_order(x):
    """Full neighbor ordering per row by cosine distance, ties to the lower index, self excluded."""
    sims = _normalize_rows(x) @ _normalize_rows(x).T
    n = sims.shape[0]
    np.fill_diagonal(sims, np.inf)  # self sorts first, then gets dropped
    cols = np.arange(n)
    orders = np.empty((n, n - 1), dtype=np.int64)
    for i in range(n):
        order = np.lexsort((cols, -sims[i]))
        orders[i] = order[1:]  # drop self
    return orders


def _rank_matrix(orders):
    n = orders.shape[0]
    ranks = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        ranks[i, orders[i]] = np.arange(1, n, dtype=np.int64)
    return ranks


def trustworthiness(original, aligned, k: int) -> float:
    """1 - 2/(N k (2N-3k-1)) * sum over aligned-space k-neighbors absent from the
    original k-neighborhood of (original rank - k)."""
    x, y = _as_array(original), _as_array(aligned)
    n = x.shape[0]
    if y.shape[0] != n:
        raise ShapeMismatch(f"N differs: {n} vs {y.shape[0]}")
    if not 1 <= k < n / 2:
        raise KOutOfRange(f"need 1 <= k < N/2, got k={k}, N={n}")
    ranks_orig = _rank_matrix(_neighbor_order(x))
    nn_aligned = _neighbor_order(y)[:, :k]
    penalty = _kernels.rank_penalty(ranks_orig, nn_aligned, k)
    return 1.0 - 2.0 * penalty / (n * k * (2 * n - 3 * k - 1))


def continuity(original, aligned, k: int) -> float:
    return trustworthiness(aligned, original, k)


@dataclass
class UtilityResult:
    mean_u: float
    per_point: list  # (N, metric, N_hat, U) for usable points
    skipped: list  # N values where the baseline never reaches the metric


def utility(curve_reg, curve_base) -> UtilityResult:
    """Label-efficiency multiplier: U(N) = N_hat/N - 1, where N_hat is the smallest
    baseline sample count whose interpolated metric reaches the regularized value."""
    base = sorted((float(n), float(m)) for n, m in curve_base)
    if not base or not curve_reg:
        raise EmptyOverlap("empty curve")
    per_point, skipped = [], []
    for n, m in curve_reg:
        n, m = float(n), float(m)
        nhat = None
        # walk segments in ascending N; first crossing wins
        if base[0][1] >= m:
            nhat = base[0][0]
        else:
            for (n0, m0), (n1, m1) in zip(base, base[1:]):
                if m1 >= m:
                    if m1 == m0:
                        nhat = n1
                    else:
                        frac = (m - m0) / (m1 - m0)
                        nhat = n0 + frac * (n1 - n0)
                    break
        if nhat is None:
            skipped.append(n)
        else:
            per_point.append((n, m, nhat, nhat / n - 1.0))
    if not per_point:
        raise EmptyOverlap("baseline never reaches any regularized metric value")
    return UtilityResult(float(np.mean([p[3] for p in per_point])), per_point, skipped)


def modality_gap(z1, z2) -> float:
    """Euclidean distance between the means of the row-normalized embeddings."""
    a, b = _as_array(z1), _as_array(z2)
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"k differs: {a.shape[1]} vs {b.shape[1]}")
    return float(np.linalg.norm(_normalize_rows(a).mean(axis=0) - _normalize_rows(b).mean(axis=0)))


def sensitivity_bound(n: int) -> float:
    """Worst-case change of the regularizer when one paired sample is replaced: 4 ln2 / N."""
    if n < 1:
        raise ValueError("N must be >= 1")
    return 4.0 * math.log(2.0) / n


def mcdiarmid_bound(n: int, delta: float) -> float:
    """Concentration radius 2*sqrt(2)*ln2*sqrt(ln(2/delta)/N) at confidence 1-delta."""
    if not 0.0 < delta < 1.0:
        raise DeltaOutOfRange(f"delta={delta} must lie in (0,1)")
    if n < 1:
        raise ValueError("N must be >= 1")
    return 2.0 * math.sqrt(2.0) * math.log(2.0) * math.sqrt(math.log(2.0 / delta) / n)


def bound_report(n: int, delta: float) -> BoundReport:
    return BoundReport(n, sensitivity_bound(n), mcdiarmid_bound(n, delta), delta)


def empirical_sensitivity(x, a, cfg: StructureRegConfig = None, trials: int = 100,
                          seed: int = 0, check: bool = True) -> float:
    """Max |change| of reg_structure over random single-pair replacements.
    With check=True a value above the 4 ln2 / N bound raises."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if cfg is None:
        cfg = StructureRegConfig()
    x, a = _as_array(x).copy(), _as_array(a).copy()
    n = x.shape[0]
    base = reg_structure(x, a, cfg)
    rng = stream(seed, "sensitivity")
    worst = 0.0
    for _ in range(trials):
        i = int(rng.integers(n))
        old_x, old_a = x[i].copy(), a[i].copy()
        x[i] = rng.standard_normal(x.shape[1])
        a[i] = rng.standard_normal(a.shape[1])
        delta = abs(reg_structure(x, a, cfg) - base)
        worst = max(worst, delta)
        x[i], a[i] = old_x, old_a
    if check and worst > sensitivity_bound(n):
        raise SensitivityBoundExceeded(f"max |delta|={worst:.6g} > bound {sensitivity_bound(n):.6g}")
    return worst
