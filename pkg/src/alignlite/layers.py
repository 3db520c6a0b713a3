"""Representational-similarity metrics and the layer-pair selection procedure."""

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegenerateInput, EmptyGrid, IdMismatch, KTooLarge, NTooSmall, UnknownKind
from .rng import stream


@dataclass
class SimilarityGrid:
    metric_name: str
    rows: list  # (layer_a_index, layer_b_index, score)
    sample_count: int


@dataclass
class SelectionResult:
    best_pair: tuple
    score: float
    tie_policy_applied: bool


def rice_k(n: int) -> int:
    """Neighborhood size ceil(2 * N^(1/3)), computed in exact integer arithmetic."""
    if n < 1:
        raise ValueError("N must be >= 1")
    k = 1
    while k * k * k < 8 * n:
        k += 1
    return k


def _as_array(x):
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def _cosine_sims(x):
    norms = np.sqrt(np.sum(x * x, axis=1, keepdims=True))
    xn = x / np.maximum(norms, 1e-12)
    return xn @ xn.T


def _knn_indices(x, k):
    """Top-k cosine neighbors per row, self excluded, ties to the lower index."""
    sims = _cosine_sims(x)
    n = sims.shape[0]
    np.fill_diagonal(sims, -np.inf)
    cols = np.arange(n)
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        order = np.lexsort((cols, -sims[i]))
        out[i] = order[:k]
    return out


def mutual_knn(a, b, k: int) -> float:
    """Mean fraction of shared cosine k-neighborhoods across the paired index set."""
    a, b = _as_array(a), _as_array(b)
    n = a.shape[0]
    if b.shape[0] != n:
        raise IdMismatch(f"N differs: {n} vs {b.shape[0]}")
    if k >= n:
        raise KTooLarge(f"k={k} must be < N={n}")
    if k < 1:
        raise ValueError("k must be >= 1")
    nn_a = _knn_indices(a, k)
    nn_b = _knn_indices(b, k)
    return _kernels.topk_overlap(nn_a, nn_b) / (n * k)


def _center_cols(x):
    return x - x.mean(axis=0, keepdims=True)


def cka(a, b) -> float:
    """Linear CKA via the feature-space form ||B~^T A~||_F^2 / (||A~^T A~||_F ||B~^T B~||_F)."""
    a, b = _as_array(a), _as_array(b)
    if a.shape[0] != b.shape[0] or a.shape[0] < 2:
        raise IdMismatch("matrices must share N >= 2")
    ac, bc = _center_cols(a), _center_cols(b)
    cross = np.linalg.norm(bc.T @ ac, "fro") ** 2
    na = np.linalg.norm(ac.T @ ac, "fro")
    nb = np.linalg.norm(bc.T @ bc, "fro")
    if na == 0 or nb == 0:
        raise DegenerateInput("zero Frobenius norm after centering")
    return float(cross / (na * nb))


def _hsic1(k, l):
    # U-statistic HSIC with zeroed gram diagonals
    n = k.shape[0]
    kt = k.copy()
    lt = l.copy()
    np.fill_diagonal(kt, 0.0)
    np.fill_diagonal(lt, 0.0)
    ones = np.ones(n)
    term1 = float(np.sum(kt * lt))
    term2 = float(ones @ kt @ ones) * float(ones @ lt @ ones) / ((n - 1) * (n - 2))
    term3 = 2.0 / (n - 2) * float(ones @ kt @ lt @ ones)
    return (term1 + term2 - term3) / (n * (n - 3))


def unbiased_cka(a, b) -> float:
    """HSIC U-statistic variant; removes small-sample overestimation, may go slightly negative."""
    a, b = _as_array(a), _as_array(b)
    n = a.shape[0]
    if b.shape[0] != n:
        raise IdMismatch(f"N differs: {n} vs {b.shape[0]}")
    if n < 4:
        raise NTooSmall("unbiased estimator needs N >= 4")
    gk = a @ a.T
    gl = b @ b.T
    hxy = _hsic1(gk, gl)
    hxx = _hsic1(gk, gk)
    hyy = _hsic1(gl, gl)
    if hxx <= 0 or hyy <= 0:
        raise DegenerateInput("non-positive self-HSIC")
    return float(hxy / np.sqrt(hxx * hyy))


def build_grid(bank_a, bank_b, metric: str, sample_count: int, seed: int, k: int = None) -> SimilarityGrid:
    """One similarity score per layer pair on a seeded subsample of the shared ids."""
    if bank_a.sample_ids != bank_b.sample_ids:
        raise IdMismatch("banks must share sample_ids")
    n = len(bank_a.sample_ids)
    if sample_count > n:
        raise IdMismatch(f"sample_count={sample_count} exceeds N={n}")
    idx = stream(seed, "grid-subsample").permutation(n)[:sample_count]
    idx = np.sort(idx)
    if metric == "mutual_knn_rice":
        kk = rice_k(sample_count)
        fn = lambda x, y: mutual_knn(x, y, kk)
        name = f"mutual_knn(k={kk})"
    elif metric == "mutual_knn_k":
        if k is None:
            raise ValueError("metric mutual_knn_k needs k")
        fn = lambda x, y: mutual_knn(x, y, k)
        name = f"mutual_knn(k={k})"
    elif metric == "cka":
        fn, name = cka, "cka"
    elif metric == "unbiased_cka":
        fn, name = unbiased_cka, "unbiased_cka"
    else:
        raise UnknownKind(f"unknown metric {metric}")
    rows = []
    for ia, ma in bank_a.layers:
        for ib, mb in bank_b.layers:
            rows.append((ia, ib, float(fn(ma.data[idx], mb.data[idx]))))
    return SimilarityGrid(name, rows, sample_count)


def select(grid: SimilarityGrid) -> SelectionResult:
    """Argmax over the grid; ties prefer the deepest layer_a, then deepest layer_b."""
    if not grid.rows:
        raise EmptyGrid("no grid rows")
    best = max(grid.rows, key=lambda r: (r[2], r[0], r[1]))
    tied = sum(1 for r in grid.rows if r[2] == best[2]) > 1
    return SelectionResult((best[0], best[1]), best[2], tied)


def selection_consistency(bank_a, bank_b, metric, sample_count, repeats: int, seed: int, k=None):
    """Selection frequency per layer pair over independent seeded subsamples."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    hist = {}
    for r in range(repeats):
        sub_seed = int(stream(seed, f"consistency-{r}").integers(2**63 - 1))
        grid = build_grid(bank_a, bank_b, metric, sample_count, sub_seed, k=k)
        pair = select(grid).best_pair
        hist[pair] = hist.get(pair, 0) + 1
    return hist


def grid_to_csv(grid: SimilarityGrid, path, seed=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["layer_a", "layer_b", "score", "metric", "n", "seed"])
        for ia, ib, score in grid.rows:
            w.writerow([ia, ib, f"{score:.12g}", grid.metric_name, grid.sample_count, seed])
    return path
