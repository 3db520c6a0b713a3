"""Alignment models, the combined objective, and the deterministic training loop.

Optimizer is AdamW (b1=0.9, b2=0.999, decoupled weight decay) with cosine lr
decay over epochs, global-norm gradient clipping, linear warmup of the
regularization weight over optimizer steps, and optional early stopping on
validation R@1.
"""

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from . import autodiff as ad
from .errors import NonFiniteLoss, ShapeMismatch
from .rng import stream
from .store import EmbeddingMatrix, PairedDataset, save_embeddings, load_embeddings_with_ids
from .structure import StructureRegConfig, normalize_center, row_softmax, similarity_logits


@dataclass
class AlignmentModel:
    kind: str  # "linear" | "mlp"
    params: dict  # name -> ndarray; linear: f1.W, f2.W; mlp adds hidden layer + biases
    k: int
    d1: int
    d2: int

    def clone(self):
        return AlignmentModel(self.kind, {k: v.copy() for k, v in self.params.items()}, self.k, self.d1, self.d2)


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 4096
    lr: object = "auto"
    weight_decay: float = 1e-4
    grad_clip: float = 1.0
    early_stop_patience: int = 200
    lam: float = 10.0
    lam_warmup_steps: int = 1000
    reg: StructureRegConfig = field(default_factory=StructureRegConfig)
    seed: int = 0
    reg_subset: object = "batch"  # "batch" or ("fixed", n)

    @property
    def tau(self):
        # one temperature shared by the contrastive loss and the regularizer
        return self.reg.tau


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    contrastive: float
    reg_a: float
    reg_b: float
    lr: float
    val_r1: float


@dataclass
class TrainHistory:
    records: list
    stopped_early: bool = False

    def to_csv(self, path):
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "contrastive", "reg_a", "reg_b", "lr", "val_r1", "stopped_early"])
            for r in self.records:
                w.writerow([r.epoch, f"{r.loss:.17g}", f"{r.contrastive:.17g}", f"{r.reg_a:.17g}",
                            f"{r.reg_b:.17g}", f"{r.lr:.17g}", f"{r.val_r1:.17g}", int(self.stopped_early)])
        return path


def _rect_identity(k, d):
    w = np.zeros((k, d))
    m = min(k, d)
    w[np.arange(m), np.arange(m)] = 1.0
    return w


def init_model(kind: str, d1: int, d2: int, k: int = 512, seed: int = 0) -> AlignmentModel:
    """Linear weights start as rectangular identities; mlp hidden layers start orthogonal."""
    params = {}
    if kind == "linear":
        params["f1.W"] = _rect_identity(k, d1)
        params["f2.W"] = _rect_identity(k, d2)
    elif kind == "mlp":
        for side, d in (("f1", d1), ("f2", d2)):
            h = max(d, k)  # hidden width; h >= d always, so the economic QR is (h, d)
            g = stream(seed, f"init-{side}-hidden").standard_normal((h, d))
            q, _ = np.linalg.qr(g)
            params[f"{side}.W0"] = np.ascontiguousarray(q)
            params[f"{side}.b0"] = np.zeros((1, h))
            params[f"{side}.W1"] = _rect_identity(k, h)
            params[f"{side}.b1"] = np.zeros((1, k))
    else:
        raise ValueError(f"unknown model kind {kind}")
    return AlignmentModel(kind, params, k, d1, d2)


def apply_model(model: AlignmentModel, x, side: str) -> np.ndarray:
    """Numpy inference path, mirrors the graph forward exactly."""
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    p = model.params
    if model.kind == "linear":
        return x @ p[f"{side}.W"].T
    h = x @ p[f"{side}.W0"].T + p[f"{side}.b0"]
    h = h * 0.5 * (1.0 + erf(h / math.sqrt(2.0)))
    return h @ p[f"{side}.W1"].T + p[f"{side}.b1"]


def _forward_nodes(model, pn, x_node, side):
    if model.kind == "linear":
        return ad.matmul(x_node, ad.transpose(pn[f"{side}.W"]))
    h = ad.gelu(ad.add(ad.matmul(x_node, ad.transpose(pn[f"{side}.W0"])), pn[f"{side}.b0"]))
    return ad.add(ad.matmul(h, ad.transpose(pn[f"{side}.W1"])), pn[f"{side}.b1"])


def contrastive_loss(z1, z2, tau: float) -> float:
    """Symmetric cross-entropy of cosine logits; positives sit on the diagonal."""
    z1 = np.asarray(getattr(z1, "data", z1), dtype=np.float64)
    z2 = np.asarray(getattr(z2, "data", z2), dtype=np.float64)
    if z1.shape != z2.shape:
        raise ShapeMismatch(f"{z1.shape} vs {z2.shape}")
    if tau <= 0:
        raise ValueError("tau must be positive")
    z1n = z1 / np.maximum(np.linalg.norm(z1, axis=1, keepdims=True), 1e-12)
    z2n = z2 / np.maximum(np.linalg.norm(z2, axis=1, keepdims=True), 1e-12)
    logits = z1n @ z2n.T / tau

    def ce_rows(l):
        m = l.max(axis=1, keepdims=True)
        lse = np.log(np.sum(np.exp(l - m), axis=1)) + m[:, 0]
        return float(np.mean(lse - np.diag(l)))

    return 0.5 * (ce_rows(logits) + ce_rows(logits.T))


def _reg_nodes(x_frozen, a_node, reg: StructureRegConfig):
    """Regularizer subgraph; the frozen input path is precomputed numpy constants."""
    px = row_softmax(similarity_logits(normalize_center(x_frozen, reg.eps), reg.tau)).P
    at = ad.center_cols(ad.row_normalize(a_node, reg.eps))
    pa = ad.row_softmax_op(ad.scale(ad.gram(at), 1.0 / reg.tau))
    total = None
    px_l = px
    for level in range(1, reg.levels + 1):
        if level > 1:
            px_l = px_l @ px
        pa_l = pa if level == 1 else ad.matrix_power_op(pa, level)
        term = ad.scale(ad.js_div_op(ad.constant(px_l), pa_l, reg.eps), 1.0 / level)
        total = term if total is None else ad.add(total, term)
    return ad.scale(total, 1.0 / reg.levels)


def effective_lambda(cfg: TrainConfig, step: int) -> float:
    if cfg.lam_warmup_steps <= 0:
        return cfg.lam
    return cfg.lam * min(1.0, step / cfg.lam_warmup_steps)


def _fixed_count(reg_subset):
    """None for whole-batch mode, otherwise the pinned row count."""
    if reg_subset is None or reg_subset == "batch":
        return None
    if (isinstance(reg_subset, (tuple, list)) and len(reg_subset) == 2
            and reg_subset[0] == "fixed"):
        return int(reg_subset[1])
    raise ValueError(f"bad reg_subset {reg_subset!r}; expected 'batch' or ('fixed', n)")


def combined_loss(batch: PairedDataset, model: AlignmentModel, cfg: TrainConfig, step: int,
                  reg_x1=None, reg_x2=None):
    """Build the full objective graph. Returns (loss_node, param_nodes, parts)."""
    x1 = batch.modality_a.data
    x2 = batch.modality_b.data
    if reg_x1 is None or reg_x2 is None:
        nfix = _fixed_count(cfg.reg_subset)
        if nfix is not None:
            reg_x1, reg_x2 = x1[:nfix], x2[:nfix]
        else:
            reg_x1, reg_x2 = x1, x2
    pn = {name: ad.param(arr, name) for name, arr in model.params.items()}
    x1n, x2n = ad.constant(x1), ad.constant(x2)
    z1 = _forward_nodes(model, pn, x1n, "f1")
    z2 = _forward_nodes(model, pn, x2n, "f2")
    z1u = ad.row_normalize(z1, 1e-12)
    z2u = ad.row_normalize(z2, 1e-12)
    logits = ad.scale(ad.matmul(z1u, ad.transpose(z2u)), 1.0 / cfg.tau)
    contr = ad.scale(ad.add(ad.xent_diag_rows(logits), ad.xent_diag_rows(ad.transpose(logits))), 0.5)
    lam_t = effective_lambda(cfg, step)
    parts = {"contrastive": float(contr.value), "reg_a": 0.0, "reg_b": 0.0, "lam_t": lam_t}
    if lam_t > 0.0:
        # the regularizer may watch a fixed anchor subset instead of the batch
        z1r = _forward_nodes(model, pn, ad.constant(reg_x1), "f1")
        z2r = _forward_nodes(model, pn, ad.constant(reg_x2), "f2")
        reg_a = _reg_nodes(reg_x1, z1r, cfg.reg)
        reg_b = _reg_nodes(reg_x2, z2r, cfg.reg)
        parts["reg_a"], parts["reg_b"] = float(reg_a.value), float(reg_b.value)
        loss = ad.add(contr, ad.scale(ad.add(reg_a, reg_b), lam_t))
    else:
        loss = contr
    return loss, pn, parts


def _cosine_lr(lr0, epoch, epochs):
    if epochs <= 1:
        return lr0
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / (epochs - 1)))


def _clip_global(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm and total > 0:
        s = max_norm / total
        for name in grads:
            grads[name] = grads[name] * s
    return total


def _val_r1(model, ds):
    from .evalmetrics import retrieval

    z1 = apply_model(model, ds.modality_a, "f1")
    z2 = apply_model(model, ds.modality_b, "f2")
    a = retrieval(z1, z2, [1]).recall_at[1]
    b = retrieval(z2, z1, [1]).recall_at[1]
    return 0.5 * (a + b)


def train(ds_train: PairedDataset, ds_val, model: AlignmentModel, cfg: TrainConfig):
    """Returns (trained model, TrainHistory). With a validation set the best-R@1
    parameters are returned, otherwise the final-epoch parameters."""
    model = model.clone()
    n = ds_train.n
    if cfg.epochs == 0:
        return model, TrainHistory([], False)
    lr0 = cfg.lr
    if lr0 == "auto":
        lr0 = lr_range_test(ds_train, model, cfg).suggested_lr
    bs = min(cfg.batch_size, n)
    full_batch = bs >= n
    nfix = _fixed_count(cfg.reg_subset)
    if nfix is not None:
        if not 2 <= nfix <= n:
            raise ValueError(f"fixed reg subset size {nfix} out of range")
        fixed1, fixed2 = ds_train.modality_a.data[:nfix], ds_train.modality_b.data[:nfix]
    else:
        fixed1 = fixed2 = None

    mstate = {k: np.zeros_like(v) for k, v in model.params.items()}
    vstate = {k: np.zeros_like(v) for k, v in model.params.items()}
    b1, b2, adam_eps = 0.9, 0.999, 1e-8
    t = 0
    global_step = 0
    records = []
    best_r1, best_params, since_best = -1.0, None, 0
    stopped = False

    for epoch in range(cfg.epochs):
        lr = _cosine_lr(lr0, epoch, cfg.epochs)
        if full_batch:
            batch_slices = [np.arange(n)]
        else:
            order = stream(cfg.seed, f"shuffle-{epoch}").permutation(n)
            batch_slices = [order[i:i + bs] for i in range(0, n, bs)]
        ep_loss = ep_con = ep_ra = ep_rb = 0.0
        for idx in batch_slices:
            batch = PairedDataset(
                EmbeddingMatrix(ds_train.modality_a.data[idx]),
                EmbeddingMatrix(ds_train.modality_b.data[idx]),
                [ds_train.ids[i] for i in idx],
            )
            loss_node, _, parts = combined_loss(batch, model, cfg, global_step,
                                                reg_x1=fixed1, reg_x2=fixed2)
            total = float(loss_node.value)
            if not math.isfinite(total):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}: parts={parts}")
            grads = ad.backward(loss_node)
            _clip_global(grads, cfg.grad_clip)
            t += 1
            for name in sorted(grads):
                g = grads[name]
                mstate[name] = b1 * mstate[name] + (1 - b1) * g
                vstate[name] = b2 * vstate[name] + (1 - b2) * g * g
                mh = mstate[name] / (1 - b1**t)
                vh = vstate[name] / (1 - b2**t)
                model.params[name] -= lr * (mh / (np.sqrt(vh) + adam_eps)
                                            + cfg.weight_decay * model.params[name])
            global_step += 1
            w = len(idx) / n
            ep_loss += w * total
            ep_con += w * parts["contrastive"]
            ep_ra += w * parts["reg_a"]
            ep_rb += w * parts["reg_b"]
        val = math.nan
        if ds_val is not None:
            val = _val_r1(model, ds_val)
            if val > best_r1:
                best_r1, since_best = val, 0
                best_params = {k: v.copy() for k, v in model.params.items()}
            else:
                since_best += 1
                if since_best >= cfg.early_stop_patience:
                    records.append(EpochRecord(epoch, ep_loss, ep_con, ep_ra, ep_rb, lr, val))
                    stopped = True
                    break
        records.append(EpochRecord(epoch, ep_loss, ep_con, ep_ra, ep_rb, lr, val))
    if ds_val is not None and best_params is not None:
        model.params = best_params
    return model, TrainHistory(records, stopped)


@dataclass
class LrRangeResult:
    suggested_lr: float
    diverged: bool
    losses: list  # (lr, loss)


def lr_range_test(ds: PairedDataset, model: AlignmentModel, cfg: TrainConfig,
                  lr_min: float = 1e-5, lr_max: float = 1.0, steps: int = 50) -> LrRangeResult:
    """Exponential lr sweep on a clone; suggests one decade below the divergence point."""
    if not lr_min < lr_max:
        raise ValueError("lr_min must be < lr_max")
    if steps < 10:
        raise ValueError("steps must be >= 10")
    probe = model.clone()
    mstate = {k: np.zeros_like(v) for k, v in probe.params.items()}
    vstate = {k: np.zeros_like(v) for k, v in probe.params.items()}
    b1, b2, adam_eps = 0.9, 0.999, 1e-8
    losses = []
    best = math.inf
    n = ds.n
    bs = min(cfg.batch_size, n)
    idx = np.arange(bs)
    batch = PairedDataset(
        EmbeddingMatrix(ds.modality_a.data[idx]),
        EmbeddingMatrix(ds.modality_b.data[idx]),
        [ds.ids[i] for i in idx],
    )
    for i in range(steps):
        lr = lr_min * (lr_max / lr_min) ** (i / (steps - 1))
        loss_node, _, _ = combined_loss(batch, probe, cfg, step=i)
        loss = float(loss_node.value)
        losses.append((lr, loss))
        if not math.isfinite(loss) or loss > 4.0 * best:
            return LrRangeResult(lr / 10.0, True, losses)
        best = min(best, loss)
        grads = ad.backward(loss_node)
        _clip_global(grads, cfg.grad_clip)
        for name in sorted(grads):
            g = grads[name]
            mstate[name] = b1 * mstate[name] + (1 - b1) * g
            vstate[name] = b2 * vstate[name] + (1 - b2) * g * g
            mh = mstate[name] / (1 - b1 ** (i + 1))
            vh = vstate[name] / (1 - b2 ** (i + 1))
            probe.params[name] -= lr * (mh / (np.sqrt(vh) + adam_eps)
                                        + cfg.weight_decay * probe.params[name])
    return LrRangeResult(lr_max / 10.0, False, losses)


def _config_dict(cfg: TrainConfig):
    d = dict(cfg.__dict__)
    d["reg"] = dict(cfg.reg.__dict__)
    d["reg_subset"] = list(cfg.reg_subset) if isinstance(cfg.reg_subset, tuple) else cfg.reg_subset
    return d


def config_hash(cfg: TrainConfig) -> str:
    blob = json.dumps(_config_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def save_checkpoint(dirpath, model: AlignmentModel, cfg: TrainConfig):
    """One EMB1 file per parameter plus a JSON sidecar; byte-deterministic."""
    os.makedirs(dirpath, exist_ok=True)
    files = {}
    for name in sorted(model.params):
        arr = model.params[name]
        fname = name.replace(".", "_") + ".emb1"
        mat = EmbeddingMatrix(arr if arr.ndim == 2 else arr.reshape(1, -1), dtype="f64")
        save_embeddings(os.path.join(dirpath, fname), mat, [f"{name}:{i}" for i in range(mat.n)])
        files[name] = fname
    sidecar = {
        "kind": model.kind,
        "d1": model.d1,
        "d2": model.d2,
        "k": model.k,
        "config_hash": config_hash(cfg),
        "config": _config_dict(cfg),
        "params": files,
    }
    with open(os.path.join(dirpath, "sidecar.json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, separators=(",", ":"))
    return dirpath


def load_checkpoint(dirpath):
    with open(os.path.join(dirpath, "sidecar.json"), "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    params = {}
    for name, fname in sidecar["params"].items():
        mat, _ = load_embeddings_with_ids(os.path.join(dirpath, fname))
        params[name] = mat.data
    model = AlignmentModel(sidecar["kind"], params, sidecar["k"], sidecar["d1"], sidecar["d2"])
    return model, sidecar
