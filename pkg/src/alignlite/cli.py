"""Command-line entry point. Exit codes: 0 success, 2 input/config error, 3 numerical failure.

Every command is deterministic given config + seed; artifact files contain no
timestamps, so reruns overwrite byte-identically.
"""

import argparse
import json
import os
import sys

import numpy as np

from .config import ExperimentConfig, load_config
from .errors import ConfigError, InputError, NumericalError
from .rng import derive_seed
from .store import (
    SplitSpec,
    compose_paired,
    load_embeddings_with_ids,
    load_layer_bank,
    subsample,
)


def _load_pair(cfg_data, prefix):
    pa, pb = cfg_data.get(f"{prefix}_a"), cfg_data.get(f"{prefix}_b")
    if pa is None or pb is None:
        return None
    a, ids_a = load_embeddings_with_ids(pa)
    b, ids_b = load_embeddings_with_ids(pb)
    if ids_a != ids_b:
        raise InputError(f"{prefix} modality files disagree on ids")
    return compose_paired(a, b, ids_a)


def cmd_inspect(args):
    path = args.path
    if path.endswith(".json"):
        from .store import load_layer_bank as _load

        bank = _load(path)
        print(f"layer bank: {len(bank.layers)} layers, N={len(bank.sample_ids)}")
        for idx, mat in bank.layers:
            print(f"  layer {idx}: N={mat.n} d={mat.d} dtype={mat.dtype}")
        return 0
    mat, ids = load_embeddings_with_ids(path)
    sample = ", ".join(ids[:5]) + (", ..." if len(ids) > 5 else "")
    print(f"N={mat.n} d={mat.d} dtype={mat.dtype}")
    print(f"ids: {sample}")
    print("finite: ok")
    return 0


def cmd_layer_select(args):
    from .layers import build_grid, grid_to_csv, select, selection_consistency

    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    section = cfg.layer_select
    bank_a = load_layer_bank(cfg.data["bank_a"])
    bank_b = load_layer_bank(cfg.data["bank_b"])
    if args.layer_window:
        lo, hi = (int(v) for v in args.layer_window.split(":"))
        bank_a.layers = [(i, m) for i, m in bank_a.layers if lo <= i <= hi]
        bank_b.layers = [(i, m) for i, m in bank_b.layers if lo <= i <= hi]
        if not bank_a.layers or not bank_b.layers:
            raise ConfigError(f"layer window {args.layer_window} leaves no layers")
    metric = args.metric or section.get("metric", "mutual_knn_rice")
    sample_count = int(section.get("sample_count", min(len(bank_a.sample_ids), 5000)))
    k = args.k if args.k is not None else section.get("k")
    out = args.out or cfg.out
    os.makedirs(out, exist_ok=True)
    repeats = args.repeats if args.repeats is not None else int(section.get("repeats", 1))
    grid = build_grid(bank_a, bank_b, metric, sample_count, seed, k=k)
    grid_to_csv(grid, os.path.join(out, "similarity_grid.csv"), seed=seed)
    result = select(grid)
    payload = {
        "best_pair": list(result.best_pair),
        "score": result.score,
        "tie_policy_applied": result.tie_policy_applied,
        "metric": grid.metric_name,
        "n": grid.sample_count,
        "seed": seed,
    }
    if repeats > 1:
        hist = selection_consistency(bank_a, bank_b, metric, sample_count, repeats, seed, k=k)
        payload["consistency"] = {f"{ia},{ib}": c for (ia, ib), c in sorted(hist.items())}
    with open(os.path.join(out, "selection.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    print(f"selected layers {result.best_pair} score={result.score:.6f}")
    return 0


def _apply_overrides(cfg: ExperimentConfig, args):
    if getattr(args, "lam", None) is not None:
        cfg.train.lam = args.lam
    if getattr(args, "levels", None) is not None:
        cfg.train.reg.levels = args.levels
    if getattr(args, "tau", None) is not None:
        cfg.train.reg.tau = args.tau
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed


def cmd_train(args):
    from .train import init_model, save_checkpoint, train

    cfg = load_config(args.config)
    _apply_overrides(cfg, args)
    ds_train = _load_pair(cfg.data, "train")
    if ds_train is None:
        raise ConfigError("config [data] must set train_a and train_b")
    ds_val = _load_pair(cfg.data, "val")
    out = args.out or cfg.out
    os.makedirs(out, exist_ok=True)
    model = init_model(cfg.model_kind, ds_train.modality_a.d, ds_train.modality_b.d,
                       cfg.model_k, cfg.train.seed)
    model, history = train(ds_train, ds_val, model, cfg.train)
    save_checkpoint(os.path.join(out, "checkpoint"), model, cfg.train)
    history.to_csv(os.path.join(out, "history.csv"))
    print(f"trained {cfg.model_kind} for {len(history.records)} epochs"
          + (" (early stop)" if history.stopped_early else ""))
    return 0


def cmd_eval(args):
    from .evalmetrics import (
        ClassPrototypes,
        continuity,
        modality_gap,
        retrieval,
        trustworthiness,
        zero_shot_classify,
    )
    from .train import apply_model, load_checkpoint

    cfg = load_config(args.config)
    model, sidecar = load_checkpoint(args.checkpoint)
    ds_test = _load_pair(cfg.data, "test")
    if ds_test is None:
        raise ConfigError("config [data] must set test_a and test_b")
    if ds_test.modality_a.d != model.d1 or ds_test.modality_b.d != model.d2:
        raise ConfigError(
            f"checkpoint dims ({model.d1},{model.d2}) do not match data "
            f"({ds_test.modality_a.d},{ds_test.modality_b.d})"
        )
    z1 = apply_model(model, ds_test.modality_a, "f1")
    z2 = apply_model(model, ds_test.modality_b, "f2")
    targets = cfg.eval.get("targets", ["retrieval", "trust", "continuity", "modality_gap"])
    ks = [int(v) for v in cfg.eval.get("ks", [1, 5])]
    k = args.k if args.k is not None else int(cfg.eval.get("k", 10))
    metrics = {"config_hash": sidecar["config_hash"], "n": ds_test.n}
    if "retrieval" in targets:
        metrics["retrieval_i2t"] = retrieval(z1, z2, ks, "i2t").recall_at
        metrics["retrieval_t2i"] = retrieval(z2, z1, ks, "t2i").recall_at
    if "trust" in targets:
        metrics[f"trustworthiness_{k}"] = min(
            trustworthiness(ds_test.modality_a.data, z1, k),
            trustworthiness(ds_test.modality_b.data, z2, k),
        )
    if "continuity" in targets:
        metrics[f"continuity_{k}"] = min(
            continuity(ds_test.modality_a.data, z1, k),
            continuity(ds_test.modality_b.data, z2, k),
        )
    if "modality_gap" in targets:
        metrics["modality_gap"] = modality_gap(z1, z2)
    if "zero_shot" in targets:
        proto_mat, proto_ids = load_embeddings_with_ids(cfg.eval["prototypes"])
        with open(cfg.eval["labels"], "r", encoding="utf-8") as fh:
            labels = json.load(fh)
        protos_aligned = apply_model(model, proto_mat, "f2")
        metrics["zero_shot"] = zero_shot_classify(
            z1, ClassPrototypes(proto_ids, protos_aligned), labels
        )
    out = args.out or cfg.out
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def _mean_test_r1(model, ds):
    from .evalmetrics import retrieval
    from .train import apply_model

    z1 = apply_model(model, ds.modality_a, "f1")
    z2 = apply_model(model, ds.modality_b, "f2")
    return 0.5 * (retrieval(z1, z2, [1]).recall_at[1] + retrieval(z2, z1, [1]).recall_at[1])


def cmd_sweep(args):
    import csv

    from .evalmetrics import utility
    from .train import init_model, train

    cfg = load_config(args.config)
    _apply_overrides(cfg, args)
    ds_full = _load_pair(cfg.data, "train")
    ds_test = _load_pair(cfg.data, "test")
    if ds_full is None or ds_test is None:
        raise ConfigError("sweep needs train_* and test_* data")
    sizes = args.sizes or cfg.sweep.get("sizes")
    if not sizes:
        raise ConfigError("sweep needs sizes")
    sizes = [int(s) for s in sizes]
    if sizes != sorted(sizes) or any(s < 2 for s in sizes):
        raise ConfigError("sizes must be ascending and >= 2")
    repeats = args.repeats if args.repeats is not None else int(cfg.sweep.get("repeats", 1))
    out = args.out or cfg.out
    os.makedirs(out, exist_ok=True)
    rows = []
    for size in sizes:
        if size >= ds_full.n:
            raise ConfigError(f"size {size} must be < N={ds_full.n}")
        for rep in range(repeats):
            point_seed = derive_seed(cfg.seed, f"sweep-{size}-{rep}")
            ds_sub, _ = subsample(ds_full, SplitSpec(seed=point_seed, train_count=size))
            for condition, lam in (("base", 0.0), ("reg", cfg.train.lam)):
                tcfg = build_point_config(cfg, lam, point_seed)
                model = init_model(cfg.model_kind, ds_sub.modality_a.d, ds_sub.modality_b.d,
                                   cfg.model_k, point_seed)
                model, _hist = train(ds_sub, None, model, tcfg)
                r1 = _mean_test_r1(model, ds_test)
                rows.append((size, rep, condition, r1))
    with open(os.path.join(out, "sweep.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["size", "repeat", "condition", "r1"])
        for r in rows:
            w.writerow([r[0], r[1], r[2], f"{r[3]:.12g}"])
    curve = {"base": [], "reg": []}
    for size in sizes:
        for cond in ("base", "reg"):
            vals = [r[3] for r in rows if r[0] == size and r[2] == cond]
            curve[cond].append((size, float(np.mean(vals))))
    try:
        u = utility(curve["reg"], curve["base"])
        util_payload = {"mean_u": u.mean_u,
                        "per_point": [list(p) for p in u.per_point],
                        "skipped": u.skipped}
    except Exception as e:  # curves may never overlap on tiny runs
        util_payload = {"error": str(e)}
    util_payload["curves"] = curve
    with open(os.path.join(out, "utility.json"), "w", encoding="utf-8") as fh:
        json.dump(util_payload, fh, indent=2, sort_keys=True)
    print(f"sweep wrote {len(rows)} rows")
    return 0


def build_point_config(cfg: ExperimentConfig, lam: float, point_seed: int):
    from dataclasses import replace

    epochs = int(cfg.sweep.get("epochs", cfg.train.epochs))
    return replace(cfg.train, lam=lam, seed=point_seed, epochs=epochs)


def _setup_matplotlib():
    import matplotlib

    matplotlib.use("svg")
    matplotlib.rcParams["svg.hashsalt"] = "alignlite"
    import matplotlib.pyplot as plt

    return plt


def _savefig(fig, path):
    fig.savefig(path, metadata={"Date": None})


def cmd_report(args):
    import csv

    plt = _setup_matplotlib()
    run = args.run
    out = args.out or run
    os.makedirs(out, exist_ok=True)
    made = []
    hist_path = os.path.join(run, "history.csv")
    if os.path.exists(hist_path):
        with open(hist_path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        epochs = [int(r["epoch"]) for r in rows]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(epochs, [float(r["loss"]) for r in rows], label="total")
        ax.plot(epochs, [float(r["contrastive"]) for r in rows], label="contrastive")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend()
        _savefig(fig, os.path.join(out, "loss_curve.svg"))
        plt.close(fig)
        made.append("loss_curve.svg")
    sweep_path = os.path.join(run, "sweep.csv")
    if os.path.exists(sweep_path):
        with open(sweep_path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        fig, ax = plt.subplots(figsize=(6, 4))
        for cond in ("base", "reg"):
            pts = {}
            for r in rows:
                if r["condition"] == cond:
                    pts.setdefault(int(r["size"]), []).append(float(r["r1"]))
            xs = sorted(pts)
            ax.plot(xs, [float(np.mean(pts[x])) for x in xs], marker="o", label=cond)
        ax.set_xscale("log")
        ax.set_xlabel("train pairs")
        ax.set_ylabel("test R@1")
        ax.legend()
        _savefig(fig, os.path.join(out, "scaling.svg"))
        plt.close(fig)
        made.append("scaling.svg")
    grid_path = os.path.join(run, "similarity_grid.csv")
    if os.path.exists(grid_path):
        with open(grid_path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        la = sorted({int(r["layer_a"]) for r in rows})
        lb = sorted({int(r["layer_b"]) for r in rows})
        mat = np.zeros((len(la), len(lb)))
        for r in rows:
            mat[la.index(int(r["layer_a"])), lb.index(int(r["layer_b"]))] = float(r["score"])
        fig, ax = plt.subplots(figsize=(5, 4))
        im = ax.imshow(mat, origin="lower", aspect="auto")
        ax.set_xticks(range(len(lb)), [str(v) for v in lb])
        ax.set_yticks(range(len(la)), [str(v) for v in la])
        ax.set_xlabel("layer_b")
        ax.set_ylabel("layer_a")
        fig.colorbar(im)
        _savefig(fig, os.path.join(out, "grid_heatmap.svg"))
        plt.close(fig)
        made.append("grid_heatmap.svg")
    if not made:
        raise InputError(f"no history.csv, sweep.csv, or similarity_grid.csv under {run}")
    with open(os.path.join(out, "report.md"), "w", encoding="utf-8") as fh:
        fh.write("# Run report\n\n")
        for name in made:
            fh.write(f"![{name}]({name})\n\n")
    print(f"report: {', '.join(made)}")
    return 0


def _resolve_threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("ALIGNLITE_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"ALIGNLITE_THREADS={env!r} is not an integer")
    return 1


def build_parser():
    p = argparse.ArgumentParser(prog="alignlite",
                                description="embedding alignment toolkit")
    p.add_argument("--threads", type=int, default=None,
                   help="BLAS thread cap (default 1, env ALIGNLITE_THREADS)")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("inspect", help="summarize an EMB1 file or manifest")
    sp.add_argument("path")
    sp.set_defaults(fn=cmd_inspect)

    sp = sub.add_parser("layer-select", help="similarity grid + layer pair selection")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.add_argument("--metric")
    sp.add_argument("--k", type=int)
    sp.add_argument("--repeats", type=int)
    sp.add_argument("--layer-window", dest="layer_window")
    sp.set_defaults(fn=cmd_layer_select)

    sp = sub.add_parser("train", help="train alignment maps")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--levels", type=int)
    sp.add_argument("--tau", type=float)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--out")
    sp.add_argument("--k", type=int)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("sweep", help="data-scaling sweep with utility")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.add_argument("--sizes", type=lambda s: [int(v) for v in s.split(",")])
    sp.add_argument("--repeats", type=int)
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--levels", type=int)
    sp.add_argument("--tau", type=float)
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("report", help="render SVG plots from run artifacts")
    sp.add_argument("--run", required=True)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        threads = _resolve_threads(args)
        import threadpoolctl

        with threadpoolctl.threadpool_limits(limits=threads):
            return args.fn(args)
    except (InputError, FileNotFoundError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
