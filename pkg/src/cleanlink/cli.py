"""Command-line surface: prepare, corrupt, train, eval, benchmark, linkexp,
ablate.

Config precedence is flags > JSON config file > built-in defaults. Every run
directory gets a run_manifest.json with the resolved config, input hashes,
and wall-clock, sufficient to replay the run.
"""

import argparse
import csv
import hashlib
import json
import os
import statistics
import sys
import time
from dataclasses import fields as dataclass_fields
from pathlib import Path

from . import gcn as gcn_mod
from . import noise as noise_mod
from . import trainer as trainer_mod
from .graph import (load_graph, load_split, make_split, save_graph,
                    save_split)
from .trainer import TrainConfig


def _rate(value):
    v = float(value)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"rate must be in [0, 1], got {v}")
    return v


def _fraction(value):
    v = float(value)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(
            f"fraction must be in (0, 1), got {v}")
    return v


def _hash_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_inputs(paths):
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for child in sorted(p.iterdir()):
                if child.is_file():
                    out[str(child)] = _hash_file(child)
        elif p.exists():
            out[str(p)] = _hash_file(p)
    return out


class RunManifest:
    """Written before the run starts, finalized when it ends."""

    def __init__(self, out_dir, command, config, inputs, outputs):
        self.path = Path(out_dir) / "run_manifest.json"
        self.payload = {
            "command": command,
            "config": config,
            "inputs": _hash_inputs(inputs),
            "outputs": [str(o) for o in outputs],
            "status": "running",
            "wall_clock_s": None,
        }
        self.t0 = time.monotonic()
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        self._write()

    def _write(self):
        self.path.write_text(json.dumps(self.payload, indent=2,
                                        sort_keys=True) + "\n")

    def finalize(self, status="done"):
        self.payload["status"] = status
        self.payload["wall_clock_s"] = time.monotonic() - self.t0
        self._write()


# Hyperparameter flags shared by train/benchmark/linkexp/ablate. Defaults
# are None so a config file can fill anything the flags leave unset.
_CONFIG_FLOATS = ("p_th", "tau", "th_pse1", "th_pse2", "alpha", "beta",
                  "lam", "lr", "weight_decay")
_CONFIG_INTS = ("n_neg", "hidden", "edge_hidden", "epochs", "warmup",
                "seed", "top_k")


def _add_split_flags(parser):
    parser.add_argument("--train-frac", type=_fraction, default=0.05,
                        dest="train_frac")
    parser.add_argument("--val-frac", type=_fraction, default=0.15,
                        dest="val_frac")


def _add_config_flags(parser):
    for name in _CONFIG_FLOATS:
        parser.add_argument(f"--{name.replace('_', '-')}", type=float,
                            default=None, dest=name)
    for name in _CONFIG_INTS:
        parser.add_argument(f"--{name.replace('_', '-')}", type=int,
                            default=None, dest=name)
    parser.add_argument("--label-norm", choices=("supervised", "vl"),
                        default=None, dest="label_norm")
    parser.add_argument("--reg-set", choices=("vl", "vl+pl", "all"),
                        default=None, dest="reg_set")
    parser.add_argument("--no-gmm", action="store_true",
                        help="disable the coarse division (all labels trusted)")
    parser.add_argument("--no-fine", action="store_true",
                        help="disable relabeling and pseudo-labeling")
    parser.add_argument("--no-reg", action="store_true",
                        help="disable the consistency regularizer")
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON config file (flags win over it)")


def resolve_config(args):
    """flags > config file > defaults."""
    resolved = TrainConfig().as_dict()
    if getattr(args, "config", None):
        file_cfg = json.loads(Path(args.config).read_text())
        unknown = set(file_cfg) - set(resolved)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(file_cfg)
    for f in dataclass_fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            resolved[f.name] = v
    if getattr(args, "no_gmm", False):
        resolved["use_gmm"] = False
    if getattr(args, "no_fine", False):
        resolved["use_fine"] = False
    if getattr(args, "no_reg", False):
        resolved["use_reg"] = False
    cfg = TrainConfig(**resolved)
    cfg.validate()
    return cfg


def _load_observed(g, masks, noise_path):
    if noise_path is None:
        return g.labels.copy(), None
    record = noise_mod.load_noise_record(noise_path)
    if record.observed_labels.shape[0] != g.num_nodes:
        raise ValueError("noise record does not match the graph size")
    return record.observed_labels, record


def cmd_prepare(args):
    g = noise_mod.generate_sbm(args.per_class, args.classes, args.p_in,
                               args.p_out, args.feat_dim, args.separation,
                               args.seed)
    save_graph(g, args.out)
    masks = make_split(g, args.train_frac, args.val_frac, args.seed)
    save_split(masks, Path(args.out) / "split.json")
    manifest = RunManifest(args.out, "prepare", {
        "classes": args.classes, "per_class": args.per_class,
        "p_in": args.p_in, "p_out": args.p_out, "feat_dim": args.feat_dim,
        "separation": args.separation, "seed": args.seed,
        "train_frac": args.train_frac, "val_frac": args.val_frac,
    }, [], [args.out])
    manifest.finalize()
    print(json.dumps({"out": str(args.out), "num_nodes": g.num_nodes,
                      "num_edges": g.num_edges,
                      "num_classes": g.num_classes}))
    return 0


def cmd_corrupt(args):
    g = load_graph(args.graph)
    split_path = args.split or Path(args.graph) / "split.json"
    masks = load_split(split_path)
    if args.kind == "uniform":
        record = noise_mod.inject_uniform(g.labels, masks.train_ids,
                                          args.rate, g.num_classes,
                                          args.seed)
    else:
        pair_map = (tuple(int(c) for c in args.pair_map.split(","))
                    if args.pair_map else None)
        record = noise_mod.inject_pair(g.labels, masks.train_ids, args.rate,
                                       pair_map, args.seed)
    noise_mod.save_noise_record(record, args.out)
    print(json.dumps({"out": str(args.out),
                      "flipped": int(record.flipped_ids.size),
                      "train_size": int(masks.train_ids.size)}))
    return 0


def cmd_train(args):
    cfg = resolve_config(args)
    g = load_graph(args.graph)
    split_path = args.split or Path(args.graph) / "split.json"
    masks = load_split(split_path)
    observed, record = _load_observed(g, masks, args.noise)
    out_dir = Path(args.out)
    manifest = RunManifest(
        out_dir, "train", cfg.as_dict(),
        [args.graph, split_path] + ([args.noise] if args.noise else []),
        [out_dir / n for n in ("history.json", "model.ckpt",
                               "augmented_edges.csv", "result.json")])
    try:
        result = trainer_mod.train(g, observed, masks, cfg,
                                   noise_record=record,
                                   validate_invariants=args.validate)
        trainer_mod.save_run(result, cfg, out_dir)
        if args.division_log:
            with open(args.division_log, "w") as f:
                for rec in result.history:
                    if rec["phase"] != "main" or rec["division"] is None:
                        continue
                    f.write(json.dumps({
                        "epoch": rec["epoch"],
                        "v_cl_size": rec["partitions"]["v_cl"],
                        "v_n_size": rec["partitions"]["v_n"],
                        "precision": rec["division"]["precision"],
                        "recall": rec["division"]["recall"],
                    }, sort_keys=True) + "\n")
    except Exception:
        manifest.finalize(status="failed")
        raise
    manifest.finalize()
    print(json.dumps({"out": str(out_dir), "best_epoch": result.best_epoch,
                      "best_val_acc": result.best_val_acc,
                      "test_acc": result.test_acc}))
    return 0


def cmd_eval(args):
    g = load_graph(args.graph)
    split_path = args.split or Path(args.graph) / "split.json"
    masks = load_split(split_path)
    run_dir = Path(args.run)
    tensors = gcn_mod.load_checkpoint(run_dir / "model.ckpt")
    peers = gcn_mod.PeerModel(
        gcn_mod.params_from_tensors(tensors, "peer1."),
        gcn_mod.params_from_tensors(tensors, "peer2."))
    a_hat = trainer_mod.load_augmented_adjacency(
        g, run_dir / "augmented_edges.csv")
    pred = trainer_mod.infer(peers, a_hat, g.features)
    test_acc = trainer_mod.evaluate(pred, g.labels, masks.test_ids)
    recorded = None
    result_path = run_dir / "result.json"
    if result_path.exists():
        recorded = json.loads(result_path.read_text())["test_acc"]
    print(json.dumps({"test_acc": test_acc, "recorded_test_acc": recorded,
                      "match": recorded is not None
                      and abs(test_acc - recorded) < 1e-12}))
    return 0


def _benchmark_point(point):
    graph_dir, kind, rate, seed, method, cfg_dict, fracs = point
    g = load_graph(graph_dir)
    cfg = TrainConfig(**{**cfg_dict, "seed": seed})
    masks = make_split(g, fracs[0], fracs[1], seed)
    if kind == "uniform":
        record = noise_mod.inject_uniform(g.labels, masks.train_ids, rate,
                                          g.num_classes, seed)
    else:
        record = noise_mod.inject_pair(g.labels, masks.train_ids, rate,
                                       None, seed)
    if method == "gcn":
        res = trainer_mod.train_plain_gcn(g, record.observed_labels, masks,
                                          cfg)
    else:
        res = trainer_mod.train(g, record.observed_labels, masks, cfg,
                                noise_record=record)
    return {"dataset": Path(graph_dir).name, "noise_kind": kind,
            "rate": rate, "seed": seed, "method": method,
            "accuracy": res.test_acc}


def cmd_benchmark(args):
    cfg = resolve_config(args)
    out_dir = Path(args.out)
    kinds = args.kinds.split(",")
    rates = [_rate(r) for r in args.rates.split(",")]
    methods = args.methods.split(",")
    for m in methods:
        if m not in ("gcn", "cleanlink"):
            raise ValueError(f"unknown method {m!r}")
    seeds = [args.seed0 + i for i in range(args.seeds)]
    fracs = (args.train_frac, args.val_frac)
    points = [(str(args.graph), kind, rate, seed, method, cfg.as_dict(),
               fracs)
              for kind in kinds for rate in rates
              for seed in seeds for method in methods]
    manifest = RunManifest(out_dir, "benchmark", cfg.as_dict(),
                           [args.graph],
                           [out_dir / "benchmark_raw.csv",
                            out_dir / "benchmark_summary.csv"])
    workers = int(os.environ.get("CLEANLINK_WORKERS", "1"))
    if workers > 1:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(workers) as pool:
            rows = pool.map(_benchmark_point, points)
    else:
        rows = [_benchmark_point(p) for p in points]

    raw_path = out_dir / "benchmark_raw.csv"
    with open(raw_path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["dataset", "noise_kind", "rate",
                                          "seed", "method", "accuracy"])
        w.writeheader()
        w.writerows(rows)

    grouped = {}
    for r in rows:
        grouped.setdefault((r["dataset"], r["noise_kind"], r["rate"],
                            r["method"]), []).append(r["accuracy"])
    with open(out_dir / "benchmark_summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["dataset", "noise_kind", "rate", "method", "n_seeds",
                    "mean_accuracy", "std_accuracy"])
        for key in sorted(grouped):
            accs = grouped[key]
            std = statistics.stdev(accs) if len(accs) > 1 else 0.0
            w.writerow(list(key) + [len(accs),
                                    repr(statistics.fmean(accs)),
                                    repr(std)])
    manifest.finalize()
    print(json.dumps({"out": str(out_dir), "points": len(points)}))
    return 0


def cmd_linkexp(args):
    cfg = resolve_config(args)
    out_dir = Path(args.out)
    g = load_graph(args.graph)
    strategies = args.strategies.split(",")
    for s in strategies:
        if s not in noise_mod.LINK_STRATEGIES:
            raise ValueError(f"unknown strategy {s!r}")
    manifest = RunManifest(out_dir, "linkexp", cfg.as_dict(), [args.graph],
                           [out_dir / "linkexp.csv"])
    rows = []
    for i in range(args.seeds):
        seed = args.seed0 + i
        masks = make_split(g, args.train_frac, args.val_frac, seed)
        if args.kind == "uniform":
            record = noise_mod.inject_uniform(g.labels, masks.train_ids,
                                              args.rate, g.num_classes, seed)
        else:
            record = noise_mod.inject_pair(g.labels, masks.train_ids,
                                           args.rate, None, seed)
        for strategy in strategies:
            point_cfg = TrainConfig(**{**cfg.as_dict(), "seed": seed})
            res = noise_mod.link_strategy_experiment(g, record, masks,
                                                     strategy, args.k,
                                                     point_cfg)
            rows.append({"strategy": strategy, "seed": seed,
                         "accuracy": res["test_accuracy"],
                         "noisy_neighbor_fraction":
                             res["noisy_neighbor_fraction"],
                         "added_edges": res["added_edges"]})
    with open(out_dir / "linkexp.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["strategy", "seed", "accuracy",
                                          "noisy_neighbor_fraction",
                                          "added_edges"])
        w.writeheader()
        w.writerows(rows)
    manifest.finalize()
    print(json.dumps({"out": str(out_dir), "rows": len(rows)}))
    return 0


ABLATION_VARIANTS = ("full", "wo_gmm", "wo_pl", "wo_cr")


def cmd_ablate(args):
    cfg = resolve_config(args)
    out_dir = Path(args.out)
    g = load_graph(args.graph)
    manifest = RunManifest(out_dir, "ablate", cfg.as_dict(), [args.graph],
                           [out_dir / "ablate.csv"])
    rows = []
    for i in range(args.seeds):
        seed = args.seed0 + i
        masks = make_split(g, args.train_frac, args.val_frac, seed)
        if args.kind == "uniform":
            record = noise_mod.inject_uniform(g.labels, masks.train_ids,
                                              args.rate, g.num_classes, seed)
        else:
            record = noise_mod.inject_pair(g.labels, masks.train_ids,
                                           args.rate, None, seed)
        for variant in ABLATION_VARIANTS:
            vcfg = trainer_mod.ablation_config(
                TrainConfig(**{**cfg.as_dict(), "seed": seed}), variant)
            res = trainer_mod.train(g, record.observed_labels, masks, vcfg,
                                    noise_record=record)
            rows.append({"variant": variant, "seed": seed,
                         "accuracy": res.test_acc})
    with open(out_dir / "ablate.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["variant", "seed", "accuracy"])
        w.writeheader()
        w.writerows(rows)
    summary = {}
    for r in rows:
        summary.setdefault(r["variant"], []).append(r["accuracy"])
    with open(out_dir / "ablate_summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["variant", "n_seeds", "mean_accuracy", "std_accuracy"])
        for variant in ABLATION_VARIANTS:
            if variant not in summary:
                continue
            accs = summary[variant]
            std = statistics.stdev(accs) if len(accs) > 1 else 0.0
            w.writerow([variant, len(accs), repr(statistics.fmean(accs)),
                        repr(std)])
    manifest.finalize()
    print(json.dumps({"out": str(out_dir), "rows": len(rows)}))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cleanlink",
        description="Robust node classification under sparse, noisy labels.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="generate a canonical graph directory")
    psub = p.add_subparsers(dest="source", required=True)
    sbm = psub.add_parser("sbm", help="stochastic block model generator")
    sbm.add_argument("--out", required=True, type=Path)
    sbm.add_argument("--classes", type=int, default=2)
    sbm.add_argument("--per-class", type=int, default=20, dest="per_class")
    sbm.add_argument("--p-in", type=_rate, default=0.5, dest="p_in")
    sbm.add_argument("--p-out", type=_rate, default=0.05, dest="p_out")
    sbm.add_argument("--feat-dim", type=int, default=8, dest="feat_dim")
    sbm.add_argument("--separation", type=float, default=2.0)
    sbm.add_argument("--seed", type=int, default=0)
    sbm.add_argument("--train-frac", type=_fraction, default=0.05,
                     dest="train_frac")
    sbm.add_argument("--val-frac", type=_fraction, default=0.15,
                     dest="val_frac")
    sbm.set_defaults(func=cmd_prepare)

    p = sub.add_parser("corrupt", help="inject label noise on the train set")
    p.add_argument("--graph", required=True, type=Path)
    p.add_argument("--split", type=Path, default=None)
    p.add_argument("--kind", choices=("uniform", "pair"), default="uniform")
    p.add_argument("--rate", type=_rate, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pair-map", default=None, dest="pair_map",
                   help="comma-separated permutation, e.g. 1,0,3,2")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("train", help="train the full model")
    p.add_argument("--graph", required=True, type=Path)
    p.add_argument("--split", type=Path, default=None)
    p.add_argument("--noise", type=Path, default=None)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--validate", action="store_true",
                   help="assert augmentation invariants every epoch")
    p.add_argument("--division-log", type=Path, default=None,
                   dest="division_log")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved run on the test set")
    p.add_argument("--graph", required=True, type=Path)
    p.add_argument("--run", required=True, type=Path)
    p.add_argument("--split", type=Path, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("benchmark",
                       help="noise-kind x rate x seed x method sweep")
    p.add_argument("--graph", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--kinds", default="uniform,pair")
    p.add_argument("--rates", default="0.2,0.3,0.4")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--seed0", type=int, default=0)
    p.add_argument("--methods", default="gcn,cleanlink")
    _add_split_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("linkexp", help="link-strategy comparison")
    p.add_argument("--graph", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--kind", choices=("uniform", "pair"), default="uniform")
    p.add_argument("--rate", type=_rate, default=0.3)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed0", type=int, default=0)
    p.add_argument("--strategies",
                   default="none,linkL,linkCL_oracle,linkCL_gmm")
    _add_split_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_linkexp)

    p = sub.add_parser("ablate", help="full model vs the three ablations")
    p.add_argument("--graph", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--kind", choices=("uniform", "pair"), default="uniform")
    p.add_argument("--rate", type=_rate, default=0.3)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--seed0", type=int, default=0)
    _add_split_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # descriptive message, nonzero exit
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
