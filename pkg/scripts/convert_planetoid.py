#!/usr/bin/env python3
"""One-shot converter producing the canonical graph directory format.

Two source formats are supported:

  planetoid   The classic ind.NAME.{x,y,tx,ty,allx,ally,graph,test.index}
              pickle bundle (CiteSeer, PubMed, Cora). Isolated test nodes
              whose ids are missing from test.index (CiteSeer) get all-zero
              feature rows and label 0, as in the reference loaders.

  npz         A single .npz with CSR arrays adj_data/adj_indices/adj_indptr/
              adj_shape, attr_data/attr_indices/attr_indptr/attr_shape and a
              labels vector (Cora-ML, Coauthor CS distributions).

The output directory contains manifest.json, edges.csv, features.csv,
labels.csv, and a stratified split.json (5% of each class for training, 15%
for validation by default).

Usage:
  python scripts/convert_planetoid.py planetoid --name citeseer \
      --raw-dir /path/to/planetoid/data --out data/citeseer
  python scripts/convert_planetoid.py npz --npz /path/to/cora_ml.npz \
      --out data/cora_ml
"""

import argparse
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from cleanlink.graph import build_graph, make_split, save_graph, save_split


def _load_pickle(path):
    with open(path, "rb") as f:
        return pickle.load(f, encoding="latin1")


def load_planetoid(raw_dir, name):
    raw_dir = Path(raw_dir)
    parts = {}
    for suffix in ("x", "y", "tx", "ty", "allx", "ally", "graph"):
        parts[suffix] = _load_pickle(raw_dir / f"ind.{name}.{suffix}")
    test_idx = np.loadtxt(raw_dir / f"ind.{name}.test.index",
                          dtype=np.int64)
    test_range = np.arange(test_idx.min(), test_idx.max() + 1)

    tx, ty = parts["tx"], parts["ty"]
    if len(test_range) > len(test_idx):
        # citeseer: isolated test nodes; pad with zero rows
        tx_full = sp.lil_matrix((len(test_range), tx.shape[1]))
        tx_full[test_idx - test_idx.min()] = tx
        tx = tx_full.tocsr()
        ty_full = np.zeros((len(test_range), ty.shape[1]))
        ty_full[test_idx - test_idx.min()] = ty
        ty = ty_full

    features = sp.vstack([parts["allx"], tx]).tolil()
    features[test_idx] = features[np.sort(test_idx)]
    labels_onehot = np.vstack([parts["ally"], ty])
    labels_onehot[test_idx] = labels_onehot[np.sort(test_idx)]
    labels = labels_onehot.argmax(axis=1)

    edges = [(i, j) for i, nbrs in parts["graph"].items() for j in nbrs]
    num_classes = labels_onehot.shape[1]
    return build_graph(num_classes, np.asarray(edges, dtype=np.int64),
                       np.asarray(features.todense()), labels)


def load_npz(path):
    with np.load(path, allow_pickle=True) as loader:
        data = dict(loader)
    adj = sp.csr_matrix((data["adj_data"], data["adj_indices"],
                         data["adj_indptr"]), shape=data["adj_shape"])
    attr = sp.csr_matrix((data["attr_data"], data["attr_indices"],
                          data["attr_indptr"]), shape=data["attr_shape"])
    labels = np.asarray(data["labels"], dtype=np.int64)
    adj = adj + adj.T
    adj.data[:] = 1.0
    coo = sp.triu(adj, k=1).tocoo()
    edges = np.stack([coo.row, coo.col], axis=1)
    num_classes = int(labels.max()) + 1
    return build_graph(num_classes, edges, np.asarray(attr.todense()),
                       labels)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    sub = parser.add_subparsers(dest="format", required=True)
    p = sub.add_parser("planetoid")
    p.add_argument("--name", required=True,
                   choices=("citeseer", "cora", "pubmed"))
    p.add_argument("--raw-dir", required=True)
    p.add_argument("--out", required=True)
    q = sub.add_parser("npz")
    q.add_argument("--npz", required=True)
    q.add_argument("--out", required=True)
    for s in (p, q):
        s.add_argument("--train-frac", type=float, default=0.05)
        s.add_argument("--val-frac", type=float, default=0.15)
        s.add_argument("--split-seed", type=int, default=0)
    args = parser.parse_args(argv)

    if args.format == "planetoid":
        g = load_planetoid(args.raw_dir, args.name)
    else:
        g = load_npz(args.npz)
    save_graph(g, args.out)
    masks = make_split(g, args.train_frac, args.val_frac, args.split_seed)
    save_split(masks, Path(args.out) / "split.json")
    print(f"wrote {args.out}: N={g.num_nodes} |E|={g.num_edges} "
          f"d={g.feature_dim} C={g.num_classes}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
