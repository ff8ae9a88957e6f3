"""Graph data model: canonical on-disk format, adjacency normalization, and
stratified train/val/test splits.

A graph lives in a directory with a manifest.json pointing at three CSV
files (edges, features, labels). Edges are stored undirected and the loader
symmetrizes, deduplicates, and drops self-loops, so the in-memory adjacency
always satisfies the invariants regardless of how the files were produced.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .numerics import rng

MANIFEST_NAME = "manifest.json"


class GraphFormatError(ValueError):
    """Raised when on-disk graph data violates the canonical format."""


@dataclass(frozen=True)
class Graph:
    """Immutable graph: symmetric binary CSR adjacency (no self-loops),
    dense float64 features, ground-truth integer labels."""

    num_nodes: int
    num_classes: int
    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray

    @property
    def feature_dim(self):
        return self.features.shape[1]

    @property
    def num_edges(self):
        """Undirected edge count."""
        return self.adjacency.nnz // 2


@dataclass(frozen=True)
class SplitMasks:
    train_ids: np.ndarray
    val_ids: np.ndarray
    test_ids: np.ndarray
    seed: int


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Symmetric degree-normalized propagation matrix with self-loops."""

    matrix: sp.csr_matrix
    self_loops_added: bool = True


def build_graph(num_classes, edges, features, labels):
    """Construct a Graph from raw parts, enforcing every invariant.

    edges is an (m, 2) int array of endpoints in either direction; it is
    symmetrized, deduplicated, and stripped of self-loops.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise GraphFormatError("features must be a 2-d matrix")
    labels = np.asarray(labels, dtype=np.int64)
    n = features.shape[0]
    if labels.shape != (n,):
        raise GraphFormatError(
            f"label count {labels.shape} does not match {n} feature rows")
    if not np.all(np.isfinite(features)):
        raise GraphFormatError("features contain non-finite values")
    if num_classes < 1:
        raise GraphFormatError("num_classes must be positive")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise GraphFormatError(
            f"label outside [0, {num_classes}): range "
            f"[{labels.min()}, {labels.max()}]")

    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size:
        if edges.min() < 0 or edges.max() >= n:
            raise GraphFormatError("edge index out of range")
        both = np.vstack([edges, edges[:, ::-1]])
        both = both[both[:, 0] != both[:, 1]]          # drop self-loops
        both = np.unique(both, axis=0)                  # dedup, sorts rows
    else:
        both = np.zeros((0, 2), dtype=np.int64)
    data = np.ones(len(both), dtype=np.float64)
    adj = sp.csr_matrix((data, (both[:, 0], both[:, 1])), shape=(n, n))
    return Graph(num_nodes=n, num_classes=int(num_classes), adjacency=adj,
                 features=features, labels=labels)


def _read_int_pairs(path):
    text = Path(path).read_text().strip()
    if not text:
        return np.zeros((0, 2), dtype=np.int64)
    try:
        return np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2)
    except ValueError as e:
        raise GraphFormatError(f"bad edge file {path}: {e}") from e


def load_graph(manifest_path):
    """Load a graph directory via its manifest; see save_graph for the format."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    if not manifest_path.exists():
        raise GraphFormatError(f"manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    for key in ("num_nodes", "num_classes", "feature_dim",
                "edges", "features", "labels"):
        if key not in manifest:
            raise GraphFormatError(f"manifest missing field {key!r}")
    base = manifest_path.parent
    for key in ("edges", "features", "labels"):
        if not (base / manifest[key]).exists():
            raise GraphFormatError(f"missing file: {base / manifest[key]}")

    n = int(manifest["num_nodes"])
    d = int(manifest["feature_dim"])
    edges = _read_int_pairs(base / manifest["edges"])
    try:
        features = np.loadtxt(base / manifest["features"], delimiter=",",
                              dtype=np.float64, ndmin=2)
    except ValueError as e:
        raise GraphFormatError(f"bad feature file: {e}") from e
    labels = np.loadtxt(base / manifest["labels"], dtype=np.int64, ndmin=1)
    if features.shape != (n, d):
        raise GraphFormatError(
            f"feature matrix is {features.shape}, manifest says {(n, d)}")
    if labels.shape != (n,):
        raise GraphFormatError(
            f"label count {labels.shape[0]} does not match num_nodes {n}")
    return build_graph(int(manifest["num_classes"]), edges, features, labels)


def save_graph(g, out_dir):
    """Write the canonical directory format; returns the manifest path.

    Edge lines are src,dst with src < dst, sorted lexicographically, so
    save(load(dir)) reproduces byte-identical CSV bodies.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    coo = sp.triu(g.adjacency, k=1).tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(out_dir / "edges.csv", "w") as f:
        for i, j in zip(coo.row[order], coo.col[order]):
            f.write(f"{i},{j}\n")
    with open(out_dir / "features.csv", "w") as f:
        for row in g.features:
            f.write(",".join(repr(float(v)) for v in row))
            f.write("\n")
    with open(out_dir / "labels.csv", "w") as f:
        for y in g.labels:
            f.write(f"{y}\n")
    manifest = {
        "num_nodes": int(g.num_nodes),
        "num_classes": int(g.num_classes),
        "feature_dim": int(g.feature_dim),
        "edges": "edges.csv",
        "features": "features.csv",
        "labels": "labels.csv",
    }
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def normalize_adjacency(g, weighted_overlay=None):
    """Symmetric normalization D^-1/2 (M + I) D^-1/2 of the adjacency.

    g may be a Graph or a sparse adjacency. weighted_overlay, when given, is
    a sparse matrix of extra non-negative edge weights disjoint from the
    existing edges; degrees are the weighted row sums including the self-loop.
    """
    A = g.adjacency if isinstance(g, Graph) else g
    M = sp.csr_matrix(A, dtype=np.float64)
    if weighted_overlay is not None:
        overlay = sp.csr_matrix(weighted_overlay, dtype=np.float64)
        if overlay.shape != M.shape:
            raise ValueError("overlay shape mismatch")
        if overlay.nnz:
            if not np.all(np.isfinite(overlay.data)):
                raise ValueError("overlay contains non-finite weights")
            if overlay.data.min() < 0:
                raise ValueError("overlay contains negative weights")
            if M.multiply(overlay).nnz:
                raise ValueError("overlay overlaps existing edges")
        M = (M + overlay).tocsr()
    if M.nnz and not np.all(np.isfinite(M.data)):
        raise ValueError("adjacency contains non-finite weights")

    n = M.shape[0]
    deg = np.asarray(M.sum(axis=1)).ravel() + 1.0  # self-loop weight
    dinv = 1.0 / np.sqrt(deg)
    coo = M.tocoo()
    rows = np.concatenate([coo.row, np.arange(n)])
    cols = np.concatenate([coo.col, np.arange(n)])
    vals = np.concatenate([coo.data, np.ones(n)])
    vals = vals * dinv[rows] * dinv[cols]
    out = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    out.sum_duplicates()
    return NormalizedAdjacency(matrix=out, self_loops_added=True)


def row_normalize_with_self_loops(adj):
    """(adj + I) with each row divided by its sum; weights for the
    neighbor-averaged consistency term."""
    M = sp.csr_matrix(adj, dtype=np.float64)
    n = M.shape[0]
    M = (M + sp.identity(n, format="csr")).tocsr()
    rowsum = np.asarray(M.sum(axis=1)).ravel()
    inv = np.zeros_like(rowsum)
    nz = rowsum > 0
    inv[nz] = 1.0 / rowsum[nz]
    return sp.diags(inv) @ M


def make_split(g, train_frac_per_class, val_frac, seed):
    """Stratified split: per class, round(frac * size) training nodes (at
    least 1); then a random validation set of round(val_frac * N) from the
    remainder; everything else is test. Deterministic per seed."""
    if train_frac_per_class <= 0 or val_frac <= 0:
        raise ValueError("split fractions must be positive")
    if train_frac_per_class + val_frac >= 1:
        raise ValueError("train + val fractions must be below 1")
    gen = rng(seed)
    train = []
    for c in range(g.num_classes):
        members = np.flatnonzero(g.labels == c)
        if members.size == 0:
            raise ValueError(f"class {c} has no members")
        k = max(1, int(np.floor(train_frac_per_class * members.size + 0.5)))
        picked = gen.permutation(members)[:k]
        train.append(picked)
    train_ids = np.sort(np.concatenate(train))
    pool = np.setdiff1d(np.arange(g.num_nodes), train_ids)
    n_val = min(int(np.floor(val_frac * g.num_nodes + 0.5)), pool.size)
    pool = gen.permutation(pool)
    val_ids = np.sort(pool[:n_val])
    test_ids = np.sort(pool[n_val:])
    return SplitMasks(train_ids=train_ids, val_ids=val_ids,
                      test_ids=test_ids, seed=int(seed))


def save_split(masks, path):
    payload = {
        "train": [int(i) for i in masks.train_ids],
        "val": [int(i) for i in masks.val_ids],
        "test": [int(i) for i in masks.test_ids],
        "seed": int(masks.seed),
    }
    Path(path).write_text(json.dumps(payload) + "\n")


def load_split(path):
    payload = json.loads(Path(path).read_text())
    return SplitMasks(
        train_ids=np.asarray(sorted(payload["train"]), dtype=np.int64),
        val_ids=np.asarray(sorted(payload["val"]), dtype=np.int64),
        test_ids=np.asarray(sorted(payload["test"]), dtype=np.int64),
        seed=int(payload.get("seed", -1)),
    )
