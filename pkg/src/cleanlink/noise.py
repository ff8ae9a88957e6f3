"""Label-noise laboratory: noise injection, synthetic SBM graphs,
division-quality metrics, and the link-strategy experiments.

Only training labels are ever corrupted; validation and test labels stay
clean for measurement. Noise records are reproducible from their spec.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .graph import Graph, build_graph
from .numerics import rng, spawn_seeds


@dataclass(frozen=True)
class NoiseSpec:
    kind: str                 # "uniform" | "pair"
    rate: float
    seed: int
    pair_map: Optional[tuple] = None


@dataclass
class NoiseRecord:
    observed_labels: np.ndarray   # full length-N array; flips on train only
    flipped_ids: np.ndarray
    spec: NoiseSpec


def _validate_rate(p):
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"noise rate must be in [0, 1], got {p}")


def inject_uniform(labels, train_ids, p, num_classes, seed):
    """Flip each train label with probability p to a uniformly random other
    class."""
    _validate_rate(p)
    if num_classes < 2:
        raise ValueError("uniform noise needs at least 2 classes")
    labels = np.asarray(labels, dtype=np.int64)
    train_ids = np.asarray(train_ids)
    gen = rng(seed)
    observed = labels.copy()
    flip = gen.random(train_ids.size) < p
    flipped_ids = train_ids[flip]
    if flipped_ids.size:
        offsets = gen.integers(1, num_classes, size=flipped_ids.size)
        observed[flipped_ids] = (labels[flipped_ids] + offsets) % num_classes
    return NoiseRecord(observed_labels=observed,
                       flipped_ids=np.sort(flipped_ids),
                       spec=NoiseSpec("uniform", float(p), int(seed)))


def default_pair_map(num_classes):
    """c -> (c + 1) mod C; fixed-point-free for C >= 2."""
    if num_classes < 2:
        raise ValueError("pair noise needs at least 2 classes")
    return tuple((c + 1) % num_classes for c in range(num_classes))


def inject_pair(labels, train_ids, p, pair_map=None, seed=0):
    """Flip each train label with probability p to its designated pair
    class."""
    _validate_rate(p)
    labels = np.asarray(labels, dtype=np.int64)
    train_ids = np.asarray(train_ids)
    num_classes = int(labels.max()) + 1 if labels.size else 0
    if pair_map is None:
        pair_map = default_pair_map(num_classes)
    pair_map = tuple(int(c) for c in pair_map)
    for c, target in enumerate(pair_map):
        if c == target:
            raise ValueError(f"pair map has a fixed point at class {c}")
    gen = rng(seed)
    observed = labels.copy()
    flip = gen.random(train_ids.size) < p
    flipped_ids = train_ids[flip]
    if flipped_ids.size:
        mapping = np.asarray(pair_map, dtype=np.int64)
        observed[flipped_ids] = mapping[labels[flipped_ids]]
    return NoiseRecord(observed_labels=observed,
                       flipped_ids=np.sort(flipped_ids),
                       spec=NoiseSpec("pair", float(p), int(seed),
                                      pair_map=pair_map))


def save_noise_record(record, path):
    payload = {
        "kind": record.spec.kind,
        "rate": record.spec.rate,
        "seed": record.spec.seed,
        "pair_map": (list(record.spec.pair_map)
                     if record.spec.pair_map else None),
        "observed_labels": [int(v) for v in record.observed_labels],
        "flipped": [int(i) for i in record.flipped_ids],
    }
    Path(path).write_text(json.dumps(payload) + "\n")


def load_noise_record(path):
    payload = json.loads(Path(path).read_text())
    spec = NoiseSpec(kind=payload["kind"], rate=float(payload["rate"]),
                     seed=int(payload["seed"]),
                     pair_map=(tuple(payload["pair_map"])
                               if payload.get("pair_map") else None))
    return NoiseRecord(
        observed_labels=np.asarray(payload["observed_labels"],
                                   dtype=np.int64),
        flipped_ids=np.asarray(sorted(payload["flipped"]), dtype=np.int64),
        spec=spec)


def generate_sbm(n_per_class, num_classes, p_in, p_out, feat_dim,
                 feat_separation, seed):
    """Stochastic block model with class-conditional Gaussian features.

    Class means sit on scaled orthogonal axes so every between-class mean
    distance equals feat_separation (requires feat_dim >= num_classes).
    """
    if n_per_class < 1 or num_classes < 1:
        raise ValueError("degenerate SBM sizes")
    if feat_dim < num_classes:
        raise ValueError("feat_dim must be >= num_classes")
    for name, p in (("p_in", p_in), ("p_out", p_out)):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"{name} must be in [0, 1]")
    gen = rng(seed)
    n = n_per_class * num_classes
    labels = np.repeat(np.arange(num_classes), n_per_class)

    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    prob = np.where(same, p_in, p_out)
    keep = gen.random(iu.size) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)

    means = np.zeros((num_classes, feat_dim))
    scale = feat_separation / np.sqrt(2.0)
    means[np.arange(num_classes), np.arange(num_classes)] = scale
    features = means[labels] + gen.standard_normal((n, feat_dim))
    return build_graph(num_classes, edges, features, labels)


def division_quality(partition, record):
    """Precision/recall of the identified clean set against the truly clean
    train nodes (precision is 1.0 when the clean set is empty)."""
    train_ids = np.asarray(partition.train_ids)
    clean_ids = np.asarray(partition.clean_ids)
    truly_clean = np.setdiff1d(train_ids, np.asarray(record.flipped_ids))
    hit = np.intersect1d(clean_ids, truly_clean).size
    precision = 1.0 if clean_ids.size == 0 else hit / clean_ids.size
    recall = 1.0 if truly_clean.size == 0 else hit / truly_clean.size
    return {"precision": float(precision), "recall": float(recall)}


def _feature_cosine_topk(g, unlabeled_ids, candidate_ids, k):
    """Top-k candidate ids per unlabeled node by raw-feature cosine."""
    X = g.features
    norms = np.linalg.norm(X, axis=1)
    safe = np.where(norms < 1e-12, 1.0, norms)
    U = X / safe[:, None]
    U[norms < 1e-12] = 0.0
    sims = U[unlabeled_ids] @ U[candidate_ids].T
    picks = []
    for r in range(len(unlabeled_ids)):
        kk = min(k, len(candidate_ids))
        order = np.lexsort((candidate_ids, -sims[r]))
        picks.append(candidate_ids[order[:kk]])
    return picks


LINK_STRATEGIES = ("none", "linkL", "linkCL_oracle", "linkCL_gmm")


def link_strategy_experiment(g, record, masks, strategy, k, cfg):
    """Compare linking policies at fixed k (feature-similarity links).

    linkL links each unlabeled node to its top-k most feature-similar
    labeled nodes; linkCL_oracle restricts candidates to truly clean labeled
    nodes; linkCL_gmm restricts to the clean set the full training system
    identifies (coarse division re-derived at its best checkpoint). A plain
    GCN is then trained on the augmented graph. Returns test accuracy and
    the fraction of added edges whose labeled endpoint carries a flipped
    label.
    """
    from . import trainer as trainer_mod
    from .graph import normalize_adjacency
    from . import coarse as coarse_mod
    from . import gcn as gcn_mod
    import scipy.sparse as sp

    if strategy not in LINK_STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if k < 1:
        raise ValueError("k must be >= 1")
    train_ids = np.asarray(masks.train_ids)
    unlabeled_ids = np.setdiff1d(np.arange(g.num_nodes), train_ids)
    observed = record.observed_labels
    flipped_mask = np.zeros(g.num_nodes, dtype=bool)
    flipped_mask[record.flipped_ids] = True

    if strategy == "none":
        candidates = np.zeros(0, dtype=np.int64)
    elif strategy == "linkL":
        candidates = train_ids
    elif strategy == "linkCL_oracle":
        candidates = np.setdiff1d(train_ids, record.flipped_ids)
    else:  # linkCL_gmm: the division the trained system settles on
        res = trainer_mod.train(g, observed, masks, cfg)
        S_best = normalize_adjacency(res.a_hat).matrix
        X = trainer_mod._feature_operator(g.features)
        fw1 = gcn_mod.forward(S_best, X, res.peers.gcn1)
        fw2 = gcn_mod.forward(S_best, X, res.peers.gcn2)
        l1 = coarse_mod.per_node_loss(fw1.probs, observed, train_ids)
        l2 = coarse_mod.per_node_loss(fw2.probs, observed, train_ids)
        part = coarse_mod.co_decide(
            train_ids,
            coarse_mod.clean_posterior(coarse_mod.fit_gmm_1d(l1), l1),
            coarse_mod.clean_posterior(coarse_mod.fit_gmm_1d(l2), l2),
            cfg.p_th)
        candidates = part.clean_ids

    added_src = []
    added_dst = []
    if candidates.size:
        A = g.adjacency
        picks = _feature_cosine_topk(g, unlabeled_ids, candidates, k)
        for i, chosen in zip(unlabeled_ids, picks):
            row = A.indices[A.indptr[i]:A.indptr[i + 1]]
            new = chosen[~np.isin(chosen, row)]
            added_src.extend([i] * len(new))
            added_dst.extend(new.tolist())
    added_src = np.asarray(added_src, dtype=np.int64)
    added_dst = np.asarray(added_dst, dtype=np.int64)

    if added_src.size:
        overlay = sp.csr_matrix(
            (np.ones(2 * added_src.size),
             (np.concatenate([added_src, added_dst]),
              np.concatenate([added_dst, added_src]))),
            shape=g.adjacency.shape)
        overlay.sum_duplicates()
        overlay.data[:] = 1.0  # two unlabeled nodes may add the same pair
        augmented = (sp.csr_matrix(g.adjacency, dtype=np.float64)
                     + overlay).tocsr()
        augmented.data[:] = np.minimum(augmented.data, 1.0)
        noisy_fraction = float(flipped_mask[added_dst].mean())
    else:
        augmented = sp.csr_matrix(g.adjacency, dtype=np.float64)
        noisy_fraction = 0.0

    g_aug = Graph(num_nodes=g.num_nodes, num_classes=g.num_classes,
                  adjacency=augmented, features=g.features, labels=g.labels)
    res = trainer_mod.train_plain_gcn(g_aug, observed, masks, cfg)
    return {"strategy": strategy, "test_accuracy": res.test_acc,
            "noisy_neighbor_fraction": noisy_fraction,
            "added_edges": int(added_src.size)}
