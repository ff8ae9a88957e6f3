"""Training orchestration.

Per epoch after warm-up: per-node losses on the current augmented graph,
mixture fits and co-decision, clean-link augmentation, peer predictions on
the new graph, fine division, composite loss, and one Adam step for the two
peers and the edge-predictor encoder. Checkpointing keeps the epoch with the
best validation accuracy. Everything is deterministic per seed.
"""

import json
import logging
from dataclasses import dataclass, asdict, replace
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import augment as aug_mod
from . import coarse, fine, gcn, objective
from .graph import (normalize_adjacency, row_normalize_with_self_loops)
from .numerics import AdamState, rng, softmax_grad_to_logits, spawn_seeds

logger = logging.getLogger(__name__)

SPARSE_FEATURE_DENSITY = 0.05
SPARSE_FEATURE_MIN_SIZE = 1 << 20


@dataclass
class TrainConfig:
    p_th: float = 0.5
    tau: float = 0.1
    th_pse1: float = 0.9
    th_pse2: float = 0.9
    alpha: float = 0.1
    beta: float = 0.1
    lam: float = 0.1
    n_neg: int = 50
    hidden: int = 128
    edge_hidden: int = 64
    epochs: int = 200
    warmup: int = 10
    lr: float = 0.01
    weight_decay: float = 5e-4
    seed: int = 0
    use_gmm: bool = True
    use_fine: bool = True
    use_reg: bool = True
    label_norm: str = "supervised"   # or "vl"
    reg_set: str = "vl+pl"           # "vl" | "vl+pl" | "all"
    top_k: Optional[int] = None

    def validate(self):
        for name in ("p_th", "th_pse1", "th_pse2"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {v}")
        if not 0.0 <= self.tau < 1.0:
            raise ValueError("tau must be in [0, 1)")
        if self.epochs < self.warmup or self.warmup < 0:
            raise ValueError("need epochs >= warmup >= 0")
        for name in ("alpha", "beta", "lam", "lr", "weight_decay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.n_neg < 1:
            raise ValueError("n_neg must be >= 1")
        if self.label_norm not in ("supervised", "vl"):
            raise ValueError("label_norm must be 'supervised' or 'vl'")
        if self.reg_set not in ("vl", "vl+pl", "all"):
            raise ValueError("reg_set must be one of vl, vl+pl, all")

    def as_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    peers: gcn.PeerModel        # parameters at the best-validation epoch
    encoder: gcn.GcnParams      # final encoder parameters
    a_hat: sp.csr_matrix        # augmented adjacency at the best epoch
    added_edges: np.ndarray
    history: list
    best_epoch: int
    best_val_acc: float
    test_acc: float


@dataclass
class PlainResult:
    params: gcn.GcnParams
    history: list
    best_epoch: int
    best_val_acc: float
    test_acc: float


def evaluate(pred, ground_truth, mask_ids):
    """Fraction of correct predictions on the mask."""
    mask_ids = np.asarray(mask_ids)
    if mask_ids.size == 0:
        raise ValueError("empty evaluation mask")
    return float(np.mean(np.asarray(pred)[mask_ids]
                         == np.asarray(ground_truth)[mask_ids]))


def infer(peers, a_hat, X):
    """Predicted labels: argmax of peer 1's probabilities on the (augmented)
    graph; ties resolve to the lowest class index."""
    S = normalize_adjacency(a_hat).matrix
    cache = gcn.forward(S, X, peers.gcn1)
    return np.argmax(cache.probs, axis=1)


def _feature_operator(features):
    """Sparse view of the feature matrix when it pays off."""
    size = features.size
    if size >= SPARSE_FEATURE_MIN_SIZE:
        density = np.count_nonzero(features) / size
        if density < SPARSE_FEATURE_DENSITY:
            return sp.csr_matrix(features)
    return features


def _val_accuracy(probs, labels, val_ids):
    if len(val_ids) == 0:
        return float("nan")
    pred = np.argmax(probs, axis=1)
    return evaluate(pred, labels, val_ids)


def _json_safe(value):
    """NaN is not valid JSON; undefined metrics are stored as null."""
    return None if value is None or np.isnan(value) else float(value)


def _division_stats(clean_ids, train_ids, flipped_ids):
    truly_clean = np.setdiff1d(np.asarray(train_ids), np.asarray(flipped_ids))
    hit = np.intersect1d(clean_ids, truly_clean).size
    precision = 1.0 if len(clean_ids) == 0 else hit / len(clean_ids)
    recall = 1.0 if len(truly_clean) == 0 else hit / len(truly_clean)
    return precision, recall


def _check_added_edges(added, A, clean_ids, tau):
    """In-loop augmentation invariants; raises on the first violation."""
    if len(added) == 0:
        return
    src = added[:, 0].astype(int)
    dst = added[:, 1].astype(int)
    w = added[:, 2]
    if np.asarray(A[src, dst]).ravel().any():
        raise AssertionError("augmentation re-weighted an original edge")
    if not np.isin(dst, clean_ids).all():
        raise AssertionError("added edge target outside the clean set")
    if not ((w > tau) & (w <= 1.0)).all():
        raise AssertionError("added edge weight outside (tau, 1]")


def train(g, observed_labels, masks, cfg, noise_record=None,
          validate_invariants=False):
    """Run the full training loop; see the module docstring for the epoch
    structure.

    noise_record (optional) supplies the ground-truth flip set so the
    history can carry division precision/recall. validate_invariants turns
    on in-loop augmentation checks.
    """
    cfg.validate()
    observed = np.asarray(observed_labels, dtype=np.int64)
    train_ids = np.asarray(masks.train_ids)
    val_ids = np.asarray(masks.val_ids)
    if train_ids.size == 0:
        raise ValueError("empty train set")
    unlabeled_ids = np.setdiff1d(np.arange(g.num_nodes), train_ids)
    flipped = (np.asarray(noise_record.flipped_ids)
               if noise_record is not None else None)

    seed_peer1, seed_peer2, seed_enc, seed_loop = spawn_seeds(cfg.seed, 4)
    peers = gcn.init_peers(g.feature_dim, cfg.hidden, g.num_classes,
                           seed_peer1, seed_peer2)
    encoder = gcn.init_params(g.feature_dim, cfg.edge_hidden,
                              cfg.edge_hidden, seed_enc)
    loop_rng = rng(seed_loop)
    opt1 = AdamState(peers.gcn1.tensors(), lr=cfg.lr,
                     weight_decay=cfg.weight_decay)
    opt2 = AdamState(peers.gcn2.tensors(), lr=cfg.lr,
                     weight_decay=cfg.weight_decay)
    opt_enc = AdamState(encoder.tensors(), lr=cfg.lr,
                        weight_decay=cfg.weight_decay)

    S0 = normalize_adjacency(g).matrix
    X = _feature_operator(g.features)
    A = sp.csr_matrix(g.adjacency, dtype=np.float64)

    history = []
    best = None  # (val_acc, epoch, peers, a_hat, added)

    def consider_checkpoint(val_acc, epoch, a_hat, added):
        # ties advance to the later epoch: on small validation sets long
        # tie plateaus would otherwise pin the checkpoint to a nearly
        # untrained early epoch
        nonlocal best
        if np.isnan(val_acc):
            return
        if best is None or val_acc >= best[0]:
            best = (val_acc, epoch, peers.copy(), a_hat.copy(), added.copy())

    a_hat = A
    S_hat = S0
    added = np.zeros((0, 3))
    pending_fw = None
    use_aug = cfg.alpha > 0

    # warm-up on the original graph: standard cross-entropy for the peers,
    # plain reconstruction loss for the encoder so the first augmentation
    # already scores pairs with a meaningful predictor
    for epoch in range(cfg.warmup):
        (ce1, ce2), = gcn.warmup(peers, S0, X, observed, train_ids, 1,
                                 opt1, opt2)
        warm_rec = None
        if use_aug:
            enc_fw = gcn.forward(S0, X, encoder, softmax=False)
            warm_rec, dZ, _ = aug_mod.reconstruction_loss(
                enc_fw.logits, A, cfg.n_neg, loop_rng)
            opt_enc.step(encoder.tensors(),
                         gcn.backward(enc_fw, S0, X, encoder, dZ))
        fw1 = gcn.forward(S0, X, peers.gcn1)
        val_acc = _val_accuracy(fw1.probs, g.labels, val_ids)
        consider_checkpoint(val_acc, epoch, A, np.zeros((0, 3)))
        history.append({
            "epoch": epoch, "phase": "warmup",
            "losses": {"label": ce1 + ce2, "rec": warm_rec,
                       "reg_inter": None, "reg_intra": None, "total": None},
            "partitions": None, "division": None,
            "val_acc": _json_safe(val_acc),
        })

    for epoch in range(cfg.warmup, cfg.epochs):
        # per-node losses on the current augmented graph
        if pending_fw is not None:
            fw1_div, fw2_div = pending_fw
        else:
            fw1_div = gcn.forward(S_hat, X, peers.gcn1)
            fw2_div = gcn.forward(S_hat, X, peers.gcn2)

        if cfg.use_gmm:
            l1 = coarse.per_node_loss(fw1_div.probs, observed, train_ids)
            l2 = coarse.per_node_loss(fw2_div.probs, observed, train_ids)
            fit1 = coarse.fit_gmm_1d(l1)
            fit2 = coarse.fit_gmm_1d(l2)
            if fit1.degenerate or fit2.degenerate:
                logger.warning("degenerate mixture fit at epoch %d; "
                               "treating all train labels as clean", epoch)
            part = coarse.co_decide(train_ids,
                                    coarse.clean_posterior(fit1, l1),
                                    coarse.clean_posterior(fit2, l2),
                                    cfg.p_th)
        else:
            ones = np.ones(train_ids.size)
            part = coarse.CoarsePartition(
                train_ids=train_ids, clean_ids=train_ids,
                noisy_ids=np.zeros(0, dtype=np.int64),
                probs1=ones, probs2=ones.copy())

        # clean-labels-oriented link (skipped entirely when alpha == 0:
        # the encoder would never train, so augmentation would be noise)
        if use_aug:
            enc_fw = aug_mod.encode(S0, X, encoder)
            Z = enc_fw.logits
            ag = aug_mod.augment(A, Z, part.clean_ids, unlabeled_ids,
                                 cfg.tau, cfg.top_k)
            a_hat, added = ag.a_hat, ag.added_edges
            if validate_invariants:
                _check_added_edges(added, A, part.clean_ids, cfg.tau)
            S_hat = normalize_adjacency(a_hat).matrix

        # peer predictions on the augmented graph
        fw1 = gcn.forward(S_hat, X, peers.gcn1)
        fw2 = gcn.forward(S_hat, X, peers.gcn2)

        if cfg.use_fine:
            fpart = fine.fine_division(fw1.probs, fw2.probs, part.noisy_ids,
                                       unlabeled_ids, observed,
                                       cfg.th_pse1, cfg.th_pse2)
        else:
            fpart = fine.empty_fine_division(part.noisy_ids, unlabeled_ids)

        sw = objective.supervision_weights(part, fpart, observed, cfg.beta)
        norm_count = train_ids.size if cfg.label_norm == "vl" else None
        l_label, dP1, dP2 = objective.label_loss(fw1.probs, fw2.probs, sw,
                                                 norm_count)

        if use_aug:
            l_rec, dZ, _ = aug_mod.reconstruction_loss(Z, A, cfg.n_neg,
                                                       loop_rng)
        else:
            l_rec = 0.0

        lam_eff = cfg.lam if cfg.use_reg else 0.0
        l_inter = l_intra = 0.0
        if lam_eff > 0:
            if cfg.reg_set == "vl":
                reg_ids = train_ids
            elif cfg.reg_set == "vl+pl":
                reg_ids = np.sort(np.concatenate([train_ids, fpart.pl_ids]))
            else:
                reg_ids = np.arange(g.num_nodes)
            W_row = row_normalize_with_self_loops(a_hat)
            l_inter, l_intra, dP1r, dP2r = objective.consistency_loss(
                fw1.probs, fw2.probs, W_row, reg_ids)
            dP1 += lam_eff * dP1r
            dP2 += lam_eff * dP2r

        breakdown = objective.total_loss(l_label, l_rec, l_inter, l_intra,
                                         cfg.alpha, lam_eff)
        if not np.isfinite(breakdown.total):
            raise FloatingPointError(
                f"non-finite total loss at epoch {epoch}: {breakdown}")

        grads1 = gcn.backward(fw1, S_hat, X, peers.gcn1,
                              softmax_grad_to_logits(fw1.probs, dP1))
        grads2 = gcn.backward(fw2, S_hat, X, peers.gcn2,
                              softmax_grad_to_logits(fw2.probs, dP2))
        opt1.step(peers.gcn1.tensors(), grads1)
        opt2.step(peers.gcn2.tensors(), grads2)
        if use_aug:
            grads_enc = gcn.backward(enc_fw, S0, X, encoder, cfg.alpha * dZ)
            opt_enc.step(encoder.tensors(), grads_enc)

        # post-update evaluation on the current graph; reused next epoch as
        # the division forward (same parameters, same adjacency)
        fw1_eval = gcn.forward(S_hat, X, peers.gcn1)
        fw2_eval = gcn.forward(S_hat, X, peers.gcn2)
        pending_fw = (fw1_eval, fw2_eval)
        val_acc = _val_accuracy(fw1_eval.probs, g.labels, val_ids)
        consider_checkpoint(val_acc, epoch, a_hat, added)

        division = None
        if flipped is not None:
            precision, recall = _division_stats(part.clean_ids, train_ids,
                                                flipped)
            division = {"precision": precision, "recall": recall}
        history.append({
            "epoch": epoch, "phase": "main",
            "losses": breakdown.as_dict(),
            "partitions": {
                "v_cl": int(part.clean_ids.size),
                "v_n": int(part.noisy_ids.size),
                "v_cf": int(fpart.cf_ids.size),
                "v_re": int(fpart.re_ids.size),
                "v_pl": int(fpart.pl_ids.size),
                "v_un": int(fpart.un_ids.size),
                "added_edges": int(len(added)),
            },
            "division": division,
            "val_acc": _json_safe(val_acc),
        })

    if best is None:
        best = (float("nan"), cfg.epochs - 1, peers.copy(), a_hat.copy(),
                added.copy())
    best_val, best_epoch, best_peers, best_a_hat, best_added = best
    test_acc = float("nan")
    if len(masks.test_ids):
        pred = infer(best_peers, best_a_hat, X)
        test_acc = evaluate(pred, g.labels, masks.test_ids)
    return TrainResult(peers=best_peers, encoder=encoder, a_hat=best_a_hat,
                       added_edges=best_added, history=history,
                       best_epoch=int(best_epoch),
                       best_val_acc=float(best_val), test_acc=test_acc)


def train_plain_gcn(g, observed_labels, masks, cfg):
    """Baseline: a single GCN trained with plain cross-entropy on the
    original graph, best-validation checkpointing. Uses the same derived
    init seed as peer 1 so ablated runs are directly comparable."""
    cfg.validate()
    observed = np.asarray(observed_labels, dtype=np.int64)
    train_ids = np.asarray(masks.train_ids)
    if train_ids.size == 0:
        raise ValueError("empty train set")
    seed_init, _, _, _ = spawn_seeds(cfg.seed, 4)
    params = gcn.init_params(g.feature_dim, cfg.hidden, g.num_classes,
                             seed_init)
    opt = AdamState(params.tensors(), lr=cfg.lr,
                    weight_decay=cfg.weight_decay)
    S = normalize_adjacency(g).matrix
    X = _feature_operator(g.features)
    n = train_ids.size
    history = []
    best = None
    for epoch in range(cfg.epochs):
        cache = gcn.forward(S, X, params)
        ce = gcn.cross_entropy_on(cache.probs, observed, train_ids)
        grad_logits = np.zeros_like(cache.logits)
        rows = cache.probs[train_ids].copy()
        rows[np.arange(n), observed[train_ids]] -= 1.0
        grad_logits[train_ids] = rows / n
        opt.step(params.tensors(),
                 gcn.backward(cache, S, X, params, grad_logits))
        fw = gcn.forward(S, X, params)
        val_acc = _val_accuracy(fw.probs, g.labels, masks.val_ids)
        if not np.isnan(val_acc) and (best is None or val_acc >= best[0]):
            best = (val_acc, epoch, params.copy())
        history.append({"epoch": epoch, "ce": ce,
                        "val_acc": _json_safe(val_acc)})
    if best is None:
        best = (float("nan"), cfg.epochs - 1, params.copy())
    best_val, best_epoch, best_params = best
    test_acc = float("nan")
    if len(masks.test_ids):
        fw = gcn.forward(S, X, best_params)
        pred = np.argmax(fw.probs, axis=1)
        test_acc = evaluate(pred, g.labels, masks.test_ids)
    return PlainResult(params=best_params, history=history,
                       best_epoch=int(best_epoch),
                       best_val_acc=float(best_val), test_acc=test_acc)


def ablation_config(cfg, variant):
    """Named ablation variants of a config."""
    if variant == "full":
        return cfg
    if variant == "wo_gmm":
        return replace(cfg, use_gmm=False)
    if variant == "wo_pl":
        return replace(cfg, use_fine=False)
    if variant == "wo_cr":
        return replace(cfg, use_reg=False)
    raise ValueError(f"unknown ablation variant {variant!r}")


def save_run(result, cfg, out_dir):
    """Persist history.json, model.ckpt, augmented_edges.csv, result.json.

    All outputs are bit-deterministic for a fixed config and seed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "history.json").write_text(
        json.dumps(result.history, sort_keys=True) + "\n")
    tensors = result.peers.tensors()
    tensors.update(result.encoder.tensors("encoder."))
    gcn.save_checkpoint(out_dir / "model.ckpt", tensors)
    with open(out_dir / "augmented_edges.csv", "w") as f:
        f.write("epoch,src,dst,weight\n")
        for src, dst, w in result.added_edges:
            f.write(f"{result.best_epoch},{int(src)},{int(dst)},{repr(float(w))}\n")
    (out_dir / "result.json").write_text(json.dumps({
        "best_epoch": result.best_epoch,
        "best_val_acc": _json_safe(result.best_val_acc),
        "test_acc": _json_safe(result.test_acc),
        "config": cfg.as_dict(),
    }, sort_keys=True) + "\n")
    return out_dir


def load_augmented_adjacency(g, edges_csv):
    """Rebuild the augmented adjacency from a saved added-edges CSV."""
    A = sp.csr_matrix(g.adjacency, dtype=np.float64)
    path = Path(edges_csv)
    rows = []
    with open(path) as f:
        header = f.readline()
        assert header.strip() == "epoch,src,dst,weight"
        for line in f:
            _, src, dst, w = line.strip().split(",")
            rows.append((int(src), int(dst), float(w)))
    if not rows:
        return A
    arr = np.asarray(rows, dtype=np.float64)
    src = arr[:, 0].astype(np.int64)
    dst = arr[:, 1].astype(np.int64)
    w = arr[:, 2]
    overlay = sp.csr_matrix(
        (np.concatenate([w, w]),
         (np.concatenate([src, dst]), np.concatenate([dst, src]))),
        shape=A.shape)
    return (A + overlay).tocsr()
