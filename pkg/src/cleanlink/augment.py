"""Clean-labels-oriented graph augmentation.

A 2-layer GCN encoder embeds nodes; a ReLU-cosine decoder scores pairs. The
encoder is trained with an adjacency reconstruction loss over the existing
edges plus negatively sampled non-edges. New edges link unlabeled nodes to
identified-clean labeled nodes whenever the score clears a threshold, and
the original edges are always kept at weight 1.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import gcn

NORM_EPS = 1e-12


@dataclass
class AugmentedGraph:
    """Original adjacency plus thresholded weighted additions (symmetric)."""

    a_hat: sp.csr_matrix
    added_edges: np.ndarray  # rows (unlabeled_id, clean_id, weight)


def encode(S_original, X, params):
    """Node embeddings from the 2-layer GCN on the original normalized
    adjacency (linear output layer)."""
    return gcn.forward(S_original, X, params, softmax=False)


def edge_weight(z_i, z_j):
    """ReLU-clipped cosine similarity; zero when either vector has ~zero norm."""
    ni = np.linalg.norm(z_i)
    nj = np.linalg.norm(z_j)
    if ni < NORM_EPS or nj < NORM_EPS:
        return 0.0
    c = float(np.dot(z_i, z_j) / (ni * nj))
    return max(0.0, min(c, 1.0))


def _unit_rows(Z):
    norms = np.linalg.norm(Z, axis=1)
    safe = np.where(norms < NORM_EPS, 1.0, norms)
    out = Z / safe[:, None]
    out[norms < NORM_EPS] = 0.0
    return out, norms


def _edge_keys(A):
    """Stored entries as sorted row*N+col keys (CSR order is ascending)."""
    n = A.shape[0]
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(A.indptr))
    return rows * n + A.indices


def sample_negatives(A, n_neg, gen):
    """For each node, n_neg uniform draws (with replacement) from its
    non-neighbors excluding itself. Nodes with no non-neighbor are skipped.

    Returns (src, dst) index arrays of len <= N * n_neg. Rejection sampling
    is vectorized over all pending draws; membership tests go through a
    sorted edge-key array.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    degrees = np.diff(A.indptr)
    live = np.flatnonzero(degrees + 1 < n)  # nodes with a non-neighbor
    if live.size == 0:
        return (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    keys = _edge_keys(A)
    src = np.repeat(live, n_neg)
    dst = gen.integers(0, n, size=src.size)
    pending = np.arange(src.size)
    while pending.size:
        q = src[pending] * n + dst[pending]
        pos = np.searchsorted(keys, q)
        pos = np.minimum(pos, keys.size - 1) if keys.size else pos
        is_edge = keys[pos] == q if keys.size else np.zeros(q.size, bool)
        bad = is_edge | (src[pending] == dst[pending])
        pending = pending[bad]
        if pending.size:
            dst[pending] = gen.integers(0, n, size=pending.size)
    return src, dst


def _cosine_with_grads(Z, src, dst, coeff, target):
    """Accumulate sum coeff * (w - target)^2 terms and their gradient
    w.r.t. Z.

    coeff and target are per-pair. The gradient is assembled from sparse
    grouped sums instead of per-pair (n_pairs x dim) temporaries:

        dterm/dz_i = s * (z_j / (n_i n_j) - c * z_i / n_i^2),
        grad = W_a Z - diag(b) Z,   W_a[i,j] = sum of s/(n_i n_j) over
                                    pairs, b_i = sum of s c / n_i^2.
    """
    U, norms = _unit_rows(Z)
    c = np.einsum("ij,ij->i", U[src], U[dst])
    live = (norms[src] >= NORM_EPS) & (norms[dst] >= NORM_EPS)
    w = np.where(live, np.clip(c, 0.0, 1.0), 0.0)
    resid = w - target
    loss = float((coeff * resid ** 2).sum())

    act = live & (c > 0.0)
    scale = 2.0 * coeff * resid * act
    n = Z.shape[0]
    ni = np.where(norms < NORM_EPS, 1.0, norms)
    a = scale / (ni[src] * ni[dst])   # symmetric in the pair
    b_src = scale * c / ni[src] ** 2
    b_dst = scale * c / ni[dst] ** 2
    W_a = sp.csr_matrix(
        (np.concatenate([a, a]),
         (np.concatenate([src, dst]), np.concatenate([dst, src]))),
        shape=(n, n))
    b = (np.bincount(src, weights=b_src, minlength=n)
         + np.bincount(dst, weights=b_dst, minlength=n))
    grad = W_a @ Z - b[:, None] * Z
    return loss, grad, w


def reconstruction_loss(Z, A, n_neg, gen=None, negatives=None):
    """Negative-sampled adjacency reconstruction loss and its gradient.

    sum_i [ sum_{j in N(i)} (W_ij - 1)^2 + n_neg * mean_n (W_in)^2 ] with the
    expectation over non-neighbors replaced by the mean of n_neg draws.
    Pass negatives=(src, dst) to pin the samples (gradient checks); otherwise
    they are drawn from gen.
    """
    if n_neg < 1:
        raise ValueError("n_neg must be >= 1")
    A = sp.csr_matrix(A)
    coo = A.tocoo()
    if negatives is None:
        if gen is None:
            raise ValueError("need a generator or fixed negatives")
        negatives = sample_negatives(A, n_neg, gen)
    neg_src, neg_dst = negatives

    src = np.concatenate([coo.row, neg_src])
    dst = np.concatenate([coo.col, neg_dst])
    target = np.concatenate([np.ones(coo.nnz), np.zeros(len(neg_src))])
    # n_neg * mean over each node's draws = n_neg / (draws for that node)
    if len(neg_src):
        counts = np.bincount(neg_src, minlength=Z.shape[0])
        neg_coeff = n_neg / counts[neg_src]
    else:
        neg_coeff = np.zeros(0)
    coeff = np.concatenate([np.ones(coo.nnz), neg_coeff])
    loss, grad, _ = _cosine_with_grads(Z, src, dst, coeff, target)
    return loss, grad, negatives


def augment(A, Z, clean_ids, unlabeled_ids, tau, top_k=None):
    """Build the augmented adjacency per the clean-link rule.

    Scores W_ij are computed for every (unlabeled i, clean j) pair that is
    not already an edge; pairs with W_ij > tau survive (at most top_k per
    unlabeled node when set) and are inserted symmetrically with their
    weight. Original edges keep weight 1. Deterministic given its inputs.
    """
    if tau < 0.0:
        raise ValueError("tau must be non-negative")
    # tau >= 1 is allowed and yields no additions (weights never exceed 1)
    A = sp.csr_matrix(A, dtype=np.float64)
    clean_ids = np.asarray(clean_ids, dtype=np.int64)
    unlabeled_ids = np.asarray(unlabeled_ids, dtype=np.int64)
    if clean_ids.size == 0 or unlabeled_ids.size == 0:
        return AugmentedGraph(a_hat=A.copy(),
                              added_edges=np.zeros((0, 3)))

    U, _ = _unit_rows(Z)
    scores = np.clip(U[unlabeled_ids] @ U[clean_ids].T, 0.0, 1.0)
    existing = A[unlabeled_ids][:, clean_ids].toarray() != 0
    scores[existing] = 0.0

    if top_k is None:
        r_idx, c_idx = np.nonzero(scores > tau)
    else:
        r_parts, c_parts = [], []
        for r in range(len(unlabeled_ids)):
            cand = np.flatnonzero(scores[r] > tau)
            if cand.size > top_k:
                # stable: highest weight first, ties by clean-node id
                order = np.lexsort((clean_ids[cand], -scores[r][cand]))
                cand = cand[order[:top_k]]
            r_parts.append(np.full(cand.size, r))
            c_parts.append(cand)
        r_idx = np.concatenate(r_parts).astype(np.int64)
        c_idx = np.concatenate(c_parts).astype(np.int64)
    if r_idx.size == 0:
        return AugmentedGraph(a_hat=A.copy(), added_edges=np.zeros((0, 3)))
    added = np.stack([unlabeled_ids[r_idx].astype(np.float64),
                      clean_ids[c_idx].astype(np.float64),
                      scores[r_idx, c_idx]], axis=1)
    src = added[:, 0].astype(np.int64)
    dst = added[:, 1].astype(np.int64)
    w = added[:, 2]
    overlay = sp.csr_matrix(
        (np.concatenate([w, w]),
         (np.concatenate([src, dst]), np.concatenate([dst, src]))),
        shape=A.shape)
    return AugmentedGraph(a_hat=(A + overlay).tocsr(), added_edges=added)
