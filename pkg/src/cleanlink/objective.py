"""The composite training objective.

Pieces: a weighted negative log-likelihood over the supervised nodes (both
peers' probabilities multiplied inside the log), the inter-view symmetric KL
between peers plus the intra-view neighbor-weighted KL (consistency), and
the weighted total with the reconstruction term. All logs are clamped at
1e-12 and 0*log(0) contributes 0. Gradients here are w.r.t. probabilities;
numerics.softmax_grad_to_logits pulls them back to logits.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

EPS = 1e-12

logger = logging.getLogger(__name__)


@dataclass
class SupervisionWeights:
    """Per-node effective labels and weights for the supervised loss.

    Covers clean (w=1, observed), relabeled (w=1, replacement), remaining
    noisy (w=beta, observed), and pseudo-labeled (w=1, pseudo) nodes; kept
    unlabeled nodes are omitted (weight 0).
    """

    ids: np.ndarray
    labels: np.ndarray
    weights: np.ndarray


def supervision_weights(coarse_part, fine_part, observed_labels, beta):
    observed = np.asarray(observed_labels)
    ids = np.concatenate([coarse_part.clean_ids, fine_part.cf_ids,
                          fine_part.re_ids, fine_part.pl_ids])
    labels = np.concatenate([observed[coarse_part.clean_ids],
                             fine_part.cf_labels,
                             observed[fine_part.re_ids],
                             fine_part.pl_labels])
    weights = np.concatenate([np.ones(len(coarse_part.clean_ids)),
                              np.ones(len(fine_part.cf_ids)),
                              np.full(len(fine_part.re_ids), float(beta)),
                              np.ones(len(fine_part.pl_ids))])
    keep = weights > 0.0
    return SupervisionWeights(ids=ids[keep].astype(np.int64),
                              labels=labels[keep].astype(np.int64),
                              weights=weights[keep])


def _clog(P):
    return np.log(np.maximum(P, EPS))


def label_loss(P1, P2, weights, norm_count=None):
    """Weighted NLL -(1/n) sum w_i log(P1[i,y] P2[i,y]) and its gradients.

    norm_count overrides the divisor (defaults to the supervised count).
    """
    dP1 = np.zeros_like(P1)
    dP2 = np.zeros_like(P2)
    ids, labels, w = weights.ids, weights.labels, weights.weights
    if len(ids) == 0:
        logger.warning("label loss over an empty supervised set")
        return 0.0, dP1, dP2
    n = float(norm_count if norm_count is not None else len(ids))
    p1 = P1[ids, labels]
    p2 = P2[ids, labels]
    loss = float(-(w * (_clog(p1) + _clog(p2))).sum() / n)
    g1 = np.where(p1 > EPS, -w / (n * np.maximum(p1, EPS)), 0.0)
    g2 = np.where(p2 > EPS, -w / (n * np.maximum(p2, EPS)), 0.0)
    np.add.at(dP1, (ids, labels), g1)
    np.add.at(dP2, (ids, labels), g2)
    return loss, dP1, dP2


def kl_rows(P, Q):
    """Row-wise KL(P_i || Q_i) with clamped logs; exact zeros in P drop out."""
    return (P * (_clog(P) - _clog(Q))).sum(axis=1)


def consistency_loss(P1, P2, W_row, node_set):
    """Mean over node_set of inter-view symmetric KL plus the intra-view
    neighbor-weighted KL for both peers.

    W_row is the row-normalized augmented adjacency with self-loops; the
    intra term for node i averages KL(P_j || P_i) over its row. Returns
    (inter, intra, dP1, dP2); gradients are w.r.t. the probabilities.
    """
    node_set = np.asarray(node_set)
    dP1 = np.zeros_like(P1)
    dP2 = np.zeros_like(P2)
    if node_set.size == 0:
        return 0.0, 0.0, dP1, dP2
    m = float(node_set.size)
    lp1, lp2 = _clog(P1), _clog(P2)
    ind1 = (P1 > EPS).astype(np.float64)
    ind2 = (P2 > EPS).astype(np.float64)

    # inter-view: KL(P1_i||P2_i) + KL(P2_i||P1_i) on the node set
    rows = node_set
    inter = float((kl_rows(P1[rows], P2[rows])
                   + kl_rows(P2[rows], P1[rows])).sum() / m)
    safe1 = np.maximum(P1[rows], EPS)
    safe2 = np.maximum(P2[rows], EPS)
    dP1[rows] += ((lp1[rows] - lp2[rows] + ind1[rows])
                  - P2[rows] / safe1 * ind1[rows]) / m
    dP2[rows] += ((lp2[rows] - lp1[rows] + ind2[rows])
                  - P1[rows] / safe2 * ind2[rows]) / m

    # intra-view: restrict W to the node-set rows, scale by the mean
    W = sp.csr_matrix(W_row)[node_set] / m
    sel = sp.csr_matrix(
        (np.ones(node_set.size), (np.arange(node_set.size), node_set)),
        shape=(node_set.size, P1.shape[0]))
    W_full = (sel.T @ W).tocsr()  # N x N, rows outside node_set are zero
    colsum = np.asarray(W_full.sum(axis=0)).ravel()

    intra = 0.0
    for P, lp, ind, dP in ((P1, lp1, ind1, dP1), (P2, lp2, ind2, dP2)):
        s = (P * lp).sum(axis=1)
        WP = W_full @ P
        intra += float((W_full @ s).sum() - (WP * lp).sum())
        dP += colsum[:, None] * (lp + ind)
        dP -= W_full.T @ lp
        dP -= WP / np.maximum(P, EPS) * ind
    return inter, float(intra), dP1, dP2


@dataclass
class LossBreakdown:
    label: float
    rec: float
    reg_inter: float
    reg_intra: float
    total: float

    def as_dict(self):
        return {"label": self.label, "rec": self.rec,
                "reg_inter": self.reg_inter, "reg_intra": self.reg_intra,
                "total": self.total}


def total_loss(l_label, l_rec, l_reg_inter, l_reg_intra, alpha, lam):
    """Weighted sum: label + alpha * rec + lam * (inter + intra)."""
    if alpha < 0 or lam < 0:
        raise ValueError("coefficients must be non-negative")
    total = l_label + alpha * l_rec + lam * (l_reg_inter + l_reg_intra)
    return LossBreakdown(label=float(l_label), rec=float(l_rec),
                         reg_inter=float(l_reg_inter),
                         reg_intra=float(l_reg_intra), total=float(total))
