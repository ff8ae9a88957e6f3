"""Fine division based on prediction confidence.

Noisy-labeled nodes whose peers agree on a confident class different from
the observed label get relabeled (confidence set); unlabeled nodes whose
peers agree confidently get pseudo-labels. Confidence is the geometric mean
of the two peers' probabilities at the agreed class, compared strictly
against a threshold. Argmax ties resolve to the lowest class index.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class FinePartition:
    cf_ids: np.ndarray      # relabeled noisy nodes
    cf_labels: np.ndarray
    re_ids: np.ndarray      # remaining noisy nodes (down-weighted)
    pl_ids: np.ndarray      # pseudo-labeled unlabeled nodes
    pl_labels: np.ndarray
    un_ids: np.ndarray      # kept unlabeled nodes


def _agreement(P1, P2, ids):
    """Agreed argmax class and geometric-mean confidence per id."""
    ids = np.asarray(ids)
    a1 = np.argmax(P1[ids], axis=1)
    a2 = np.argmax(P2[ids], axis=1)
    agree = a1 == a2
    conf = np.sqrt(P1[ids, a1] * P2[ids, a1])
    return a1, agree, conf


def relabel_noisy(P1, P2, noisy_ids, observed_labels, th_pse1):
    """Split the noisy set into (confident relabels, remainder)."""
    noisy_ids = np.asarray(noisy_ids)
    if noisy_ids.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy(), noisy_ids.astype(np.int64)
    labels, agree, conf = _agreement(P1, P2, noisy_ids)
    observed = np.asarray(observed_labels)[noisy_ids]
    keep = agree & (labels != observed) & (conf > th_pse1)
    return (noisy_ids[keep].astype(np.int64), labels[keep].astype(np.int64),
            noisy_ids[~keep].astype(np.int64))


def pseudo_label_unlabeled(P1, P2, unlabeled_ids, th_pse2):
    """Split the unlabeled set into (pseudo-labeled, kept unlabeled)."""
    unlabeled_ids = np.asarray(unlabeled_ids)
    if unlabeled_ids.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy(), unlabeled_ids.astype(np.int64)
    labels, agree, conf = _agreement(P1, P2, unlabeled_ids)
    keep = agree & (conf > th_pse2)
    return (unlabeled_ids[keep].astype(np.int64),
            labels[keep].astype(np.int64),
            unlabeled_ids[~keep].astype(np.int64))


def fine_division(P1, P2, noisy_ids, unlabeled_ids, observed_labels,
                  th_pse1, th_pse2):
    cf_ids, cf_labels, re_ids = relabel_noisy(P1, P2, noisy_ids,
                                              observed_labels, th_pse1)
    pl_ids, pl_labels, un_ids = pseudo_label_unlabeled(P1, P2, unlabeled_ids,
                                                       th_pse2)
    return FinePartition(cf_ids=cf_ids, cf_labels=cf_labels, re_ids=re_ids,
                         pl_ids=pl_ids, pl_labels=pl_labels, un_ids=un_ids)


def empty_fine_division(noisy_ids, unlabeled_ids):
    """The no-op division used by the trainer when fine division is off."""
    empty = np.zeros(0, dtype=np.int64)
    return FinePartition(cf_ids=empty, cf_labels=empty.copy(),
                         re_ids=np.asarray(noisy_ids, dtype=np.int64),
                         pl_ids=empty.copy(), pl_labels=empty.copy(),
                         un_ids=np.asarray(unlabeled_ids, dtype=np.int64))
