"""Shared test machinery: the composite-loss gradient harness and small
deterministic problem instances.

The gradient-check instances pin everything the loss depends on besides the
parameters (partitions, negative samples, the augmented adjacency) and are
screened away from the non-differentiable points of the model: ReLU kinks,
zero-norm embeddings, and the decoder ReLU at cos = 0.
"""

import numpy as np
import scipy.sparse as sp

from cleanlink import augment as aug_mod
from cleanlink import coarse, fine, gcn, objective
from cleanlink.graph import normalize_adjacency, row_normalize_with_self_loops
from cleanlink.numerics import rng, softmax_grad_to_logits

GRAD_ALPHA = 0.5
GRAD_LAM = 0.3


def random_adjacency(gen, n, density=0.4):
    upper = np.triu(gen.random((n, n)) < density, k=1)
    return sp.csr_matrix((upper | upper.T).astype(np.float64))


def build_gradcheck_instance(seed, n=6, d=4, hidden=3, classes=3,
                             embed=3, n_neg=2):
    """One pinned loss instance, or None if it fails the margin screen."""
    gen = rng(seed)
    A = random_adjacency(gen, n)
    if A.nnz < 4:
        return None
    X = gen.standard_normal((n, d))
    p1 = gcn.init_params(d, hidden, classes, seed * 7 + 1)
    p2 = gcn.init_params(d, hidden, classes, seed * 7 + 2)
    enc = gcn.init_params(d, embed, embed, seed * 7 + 3)

    train = np.array([0, 1, 2])
    observed = gen.integers(0, classes, size=n)
    part = coarse.CoarsePartition(
        train_ids=train, clean_ids=np.array([0]), noisy_ids=np.array([1, 2]),
        probs1=np.ones(3), probs2=np.ones(3))
    fpart = fine.FinePartition(
        cf_ids=np.array([1]),
        cf_labels=np.array([(observed[1] + 1) % classes]),
        re_ids=np.array([2]), pl_ids=np.array([4]),
        pl_labels=np.array([1]), un_ids=np.array([3, 5]))
    sw = objective.supervision_weights(part, fpart, observed, beta=0.1)

    # pin one extra edge so a_hat differs from A
    dense = A.toarray()
    i0, j0 = next((i, j) for i in range(n) for j in range(i + 1, n)
                  if dense[i, j] == 0)
    overlay = np.zeros((n, n))
    overlay[i0, j0] = overlay[j0, i0] = 0.7
    a_hat = (A + sp.csr_matrix(overlay)).tocsr()
    negatives = aug_mod.sample_negatives(A, n_neg, rng(seed + 99))
    reg_ids = np.sort(np.concatenate([train, fpart.pl_ids]))
    inst = dict(A=A, X=X, p1=p1, p2=p2, enc=enc, sw=sw, a_hat=a_hat,
                negatives=negatives, reg_ids=reg_ids, n_neg=n_neg)

    total, g1, g2, gE, dZ, (fw1, fw2, efw) = total_loss_and_grads(inst)
    margin = 1e-3
    if min(np.abs(fw1.pre1).min(), np.abs(fw2.pre1).min(),
           np.abs(efw.pre1).min()) < margin:
        return None
    Z = efw.logits
    norms = np.linalg.norm(Z, axis=1)
    if norms.min() < 1e-2:
        return None
    U = Z / norms[:, None]
    coo = A.tocoo()
    cosines = np.concatenate([
        np.einsum("ij,ij->i", U[coo.row], U[coo.col]),
        np.einsum("ij,ij->i", U[negatives[0]], U[negatives[1]])])
    if np.abs(cosines).min() < margin:
        return None
    if np.linalg.norm(dZ) < 1e-3:  # instance must exercise the encoder path
        return None
    return inst


def gradcheck_instances(count, start_seed=1):
    """First `count` seeds passing the margin screen, scanned in order."""
    out = []
    seed = start_seed - 1
    while len(out) < count:
        seed += 1
        inst = build_gradcheck_instance(seed)
        if inst is not None:
            out.append((seed, inst))
    return out


def total_loss_and_grads(inst):
    """Composite loss with pinned partitions/negatives and its analytic
    gradients for the three parameter groups."""
    S_hat = normalize_adjacency(inst["a_hat"]).matrix
    S0 = normalize_adjacency(inst["A"]).matrix
    fw1 = gcn.forward(S_hat, inst["X"], inst["p1"])
    fw2 = gcn.forward(S_hat, inst["X"], inst["p2"])
    enc_fw = gcn.forward(S0, inst["X"], inst["enc"], softmax=False)
    Z = enc_fw.logits

    l_label, dP1, dP2 = objective.label_loss(fw1.probs, fw2.probs, inst["sw"])
    l_rec, dZ, _ = aug_mod.reconstruction_loss(Z, inst["A"], inst["n_neg"],
                                               negatives=inst["negatives"])
    W_row = row_normalize_with_self_loops(inst["a_hat"])
    l_inter, l_intra, dP1r, dP2r = objective.consistency_loss(
        fw1.probs, fw2.probs, W_row, inst["reg_ids"])

    total = l_label + GRAD_ALPHA * l_rec + GRAD_LAM * (l_inter + l_intra)
    dP1 = dP1 + GRAD_LAM * dP1r
    dP2 = dP2 + GRAD_LAM * dP2r
    g1 = gcn.backward(fw1, S_hat, inst["X"], inst["p1"],
                      softmax_grad_to_logits(fw1.probs, dP1))
    g2 = gcn.backward(fw2, S_hat, inst["X"], inst["p2"],
                      softmax_grad_to_logits(fw2.probs, dP2))
    gE = gcn.backward(enc_fw, S0, inst["X"], inst["enc"], GRAD_ALPHA * dZ)
    return total, g1, g2, gE, dZ, (fw1, fw2, enc_fw)


def grads_close(analytic, numeric, rel=1e-4, absolute=1e-8):
    """Vector-norm comparison with an absolute floor for ~zero gradients."""
    diff = np.linalg.norm((analytic - numeric).ravel())
    scale = max(np.linalg.norm(analytic.ravel()),
                np.linalg.norm(numeric.ravel()))
    return diff <= rel * scale + absolute
