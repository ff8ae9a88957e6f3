"""Coarse division of labeled nodes into clean and noisy sets.

Per-node cross-entropy losses are min-max normalized and fit with a
two-component 1-D Gaussian mixture by EM; the posterior of the smaller-mean
component is the clean probability. Two peer networks each produce a clean
set and the intersection is kept (co-decision).
"""

from dataclasses import dataclass, field

import numpy as np

VAR_FLOOR = 1e-6
LOG_EPS = 1e-12


@dataclass
class GmmFit:
    """Two-component 1-D mixture fit on min-max normalized losses.

    Components are sorted so index 0 has the smaller mean. loss_min and
    loss_max record the normalization applied before fitting so posteriors
    can be evaluated on raw losses.
    """

    lam: np.ndarray
    mu: np.ndarray
    var: np.ndarray
    iterations_used: int
    converged: bool
    degenerate: bool
    loss_min: float
    loss_max: float
    loglik_path: list = field(default_factory=list)

    def raw_means(self):
        """Component means mapped back to the raw loss scale."""
        return self.loss_min + self.mu * (self.loss_max - self.loss_min)


@dataclass
class CoarsePartition:
    train_ids: np.ndarray
    clean_ids: np.ndarray
    noisy_ids: np.ndarray
    probs1: np.ndarray
    probs2: np.ndarray


def per_node_loss(P, observed_labels, train_ids):
    """Cross-entropy -log P[i, y_i] for each training node."""
    train_ids = np.asarray(train_ids)
    if train_ids.size and (train_ids.min() < 0 or train_ids.max() >= P.shape[0]):
        raise ValueError("train id outside the probability matrix")
    y = np.asarray(observed_labels)[train_ids]
    if y.size and (y.min() < 0 or y.max() >= P.shape[1]):
        raise ValueError("observed label outside [0, C)")
    p = P[train_ids, y]
    return -np.log(np.maximum(p, LOG_EPS))


def _log_normal(x, mu, var):
    return -0.5 * (np.log(2.0 * np.pi * var) + (x - mu) ** 2 / var)


def _loglik(x, lam, mu, var):
    comp = np.log(lam)[None, :] + _log_normal(x[:, None], mu[None, :],
                                              var[None, :])
    m = comp.max(axis=1, keepdims=True)
    return float((m.ravel() + np.log(np.exp(comp - m).sum(axis=1))).sum())


def fit_gmm_1d(losses, max_iter=100, tol=1e-6, seed=0):
    """EM fit of a two-component mixture to 1-D losses.

    Losses are min-max normalized to [0,1] first. Initialization is
    deterministic (means at the 10th/90th percentiles, equal mixing weights,
    pooled variance), so the seed argument only exists for interface
    stability. If all losses are identical the fit is degenerate and flagged
    converged=False; callers treat every node as clean in that case.
    """
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size < 2:
        raise ValueError("need at least 2 samples to fit the mixture")
    if not np.all(np.isfinite(losses)):
        raise ValueError("losses contain non-finite values")
    lo, hi = float(losses.min()), float(losses.max())
    if hi - lo < 1e-15:
        return GmmFit(lam=np.array([0.5, 0.5]), mu=np.array([0.0, 0.0]),
                      var=np.array([VAR_FLOOR, VAR_FLOOR]),
                      iterations_used=0, converged=False, degenerate=True,
                      loss_min=lo, loss_max=hi)

    x = (losses - lo) / (hi - lo)
    mu = np.percentile(x, [10.0, 90.0])
    var = np.full(2, max(float(np.var(x)), VAR_FLOOR))
    lam = np.array([0.5, 0.5])

    path = [_loglik(x, lam, mu, var)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        # E-step in log space
        comp = np.log(lam)[None, :] + _log_normal(x[:, None], mu[None, :],
                                                  var[None, :])
        m = comp.max(axis=1, keepdims=True)
        w = np.exp(comp - m)
        resp = w / w.sum(axis=1, keepdims=True)
        # M-step
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-300)
        lam = nk / x.size
        mu = (resp * x[:, None]).sum(axis=0) / nk
        var = (resp * (x[:, None] - mu[None, :]) ** 2).sum(axis=0) / nk
        var = np.maximum(var, VAR_FLOOR)
        ll = _loglik(x, lam, mu, var)
        path.append(ll)
        if abs(ll - path[-2]) < tol:
            converged = True
            break

    order = np.argsort(mu)
    return GmmFit(lam=lam[order], mu=mu[order], var=var[order],
                  iterations_used=it, converged=converged, degenerate=False,
                  loss_min=lo, loss_max=hi, loglik_path=path)


def clean_posterior(fit, losses):
    """Posterior probability of the smaller-mean component, evaluated on raw
    losses; a degenerate fit marks everything clean (probability 1)."""
    scalar = np.isscalar(losses)
    losses = np.atleast_1d(np.asarray(losses, dtype=np.float64))
    if fit.degenerate:
        out = np.ones_like(losses)
        return float(out[0]) if scalar else out
    span = fit.loss_max - fit.loss_min
    x = (losses - fit.loss_min) / span
    comp = np.log(fit.lam)[None, :] + _log_normal(x[:, None], fit.mu[None, :],
                                                  fit.var[None, :])
    m = comp.max(axis=1, keepdims=True)
    w = np.exp(comp - m)
    out = w[:, 0] / w.sum(axis=1)
    return float(out[0]) if scalar else out


def co_decide(train_ids, probs1, probs2, p_th):
    """Intersect the two peers' clean sets: kept iff both probabilities
    strictly exceed p_th."""
    train_ids = np.asarray(train_ids)
    probs1 = np.asarray(probs1, dtype=np.float64)
    probs2 = np.asarray(probs2, dtype=np.float64)
    if probs1.shape != train_ids.shape or probs2.shape != train_ids.shape:
        raise ValueError("probability arrays must align with train_ids")
    keep = (probs1 > p_th) & (probs2 > p_th)
    return CoarsePartition(train_ids=train_ids,
                           clean_ids=train_ids[keep],
                           noisy_ids=train_ids[~keep],
                           probs1=probs1, probs2=probs2)
