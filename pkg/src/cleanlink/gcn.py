"""The fixed 2-layer GCN: Glorot init, forward, hand-derived backward,
peer-pair management, warm-up training, and the checkpoint format.

forward computes H1 = relu(S (X W1) + b1), logits = S (H1 W2) + b2 where S
is the symmetric normalized adjacency. The same network doubles as the edge
predictor encoder by skipping the output softmax.
"""

import json
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numerics import rng, spmm, row_softmax

LOG_EPS = 1e-12


@dataclass
class GcnParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def tensors(self, prefix=""):
        """Live views keyed by name, for the optimizer and checkpoints."""
        return {prefix + "W1": self.W1, prefix + "b1": self.b1,
                prefix + "W2": self.W2, prefix + "b2": self.b2}

    def copy(self):
        return GcnParams(self.W1.copy(), self.b1.copy(),
                         self.W2.copy(), self.b2.copy())


@dataclass
class ForwardCache:
    pre1: np.ndarray
    h1: np.ndarray
    logits: np.ndarray
    probs: Optional[np.ndarray]


@dataclass
class PeerModel:
    """Two GCNs with identical shapes and independent initializations."""

    gcn1: GcnParams
    gcn2: GcnParams

    def copy(self):
        return PeerModel(self.gcn1.copy(), self.gcn2.copy())

    def tensors(self):
        out = self.gcn1.tensors("peer1.")
        out.update(self.gcn2.tensors("peer2."))
        return out


def init_params(d, hidden, out, seed):
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    if d <= 0 or hidden <= 0 or out <= 0:
        raise ValueError("dimensions must be positive")
    gen = rng(seed)
    bound1 = np.sqrt(6.0 / (d + hidden))
    bound2 = np.sqrt(6.0 / (hidden + out))
    return GcnParams(
        W1=gen.uniform(-bound1, bound1, size=(d, hidden)),
        b1=np.zeros(hidden),
        W2=gen.uniform(-bound2, bound2, size=(hidden, out)),
        b2=np.zeros(out),
    )


def init_peers(d, hidden, out, seed1, seed2):
    return PeerModel(init_params(d, hidden, out, seed1),
                     init_params(d, hidden, out, seed2))


def forward(S, X, params, softmax=True):
    """Full-batch forward pass; S is the normalized adjacency (CSR).

    X may be dense or sparse. With softmax=False the cache carries raw
    logits only (encoder mode).
    """
    XW = X @ params.W1
    pre1 = spmm(S, XW) + params.b1
    h1 = np.maximum(pre1, 0.0)
    logits = spmm(S, h1 @ params.W2) + params.b2
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits in forward pass")
    probs = row_softmax(logits) if softmax else None
    return ForwardCache(pre1=pre1, h1=h1, logits=logits, probs=probs)


def backward(cache, S, X, params, grad_logits):
    """Exact parameter gradients for an upstream gradient at the logits.

    S is symmetric, so S^T products reuse spmm directly.
    """
    if grad_logits.shape != cache.logits.shape:
        raise ValueError("grad_logits shape mismatch")
    gb2 = grad_logits.sum(axis=0)
    U = spmm(S, grad_logits)
    gW2 = cache.h1.T @ U
    gh1 = U @ params.W2.T
    gpre = np.where(cache.pre1 > 0.0, gh1, 0.0)
    gb1 = gpre.sum(axis=0)
    V = spmm(S, gpre)
    gW1 = X.T @ V
    return {"W1": np.asarray(gW1), "b1": gb1, "W2": gW2, "b2": gb2}


def cross_entropy_on(probs, labels, ids):
    """Mean -log P[i, y_i] over ids, clamped inside the log."""
    p = probs[ids, labels[ids]]
    return float(-np.log(np.maximum(p, LOG_EPS)).mean())


def warmup(peers, S, X, observed_labels, train_ids, epochs, opt1, opt2):
    """Train both peers independently with mean cross-entropy on the
    original normalized adjacency; returns per-epoch (ce1, ce2) pairs."""
    train_ids = np.asarray(train_ids)
    if train_ids.size == 0:
        raise ValueError("empty train set")
    history = []
    n = train_ids.size
    for _ in range(epochs):
        losses = []
        for params, opt in ((peers.gcn1, opt1), (peers.gcn2, opt2)):
            cache = forward(S, X, params)
            losses.append(cross_entropy_on(cache.probs, observed_labels,
                                           train_ids))
            grad_logits = np.zeros_like(cache.logits)
            rows = cache.probs[train_ids].copy()
            rows[np.arange(n), observed_labels[train_ids]] -= 1.0
            grad_logits[train_ids] = rows / n
            grads = backward(cache, S, X, params, grad_logits)
            opt.step(params.tensors(), grads)
        history.append(tuple(losses))
    return history


def save_checkpoint(path, tensors):
    """Flat little-endian f64 tensors after a JSON header of names/shapes."""
    header = json.dumps(
        {"tensors": [{"name": k, "shape": list(v.shape)}
                     for k, v in tensors.items()]},
        sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for v in tensors.values():
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode())
        out = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 8)
            out[entry["name"]] = np.frombuffer(
                buf, dtype="<f8", count=count).reshape(shape).copy()
    return out


def params_from_tensors(tensors, prefix=""):
    return GcnParams(W1=tensors[prefix + "W1"], b1=tensors[prefix + "b1"],
                     W2=tensors[prefix + "W2"], b2=tensors[prefix + "b2"])
