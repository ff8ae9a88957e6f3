"""Numeric kernels shared by every module: sparse-dense products, stable
softmax, Adam, a deterministic RNG, and a finite-difference gradient oracle.

Everything is 64-bit. All reductions run in a fixed order so identical seeds
give bit-identical runs.
"""

import numpy as np
import scipy.sparse as sp


def rng(seed):
    """Deterministic generator (PCG64). Same seed, same stream, any platform."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_seeds(seed, n):
    """Derive n independent child seeds from a master seed."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def spmm(S, D):
    """Sparse (CSR) times dense product.

    Accumulation is row-major over the stored column indices of each row,
    which keeps the result deterministic across runs.
    """
    if not sp.issparse(S):
        raise ValueError("spmm expects a sparse left operand")
    D = np.asarray(D, dtype=np.float64)
    if S.shape[1] != D.shape[0]:
        raise ValueError(f"spmm dimension mismatch: {S.shape} @ {D.shape}")
    return S.tocsr() @ D


def row_softmax(M):
    """Row-wise softmax with max-subtraction; rows sum to 1 within 1e-12."""
    M = np.asarray(M, dtype=np.float64)
    shifted = M - M.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def row_log_softmax(M):
    M = np.asarray(M, dtype=np.float64)
    shifted = M - M.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_grad_to_logits(P, dP):
    """Pull a gradient w.r.t. softmax outputs back to the logits.

    dL/dz[i,c] = P[i,c] * (dP[i,c] - sum_k dP[i,k] * P[i,k]).
    """
    inner = (dP * P).sum(axis=1, keepdims=True)
    return P * (dP - inner)


class AdamState:
    """Adam with bias correction.

    Weight decay is the classic L2 form: wd * theta is added to the gradient
    before the moment updates.
    """

    def __init__(self, params, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        """Update params in place from grads; returns params."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, theta in params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise ValueError(f"non-finite gradient for tensor {name!r}")
            if self.weight_decay:
                g = g + self.weight_decay * theta
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            theta -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return params


def finite_diff(f, params, h=1e-5):
    """Central-difference gradient oracle.

    f is a pure scalar function of the parameter dict; each coordinate is
    perturbed by +/-h in place (and restored) to form (f+ - f-) / 2h.
    """
    grads = {}
    for name, theta in params.items():
        g = np.zeros_like(theta)
        flat = theta.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(params)
            flat[i] = orig - h
            fm = f(params)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads[name] = g
    return grads
