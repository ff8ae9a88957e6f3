"""Robust semi-supervised node classification under sparse, noisy labels.

The training system combines four mechanisms: per-node loss modeling with a
two-component Gaussian mixture to split labeled nodes into clean and noisy
sets (co-decided by two peer GCNs), graph augmentation that links unlabeled
nodes only to identified-clean labeled nodes, confidence-based relabeling and
pseudo-labeling, and a composite objective with a consistency regularizer.
"""

__version__ = "0.1.0"
