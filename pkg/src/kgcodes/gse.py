"""Hierarchy-aligned contrastive losses over per-level surrogates.

The alignment loss pulls each level's surrogate toward the entity's own
cluster centroid with depth-decaying weights; the separability loss
pushes surrogates away from sibling centroids with depth-growing
weights.  Both share a batch-wide softmax denominator over centroids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


class GseError(ValueError):
    pass


@dataclass
class GseConfig:
    tau: float = 0.07
    lambda1: float = 0.8
    lambda2: float = 0.4
    n_max: int = 5
    exclude_self_in_denominator: bool = False

    def validate(self):
        if self.tau <= 0:
            raise GseError(f"tau must be > 0, got {self.tau}")
        if not 0 < self.lambda1 < 1:
            raise GseError(f"lambda1 must be in (0,1), got {self.lambda1}")
        if not 0 < self.lambda2 < 1:
            raise GseError(f"lambda2 must be in (0,1), got {self.lambda2}")
        return self


def _log_denominator(v, centroids, tau, self_index=None):
    """Row-wise log sum_e' exp(v . mu_e' / tau), max-stabilized.

    With self_index given, entity e's own centroid is excluded from its
    row of the sum (off-by-default variant).
    """
    logits = ad.scale(v @ ad.transpose(ad.Tensor(centroids)), 1.0 / tau)  # (B, B)
    if self_index is not None:
        keep = 1.0 - np.eye(logits.shape[0])
        m = np.max(np.where(keep > 0, logits.data, -np.inf), axis=1, keepdims=True)
        m_full = ad.Tensor(np.broadcast_to(m, logits.shape).copy())
        shifted = ad.exp(logits - m_full) * ad.Tensor(keep)
    else:
        m = logits.data.max(axis=1, keepdims=True)
        m_full = ad.Tensor(np.broadcast_to(m, logits.shape).copy())
        shifted = ad.exp(logits - m_full)
    return ad.log(ad.sum_(shifted, axis=-1, keepdims=True)) + ad.Tensor(m)


def log_denominators(surrogates, centroids, config):
    """Per-level denominators, shareable between the two losses."""
    mu = np.asarray(centroids, dtype=np.float64)
    self_index = True if config.exclude_self_in_denominator else None
    return [_log_denominator(v, mu, config.tau, self_index=self_index)
            for v in surrogates]


def loss_l1(surrogates, centroids, config, denominators=None):
    """Coarse-to-fine alignment of surrogates to own centroids."""
    config.validate()
    mu = np.asarray(centroids, dtype=np.float64)
    n, m = mu.shape[0], len(surrogates)
    if denominators is None:
        denominators = log_denominators(surrogates, centroids, config)
    total = None
    for i, v in enumerate(surrogates):
        own = ad.sum_(v * ad.Tensor(mu), axis=-1, keepdims=True)  # (B,1) v_i . mu_e
        logp = ad.scale(own, 1.0 / config.tau) - denominators[i]
        w = (config.lambda1 ** (i + 1)) / m
        term = ad.scale(ad.sum_(logp), -w)
        total = term if total is None else total + term
    return ad.scale(total, 1.0 / n)


def loss_l2(surrogates, neighbor_sets, centroids, config, denominators=None):
    """Hierarchical separability from sibling centroids.

    neighbor_sets: per entity, a list of neighbor centroid vectors;
    entities with no neighbors contribute zero.
    """
    config.validate()
    mu = np.asarray(centroids, dtype=np.float64)
    n, m = mu.shape[0], len(surrogates)
    d = mu.shape[1]
    n_max = max((len(s) for s in neighbor_sets), default=0)
    if n_max == 0:
        return ad.Tensor(0.0)
    nbr = np.zeros((n, n_max, d))
    mask = np.zeros((n, n_max))
    inv_count = np.zeros(n)
    for e, s in enumerate(neighbor_sets):
        for j, vec in enumerate(s):
            nbr[e, j] = vec
            mask[e, j] = 1.0
        if s:
            inv_count[e] = 1.0 / len(s)
    nbr_t = ad.Tensor(np.swapaxes(nbr, 1, 2))  # (B, d, n_max)
    if denominators is None:
        denominators = log_denominators(surrogates, centroids, config)
    total = None
    for i, v in enumerate(surrogates):
        scores = ad.reshape(ad.reshape(v, (n, 1, d)) @ nbr_t, (n, n_max))
        logp = (ad.scale(scores, 1.0 / config.tau)
                - denominators[i] @ ad.Tensor(np.ones((1, n_max))))
        per_entity = ad.sum_(logp * ad.Tensor(mask), axis=-1) * ad.Tensor(inv_count)
        w = (config.lambda2 ** (m - i)) / m
        term = ad.scale(ad.sum_(per_entity), w)
        total = term if total is None else total + term
    return ad.scale(total, 1.0 / n)


def loss_gse(surrogates, centroids, neighbor_sets, config,
             use_l1=True, use_l2=True):
    """Sum of the alignment and separability losses, with ablation flags."""
    parts = []
    den = log_denominators(surrogates, centroids, config) if (use_l1 or use_l2) else None
    if use_l1:
        parts.append(loss_l1(surrogates, centroids, config, denominators=den))
    if use_l2:
        parts.append(loss_l2(surrogates, neighbor_sets, centroids, config,
                             denominators=den))
    if not parts:
        return ad.Tensor(0.0)
    out = parts[0]
    for p in parts[1:]:
        out = out + p
    return out
