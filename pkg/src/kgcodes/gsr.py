"""Causal decoder over code surrogates plus learnable query slots.

The input sequence is [surrogate_0 .. surrogate_{m-1}, q_0 .. q_L] with
learned additive position vectors; pre-norm blocks with causal
self-attention and a relu feed-forward.  Outputs are read at the query
positions and trained to reconstruct the entity embedding (o_0) and its
ancestor centroids (o_1 .. o_L).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


class GsrError(ValueError):
    pass


@dataclass
class GsrConfig:
    n_queries: int = 6      # L + 1; L is the parent recon count
    n_layers: int = 2
    n_heads: int = 4
    ff_mult: int = 4
    lambda_s: float = 1.0
    lambda_h: float = 1.0
    prose_ancestor_indexing: bool = False

    @property
    def L(self):
        return self.n_queries - 1

    def validate(self, d):
        if d % self.n_heads != 0:
            raise GsrError(f"model dim {d} not divisible by {self.n_heads} heads")
        if self.n_queries < 2:
            raise GsrError("need at least two query slots (entity + one ancestor)")
        if self.lambda_s > self.lambda_h:
            warnings.warn("lambda_s exceeds lambda_h; the entity-adjacent target "
                          "is expected to carry the smaller weight", stacklevel=2)
        return self


def init_decoder(d, m, config, rng):
    """Decoder parameters keyed 'dec.*'; sequence length is m + n_queries."""
    config.validate(d)
    t = m + config.n_queries
    dh = d // config.n_heads
    params = {
        "dec.queries": ad.Tensor(rng.normal(scale=0.1, size=(config.n_queries, d)),
                                 requires_grad=True),
        "dec.pos": ad.Tensor(rng.normal(scale=0.1, size=(t, d)), requires_grad=True),
        "dec.out_w": ad.Tensor(rng.normal(scale=np.sqrt(1.0 / d), size=(d, d)),
                               requires_grad=True),
        "dec.out_b": ad.Tensor(np.zeros(d), requires_grad=True),
    }
    for l in range(config.n_layers):
        for h in range(config.n_heads):
            for kind in ("q", "k", "v"):
                params[f"dec.l{l}.h{h}.w{kind}"] = ad.Tensor(
                    rng.normal(scale=np.sqrt(1.0 / d), size=(d, dh)),
                    requires_grad=True)
        params[f"dec.l{l}.wo"] = ad.Tensor(
            rng.normal(scale=np.sqrt(1.0 / d), size=(d, d)), requires_grad=True)
        ff = d * config.ff_mult
        params[f"dec.l{l}.ff_w1"] = ad.Tensor(
            rng.normal(scale=np.sqrt(2.0 / d), size=(d, ff)), requires_grad=True)
        params[f"dec.l{l}.ff_b1"] = ad.Tensor(np.zeros(ff), requires_grad=True)
        params[f"dec.l{l}.ff_w2"] = ad.Tensor(
            rng.normal(scale=np.sqrt(1.0 / ff), size=(ff, d)), requires_grad=True)
        params[f"dec.l{l}.ff_b2"] = ad.Tensor(np.zeros(d), requires_grad=True)
    return params


def decode(surrogates, params, config):
    """Run the decoder; returns outputs at the query slots, (B, L+1, d)."""
    if not surrogates:
        raise GsrError("need at least one surrogate level")
    m = len(surrogates)
    first = surrogates[0]
    b, d = first.shape[0], first.shape[-1]
    config.validate(d)
    t = m + config.n_queries
    if params["dec.pos"].shape[0] != t:
        raise GsrError(f"decoder built for sequence length {params['dec.pos'].shape[0]}, "
                       f"got {t}")

    seq = [ad.reshape(v, (b, 1, d)) for v in surrogates]
    q_b = ad.Tensor(np.zeros((b, config.n_queries, d))) + params["dec.queries"]
    x = ad.concat(seq + [q_b], axis=1) + params["dec.pos"]

    for l in range(config.n_layers):
        h_in = ad.layer_norm(x)
        heads = []
        for h in range(config.n_heads):
            q = h_in @ params[f"dec.l{l}.h{h}.wq"]
            k = h_in @ params[f"dec.l{l}.h{h}.wk"]
            v = h_in @ params[f"dec.l{l}.h{h}.wv"]
            heads.append(ad.attention(q, k, v, causal=True))
        x = x + ad.concat(heads, axis=-1) @ params[f"dec.l{l}.wo"]
        f_in = ad.layer_norm(x)
        ff = ad.relu(f_in @ params[f"dec.l{l}.ff_w1"] + params[f"dec.l{l}.ff_b1"])
        x = x + ff @ params[f"dec.l{l}.ff_w2"] + params[f"dec.l{l}.ff_b2"]

    y = ad.layer_norm(x) @ params["dec.out_w"] + params["dec.out_b"]
    pick = np.zeros((config.n_queries, t))
    pick[np.arange(config.n_queries), m + np.arange(config.n_queries)] = 1.0
    return ad.Tensor(pick) @ y


def loss_gsr(outputs, s, ancestors, lambda_s, lambda_h):
    """Weighted squared reconstruction error, averaged over the batch.

    outputs: (B, L+1, d); s: (B, d); ancestors: (B, L, d) holding the
    targets for o_1 .. o_L (leaf centroid first under the default
    equation indexing).
    """
    b, n_out, d = outputs.shape
    anc = np.asarray(ancestors, dtype=np.float64)
    if anc.shape != (b, n_out - 1, d):
        raise GsrError(f"expected {n_out - 1} ancestor targets of dim {d} per "
                       f"entity, got array of shape {anc.shape}")

    def slot(i):
        sel = np.zeros((1, n_out))
        sel[0, i] = 1.0
        return ad.reshape(ad.Tensor(sel) @ outputs, (b, d))

    total = ad.squared_norm(slot(0) - ad.Tensor(np.asarray(s, dtype=np.float64)),
                            axis=-1)
    total = total + ad.scale(ad.squared_norm(slot(1) - ad.Tensor(anc[:, 0]), axis=-1),
                             lambda_s)
    for i in range(2, n_out):
        total = total + ad.scale(
            ad.squared_norm(slot(i) - ad.Tensor(anc[:, i - 1]), axis=-1), lambda_h)
    return ad.mean(total)
