"""Structural KG embeddings and their convex fusion with textual vectors.

Four desk-scale scoring backbones are provided: translation, complex
rotation, complex bilinear, and diagonal bilinear.  Training uses a
margin ranking loss with uniform head/tail corruption.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .optim import Adam

BACKBONES = ("translate", "rotate", "complex", "bilinear")


class FusionError(ValueError):
    pass


@dataclass
class StructEmbedding:
    entity_vecs: np.ndarray    # (|E|, d)
    relation_vecs: np.ndarray  # (|R|, d); (|R|, d/2) phases for rotate
    backbone: str
    loss_trace: list = field(default_factory=list)

    @property
    def dim(self):
        return self.entity_vecs.shape[1]


@dataclass
class FusedEmbedding:
    vectors: np.ndarray  # (|E|, d)
    rho: float
    fallback_ids: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# scoring, numpy route (used for ranking / evaluation)


def score_triples(backbone, h, r, t):
    """Plausibility scores (higher is better) for stacked h/r/t vectors.

    h, t: (..., d) entity vectors; r: (..., d) relation vectors
    (phases of size d/2 for the rotate backbone).
    """
    if backbone == "translate":
        diff = h + r - t
        return -(diff * diff).sum(-1)
    if backbone == "rotate":
        half = h.shape[-1] // 2
        hre, him = h[..., :half], h[..., half:]
        tre, tim = t[..., :half], t[..., half:]
        c, s = np.cos(r), np.sin(r)
        dre = hre * c - him * s - tre
        dim_ = hre * s + him * c - tim
        return -((dre * dre).sum(-1) + (dim_ * dim_).sum(-1))
    if backbone == "complex":
        half = h.shape[-1] // 2
        hre, him = h[..., :half], h[..., half:]
        rre, rim = r[..., :half], r[..., half:]
        tre, tim = t[..., :half], t[..., half:]
        return (hre * rre * tre + him * rre * tim
                + hre * rim * tim - him * rim * tre).sum(-1)
    if backbone == "bilinear":
        return (h * r * t).sum(-1)
    raise FusionError(f"unknown backbone '{backbone}'")


# ---------------------------------------------------------------------------
# scoring, autodiff route (used for training)


def _split_selectors(d):
    half = d // 2
    s1 = np.zeros((d, half))
    s2 = np.zeros((d, half))
    s1[:half] = np.eye(half)
    s2[half:] = np.eye(half)
    return ad.Tensor(s1), ad.Tensor(s2)


def _score_graph(backbone, h, r, t, d):
    """Same scores as score_triples, built on the autodiff graph."""
    if backbone == "translate":
        return ad.scale(ad.squared_norm(h + r - t, axis=-1), -1.0)
    if backbone == "rotate":
        s_re, s_im = _split_selectors(d)
        hre, him = h @ s_re, h @ s_im
        tre, tim = t @ s_re, t @ s_im
        c, s = ad.cos(r), ad.sin(r)
        dre = hre * c - him * s - tre
        dim_ = hre * s + him * c - tim
        return ad.scale(ad.squared_norm(dre, axis=-1)
                        + ad.squared_norm(dim_, axis=-1), -1.0)
    if backbone == "complex":
        s_re, s_im = _split_selectors(d)
        hre, him = h @ s_re, h @ s_im
        rre, rim = r @ s_re, r @ s_im
        tre, tim = t @ s_re, t @ s_im
        prod = (hre * rre * tre + him * rre * tim
                + hre * rim * tim - him * rim * tre)
        return ad.sum_(prod, axis=-1)
    if backbone == "bilinear":
        return ad.sum_(h * r * t, axis=-1)
    raise FusionError(f"unknown backbone '{backbone}'")


def _wrap_phases(theta):
    return (theta + np.pi) % (2.0 * np.pi) - np.pi


def train_struct(dataset, backbone="translate", d=16, margin=1.0, neg_per_pos=1,
                 lr=1e-2, steps=500, seed=0, batch_size=256):
    """Train entity/relation embeddings by margin ranking on train triples."""
    if backbone not in BACKBONES:
        raise FusionError(f"unknown backbone '{backbone}'")
    if steps < 1:
        raise FusionError("steps must be >= 1")
    if backbone == "rotate" and d % 2 != 0:
        raise FusionError("rotate backbone needs even dimension")
    train = dataset.triples.get("train", [])
    if not train:
        raise FusionError("empty train split")

    rng = np.random.default_rng(seed)
    n_e, n_r = dataset.n_entities, dataset.n_relations
    rel_dim = d // 2 if backbone == "rotate" else d
    ent = ad.Tensor(rng.normal(scale=0.1, size=(n_e, d)), requires_grad=True)
    if backbone == "rotate":
        rel = ad.Tensor(rng.uniform(-np.pi, np.pi, size=(n_r, rel_dim)),
                        requires_grad=True)
    else:
        rel = ad.Tensor(rng.normal(scale=0.1, size=(n_r, rel_dim)),
                        requires_grad=True)
    opt = Adam({"ent": ent, "rel": rel}, lr=lr)
    triples = np.asarray(train, dtype=np.int64)
    trace = []

    for _ in range(steps):
        idx = rng.integers(0, len(triples), size=min(batch_size, len(triples)))
        batch = np.repeat(triples[idx], neg_per_pos, axis=0)
        neg = batch.copy()
        corrupt_head = rng.random(len(neg)) < 0.5
        repl = rng.integers(0, n_e, size=len(neg))
        neg[corrupt_head, 0] = repl[corrupt_head]
        neg[~corrupt_head, 2] = repl[~corrupt_head]

        h, r, t = (ad.gather_rows(ent, batch[:, 0]),
                   ad.gather_rows(rel, batch[:, 1]),
                   ad.gather_rows(ent, batch[:, 2]))
        hn, rn, tn = (ad.gather_rows(ent, neg[:, 0]),
                      ad.gather_rows(rel, neg[:, 1]),
                      ad.gather_rows(ent, neg[:, 2]))
        s_pos = _score_graph(backbone, h, r, t, d)
        s_neg = _score_graph(backbone, hn, rn, tn, d)
        loss = ad.mean(ad.relu(ad.Tensor(margin) + s_neg - s_pos))
        opt.zero_grad()
        ad.backward(loss)
        opt.step()
        if backbone == "rotate":
            rel.data = _wrap_phases(rel.data)
        val = loss.item()
        if not np.isfinite(val):
            raise FusionError("non-finite training loss")
        trace.append(val)

    return StructEmbedding(ent.data.copy(), rel.data.copy(), backbone, trace)


def fuse(struct, text, rho, present=None, fallback_struct=False):
    """Per-entity convex combination rho*s_G + (1-rho)*s_T."""
    if not 0.0 <= rho <= 1.0:
        raise FusionError(f"rho must be in [0, 1], got {rho}")
    sg = struct.entity_vecs if isinstance(struct, StructEmbedding) else struct
    st = text.vectors if hasattr(text, "vectors") else np.asarray(text, dtype=np.float64)
    if sg.shape != st.shape:
        raise FusionError(f"dimension mismatch: struct {sg.shape} vs text {st.shape}")
    fused = rho * sg + (1.0 - rho) * st
    fallback = []
    if present is not None:
        missing = np.flatnonzero(~np.asarray(present, dtype=bool))
        if missing.size and not fallback_struct:
            raise FusionError(f"entities without textual vectors: {missing.tolist()}")
        fused[missing] = sg[missing]
        fallback = missing.tolist()
    return FusedEmbedding(fused, rho, fallback)
