"""Joint training of the quantizer, hierarchy losses, and decoder.

Optimizes the sum of the commitment, alignment/separability, and
reconstruction losses with Adam, tracks per-level codebook entropy over
the full entity set, and selects the checkpoint with the highest mean
entropy.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import gse as gse_mod
from . import gsr as gsr_mod
from . import quantizer as rq
from .gse import GseConfig
from .gsr import GsrConfig
from .optim import Adam


class TrainerError(ValueError):
    pass


@dataclass
class TrainConfig:
    steps: int = 300
    batch_size: int = None        # None -> full entity batch
    lr: float = 1e-4
    seed: int = 0
    alpha: float = 0.25
    encoder_hidden: tuple = (32, 32)
    latent_dim: int = None        # None -> input dim
    m: int = 3
    K: int = 64
    gse: GseConfig = field(default_factory=GseConfig)
    gsr: GsrConfig = field(default_factory=GsrConfig)
    eval_every: int = 100
    checkpoint_dir: str = None
    use_l1: bool = True
    use_l2: bool = True
    use_gsr: bool = True
    dead_code_reset: bool = True
    kmeans_init: bool = True

    def validate(self, n_entities):
        if self.steps < 1:
            raise TrainerError("steps must be >= 1")
        if self.lr <= 0:
            raise TrainerError("lr must be > 0")
        if self.batch_size is not None and self.batch_size > n_entities:
            raise TrainerError("batch_size exceeds entity count")
        return self


@dataclass
class EntropyLog:
    steps: list = field(default_factory=list)
    per_level: list = field(default_factory=list)   # arrays (m,)
    mean_entropy: list = field(default_factory=list)
    utilization: list = field(default_factory=list)  # arrays (m,)

    def append(self, step, levels, mean_h, util):
        self.steps.append(step)
        self.per_level.append(np.asarray(levels))
        self.mean_entropy.append(float(mean_h))
        self.utilization.append(np.asarray(util))

    def __len__(self):
        return len(self.steps)

    def to_csv(self, path):
        m = len(self.per_level[0]) if self.per_level else 0
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["step"] + [f"h_level{l}" for l in range(m)]
                       + ["mean_entropy"] + [f"util_level{l}" for l in range(m)])
            for i, step in enumerate(self.steps):
                w.writerow([step] + [f"{v:.12g}" for v in self.per_level[i]]
                           + [f"{self.mean_entropy[i]:.12g}"]
                           + [f"{v:.12g}" for v in self.utilization[i]])


def codebook_entropy(usage):
    """Natural-log entropy per level plus the mean across levels.

    usage: (m, K) assignment counts over a full entity pass.
    """
    usage = np.asarray(usage, dtype=np.float64)
    if np.any(usage < 0):
        raise TrainerError("negative usage count")
    totals = usage.sum(axis=1)
    if np.any(totals == 0):
        raise TrainerError("a level has zero assignments; quantizer is broken")
    p = usage / totals[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    per_level = -terms.sum(axis=1)
    return per_level, float(per_level.mean())


def select_checkpoint(entropy_values, checkpoints):
    """Argmax mean entropy; ties resolve to the latest entry."""
    if not checkpoints:
        raise TrainerError("no checkpoints recorded")
    if len(entropy_values) != len(checkpoints):
        raise TrainerError("entropy log and checkpoint set differ in length")
    best = 0
    for i in range(1, len(checkpoints)):
        if entropy_values[i] >= entropy_values[best]:
            best = i
    return checkpoints[best]


@dataclass
class TrainState:
    codebooks: rq.Codebooks
    params: dict                  # encoder + decoder tensors
    embeddings: np.ndarray        # fused entity vectors (|E|, d_in)
    centroids: np.ndarray         # leaf centroid per entity (|E|, d_in)
    ancestors: np.ndarray         # (|E|, L, d_in)
    neighbor_sets: list
    config: TrainConfig

    def all_params(self):
        out = dict(self.params)
        for l, cb in enumerate(self.codebooks.levels):
            out[f"codebook.l{l}"] = cb
        return out


def init_state(config, embeddings, tree):
    emb = np.asarray(embeddings, dtype=np.float64)
    n, d_in = emb.shape
    config.validate(n)
    d = config.latent_dim or d_in
    d_tree = np.asarray(tree.centroid(0)).shape[-1]
    if d_tree != d:
        # losses compare latents against tree centroids; dims must agree
        raise TrainerError(f"latent dim {d} != centroid dim {d_tree}")
    rng = np.random.default_rng(config.seed)
    params = rq.init_encoder(d_in, config.encoder_hidden, d, rng)
    z0 = rq.encode(emb, params).data
    codebooks = rq.init_codebooks(z0, config.m, config.K, rng,
                                  kmeans_init=config.kmeans_init)
    params.update(gsr_mod.init_decoder(d, config.m, config.gsr, rng))

    offset = 1 if config.gsr.prose_ancestor_indexing else 0
    L = config.gsr.L
    centroids = np.stack([tree.centroid(e) for e in range(n)])
    ancestors = np.stack([
        np.stack(tree.ancestors(e, L + offset)[offset:offset + L])
        for e in range(n)])
    neighbor_sets = [tree.neighbor_set(e, config.gse.n_max) for e in range(n)]
    return TrainState(codebooks, params, emb, centroids, ancestors,
                      neighbor_sets, config), rng


def train_step(state, entity_ids):
    """One forward/backward over a batch; returns the loss breakdown."""
    if len(entity_ids) == 0:
        raise TrainerError("empty batch")
    cfg = state.config
    ids = np.asarray(entity_ids, dtype=np.int64)
    s = ad.Tensor(state.embeddings[ids])
    z = rq.encode(s, state.params)
    assignment = rq.quantize(z, state.codebooks)

    parts = {"loss_q": rq.loss_q(assignment, cfg.alpha)}
    if cfg.use_l1 or cfg.use_l2:
        den = gse_mod.log_denominators(assignment.surrogates,
                                       state.centroids[ids], cfg.gse)
    if cfg.use_l1:
        parts["loss_l1"] = gse_mod.loss_l1(assignment.surrogates,
                                           state.centroids[ids], cfg.gse,
                                           denominators=den)
    if cfg.use_l2:
        parts["loss_l2"] = gse_mod.loss_l2(assignment.surrogates,
                                           [state.neighbor_sets[e] for e in ids],
                                           state.centroids[ids], cfg.gse,
                                           denominators=den)
    if cfg.use_gsr:
        outputs = gsr_mod.decode(assignment.surrogates, state.params, cfg.gsr)
        parts["loss_gsr"] = gsr_mod.loss_gsr(outputs, state.embeddings[ids],
                                             state.ancestors[ids],
                                             cfg.gsr.lambda_s, cfg.gsr.lambda_h)
    total = None
    for t in parts.values():
        total = t if total is None else total + t
    breakdown = {k: t.item() for k, t in parts.items()}
    breakdown["loss_total"] = total.item()
    for name, val in breakdown.items():
        if not np.isfinite(val):
            raise TrainerError(f"non-finite loss component '{name}': "
                               f"{ {k: v for k, v in breakdown.items()} }")
    return total, breakdown, assignment


def full_pass_codes(state):
    """Codes for every entity, read-only (no usage counting)."""
    z = rq.encode(state.embeddings, state.params)
    return rq.quantize(z, state.codebooks, count_usage=False).codes


def _entropy_eval(state):
    state.codebooks.reset_usage()
    z = rq.encode(state.embeddings, state.params)
    rq.quantize(z, state.codebooks, count_usage=True)
    per_level, mean_h = codebook_entropy(state.codebooks.usage)
    util = (state.codebooks.usage > 0).mean(axis=1)
    return per_level, mean_h, util


def run(config, embeddings, tree, log_csv=None):
    """Full training loop; returns (state, EntropyLog, selected checkpoint)."""
    state, rng = init_state(config, embeddings, tree)
    n = state.embeddings.shape[0]
    opt = Adam(state.all_params(), lr=config.lr)
    log = EntropyLog()
    checkpoints = []

    eval_steps = {config.steps}
    if config.eval_every <= config.steps:
        eval_steps.add(0)
        eval_steps.update(range(config.eval_every, config.steps + 1,
                                config.eval_every))

    def evaluate(step):
        per_level, mean_h, util = _entropy_eval(state)
        log.append(step, per_level, mean_h, util)
        if config.checkpoint_dir is not None:
            os.makedirs(config.checkpoint_dir, exist_ok=True)
            path = os.path.join(config.checkpoint_dir, f"ckpt_{step:06d}.bin")
            rq.save_checkpoint(path, state.codebooks, state.params, step, mean_h)
            checkpoints.append(path)
        else:
            checkpoints.append(step)

    reset_window_usage = np.zeros_like(state.codebooks.usage)
    if 0 in eval_steps:
        evaluate(0)
    state.codebooks.reset_usage()
    for step in range(1, config.steps + 1):
        if config.batch_size is None or config.batch_size >= n:
            ids = np.arange(n)
        else:
            ids = rng.choice(n, size=config.batch_size, replace=False)
        total, breakdown, assignment = train_step(state, ids)
        opt.zero_grad()
        ad.backward(total)
        opt.step()
        reset_window_usage += state.codebooks.usage
        state.codebooks.reset_usage()
        if config.dead_code_reset and step % max(1, n // max(1, len(ids))) == 0:
            # a "full epoch" of coverage: reset codes unseen in the window
            state.codebooks.usage[:] = reset_window_usage
            pools = [r.data for r in assignment.residuals[:-1]]
            rq.dead_code_reset(state.codebooks, pools, rng)
            reset_window_usage[:] = 0
            state.codebooks.reset_usage()
        if step in eval_steps:
            evaluate(step)
            state.codebooks.reset_usage()

    selected = select_checkpoint(log.mean_entropy, checkpoints)
    if log_csv is not None:
        log.to_csv(log_csv)
    return state, log, selected
