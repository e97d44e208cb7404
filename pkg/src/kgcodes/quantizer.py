"""Encoder MLP, multi-level residual quantization, and the commitment loss.

Each level picks the nearest codebook row to the running residual; the
residual update subtracts the selected row through a stop-gradient, so
codebook rows are trained only by the commitment loss while the encoder
path stays differentiable via the straight-through surrogates.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

CHECKPOINT_MAGIC = b"KGCQ"
CHECKPOINT_VERSION = 1


class QuantizerError(ValueError):
    pass


# ---------------------------------------------------------------------------
# encoder


def init_encoder(d_in, hidden, d_out, rng):
    """He-initialized MLP parameters: hidden relu layers + linear output."""
    params = {}
    dims = [d_in] + list(hidden) + [d_out]
    for i in range(len(dims) - 1):
        w = rng.normal(scale=np.sqrt(2.0 / dims[i]), size=(dims[i], dims[i + 1]))
        params[f"enc.w{i}"] = ad.Tensor(w, requires_grad=True)
        params[f"enc.b{i}"] = ad.Tensor(np.zeros(dims[i + 1]), requires_grad=True)
    return params


def encode(s, params):
    """Feed-forward pass producing the latent z; relu between layers."""
    n_layers = sum(1 for k in params if k.startswith("enc.w"))
    x = s if isinstance(s, ad.Tensor) else ad.Tensor(s)
    if x.shape[-1] != params["enc.w0"].shape[0]:
        raise QuantizerError(f"input dim {x.shape[-1]} does not match encoder "
                             f"first layer {params['enc.w0'].shape[0]}")
    for i in range(n_layers):
        x = x @ params[f"enc.w{i}"] + params[f"enc.b{i}"]
        if i < n_layers - 1:
            x = ad.relu(x)
    return x


# ---------------------------------------------------------------------------
# codebooks


@dataclass
class Codebooks:
    levels: list                 # list of Tensor (K, d), requires_grad
    usage: np.ndarray = None     # (m, K) assignment counts

    def __post_init__(self):
        if self.usage is None:
            self.usage = np.zeros((self.m, self.K), dtype=np.int64)

    @property
    def m(self):
        return len(self.levels)

    @property
    def K(self):
        return self.levels[0].shape[0]

    @property
    def d(self):
        return self.levels[0].shape[1]

    def reset_usage(self):
        self.usage[:] = 0


def _kmeans(x, k, rng, iters=10):
    """Plain seeded k-means; duplicates-with-noise when points < k."""
    n = x.shape[0]
    if n >= k:
        centers = x[rng.choice(n, size=k, replace=False)].copy()
    else:
        picks = rng.integers(0, n, size=k)
        centers = x[picks] + rng.normal(scale=1e-3, size=(k, x.shape[1]))
    for _ in range(iters):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        lab = d2.argmin(axis=1)
        for j in range(k):
            sel = lab == j
            if sel.any():
                centers[j] = x[sel].mean(axis=0)
    return centers


def init_codebooks(z, m, k, rng, kmeans_init=True, kmeans_iters=10):
    """Level-wise init on the residual cascade of a warmup batch."""
    z = np.asarray(z, dtype=np.float64)
    levels = []
    r = z.copy()
    for _ in range(m):
        if kmeans_init:
            centers = _kmeans(r, k, rng, iters=kmeans_iters)
        else:
            centers = rng.normal(scale=r.std() + 1e-6, size=(k, z.shape[1]))
        levels.append(ad.Tensor(centers, requires_grad=True))
        codes = (((r[:, None, :] - centers[None, :, :]) ** 2).sum(-1)).argmin(axis=1)
        r = r - centers[codes]
    return Codebooks(levels)


def assign(r, codebook):
    """Index of the nearest codebook row; ties break to the lowest index."""
    rows = codebook.data if isinstance(codebook, ad.Tensor) else np.asarray(codebook)
    if rows.size == 0:
        raise QuantizerError("empty codebook")
    r = np.asarray(r, dtype=np.float64)
    d2 = ((r[..., None, :] - rows) ** 2).sum(-1)
    return d2.argmin(axis=-1)


@dataclass
class CodeAssignment:
    codes: np.ndarray            # (B, m) int
    residuals: list              # Tensors r_0..r_m, each (B, d)
    surrogates: list             # Tensors v~_0..v~_{m-1}, forward == selected rows
    selected: list               # Tensors of selected codebook rows (graph path)
    z: ad.Tensor = None


def quantize(z, codebooks, count_usage=True):
    """Full residual-quantization trace of a latent batch."""
    zt = z if isinstance(z, ad.Tensor) else ad.Tensor(z)
    if zt.shape[-1] != codebooks.d:
        raise QuantizerError(f"latent dim {zt.shape[-1]} != codebook dim {codebooks.d}")
    batch = zt.data.ndim == 2
    n = zt.shape[0] if batch else 1
    codes = np.zeros((n, codebooks.m), dtype=np.int64)
    residuals = [zt]
    surrogates, selected = [], []
    r = zt
    for l, cb in enumerate(codebooks.levels):
        c = assign(r.data, cb)
        codes[:, l] = c if batch else int(c)
        v = ad.gather_rows(cb, c if batch else np.asarray([c]))
        if not batch:
            v = ad.reshape(v, r.shape)
        selected.append(v)
        # algebraically r + sg[v - r]; grouped so the forward value is
        # bitwise the selected row (r - r cancels exactly)
        surrogates.append(ad.stop_gradient(v) + (r - ad.stop_gradient(r)))
        r = r - ad.stop_gradient(v)
        residuals.append(r)
        if count_usage:
            np.add.at(codebooks.usage[l], codes[:, l], 1)
    return CodeAssignment(codes, residuals, surrogates, selected, zt)


def loss_q(assignment, alpha):
    """Stop-gradient commitment loss, summed over levels, averaged over batch.

    Term 1 trains the selected codebook rows toward the residuals; term 2
    (weight alpha) pulls the encoder residuals toward the selected rows.
    """
    if alpha < 0:
        raise QuantizerError("alpha must be >= 0")
    total = None
    axis = -1 if assignment.z.data.ndim == 2 else None
    for r, v in zip(assignment.residuals[:-1], assignment.selected):
        t1 = ad.squared_norm(ad.stop_gradient(r) - v, axis=axis)
        t2 = ad.squared_norm(r - ad.stop_gradient(v), axis=axis)
        term = t1 + ad.scale(t2, alpha)
        total = term if total is None else total + term
    return ad.mean(total) if axis == -1 else total


def dead_code_reset(codebooks, residual_pools, rng, noise_scale=1e-2):
    """Reassign codes unused since the last usage reset to random residuals.

    residual_pools: one (n, d) array per level (current residuals r_l),
    or a single array reused for every level.
    """
    if isinstance(residual_pools, np.ndarray):
        residual_pools = [residual_pools] * codebooks.m
    reset = []
    for l in range(codebooks.m):
        pool = np.asarray(residual_pools[l], dtype=np.float64)
        dead = np.flatnonzero(codebooks.usage[l] == 0)
        for k in dead:
            pick = pool[rng.integers(0, pool.shape[0])]
            codebooks.levels[l].data[k] = pick + rng.normal(scale=noise_scale,
                                                            size=pool.shape[1])
            reset.append((l, int(k)))
    return reset


# ---------------------------------------------------------------------------
# checkpoint container (codebooks + encoder + decoder params)


def save_checkpoint(path, codebooks, params, step, entropy):
    """Binary little-endian checkpoint: header + named float64 arrays."""
    names = sorted(params)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIIIQd", CHECKPOINT_VERSION, codebooks.m,
                             codebooks.K, codebooks.d, step, entropy))
        for l, cb in enumerate(codebooks.levels):
            fh.write(np.ascontiguousarray(cb.data, dtype="<f8").tobytes())
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(params[name].data, dtype="<f8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise QuantizerError(f"{path}: bad checkpoint magic {magic!r}")
        version, m, k, d, step, entropy = struct.unpack("<IIIIQd", fh.read(32))
        if version != CHECKPOINT_VERSION:
            raise QuantizerError(f"{path}: unsupported version {version}")
        levels = []
        for _ in range(m):
            buf = fh.read(8 * k * d)
            levels.append(ad.Tensor(np.frombuffer(buf, dtype="<f8").reshape(k, d).copy(),
                                    requires_grad=True))
        (n_params,) = struct.unpack("<I", fh.read(4))
        params = {}
        for _ in range(n_params):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            buf = fh.read(8 * size)
            params[name] = ad.Tensor(np.frombuffer(buf, dtype="<f8").reshape(shape).copy(),
                                     requires_grad=True)
    return Codebooks(levels), params, step, entropy
