"""Triple-file ingestion, dense feature files, and synthetic hierarchical KGs."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

FEATURE_MAGIC = 0x4B474656  # "KGFV"
FEATURE_VERSION = 1


class DataError(ValueError):
    pass


@dataclass
class KgDataset:
    """Entity/relation vocabularies plus (h, r, t) id triples per split."""

    entity_names: list
    relation_names: list
    triples: dict  # split -> list of (h, r, t) id tuples
    warned_entities: set = field(default_factory=set)

    @property
    def n_entities(self):
        return len(self.entity_names)

    @property
    def n_relations(self):
        return len(self.relation_names)

    def entity_id(self, name):
        return self._ent_index()[name]

    def _ent_index(self):
        if not hasattr(self, "_ent_idx"):
            self._ent_idx = {n: i for i, n in enumerate(self.entity_names)}
        return self._ent_idx

    def stats(self):
        rep = {"entities": self.n_entities, "relations": self.n_relations}
        for split in ("train", "valid", "test"):
            rep[split] = len(self.triples.get(split, []))
        return rep


def _read_raw(path, delimiter):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(delimiter)
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            rows.append(tuple(parts))
    return rows


def load_triples(train_path, valid_path=None, test_path=None, delimiter="\t"):
    """Load triple files into a dataset with sorted, stable id assignment.

    Entities or relations that appear only in valid/test are admitted with
    a warning flag (benchmark files contain them).
    """
    raw = {"train": _read_raw(train_path, delimiter)}
    if valid_path is not None:
        raw["valid"] = _read_raw(valid_path, delimiter)
    if test_path is not None:
        raw["test"] = _read_raw(test_path, delimiter)

    ents, rels = set(), set()
    for h, r, t in raw["train"]:
        ents.update((h, t))
        rels.add(r)
    warned = set()
    for split in ("valid", "test"):
        for h, r, t in raw.get(split, []):
            for e in (h, t):
                if e not in ents:
                    warned.add(e)
                    ents.add(e)
            if r not in rels:
                warned.add(r)
                rels.add(r)

    entity_names = sorted(ents)
    relation_names = sorted(rels)
    eid = {n: i for i, n in enumerate(entity_names)}
    rid = {n: i for i, n in enumerate(relation_names)}
    triples = {split: [(eid[h], rid[r], eid[t]) for h, r, t in rows]
               for split, rows in raw.items()}
    for split in ("valid", "test"):
        triples.setdefault(split, [])
    return KgDataset(entity_names, relation_names, triples, warned)


def save_triples(dataset, train_path, valid_path=None, test_path=None, delimiter="\t"):
    paths = {"train": train_path, "valid": valid_path, "test": test_path}
    for split, path in paths.items():
        if path is None:
            continue
        with open(path, "w", encoding="utf-8") as fh:
            for h, r, t in dataset.triples.get(split, []):
                fh.write(delimiter.join((dataset.entity_names[h],
                                         dataset.relation_names[r],
                                         dataset.entity_names[t])) + "\n")


@dataclass
class FeatureFile:
    """Dense per-entity vectors, addressed by entity id."""

    vectors: np.ndarray  # (count, dim) float64

    @property
    def count(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]

    def save(self, path):
        v = np.ascontiguousarray(self.vectors, dtype="<f8")
        with open(path, "wb") as fh:
            fh.write(struct.pack("<IIII", FEATURE_MAGIC, FEATURE_VERSION,
                                 v.shape[0], v.shape[1]))
            fh.write(v.tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            head = fh.read(16)
            if len(head) != 16:
                raise DataError(f"{path}: truncated feature header")
            magic, version, count, dim = struct.unpack("<IIII", head)
            if magic != FEATURE_MAGIC:
                raise DataError(f"{path}: bad magic {magic:#x}")
            if version != FEATURE_VERSION:
                raise DataError(f"{path}: unsupported version {version}")
            body = fh.read(8 * count * dim)
            if len(body) != 8 * count * dim:
                raise DataError(f"{path}: truncated feature body")
        vec = np.frombuffer(body, dtype="<f8").reshape(count, dim)
        return cls(vec.astype(np.float64))

    @classmethod
    def load_json(cls, path, entity_names):
        """JSON import path for small tests: {entity name: [floats]}."""
        with open(path, encoding="utf-8") as fh:
            table = json.load(fh)
        dims = {len(v) for v in table.values()}
        if len(dims) != 1:
            raise DataError(f"{path}: inconsistent vector dimensions {sorted(dims)}")
        dim = dims.pop()
        vec = np.zeros((len(entity_names), dim))
        for i, name in enumerate(entity_names):
            if name not in table:
                raise DataError(f"{path}: missing vector for entity '{name}'")
            vec[i] = table[name]
        return cls(vec)


def _spread_points(rng, n, d, min_dist):
    """Random points rescaled so all pairwise distances are >= min_dist."""
    pts = rng.normal(size=(n, d))
    if n == 1:
        return pts
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff * diff).sum(-1))
    np.fill_diagonal(dist, np.inf)
    lo = dist.min()
    if lo < min_dist:
        pts = pts * (min_dist / lo)
    return pts


def synth_hier_kg(seed, n_super, n_sub, per_leaf, d, splits=(1.0, 0.0, 0.0),
                  noise_sigma=1.0):
    """Planted two-level Gaussian mixture plus same-cluster relation triples.

    Super-cluster means are separated by >= 12 sigma, sub-cluster means
    within a super by >= 5 sigma, so agglomerative clustering recovers the
    planted hierarchy essentially exactly.  Triples connect every ordered
    pair of distinct entities in the same sub cluster (relation
    "same_sub") and every cross-sub pair in the same super cluster
    (relation "same_super"); they are split by the given fractions.
    """
    if min(n_super, n_sub, per_leaf, d) < 1:
        raise DataError("all synth counts must be >= 1")
    rng = np.random.default_rng(seed)
    sigma = noise_sigma
    super_means = _spread_points(rng, n_super, d, 12.0 * sigma)
    n_ent = n_super * n_sub * per_leaf
    vectors = np.zeros((n_ent, d))
    super_labels = np.zeros(n_ent, dtype=np.int64)
    sub_labels = np.zeros(n_ent, dtype=np.int64)
    idx = 0
    for s in range(n_super):
        sub_means = super_means[s] + _spread_points(rng, n_sub, d, 5.0 * sigma)
        for b in range(n_sub):
            leaf = s * n_sub + b
            pts = sub_means[b] + rng.normal(scale=sigma, size=(per_leaf, d))
            vectors[idx:idx + per_leaf] = pts
            super_labels[idx:idx + per_leaf] = s
            sub_labels[idx:idx + per_leaf] = leaf
            idx += per_leaf

    entity_names = [f"e{i:05d}" for i in range(n_ent)]
    relation_names = ["same_sub", "same_super"]
    all_triples = []
    for h in range(n_ent):
        for t in range(n_ent):
            if h == t:
                continue
            if sub_labels[h] == sub_labels[t]:
                all_triples.append((h, 0, t))
            elif super_labels[h] == super_labels[t]:
                all_triples.append((h, 1, t))

    order = rng.permutation(len(all_triples))
    n_train = int(round(splits[0] * len(all_triples)))
    n_valid = int(round(splits[1] * len(all_triples)))
    triples = {
        "train": [all_triples[i] for i in order[:n_train]],
        "valid": [all_triples[i] for i in order[n_train:n_train + n_valid]],
        "test": [all_triples[i] for i in order[n_train + n_valid:]],
    }
    dataset = KgDataset(entity_names, relation_names, triples)
    labels = {"super": super_labels, "sub": sub_labels}
    return dataset, FeatureFile(vectors), labels
