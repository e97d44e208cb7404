"""Agglomerative hierarchy over entity embeddings.

Builds a dendrogram bottom-up (average, complete, or ward linkage on
Euclidean distance), cuts it into a fixed number of levels with a
geometric cluster-count schedule, and serves the per-entity centroids,
ancestor chains, and sibling neighbor sets consumed by the losses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

LINKAGES = ("average", "complete", "ward")


class HierarchyError(ValueError):
    pass


@dataclass
class TreeNode:
    node_id: int
    level: int
    centroid: np.ndarray
    members: np.ndarray          # entity ids
    parent: int | None = None
    children: list = field(default_factory=list)


@dataclass
class HierarchyTree:
    nodes: dict                  # node_id -> TreeNode
    level_cuts: list             # level -> array (|E|,) of node ids
    n_levels: int

    def leaf_node(self, entity):
        self._check(entity)
        return self.nodes[self.level_cuts[0][entity]]

    def _check(self, entity):
        if not 0 <= entity < len(self.level_cuts[0]):
            raise HierarchyError(f"unknown entity id {entity}")

    def centroid(self, entity):
        return self.leaf_node(entity).centroid

    def ancestors(self, entity, count):
        """Centroids of the leaf and its ancestors, root repeated as needed."""
        if count < 1:
            raise HierarchyError("ancestor count must be >= 1")
        self._check(entity)
        chain = []
        node = self.leaf_node(entity)
        while node is not None and len(chain) < count:
            chain.append(node.centroid)
            node = self.nodes[node.parent] if node.parent is not None else None
        while len(chain) < count:
            chain.append(chain[-1])
        return chain

    def neighbor_set(self, entity, n_max=5):
        """Centroids of sibling leaf clusters, nearest to mu_e first."""
        leaf = self.leaf_node(entity)
        if leaf.parent is None:
            return []
        siblings = [self.nodes[c] for c in self.nodes[leaf.parent].children
                    if c != leaf.node_id]
        siblings.sort(key=lambda s: (float(np.linalg.norm(s.centroid - leaf.centroid)),
                                     s.node_id))
        return [s.centroid for s in siblings[:n_max]]

    def to_json(self, path=None):
        payload = {
            "n_levels": self.n_levels,
            "nodes": [{
                "id": n.node_id, "level": n.level, "parent": n.parent,
                "children": list(n.children),
                "members": n.members.tolist(),
                "centroid": n.centroid.tolist(),
            } for n in sorted(self.nodes.values(), key=lambda n: n.node_id)],
            "level_cuts": [cut.tolist() for cut in self.level_cuts],
        }
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(payload, fh)
        return payload

    @classmethod
    def from_json(cls, source):
        if isinstance(source, (str, bytes)):
            with open(source, encoding="utf-8") as fh:
                source = json.load(fh)
        nodes = {}
        for rec in source["nodes"]:
            nodes[rec["id"]] = TreeNode(rec["id"], rec["level"],
                                        np.asarray(rec["centroid"], dtype=np.float64),
                                        np.asarray(rec["members"], dtype=np.int64),
                                        rec["parent"], list(rec["children"]))
        cuts = [np.asarray(c, dtype=np.int64) for c in source["level_cuts"]]
        return cls(nodes, cuts, source["n_levels"])


# ---------------------------------------------------------------------------
# dendrogram construction


def _merge_sequence(x, linkage):
    """Bottom-up merges; returns [(id_a, id_b, new_id)] in merge order.

    Initial clusters carry ids 0..n-1, merged clusters n..2n-2.  Ties in
    the pairwise minimum break toward the smaller (i, j) id pair.
    """
    n = x.shape[0]
    diff = x[:, None, :] - x[None, :, :]
    d = np.sqrt((diff * diff).sum(-1))
    if linkage == "ward":
        d = d * d  # Lance-Williams ward recurrence runs on squared distances
    np.fill_diagonal(d, np.inf)
    d[np.tril_indices(n)] = np.inf

    active = np.ones(n, dtype=bool)
    sizes = np.ones(n, dtype=np.int64)
    ids = np.arange(n)
    merges = []
    next_id = n
    for _ in range(n - 1):
        flat = np.argmin(d)
        i, j = np.unravel_index(flat, d.shape)  # i < j by construction
        dij = d[i, j]
        merges.append((int(ids[i]), int(ids[j]), next_id))
        ni, nj = sizes[i], sizes[j]
        # update distances of every other active cluster k to the merge
        ks = np.flatnonzero(active)
        ks = ks[(ks != i) & (ks != j)]
        dki = np.where(ks < i, d[ks, i], d[i, ks])
        dkj = np.where(ks < j, d[ks, j], d[j, ks])
        if linkage == "average":
            dnew = (ni * dki + nj * dkj) / (ni + nj)
        elif linkage == "complete":
            dnew = np.maximum(dki, dkj)
        elif linkage == "ward":
            nk = sizes[ks]
            tot = ni + nj + nk
            dnew = ((ni + nk) * dki + (nj + nk) * dkj - nk * dij) / tot
        else:
            raise HierarchyError(f"unknown linkage '{linkage}'")
        lo, hi = np.minimum(ks, i), np.maximum(ks, i)
        d[lo, hi] = dnew
        active[j] = False
        sizes[i] = ni + nj
        ids[i] = next_id
        d[j, :] = np.inf
        d[:, j] = np.inf
        next_id += 1
    return merges


def _cut(merges, n, n_clusters):
    """Entity -> cluster label after enough merges to reach n_clusters."""
    parent = list(range(2 * n - 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b, new in merges[: n - n_clusters]:
        parent[find(a)] = new
        parent[find(b)] = new
    roots = np.array([find(i) for i in range(n)])
    _, labels = np.unique(roots, return_inverse=True)
    return labels


def _level_counts(leaf_count, n_levels):
    if leaf_count == 1:
        return [1] * n_levels
    counts = [int(round(leaf_count ** ((n_levels - 1 - l) / (n_levels - 1))))
              for l in range(n_levels)]
    counts[0], counts[-1] = leaf_count, 1
    for l in range(n_levels - 2, 0, -1):  # enforce strict decrease
        counts[l] = min(max(counts[l], counts[l + 1] + 1), counts[l - 1] - 1)
    return counts


def build_tree(embeddings, linkage="average", n_levels=3, leaf_count=16):
    """Cluster embeddings and cut the dendrogram into n_levels partitions."""
    x = np.asarray(embeddings, dtype=np.float64)
    n = x.shape[0]
    if linkage not in LINKAGES:
        raise HierarchyError(f"linkage must be one of {LINKAGES}, got '{linkage}'")
    if n_levels < 2:
        raise HierarchyError("n_levels must be >= 2")
    if leaf_count > n:
        raise HierarchyError(f"leaf_count {leaf_count} exceeds {n} entities")
    if 1 < leaf_count < n_levels:
        raise HierarchyError(f"leaf_count {leaf_count} cannot support a strictly "
                             f"coarsening schedule over {n_levels} levels")
    counts = _level_counts(min(leaf_count, n), n_levels)
    merges = _merge_sequence(x, linkage)

    nodes = {}
    level_cuts = []
    next_id = 0
    prev_level_nodes = None  # labels -> node ids of the previous (finer) level
    for level, c in enumerate(counts):
        labels = _cut(merges, n, min(c, n))
        label_to_node = {}
        cut = np.zeros(n, dtype=np.int64)
        for lab in np.unique(labels):
            members = np.flatnonzero(labels == lab)
            node = TreeNode(next_id, level, x[members].mean(axis=0),
                            members.astype(np.int64))
            nodes[next_id] = node
            label_to_node[int(lab)] = next_id
            cut[members] = next_id
            next_id += 1
        if prev_level_nodes is not None:
            for child_id in prev_level_nodes.values():
                child = nodes[child_id]
                parent_id = int(cut[child.members[0]])
                child.parent = parent_id
                nodes[parent_id].children.append(child_id)
        prev_level_nodes = label_to_node
        level_cuts.append(cut)
    return HierarchyTree(nodes, level_cuts, n_levels)
