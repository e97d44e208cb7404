"""Token export, layer-distribution graphs, code-quality metrics, reranking."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.metrics import normalized_mutual_info_score

from . import fusion as fu
from . import gsr as gsr_mod
from . import quantizer as rq


class ExportError(ValueError):
    pass


# ---------------------------------------------------------------------------
# token strings: <#...> with lowercase bijective base-26 payloads


def _bijective_b26(n):
    # digits a=1 .. z=26, no zero digit; n is the 1-based value
    out = []
    while n > 0:
        n, rem = divmod(n - 1, 26)
        out.append(chr(ord("a") + rem))
    return "".join(reversed(out))


def _bijective_b26_decode(s):
    n = 0
    for ch in s:
        if not "a" <= ch <= "z":
            raise ExportError(f"bad token character {ch!r}")
        n = n * 26 + (ord(ch) - ord("a") + 1)
    return n


def token_string(level, code, k):
    """Token for a (level, code) pair; payload value is level*K + code."""
    return f"<#{_bijective_b26(level * k + code + 1)}>"


def token_decode(token, k):
    if not (token.startswith("<#") and token.endswith(">")):
        raise ExportError(f"malformed token {token!r}")
    value = _bijective_b26_decode(token[2:-1]) - 1
    return value // k, value % k


def export_codes(codes, entity_names, k, path=None):
    """entity name -> one token per level; returns lines, optionally writes."""
    codes = np.asarray(codes)
    if codes.shape[0] != len(entity_names):
        missing = abs(codes.shape[0] - len(entity_names))
        raise ExportError(f"assignments and entity table differ by {missing} entities")
    lines = []
    for i, name in enumerate(entity_names):
        toks = "".join(token_string(l, int(c), k) for l, c in enumerate(codes[i]))
        lines.append(f"{name}\t{toks}")
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    return lines


# ---------------------------------------------------------------------------
# layer-distribution graph


_LEVEL_COLORS = ("#4C72B0", "#DD8452", "#55A868", "#C44E52", "#8172B3",
                 "#937860", "#DA8BC3", "#8C8C8C")


@dataclass
class LayerGraph:
    nodes: list   # (level, code, usage)
    edges: list   # ((level, code), (level+1, code'), weight)

    def to_json(self, path=None):
        payload = {
            "nodes": [{"level": l, "code": c, "usage": u} for l, c, u in self.nodes],
            "edges": [{"src": list(a), "dst": list(b), "weight": w}
                      for a, b, w in self.edges],
        }
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(payload, fh)
        return payload

    def to_dot(self, path=None):
        out = ["digraph layers {", "  rankdir=LR;"]
        for l, c, u in self.nodes:
            color = _LEVEL_COLORS[l % len(_LEVEL_COLORS)]
            out.append(f'  "L{l}_{c}" [label="{l}:{c} ({u})" '
                       f'style=filled fillcolor="{color}"];')
        for (l1, c1), (l2, c2), w in self.edges:
            out.append(f'  "L{l1}_{c1}" -> "L{l2}_{c2}" [penwidth={1 + np.log1p(w):.2f} '
                       f'label="{w}"];')
        out.append("}")
        text = "\n".join(out)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def export_layer_graph(codes):
    """Per-level code usage nodes and adjacent-level co-occurrence edges."""
    codes = np.asarray(codes)
    n, m = codes.shape
    nodes = []
    for l in range(m):
        vals, counts = np.unique(codes[:, l], return_counts=True)
        nodes.extend((l, int(v), int(c)) for v, c in zip(vals, counts))
    edges = []
    for l in range(m - 1):
        pairs, counts = np.unique(codes[:, l:l + 2], axis=0, return_counts=True)
        edges.extend(((l, int(a)), (l + 1, int(b)), int(c))
                     for (a, b), c in zip(pairs, counts))
    return LayerGraph(nodes, edges)


# ---------------------------------------------------------------------------
# code quality


def nmi(labels_a, labels_b):
    """Natural-log NMI, normalized by the arithmetic mean of entropies."""
    return float(normalized_mutual_info_score(labels_a, labels_b,
                                              average_method="arithmetic"))


def _pair_purity(codes0, groups):
    """Fraction of same-code entity pairs that also share a group."""
    codes0 = np.asarray(codes0)
    groups = np.asarray(groups)
    total = 0
    same = 0
    for c in np.unique(codes0):
        members = groups[codes0 == c]
        nc = len(members)
        total += nc * (nc - 1) // 2
        _, gc = np.unique(members, return_counts=True)
        same += int((gc * (gc - 1) // 2).sum())
    return same / total if total else 1.0


def code_quality(codes, tree, k=None, planted_labels=None):
    """NMI of codes against tree cuts, prefix purity, and utilization."""
    codes = np.asarray(codes)
    n, m = codes.shape
    if k is None:
        k = int(codes.max()) + 1
    level1_cut = tree.level_cuts[min(1, tree.n_levels - 1)]
    leaf_cut = tree.level_cuts[0]
    report = {
        "nmi_level0_vs_tree_level1": nmi(codes[:, 0], level1_cut),
        "nmi_last_level_vs_leaves": nmi(codes[:, -1], leaf_cut),
        "prefix_purity": _pair_purity(codes[:, 0], level1_cut),
        "utilization": [float(len(np.unique(codes[:, l])) / k) for l in range(m)],
    }
    if planted_labels is not None:
        report["nmi_level0_vs_super"] = nmi(codes[:, 0], planted_labels["super"])
        report["nmi_last_vs_sub"] = nmi(codes[:, -1], planted_labels["sub"])
    return report


# ---------------------------------------------------------------------------
# filtered ranking


def _known_sets(dataset):
    tails = {}
    heads = {}
    for split in ("train", "valid", "test"):
        for h, r, t in dataset.triples.get(split, []):
            tails.setdefault((h, r), set()).add(t)
            heads.setdefault((r, t), set()).add(h)
    return heads, tails


def filtered_ranking(dataset, entity_vecs, relation_vecs, backbone,
                     split="test", k_list=(1, 3, 10), score_fn=None):
    """Filtered MRR / Hits@k over head and tail prediction.

    score_fn(h_vecs, r_vecs, t_vecs) may override the backbone scorer
    (used for the random-ranking baseline).
    """
    triples = dataset.triples.get(split, [])
    if not triples:
        raise ExportError(f"no triples in split '{split}'")
    ent = np.asarray(entity_vecs, dtype=np.float64)
    rel = np.asarray(relation_vecs, dtype=np.float64)
    heads_known, tails_known = _known_sets(dataset)
    scorer = score_fn or (lambda h, r, t: fu.score_triples(backbone, h, r, t))

    ranks = []
    for h, r, t in triples:
        # tail prediction
        scores = scorer(ent[h][None, :], rel[r][None, :], ent)
        filt = np.array(sorted(tails_known[(h, r)] - {t}), dtype=np.int64)
        s = scores.copy()
        if filt.size:
            s[filt] = -np.inf
        ranks.append(1 + int((s > s[t]).sum()))
        # head prediction
        scores = scorer(ent, rel[r][None, :], ent[t][None, :])
        filt = np.array(sorted(heads_known[(r, t)] - {h}), dtype=np.int64)
        s = scores.copy()
        if filt.size:
            s[filt] = -np.inf
        ranks.append(1 + int((s > s[h]).sum()))

    ranks = np.asarray(ranks, dtype=np.float64)
    report = {"mrr": float((1.0 / ranks).mean()), "n_queries": len(ranks)}
    for k in k_list:
        report[f"hits@{k}"] = float((ranks <= k).mean())
    return report


def reconstruct_entities(state):
    """GSR-reconstructed entity vectors o_0 for every entity."""
    z = rq.encode(state.embeddings, state.params)
    assignment = rq.quantize(z, state.codebooks, count_usage=False)
    outputs = gsr_mod.decode(assignment.surrogates, state.params, state.config.gsr)
    return outputs.data[:, 0, :]


def rerank_eval(dataset, struct, reconstructed_vecs, split="test",
                k_list=(1, 3, 10)):
    """Filtered ranking with reconstructed entity vectors and the backbone scorer."""
    return filtered_ranking(dataset, reconstructed_vecs, struct.relation_vecs,
                            struct.backbone, split=split, k_list=k_list)


def random_baseline(dataset, n_entities, d, split="test", seeds=range(20),
                    k_list=(1, 3, 10)):
    """Monte-Carlo MRR of uniformly random scores."""
    mrrs = []
    for seed in seeds:
        rng = np.random.default_rng(seed)

        def rand_scores(h, r, t, rng=rng):
            n = max(h.shape[0], t.shape[0])
            return rng.random(n)

        rep = filtered_ranking(dataset, np.zeros((n_entities, d)),
                               np.zeros((dataset.n_relations, d)), "translate",
                               split=split, k_list=k_list, score_fn=rand_scores)
        mrrs.append(rep["mrr"])
    return {"mrr_mean": float(np.mean(mrrs)), "mrr_std": float(np.std(mrrs)),
            "runs": len(mrrs)}
