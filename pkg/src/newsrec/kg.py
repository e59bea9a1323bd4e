"""Knowledge-graph side: TransE pretraining on a triple file and a one-layer
graph-attention enrichment that mixes each entity with its neighbors.

Both run in plain numpy outside the autodiff tape; the resulting vectors are
handed to the recommender as a (by default frozen) embedding table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import EntityTable


class EmptyStoreError(ValueError):
    pass


class TripleStore:
    """Deduplicated (head, relation, tail) triples plus a bidirectional
    adjacency map entity -> [(neighbor, relation)]."""

    def __init__(self, triples: list[tuple[str, str, str]]):
        seen = set()
        self.triples: list[tuple[str, str, str]] = []
        self.adjacency: dict[str, list[tuple[str, str]]] = {}
        self.entities: list[str] = []
        self.relations: list[str] = []
        ent_seen, rel_seen = set(), set()
        for triple in triples:
            if triple in seen:
                continue
            seen.add(triple)
            self.triples.append(triple)
            h, r, t = triple
            self.adjacency.setdefault(h, []).append((t, r))
            self.adjacency.setdefault(t, []).append((h, r))
            for e in (h, t):
                if e not in ent_seen:
                    ent_seen.add(e)
                    self.entities.append(e)
            if r not in rel_seen:
                rel_seen.add(r)
                self.relations.append(r)

    def __len__(self) -> int:
        return len(self.triples)

    def degree(self, entity: str) -> int:
        return len(self.adjacency.get(entity, ()))

    def neighbors(self, entity: str, cap: int) -> list[str]:
        """Up to ``cap`` distinct neighbors, highest degree first, ties broken
        by id so selection is deterministic."""
        out, seen = [], set()
        for nbr, _ in self.adjacency.get(entity, ()):
            if nbr not in seen:
                seen.add(nbr)
                out.append(nbr)
        out.sort(key=lambda e: (-self.degree(e), e))
        return out[:cap]


@dataclass
class KGEmbedding:
    entity_ids: list[str]
    entity_vecs: np.ndarray  # (n_entities, dim)
    relation_ids: list[str]
    relation_vecs: np.ndarray
    loss_history: list[float] = field(default_factory=list)
    misses: int = 0

    @property
    def dim(self) -> int:
        return self.entity_vecs.shape[1]

    def __post_init__(self):
        self._ent_index = {e: i for i, e in enumerate(self.entity_ids)}
        self._rel_index = {r: i for i, r in enumerate(self.relation_ids)}

    def entity(self, entity_id: str) -> np.ndarray:
        idx = self._ent_index.get(entity_id)
        if idx is None:
            self.misses += 1
            return np.zeros(self.dim)
        return self.entity_vecs[idx]

    def score(self, h: str, r: str, t: str) -> float:
        """TransE distance |h + r - t|; lower means more plausible."""
        hv = self.entity_vecs[self._ent_index[h]]
        rv = self.relation_vecs[self._rel_index[r]]
        tv = self.entity_vecs[self._ent_index[t]]
        return float(np.linalg.norm(hv + rv - tv))


def transe_train(
    store: TripleStore,
    dim: int = 100,
    margin: float = 1.0,
    epochs: int = 100,
    lr: float = 0.05,
    seed: int = 0,
) -> KGEmbedding:
    """Margin-ranking training against uniformly corrupted triples.

    Per epoch every triple gets one corruption (head or tail replaced by a
    uniform random entity) and a hinge update when the true triple does not
    beat it by ``margin``. Entity vectors are re-normalized to unit length
    after each epoch.

    ``loss_history`` holds one value per epoch, measured on a corruption
    sample drawn once at setup so the curve tracks optimization progress
    rather than corruption-sampling noise.
    """
    if margin <= 0:
        raise ValueError("margin must be positive")
    if len(store) == 0:
        raise EmptyStoreError("cannot train on an empty triple store")
    rng = np.random.default_rng(seed)
    n_ent, n_rel = len(store.entities), len(store.relations)
    bound = 6.0 / np.sqrt(dim)
    ents = rng.uniform(-bound, bound, size=(n_ent, dim))
    rels = rng.uniform(-bound, bound, size=(n_rel, dim))
    rels /= np.maximum(np.linalg.norm(rels, axis=1, keepdims=True), 1e-12)
    ents /= np.maximum(np.linalg.norm(ents, axis=1, keepdims=True), 1e-12)

    ent_index = {e: i for i, e in enumerate(store.entities)}
    rel_index = {r: i for i, r in enumerate(store.relations)}
    heads = np.array([ent_index[h] for h, _, _ in store.triples])
    rel_arr = np.array([rel_index[r] for _, r, _ in store.triples])
    tails = np.array([ent_index[t] for _, _, t in store.triples])
    n = len(store)

    flip = rng.random(n) < 0.5
    rand_e = rng.integers(n_ent, size=n)
    eval_h = np.where(flip, rand_e, heads)
    eval_t = np.where(flip, tails, rng.integers(n_ent, size=n))

    history = []
    for _ in range(epochs):
        d_pos = np.linalg.norm(ents[heads] + rels[rel_arr] - ents[tails], axis=1)
        d_neg = np.linalg.norm(ents[eval_h] + rels[rel_arr] - ents[eval_t], axis=1)
        history.append(float(np.maximum(margin + d_pos - d_neg, 0.0).mean()))

        order = rng.permutation(n)
        h_idx, r_idx, t_idx = heads[order], rel_arr[order], tails[order]
        corrupt_head = rng.random(n) < 0.5
        random_ent = rng.integers(n_ent, size=n)
        ch_idx = np.where(corrupt_head, random_ent, h_idx)
        ct_idx = np.where(corrupt_head, t_idx, random_ent)

        diff_pos = ents[h_idx] + rels[r_idx] - ents[t_idx]
        diff_neg = ents[ch_idx] + rels[r_idx] - ents[ct_idx]
        d_pos = np.linalg.norm(diff_pos, axis=1)
        d_neg = np.linalg.norm(diff_neg, axis=1)
        active = (margin + d_pos - d_neg) > 0
        if not active.any():
            continue

        g_pos = diff_pos[active] / np.maximum(d_pos[active, None], 1e-12)
        g_neg = diff_neg[active] / np.maximum(d_neg[active, None], 1e-12)
        ent_grad = np.zeros_like(ents)
        rel_grad = np.zeros_like(rels)
        np.add.at(ent_grad, h_idx[active], g_pos)
        np.add.at(ent_grad, t_idx[active], -g_pos)
        np.add.at(rel_grad, r_idx[active], g_pos - g_neg)
        np.add.at(ent_grad, ch_idx[active], -g_neg)
        np.add.at(ent_grad, ct_idx[active], g_neg)
        ents -= lr * ent_grad
        rels -= lr * rel_grad
        ents /= np.maximum(np.linalg.norm(ents, axis=1, keepdims=True), 1e-12)

    return KGEmbedding(list(store.entities), ents, list(store.relations), rels, history)


def ranking_accuracy(emb: KGEmbedding, store: TripleStore, seed: int = 0) -> float:
    """Fraction of training triples scoring strictly below one random
    head-corruption AND one random tail-corruption each.

    Corruptions are filtered: a replacement that forms another true triple
    is resampled, since a tie against a genuinely plausible triple says
    nothing about training quality.
    """
    rng = np.random.default_rng(seed)
    true_set = set(store.triples)
    wins = 0
    n_ent = len(store.entities)
    for h, r, t in store.triples:
        true = emb.score(h, r, t)
        ok = True
        for side in ("head", "tail"):
            orig = h if side == "head" else t
            corrupted = None
            for _ in range(100 * n_ent):
                other = store.entities[int(rng.integers(n_ent))]
                cand = (other, r, t) if side == "head" else (h, r, other)
                if other != orig and cand not in true_set:
                    corrupted = cand
                    break
            if corrupted is None:
                continue  # every replacement is a true triple; nothing to rank
            if not true < emb.score(*corrupted):
                ok = False
        wins += ok
    return wins / len(store.triples)


@dataclass
class GatParams:
    project: np.ndarray  # (dim, dim)
    score: np.ndarray    # (2*dim,)
    slope: float = 0.2


def init_gat_params(dim: int, seed: int = 0) -> GatParams:
    rng = np.random.default_rng(seed)
    bound = np.sqrt(6.0 / (2 * dim))
    return GatParams(
        project=rng.uniform(-bound, bound, size=(dim, dim)),
        score=rng.uniform(-bound, bound, size=2 * dim),
    )


def neighbor_aggregate(
    entity_id: str,
    emb: KGEmbedding,
    store: TripleStore,
    n_neighbors: int,
    params: GatParams,
) -> np.ndarray:
    """Average the entity vector with an attention-weighted neighbor summary.

    Attention scores come from projecting (self, neighbor) pairs and applying
    a leaky rectifier; weights softmax-normalize over the selected neighbors.
    With no neighbors the entity's own vector is returned unchanged.
    """
    self_vec = emb.entity(entity_id)
    neighbors = store.neighbors(entity_id, n_neighbors)
    if not neighbors:
        return self_vec.copy()
    nbr_vecs = np.stack([emb.entity(n) for n in neighbors])
    proj_self = params.project @ self_vec
    proj_nbrs = nbr_vecs @ params.project.T
    pair = np.concatenate(
        [np.broadcast_to(proj_self, proj_nbrs.shape), proj_nbrs], axis=1
    )
    z = pair @ params.score
    z = np.where(z > 0, z, params.slope * z)
    z -= z.max()
    w = np.exp(z)
    w /= w.sum()
    summary = w @ nbr_vecs
    return 0.5 * (self_vec + summary)


def attention_weights(
    entity_id: str, emb: KGEmbedding, store: TripleStore, n_neighbors: int, params: GatParams
) -> np.ndarray:
    """The softmax weights used by :func:`neighbor_aggregate` (for inspection)."""
    neighbors = store.neighbors(entity_id, n_neighbors)
    if not neighbors:
        return np.zeros(0)
    nbr_vecs = np.stack([emb.entity(n) for n in neighbors])
    proj_self = params.project @ emb.entity(entity_id)
    proj_nbrs = nbr_vecs @ params.project.T
    pair = np.concatenate([np.broadcast_to(proj_self, proj_nbrs.shape), proj_nbrs], axis=1)
    z = pair @ params.score
    z = np.where(z > 0, z, params.slope * z)
    z -= z.max()
    w = np.exp(z)
    return w / w.sum()


def enrich_entity_table(
    emb: KGEmbedding, store: TripleStore, n_neighbors: int, params: GatParams
) -> EntityTable:
    """Apply neighbor aggregation once, offline, to every embedded entity."""
    table = EntityTable(emb.dim)
    for entity_id in emb.entity_ids:
        table.add(entity_id, neighbor_aggregate(entity_id, emb, store, n_neighbors, params))
    return table
