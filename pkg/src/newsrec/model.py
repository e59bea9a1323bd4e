"""Parameter construction, feature tables, and the end-to-end forward pass
from raw ids to a (user, candidate) relevance score.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import encoder, user as user_mod
from .autodiff import Tensor
from .data import EntityTable, ImpressionLog, NewsRecord, truncate_history, truncate_or_pad
from .user import AblationFlags


def _xavier(rng, out_dim: int, in_dim: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, size=(out_dim, in_dim))


def _vec(rng, dim: int) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=dim) / np.sqrt(dim)


def init_params(
    cfg,
    vocab_size: int,
    entity_matrix: np.ndarray,
    flags: AblationFlags,
    rng: np.random.Generator,
    word_vectors: EntityTable | None = None,
    vocab=None,
) -> dict[str, Tensor]:
    """Build every trainable block, in a fixed order so a seed pins all values.

    ``entity_matrix`` (row 0 all-zero = padding/unknown) is stored under
    ``embed.entity`` and is frozen unless cfg.finetune_entities is set.
    ``word_vectors``, when given, seeds matching rows of the word table
    (same text format as entity vectors; requires ``vocab``).
    """
    d_w, d_e = cfg.word_dim, cfg.entity_dim
    cand = cfg.cand_dim
    p: dict[str, Tensor] = {}

    def mat(name, out_dim, in_dim):
        p[name] = Tensor(_xavier(rng, out_dim, in_dim), requires_grad=True)

    def vec(name, dim):
        p[name] = Tensor(_vec(rng, dim), requires_grad=True)

    def zeros(name, dim):
        p[name] = Tensor(np.zeros(dim), requires_grad=True)

    def ones(name, dim):
        p[name] = Tensor(np.ones(dim), requires_grad=True)

    word_table = rng.normal(0.0, 0.1, size=(vocab_size, d_w))
    word_table[0] = 0.0
    if word_vectors is not None:
        if vocab is None:
            raise ValueError("word_vectors needs the vocab to map tokens to rows")
        if word_vectors.dim != d_w:
            raise ValueError(f"pretrained word vectors are {word_vectors.dim}-d, config wants {d_w}")
        for idx in range(2, vocab_size):
            tok = vocab.token(idx)
            if tok in word_vectors:
                word_table[idx] = word_vectors.lookup(tok)
    p["embed.word"] = Tensor(word_table, requires_grad=True)

    for gi, glen in enumerate(cfg.genre_lens):
        if cfg.use_positions:
            p[f"embed.pos.g{gi}"] = Tensor(rng.normal(0.0, 0.1, size=(glen, d_w)), requires_grad=True)
        for name in ("wq", "wk", "wv", "wo"):
            mat(f"text.g{gi}.attn.{name}", d_w, d_w)
        ones(f"text.g{gi}.ln1.gain", d_w)
        zeros(f"text.g{gi}.ln1.bias", d_w)
        mat(f"text.g{gi}.ffn.w1", d_w, d_w)
        zeros(f"text.g{gi}.ffn.b1", d_w)
        mat(f"text.g{gi}.ffn.w2", d_w, d_w)
        zeros(f"text.g{gi}.ffn.b2", d_w)
        ones(f"text.g{gi}.ln2.gain", d_w)
        zeros(f"text.g{gi}.ln2.bias", d_w)
        vec(f"text.g{gi}.pool.w", d_w)
        zeros(f"text.g{gi}.pool.b", glen)

    mat("text.fuse.w1", d_w, cfg.genres * d_w)
    zeros("text.fuse.b1", d_w)
    mat("text.fuse.w2", d_w, d_w)
    zeros("text.fuse.b2", d_w)

    mat("cand_entity.mlp.w1", d_e, cfg.cand_entities * d_e)
    zeros("cand_entity.mlp.b1", d_e)
    mat("cand_entity.mlp.w2", d_e, d_e)
    zeros("cand_entity.mlp.b2", d_e)

    dh_w = d_w // cfg.word_heads
    mat("word.wq", d_w, d_w + cand)
    mat("word.wk", d_w, d_w)
    mat("word.wv", d_w, d_w)
    p["word.att_q"] = Tensor(rng.uniform(-1, 1, size=(cfg.word_heads, dh_w)) / np.sqrt(dh_w), requires_grad=True)
    p["word.att_k"] = Tensor(rng.uniform(-1, 1, size=(cfg.word_heads, dh_w)) / np.sqrt(dh_w), requires_grad=True)
    lim = np.sqrt(6.0 / (2 * dh_w))
    p["word.mix"] = Tensor(rng.uniform(-lim, lim, size=(cfg.word_heads, dh_w, dh_w)), requires_grad=True)
    vec("word.pool.w", d_w)
    zeros("word.pool.b", cfg.seq_len)

    mat("user_entity.mlp.w1", d_e, cfg.history_len * cfg.entities_per_news * d_e)
    zeros("user_entity.mlp.b1", d_e)
    mat("user_entity.mlp.w2", d_e, d_e)
    zeros("user_entity.mlp.b2", d_e)

    mat("news.wq", d_w, d_w + cand)
    mat("news.wk", d_w, d_w)
    mat("news.wv", d_w, d_w)
    mat("news.ffn.w1", d_w, d_w)
    zeros("news.ffn.b1", d_w)
    mat("news.ffn.w2", d_w, d_w)
    zeros("news.ffn.b2", d_w)
    vec("news.pool.w", d_w)
    zeros("news.pool.b", cfg.history_len)

    mat("match.user", cfg.match_dim, user_mod.interest_dim(cfg, flags))
    mat("match.cand", cfg.match_dim, d_w + d_e)

    p["embed.entity"] = Tensor(entity_matrix, requires_grad=cfg.finetune_entities)
    return p


def trainable(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: v for k, v in params.items() if v.requires_grad}


@dataclass
class NewsFeatures:
    genre_ids: list[np.ndarray]
    genre_masks: list[np.ndarray]
    entity_rows: np.ndarray  # padded with row 0
    entity_count: int


@dataclass
class Dataset:
    news: dict[str, NewsFeatures]
    entity_matrix: np.ndarray
    vocab_size: int
    vocab: object | None = None
    impressions: list[ImpressionLog] = field(default_factory=list)


def entity_row_index(table: EntityTable) -> tuple[dict[str, int], np.ndarray]:
    """Pack an entity table into a matrix with a zero row 0 for pad/unknown."""
    ids = sorted(table.vectors)
    matrix = np.zeros((len(ids) + 1, table.dim))
    index = {}
    for i, entity_id in enumerate(ids, start=1):
        index[entity_id] = i
        matrix[i] = table.vectors[entity_id]
    return index, matrix


def build_features(
    records: list[NewsRecord],
    cfg,
    vocab_size: int,
    entity_index: dict[str, int] | None = None,
    entity_matrix: np.ndarray | None = None,
    vocab=None,
) -> Dataset:
    """Pad/truncate every news record into fixed-shape id arrays."""
    if entity_matrix is None:
        entity_matrix = np.zeros((1, cfg.entity_dim))
        entity_index = {}
    cap = max(cfg.entities_per_news, cfg.cand_entities)
    news = {}
    for rec in records:
        ids, masks = [], []
        for gi, glen in enumerate(cfg.genre_lens):
            tokens = rec.genre_texts[gi] if gi < len(rec.genre_texts) else []
            arr, mask = truncate_or_pad(tokens, glen)
            ids.append(arr)
            masks.append(mask)
        rows = np.zeros(cap, dtype=np.int64)
        count = 0
        for e in rec.entity_ids[:cap]:
            row = entity_index.get(e, 0)
            rows[count] = row
            count += 1
        news[rec.news_id] = NewsFeatures(ids, masks, rows, count)
    return Dataset(news=news, entity_matrix=entity_matrix, vocab_size=vocab_size, vocab=vocab)


@dataclass
class HistoryContext:
    """Candidate-independent pieces of one user's forward pass."""

    G: Tensor
    word_mask: np.ndarray
    user_ents: Tensor          # (m, D, d_e)
    user_ent_mask: np.ndarray  # (m, D)
    user_ent_flat: Tensor | None  # (D^u, d_e) real clicked entities only
    d_stack: Tensor            # (m, d_w)
    news_mask: np.ndarray      # (m,)
    n_real: int


def _embed_tokens(nf: NewsFeatures, params, cfg, rng, training):
    """Raw (word + position) embeddings per genre, with embedding dropout."""
    outs = []
    for gi in range(cfg.genres):
        x = ad.embedding(params["embed.word"], nf.genre_ids[gi])
        if cfg.use_positions:
            x = x + params[f"embed.pos.g{gi}"][: len(nf.genre_ids[gi])]
        outs.append(ad.dropout(x, cfg.dropout, rng, training))
    return outs


def build_history_context(
    ds: Dataset,
    history: list[str],
    params: dict,
    cfg,
    rng=None,
    training: bool = False,
    text_cache: dict | None = None,
) -> HistoryContext:
    """Everything about the clicked history that does not depend on the
    candidate: stacked token embeddings, entity block, content vectors."""
    slots, news_mask = truncate_history(history, cfg.history_len)
    m, D = cfg.history_len, cfg.entities_per_news
    pad_nf = NewsFeatures(
        [np.zeros(glen, dtype=np.int64) for glen in cfg.genre_lens],
        [np.zeros(glen) for glen in cfg.genre_lens],
        np.zeros(max(D, cfg.cand_entities), dtype=np.int64),
        0,
    )

    embedded, masks, d_vecs = [], [], []
    ent_rows = np.zeros((m, D), dtype=np.int64)
    ent_mask = np.zeros((m, D))
    flat_rows = []
    for i, nid in enumerate(slots):
        nf = ds.news.get(nid, pad_nf) if nid is not None else pad_nf
        embedded.append(_embed_tokens(nf, params, cfg, rng, training))
        masks.append(nf.genre_masks)
        d_vecs.append(_news_text(nid, nf, params, cfg, rng, training, text_cache))
        take = min(nf.entity_count, D)
        ent_rows[i, :take] = nf.entity_rows[:take]
        ent_mask[i, :take] = 1.0
        flat_rows.extend(int(r) for r in nf.entity_rows[:take])

    G, word_mask = user_mod.stack_history_tokens(embedded, masks)
    user_ents = ad.embedding(params["embed.entity"], ent_rows)
    user_ents = ad.dropout(user_ents, cfg.dropout, rng, training)
    flat = (
        ad.embedding(params["embed.entity"], np.array(flat_rows, dtype=np.int64))
        if flat_rows
        else None
    )
    d_stack = ad.concat([ad.reshape(v, (1, cfg.word_dim)) for v in d_vecs], axis=0)
    return HistoryContext(
        G, word_mask, user_ents, ent_mask, flat, d_stack, news_mask, int(news_mask.sum())
    )


def _news_text(nid, nf, params, cfg, rng, training, text_cache):
    """Content vector of one news item; cacheable because it is candidate-
    and user-independent (only safe to cache when gradients are off)."""
    if text_cache is not None and nid in text_cache:
        return text_cache[nid]
    vec = encoder.encode_text(nf.genre_ids, nf.genre_masks, params, cfg, rng, training)
    if text_cache is not None and nid is not None:
        text_cache[nid] = vec
    return vec


@dataclass
class CandidateContext:
    """Candidate representation plus the raw entity block the entity-level
    user stage attends over."""

    rep: encoder.CandidateRepresentation
    ent_vecs: Tensor          # (D^c, d_e)
    ent_mask: np.ndarray      # (D^c,)


def encode_candidate(
    ds: Dataset,
    cand_id: str,
    ctx: HistoryContext,
    params: dict,
    cfg,
    rng=None,
    training: bool = False,
    text_cache: dict | None = None,
) -> CandidateContext:
    nf = ds.news[cand_id]
    text = _news_text(cand_id, nf, params, cfg, rng, training, text_cache)
    rows = nf.entity_rows[: cfg.cand_entities]
    cand_mask = np.zeros(cfg.cand_entities)
    cand_mask[: min(nf.entity_count, cfg.cand_entities)] = 1.0
    cand_vecs = ad.embedding(params["embed.entity"], rows)
    cand_vecs = ad.dropout(cand_vecs, cfg.dropout, rng, training)
    entity = encoder.candidate_entity_attention(
        cand_vecs, cand_mask, ctx.user_ent_flat, params, cfg.alpha_mode
    )
    return CandidateContext(encoder.fuse_candidate(text, entity), cand_vecs, cand_mask)


def user_interest(
    ctx: HistoryContext,
    cand: CandidateContext | None,
    params: dict,
    cfg,
    flags: AblationFlags,
    rng=None,
    training: bool = False,
) -> Tensor:
    """Fused interest vector; ``cand=None`` de-conditions every stage (only
    meaningful when no stage is candidate-aware)."""
    nc = cand.rep.fused if cand is not None else None
    u_w = u_e = u_n = None
    if flags.use_word:
        u_w = user_mod.word_level_interest(
            ctx.G, ctx.word_mask, nc, params, cfg, flags, rng, training
        )
    if flags.use_entity:
        cand_ents = cand.ent_vecs if cand is not None else None
        cand_mask = cand.ent_mask if cand is not None else None
        u_e = user_mod.entity_level_interest(
            ctx.user_ents, ctx.user_ent_mask, cand_ents, cand_mask, params, cfg, flags
        )
    if flags.use_news:
        u_n = user_mod.news_level_interest(
            ctx.d_stack, ctx.news_mask, nc, params, cfg, flags, rng, training
        )
    return user_mod.fuse_interests(u_w, u_e, u_n, flags)


def match_score(u: Tensor, rep: encoder.CandidateRepresentation, params: dict) -> Tensor:
    """Bilinear relevance: projected interest dotted with projected candidate."""
    pu = ad.matvec(params["match.user"], u)
    pc = ad.matvec(params["match.cand"], rep.fused)
    return ad.tsum(pu * pc)


def score_pair(
    ds: Dataset,
    ctx: HistoryContext,
    cand_id: str,
    params: dict,
    cfg,
    flags: AblationFlags,
    rng=None,
    training: bool = False,
    text_cache: dict | None = None,
    cached_u: Tensor | None = None,
) -> tuple[Tensor, Tensor]:
    """Score one candidate against one history; returns (score, u)."""
    cand = encode_candidate(ds, cand_id, ctx, params, cfg, rng, training, text_cache)
    if cached_u is not None:
        u = cached_u
    else:
        u = user_interest(ctx, cand, params, cfg, flags, rng, training)
    return match_score(u, cand.rep, params), u


def candidate_agnostic(flags: AblationFlags) -> bool:
    return not (flags.aware_word or flags.aware_entity or flags.aware_news)
