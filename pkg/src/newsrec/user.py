"""User modeling: word-level additive attention over the stacked history
tokens, candidate-guided entity weighting, and a news-level attention stage
over clicked-news content vectors, fused by concatenation.

Each stage can condition its queries on the candidate representation; the
candidate-agnostic ablations zero that block so parameter shapes (and
therefore capacity) stay identical across variants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import feed_forward, merge_heads, pool_genre, split_heads


class EmptyHistoryError(ValueError):
    """Raised when every history slot is masked out."""


@dataclass(frozen=True)
class AblationFlags:
    """Which interest components exist and which stay candidate-aware."""

    use_word: bool = True
    use_entity: bool = True
    use_news: bool = True
    aware_word: bool = True
    aware_entity: bool = True
    aware_news: bool = True

    def __post_init__(self):
        if not (self.use_word or self.use_entity or self.use_news):
            raise ValueError("at least one interest component must be enabled")


VARIANT_FLAGS = {
    "full": AblationFlags(),
    "w": AblationFlags(use_word=False),
    "wc": AblationFlags(aware_word=False),
    "e": AblationFlags(use_entity=False),
    "ec": AblationFlags(aware_entity=False),
    "n": AblationFlags(use_news=False),
    "nc": AblationFlags(aware_news=False),
    "c": AblationFlags(aware_word=False, aware_entity=False, aware_news=False),
}


def interest_dim(cfg, flags: AblationFlags) -> int:
    return cfg.word_dim * (flags.use_word + flags.use_news) + cfg.entity_dim * flags.use_entity


def stack_history_tokens(
    embedded: list[list[Tensor]], masks: list[list[np.ndarray]]
) -> tuple[Tensor, np.ndarray]:
    """Stack per-news, per-genre token rows into one (L, d_w) matrix.

    Row order is news-major, genre-next, token-minor; masks concatenate in
    the same order, so a fully padded pseudo-news contributes only masked
    rows.
    """
    rows = [block for news in embedded for block in news]
    mask = np.concatenate([m for news in masks for m in news])
    return ad.concat(rows, axis=0), mask


def _condition(base: Tensor, nc: Tensor | None, cand_dim: int, aware: bool) -> Tensor:
    """Append the candidate block (or zeros, keeping shapes) to every row."""
    n = base.data.shape[0]
    if aware and nc is not None:
        block = ad.broadcast_to(ad.reshape(nc, (1, cand_dim)), (n, cand_dim))
    else:
        block = Tensor(np.zeros((n, cand_dim)))
    return ad.concat([base, block], axis=1)


def _additive_pool(heads_mat: Tensor, score_vec: Tensor, mask: np.ndarray) -> Tensor:
    """Per-head additive attention: softmax over learned scalar scores.

    heads_mat: (h, L, dh); score_vec: (h, dh); returns (h, 1, dh).
    """
    h, L, dh = heads_mat.data.shape
    scores = ad.reshape(ad.matmul(heads_mat, ad.reshape(score_vec, (h, dh, 1))), (h, L))
    att = ad.masked_softmax(scores, mask[None, :], axis=-1)
    return ad.matmul(ad.reshape(att, (h, 1, L)), heads_mat)


def word_level_interest(
    G: Tensor,
    mask: np.ndarray,
    nc: Tensor | None,
    params: dict,
    cfg,
    flags: AblationFlags,
    rng=None,
    training: bool = False,
) -> Tensor:
    """Additive-attention (linear-time) interest over all history tokens.

    Per head: a global query summarizes the candidate-conditioned queries,
    modulates the keys elementwise, a global key summarizes those, modulates
    the values, and a per-head mix matrix produces the token outputs. Heads
    concatenate and a learned attentive pooling yields u_w.
    """
    if mask.sum() == 0:
        raise EmptyHistoryError("empty user history")
    L, d = G.data.shape
    heads = cfg.word_heads
    dh = d // heads

    X = _condition(G, nc, cfg.cand_dim, flags.aware_word)
    q = split_heads(ad.matmul(X, ad.transpose(params["word.wq"])), heads)
    k = split_heads(ad.matmul(G, ad.transpose(params["word.wk"])), heads)
    v = split_heads(ad.matmul(G, ad.transpose(params["word.wv"])), heads)

    q_pool = _additive_pool(q, params["word.att_q"], mask)            # (h, 1, dh)
    k_mod = k * ad.broadcast_to(q_pool, (heads, L, dh))
    k_pool = _additive_pool(k_mod, params["word.att_k"], mask)
    kv = v * ad.broadcast_to(k_pool, (heads, L, dh))
    mixed = ad.matmul(kv, ad.transpose(params["word.mix"], (0, 2, 1)))  # (h, L, dh)
    gbar = merge_heads(mixed)                                           # (L, d)
    gbar = ad.dropout(gbar, cfg.dropout, rng, training)
    return pool_genre(gbar, mask, params["word.pool.w"], params["word.pool.b"])


def entity_relevance_weights(
    A: Tensor, user_mask: np.ndarray, cand_mask: np.ndarray, eq_mode: str
) -> Tensor:
    """Relevance weights over the (clicked, candidate) entity grid.

    ``literal`` normalizes over the candidate axis (each clicked entity's
    weights sum to 1); ``corrected`` normalizes over the clicked-entity axis
    so the summed weight per clicked entity is a genuine relevance signal.
    """
    if eq_mode == "literal":
        return ad.masked_softmax(A, cand_mask[None, None, :], axis=2)
    if eq_mode == "corrected":
        return ad.masked_softmax(A, user_mask[:, :, None], axis=1)
    raise ValueError(f"unknown eq_mode {eq_mode!r}")


def weighted_clicked_entities(
    user_ents: Tensor,
    user_mask: np.ndarray,
    cand_ents: Tensor | None,
    cand_mask: np.ndarray | None,
    eq_mode: str,
) -> Tensor:
    """Clicked-entity block (m, D, d_e) after candidate weighting.

    In literal mode the per-clicked-entity scale is the sum of a softmax row
    over the candidate axis, which is identically 1: the weighting collapses
    to the identity map on clicked-entity vectors, and the gradient through
    the weights is identically zero. It is implemented as exactly that
    identity; `entity_relevance_weights` exposes the underlying rows for
    anyone verifying the collapse numerically. Corrected mode rescales each
    clicked entity by the total weight it won across the candidate's
    entities. With no (real) candidate entities the raw block comes back.
    """
    m, D, de = user_ents.data.shape
    if cand_ents is None or cand_mask is None or cand_mask.sum() == 0:
        return user_ents
    if eq_mode == "literal":
        return user_ents
    cand_t = ad.reshape(ad.transpose(cand_ents), (1, de, -1))
    A = ad.matmul(user_ents, ad.broadcast_to(cand_t, (m, de, cand_t.data.shape[2])))
    beta = entity_relevance_weights(A, user_mask, cand_mask, eq_mode)
    scales = ad.tsum(beta * cand_mask[None, None, :], axis=2)  # (m, D)
    return user_ents * ad.reshape(scales, (m, D, 1))


def entity_level_interest(
    user_ents: Tensor,
    user_mask: np.ndarray,
    cand_ents: Tensor | None,
    cand_mask: np.ndarray | None,
    params: dict,
    cfg,
    flags: AblationFlags,
) -> Tensor:
    """Candidate-weighted clicked-entity vectors through an MLP -> (d_e,)."""
    m, D, de = user_ents.data.shape
    if flags.aware_entity:
        weighted = weighted_clicked_entities(user_ents, user_mask, cand_ents, cand_mask, cfg.eq_mode)
    else:
        weighted = user_ents
    flat = ad.reshape(weighted, (m * D * de,))
    h = ad.tanh(ad.matvec(params["user_entity.mlp.w1"], flat) + params["user_entity.mlp.b1"])
    return ad.matvec(params["user_entity.mlp.w2"], h) + params["user_entity.mlp.b2"]


def news_attention(
    d_stack: Tensor,
    nc: Tensor | None,
    mask: np.ndarray,
    params: dict,
    cfg,
    aware: bool,
) -> Tensor:
    """Multi-head attention over clicked-news vectors with candidate-
    conditioned queries; returns the concatenated head outputs (m, d_w)."""
    m, d = d_stack.data.shape
    heads = cfg.news_heads
    X = _condition(d_stack, nc, cfg.cand_dim, aware)
    q = split_heads(ad.matmul(X, ad.transpose(params["news.wq"])), heads)
    k = split_heads(ad.matmul(d_stack, ad.transpose(params["news.wk"])), heads)
    v = split_heads(ad.matmul(d_stack, ad.transpose(params["news.wv"])), heads)
    scores = ad.matmul(q, ad.transpose(k, (0, 2, 1)))  # plain dot products
    gamma = ad.masked_softmax(scores, mask[None, None, :], axis=-1)
    return merge_heads(ad.matmul(gamma, v))


def news_level_interest(
    d_stack: Tensor,
    mask: np.ndarray,
    nc: Tensor | None,
    params: dict,
    cfg,
    flags: AblationFlags,
    rng=None,
    training: bool = False,
) -> Tensor:
    if mask.sum() == 0:
        raise EmptyHistoryError("empty user history")
    F = news_attention(d_stack, nc, mask, params, cfg, flags.aware_news)
    F = feed_forward(
        F, params["news.ffn.w1"], params["news.ffn.b1"],
        params["news.ffn.w2"], params["news.ffn.b2"],
    )
    F = ad.dropout(F, cfg.dropout, rng, training)
    return pool_genre(F, mask, params["news.pool.w"], params["news.pool.b"])


def fuse_interests(
    u_w: Tensor | None, u_e: Tensor | None, u_n: Tensor | None, flags: AblationFlags
) -> Tensor:
    """Concatenate the enabled components in word, entity, news order."""
    parts = []
    if flags.use_word:
        parts.append(u_w)
    if flags.use_entity:
        parts.append(u_e)
    if flags.use_news:
        parts.append(u_n)
    if any(p is None for p in parts):
        raise ValueError("an enabled interest component was not provided")
    return ad.concat(parts, axis=0)
