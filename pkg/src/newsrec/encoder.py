"""Candidate news encoding: per-genre text transformers with attentive
pooling, an MLP fusing the genre vectors, and clicked-news-guided attention
over the candidate's entities. The fused representation is the text vector
concatenated with the entity vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class DegenerateNormalizationError(ArithmeticError):
    """Literal-mode entity attention divided by an exactly zero sum."""


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = ad.tmean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = ad.tmean(centered * centered, axis=-1, keepdims=True)
    return centered * ad.powc(var + eps, -0.5) * gain + bias


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(n, d) -> (heads, n, d/heads)."""
    n, d = x.data.shape
    return ad.transpose(ad.reshape(x, (n, heads, d // heads)), (1, 0, 2))


def merge_heads(x: Tensor) -> Tensor:
    """(heads, n, dh) -> (n, heads*dh)."""
    h, n, dh = x.data.shape
    return ad.reshape(ad.transpose(x, (1, 0, 2)), (n, h * dh))


def self_attention(x: Tensor, mask: np.ndarray, wq, wk, wv, wo, heads: int) -> Tensor:
    """Scaled dot-product self-attention; masked keys get zero weight."""
    n, d = x.data.shape
    dh = d // heads
    q = split_heads(ad.matmul(x, ad.transpose(wq)), heads)
    k = split_heads(ad.matmul(x, ad.transpose(wk)), heads)
    v = split_heads(ad.matmul(x, ad.transpose(wv)), heads)
    scores = ad.matmul(q, ad.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(dh))
    att = ad.masked_softmax(scores, mask[None, None, :], axis=-1)
    return ad.matmul(merge_heads(ad.matmul(att, v)), ad.transpose(wo))


def feed_forward(x: Tensor, w1, b1, w2, b2) -> Tensor:
    return ad.matmul(ad.tanh(ad.matmul(x, ad.transpose(w1)) + b1), ad.transpose(w2)) + b2


def encode_genre_text(
    token_ids: np.ndarray,
    mask: np.ndarray,
    genre: int,
    params: dict,
    cfg,
    rng=None,
    training: bool = False,
) -> Tensor:
    """One transformer block over a genre's tokens -> contextual rows (l, d_w).

    All-padding sequences short-circuit to zeros; downstream pooling is
    mask-aware so those rows never contribute.
    """
    if mask.sum() == 0:
        return Tensor(np.zeros((len(token_ids), cfg.word_dim)))
    x = ad.embedding(params["embed.word"], token_ids)
    if cfg.use_positions:
        x = x + params[f"embed.pos.g{genre}"][: len(token_ids)]
    x = ad.dropout(x, cfg.dropout, rng, training)
    p = f"text.g{genre}"
    att = self_attention(
        x, mask,
        params[f"{p}.attn.wq"], params[f"{p}.attn.wk"],
        params[f"{p}.attn.wv"], params[f"{p}.attn.wo"],
        cfg.text_heads,
    )
    x = layer_norm(x + att, params[f"{p}.ln1.gain"], params[f"{p}.ln1.bias"])
    ff = feed_forward(
        x, params[f"{p}.ffn.w1"], params[f"{p}.ffn.b1"],
        params[f"{p}.ffn.w2"], params[f"{p}.ffn.b2"],
    )
    x = layer_norm(x + ff, params[f"{p}.ln2.gain"], params[f"{p}.ln2.bias"])
    return ad.dropout(x, cfg.dropout, rng, training)


def pool_genre(encoded: Tensor, mask: np.ndarray, w: Tensor, b: Tensor) -> Tensor:
    """Attentive pooling of token rows into one genre vector."""
    n, d = encoded.data.shape
    scores = ad.reshape(ad.matmul(encoded, ad.reshape(w, (d, 1))), (n,)) + b
    att = ad.masked_softmax(scores, mask, axis=-1)
    return ad.reshape(ad.matmul(ad.reshape(att, (1, n)), encoded), (d,))


def fuse_text(genre_vecs: list[Tensor], params: dict) -> Tensor:
    """Concatenated genre vectors through a one-hidden-layer MLP -> (d_w,)."""
    x = ad.concat(genre_vecs, axis=0)
    h = ad.tanh(ad.matvec(params["text.fuse.w1"], x) + params["text.fuse.b1"])
    return ad.matvec(params["text.fuse.w2"], h) + params["text.fuse.b2"]


def encode_text(
    genre_ids: list[np.ndarray],
    genre_masks: list[np.ndarray],
    params: dict,
    cfg,
    rng=None,
    training: bool = False,
) -> Tensor:
    vecs = []
    for gi in range(cfg.genres):
        enc = encode_genre_text(genre_ids[gi], genre_masks[gi], gi, params, cfg, rng, training)
        vecs.append(pool_genre(enc, genre_masks[gi], params[f"text.g{gi}.pool.w"], params[f"text.g{gi}.pool.b"]))
    return fuse_text(vecs, params)


def entity_attention_scales(
    cand_vecs: Tensor,
    cand_mask: np.ndarray,
    user_vecs: Tensor | None,
    mode: str = "softmax",
) -> Tensor:
    """Per-candidate-entity scale: the summed relevance weight it received.

    For each clicked entity the relevance weights form a distribution over
    the candidate's entities; each candidate entity is then rescaled by the
    total weight assigned to it. ``softmax`` normalizes the dot products
    with a softmax over the candidate axis; ``literal`` divides by the plain
    sum of dot products and raises if that sum is exactly zero. With no
    clicked entities the weights fall back to uniform over the candidate's
    real entities (a single pseudo clicked slot).
    """
    n_real = float(cand_mask.sum())
    if user_vecs is None or user_vecs.data.shape[0] == 0:
        return Tensor(cand_mask / max(n_real, 1.0))
    dots = ad.matmul(cand_vecs, ad.transpose(user_vecs))  # (Dc, Du)
    if mode == "softmax":
        alpha = ad.masked_softmax(dots, cand_mask[:, None], axis=0)
    elif mode == "literal":
        masked = dots * cand_mask[:, None]
        denom = ad.tsum(masked, axis=0, keepdims=True)
        if np.any(denom.data == 0.0):
            raise DegenerateNormalizationError(
                "literal relevance normalization hit a zero column sum"
            )
        alpha = masked / denom
    else:
        raise ValueError(f"unknown entity attention mode {mode!r}")
    return ad.tsum(alpha, axis=1)


def candidate_entity_attention(
    cand_vecs: Tensor,
    cand_mask: np.ndarray,
    user_vecs: Tensor | None,
    params: dict,
    mode: str = "softmax",
) -> Tensor:
    """Clicked-news-guided candidate entity vector (d_e,).

    Each candidate entity is rescaled (it stays colinear with itself) and the
    rescaled block is flattened entity-major into a one-hidden-layer MLP.
    """
    dc, de = cand_vecs.data.shape
    scales = entity_attention_scales(cand_vecs, cand_mask, user_vecs, mode)
    weighted = cand_vecs * ad.reshape(scales, (dc, 1))
    flat = ad.reshape(weighted, (dc * de,))
    h = ad.tanh(ad.matvec(params["cand_entity.mlp.w1"], flat) + params["cand_entity.mlp.b1"])
    return ad.matvec(params["cand_entity.mlp.w2"], h) + params["cand_entity.mlp.b2"]


@dataclass
class CandidateRepresentation:
    text: Tensor    # (d_w,)
    entity: Tensor  # (d_e,)
    fused: Tensor   # (d_w + d_e,) text-then-entity


def fuse_candidate(text: Tensor, entity: Tensor) -> CandidateRepresentation:
    return CandidateRepresentation(text, entity, ad.concat([text, entity], axis=0))
