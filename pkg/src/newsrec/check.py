"""End-to-end gradient verification: the full ranking loss on a small
hand-sized problem, with every trainable block compared against central
finite differences.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import autodiff as ad
from . import model as model_mod
from .config import ModelConfig
from .data import ImpressionLog, NewsRecord
from .model import Dataset
from .training import bpr_loss
from .user import AblationFlags


def build_toy_problem(cfg: ModelConfig, seed: int = 0, n_news: int = 6) -> tuple[Dataset, ImpressionLog]:
    """A miniature corpus sized by the config: a handful of news items with
    random tokens/entities, one impression whose user clicked two of them."""
    rng = ad.substream(seed, "data")
    vocab_size = 16
    n_entities = 2 * max(cfg.entities_per_news, cfg.cand_entities) + 2
    records = []
    for n in range(n_news):
        genre_texts = []
        for glen in cfg.genre_lens:
            count = int(rng.integers(max(1, glen - 1), glen + 1))
            genre_texts.append([int(t) for t in rng.integers(2, vocab_size, size=count)])
        ents = rng.choice(n_entities, size=cfg.entities_per_news, replace=False)
        records.append(
            NewsRecord(f"N{n}", "c", "s", genre_texts, [f"E{int(e)}" for e in ents])
        )
    entity_index = {f"E{i}": i + 1 for i in range(n_entities)}
    matrix = rng.normal(0.0, 0.5, size=(n_entities + 1, cfg.entity_dim))
    matrix[0] = 0.0
    ds = model_mod.build_features(records, cfg, vocab_size, entity_index, matrix)
    n_hist = min(2, cfg.history_len, n_news - 2)
    history = [f"N{i}" for i in range(n_hist)]
    shown = [(f"N{n_hist}", 1), (f"N{n_hist + 1}", 0)]
    impression = ImpressionLog("1", "U0", "0", history, shown)
    return ds, impression


def toy_loss(
    ds: Dataset, impression: ImpressionLog, params: dict, cfg: ModelConfig, flags: AblationFlags
):
    """Ranking loss of the single toy impression (dropout must be off)."""
    ctx = model_mod.build_history_context(ds, impression.history, params, cfg)
    pos_id = next(nid for nid, label in impression.shown if label == 1)
    neg_id = next(nid for nid, label in impression.shown if label == 0)
    pos, _ = model_mod.score_pair(ds, ctx, pos_id, params, cfg, flags)
    neg, _ = model_mod.score_pair(ds, ctx, neg_id, params, cfg, flags)
    return bpr_loss(ad.reshape(pos, (1,)), ad.reshape(neg, (1,)))


def gradient_check(
    cfg: ModelConfig,
    seed: int = 0,
    samples_per_block: int = 32,
    eps: float = 1e-5,
    flags: AblationFlags | None = None,
    grad_tweak=None,
) -> dict[str, float]:
    """Max relative error per trainable block on the toy problem."""
    cfg = dataclasses.replace(cfg, dropout=0.0)  # determinism for the oracle
    flags = flags or AblationFlags()
    ds, impression = build_toy_problem(cfg, seed)
    params = model_mod.init_params(
        cfg, ds.vocab_size, ds.entity_matrix, flags, ad.substream(seed, "init")
    )

    def f(_blocks):
        return toy_loss(ds, impression, params, cfg, flags)

    blocks = model_mod.trainable(params)
    return ad.finite_difference_check(
        f, blocks, eps=eps, samples_per_block=samples_per_block, seed=seed, grad_tweak=grad_tweak
    )
