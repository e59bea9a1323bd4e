"""Glue from raw files (or the synthetic generator) to model-ready datasets:
parsing, entity-table construction (loaded or TransE+graph-attention), and
feature building.
"""

from __future__ import annotations

import sys

from . import autodiff as ad
from . import data as data_mod
from . import kg as kg_mod
from . import model as model_mod
from .config import ConfigError, RunConfig
from .data import EntityTable, ImpressionLog, SynthData
from .model import Dataset


def build_entity_table(rc: RunConfig, seed: int) -> EntityTable | None:
    """Pretrained vectors from file when given, else TransE on the triple
    file enriched by one graph-attention pass, else None (zero vectors)."""
    cfg = rc.model
    if rc.entity_vectors_path:
        table = data_mod.load_entity_embeddings(rc.entity_vectors_path)
        if table.dim != cfg.entity_dim:
            raise ConfigError(
                f"entity vectors are {table.dim}-d but d_e={cfg.entity_dim}"
            )
        return table
    if rc.triples_path:
        store = kg_mod.TripleStore(data_mod.load_triples(rc.triples_path))
        emb = kg_mod.transe_train(
            store,
            dim=cfg.entity_dim,
            margin=rc.train.transe_margin,
            epochs=rc.train.transe_epochs,
            lr=rc.train.transe_lr,
            seed=ad.child_seed(seed, "transe"),
        )
        gat = kg_mod.init_gat_params(cfg.entity_dim, seed=ad.child_seed(seed, "gat"))
        return kg_mod.enrich_entity_table(emb, store, cfg.n_neighbors, gat)
    return None


def dataset_from_corpus(records, vocab, cfg, entity_table: EntityTable | None) -> Dataset:
    entity_index, matrix = (None, None)
    if entity_table is not None:
        entity_index, matrix = model_mod.entity_row_index(entity_table)
    return model_mod.build_features(records, cfg, len(vocab), entity_index, matrix, vocab)


def load_run_data(rc: RunConfig) -> tuple[Dataset, list[ImpressionLog]]:
    """Parse the configured corpus into features plus resolved impressions."""
    rc.require_paths("news", "behaviors")
    cfg = rc.model
    records, vocab, nstats = data_mod.parse_news_table(
        rc.news_path,
        genres=cfg.genres,
        genre_lens=cfg.genre_lens,
        entity_cap=max(cfg.entities_per_news, cfg.cand_entities),
    )
    table = build_entity_table(rc, rc.train.seed)
    if table is None:
        print(
            "note: no entity_vectors/triples configured; entity vectors are zero",
            file=sys.stderr,
        )
    ds = dataset_from_corpus(records, vocab, cfg, table)
    known = set(ds.news)
    impressions, bstats = data_mod.parse_behaviors(rc.behaviors_path, known_ids=known)
    if nstats.bad_entity_json:
        print(f"note: {nstats.bad_entity_json} malformed entity columns", file=sys.stderr)
    if bstats.dropped_history_ids:
        print(f"note: {bstats.dropped_history_ids} unresolvable history ids dropped", file=sys.stderr)
    return ds, impressions


def synthetic_dataset(
    synth: SynthData,
    cfg,
    seed: int = 0,
    use_kg: bool = True,
    transe_epochs: int = 60,
    transe_lr: float = 0.02,
    transe_margin: float = 0.5,
) -> Dataset:
    """Features for a generated corpus; entity vectors come from TransE on
    the generated triples (plus graph-attention enrichment) unless disabled."""
    table = None
    if use_kg and synth.triples:
        store = kg_mod.TripleStore(synth.triples)
        emb = kg_mod.transe_train(
            store,
            dim=cfg.entity_dim,
            margin=transe_margin,
            epochs=transe_epochs,
            lr=transe_lr,
            seed=ad.child_seed(seed, "transe"),
        )
        gat = kg_mod.init_gat_params(cfg.entity_dim, seed=ad.child_seed(seed, "gat"))
        table = kg_mod.enrich_entity_table(emb, store, cfg.n_neighbors, gat)
    return dataset_from_corpus(synth.records, synth.vocab, cfg, table)
