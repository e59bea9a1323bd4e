"""Encode a candidate news item: per-genre transformer + attentive pooling,
genre fusion, and clicked-news-guided entity attention, fused into one
vector.

Run: python demos/04_candidate_encoding.py
"""

import numpy as np

from newsrec import autodiff as ad
from newsrec import data, encoder, model, pipeline
from newsrec.config import ModelConfig
from newsrec.user import AblationFlags

cfg = ModelConfig(
    word_dim=16, entity_dim=8, match_dim=16, genres=1, title_len=6,
    history_len=4, entities_per_news=2, cand_entities=2,
    news_heads=2, word_heads=2, text_heads=2, dropout=0.0,
)
cfg.validate()

synth = data.generate_synthetic(data.SynthSpec(topics=3, users=4, news=30), seed=1)
ds = pipeline.synthetic_dataset(synth, cfg, seed=1, transe_epochs=30)
params = model.init_params(cfg, ds.vocab_size, ds.entity_matrix, AblationFlags(),
                           ad.substream(0, "init"))

imp = synth.impressions[0]
cand_id = imp.shown[0][0]
nf = ds.news[cand_id]
print(f"candidate {cand_id}: tokens {list(nf.genre_ids[0])}, {nf.entity_count} entities")

# 1) contextual token rows from the genre transformer
rows = encoder.encode_genre_text(nf.genre_ids[0], nf.genre_masks[0], 0, params, cfg)
print("contextual rows:", rows.data.shape)

# 2) attentive pooling into one genre vector, then genre fusion
pooled = encoder.pool_genre(rows, nf.genre_masks[0],
                            params["text.g0.pool.w"], params["text.g0.pool.b"])
text_vec = encoder.fuse_text([pooled], params)
print("text vector:", text_vec.data.shape, "norm", f"{np.linalg.norm(text_vec.data):.3f}")

# 3) entity attention guided by the clicked news' entities
with ad.no_grad():
    ctx = model.build_history_context(ds, imp.history, params, cfg)
    cand = model.encode_candidate(ds, cand_id, ctx, params, cfg)
print("entity vector:", cand.rep.entity.data.shape)
print("fused candidate (text then entity):", cand.rep.fused.data.shape)

# the weighting keeps every candidate entity colinear with itself: the
# clicked news only rescale them
scales = encoder.entity_attention_scales(cand.ent_vecs, cand.ent_mask,
                                         ctx.user_ent_flat, "softmax")
print("per-entity relevance scales:", np.round(scales.data, 3))

# literal normalization (plain sum instead of softmax) is available too;
# it raises if a dot-product column sums to exactly zero
try:
    lit = encoder.entity_attention_scales(cand.ent_vecs, cand.ent_mask,
                                          ctx.user_ent_flat, "literal")
    print("literal-mode scales:", np.round(lit.data, 3))
except encoder.DegenerateNormalizationError as exc:
    print("literal mode degenerate:", exc)
