"""End to end on synthetic data: pairwise-ranking training, impression
metrics, checkpointing, and a quick full-vs-candidate-agnostic comparison.

Run: python demos/06_train_and_evaluate.py   (about a minute)
"""

import os
import tempfile

import numpy as np

from newsrec import autodiff as ad
from newsrec import data, model, pipeline, training
from newsrec.config import ModelConfig, TrainConfig
from newsrec.user import VARIANT_FLAGS, AblationFlags

cfg = ModelConfig(
    word_dim=16, entity_dim=8, match_dim=16, genres=1, title_len=6,
    history_len=5, entities_per_news=2, cand_entities=2,
    news_heads=2, word_heads=2, text_heads=2, dropout=0.1,
)
cfg.validate()

spec = data.SynthSpec(
    topics=4, users=60, news=80, vocab=120, entities_per_topic=8,
    noise=0.05, impressions_per_user=5, candidates=4,
    history_min=3, history_max=5,
)
synth = data.generate_synthetic(spec, seed=11)
ds = pipeline.synthetic_dataset(synth, cfg, seed=11, transe_epochs=40)
train_imps, val_imps = training.split_validation(synth.impressions, 0.2)
print(f"{len(train_imps)} training impressions, {len(val_imps)} validation")

tcfg = TrainConfig(negatives=2, batch=32, epochs=3, lr=3e-3, seed=0, val_frac=0.2)
flags = AblationFlags()
params = model.init_params(cfg, ds.vocab_size, ds.entity_matrix, flags, ad.substream(0, "init"))

result = training.train(
    ds, train_imps, val_imps, params, cfg, tcfg, flags,
    log=lambda e: print(
        f"  epoch {e['epoch']}: loss {e['train_loss']:.4f}  val auc {e['val_auc']:.4f}"
    ),
)
print(f"best epoch: {result.best_epoch}")

report = training.evaluate(ds, val_imps, result.params, cfg, flags)
print("validation metrics:", {k: round(v, 4) for k, v in report.as_dict().items()})

with tempfile.TemporaryDirectory() as tmp:
    prefix = os.path.join(tmp, "checkpoint")
    training.save_checkpoint(result.params, prefix)
    blocks = training.load_checkpoint(prefix)
    same = all(blocks[k].tobytes() == result.params[k].data.tobytes() for k in blocks)
    print(f"checkpoint round-trips bitwise: {same} ({len(blocks)} blocks)")

# candidate-aware vs candidate-agnostic, one seed each (the acceptance suite
# repeats this over three seeds)
scores = {}
for variant in ("full", "c"):
    vflags = VARIANT_FLAGS[variant]
    vparams = model.init_params(cfg, ds.vocab_size, ds.entity_matrix, vflags,
                                ad.substream(0, "init"))
    out = training.train(ds, train_imps, val_imps, vparams, cfg, tcfg, vflags)
    scores[variant] = training.evaluate(ds, val_imps, out.params, cfg, vflags).auc
print(f"val AUC  full: {scores['full']:.4f}   candidate-agnostic: {scores['c']:.4f}")
