"""Pairwise-ranking training (positives against in-impression sampled
negatives), evaluation over impressions, ablation sweeps, and checkpoints.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import metrics as metrics_mod
from . import model as model_mod
from .autodiff import Tensor
from .config import ModelConfig, TrainConfig
from .data import ImpressionLog
from .model import Dataset
from .user import VARIANT_FLAGS, AblationFlags


class TrainingDiverged(RuntimeError):
    pass


def sample_negatives(impression: ImpressionLog, positive: str, S: int, rng) -> list[str] | None:
    """S non-clicked items from the same impression; uniform without
    replacement when enough exist, with replacement otherwise. None when the
    impression has no non-clicked item (the pair is skipped, counted by the
    caller)."""
    negs = [nid for nid, label in impression.shown if label == 0]
    if not negs:
        return None
    if len(negs) >= S:
        picks = rng.choice(len(negs), size=S, replace=False)
    else:
        picks = rng.integers(len(negs), size=S)
    return [negs[int(i)] for i in picks]


def bpr_loss(pos: Tensor, neg: Tensor, loss_mode: str = "log_bpr") -> Tensor:
    """Pairwise ranking loss over aligned positive/negative score vectors.

    ``log_bpr`` is the mean of -log sigmoid(pos - neg); ``literal_sigmoid``
    is the negated mean of sigmoid(pos - neg) itself (bounded in [-1, 0]).
    """
    delta = pos - neg
    if loss_mode == "log_bpr":
        return ad.tmean(ad.softplus(-delta))
    if loss_mode == "literal_sigmoid":
        return ad.tmean(ad.sigmoid(delta)) * -1.0
    raise ValueError(f"unknown loss_mode {loss_mode!r}")


@dataclass
class PairStats:
    pairs: int = 0
    skipped_no_negative: int = 0
    skipped_no_history: int = 0
    dropped_candidates: int = 0


def build_training_examples(
    ds: Dataset, impressions: list[ImpressionLog], S: int, rng
) -> tuple[list[tuple[list[str], str, list[str]]], PairStats]:
    """(history, positive, negatives) per positive shown item."""
    stats = PairStats()
    examples = []
    for imp in impressions:
        history = [h for h in imp.history if h in ds.news]
        if not history:
            stats.skipped_no_history += 1
            continue
        shown = []
        for nid, label in imp.shown:
            if nid in ds.news:
                shown.append((nid, label))
            else:
                stats.dropped_candidates += 1
        resolved = ImpressionLog(imp.impression_id, imp.user_id, imp.timestamp, history, shown)
        for nid, label in shown:
            if label != 1:
                continue
            negs = sample_negatives(resolved, nid, S, rng)
            if negs is None:
                stats.skipped_no_negative += 1
                continue
            examples.append((history, nid, negs))
            stats.pairs += len(negs)
    return examples, stats


def evaluate(
    ds: Dataset,
    impressions: list[ImpressionLog],
    params: dict,
    cfg: ModelConfig,
    flags: AblationFlags,
    keep_rows: bool = False,
) -> metrics_mod.MetricsReport:
    """Score every impression deterministically (dropout off) and average
    per-impression metrics with equal weight.

    When no stage is candidate-aware the user vector is computed once per
    impression and reused; this matches per-candidate recomputation bitwise
    because the candidate block never enters the graph.
    """
    rows = []
    skipped_history = 0
    dropped = 0
    agnostic = model_mod.candidate_agnostic(flags)
    with ad.no_grad():
        text_cache: dict = {}
        for imp in impressions:
            history = [h for h in imp.history if h in ds.news]
            shown = [(nid, label) for nid, label in imp.shown if nid in ds.news]
            dropped += len(imp.shown) - len(shown)
            if not history or not shown:
                skipped_history += 1
                continue
            ctx = model_mod.build_history_context(ds, history, params, cfg, text_cache=text_cache)
            cached_u = (
                model_mod.user_interest(ctx, None, params, cfg, flags) if agnostic else None
            )
            scores, labels = [], []
            for nid, label in shown:
                s, _ = model_mod.score_pair(
                    ds, ctx, nid, params, cfg, flags, text_cache=text_cache, cached_u=cached_u
                )
                scores.append(s.item())
                labels.append(label)
            scores = np.array(scores)
            labels = np.array(labels, dtype=float)
            rows.append(
                {
                    "impression_id": imp.impression_id,
                    "auc": metrics_mod.impression_auc(labels, scores),
                    "mrr": metrics_mod.mrr(labels, scores),
                    "ndcg5": metrics_mod.ndcg_at_k(labels, scores, 5),
                    "ndcg10": metrics_mod.ndcg_at_k(labels, scores, 10),
                }
            )
    return metrics_mod.aggregate(
        rows,
        keep_rows=keep_rows,
        n_skipped_no_history=skipped_history,
        n_dropped_candidates=dropped,
    )


@dataclass
class TrainResult:
    params: dict            # tensors at the best-validation-AUC epoch
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stats: PairStats | None = None


def train(
    ds: Dataset,
    train_impressions: list[ImpressionLog],
    val_impressions: list[ImpressionLog],
    params: dict,
    cfg: ModelConfig,
    tcfg: TrainConfig,
    flags: AblationFlags,
    log=None,
) -> TrainResult:
    """Adam over shuffled BPR examples; keeps the best-validation-AUC epoch.

    Bitwise reproducible for a fixed seed: negative sampling, shuffling and
    dropout all derive from named substreams of ``tcfg.seed`` and execution
    is single-threaded.
    """
    rng_samp = ad.substream(tcfg.seed, "sampling")
    rng_drop = ad.substream(tcfg.seed, "dropout")
    state = ad.AdamState()
    trainable = model_mod.trainable(params)
    agnostic = model_mod.candidate_agnostic(flags)

    history = []
    best_auc, best_epoch = -1.0, 0
    best_params = {k: v.data.copy() for k, v in params.items()}
    stats_total = PairStats()
    batch_index = 0
    for epoch in range(1, tcfg.epochs + 1):
        examples, stats = build_training_examples(ds, train_impressions, tcfg.negatives, rng_samp)
        stats_total = stats
        order = rng_samp.permutation(len(examples))
        loss_sum, pair_count = 0.0, 0
        for start in range(0, len(order), tcfg.batch):
            batch = [examples[int(i)] for i in order[start : start + tcfg.batch]]
            n_pairs = sum(len(negs) for _, _, negs in batch)
            if n_pairs == 0:
                continue
            ad.zero_grad(trainable)
            batch_loss = 0.0
            for hist, pos_id, neg_ids in batch:
                ctx = model_mod.build_history_context(
                    ds, hist, params, cfg, rng=rng_drop, training=True
                )
                cached_u = (
                    model_mod.user_interest(ctx, None, params, cfg, flags, rng_drop, True)
                    if agnostic
                    else None
                )
                pos_score, _ = model_mod.score_pair(
                    ds, ctx, pos_id, params, cfg, flags, rng_drop, True, cached_u=cached_u
                )
                neg_scores = [
                    model_mod.score_pair(
                        ds, ctx, nid, params, cfg, flags, rng_drop, True, cached_u=cached_u
                    )[0]
                    for nid in neg_ids
                ]
                pos_vec = ad.concat([ad.reshape(pos_score, (1,))] * len(neg_scores), axis=0)
                neg_vec = ad.concat([ad.reshape(s, (1,)) for s in neg_scores], axis=0)
                example_loss = bpr_loss(pos_vec, neg_vec, tcfg.loss_mode) * (
                    len(neg_scores) / n_pairs
                )
                example_loss.backward()
                batch_loss += float(example_loss.data)
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(f"non-finite loss in batch {batch_index}")
            grads = ad.collect_grads(trainable)
            ad.adam_step(trainable, grads, state, lr=tcfg.lr)
            if cfg.finetune_entities:
                params["embed.entity"].data[0] = 0.0  # keep the pad row inert
            loss_sum += batch_loss * n_pairs
            pair_count += n_pairs
            batch_index += 1

        report = evaluate(ds, val_impressions, params, cfg, flags)
        entry = {
            "epoch": epoch,
            "train_loss": loss_sum / max(pair_count, 1),
            "val_auc": report.auc,
            "val_mrr": report.mrr,
            "val_ndcg5": report.ndcg5,
            "val_ndcg10": report.ndcg10,
        }
        history.append(entry)
        if log is not None:
            log(entry)
        if report.auc > best_auc:
            best_auc = report.auc
            best_epoch = epoch
            best_params = {k: v.data.copy() for k, v in params.items()}

    result_params = {
        k: Tensor(best_params[k], requires_grad=params[k].requires_grad) for k in params
    }
    return TrainResult(result_params, history, best_epoch, stats_total)


def split_validation(
    impressions: list[ImpressionLog], val_frac: float
) -> tuple[list[ImpressionLog], list[ImpressionLog]]:
    """Last ``val_frac`` of the impressions, by file order, becomes validation."""
    if val_frac <= 0.0:
        return impressions, impressions
    n_val = max(1, int(round(len(impressions) * val_frac)))
    n_val = min(n_val, len(impressions) - 1) if len(impressions) > 1 else 0
    if n_val == 0:
        return impressions, impressions
    return impressions[:-n_val], impressions[-n_val:]


def run_ablation(
    ds: Dataset,
    train_impressions: list[ImpressionLog],
    val_impressions: list[ImpressionLog],
    test_impressions: list[ImpressionLog],
    cfg: ModelConfig,
    tcfg: TrainConfig,
    variants: list[str],
    seeds: list[int],
) -> dict:
    """Train each variant under identical seeds/data; mean and sd per metric."""
    results: dict[str, dict] = {}
    for variant in variants:
        if variant not in VARIANT_FLAGS:
            raise ValueError(f"unknown ablation variant {variant!r}")
        flags = VARIANT_FLAGS[variant]
        runs = []
        for seed in seeds:
            rng = ad.substream(seed, "init")
            params = model_mod.init_params(
                cfg, ds.vocab_size, ds.entity_matrix.copy(), flags, rng
            )
            tcfg_run = dataclasses.replace(tcfg, seed=seed)
            outcome = train(ds, train_impressions, val_impressions, params, cfg, tcfg_run, flags)
            report = evaluate(ds, test_impressions, outcome.params, cfg, flags)
            runs.append(report.as_dict())
        summary = {}
        for key in ("auc", "mrr", "ndcg5", "ndcg10"):
            vals = np.array([r[key] for r in runs])
            summary[key] = (float(vals.mean()), float(vals.std()))
        results[variant] = {"summary": summary, "runs": runs}
    return results


def save_checkpoint(params: dict, prefix: str) -> None:
    """Flat little-endian float64 blob plus a text manifest of
    (name, shape, byte offset) triples, sorted by block name."""
    os.makedirs(os.path.dirname(prefix) or ".", exist_ok=True)
    names = sorted(params)
    offset = 0
    with open(prefix + ".bin", "wb") as blob, open(
        prefix + ".manifest", "w", encoding="utf-8"
    ) as manifest:
        for name in names:
            arr = params[name].data if isinstance(params[name], Tensor) else params[name]
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            blob.write(raw)
            shape = ",".join(str(s) for s in arr.shape)
            manifest.write(f"{name}\t{shape}\t{offset}\n")
            offset += len(raw)


def load_checkpoint(prefix: str) -> dict[str, np.ndarray]:
    blocks: dict[str, np.ndarray] = {}
    with open(prefix + ".bin", "rb") as fh:
        blob = fh.read()
    with open(prefix + ".manifest", encoding="utf-8") as fh:
        for line in fh:
            name, shape_s, offset_s = line.rstrip("\n").split("\t")
            shape = tuple(int(s) for s in shape_s.split(",") if s)
            count = int(np.prod(shape)) if shape else 1
            offset = int(offset_s)
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
            blocks[name] = arr.reshape(shape).copy()
    return blocks


def restore_params(params: dict, blocks: dict[str, np.ndarray]) -> None:
    """Load checkpoint blocks into an initialized parameter dict in place."""
    missing = set(params) - set(blocks)
    extra = set(blocks) - set(params)
    if missing or extra:
        raise ValueError(f"checkpoint mismatch; missing={sorted(missing)} extra={sorted(extra)}")
    for name, tensor in params.items():
        if blocks[name].shape != tensor.data.shape:
            raise ValueError(
                f"checkpoint block {name!r} has shape {blocks[name].shape}, expected {tensor.data.shape}"
            )
        tensor.data = blocks[name].copy()
