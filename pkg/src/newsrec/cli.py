"""Command-line entry point.

Subcommands: ``synth`` (generate a synthetic corpus), ``train``, ``eval``,
``ablate`` (variant comparison), ``sweep`` (head-count sweep), ``gradcheck``
(finite-difference verification of the full model).

Exit codes: 0 success, 1 check failure, 2 usage/config error. Machine
output is line-oriented ``key=value``.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import autodiff as ad
from . import check as check_mod
from . import data as data_mod
from . import model as model_mod
from . import pipeline, training
from .config import ABLATIONS, ConfigError, ModelConfig, load_config
from .data import ParseError
from .training import TrainingDiverged
from .user import VARIANT_FLAGS


def _kv(stream, **pairs):
    for key, value in pairs.items():
        print(f"{key}={value}", file=stream)


def _float(x: float) -> str:
    return repr(float(x))


def _load(args) -> "RunConfig":
    if not args.config:
        raise ConfigError("missing required flag: --config")
    rc = load_config(args.config)
    if getattr(args, "out", None):
        rc.out_dir = args.out
    if getattr(args, "seed", None) is not None:
        rc.train.seed = args.seed
    return rc


def cmd_synth(args) -> int:
    kv = {}
    if args.spec:
        from .config import read_kv

        kv = read_kv(args.spec)
    spec = data_mod.synth_spec_from_kv(kv)
    seed = args.seed if args.seed is not None else 0
    out = args.out or "out"
    os.makedirs(out, exist_ok=True)
    synth = data_mod.generate_synthetic(spec, seed)

    data_mod.serialize_news_table(synth.records, synth.vocab, os.path.join(out, "news.tsv"))
    data_mod.save_triples(synth.triples, os.path.join(out, "triples.tsv"))

    by_user: dict[str, list] = {}
    for imp in synth.impressions:
        by_user.setdefault(imp.user_id, []).append(imp)
    train_imps, test_imps = [], []
    for user in by_user.values():
        n_test = int(round(len(user) * spec.test_frac))
        cut = len(user) - n_test
        train_imps.extend(user[:cut])
        test_imps.extend(user[cut:])
    data_mod.serialize_behaviors(train_imps, os.path.join(out, "behaviors.tsv"))
    data_mod.serialize_behaviors(test_imps, os.path.join(out, "behaviors_test.tsv"))

    with open(os.path.join(out, "topics.tsv"), "w", encoding="utf-8") as fh:
        for news_id, topic in synth.truth.news_topic.items():
            fh.write(f"{news_id}\t{topic}\n")
    with open(os.path.join(out, "interests.tsv"), "w", encoding="utf-8") as fh:
        for user_id, topics in synth.truth.user_interests.items():
            fh.write(user_id + "\t" + " ".join(str(t) for t in topics) + "\n")

    _kv(
        sys.stdout,
        news=len(synth.records),
        impressions=len(synth.impressions),
        train_impressions=len(train_imps),
        test_impressions=len(test_imps),
        triples=len(synth.triples),
        out=out,
    )
    return 0


def _prepare_run(rc):
    ds, impressions = pipeline.load_run_data(rc)
    train_imps, val_imps = training.split_validation(impressions, rc.train.val_frac)
    flags = VARIANT_FLAGS[rc.ablation]
    return ds, impressions, train_imps, val_imps, flags


def cmd_train(args) -> int:
    rc = _load(args)
    ds, _, train_imps, val_imps, flags = _prepare_run(rc)
    params = model_mod.init_params(
        rc.model, ds.vocab_size, ds.entity_matrix, flags, ad.substream(rc.train.seed, "init")
    )
    result = training.train(ds, train_imps, val_imps, params, rc.model, rc.train, flags)
    os.makedirs(rc.out_dir, exist_ok=True)
    prefix = os.path.join(rc.out_dir, "checkpoint")
    training.save_checkpoint(result.params, prefix)
    history_path = os.path.join(rc.out_dir, "history.txt")
    with open(history_path, "w", encoding="utf-8") as fh:
        for entry in result.history:
            fields = " ".join(
                f"{k}={_float(v) if isinstance(v, float) else v}" for k, v in entry.items()
            )
            fh.write(fields + "\n")
    best = result.history[result.best_epoch - 1]
    _kv(
        sys.stdout,
        checkpoint=prefix,
        history=history_path,
        best_epoch=result.best_epoch,
        val_auc=_float(best["val_auc"]),
    )
    return 0


def cmd_eval(args) -> int:
    rc = _load(args)
    if args.data:
        rc.behaviors_path = args.data
    elif rc.test_behaviors_path:
        rc.behaviors_path = rc.test_behaviors_path
    ds, impressions, _, _, flags = _prepare_run(rc)
    params = model_mod.init_params(
        rc.model, ds.vocab_size, ds.entity_matrix, flags, ad.substream(rc.train.seed, "init")
    )
    training.restore_params(params, training.load_checkpoint(args.checkpoint))
    report = training.evaluate(ds, impressions, params, rc.model, flags)
    _kv(
        sys.stdout,
        auc=_float(report.auc),
        mrr=_float(report.mrr),
        ndcg5=_float(report.ndcg5),
        ndcg10=_float(report.ndcg10),
    )
    if report.n_skipped_no_history or report.n_auc_undefined:
        _kv(
            sys.stderr,
            skipped_no_history=report.n_skipped_no_history,
            auc_undefined=report.n_auc_undefined,
        )
    return 0


def cmd_ablate(args) -> int:
    rc = _load(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        if v not in ABLATIONS:
            raise ConfigError(f"unknown ablation variant {v!r}; choose from {ABLATIONS}")
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    ds, impressions, train_imps, val_imps, _ = _prepare_run(rc)
    if rc.test_behaviors_path:
        test_imps, _ = data_mod.parse_behaviors(rc.test_behaviors_path, known_ids=set(ds.news))
    else:
        test_imps = val_imps
    results = training.run_ablation(
        ds, train_imps, val_imps, test_imps, rc.model, rc.train, variants, seeds
    )
    os.makedirs(rc.out_dir, exist_ok=True)
    table_path = os.path.join(rc.out_dir, "ablation.tsv")
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write("variant\tauc\tauc_sd\tmrr\tmrr_sd\tndcg5\tndcg5_sd\tndcg10\tndcg10_sd\n")
        for variant in variants:
            summary = results[variant]["summary"]
            cells = [variant]
            for key in ("auc", "mrr", "ndcg5", "ndcg10"):
                mean, sd = summary[key]
                cells += [_float(mean), _float(sd)]
            fh.write("\t".join(cells) + "\n")
    for variant in variants:
        summary = results[variant]["summary"]
        _kv(
            sys.stdout,
            variant=variant,
            auc=_float(summary["auc"][0]),
            auc_sd=_float(summary["auc"][1]),
            mrr=_float(summary["mrr"][0]),
            ndcg5=_float(summary["ndcg5"][0]),
            ndcg10=_float(summary["ndcg10"][0]),
        )
    _kv(sys.stdout, table=table_path)
    return 0


def cmd_sweep(args) -> int:
    rc = _load(args)
    if args.param not in ("lambda1", "lambda2"):
        raise ConfigError(f"sweep parameter must be lambda1 or lambda2, got {args.param!r}")
    values = [int(v) for v in args.values.split(",") if v.strip()]
    attr = "news_heads" if args.param == "lambda1" else "word_heads"
    configs = []
    for value in values:  # validate everything before spending time training
        cfg = dataclasses.replace(rc.model, **{attr: value})
        cfg.validate()
        configs.append(cfg)
    ds, impressions, train_imps, val_imps, flags = _prepare_run(rc)
    if rc.test_behaviors_path:
        test_imps, _ = data_mod.parse_behaviors(rc.test_behaviors_path, known_ids=set(ds.news))
    else:
        test_imps = val_imps
    os.makedirs(rc.out_dir, exist_ok=True)
    rows = []
    for value, cfg in zip(values, configs):
        params = model_mod.init_params(
            cfg, ds.vocab_size, ds.entity_matrix, flags, ad.substream(rc.train.seed, "init")
        )
        result = training.train(ds, train_imps, val_imps, params, cfg, rc.train, flags)
        report = training.evaluate(ds, test_imps, result.params, cfg, flags)
        rows.append((value, report))
    table_path = os.path.join(rc.out_dir, f"sweep_{args.param}.tsv")
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write("value\tauc\tmrr\tndcg5\tndcg10\n")
        for value, report in rows:
            fh.write(
                "\t".join(
                    [str(value), _float(report.auc), _float(report.mrr),
                     _float(report.ndcg5), _float(report.ndcg10)]
                )
                + "\n"
            )
    for value, report in rows:
        _kv(sys.stdout, value=value, auc=_float(report.auc), mrr=_float(report.mrr),
            ndcg5=_float(report.ndcg5), ndcg10=_float(report.ndcg10))
    _kv(sys.stdout, table=table_path)
    return 0


def toy_model_config() -> ModelConfig:
    """Default gradcheck dimensions: small enough to finish in seconds."""
    return ModelConfig(
        word_dim=16,
        entity_dim=8,
        match_dim=8,
        genres=1,
        title_len=4,
        history_len=2,
        entities_per_news=2,
        cand_entities=2,
        news_heads=2,
        word_heads=2,
        text_heads=2,
        dropout=0.0,
    )


def cmd_gradcheck(args) -> int:
    if args.config:
        cfg = load_config(args.config).model
    else:
        cfg = toy_model_config()
    cfg.validate()
    seed = args.seed if args.seed is not None else 0
    grad_tweak = None
    if args.corrupt:
        name = args.corrupt

        def grad_tweak(block, g, _name=name):
            return g * 1.5 if block == _name else g

    errs = check_mod.gradient_check(
        cfg, seed=seed, samples_per_block=args.samples, grad_tweak=grad_tweak
    )
    worst = 0.0
    for name in sorted(errs):
        _kv(sys.stdout, block=name, err=_float(errs[name]))
        worst = max(worst, errs[name])
    _kv(sys.stdout, blocks=len(errs), max_err=_float(worst), threshold=_float(1e-3))
    return 0 if worst < 1e-3 else 1


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="newsrec", description="candidate-aware news recommender toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", help="flat key=value run config", required=False)
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="seed (overrides config)")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--spec", help="flat key=value synthetic spec (defaults apply if omitted)")
    p.add_argument("--out", help="output directory", default="out")
    p.add_argument("--seed", type=int, help="generator seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train and write checkpoint + history")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint prefix (no extension)")
    p.add_argument("--data", help="behaviors file to evaluate (defaults to config)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare ablation variants")
    common(p)
    p.add_argument("--variants", default="full,c", help="comma-separated variant names")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="sweep attention head counts")
    common(p)
    p.add_argument("--param", required=True, help="lambda1 or lambda2")
    p.add_argument("--values", required=True, help="comma-separated head counts")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    common(p)
    p.add_argument("--samples", type=int, default=32, help="coordinates probed per block")
    p.add_argument("--corrupt", help=argparse.SUPPRESS)  # verification hook
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except (ConfigError, ParseError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDiverged, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
