"""Acceptance suite: one test per exit criterion, each printing a PASS line
with the measured quantity once its assertions hold.

Full-scale benchmark numbers from the reference protocol are documented as
context only; nothing here asserts them. Criterion 8 needs the public MIND
corpus and skips when it is not present (set MIND_SMALL_DIR to a directory
holding train/ and dev/ splits with news.tsv and behaviors.tsv).
"""

import dataclasses
import hashlib
import os
import time

import numpy as np
import pytest

from newsrec import autodiff as ad
from newsrec import cli, data, kg, metrics, model, pipeline, training, user
from newsrec.autodiff import Tensor
from newsrec.config import ModelConfig, TrainConfig
from newsrec.user import VARIANT_FLAGS, AblationFlags

from test_metrics import oracle_auc, oracle_mrr, oracle_ndcg


def ok(n, msg):
    print(f"PASS criterion {n}: {msg}")


def desk_cfg(**kw):
    base = dict(
        word_dim=16,
        entity_dim=8,
        match_dim=16,
        genres=1,
        title_len=6,
        history_len=5,
        entities_per_news=2,
        cand_entities=2,
        news_heads=2,
        word_heads=2,
        text_heads=2,
        dropout=0.1,
    )
    base.update(kw)
    cfg = ModelConfig(**base)
    cfg.validate()
    return cfg


def test_criterion_01_gradient_integrity(capsys):
    start = time.time()
    code = cli.main(["gradcheck"])  # toy dims: d_w=16 d_e=8 m=2 g=1 l=4 D=2 heads=2
    elapsed = time.time() - start
    out = capsys.readouterr().out
    errs = {}
    for line in out.splitlines():
        if line.startswith("block="):
            errs[line.split("=", 1)[1]] = None
        if line.startswith("max_err="):
            max_err = float(line.split("=", 1)[1])
    assert code == 0
    assert max_err < 1e-3
    assert len(errs) == 47  # every trainable block, once
    assert elapsed < 60.0
    with capsys.disabled():
        ok(1, f"gradcheck max rel err {max_err:.2e} over {len(errs)} blocks in {elapsed:.1f}s")


def test_criterion_02_candidate_agnostic_invariance(capsys):
    cfg = desk_cfg()
    spec = data.SynthSpec(
        topics=4, users=4, news=130, vocab=200, entities_per_topic=8,
        entities_per_news=2, title_min=4, title_max=6, history_min=3,
        history_max=5, impressions_per_user=1, candidates=4,
    )
    synth = data.generate_synthetic(spec, seed=21)
    ds = pipeline.synthetic_dataset(synth, cfg, seed=21, transe_epochs=20)
    history = synth.impressions[0].history
    rng = np.random.default_rng(5)
    news_ids = [r.news_id for r in synth.records]
    cand_ids = [news_ids[i] for i in rng.choice(len(news_ids), size=100, replace=False)]

    def interests(variant, seed):
        flags = VARIANT_FLAGS[variant]
        params = model.init_params(
            cfg, ds.vocab_size, ds.entity_matrix, flags, ad.substream(seed, "init")
        )
        out = []
        with ad.no_grad():
            ctx = model.build_history_context(ds, history, params, cfg)
            for cid in cand_ids:
                cand = model.encode_candidate(ds, cid, ctx, params, cfg)
                out.append(model.user_interest(ctx, cand, params, cfg, flags).data)
        return out

    agnostic = interests("c", 0)
    first = agnostic[0].tobytes()
    assert all(v.tobytes() == first for v in agnostic)

    aware = interests("full", 0)
    pair_idx = np.random.default_rng(6).integers(0, 100, size=(100, 2))
    distinct = sum(
        1 for i, j in pair_idx
        if i != j and np.linalg.norm(aware[int(i)] - aware[int(j)]) > 0
    )
    total = sum(1 for i, j in pair_idx if i != j)
    assert distinct >= min(99, total)
    with capsys.disabled():
        ok(2, f"MGCA-c u bitwise stable over 100 candidates; full model distinct on {distinct}/{total} pairs")


def test_criterion_03_literal_entity_mode_identity(capsys):
    rng = np.random.default_rng(33)
    worst_sum_dev = 0.0
    for _ in range(1000):
        m = int(rng.integers(1, 4))
        D = int(rng.integers(1, 5))
        dc = int(rng.integers(1, 5))
        de = int(rng.integers(1, 6))
        ue = Tensor(rng.normal(scale=3.0, size=(m, D, de)))
        ce = Tensor(rng.normal(scale=3.0, size=(dc, de)))
        umask = np.ones((m, D))
        cmask = np.ones(dc)
        weighted = user.weighted_clicked_entities(ue, umask, ce, cmask, "literal")
        assert weighted.data.tobytes() == ue.data.tobytes()
        # evidence of the written-form collapse: the rows really sum to 1
        A = ad.matmul(
            ue, ad.broadcast_to(ad.reshape(ad.transpose(ce), (1, de, dc)), (m, de, dc))
        )
        beta = user.entity_relevance_weights(A, umask, cmask, "literal")
        worst_sum_dev = max(worst_sum_dev, float(np.abs(beta.data.sum(axis=2) - 1.0).max()))
    assert worst_sum_dev < 1e-12
    with capsys.disabled():
        ok(3, f"literal weighting bitwise identity on 1000 inputs (max |sum(beta)-1| = {worst_sum_dev:.1e})")


def test_criterion_04_synthetic_overfit(capsys):
    start = time.time()
    cfg = desk_cfg()
    spec = data.SynthSpec(
        topics=4, users=100, news=80, vocab=120, entities_per_topic=8,
        entities_per_news=2, title_min=4, title_max=6, history_min=3,
        history_max=5, noise=0.0, impressions_per_user=5, candidates=4,
    )
    synth = data.generate_synthetic(spec, seed=42)
    assert len(synth.impressions) == 500
    ds = pipeline.synthetic_dataset(synth, cfg, seed=42, transe_epochs=40)
    tcfg = TrainConfig(negatives=2, batch=32, epochs=5, lr=3e-3, seed=0, val_frac=0.0)
    params = model.init_params(
        cfg, ds.vocab_size, ds.entity_matrix, AblationFlags(), ad.substream(0, "init")
    )
    result = training.train(
        ds, synth.impressions, synth.impressions, params, cfg, tcfg, AblationFlags()
    )
    best = max(h["val_auc"] for h in result.history)
    elapsed = time.time() - start
    assert best > 0.95, f"training AUC {best:.4f} within {tcfg.epochs} epochs"
    assert tcfg.epochs <= 20
    assert elapsed < 600.0
    with capsys.disabled():
        ok(4, f"training AUC {best:.4f} after <= {tcfg.epochs} epochs in {elapsed:.0f}s")


def test_criterion_05_synthetic_ablation_ordering(capsys):
    cfg = desk_cfg(match_dim=8, history_len=5)
    spec = data.SynthSpec(
        topics=5, users=80, news=100, vocab=150, entities_per_topic=8,
        entities_per_news=2, title_min=4, title_max=6, history_min=3,
        history_max=6, noise=0.05, impressions_per_user=5, candidates=5,
        interests_min=3, interests_max=4,
    )
    synth = data.generate_synthetic(spec, seed=7)
    ds = pipeline.synthetic_dataset(synth, cfg, seed=7, transe_epochs=40)
    by_user: dict[str, list] = {}
    for imp in synth.impressions:
        by_user.setdefault(imp.user_id, []).append(imp)
    train_imps, test_imps = [], []
    for imps in by_user.values():
        train_imps.extend(imps[:-1])
        test_imps.append(imps[-1])
    tcfg = TrainConfig(negatives=2, batch=32, epochs=3, lr=3e-3, val_frac=0.0)
    results = training.run_ablation(
        ds, train_imps, train_imps[:40], test_imps, cfg, tcfg, ["full", "c"], [0, 1, 2]
    )
    full_auc = results["full"]["summary"]["auc"][0]
    c_auc = results["c"]["summary"]["auc"][0]
    gap = full_auc - c_auc
    assert full_auc > c_auc
    with capsys.disabled():
        header = f"{'variant':8s} {'auc':>16s} {'mrr':>16s} {'ndcg5':>16s} {'ndcg10':>16s}"
        print("\n" + header)
        for variant in ("full", "c"):
            s = results[variant]["summary"]
            cells = " ".join(
                f"{s[k][0]:.4f} +/- {s[k][1]:.4f}" for k in ("auc", "mrr", "ndcg5", "ndcg10")
            )
            print(f"{variant:8s} {cells}")
        ok(5, f"mean test AUC full {full_auc:.4f} > MGCA-c {c_auc:.4f} (gap {gap:+.4f}, 3 seeds)")


def test_criterion_06_metric_oracles(capsys):
    rng = np.random.default_rng(66)
    checked = 0
    for _ in range(1000):
        n = int(rng.integers(2, 21))
        labels = rng.integers(0, 2, size=n)
        scores = np.round(rng.normal(size=n), 1)  # coarse grid forces ties
        auc = metrics.impression_auc(labels, scores)
        expected = oracle_auc(list(labels), list(scores))
        if expected is None:
            assert auc is None
        else:
            assert abs(auc - expected) < 1e-12
        assert abs(metrics.mrr(labels, scores) - oracle_mrr(list(labels), list(scores))) < 1e-12
        for k in (5, 10):
            assert abs(
                metrics.ndcg_at_k(labels, scores, k) - oracle_ndcg(list(labels), list(scores), k)
            ) < 1e-12
        checked += 1
    assert checked == 1000
    with capsys.disabled():
        ok(6, "auc/mrr/ndcg match brute-force oracles on 1000 random impressions (<=1e-12)")


def test_criterion_07_transe_sanity(capsys):
    start = time.time()
    synth = data.generate_synthetic(
        data.SynthSpec(topics=3, entities_per_topic=10, triples_per_topic=30), seed=0
    )
    store = kg.TripleStore(synth.triples)
    emb = kg.transe_train(store, dim=16, epochs=150, lr=0.02, margin=0.5, seed=1)
    acc = kg.ranking_accuracy(emb, store, seed=5)
    elapsed = time.time() - start
    assert acc >= 0.90
    assert elapsed < 120.0
    with capsys.disabled():
        ok(7, f"{acc:.1%} of triples beat both corruptions in {elapsed:.1f}s")


def test_criterion_08_conditional_mind_parse(capsys):
    root = os.environ.get("MIND_SMALL_DIR", os.path.join("data", "mind"))
    paths = {
        split: (
            os.path.join(root, split, "news.tsv"),
            os.path.join(root, split, "behaviors.tsv"),
        )
        for split in ("train", "dev")
    }
    if not all(os.path.exists(p) for pair in paths.values() for p in pair):
        pytest.skip(f"public MIND dataset not present under {root!r}")
    news_ids = set()
    n_impressions = 0
    for split, (news_path, behaviors_path) in paths.items():
        records, _, _ = data.parse_news_table(news_path)
        news_ids.update(r.news_id for r in records)
        logs, _ = data.parse_behaviors(behaviors_path)
        n_impressions += len(logs)
    assert len(news_ids) == 65_238
    assert n_impressions == 230_117
    with capsys.disabled():
        ok(8, f"MIND parse counts match: {len(news_ids)} news, {n_impressions} impressions")


def test_criterion_09_word_stage_linear_time(capsys):
    cfg = desk_cfg(word_dim=32, title_len=30, history_len=16, match_dim=8, dropout=0.0)
    flags = AblationFlags()

    def mean_forward_time(m):
        local = dataclasses.replace(cfg, history_len=m)
        ds_dummy = np.random.default_rng(m)
        params = model.init_params(local, 50, np.zeros((3, local.entity_dim)), flags,
                                   ad.substream(0, "init"))
        L = local.seq_len
        G = Tensor(ds_dummy.normal(size=(L, local.word_dim)))
        mask = np.ones(L)
        nc = Tensor(ds_dummy.normal(size=local.cand_dim))
        with ad.no_grad():
            user.word_level_interest(G, mask, nc, params, local, flags)  # warmup
            times = []
            for _ in range(5):
                t0 = time.perf_counter()
                user.word_level_interest(G, mask, nc, params, local, flags)
                times.append(time.perf_counter() - t0)
        return float(np.mean(times))

    t1 = mean_forward_time(16)   # L = 480
    t2 = mean_forward_time(32)   # L = 960
    ratio = t2 / t1
    assert ratio <= 2.3, f"doubling L scaled wall time by {ratio:.2f}x"
    with capsys.disabled():
        ok(9, f"doubling L: {t1*1e3:.2f}ms -> {t2*1e3:.2f}ms ({ratio:.2f}x <= 2.3x)")


def test_criterion_10_training_determinism(tmp_path, capsys):
    spec_file = tmp_path / "spec.txt"
    spec_file.write_text(
        "topics = 3\nusers = 8\nnews = 24\nvocab = 60\nentities_per_topic = 6\n"
        "entities_per_news = 2\ntitle_min = 3\ntitle_max = 6\nhistory_min = 2\n"
        "history_max = 4\nimpressions_per_user = 4\ncandidates = 4\n"
    )
    synth_out = tmp_path / "data"
    assert cli.main(["synth", "--spec", str(spec_file), "--out", str(synth_out), "--seed", "4"]) == 0
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text(
        "d_w = 8\nd_e = 4\nd = 8\ng = 1\nl = 6\nm = 4\nD = 2\nDc = 2\n"
        "lambda1 = 2\nlambda2 = 2\nheads_text = 2\ndropout = 0.1\nS = 2\n"
        "batch = 16\nepochs = 2\nlr = 0.003\nseed = 9\ntranse_epochs = 20\n"
        "transe_margin = 0.5\n"
        f"news = {synth_out / 'news.tsv'}\n"
        f"behaviors = {synth_out / 'behaviors.tsv'}\n"
        f"triples = {synth_out / 'triples.tsv'}\n"
    )
    digests = []
    for run in range(2):
        out_dir = tmp_path / f"run{run}"
        assert cli.main(["train", "--config", str(cfg_file), "--out", str(out_dir)]) == 0
        blob = (out_dir / "checkpoint.bin").read_bytes()
        manifest = (out_dir / "checkpoint.manifest").read_bytes()
        history = (out_dir / "history.txt").read_bytes()
        digests.append(
            tuple(hashlib.sha256(b).hexdigest() for b in (blob, manifest, history))
        )
    assert digests[0] == digests[1]
    with capsys.disabled():
        ok(10, "repeated training produced bitwise-identical checkpoint and history")
