"""Corpus ingestion: MIND-format TSV parsing, vocabularies, padding,
entity-vector files, and a synthetic dataset generator with planted
candidate-dependent click signal.

File layouts
------------
news table (8+ tab-separated fields, UTF-8)::

    news_id  category  subcategory  title  abstract  url  title_entities  abstract_entities

The two entity columns hold JSON lists of objects carrying a WikidataId.

behaviors (5 tab-separated fields)::

    impression_id  user_id  time  history  shown

``history`` is space-separated news ids (may be empty, most recent last);
``shown`` is space-separated ``newsid-label`` with label 0 or 1.

entity/word vectors: one line per id, ``id`` then whitespace-separated
floats.

triples: ``head  relation  tail`` per line, tab-separated.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

PAD = 0
UNK = 1

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class ParseError(ValueError):
    """A corpus line violates the declared layout."""


def tokenize(text: str) -> list[str]:
    """Lower-case and split on whitespace/punctuation (runs of [a-z0-9])."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """token -> index; 0 is padding, 1 is unknown, real tokens start at 2."""

    def __init__(self):
        self._index = {}
        self._tokens = []

    def __len__(self) -> int:
        return len(self._tokens) + 2

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def add(self, token: str) -> int:
        idx = self._index.get(token)
        if idx is None:
            idx = len(self._tokens) + 2
            self._index[token] = idx
            self._tokens.append(token)
        return idx

    def lookup(self, token: str) -> int:
        return self._index.get(token, UNK)

    def token(self, idx: int) -> str:
        if idx == PAD:
            return "<pad>"
        if idx == UNK:
            return "<unk>"
        return self._tokens[idx - 2]


@dataclass
class NewsRecord:
    news_id: str
    category: str
    subcategory: str
    genre_texts: list[list[int]]  # token ids per genre, truncated but not padded
    entity_ids: list[str]


@dataclass
class ImpressionLog:
    impression_id: str
    user_id: str
    timestamp: str
    history: list[str]  # most recent last
    shown: list[tuple[str, int]]


@dataclass
class ParseStats:
    bad_entity_json: int = 0
    dropped_history_ids: int = 0


def _entities_from_json(blob: str, stats: ParseStats) -> list[str]:
    blob = blob.strip()
    if not blob:
        return []
    try:
        items = json.loads(blob)
    except json.JSONDecodeError:
        stats.bad_entity_json += 1
        return []
    if not isinstance(items, list):
        stats.bad_entity_json += 1
        return []
    out = []
    for item in items:
        if isinstance(item, dict) and item.get("WikidataId"):
            out.append(str(item["WikidataId"]))
    return out


def parse_news_table(
    path: str,
    vocab: Vocab | None = None,
    *,
    genres: int = 2,
    genre_lens: list[int] | None = None,
    entity_cap: int = 5,
    grow_vocab: bool = True,
) -> tuple[list[NewsRecord], Vocab, ParseStats]:
    """Parse a news TSV into records plus the (possibly grown) vocabulary.

    Entity ids come from the JSON entity columns in order of appearance
    (title first), deduplicated and capped at ``entity_cap``. A malformed
    entity column counts a warning and yields no entities; a structurally
    malformed line raises with its line number.
    """
    if vocab is None:
        vocab = Vocab()
    lens = genre_lens or [30, 60]
    while len(lens) < genres:
        lens.append(lens[0])
    stats = ParseStats()
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) < 8:
                raise ParseError(f"{path}:{lineno}: expected >= 8 tab-separated fields, got {len(fields)}")
            news_id, category, subcategory, title, abstract = fields[:5]
            texts = [title, abstract][:genres]
            while len(texts) < genres:
                texts.append("")
            genre_ids = []
            for gi, text in enumerate(texts):
                tokens = tokenize(text)[: lens[gi]]
                if grow_vocab:
                    ids = [vocab.add(t) for t in tokens]
                else:
                    ids = [vocab.lookup(t) for t in tokens]
                genre_ids.append(ids)
            entities = _entities_from_json(fields[6], stats)
            entities += _entities_from_json(fields[7], stats)
            seen, ordered = set(), []
            for e in entities:
                if e not in seen:
                    seen.add(e)
                    ordered.append(e)
            records.append(
                NewsRecord(news_id, category, subcategory, genre_ids, ordered[:entity_cap])
            )
    return records, vocab, stats


def serialize_news_table(records: list[NewsRecord], vocab: Vocab, path: str) -> None:
    """Write records back in the news TSV layout (round-trips through the parser)."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            texts = [" ".join(vocab.token(i) for i in ids) for ids in rec.genre_texts]
            title = texts[0] if texts else ""
            abstract = texts[1] if len(texts) > 1 else ""
            ents = json.dumps([{"WikidataId": e} for e in rec.entity_ids])
            fh.write(
                "\t".join(
                    [rec.news_id, rec.category, rec.subcategory, title, abstract, "", ents, "[]"]
                )
                + "\n"
            )


def parse_behaviors(
    path: str, known_ids: set[str] | None = None
) -> tuple[list[ImpressionLog], ParseStats]:
    """Parse a behaviors TSV. With ``known_ids``, history entries that do not
    resolve against the news table are dropped and counted."""
    stats = ParseStats()
    logs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) < 5:
                raise ParseError(f"{path}:{lineno}: expected >= 5 tab-separated fields, got {len(fields)}")
            imp_id, user_id, ts, history_field, shown_field = fields[:5]
            history = history_field.split() if history_field.strip() else []
            if known_ids is not None:
                kept = [h for h in history if h in known_ids]
                stats.dropped_history_ids += len(history) - len(kept)
                history = kept
            shown = []
            for item in shown_field.split():
                nid, sep, label = item.rpartition("-")
                if not sep or label not in ("0", "1"):
                    raise ParseError(f"{path}:{lineno}: bad shown item {item!r}")
                shown.append((nid, int(label)))
            if not shown:
                raise ParseError(f"{path}:{lineno}: impression lists no shown items")
            logs.append(ImpressionLog(imp_id, user_id, ts, history, shown))
    return logs, stats


def serialize_behaviors(logs: list[ImpressionLog], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for log in logs:
            shown = " ".join(f"{nid}-{label}" for nid, label in log.shown)
            fh.write(
                "\t".join([log.impression_id, log.user_id, log.timestamp, " ".join(log.history), shown])
                + "\n"
            )


def truncate_or_pad(tokens: list[int], length: int) -> tuple[np.ndarray, np.ndarray]:
    """First ``length`` tokens, right-padded with PAD; mask marks real tokens."""
    if length < 1:
        raise ValueError("length must be >= 1")
    ids = np.full(length, PAD, dtype=np.int64)
    kept = min(len(tokens), length)
    ids[:kept] = tokens[:kept]
    mask = np.zeros(length, dtype=np.float64)
    mask[:kept] = 1.0
    return ids, mask


def truncate_history(history: list[str], m: int) -> tuple[list[str | None], np.ndarray]:
    """Keep the ``m`` most recent clicks; shorter histories pad with None slots."""
    recent = history[-m:]
    mask = np.zeros(m, dtype=np.float64)
    mask[: len(recent)] = 1.0
    slots: list[str | None] = list(recent) + [None] * (m - len(recent))
    return slots, mask


class EntityTable:
    """entity id -> vector; unknown ids resolve to the zero vector."""

    def __init__(self, dim: int):
        self.dim = dim
        self.vectors: dict[str, np.ndarray] = {}
        self.misses = 0

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self.vectors

    def add(self, entity_id: str, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise ValueError(f"vector for {entity_id!r} has shape {vec.shape}, expected ({self.dim},)")
        self.vectors[entity_id] = vec

    def lookup(self, entity_id: str) -> np.ndarray:
        vec = self.vectors.get(entity_id)
        if vec is None:
            self.misses += 1
            return np.zeros(self.dim)
        return vec


def load_entity_embeddings(path: str) -> EntityTable:
    """Read an id-then-floats text file; all lines must share one dimension."""
    table = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            parts = raw.split()
            if not parts:
                continue
            entity_id, values = parts[0], parts[1:]
            if not values:
                raise ParseError(f"{path}:{lineno}: no vector components")
            vec = np.array([float(v) for v in values])
            if table is None:
                table = EntityTable(len(vec))
            elif len(vec) != table.dim:
                raise ParseError(
                    f"{path}:{lineno}: vector length {len(vec)} != {table.dim} from earlier lines"
                )
            table.add(entity_id, vec)
    if table is None:
        raise ParseError(f"{path}: empty embedding file")
    return table


def save_entity_embeddings(table: EntityTable, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entity_id, vec in table.vectors.items():
            fh.write(entity_id + "\t" + " ".join(repr(float(x)) for x in vec) + "\n")


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SynthSpec:
    """Knobs for the synthetic corpus; parsed from a flat key=value file."""

    topics: int = 5
    users: int = 50
    news: int = 200
    vocab: int = 300
    entities_per_topic: int = 12
    entities_per_news: int = 3
    genres: int = 1
    title_min: int = 4
    title_max: int = 8
    history_min: int = 3
    history_max: int = 8
    noise: float = 0.0
    impressions_per_user: int = 5
    candidates: int = 5
    interests_min: int = 2
    interests_max: int = 4
    triples_per_topic: int = 40
    relations_per_topic: int = 5
    test_frac: float = 0.2

    def validate(self) -> None:
        if not 0.0 <= self.noise < 0.5:
            raise ValueError(f"noise must lie in [0, 0.5), got {self.noise}")
        if self.vocab < self.topics * 2:
            raise ValueError("vocab too small for the topic count")
        for name in (
            "topics users news entities_per_topic entities_per_news genres "
            "title_min title_max history_min history_max impressions_per_user candidates"
        ).split():
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.title_min > self.title_max or self.history_min > self.history_max:
            raise ValueError("min bounds exceed max bounds")


_SYNTH_FIELDS = {f.name: f.type for f in __import__("dataclasses").fields(SynthSpec)}


def synth_spec_from_kv(kv: dict[str, str]) -> SynthSpec:
    spec = SynthSpec()
    for key, value in kv.items():
        if key not in _SYNTH_FIELDS:
            raise ValueError(f"unknown synthetic-spec key: {key!r}")
        current = getattr(spec, key)
        setattr(spec, key, type(current)(value))
    spec.validate()
    return spec


@dataclass
class GroundTruth:
    news_topic: dict[str, int]
    user_interests: dict[str, list[int]]
    noise: float = 0.0


@dataclass
class SynthData:
    records: list[NewsRecord]
    impressions: list[ImpressionLog]
    triples: list[tuple[str, str, str]]
    truth: GroundTruth
    vocab: Vocab = field(default_factory=Vocab)


def _draw_title(rng, spec: SynthSpec, topic: int, length: int) -> list[str]:
    """~80% of tokens from the topic's slice of the vocabulary, rest global."""
    block = spec.vocab // spec.topics
    words = []
    for _ in range(length):
        if rng.random() < 0.8:
            w = topic * block + int(rng.integers(block))
        else:
            w = int(rng.integers(spec.vocab))
        words.append(f"w{w:05d}")
    return words


def generate_synthetic(spec: SynthSpec, seed: int) -> SynthData:
    """Build a corpus whose clicks follow a candidate-dependent rule.

    Every news item carries one topic; titles and entities are drawn from
    that topic's token slice and entity cluster. Each user holds 2-4 interest
    topics and a history sampled from them. A shown candidate is clicked with
    probability 1-noise when its topic is among the user's interests AND
    occurs among the topics of their history, with probability noise
    otherwise. Triples link entities within a topic cluster.
    """
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, 0x5D47A]))
    vocab = Vocab()

    news_topic: dict[str, int] = {}
    records = []
    for n in range(spec.news):
        topic = int(rng.integers(spec.topics))
        news_id = f"N{n:05d}"
        news_topic[news_id] = topic
        genre_ids = []
        for gi in range(spec.genres):
            length = int(rng.integers(spec.title_min, spec.title_max + 1))
            if gi > 0:
                length *= 2  # later genres read like abstracts
            genre_ids.append([vocab.add(w) for w in _draw_title(rng, spec, topic, length)])
        base = topic * spec.entities_per_topic
        picks = rng.choice(spec.entities_per_topic, size=min(spec.entities_per_news, spec.entities_per_topic), replace=False)
        entities = [f"E{base + int(p):05d}" for p in np.sort(picks)]
        records.append(NewsRecord(news_id, f"t{topic}", "synthetic", genre_ids, entities))

    by_topic: dict[int, list[str]] = {t: [] for t in range(spec.topics)}
    for news_id, topic in news_topic.items():
        by_topic[topic].append(news_id)

    triples: list[tuple[str, str, str]] = []
    seen_triples = set()
    for topic in range(spec.topics):
        base = topic * spec.entities_per_topic
        cluster = [f"E{base + i:05d}" for i in range(spec.entities_per_topic)]
        # several relations per topic; a single shared translation would force
        # the whole ring to collapse under a distance-based embedding
        relations = [f"R{topic:03d}_{k}" for k in range(spec.relations_per_topic)]
        count = 0
        for i, head in enumerate(cluster):  # a ring keeps every entity connected
            cand = (head, relations[i % len(relations)], cluster[(i + 1) % len(cluster)])
            if cand not in seen_triples:
                seen_triples.add(cand)
                triples.append(cand)
                count += 1
        while count < spec.triples_per_topic:
            h, t = rng.choice(len(cluster), size=2, replace=False)
            cand = (cluster[int(h)], relations[int(rng.integers(len(relations)))], cluster[int(t)])
            if cand not in seen_triples:
                seen_triples.add(cand)
                triples.append(cand)
                count += 1

    user_interests: dict[str, list[int]] = {}
    impressions = []
    imp_no = 0
    all_news = [r.news_id for r in records]
    for u in range(spec.users):
        user_id = f"U{u:04d}"
        k = int(rng.integers(spec.interests_min, min(spec.interests_max, spec.topics) + 1))
        interests = sorted(int(t) for t in rng.choice(spec.topics, size=k, replace=False))
        user_interests[user_id] = interests
        pool = [nid for t in interests for nid in by_topic[t]]
        h = int(rng.integers(spec.history_min, spec.history_max + 1))
        history = [pool[int(i)] for i in rng.integers(len(pool), size=h)]
        history_topics = {news_topic[nid] for nid in history}
        for _ in range(spec.impressions_per_user):
            imp_no += 1
            shown_ids = rng.choice(len(all_news), size=min(spec.candidates, len(all_news)), replace=False)
            shown = []
            for idx in shown_ids:
                nid = all_news[int(idx)]
                matches = news_topic[nid] in interests and news_topic[nid] in history_topics
                p_click = 1.0 - spec.noise if matches else spec.noise
                shown.append((nid, int(rng.random() < p_click)))
            impressions.append(ImpressionLog(str(imp_no), user_id, "0", list(history), shown))

    return SynthData(records, impressions, triples, GroundTruth(news_topic, user_interests, spec.noise), vocab)


def audit_click_rule(data: SynthData) -> dict[str, float]:
    """Empirical click rates conditioned on the planted rule being satisfied."""
    hits = [0, 0]
    totals = [0, 0]
    history_topics = {}
    for imp in data.impressions:
        ht = history_topics.get(imp.user_id)
        if ht is None:
            ht = {data.truth.news_topic[n] for n in imp.history}
            history_topics[imp.user_id] = ht
        interests = set(data.truth.user_interests[imp.user_id])
        for nid, label in imp.shown:
            topic = data.truth.news_topic[nid]
            cond = int(topic in interests and topic in ht)
            totals[cond] += 1
            hits[cond] += label
    return {
        "p_click_given_match": hits[1] / totals[1] if totals[1] else float("nan"),
        "p_click_given_no_match": hits[0] / totals[0] if totals[0] else float("nan"),
        "n_match": totals[1],
        "n_no_match": totals[0],
    }


def save_triples(triples: list[tuple[str, str, str]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in triples:
            fh.write(f"{h}\t{r}\t{t}\n")


def load_triples(path: str) -> list[tuple[str, str, str]]:
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 tab-separated ids")
            triples.append((parts[0], parts[1], parts[2]))
    return triples
