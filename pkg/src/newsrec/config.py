"""Model/run configuration and the flat key=value config-file format.

Config files are one ``key=value`` per line with ``#`` comments. Unknown
keys are rejected so typos fail loudly. The same reader backs the synthetic
dataset spec files.

Paper-scale reference settings (300-d word vectors, 26 transformer heads,
10 Fastformer heads) do not satisfy the head-divisibility rule this
implementation enforces, so the shipped defaults are desk scale: 64-d text
width with 4 heads per stage. Dataset-layout defaults (30 title tokens,
5 entities per news, 100-d entity vectors, 10 graph neighbors) and the
training defaults (lr 1e-4, 5 epochs, batch 64, dropout 0.2) follow the
reference settings unchanged.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field


class ConfigError(ValueError):
    """Bad key, bad value, or an unsatisfiable constraint in a config."""


ALPHA_MODES = ("softmax", "literal")
EQ_MODES = ("corrected", "literal")
LOSS_MODES = ("log_bpr", "literal_sigmoid")
ABLATIONS = ("full", "w", "wc", "e", "ec", "n", "nc", "c")


@dataclass
class ModelConfig:
    """All widths, counts, rates and mode flags of the recommender."""

    word_dim: int = 64          # d_w
    entity_dim: int = 100       # d_e
    match_dim: int = 64         # d
    genres: int = 2             # g: title, abstract
    title_len: int = 30         # l
    abstract_len: int = 60
    history_len: int = 50       # m
    entities_per_news: int = 5  # D, clicked-news entity cap
    cand_entities: int = 5      # D^c cap
    news_heads: int = 4         # lambda1
    word_heads: int = 4         # lambda2
    text_heads: int = 4         # heads inside the per-genre text transformer
    use_positions: bool = True
    alpha_mode: str = "softmax"
    eq_mode: str = "corrected"
    dropout: float = 0.2
    n_neighbors: int = 10
    finetune_entities: bool = False

    @property
    def genre_lens(self) -> list[int]:
        """Token budget per genre; genres beyond the second reuse title_len."""
        lens = [self.title_len, self.abstract_len]
        while len(lens) < self.genres:
            lens.append(self.title_len)
        return lens[: self.genres]

    @property
    def seq_len(self) -> int:
        """Stacked history length: all tokens of all genres of all clicked news."""
        return self.history_len * sum(self.genre_lens)

    @property
    def cand_dim(self) -> int:
        return self.word_dim + self.entity_dim

    def validate(self) -> None:
        positive = (
            "word_dim entity_dim match_dim genres title_len abstract_len "
            "history_len entities_per_news cand_entities news_heads word_heads "
            "text_heads n_neighbors"
        ).split()
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for heads, label in (
            (self.news_heads, "lambda1"),
            (self.word_heads, "lambda2"),
            (self.text_heads, "heads_text"),
        ):
            if self.word_dim % heads != 0:
                raise ConfigError(
                    f"{label}={heads} does not divide the stage width d_w={self.word_dim}"
                )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must satisfy 0 <= p < 1, got {self.dropout}")
        if self.alpha_mode not in ALPHA_MODES:
            raise ConfigError(f"alpha_mode must be one of {ALPHA_MODES}, got {self.alpha_mode!r}")
        if self.eq_mode not in EQ_MODES:
            raise ConfigError(f"eq_mode must be one of {EQ_MODES}, got {self.eq_mode!r}")


@dataclass
class TrainConfig:
    negatives: int = 4          # S
    batch: int = 64
    epochs: int = 5
    lr: float = 1e-4
    seed: int = 0
    loss_mode: str = "log_bpr"
    val_frac: float = 0.1
    transe_epochs: int = 100
    transe_lr: float = 0.05
    transe_margin: float = 1.0

    def validate(self) -> None:
        if self.negatives < 1:
            raise ConfigError(f"S must be >= 1, got {self.negatives}")
        for name in ("batch", "epochs", "transe_epochs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        if not 0.0 <= self.val_frac < 1.0:
            raise ConfigError(f"val_frac must lie in [0, 1), got {self.val_frac}")
        if self.transe_margin <= 0:
            raise ConfigError("transe_margin must be positive")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: str = "full"
    news_path: str = ""
    behaviors_path: str = ""
    test_behaviors_path: str = ""
    triples_path: str = ""
    entity_vectors_path: str = ""
    word_vectors_path: str = ""
    out_dir: str = "out"

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")

    def require_paths(self, *names: str) -> None:
        for name in names:
            if not getattr(self, f"{name}_path"):
                raise ConfigError(f"missing required config key: {name}")


# config-file key -> (target dataclass attribute, converter)
def _to_bool(s: str) -> bool:
    if s in ("1", "true", "yes"):
        return True
    if s in ("0", "false", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


_MODEL_KEYS = {
    "d_w": ("word_dim", int),
    "d_e": ("entity_dim", int),
    "d": ("match_dim", int),
    "g": ("genres", int),
    "l": ("title_len", int),
    "l_abs": ("abstract_len", int),
    "m": ("history_len", int),
    "D": ("entities_per_news", int),
    "Dc": ("cand_entities", int),
    "lambda1": ("news_heads", int),
    "lambda2": ("word_heads", int),
    "heads_text": ("text_heads", int),
    "use_positions": ("use_positions", _to_bool),
    "alpha_mode": ("alpha_mode", str),
    "eq_mode": ("eq_mode", str),
    "dropout": ("dropout", float),
    "n_neighbors": ("n_neighbors", int),
    "finetune_entities": ("finetune_entities", _to_bool),
}

_TRAIN_KEYS = {
    "S": ("negatives", int),
    "batch": ("batch", int),
    "epochs": ("epochs", int),
    "lr": ("lr", float),
    "seed": ("seed", int),
    "loss_mode": ("loss_mode", str),
    "val_frac": ("val_frac", float),
    "transe_epochs": ("transe_epochs", int),
    "transe_lr": ("transe_lr", float),
    "transe_margin": ("transe_margin", float),
}

_RUN_KEYS = {
    "ablation": ("ablation", str),
    "news": ("news_path", str),
    "behaviors": ("behaviors_path", str),
    "test_behaviors": ("test_behaviors_path", str),
    "triples": ("triples_path", str),
    "entity_vectors": ("entity_vectors_path", str),
    "word_vectors": ("word_vectors_path", str),
    "out": ("out_dir", str),
}


def read_kv(path: str) -> dict[str, str]:
    """Read a flat key=value file; '#' starts a comment, blank lines skipped."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            key, value = key.strip(), value.strip()
            if key in out:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value
    return out


def config_from_kv(kv: dict[str, str]) -> RunConfig:
    cfg = RunConfig()
    for key, value in kv.items():
        for table, target in (
            (_MODEL_KEYS, cfg.model),
            (_TRAIN_KEYS, cfg.train),
            (_RUN_KEYS, cfg),
        ):
            if key in table:
                attr, conv = table[key]
                try:
                    setattr(target, attr, conv(value))
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key!r}: {exc}") from None
                break
        else:
            raise ConfigError(f"unknown config key: {key!r}")
    cfg.validate()
    return cfg


def load_config(path: str) -> RunConfig:
    return config_from_kv(read_kv(path))


def config_to_kv(cfg: RunConfig) -> dict[str, str]:
    """Inverse of config_from_kv, mostly for writing sweep/ablation run dirs."""
    kv: dict[str, str] = {}
    for table, source in (
        (_MODEL_KEYS, cfg.model),
        (_TRAIN_KEYS, cfg.train),
        (_RUN_KEYS, cfg),
    ):
        for key, (attr, conv) in table.items():
            value = getattr(source, attr)
            if conv is _to_bool:
                value = "1" if value else "0"
            kv[key] = str(value)
    return kv


def clone_config(cfg: RunConfig) -> RunConfig:
    out = dataclasses.replace(cfg)
    out.model = dataclasses.replace(cfg.model)
    out.train = dataclasses.replace(cfg.train)
    return out
