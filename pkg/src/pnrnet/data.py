"""Corpus records, JSON Lines I/O, vocabularies and the synthetic nested corpus."""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

PAD, UNK = 0, 1
VOCAB_FORMAT_VERSION = 1
DEFAULT_TYPE_NAMES = ["PER", "ORG", "LOC", "GPE", "FAC", "VEH", "WEA"]


class DataError(ValueError):
    """Malformed corpus, vocabulary or generator configuration."""


@dataclass(frozen=True, order=True)
class Entity:
    start: int
    length: int
    type: str
    confidence: float | None = field(default=None, compare=False)

    @property
    def end(self) -> int:
        """Inclusive right boundary token."""
        return self.start + self.length - 1

    @property
    def key(self) -> tuple[int, int, str]:
        return (self.start, self.length, self.type)


@dataclass
class Sentence:
    tokens: list[str]
    entities: list[Entity] = field(default_factory=list)
    pos: list[str] | None = None

    def __len__(self) -> int:
        return len(self.tokens)

    def validate(self) -> None:
        if not self.tokens:
            raise DataError("sentence has no tokens")
        if self.pos is not None and len(self.pos) != len(self.tokens):
            raise DataError(f"{len(self.pos)} POS tags for {len(self.tokens)} tokens")
        spans: dict[tuple[int, int], str] = {}
        for e in self.entities:
            if e.start < 0 or e.length < 1 or e.start + e.length > len(self.tokens):
                raise DataError(f"entity {e.key} out of range for {len(self.tokens)} tokens")
            if (e.start, e.length) in spans:
                other = spans[(e.start, e.length)]
                what = "duplicate entity" if other == e.type else "conflicting types for span"
                raise DataError(f"{what} {e.key} (also {other})")
            spans[(e.start, e.length)] = e.type

    def to_json(self) -> dict:
        record: dict = {"tokens": self.tokens}
        if self.pos is not None:
            record["pos"] = self.pos
        ents = []
        for e in self.entities:
            item = {"start": e.start, "length": e.length, "type": e.type}
            if e.confidence is not None:
                item["confidence"] = e.confidence
            ents.append(item)
        record["entities"] = ents
        return record

    @classmethod
    def from_json(cls, record: dict) -> Sentence:
        if not isinstance(record, dict) or "tokens" not in record or "entities" not in record:
            raise DataError("record needs 'tokens' and 'entities'")
        tokens = record["tokens"]
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise DataError("'tokens' must be a list of strings")
        pos = record.get("pos")
        if pos is not None and (not isinstance(pos, list) or not all(isinstance(t, str) for t in pos)):
            raise DataError("'pos' must be a list of strings")
        entities = []
        for item in record["entities"]:
            try:
                start, length, type_ = item["start"], item["length"], item["type"]
            except (KeyError, TypeError):
                raise DataError(f"bad entity {item!r}") from None
            if not (isinstance(start, int) and isinstance(length, int) and isinstance(type_, str)):
                raise DataError(f"bad entity {item!r}")
            entities.append(Entity(start, length, type_, item.get("confidence")))
        sentence = cls(list(tokens), entities, list(pos) if pos is not None else None)
        sentence.validate()
        return sentence


def load_corpus(path) -> list[Sentence]:
    corpus = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                corpus.append(Sentence.from_json(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return corpus


def write_corpus(corpus: list[Sentence], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in corpus:
            fh.write(json.dumps(s.to_json(), ensure_ascii=False) + "\n")


@dataclass
class Vocabulary:
    words: dict[str, int]
    chars: dict[str, int]
    pos: dict[str, int]
    types: dict[str, int]

    @property
    def num_types(self) -> int:
        return len(self.types)

    @property
    def null_class(self) -> int:
        return len(self.types)

    def type_names(self) -> list[str]:
        return sorted(self.types, key=self.types.get)

    def to_json(self) -> dict:
        return {"format_version": VOCAB_FORMAT_VERSION, "words": self.words,
                "chars": self.chars, "pos": self.pos, "types": self.types}

    @classmethod
    def from_json(cls, doc: dict) -> Vocabulary:
        version = doc.get("format_version")
        if version != VOCAB_FORMAT_VERSION:
            raise DataError(f"vocabulary format version {version}, expected {VOCAB_FORMAT_VERSION}")
        return cls(dict(doc["words"]), dict(doc["chars"]), dict(doc["pos"]), dict(doc["types"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path) -> Vocabulary:
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _index(items) -> dict[str, int]:
    table = {"<pad>": PAD, "<unk>": UNK}
    for item in items:
        if item not in table:
            table[item] = len(table)
    return table


def build_vocab(corpus: list[Sentence]) -> Vocabulary:
    if not corpus:
        raise DataError("cannot build a vocabulary from an empty corpus")
    words = _index(t for s in corpus for t in s.tokens)
    chars = _index(ch for s in corpus for t in s.tokens for ch in t)
    pos = _index(p for s in corpus for p in (s.pos or []))
    types: dict[str, int] = {}
    for name in sorted({e.type for s in corpus for e in s.entities}):
        types[name] = len(types)
    return Vocabulary(words, chars, pos, types)


@dataclass
class EncodedSentence:
    word_ids: list[int]
    pos_ids: list[int]
    char_ids: list[list[int]]
    tokens: list[str]
    # (left, right, type_id) with inclusive boundaries
    gold: list[tuple[int, int, int]]

    def __len__(self) -> int:
        return len(self.word_ids)


def encode_sentence(s: Sentence, v: Vocabulary) -> EncodedSentence:
    word_ids = [v.words.get(t, UNK) for t in s.tokens]
    if s.pos is None:
        pos_ids = [PAD] * len(s.tokens)
    else:
        pos_ids = [v.pos.get(p, UNK) for p in s.pos]
    char_ids = [[v.chars.get(ch, UNK) for ch in t] for t in s.tokens]
    gold = [(e.start, e.end, v.types[e.type]) for e in s.entities if e.type in v.types]
    return EncodedSentence(word_ids, pos_ids, char_ids, list(s.tokens), gold)


# --- synthetic corpus ------------------------------------------------------

@dataclass
class SynthConfig:
    sentences: int = 2000
    vocab_size: int = 200
    types: int = 3
    nesting: float = 0.4
    max_entity_len: int = 8
    max_sentence_len: int = 30
    seed: int = 1

    def validate(self) -> None:
        for name in ("sentences", "vocab_size", "types", "max_entity_len", "max_sentence_len"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be >= 1")
        if not 0.0 <= self.nesting <= 1.0:
            raise DataError("nesting must lie in [0, 1]")
        if self.max_entity_len > self.max_sentence_len:
            raise DataError(
                f"max_entity_len {self.max_entity_len} exceeds max_sentence_len {self.max_sentence_len}")
        if self.vocab_size < 8 * self.types + 1:
            raise DataError(f"vocab_size must be at least {8 * self.types + 1} for {self.types} types")


def type_names(n: int) -> list[str]:
    return [DEFAULT_TYPE_NAMES[i] if i < len(DEFAULT_TYPE_NAMES) else f"T{i}" for i in range(n)]


@dataclass
class Lexicon:
    """Role-specific word lists; a token's role and type fix its labelling."""
    outside: list[str]
    single: list[list[str]]
    first: list[list[str]]
    inner: list[list[str]]
    last: list[list[str]]


def make_lexicon(vocab_size: int, types: int) -> Lexicon:
    # independent of the corpus seed so that train/test files share words
    rng = random.Random(vocab_size * 1000 + types)
    consonants, vowels = "bcdfghjklmnprstvwz", "aeiou"
    seen: set[str] = set()
    words = []
    while len(words) < vocab_size:
        w = "".join(rng.choice(consonants) + rng.choice(vowels) for _ in range(rng.randint(1, 3)))
        if w not in seen:
            seen.add(w)
            words.append(w)
    per_role = max(2, vocab_size // (8 * types))
    cursor = 0

    def take() -> list[str]:
        nonlocal cursor
        chunk = words[cursor:cursor + per_role]
        cursor += per_role
        return chunk

    single = [take() for _ in range(types)]
    first = [take() for _ in range(types)]
    inner = [take() for _ in range(types)]
    last = [take() for _ in range(types)]
    return Lexicon(words[cursor:], single, first, inner, last)


def nesting_ratio(corpus: list[Sentence]) -> float:
    """Fraction of entities strictly contained in another entity of the sentence."""
    total = nested = 0
    for s in corpus:
        for e in s.entities:
            total += 1
            if any(o is not e and o.start <= e.start and e.end <= o.end and o.length > e.length
                   for o in s.entities):
                nested += 1
    return nested / total if total else 0.0


def generate_synthetic(cfg: SynthConfig) -> list[Sentence]:
    """Deterministic nested corpus whose labels follow from token identity.

    An entity of type t and length n is ``first_t inner_t* last_t`` (a single
    ``single_t`` word when n == 1). A nested child of a different type may
    replace part of the interior; top-level entities are separated by at least
    one outside word. Nesting is steered so the realised share of contained
    entities tracks ``cfg.nesting``.
    """
    cfg.validate()
    rng = random.Random(cfg.seed)
    lex = make_lexicon(cfg.vocab_size, cfg.types)
    names = type_names(cfg.types)
    counts = {"total": 0, "nested": 0}

    def fill(tokens: list[str], entities: list[Entity], start: int, length: int, t: int) -> None:
        counts["total"] += 1
        entities.append(Entity(start, length, names[t]))
        if length == 1:
            tokens[start] = rng.choice(lex.single[t])
            return
        tokens[start] = rng.choice(lex.first[t])
        tokens[start + length - 1] = rng.choice(lex.last[t])
        for j in range(start + 1, start + length - 1):
            tokens[j] = rng.choice(lex.inner[t])
        if length < 3 or cfg.types < 2:
            return
        # the first child lands anywhere in the interior; siblings fill the
        # stretches left free beside it while the target still asks for nesting
        free = [(start + 1, start + length - 1)]
        while free and counts["nested"] + 1 <= cfg.nesting * (counts["total"] + 1) + 1e-9:
            lo, hi = free.pop(0)
            counts["nested"] += 1
            child_len = rng.randint(1, hi - lo)
            child_start = lo + rng.randint(0, hi - lo - child_len)
            child_type = rng.choice([u for u in range(cfg.types) if u != t])
            fill(tokens, entities, child_start, child_len, child_type)
            free += [(a, b) for a, b in ((lo, child_start), (child_start + child_len, hi)) if b > a]

    corpus = []
    for _ in range(cfg.sentences):
        lo = min(cfg.max_sentence_len, max(3, cfg.max_entity_len + 2))
        n = rng.randint(lo, cfg.max_sentence_len) if lo < cfg.max_sentence_len else cfg.max_sentence_len
        tokens = [rng.choice(lex.outside) for _ in range(n)]
        entities: list[Entity] = []
        pos = rng.randint(0, 2)
        while pos < n:
            length = rng.randint(1, cfg.max_entity_len)
            if pos + length > n:
                break
            fill(tokens, entities, pos, length, rng.randrange(cfg.types))
            pos += length + rng.randint(1, 3)
        entities.sort(key=lambda e: (e.start, -e.length))
        corpus.append(Sentence(tokens, entities))
    return corpus
