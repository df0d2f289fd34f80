"""Records, utterances, vocabulary and the synthetic restaurant corpus."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, UNK, SEG_END, TEXT_END = "<pad>", "<unk>", "$", "</s>"
SPECIALS = (PAD, UNK, SEG_END, TEXT_END)
PUNCTUATION = frozenset({".", ",", ";", "!", "?"})
MAX_RECORDS = 8

SLOT_VALUES: dict[str, tuple[str, ...]] = {
    "name": (
        "alimentum", "aromi", "bibimbap house", "blue spice", "clowns", "cocum",
        "cotto", "fitzbillies", "giraffe", "green man", "loch fyne", "strada",
        "the eagle", "the mill", "wildwood", "zizzi",
    ),
    "eattype": ("restaurant", "pub", "coffee shop"),
    "food": ("italian", "french", "chinese", "english", "indian", "japanese", "fast food"),
    "price": ("cheap", "moderate", "high", "affordable"),
    "rating": ("low", "average", "high", "excellent"),
    "area": ("riverside", "city centre"),
    "family": ("yes", "no"),
    "near": (
        "the sorrento", "burger king", "cafe rouge", "raja indian", "all bar one",
        "the bakers", "ranch", "yippee noodle bar",
    ),
}
SLOTS = tuple(SLOT_VALUES)
COPY_SLOTS = frozenset(SLOTS) - {"family"}

# ``V`` marks where the value tokens go.
TEMPLATES: dict[str, tuple[tuple[str, ...], ...]] = {
    "name": (("V",), ("V", "is")),
    "eattype": (("a", "V"), ("is", "a", "V")),
    "food": (("serves", "V", "food"), ("V", "cuisine")),
    "price": (("with", "V", "prices"), ("V", "price", "range")),
    "rating": (("rated", "V"), ("has", "a", "V", "rating")),
    "area": (("in", "the", "V"), ("located", "in", "the", "V")),
    "near": (("near", "V"), ("close", "to", "V")),
}
FAMILY_TEMPLATES = {
    "yes": (("is", "family", "friendly"), ("kid", "friendly")),
    "no": (("is", "not", "family", "friendly"), ("not", "kid", "friendly")),
}
CONNECTORS = ((",",), ("and",), ("it", "is"))


def slot_token(slot: str) -> str:
    return f"<{slot}>"


class Vocab:
    def __init__(self, words: Iterable[str]):
        self.itos: list[str] = list(SPECIALS)
        for w in words:
            if w not in self.itos:
                self.itos.append(w)
        self.stoi = {w: i for i, w in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def id(self, word: str) -> int:
        return self.stoi.get(word, self.stoi[UNK])

    def ids(self, words: Sequence[str]) -> np.ndarray:
        return np.array([self.id(w) for w in words], dtype=int)

    def words(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[int(i)] for i in ids]

    @property
    def pad(self) -> int:
        return 0

    @property
    def unk(self) -> int:
        return 1

    @property
    def seg_end(self) -> int:
        return 2

    @property
    def text_end(self) -> int:
        return 3

    def punctuation_ids(self) -> frozenset[int]:
        return frozenset(self.stoi[p] for p in PUNCTUATION if p in self.stoi)


def corpus_vocab() -> Vocab:
    """Fixed vocabulary covering every token the generator can emit."""
    words = [slot_token(s) for s in SLOTS]
    for values in SLOT_VALUES.values():
        for v in values:
            words.extend(v.split())
    for options in list(TEMPLATES.values()) + list(FAMILY_TEMPLATES.values()) + [CONNECTORS]:
        for template in options:
            words.extend(w for w in template if w != "V")
    words.append(".")
    return Vocab(words)


@dataclass
class RecordSet:
    """Slot/value records; index 0 is reserved for the implicit null record."""

    records: list[tuple[str, tuple[int, ...]]]

    def __post_init__(self):
        self.records = [(slot, tuple(int(i) for i in ids)) for slot, ids in self.records]
        if not 1 <= len(self.records) <= MAX_RECORDS:
            raise ValueError(f"need 1..{MAX_RECORDS} records, got {len(self.records)}")
        slots = [s for s, _ in self.records]
        if len(set(slots)) != len(slots):
            raise ValueError("slots must be unique within a record set")
        if any(len(ids) == 0 for _, ids in self.records):
            raise ValueError("every record needs at least one value token")

    @property
    def n_records(self) -> int:
        return len(self.records)

    def flatten(self, vocab: Vocab) -> tuple[np.ndarray, np.ndarray]:
        """Token ids of ``<slot> value...`` per record, and the 1-based record of each token."""
        ids, owner = [], []
        for k, (slot, values) in enumerate(self.records, start=1):
            ids.append(vocab.id(slot_token(slot)))
            ids.extend(values)
            owner.extend([k] * (1 + len(values)))
        return np.array(ids, dtype=int), np.array(owner, dtype=int)


@dataclass
class Utterance:
    tokens: np.ndarray

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=int)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class Example:
    records: RecordSet
    text: Utterance
    gold_segments: list[tuple[int, int, int]] = field(default_factory=list)
    slot_values: list[tuple[str, str]] = field(default_factory=list)


def _realize(slot: str, value: str, rng: np.random.Generator) -> list[str]:
    if slot == "family":
        options = FAMILY_TEMPLATES[value]
        return list(options[rng.integers(len(options))])
    options = TEMPLATES[slot]
    template = options[rng.integers(len(options))]
    out: list[str] = []
    for w in template:
        out.extend(value.split() if w == "V" else [w])
    return out


def synth_record(rng: np.random.Generator, connector_rate: float = 0.3) -> dict:
    """One corpus line: records, text tokens and gold ``[start, end, record]`` segments.

    ``end`` is exclusive.  Record indices are 1-based; 0 marks connector and
    punctuation segments owned by the null record.
    """
    K = int(rng.integers(3, MAX_RECORDS + 1))
    slots = sorted(rng.choice(len(SLOTS), size=K, replace=False).tolist())
    records = [[SLOTS[s], SLOT_VALUES[SLOTS[s]][rng.integers(len(SLOT_VALUES[SLOTS[s]]))]] for s in slots]
    order = rng.permutation(K)
    text: list[str] = []
    segments: list[list[int]] = []
    for n, k in enumerate(order):
        if n > 0 and rng.random() < connector_rate:
            words = CONNECTORS[rng.integers(len(CONNECTORS))]
            segments.append([len(text), len(text) + len(words), 0])
            text.extend(words)
        phrase = _realize(records[k][0], records[k][1], rng)
        segments.append([len(text), len(text) + len(phrase), int(k) + 1])
        text.extend(phrase)
    segments.append([len(text), len(text) + 1, 0])
    text.append(".")
    return {"records": records, "text": text, "gold_segments": segments}


def synth_data(seed: int, n: int, connector_rate: float = 0.3) -> list[dict]:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= connector_rate <= 1.0:
        raise ValueError("connector_rate must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    return [synth_record(rng, connector_rate) for _ in range(n)]


def write_jsonl(rows: Iterable[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def to_example(row: dict, vocab: Vocab) -> Example:
    """Corpus line -> model example; the text gains a terminal ``</s>`` token."""
    records = RecordSet([(slot, tuple(vocab.ids(value.split()))) for slot, value in row["records"]])
    tokens = list(row["text"]) + [TEXT_END]
    return Example(
        records,
        Utterance(vocab.ids(tokens)),
        [tuple(s) for s in row.get("gold_segments", [])],
        [tuple(r) for r in row["records"]],
    )
