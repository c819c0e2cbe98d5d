"""Data model and JSONL I/O for style-labeled, concept-annotated corpora.

A corpus is a list of sentences, each carrying exactly one style label
(expert or layman), a non-empty token sequence, and optional UMLS concept
annotations (CUI code plus the token span realizing it). Sentences and
corpora are immutable after load and safe to share across workers.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional


class CorpusFormatError(ValueError):
    """A corpus file or record violates the expected schema."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class Style(str, Enum):
    """The two registers a sentence can be written in."""

    EXPERT = "expert"
    LAYMAN = "layman"

    @property
    def other(self) -> "Style":
        return Style.LAYMAN if self is Style.EXPERT else Style.EXPERT


_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase and split into tokens, detaching punctuation.

    Alphanumeric runs stay together; every other non-space character
    becomes its own token. Deterministic, never emits empty tokens, and
    idempotent on text that is re-joined with single spaces.
    """
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class ConceptSpan:
    """A concept annotation: CUI code plus the token span realizing it.

    ``start`` is inclusive, ``end`` exclusive, both token indices.
    ``surface`` is the phrase exactly as it appears in the sentence.
    """

    cui: str
    start: int
    end: int
    surface: str

    def validate(self, tokens: list[str]) -> None:
        if not (0 <= self.start < self.end <= len(tokens)):
            raise CorpusFormatError(
                f"concept span [{self.start}, {self.end}) out of range for "
                f"{len(tokens)} tokens (cui={self.cui})"
            )
        joined = " ".join(tokens[self.start : self.end])
        if self.surface != joined:
            raise CorpusFormatError(
                f"concept surface {self.surface!r} does not match tokens "
                f"{joined!r} (cui={self.cui})"
            )


@dataclass(frozen=True)
class Sentence:
    """One style-labeled sentence with optional concept annotations."""

    id: str
    style: Style
    tokens: tuple[str, ...]
    concepts: tuple[ConceptSpan, ...] = ()

    def validate(self) -> None:
        if not self.tokens:
            raise CorpusFormatError(f"sentence {self.id!r} has no tokens")
        for span in self.concepts:
            span.validate(list(self.tokens))
        spans = sorted(self.concepts, key=lambda s: s.start)
        for left, right in zip(spans, spans[1:]):
            if right.start < left.end:
                raise CorpusFormatError(
                    f"overlapping concept spans in sentence {self.id!r}: "
                    f"[{left.start},{left.end}) and [{right.start},{right.end})"
                )


@dataclass(frozen=True)
class Corpus:
    """An immutable collection of sentences with unique ids."""

    sentences: tuple[Sentence, ...]
    provenance: str = ""
    _by_id: dict[str, Sentence] = field(
        default_factory=dict, repr=False, compare=False
    )

    def __post_init__(self):
        by_id: dict[str, Sentence] = {}
        for sentence in self.sentences:
            if sentence.id in by_id:
                raise CorpusFormatError(f"duplicate sentence id {sentence.id!r}")
            by_id[sentence.id] = sentence
        object.__setattr__(self, "_by_id", by_id)

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def get(self, sentence_id: str) -> Sentence:
        return self._by_id[sentence_id]

    def with_style(self, style: Style) -> list[Sentence]:
        return [s for s in self.sentences if s.style is style]


@dataclass(frozen=True)
class StatsReport:
    """Exact corpus counts plus the layman/expert size ratio."""

    expert_sentences: int
    layman_sentences: int
    style_ratio: Optional[float]  # layman / expert, 2 decimals; None if no expert
    concept_spans: int
    distinct_cuis: int

    def to_dict(self) -> dict:
        return {
            "expert_sentences": self.expert_sentences,
            "layman_sentences": self.layman_sentences,
            "style_ratio": self.style_ratio,
            "concept_spans": self.concept_spans,
            "distinct_cuis": self.distinct_cuis,
        }


def corpus_stats(corpus: Corpus) -> StatsReport:
    """Count sentences per style, annotations, and distinct CUI codes."""
    expert = sum(1 for s in corpus if s.style is Style.EXPERT)
    layman = sum(1 for s in corpus if s.style is Style.LAYMAN)
    spans = sum(len(s.concepts) for s in corpus)
    cuis = {span.cui for s in corpus for span in s.concepts}
    ratio = round(layman / expert, 2) if expert else None
    return StatsReport(expert, layman, ratio, spans, len(cuis))


def _parse_record(record: dict, line: int) -> Sentence:
    for key in ("id", "style"):
        if key not in record:
            raise CorpusFormatError(f"missing required field {key!r}", line)
    style_value = record["style"]
    try:
        style = Style(style_value)
    except ValueError:
        raise CorpusFormatError(
            f"bad style value {style_value!r} (expected 'expert' or 'layman')", line
        ) from None

    if "tokens" in record:
        tokens = record["tokens"]
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise CorpusFormatError("'tokens' must be a list of strings", line)
    elif "text" in record:
        tokens = tokenize(record["text"])
    else:
        raise CorpusFormatError("record has neither 'tokens' nor 'text'", line)

    concepts = []
    for raw in record.get("concepts", []):
        try:
            concepts.append(
                ConceptSpan(
                    cui=raw["cui"],
                    start=int(raw["start"]),
                    end=int(raw["end"]),
                    surface=raw["surface"],
                )
            )
        except (KeyError, TypeError) as exc:
            raise CorpusFormatError(f"malformed concept entry: {exc}", line) from None

    sentence = Sentence(
        id=str(record["id"]),
        style=style,
        tokens=tuple(tokens),
        concepts=tuple(concepts),
    )
    try:
        sentence.validate()
    except CorpusFormatError as exc:
        raise CorpusFormatError(str(exc), line) from None
    return sentence


def load_corpus(path: str | Path, provenance: str = "") -> Corpus:
    """Load a JSONL corpus, reporting malformed records by line number."""
    path = Path(path)
    sentences: list[Sentence] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"invalid JSON: {exc.msg}", line_no) from None
            if not isinstance(record, dict):
                raise CorpusFormatError("record is not a JSON object", line_no)
            sentence = _parse_record(record, line_no)
            if sentence.id in seen:
                raise CorpusFormatError(
                    f"duplicate sentence id {sentence.id!r}", line_no
                )
            seen.add(sentence.id)
            sentences.append(sentence)
    return Corpus(tuple(sentences), provenance=provenance or str(path))


def sentence_to_record(sentence: Sentence) -> dict:
    record: dict = {
        "id": sentence.id,
        "style": sentence.style.value,
        "tokens": list(sentence.tokens),
    }
    if sentence.concepts:
        record["concepts"] = [
            {"cui": c.cui, "start": c.start, "end": c.end, "surface": c.surface}
            for c in sentence.concepts
        ]
    return record


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write the corpus as UTF-8 JSONL, one sentence per line."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for sentence in corpus:
            handle.write(json.dumps(sentence_to_record(sentence), sort_keys=True))
            handle.write("\n")


def build_corpus(records: Iterable[Sentence], provenance: str = "") -> Corpus:
    """Assemble and validate a corpus from sentences."""
    sentences = tuple(records)
    for sentence in sentences:
        sentence.validate()
    return Corpus(sentences, provenance=provenance)
