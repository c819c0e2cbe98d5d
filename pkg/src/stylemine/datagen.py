"""Pretraining data synthesis: term replacement and denoising pairs.

Four sequence-to-sequence tasks share one shape, a perturbed input with
the original sentence as reconstruction target:

- ``kba``: every in-style graph term is swapped for its opposite-style
  counterpart; the model must swap them back.
- ``mask``: a fixed fraction of tokens is replaced by ``<MASK>``.
- ``switch``: a fixed fraction of tokens is shuffled in place.
- ``delete``: a fixed fraction of tokens is removed.

Generators are pure functions of (sentence, params): the random stream is
derived from the params seed, the task name, and the sentence id, so
corpus-scale generation is order-independent and reproducible.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator, Mapping, Sequence

from .corpus import Corpus, Sentence, Style
from .seeding import derive_seed
from .term_graph import TerminologyGraph, normalize_phrase

logger = logging.getLogger(__name__)

MASK_TOKEN = "<MASK>"


class TaskTag(str, Enum):
    KBA = "kba"
    MASK = "mask"
    SWITCH = "switch"
    DELETE = "delete"


@dataclass(frozen=True)
class TrainingPair:
    """One pretraining instance: perturbed input, original target."""

    task: TaskTag
    input_tokens: tuple[str, ...]
    target_tokens: tuple[str, ...]
    source_id: str
    style: Style


@dataclass(frozen=True)
class NoiseParams:
    """Noise rate and root seed shared by the three denoising tasks."""

    rate: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.rate < 1.0:
            raise ValueError(f"noise rate must be in (0, 1), got {self.rate}")


def noise_count(rate: float, n: int) -> int:
    """Number of affected positions: round-half-up of rate*n, at least 1."""
    return max(1, math.floor(rate * n + 0.5))


def _task_rng(params: NoiseParams, task: TaskTag, sentence_id: str) -> random.Random:
    return random.Random(derive_seed(params.seed, task.value, sentence_id))


def gen_mask(sentence: Sentence, params: NoiseParams) -> TrainingPair:
    """Replace k tokens, chosen without replacement, with the mask token."""
    tokens = list(sentence.tokens)
    if not tokens:
        raise ValueError(f"sentence {sentence.id!r} is empty")
    rng = _task_rng(params, TaskTag.MASK, sentence.id)
    k = noise_count(params.rate, len(tokens))
    for position in rng.sample(range(len(tokens)), k):
        tokens[position] = MASK_TOKEN
    return TrainingPair(
        TaskTag.MASK, tuple(tokens), sentence.tokens, sentence.id, sentence.style
    )


def gen_switch(sentence: Sentence, params: NoiseParams) -> TrainingPair:
    """Permute k selected tokens among themselves; the rest stay put."""
    tokens = list(sentence.tokens)
    if not tokens:
        raise ValueError(f"sentence {sentence.id!r} is empty")
    rng = _task_rng(params, TaskTag.SWITCH, sentence.id)
    k = noise_count(params.rate, len(tokens))
    positions = sorted(rng.sample(range(len(tokens)), k))
    selected = [tokens[p] for p in positions]
    rng.shuffle(selected)
    for position, token in zip(positions, selected):
        tokens[position] = token
    return TrainingPair(
        TaskTag.SWITCH, tuple(tokens), sentence.tokens, sentence.id, sentence.style
    )


def gen_delete(sentence: Sentence, params: NoiseParams) -> TrainingPair:
    """Drop k tokens; survivors keep their relative order."""
    tokens = list(sentence.tokens)
    if len(tokens) < 2:
        raise ValueError(
            f"sentence {sentence.id!r} has {len(tokens)} token(s); "
            "delete needs at least 2"
        )
    rng = _task_rng(params, TaskTag.DELETE, sentence.id)
    k = noise_count(params.rate, len(tokens))
    dropped = set(rng.sample(range(len(tokens)), k))
    kept = [t for i, t in enumerate(tokens) if i not in dropped]
    return TrainingPair(
        TaskTag.DELETE, tuple(kept), sentence.tokens, sentence.id, sentence.style
    )


def _find_matches(
    sentence: Sentence, graph: TerminologyGraph
) -> list[tuple[int, int, str]]:
    """Locate graph terms of the sentence's own style, as (start, end,
    replacement) spans.

    Concept annotations are tried first: a span whose CUI is edged and
    whose surface equals that edge's own-style term claims its positions.
    Remaining positions are scanned greedily, longest term first, left to
    right, against the whole own-style term table.
    """
    own_side = graph.side(sentence.style)
    lowered = [t.lower() for t in sentence.tokens]
    matches: list[tuple[int, int, str]] = []
    claimed = [False] * len(sentence.tokens)

    def claim(start: int, end: int, replacement: str) -> None:
        matches.append((start, end, replacement))
        for i in range(start, end):
            claimed[i] = True

    for span in sentence.concepts:
        edge = graph.index_by_cui.get(span.cui)
        if edge is None:
            continue
        own_term = (
            edge.expert_term if sentence.style is Style.EXPERT else edge.layman_term
        )
        if normalize_phrase(span.surface) != own_term:
            continue
        if any(claimed[span.start : span.end]):
            continue
        claim(span.start, span.end, graph.translate(own_term, sentence.style))

    # longest-match-first string fallback over unclaimed positions
    by_length = sorted(
        ((term.split(" "), term) for term in own_side),
        key=lambda item: (-len(item[0]), item[1]),
    )
    for term_tokens, term in by_length:
        width = len(term_tokens)
        start = 0
        while start + width <= len(lowered):
            window = lowered[start : start + width]
            if window == term_tokens and not any(claimed[start : start + width]):
                claim(start, start + width, graph.translate(term, sentence.style))
                start += width
            else:
                start += 1

    matches.sort(key=lambda m: m[0])
    return matches


def gen_kba(corpus: Corpus, graph: TerminologyGraph) -> list[TrainingPair]:
    """Emit one replacement pair per sentence containing at least one
    own-style graph term; all matched terms are replaced in that pair."""
    if len(graph) == 0:
        raise ValueError("terminology graph is empty")
    pairs: list[TrainingPair] = []
    for sentence in corpus:
        matches = _find_matches(sentence, graph)
        if not matches:
            continue
        tokens = list(sentence.tokens)
        for start, end, replacement in reversed(matches):
            tokens[start:end] = replacement.split(" ")
        pairs.append(
            TrainingPair(
                TaskTag.KBA,
                tuple(tokens),
                sentence.tokens,
                sentence.id,
                sentence.style,
            )
        )
    return pairs


@dataclass
class PretrainingSet:
    """Per-task datasets plus a count manifest."""

    datasets: dict[TaskTag, list[TrainingPair]]
    manifest: dict

    def __getitem__(self, task: TaskTag) -> list[TrainingPair]:
        return self.datasets[task]


def build_pretraining_set(
    corpus: Corpus,
    graph: TerminologyGraph | None,
    params: NoiseParams = NoiseParams(),
) -> PretrainingSet:
    """Generate all four datasets over the corpus.

    Mask and switch take every sentence; delete skips single-token
    sentences; the replacement task covers sentences with graph matches
    (zero when no graph is supplied).
    """
    datasets: dict[TaskTag, list[TrainingPair]] = {tag: [] for tag in TaskTag}

    if graph is not None and len(graph) > 0:
        datasets[TaskTag.KBA] = gen_kba(corpus, graph)
    else:
        logger.warning("no terminology graph: replacement-task dataset is empty")

    for sentence in corpus:
        datasets[TaskTag.MASK].append(gen_mask(sentence, params))
        datasets[TaskTag.SWITCH].append(gen_switch(sentence, params))
        if len(sentence.tokens) >= 2:
            datasets[TaskTag.DELETE].append(gen_delete(sentence, params))

    manifest = {
        "rate": params.rate,
        "seed": params.seed,
        "counts": {
            tag.value: {
                "total": len(pairs),
                "expert": sum(1 for p in pairs if p.style is Style.EXPERT),
                "layman": sum(1 for p in pairs if p.style is Style.LAYMAN),
            }
            for tag, pairs in datasets.items()
        },
    }
    return PretrainingSet(datasets, manifest)


@dataclass(frozen=True)
class Batch:
    """An evenly distributed multi-task mini-batch."""

    pairs: tuple[TrainingPair, ...]

    @property
    def size(self) -> int:
        return len(self.pairs)

    def __post_init__(self):
        if self.size % 4 != 0:
            raise ValueError(f"batch size {self.size} not divisible by 4")
        per_task = self.size // 4
        for tag in TaskTag:
            have = sum(1 for p in self.pairs if p.task is tag)
            if have != per_task:
                raise ValueError(
                    f"batch holds {have} {tag.value} pairs, expected {per_task}"
                )


def make_batches(
    datasets: Mapping[TaskTag, Sequence[TrainingPair]],
    batch_size: int,
    seed: int = 0,
) -> Iterator[Batch]:
    """Stream batches with exactly batch_size/4 pairs per task.

    Each task's data is shuffled once with a task-derived seed and then
    cycled, so smaller tasks wrap around while the largest task is
    consumed exactly once. The stream ends after
    ceil(max task size / (batch_size/4)) batches.
    """
    if batch_size % 4 != 0:
        raise ValueError(f"batch_size must be divisible by 4, got {batch_size}")
    per_task = batch_size // 4
    for tag in TaskTag:
        if not datasets.get(tag):
            raise ValueError(f"task {tag.value!r} has no pairs")

    shuffled: dict[TaskTag, list[TrainingPair]] = {}
    cursors: dict[TaskTag, int] = {}
    for tag in TaskTag:
        order = list(datasets[tag])
        random.Random(derive_seed(seed, "batch", tag.value)).shuffle(order)
        shuffled[tag] = order
        cursors[tag] = 0

    def take(tag: TaskTag, count: int) -> list[TrainingPair]:
        pool = shuffled[tag]
        out = []
        cursor = cursors[tag]
        for _ in range(count):
            out.append(pool[cursor % len(pool)])
            cursor += 1
        cursors[tag] = cursor
        return out

    largest = max(len(datasets[tag]) for tag in TaskTag)
    n_batches = math.ceil(largest / per_task)
    for _ in range(n_batches):
        pairs: list[TrainingPair] = []
        for tag in TaskTag:
            pairs.extend(take(tag, per_task))
        yield Batch(tuple(pairs))


def pair_to_record(pair: TrainingPair) -> dict:
    return {
        "task": pair.task.value,
        "style": pair.style.value,
        "source_id": pair.source_id,
        "input": list(pair.input_tokens),
        "target": list(pair.target_tokens),
    }


def record_to_pair(record: dict) -> TrainingPair:
    return TrainingPair(
        task=TaskTag(record["task"]),
        input_tokens=tuple(record["input"]),
        target_tokens=tuple(record["target"]),
        source_id=record["source_id"],
        style=Style(record["style"]),
    )


def save_pairs(pairs: Sequence[TrainingPair], path: str | Path) -> None:
    """Write training pairs as JSONL."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for pair in pairs:
            handle.write(json.dumps(pair_to_record(pair), sort_keys=True))
            handle.write("\n")


def load_pairs(path: str | Path) -> list[TrainingPair]:
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        return [record_to_pair(json.loads(line)) for line in handle if line.strip()]
