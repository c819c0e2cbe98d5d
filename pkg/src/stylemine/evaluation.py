"""Output quality metrics and human-rating aggregation.

Automatic side: corpus BLEU-4, perplexity under an interpolated
Kneser-Ney n-gram model, and accuracy of a hashed bag-of-ngrams style
classifier. Human side: six success rates over 1-5 Likert ratings of
content, understanding, and grammar, where a criterion succeeds at 4 or
above. Correlation helpers relate the two sides at the system level.
"""

from __future__ import annotations

import csv
import math
import random
from collections import Counter, defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Corpus, Style
from .seeding import derive_seed

UNK = "<unk>"
BOS = "<s>"
EOS = "</s>"

SUCCESS_THRESHOLD = 4.0
N_FEATURE_BUCKETS = 1 << 18


# ---------------------------------------------------------------------------
# BLEU


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(
    hypotheses: list[list[str]], references: list[list[str]]
) -> float:
    """Corpus-level BLEU with uniform weights over 1..4-gram precisions.

    Unsmoothed: if any order has zero clipped matches the score is 0.0.
    Brevity penalty is exp(1 - r/c) when the hypothesis side is not
    longer than the reference side, else 1.
    """
    if not hypotheses:
        raise ValueError("hypothesis list is empty")
    if len(hypotheses) != len(references):
        raise ValueError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references"
        )
    if any(not ref for ref in references):
        raise ValueError("empty reference sentence")

    matches = [0] * 4
    totals = [0] * 4
    hyp_tokens = 0
    ref_tokens = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_tokens += len(hyp)
        ref_tokens += len(ref)
        for n in range(1, 5):
            hyp_grams = _ngram_counts(hyp, n)
            if not hyp_grams:
                continue
            ref_grams = _ngram_counts(ref, n)
            totals[n - 1] += sum(hyp_grams.values())
            matches[n - 1] += sum(
                min(count, ref_grams[gram]) for gram, count in hyp_grams.items()
            )

    if any(total == 0 for total in totals) or any(m == 0 for m in matches):
        return 0.0
    log_mean = sum(math.log(m / t) for m, t in zip(matches, totals)) / 4
    brevity = 1.0 if hyp_tokens > ref_tokens else math.exp(1 - ref_tokens / hyp_tokens)
    return brevity * math.exp(log_mean)


def sentence_bleu4(hypothesis: list[str], reference: list[str]) -> float:
    """Single-sentence BLEU diagnostic, add-one smoothed above order 1.

    Short sentences have zero higher-order n-gram counts; smoothing keeps
    the score informative where the corpus-level metric would hit 0.
    """
    if not reference:
        raise ValueError("empty reference sentence")
    if not hypothesis:
        return 0.0

    log_sum = 0.0
    for n in range(1, 5):
        hyp_grams = _ngram_counts(hypothesis, n)
        ref_grams = _ngram_counts(reference, n)
        total = sum(hyp_grams.values())
        matched = sum(
            min(count, ref_grams[gram]) for gram, count in hyp_grams.items()
        )
        if n == 1:
            if matched == 0:
                return 0.0
            log_sum += math.log(matched / total)
        else:
            log_sum += math.log((matched + 1) / (total + 1))
    brevity = (
        1.0
        if len(hypothesis) > len(reference)
        else math.exp(1 - len(reference) / len(hypothesis))
    )
    return brevity * math.exp(log_sum / 4)


# ---------------------------------------------------------------------------
# Kneser-Ney language model


@dataclass
class _Level:
    """Count tables for one n-gram order."""

    counts: dict[tuple[str, ...], float]
    context_total: dict[tuple[str, ...], float]
    context_followers: dict[tuple[str, ...], int]


class NGramLM:
    """Interpolated Kneser-Ney model with a fixed absolute discount.

    The highest order keeps raw counts; lower orders use continuation
    counts (distinct left extensions), except n-grams starting with the
    sentence-start symbol, which cannot extend left and keep raw counts.
    The recursion bottoms out in a uniform distribution over the
    vocabulary, so every context's probabilities sum to exactly 1.
    """

    def __init__(
        self,
        order: int,
        discount: float,
        vocabulary: frozenset[str],
        levels: list[_Level],
    ):
        if order < 1:
            raise ValueError(f"order must be >= 1, got {order}")
        if not 0.0 <= discount < 1.0:
            raise ValueError(f"discount must be in [0, 1), got {discount}")
        self.order = order
        self.discount = discount
        self.vocabulary = vocabulary
        self._levels = levels

    def map_token(self, token: str) -> str:
        return token if token in self.vocabulary else UNK

    def conditional(self, word: str, context: Sequence[str]) -> float:
        """p(word | last order-1 context tokens), unknowns mapped.

        A context shorter than order-1 is left-padded with the start
        symbol, matching how sentences are padded during training.
        """
        word = self.map_token(word)
        if self.order == 1:
            return self._prob(1, (), word)
        mapped = [t if t == BOS else self.map_token(t) for t in context]
        mapped = mapped[-(self.order - 1) :]
        while len(mapped) < self.order - 1:
            mapped.insert(0, BOS)
        return self._prob(self.order, tuple(mapped), word)

    def _prob(self, k: int, context: tuple[str, ...], word: str) -> float:
        if k == 0:
            return 1.0 / len(self.vocabulary)
        level = self._levels[k - 1]
        total = level.context_total.get(context, 0.0)
        if total == 0.0:
            return self._prob(k - 1, context[1:], word)
        count = level.counts.get(context + (word,), 0.0)
        held_out = self.discount * level.context_followers[context] / total
        return max(count - self.discount, 0.0) / total + held_out * self._prob(
            k - 1, context[1:], word
        )


def _token_streams(source: Corpus | Iterable[list[str]]) -> list[list[str]]:
    if isinstance(source, Corpus):
        return [list(s.tokens) for s in source.sentences]
    return [list(tokens) for tokens in source]


def train_lm(
    source: Corpus | Iterable[list[str]],
    order: int = 5,
    discount: float = 0.75,
    map_singletons: bool = True,
) -> NGramLM:
    """Count n-grams over start/end-padded sentences and build the model.

    Types seen exactly once are folded into the unknown token unless
    map_singletons is off; the vocabulary always contains the unknown
    and end symbols and never the start symbol.
    """
    streams = _token_streams(source)
    if not streams or all(not s for s in streams):
        raise ValueError("cannot train on an empty corpus")

    type_counts = Counter(token for stream in streams for token in stream)
    if map_singletons:
        rare = {t for t, c in type_counts.items() if c == 1}
        streams = [[UNK if t in rare else t for t in stream] for stream in streams]
        kept = set(type_counts) - rare
    else:
        kept = set(type_counts)
    vocabulary = frozenset((kept | {UNK, EOS}) - {BOS})

    raw: list[Counter] = [Counter() for _ in range(order)]
    for stream in streams:
        padded = [BOS] * (order - 1) + stream + [EOS]
        for n in range(1, order + 1):
            for i in range(len(padded) - n + 1):
                raw[n - 1][tuple(padded[i : i + n])] += 1

    levels: list[_Level] = []
    for n in range(1, order + 1):
        # Grams ending in the start symbol are contexts, never events;
        # keeping them would inflate the context totals they fall under.
        if n == order:
            counts: dict[tuple[str, ...], float] = {
                gram: float(c)
                for gram, c in raw[n - 1].items()
                if gram[-1] != BOS
            }
        else:
            extensions: dict[tuple[str, ...], set[str]] = defaultdict(set)
            for gram in raw[n]:
                extensions[gram[1:]].add(gram[0])
            counts = {}
            for gram, c in raw[n - 1].items():
                if gram[-1] == BOS:
                    continue
                if gram[0] == BOS:
                    counts[gram] = float(c)
                else:
                    counts[gram] = float(len(extensions[gram]))
        context_total: dict[tuple[str, ...], float] = defaultdict(float)
        context_followers: dict[tuple[str, ...], int] = defaultdict(int)
        for gram, c in counts.items():
            context_total[gram[:-1]] += c
            context_followers[gram[:-1]] += 1
        levels.append(_Level(counts, dict(context_total), dict(context_followers)))

    return NGramLM(order, discount, vocabulary, levels)


def perplexity(lm: NGramLM, source: Corpus | Iterable[list[str]]) -> float:
    """exp of the mean negative log-probability per token, end symbol
    included, unknowns mapped to the unknown token."""
    streams = _token_streams(source)
    if not streams:
        raise ValueError("no sentences to evaluate")
    log_sum = 0.0
    n_events = 0
    for stream in streams:
        padded = (
            [BOS] * (lm.order - 1)
            + [lm.map_token(t) for t in stream]
            + [EOS]
        )
        for i in range(lm.order - 1, len(padded)):
            context = tuple(padded[i - lm.order + 1 : i])
            p = lm._prob(lm.order, context, padded[i])
            if p <= 0.0:
                raise ValueError(
                    f"zero probability for {padded[i]!r} after {context}"
                )
            log_sum += math.log(p)
            n_events += 1
    return math.exp(-log_sum / n_events)


# ---------------------------------------------------------------------------
# Style classifier


@dataclass(frozen=True)
class ClassifierParams:
    epochs: int = 10
    learning_rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError(
                f"learning_rate must be > 0, got {self.learning_rate}"
            )


class StyleClassifier:
    """Linear classifier over hashed word 1..2-gram counts.

    One weight row per style; prediction is the argmax of the two dot
    products, ties going to the expert row. Feature hashing is seeded
    and deterministic, so training and prediction reproduce exactly.
    """

    def __init__(self, weights: np.ndarray):
        if weights.shape != (2, N_FEATURE_BUCKETS):
            raise ValueError(f"bad weight shape {weights.shape}")
        self.weights = weights
        self._bucket_cache: dict[str, int] = {}

    def _bucket(self, gram: str) -> int:
        bucket = self._bucket_cache.get(gram)
        if bucket is None:
            bucket = derive_seed(0, "style-feature", gram) % N_FEATURE_BUCKETS
            self._bucket_cache[gram] = bucket
        return bucket

    def features(self, tokens: Sequence[str]) -> dict[int, float]:
        """Hashed counts of the sentence's word 1..2-grams."""
        buckets: dict[int, float] = defaultdict(float)
        lowered = [t.lower() for t in tokens]
        for gram in lowered:
            buckets[self._bucket(gram)] += 1.0
        for i in range(len(lowered) - 1):
            buckets[self._bucket(lowered[i] + " " + lowered[i + 1])] += 1.0
        return buckets

    def scores(self, tokens: Sequence[str]) -> tuple[float, float]:
        feats = self.features(tokens)
        expert = sum(self.weights[0, b] * v for b, v in feats.items())
        layman = sum(self.weights[1, b] * v for b, v in feats.items())
        return expert, layman

    def classify(self, tokens: Sequence[str]) -> Style:
        expert, layman = self.scores(tokens)
        return Style.LAYMAN if layman > expert else Style.EXPERT


_STYLE_ROW = {Style.EXPERT: 0, Style.LAYMAN: 1}


def train_style_classifier(
    corpus: Corpus, params: ClassifierParams = ClassifierParams()
) -> StyleClassifier:
    """Logistic-loss SGD over hashed features with weight averaging."""
    examples = [(s.tokens, _STYLE_ROW[s.style]) for s in corpus.sentences]
    present = {label for _, label in examples}
    if len(present) < 2:
        raise ValueError("training corpus must contain both styles")

    weights = np.zeros((2, N_FEATURE_BUCKETS), dtype=np.float64)
    # Running correction so the averaged weights come out of sparse
    # updates: avg = w + (lr/T) * sum_t (t-1) * gradient_t.
    correction = np.zeros_like(weights)
    model = StyleClassifier(weights)
    step = 0
    order = list(range(len(examples)))
    for epoch in range(params.epochs):
        rng = random.Random(derive_seed(params.seed, "classifier-epoch", epoch))
        rng.shuffle(order)
        for index in order:
            tokens, label = examples[index]
            feats = model.features(tokens)
            expert, layman = model.scores(tokens)
            shift = max(expert, layman)
            exp_e = math.exp(expert - shift)
            exp_l = math.exp(layman - shift)
            total = exp_e + exp_l
            probs = (exp_e / total, exp_l / total)
            for row in (0, 1):
                residual = probs[row] - (1.0 if row == label else 0.0)
                if residual == 0.0:
                    continue
                for bucket, value in feats.items():
                    gradient = residual * value
                    weights[row, bucket] -= params.learning_rate * gradient
                    correction[row, bucket] += step * gradient
            step += 1

    averaged = weights + (params.learning_rate / max(step, 1)) * correction
    return StyleClassifier(averaged)


def style_accuracy(
    classifier: StyleClassifier,
    sentences: Iterable[Sequence[str]],
    intended: Iterable[Style],
) -> float:
    """Fraction of sentences classified as their intended style."""
    sentences = list(sentences)
    intended = list(intended)
    if len(sentences) != len(intended):
        raise ValueError(
            f"{len(sentences)} sentences vs {len(intended)} intended styles"
        )
    if not sentences:
        raise ValueError("no sentences to classify")
    hits = sum(
        classifier.classify(tokens) is style
        for tokens, style in zip(sentences, intended)
    )
    return hits / len(sentences)


# ---------------------------------------------------------------------------
# Human ratings


class Direction(str, Enum):
    E2L = "E2L"
    L2E = "L2E"


@dataclass(frozen=True)
class RatingRecord:
    item_id: str
    direction: Direction
    content: int
    understanding: int
    grammar: int

    def __post_init__(self):
        for name in ("content", "understanding", "grammar"):
            value = getattr(self, name)
            if not isinstance(value, int) or not 1 <= value <= 5:
                raise ValueError(
                    f"item {self.item_id!r}: {name} rating {value!r} "
                    "is outside 1-5"
                )


@dataclass(frozen=True)
class SuccessReport:
    csr: float
    usr: float
    gsr: float
    ucsr: float
    ugsr: float
    osr: float
    n: int

    def __post_init__(self):
        # Conjunctions cannot beat their conjuncts; a violation means
        # the rates were computed over inconsistent item sets.
        checks = [
            self.osr <= self.ucsr,
            self.osr <= self.ugsr,
            self.ucsr <= self.csr,
            self.ucsr <= self.usr,
            self.ugsr <= self.usr,
            self.ugsr <= self.gsr,
        ]
        if not all(checks):
            raise AssertionError(f"success rates violate dominance: {self}")

    def to_dict(self) -> dict:
        return {
            "csr": self.csr,
            "usr": self.usr,
            "gsr": self.gsr,
            "ucsr": self.ucsr,
            "ugsr": self.ugsr,
            "osr": self.osr,
            "n": self.n,
        }


def success_rates(
    records: list[RatingRecord], threshold: float = SUCCESS_THRESHOLD
) -> SuccessReport:
    """Six success rates over items, a criterion passing at >= threshold.

    Repeated (item_id, direction) rows are annotator duplicates; each
    criterion is averaged per item before thresholding, so one item
    contributes one outcome regardless of annotator count.
    """
    if not records:
        raise ValueError("no rating records")
    grouped: dict[tuple[str, Direction], list[RatingRecord]] = defaultdict(list)
    for record in records:
        grouped[(record.item_id, record.direction)].append(record)

    n = len(grouped)
    hits = Counter()
    for group in grouped.values():
        content = sum(r.content for r in group) / len(group) >= threshold
        understanding = (
            sum(r.understanding for r in group) / len(group) >= threshold
        )
        grammar = sum(r.grammar for r in group) / len(group) >= threshold
        hits["csr"] += content
        hits["usr"] += understanding
        hits["gsr"] += grammar
        hits["ucsr"] += understanding and content
        hits["ugsr"] += understanding and grammar
        hits["osr"] += understanding and content and grammar
    return SuccessReport(
        csr=hits["csr"] / n,
        usr=hits["usr"] / n,
        gsr=hits["gsr"] / n,
        ucsr=hits["ucsr"] / n,
        ugsr=hits["ugsr"] / n,
        osr=hits["osr"] / n,
        n=n,
    )


RATINGS_HEADER = ["item_id", "direction", "content", "understanding", "grammar"]


def load_ratings_csv(path: str | Path) -> list[RatingRecord]:
    path = Path(path)
    records = []
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != RATINGS_HEADER:
            raise ValueError(
                f"{path}: expected header {','.join(RATINGS_HEADER)!r}, "
                f"got {header!r}"
            )
        for line_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ValueError(
                    f"{path}:{line_number}: expected 5 fields, got {len(row)}"
                )
            item_id, direction, content, understanding, grammar = row
            try:
                record = RatingRecord(
                    item_id=item_id,
                    direction=Direction(direction),
                    content=int(content),
                    understanding=int(understanding),
                    grammar=int(grammar),
                )
            except ValueError as error:
                raise ValueError(f"{path}:{line_number}: {error}") from error
            records.append(record)
    if not records:
        raise ValueError(f"{path}: no rating rows")
    return records


# ---------------------------------------------------------------------------
# Correlation


def pearson(x: Sequence[float], y: Sequence[float]) -> tuple[float, int]:
    """Sample Pearson coefficient and the sample size it was computed on."""
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    n = len(x)
    if n < 3:
        raise ValueError(f"need at least 3 points, got {n}")
    ax = np.asarray(x, dtype=np.float64)
    ay = np.asarray(y, dtype=np.float64)
    dx = ax - ax.mean()
    dy = ay - ay.mean()
    sx = float(np.sqrt((dx * dx).sum()))
    sy = float(np.sqrt((dy * dy).sum()))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("zero variance in at least one input")
    r = float((dx * dy).sum()) / (sx * sy)
    return max(-1.0, min(1.0, r)), n


def _average_ranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        tied_rank = (i + j) / 2 + 1
        for t in range(i, j + 1):
            ranks[order[t]] = tied_rank
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> tuple[float, int]:
    """Rank correlation: Pearson over average ranks. Diagnostic
    companion for small system-level comparisons where monotonic
    agreement matters more than linearity."""
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    return pearson(_average_ranks(x), _average_ranks(y))
