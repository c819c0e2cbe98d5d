"""Terminology graph construction: expert/layman term pairs keyed by CUI.

Candidate phrases are collected per CUI from concept annotations, one
winner per style side is picked by majority vote over sentence frequency,
and the voted pairs are refined by excluding trivial variants whose edit
distance falls below a threshold. The result is a bijective lookup:
at most one edge per CUI, and each surface form claimed by at most one
edge per style side.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Corpus, Style, tokenize

logger = logging.getLogger(__name__)

GRAPH_HEADER = "cui\texpert_term\tlayman_term"


class GraphValidationError(ValueError):
    """A terminology graph file or edge set violates the graph invariants."""


@dataclass(frozen=True)
class PhraseCandidate:
    """One normalized phrase competing to represent a CUI in one style."""

    cui: str
    surface: str
    style: Style
    frequency: int  # number of sentences of that style containing the phrase


@dataclass(frozen=True)
class TermEdge:
    """A refined expert/layman phrase pair sharing a CUI."""

    cui: str
    expert_term: str
    layman_term: str


@dataclass(frozen=True)
class RefineParams:
    """Edge refinement knobs. Pairs with distance below ``d`` are dropped."""

    d: int = 4

    def __post_init__(self):
        if self.d < 0:
            raise ValueError("levenshtein threshold d must be >= 0")


@dataclass(frozen=True)
class VotedPair:
    """Majority-vote winners for one CUI, with their winning frequencies."""

    cui: str
    expert_term: str
    layman_term: str
    expert_frequency: int
    layman_frequency: int


class TerminologyGraph:
    """Immutable edge set with exact-match lookup from either style side."""

    def __init__(self, edges: list[TermEdge]):
        self.edges: tuple[TermEdge, ...] = tuple(edges)
        self.index_by_expert: dict[str, TermEdge] = {}
        self.index_by_layman: dict[str, TermEdge] = {}
        self.index_by_cui: dict[str, TermEdge] = {}
        for edge in self.edges:
            if edge.cui in self.index_by_cui:
                raise GraphValidationError(f"duplicate cui {edge.cui!r}")
            if edge.expert_term in self.index_by_expert:
                raise GraphValidationError(
                    f"expert term {edge.expert_term!r} claimed by two edges"
                )
            if edge.layman_term in self.index_by_layman:
                raise GraphValidationError(
                    f"layman term {edge.layman_term!r} claimed by two edges"
                )
            self.index_by_cui[edge.cui] = edge
            self.index_by_expert[edge.expert_term] = edge
            self.index_by_layman[edge.layman_term] = edge

    def __len__(self) -> int:
        return len(self.edges)

    def __iter__(self):
        return iter(self.edges)

    def side(self, style: Style) -> dict[str, TermEdge]:
        """Lookup table keyed by the given style's surface forms."""
        return self.index_by_expert if style is Style.EXPERT else self.index_by_layman

    def translate(self, term: str, source_style: Style) -> str | None:
        """Map a term from ``source_style`` to the opposite style, if edged."""
        edge = self.side(source_style).get(term)
        if edge is None:
            return None
        return edge.layman_term if source_style is Style.EXPERT else edge.expert_term


def normalize_phrase(surface: str) -> str:
    """Canonical phrase form used for voting and distance: lowercase tokens
    joined by single spaces."""
    return " ".join(tokenize(surface))


def collect_candidates(
    corpus: Corpus,
) -> dict[str, tuple[list[PhraseCandidate], list[PhraseCandidate]]]:
    """Group annotated phrases by CUI, keeping CUIs seen in both styles.

    Frequency counts sentences (not occurrences): a phrase mentioned twice
    in one sentence contributes one. Candidate lists are sorted by
    descending frequency, then surface, so downstream steps are
    order-independent.
    """
    # (cui, style, surface) -> set of sentence ids
    sightings: dict[tuple[str, Style, str], set[str]] = {}
    for sentence in corpus:
        for span in sentence.concepts:
            surface = normalize_phrase(span.surface)
            if not surface:
                continue
            key = (span.cui, sentence.style, surface)
            sightings.setdefault(key, set()).add(sentence.id)

    per_cui: dict[str, tuple[list[PhraseCandidate], list[PhraseCandidate]]] = {}
    for (cui, style, surface), ids in sightings.items():
        expert_side, layman_side = per_cui.setdefault(cui, ([], []))
        bucket = expert_side if style is Style.EXPERT else layman_side
        bucket.append(PhraseCandidate(cui, surface, style, len(ids)))

    result = {}
    for cui in sorted(per_cui):
        expert_side, layman_side = per_cui[cui]
        if not expert_side or not layman_side:
            continue  # the CUI must appear in both styles
        expert_side.sort(key=lambda c: (-c.frequency, c.surface))
        layman_side.sort(key=lambda c: (-c.frequency, c.surface))
        result[cui] = (expert_side, layman_side)
    return result


def majority_vote(
    expert_candidates: list[PhraseCandidate],
    layman_candidates: list[PhraseCandidate],
) -> tuple[str, str]:
    """Pick the highest-frequency surface per side; ties go to the
    lexicographically smallest surface."""
    if not expert_candidates or not layman_candidates:
        raise ValueError("majority_vote requires candidates on both sides")

    def winner(candidates: list[PhraseCandidate]) -> str:
        return min(candidates, key=lambda c: (-c.frequency, c.surface)).surface

    return winner(expert_candidates), winner(layman_candidates)


def vote_all(
    candidates: dict[str, tuple[list[PhraseCandidate], list[PhraseCandidate]]],
) -> list[VotedPair]:
    """Run the majority vote for every CUI, in sorted CUI order."""
    voted = []
    for cui in sorted(candidates):
        expert_side, layman_side = candidates[cui]
        expert_term, layman_term = majority_vote(expert_side, layman_side)
        expert_freq = max(c.frequency for c in expert_side if c.surface == expert_term)
        layman_freq = max(c.frequency for c in layman_side if c.surface == layman_term)
        voted.append(VotedPair(cui, expert_term, layman_term, expert_freq, layman_freq))
    return voted


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance (insert, delete, substitute) over characters."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,  # delete from a
                    current[j - 1] + 1,  # insert into a
                    previous[j - 1] + (ca != cb),  # substitute
                )
            )
        previous = current
    return previous[-1]


@dataclass
class RefineReport:
    """Stage counts from one graph construction run."""

    cuis_in_both_styles: int = 0
    voted_pairs: int = 0
    excluded_identical: int = 0
    excluded_by_distance: int = 0
    dropped_by_collision: int = 0
    final_edges: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def refine_edges(
    voted: list[VotedPair],
    params: RefineParams = RefineParams(),
    report: RefineReport | None = None,
) -> TerminologyGraph:
    """Keep voted pairs that are genuine cross-style paraphrases.

    A pair survives iff its sides differ and their edit distance is at
    least ``params.d``. When two CUIs claim the same surface on one side,
    the edge whose winning candidate had the higher frequency is kept
    (ties to the smaller CUI); the losing CUI is dropped entirely.
    Collisions are resolved on the expert side first, then the layman side.
    """
    if report is None:
        report = RefineReport()
    report.voted_pairs = len(voted)

    survivors: list[VotedPair] = []
    for pair in sorted(voted, key=lambda p: p.cui):
        if pair.expert_term == pair.layman_term:
            report.excluded_identical += 1
            continue
        if levenshtein(pair.expert_term, pair.layman_term) < params.d:
            report.excluded_by_distance += 1
            continue
        survivors.append(pair)

    def resolve(pairs: list[VotedPair], side: Style) -> list[VotedPair]:
        claims: dict[str, VotedPair] = {}
        for pair in pairs:
            term = pair.expert_term if side is Style.EXPERT else pair.layman_term
            freq = (
                pair.expert_frequency
                if side is Style.EXPERT
                else pair.layman_frequency
            )
            holder = claims.get(term)
            if holder is None:
                claims[term] = pair
                continue
            holder_freq = (
                holder.expert_frequency
                if side is Style.EXPERT
                else holder.layman_frequency
            )
            # higher winning frequency keeps the surface; ties to smaller cui
            if (freq, holder.cui) > (holder_freq, pair.cui):
                claims[term] = pair
            report.dropped_by_collision += 1
        kept = set(claims.values())
        return [p for p in pairs if p in kept]

    survivors = resolve(survivors, Style.EXPERT)
    survivors = resolve(survivors, Style.LAYMAN)

    edges = [
        TermEdge(p.cui, p.expert_term, p.layman_term)
        for p in sorted(survivors, key=lambda p: p.cui)
    ]
    report.final_edges = len(edges)
    return TerminologyGraph(edges)


def build_graph(
    corpus: Corpus, params: RefineParams = RefineParams()
) -> tuple[TerminologyGraph, RefineReport]:
    """Full construction: collect candidates, vote, refine. Returns the
    graph plus per-stage counts."""
    report = RefineReport()
    candidates = collect_candidates(corpus)
    report.cuis_in_both_styles = len(candidates)
    graph = refine_edges(vote_all(candidates), params, report)
    return graph, report


def save_graph(graph: TerminologyGraph, path: str | Path) -> None:
    """Write the graph as a TSV with a fixed header, one edge per row."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        handle.write(GRAPH_HEADER + "\n")
        for edge in graph:
            handle.write(f"{edge.cui}\t{edge.expert_term}\t{edge.layman_term}\n")


def load_graph(
    path: str | Path, params: RefineParams = RefineParams()
) -> TerminologyGraph:
    """Load a graph TSV, re-validating every invariant.

    Duplicate CUIs or surfaces raise. Rows whose terms are identical or
    closer than ``params.d`` edits are rejected with a warning and skipped.
    """
    path = Path(path)
    edges: list[TermEdge] = []
    seen_cuis: set[str] = set()
    with path.open("r", encoding="utf-8") as handle:
        header = handle.readline().rstrip("\n")
        if header != GRAPH_HEADER:
            raise GraphValidationError(
                f"bad header {header!r}, expected {GRAPH_HEADER!r}"
            )
        for line_no, line in enumerate(handle, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise GraphValidationError(
                    f"line {line_no}: expected 3 tab-separated fields, got {len(parts)}"
                )
            cui, expert_term, layman_term = parts
            if cui in seen_cuis:
                raise GraphValidationError(f"line {line_no}: duplicate cui {cui!r}")
            seen_cuis.add(cui)
            if expert_term == layman_term:
                logger.warning(
                    "%s line %d: rejected edge %s, identical terms", path, line_no, cui
                )
                continue
            distance = levenshtein(expert_term, layman_term)
            if distance < params.d:
                logger.warning(
                    "%s line %d: rejected edge %s, distance %d < %d",
                    path,
                    line_no,
                    cui,
                    distance,
                    params.d,
                )
                continue
            edges.append(TermEdge(cui, expert_term, layman_term))
    return TerminologyGraph(edges)
