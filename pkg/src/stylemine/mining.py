"""Margin-criterion mining of pseudo-parallel pairs from embeddings.

A candidate pair's score is its cosine similarity normalized by the mean
cosine of each sentence's k nearest neighbors in the opposite style:

    score(x, y) = cos(x, y) / (sum(cos(x, z) for z in N_k(x)) / (2k)
                               + sum(cos(y, z) for z in N_k(y)) / (2k))

Both directions contribute candidates (each expert sentence proposes its
best layman match and vice versa); duplicates collapse, a greedy sweep in
descending score enforces that no sentence is used twice, and a score
threshold cuts the tail.

Nearest neighbors are exact brute force over blocked dense matrix
products. All similarity math runs in float64 regardless of storage
dtype so results are reproducible to tight tolerances at any scale.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Corpus, Sentence, Style
from .seeding import derive_seed

EMBEDDINGS_MAGIC = b"EMBMAT01"
DEFAULT_BLOCK_ROWS = 512


class EmbeddingFormatError(ValueError):
    """An embeddings file is corrupt or inconsistent with its ids file."""


@dataclass
class EmbeddingMatrix:
    """Dense sentence embeddings for one style set, one row per id."""

    ids: list[str]
    vectors: np.ndarray
    style: Style

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2:
            raise EmbeddingFormatError(
                f"vectors must be 2-D, got shape {self.vectors.shape}"
            )
        if len(self.ids) != self.vectors.shape[0]:
            raise EmbeddingFormatError(
                f"{len(self.ids)} ids but {self.vectors.shape[0]} vector rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise EmbeddingFormatError("sentence ids are not unique")
        norms = np.linalg.norm(self.vectors, axis=1)
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise EmbeddingFormatError(
                f"zero-norm embedding rows at indices {zero[:5].tolist()}"
            )

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def unit_rows(self) -> np.ndarray:
        """Rows L2-normalized in float64; cosine becomes a dot product."""
        vectors = self.vectors.astype(np.float64)
        return vectors / np.linalg.norm(vectors, axis=1, keepdims=True)


@dataclass(frozen=True)
class MarginParams:
    k: int = 4
    threshold: float = 1.06

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.threshold <= 0:
            raise ValueError(f"threshold must be > 0, got {self.threshold}")


@dataclass(frozen=True)
class MinedPair:
    expert_id: str
    layman_id: str
    margin: float


N_HISTOGRAM_BINS = 20


@dataclass
class MiningDiagnostics:
    """Stage counts plus the score distribution the threshold cuts."""

    n_expert: int = 0
    n_layman: int = 0
    candidates_directional: int = 0  # best-match proposals, both directions
    candidates_unique: int = 0  # after collapsing duplicate proposals
    kept_after_dedup: int = 0  # after the one-use-per-sentence sweep
    kept_after_threshold: int = 0
    zero_denominator_pairs: int = 0
    histogram_counts: list[int] = field(default_factory=list)
    histogram_edges: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_expert": self.n_expert,
            "n_layman": self.n_layman,
            "candidates_directional": self.candidates_directional,
            "candidates_unique": self.candidates_unique,
            "kept_after_dedup": self.kept_after_dedup,
            "kept_after_threshold": self.kept_after_threshold,
            "zero_denominator_pairs": self.zero_denominator_pairs,
            "margin_histogram": {
                "counts": self.histogram_counts,
                "bin_edges": self.histogram_edges,
            },
        }


def _gram_features(tokens: list[str]) -> list[str]:
    grams = list(tokens)
    grams += [" ".join(tokens[i : i + 2]) for i in range(len(tokens) - 1)]
    grams += [" ".join(tokens[i : i + 3]) for i in range(len(tokens) - 2)]
    return grams


def toy_embed(
    corpus: Corpus, dim: int = 64, seed: int = 0
) -> dict[Style, EmbeddingMatrix]:
    """Deterministic stand-in embedder for offline pipeline runs.

    Each sentence becomes the L2-normalized signed-bucket sum of its word
    1..3-gram hash vectors: a gram hashes to one of ``dim`` coordinates
    with sign +/-1. Identical sentences embed identically; sentences with
    disjoint grams are orthogonal up to bucket collisions.
    """
    if dim < 8:
        raise ValueError(f"dim must be >= 8, got {dim}")

    gram_cache: dict[str, tuple[int, float]] = {}

    def bucket(gram: str) -> tuple[int, float]:
        slot = gram_cache.get(gram)
        if slot is None:
            h = derive_seed(seed, "gram", gram)
            slot = (h % dim, 1.0 if (h >> 32) & 1 else -1.0)
            gram_cache[gram] = slot
        return slot

    def embed(sentence: Sentence) -> np.ndarray:
        if not sentence.tokens:
            raise ValueError(f"sentence {sentence.id!r} has no tokens")
        vec = np.zeros(dim, dtype=np.float64)
        for gram in _gram_features([t.lower() for t in sentence.tokens]):
            index, sign = bucket(gram)
            vec[index] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise ValueError(
                f"sentence {sentence.id!r} produced a zero embedding "
                "(all hash buckets cancelled)"
            )
        return vec / norm

    result: dict[Style, EmbeddingMatrix] = {}
    for style in Style:
        sentences = corpus.with_style(style)
        if not sentences:
            continue
        matrix = np.stack([embed(s) for s in sentences]).astype(np.float32)
        result[style] = EmbeddingMatrix([s.id for s in sentences], matrix, style)
    return result


def _topk_row(similarities: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries, ties resolved to smaller index,
    ordered by descending value then index."""
    if k >= similarities.shape[0]:
        order = np.lexsort((np.arange(similarities.shape[0]), -similarities))
        return order
    part = np.argpartition(-similarities, k - 1)[:k]
    boundary = similarities[part].min()
    above = np.flatnonzero(similarities > boundary)
    tied = np.flatnonzero(similarities == boundary)
    chosen = np.concatenate([above, tied[: k - above.size]])
    order = np.lexsort((chosen, -similarities[chosen]))
    return chosen[order]


def knn(
    queries: EmbeddingMatrix,
    targets: EmbeddingMatrix,
    k: int,
    block_rows: int = DEFAULT_BLOCK_ROWS,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact top-k targets per query by cosine similarity.

    Returns (indices, cosines), each of shape (n_queries, k), rows sorted
    by descending cosine with ties broken toward the smaller target index.
    """
    if k > len(targets):
        raise ValueError(f"k={k} exceeds target count {len(targets)}")
    if queries.dim != targets.dim:
        raise ValueError(
            f"dimension mismatch: queries {queries.dim}, targets {targets.dim}"
        )
    q = queries.unit_rows()
    t = targets.unit_rows().T
    indices = np.empty((len(queries), k), dtype=np.int64)
    cosines = np.empty((len(queries), k), dtype=np.float64)
    for start in range(0, len(queries), block_rows):
        stop = min(start + block_rows, len(queries))
        sims = q[start:stop] @ t
        for offset in range(stop - start):
            top = _topk_row(sims[offset], k)
            indices[start + offset] = top
            cosines[start + offset] = sims[offset, top]
    return indices, cosines


def margin(
    x: np.ndarray,
    y: np.ndarray,
    neighbor_cosines_x: np.ndarray,
    neighbor_cosines_y: np.ndarray,
) -> float:
    """Margin score of one candidate pair from its two neighborhoods."""
    nx = np.asarray(neighbor_cosines_x, dtype=np.float64)
    ny = np.asarray(neighbor_cosines_y, dtype=np.float64)
    if nx.shape != ny.shape or nx.ndim != 1:
        raise ValueError("neighbor cosine lists must be 1-D and equally sized")
    k = nx.shape[0]
    x64 = np.asarray(x, dtype=np.float64)
    y64 = np.asarray(y, dtype=np.float64)
    cos_xy = float(
        np.dot(x64, y64) / (np.linalg.norm(x64) * np.linalg.norm(y64))
    )
    denominator = float(nx.sum() / (2 * k) + ny.sum() / (2 * k))
    if denominator == 0.0:
        raise ValueError("zero denominator: all neighbor cosines are 0")
    return cos_xy / denominator


def _neighbor_means(
    q: np.ndarray, t: np.ndarray, k: int, block_rows: int, workers: int
) -> np.ndarray:
    """Mean cosine of each query row's k nearest target rows.

    Boundary ties do not affect the mean, so a plain partition suffices.
    """
    n = q.shape[0]
    means = np.empty(n, dtype=np.float64)
    blocks = [(s, min(s + block_rows, n)) for s in range(0, n, block_rows)]

    def run(block: tuple[int, int]) -> None:
        start, stop = block
        sims = q[start:stop] @ t
        if k < sims.shape[1]:
            top = np.partition(sims, sims.shape[1] - k, axis=1)[:, -k:]
        else:
            top = sims
        means[start:stop] = top.mean(axis=1)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, blocks))
    else:
        for block in blocks:
            run(block)
    return means


@dataclass
class _BlockBest:
    """Per-block argmax results, merged in block order for determinism."""

    start: int
    best_l_for_e: np.ndarray  # (rows,) layman index per expert row
    best_m_for_e: np.ndarray  # (rows,) margin per expert row
    col_best_m: np.ndarray  # (n_layman,) best margin within block
    col_best_e: np.ndarray  # (n_layman,) expert index achieving it
    zero_denominator: int = 0


def mine_pairs(
    expert: EmbeddingMatrix,
    layman: EmbeddingMatrix,
    params: MarginParams = MarginParams(),
    block_rows: int = DEFAULT_BLOCK_ROWS,
    workers: int = 1,
) -> tuple[list[MinedPair], MiningDiagnostics]:
    """Mine a deduplicated, thresholded pseudo-parallel corpus.

    Stages: best-scoring candidate per sentence in both directions;
    duplicate proposals collapsed; greedy sweep in descending score
    keeping a pair only when both sentences are unused; pairs under the
    score threshold discarded. Ties anywhere resolve to smaller indices.
    """
    if expert.style is not Style.EXPERT or layman.style is not Style.LAYMAN:
        raise ValueError("matrices must be passed as (expert, layman)")
    if len(expert) == 0 or len(layman) == 0:
        raise ValueError("both style sets must be non-empty")
    if params.k > min(len(expert), len(layman)):
        raise ValueError(
            f"k={params.k} exceeds the smaller style set "
            f"({min(len(expert), len(layman))})"
        )
    if expert.dim != layman.dim:
        raise ValueError(
            f"dimension mismatch: expert {expert.dim}, layman {layman.dim}"
        )

    diagnostics = MiningDiagnostics(n_expert=len(expert), n_layman=len(layman))
    e = expert.unit_rows()
    l = layman.unit_rows()
    lt = l.T

    mean_e = _neighbor_means(e, lt, params.k, block_rows, workers)
    mean_l = _neighbor_means(l, e.T, params.k, block_rows, workers)

    blocks = [
        (s, min(s + block_rows, len(expert)))
        for s in range(0, len(expert), block_rows)
    ]

    def run(block: tuple[int, int]) -> _BlockBest:
        start, stop = block
        # Divide in place: at scale the (rows x n_layman) blocks dominate
        # memory, so only the cosine block and the denominator live at once.
        margins = e[start:stop] @ lt
        denom = np.add.outer(0.5 * mean_e[start:stop], 0.5 * mean_l)
        zero = denom == 0.0
        zero_count = int(zero.sum())
        np.divide(margins, denom, out=margins, where=~zero)
        if zero_count:
            margins[zero] = -np.inf
        best_l = margins.argmax(axis=1)
        best_m = margins[np.arange(stop - start), best_l]
        col_best_e = margins.argmax(axis=0)
        col_best_m = margins[col_best_e, np.arange(len(layman))]
        return _BlockBest(start, best_l, best_m, col_best_m, col_best_e, zero_count)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, blocks))
    else:
        results = [run(block) for block in blocks]

    best_l_for_e = np.empty(len(expert), dtype=np.int64)
    best_m_for_e = np.empty(len(expert), dtype=np.float64)
    col_best_m = np.full(len(layman), -np.inf)
    col_best_e = np.zeros(len(layman), dtype=np.int64)
    for block in results:  # block order, so column ties keep smaller indices
        rows = block.best_l_for_e.shape[0]
        best_l_for_e[block.start : block.start + rows] = block.best_l_for_e
        best_m_for_e[block.start : block.start + rows] = block.best_m_for_e
        better = block.col_best_m > col_best_m
        col_best_m[better] = block.col_best_m[better]
        col_best_e[better] = block.col_best_e[better] + block.start
        diagnostics.zero_denominator_pairs += block.zero_denominator

    candidates: dict[tuple[int, int], float] = {}
    directional = 0
    for ei in range(len(expert)):
        if np.isfinite(best_m_for_e[ei]):
            directional += 1
            candidates.setdefault((ei, int(best_l_for_e[ei])), float(best_m_for_e[ei]))
    for lj in range(len(layman)):
        if np.isfinite(col_best_m[lj]):
            directional += 1
            candidates.setdefault((int(col_best_e[lj]), lj), float(col_best_m[lj]))
    diagnostics.candidates_directional = directional
    diagnostics.candidates_unique = len(candidates)

    ordered = sorted(candidates.items(), key=lambda kv: (-kv[1], kv[0][0], kv[0][1]))
    used_expert: set[int] = set()
    used_layman: set[int] = set()
    swept: list[tuple[int, int, float]] = []
    for (ei, lj), score in ordered:
        if ei in used_expert or lj in used_layman:
            continue
        used_expert.add(ei)
        used_layman.add(lj)
        swept.append((ei, lj, score))
    diagnostics.kept_after_dedup = len(swept)
    if swept:
        counts, edges = np.histogram(
            [score for _, _, score in swept], bins=N_HISTOGRAM_BINS
        )
        diagnostics.histogram_counts = counts.tolist()
        diagnostics.histogram_edges = edges.tolist()

    mined = [
        MinedPair(expert.ids[ei], layman.ids[lj], score)
        for ei, lj, score in swept
        if score >= params.threshold
    ]
    diagnostics.kept_after_threshold = len(mined)
    return mined, diagnostics


def save_embeddings(matrix: EmbeddingMatrix, path: str | Path) -> None:
    """Write vectors in the binary container plus a sibling ids file."""
    path = Path(path)
    rows, dim = matrix.vectors.shape
    with path.open("wb") as handle:
        handle.write(EMBEDDINGS_MAGIC)
        handle.write(struct.pack("<II", rows, dim))
        handle.write(
            np.ascontiguousarray(matrix.vectors, dtype="<f4").tobytes(order="C")
        )
    ids_path = Path(str(path) + ".ids")
    with ids_path.open("w", encoding="utf-8", newline="\n") as handle:
        for sentence_id in matrix.ids:
            handle.write(sentence_id + "\n")


def load_embeddings(path: str | Path, style: Style) -> EmbeddingMatrix:
    """Load a binary embeddings file, validating header and payload size."""
    path = Path(path)
    raw = path.read_bytes()
    header_size = len(EMBEDDINGS_MAGIC) + 8
    if len(raw) < header_size:
        raise EmbeddingFormatError(
            f"{path}: file too short for header ({len(raw)} bytes)"
        )
    if raw[: len(EMBEDDINGS_MAGIC)] != EMBEDDINGS_MAGIC:
        raise EmbeddingFormatError(
            f"{path}: bad magic {raw[:len(EMBEDDINGS_MAGIC)]!r}"
        )
    rows, dim = struct.unpack("<II", raw[len(EMBEDDINGS_MAGIC) : header_size])
    expected = header_size + rows * dim * 4
    if len(raw) != expected:
        raise EmbeddingFormatError(
            f"{path}: expected {expected} bytes for {rows}x{dim} float32, "
            f"got {len(raw)}"
        )
    vectors = np.frombuffer(
        raw, dtype="<f4", count=rows * dim, offset=header_size
    ).reshape(rows, dim)

    ids_path = Path(str(path) + ".ids")
    ids = ids_path.read_text(encoding="utf-8").splitlines()
    if len(ids) != rows:
        raise EmbeddingFormatError(
            f"{ids_path}: {len(ids)} ids but {rows} vector rows"
        )
    return EmbeddingMatrix(ids, vectors.copy(), style)


def save_pairs_tsv(pairs: list[MinedPair], path: str | Path) -> None:
    """Write mined pairs as TSV: expert_id, layman_id, margin (6 decimals)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        handle.write("expert_id\tlayman_id\tmargin\n")
        for pair in pairs:
            handle.write(f"{pair.expert_id}\t{pair.layman_id}\t{pair.margin:.6f}\n")


def load_pairs_tsv(path: str | Path) -> list[MinedPair]:
    path = Path(path)
    pairs = []
    with path.open("r", encoding="utf-8") as handle:
        header = handle.readline().rstrip("\n")
        if header != "expert_id\tlayman_id\tmargin":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in handle:
            line = line.rstrip("\n")
            if not line:
                continue
            expert_id, layman_id, score = line.split("\t")
            pairs.append(MinedPair(expert_id, layman_id, float(score)))
    return pairs
