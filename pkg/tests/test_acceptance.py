"""Acceptance checks for the whole toolkit.

Each test covers one numbered criterion and prints a single verdict
line; run ``pytest -s tests/test_acceptance.py`` to see all ten lines.
Every expected value is either computed by an independently written
oracle inside this file or derived by hand in the comments.
"""

import csv
import math
import random
import resource
import time
from collections import Counter

import numpy as np
import pytest

from stylemine.corpus import Sentence, Style, build_corpus
from stylemine.datagen import (
    MASK_TOKEN,
    NoiseParams,
    TaskTag,
    TrainingPair,
    gen_delete,
    gen_kba,
    gen_mask,
    gen_switch,
    make_batches,
    noise_count,
)
from stylemine.evaluation import (
    Direction,
    RatingRecord,
    bleu4,
    load_ratings_csv,
    pearson,
    perplexity,
    spearman,
    success_rates,
    train_lm,
)
from stylemine.mining import (
    EmbeddingMatrix,
    MarginParams,
    margin,
    mine_pairs,
    toy_embed,
)
from stylemine.term_graph import (
    RefineParams,
    TermEdge,
    TerminologyGraph,
    build_graph,
    levenshtein,
)
from tests.conftest import corpus_of, sent


def _verdict(number: int, label: str, failures: list) -> None:
    status = "PASS" if not failures else "FAIL"
    print(f"criterion {number}: {status} - {label}")
    assert not failures, f"criterion {number}: " + "; ".join(map(str, failures))


# ---------------------------------------------------------------------------
# criterion 1: blocked miner vs quadratic reference


def _oracle_mine(expert, layman, k, threshold):
    """Dense O(n^2) reimplementation of the mining pipeline.

    Written against the documented behaviour only: per-sentence best
    candidates in both directions, duplicate collapse, greedy sweep in
    descending margin with ties to smaller indices, threshold last.
    """
    e = expert.unit_rows()
    l = layman.unit_rows()
    sims = e @ l.T
    mean_e = np.sort(sims, axis=1)[:, -k:].mean(axis=1)
    mean_l = np.sort(sims, axis=0)[-k:, :].mean(axis=0)
    denom = 0.5 * mean_e[:, None] + 0.5 * mean_l[None, :]
    margins = sims / denom

    candidates: dict[tuple[int, int], float] = {}
    for i in range(sims.shape[0]):
        j = int(np.argmax(margins[i, :]))
        candidates.setdefault((i, j), float(margins[i, j]))
    for j in range(sims.shape[1]):
        i = int(np.argmax(margins[:, j]))
        candidates.setdefault((i, j), float(margins[i, j]))

    ordered = sorted(candidates.items(), key=lambda kv: (-kv[1], kv[0][0], kv[0][1]))
    used_e: set[int] = set()
    used_l: set[int] = set()
    kept = []
    for (i, j), score in ordered:
        if i in used_e or j in used_l:
            continue
        used_e.add(i)
        used_l.add(j)
        if score >= threshold:
            kept.append((expert.ids[i], layman.ids[j], score))
    return kept


def _random_instance(rng, n_expert, n_layman, dim, n_twins):
    ve = rng.normal(size=(n_expert, dim))
    vl = rng.normal(size=(n_layman, dim))
    for t in range(n_twins):
        vl[t] = ve[t] + rng.normal(scale=0.05, size=dim)
    expert = EmbeddingMatrix([f"e{i}" for i in range(n_expert)], ve, Style.EXPERT)
    layman = EmbeddingMatrix([f"l{j}" for j in range(n_layman)], vl, Style.LAYMAN)
    return expert, layman


def test_criterion_01_miner_matches_quadratic_reference():
    rng = np.random.default_rng(12345)
    failures = []
    total_pairs = 0
    started = time.perf_counter()
    for case in range(20):
        n_expert = int(rng.integers(60, 201))
        n_layman = int(rng.integers(60, 201))
        dim = int(rng.choice([8, 16, 32]))
        k = int(rng.choice([1, 2, 4, 8]))
        threshold = float(rng.choice([1.0, 1.06, 1.12]))
        block_rows = int(rng.choice([1, 7, 16, 64, 512]))
        workers = int(rng.choice([1, 2, 3]))
        expert, layman = _random_instance(rng, n_expert, n_layman, dim, n_twins=5)

        got, diag = mine_pairs(
            expert,
            layman,
            MarginParams(k=k, threshold=threshold),
            block_rows=block_rows,
            workers=workers,
        )
        want = _oracle_mine(expert, layman, k, threshold)
        total_pairs += len(want)

        if diag.zero_denominator_pairs != 0:
            failures.append(f"case {case}: unexpected zero denominators")
        if [(p.expert_id, p.layman_id) for p in got] != [(e, l) for e, l, _ in want]:
            failures.append(f"case {case}: pair ids diverge")
            continue
        worst = max(
            (abs(p.margin - m) for p, (_, _, m) in zip(got, want)), default=0.0
        )
        if worst > 1e-9:
            failures.append(f"case {case}: margin gap {worst:.3e}")
    elapsed = time.perf_counter() - started
    if total_pairs == 0:
        failures.append("no instance produced pairs; fixture too weak")
    if elapsed >= 10.0:
        failures.append(f"took {elapsed:.1f}s, budget 10s")
    _verdict(
        1,
        f"blocked miner matches quadratic reference on 20 instances "
        f"({elapsed:.1f}s)",
        failures,
    )


# ---------------------------------------------------------------------------
# criterion 2: margin closed forms


def test_criterion_02_margin_closed_forms():
    failures = []
    x = np.array([1.0, 0.0])
    y = np.array([0.8, 0.6])
    cos_xy = float(np.dot(x, y) / (np.linalg.norm(x) * np.linalg.norm(y)))

    # both neighborhoods sitting exactly at the pair's own cosine
    all_equal = margin(x, y, np.full(4, cos_xy), np.full(4, cos_xy))
    if abs(all_equal - 1.0) > 1e-12:
        failures.append(f"all-equal case gave {all_equal!r}, want 1.0")

    # cos 0.8 against single neighbors at 0.4 on both sides
    doubled = margin(x, y, np.array([0.4]), np.array([0.4]))
    if abs(doubled - 2.0) > 1e-12:
        failures.append(f"k=1 case gave {doubled!r}, want 2.0")
    _verdict(2, "margin closed-form values", failures)


# ---------------------------------------------------------------------------
# criterion 3: planted twins recovered from noise


def test_criterion_03_planted_pairs_recovered():
    sentences = []
    for i in range(50):
        base = [f"p{i}w{j}" for j in range(20)]
        twin = list(base)
        twin[7] = f"p{i}alt"
        sentences.append(sent(f"e{i}", Style.EXPERT, base))
        sentences.append(sent(f"l{i}", Style.LAYMAN, twin))
    for i in range(450):
        for side, style in (("e", Style.EXPERT), ("l", Style.LAYMAN)):
            tokens = [f"t{j}" for j in range(12)]
            tokens += [f"d{side}{i}j{j}" for j in range(8)]
            sentences.append(sent(f"{side}{50 + i}", style, tokens))
    corpus = corpus_of(*sentences, provenance="planted")

    started = time.perf_counter()
    embeddings = toy_embed(corpus, dim=256, seed=0)
    pairs, _ = mine_pairs(
        embeddings[Style.EXPERT],
        embeddings[Style.LAYMAN],
        MarginParams(k=4, threshold=1.06),
        workers=1,
    )
    elapsed = time.perf_counter() - started

    true_positives = sum(
        1 for p in pairs if p.expert_id[1:] == p.layman_id[1:] and int(p.expert_id[1:]) < 50
    )
    precision = true_positives / len(pairs) if pairs else 0.0
    recall = true_positives / 50

    failures = []
    if precision < 0.9:
        failures.append(f"precision {precision:.3f} < 0.9")
    if recall < 0.9:
        failures.append(f"recall {recall:.3f} < 0.9")
    if elapsed >= 60.0:
        failures.append(f"took {elapsed:.1f}s, budget 60s")
    _verdict(
        3,
        f"planted twins recovered from 500-a-side noise "
        f"(precision {precision:.2f}, recall {recall:.2f}, {elapsed:.1f}s)",
        failures,
    )


# ---------------------------------------------------------------------------
# criterion 4: hand-traced graph refinement plus edit-distance oracle


def _dp_levenshtein(a: str, b: str) -> int:
    # full-matrix formulation, deliberately unlike the two-row version
    rows = len(a) + 1
    cols = len(b) + 1
    table = [[0] * cols for _ in range(rows)]
    for i in range(rows):
        table[i][0] = i
    for j in range(cols):
        table[0][j] = j
    for i in range(1, rows):
        for j in range(1, cols):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            table[i][j] = min(
                table[i - 1][j] + 1,
                table[i][j - 1] + 1,
                table[i - 1][j - 1] + cost,
            )
    return table[-1][-1]


# (cui, style, surface, number of sentences containing it)
_GRAPH_PLAN = [
    ("C01", Style.EXPERT, "dyspnea", 2),
    ("C01", Style.LAYMAN, "shortness of breath", 2),
    ("C02", Style.EXPERT, "pyrexia", 1),
    ("C02", Style.LAYMAN, "high temperature", 1),
    # identical on both sides: excluded as identical
    ("C03", Style.EXPERT, "stomach flu", 1),
    ("C03", Style.LAYMAN, "stomach flu", 1),
    # spelling variants, edit distance 1: excluded by the distance floor
    ("C04", Style.EXPERT, "dyspnoea", 1),
    ("C04", Style.LAYMAN, "dyspnea", 1),
    # C05 and C06 collide on the expert surface; C05 is more frequent
    ("C05", Style.EXPERT, "renal failure", 3),
    ("C05", Style.LAYMAN, "kidneys shutting down", 1),
    ("C06", Style.EXPERT, "renal failure", 2),
    ("C06", Style.LAYMAN, "kidney trouble", 1),
    # C07 and C08 collide at equal frequency; the smaller cui wins
    ("C07", Style.EXPERT, "cardiac arrest", 2),
    ("C07", Style.LAYMAN, "heart stopped suddenly", 1),
    ("C08", Style.EXPERT, "cardiac arrest", 2),
    ("C08", Style.LAYMAN, "heart gave out", 1),
    # frequency tie between two expert surfaces: lexicographic vote
    ("C09", Style.EXPERT, "abc nodes", 2),
    ("C09", Style.EXPERT, "abd nodes", 2),
    ("C09", Style.LAYMAN, "swollen glands", 2),
    # expert-only concept: never a candidate
    ("C10", Style.EXPERT, "pulmonary fibrosis", 2),
    # C11 and C12 collide on the layman surface; C11 is more frequent
    ("C11", Style.EXPERT, "emesis", 1),
    ("C11", Style.LAYMAN, "throwing up", 3),
    ("C12", Style.EXPERT, "hematemesis", 1),
    ("C12", Style.LAYMAN, "throwing up", 2),
]


def test_criterion_04_graph_refinement_and_edit_distance():
    failures = []

    sentences = []
    counter = 0
    for cui, style, term, count in _GRAPH_PLAN:
        width = len(term.split())
        for _ in range(count):
            text = f"{term} was seen in the clinic today"
            sentences.append(sent(f"g{counter}", style, text, [(cui, 0, width)]))
            counter += 1
    graph, report = build_graph(corpus_of(*sentences), RefineParams(d=4))

    expected_report = {
        "cuis_in_both_styles": 11,
        "voted_pairs": 11,
        "excluded_identical": 1,
        "excluded_by_distance": 1,
        "dropped_by_collision": 3,
        "final_edges": 6,
    }
    if report.to_dict() != expected_report:
        failures.append(f"refinement counts {report.to_dict()}")

    expected_edges = {
        "C01": ("dyspnea", "shortness of breath"),
        "C02": ("pyrexia", "high temperature"),
        "C05": ("renal failure", "kidneys shutting down"),
        "C07": ("cardiac arrest", "heart stopped suddenly"),
        "C09": ("abc nodes", "swollen glands"),
        "C11": ("emesis", "throwing up"),
    }
    got_edges = {e.cui: (e.expert_term, e.layman_term) for e in graph}
    if got_edges != expected_edges:
        failures.append(f"edges {got_edges}")

    rng = random.Random(99)
    alphabet = "abcd"
    mismatches = 0
    for _ in range(10_000):
        a = "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 13)))
        b = "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 13)))
        got = levenshtein(a, b)
        if got != _dp_levenshtein(a, b):
            mismatches += 1
        if got == 0 and a != b:
            failures.append(f"distance 0 for distinct strings {a!r}, {b!r}")
    if mismatches:
        failures.append(f"{mismatches} of 10000 pairs disagree with the dp oracle")

    for _ in range(2_000):
        a, b, c = (
            "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 10)))
            for _ in range(3)
        )
        if levenshtein(a, a) != 0:
            failures.append(f"nonzero self distance for {a!r}")
        if levenshtein(a, b) != levenshtein(b, a):
            failures.append(f"asymmetry for {a!r}, {b!r}")
        if levenshtein(a, c) > levenshtein(a, b) + levenshtein(b, c):
            failures.append(f"triangle violation for {a!r}, {b!r}, {c!r}")
    _verdict(4, "hand-traced graph refinement and edit-distance oracle", failures)


# ---------------------------------------------------------------------------
# criterion 5: denoising invariants across seeded runs


def test_criterion_05_noise_invariants():
    failures = []
    for label, gen in (("mask", gen_mask), ("switch", gen_switch), ("delete", gen_delete)):
        runs = 0
        for seed in range(10):
            rng = random.Random(1000 + seed)
            params = NoiseParams(rate=0.15, seed=seed)
            for i in range(100):
                n_tokens = rng.randrange(2, 41)
                tokens = tuple(f"w{j}" for j in range(n_tokens))
                sentence = Sentence(
                    id=f"{label}{seed}x{i}",
                    style=Style.EXPERT,
                    tokens=tokens,
                    concepts=(),
                )
                pair = gen(sentence, params)
                runs += 1
                where = f"{label} seed={seed} i={i}"

                if gen(sentence, params) != pair:
                    failures.append(f"{where}: not deterministic")
                    continue
                if pair.target_tokens != tokens:
                    failures.append(f"{where}: target is not the original")
                    continue

                k = noise_count(0.15, n_tokens)
                if label == "mask":
                    if len(pair.input_tokens) != n_tokens:
                        failures.append(f"{where}: length changed")
                        continue
                    masked = [
                        idx
                        for idx, (a, b) in enumerate(zip(pair.input_tokens, tokens))
                        if a != b
                    ]
                    if len(masked) != k:
                        failures.append(f"{where}: {len(masked)} changed, want {k}")
                    if any(pair.input_tokens[idx] != MASK_TOKEN for idx in masked):
                        failures.append(f"{where}: changed token is not the mask")
                elif label == "switch":
                    if sorted(pair.input_tokens) != sorted(tokens):
                        failures.append(f"{where}: token multiset changed")
                        continue
                    changed = sum(
                        1 for a, b in zip(pair.input_tokens, tokens) if a != b
                    )
                    if changed > k:
                        failures.append(f"{where}: {changed} moved, cap {k}")
                else:
                    if len(pair.input_tokens) != n_tokens - k:
                        failures.append(f"{where}: kept {len(pair.input_tokens)}")
                        continue
                    # tokens are distinct w<j>, so order survives as indices
                    indices = [int(t[1:]) for t in pair.input_tokens]
                    if indices != sorted(indices) or len(set(indices)) != len(indices):
                        failures.append(f"{where}: survivor order broken")
                    if any(j >= n_tokens for j in indices):
                        failures.append(f"{where}: foreign token")
        if runs != 1000:
            failures.append(f"{label}: {runs} runs, want 1000")
        if len(failures) > 20:
            break
    _verdict(5, "denoising invariants hold over 1000 seeded runs per task", failures)


# ---------------------------------------------------------------------------
# criterion 6: terminology replacement round trip


_KBA_EDGES = [
    TermEdge("T1", "dyspnea", "shortness of breath"),
    TermEdge("T2", "pyrexia", "high temperature"),
    TermEdge("T3", "emesis", "throwing up"),
    TermEdge("T4", "renal failure", "kidney trouble"),
    TermEdge("T5", "syncope", "fainting spells"),
    TermEdge("T6", "myocardial infarction", "heart attack"),
]

# none of these words appears inside any term above
_KBA_FILLER_HEAD = ["the", "patient", "had"]
_KBA_FILLER_TAIL = ["were", "noted", "today"]


def _kba_sentences(style: Style, rng: random.Random) -> list[Sentence]:
    sentences = []
    for i in range(30):
        picks = rng.sample(_KBA_EDGES, rng.choice([1, 1, 2]))
        tokens = list(_KBA_FILLER_HEAD)
        spans = []
        for position, edge in enumerate(picks):
            if position:
                tokens.append("and")
            term = edge.expert_term if style is Style.EXPERT else edge.layman_term
            start = len(tokens)
            tokens.extend(term.split())
            spans.append((edge.cui, start, len(tokens)))
        tokens.extend(_KBA_FILLER_TAIL)
        # half the sentences rely on the string-scan fallback
        sentences.append(
            sent(f"{style.value}{i}", style, tokens, spans if i % 2 == 0 else [])
        )
    return sentences


def test_criterion_06_replacement_round_trip():
    failures = []
    graph = TerminologyGraph(list(_KBA_EDGES))
    rng = random.Random(60)

    for style, flipped in (
        (Style.EXPERT, Style.LAYMAN),
        (Style.LAYMAN, Style.EXPERT),
    ):
        originals = _kba_sentences(style, rng)
        forward = {p.source_id: p for p in gen_kba(corpus_of(*originals), graph)}
        if len(forward) != 30:
            failures.append(f"{style.value}: {len(forward)} of 30 sentences paired")
            continue
        flipped_sentences = [
            Sentence(id=sid, style=flipped, tokens=p.input_tokens, concepts=())
            for sid, p in forward.items()
        ]
        back = {p.source_id: p for p in gen_kba(corpus_of(*flipped_sentences), graph)}
        if len(back) != 30:
            failures.append(f"{style.value}: return trip paired {len(back)} of 30")
            continue
        recovered = 0
        for original in originals:
            out = forward[original.id]
            home = back[original.id]
            if out.target_tokens != original.tokens:
                failures.append(f"{original.id}: forward target mutated")
            elif home.target_tokens != out.input_tokens:
                failures.append(f"{original.id}: return target mutated")
            elif home.input_tokens != original.tokens:
                failures.append(f"{original.id}: round trip lost the original")
            else:
                recovered += 1
        if recovered != 30:
            failures.append(f"{style.value}: {recovered} of 30 round trips")
    _verdict(6, "terminology replacement round trip is lossless", failures)


# ---------------------------------------------------------------------------
# criterion 7: per-task batch shares with cycling


def _batch_fixture() -> dict[TaskTag, list[TrainingPair]]:
    def pairs(tag: TaskTag, count: int) -> list[TrainingPair]:
        return [
            TrainingPair(tag, (f"{tag.value}i{i}",), (f"{tag.value}o{i}",),
                         f"{tag.value}{i}", Style.EXPERT)
            for i in range(count)
        ]

    return {
        TaskTag.KBA: pairs(TaskTag.KBA, 7),
        TaskTag.MASK: pairs(TaskTag.MASK, 23),
        TaskTag.SWITCH: pairs(TaskTag.SWITCH, 11),
        TaskTag.DELETE: pairs(TaskTag.DELETE, 3),
    }


def test_criterion_07_batch_shares_and_cycling():
    failures = []
    datasets = _batch_fixture()

    for batch_size in (4, 8, 16):
        per_task = batch_size // 4
        where = f"batch_size={batch_size}"
        batches = list(make_batches(datasets, batch_size, seed=3))
        if list(make_batches(datasets, batch_size, seed=3)) != batches:
            failures.append(f"{where}: not deterministic")
        expected_batches = math.ceil(23 / per_task)
        if len(batches) != expected_batches:
            failures.append(f"{where}: {len(batches)} batches, want {expected_batches}")
            continue
        for batch in batches:
            shares = Counter(p.task for p in batch.pairs)
            if any(shares[tag] != per_task for tag in TaskTag):
                failures.append(f"{where}: uneven batch {dict(shares)}")
                break

        slots = expected_batches * per_task
        for tag, data in datasets.items():
            stream = [p for b in batches for p in b.pairs if p.task is tag]
            size = len(data)
            if len(stream) != slots:
                failures.append(f"{where}/{tag.value}: stream length {len(stream)}")
                continue
            if any(stream[j] != stream[j % size] for j in range(slots)):
                failures.append(f"{where}/{tag.value}: wrap-around is not cyclic")
            head = stream[: min(size, slots)]
            if len({p.source_id for p in head}) != len(head):
                failures.append(f"{where}/{tag.value}: repeat before wrap-around")
            usage = Counter(p.source_id for p in stream)
            if len(usage) != min(size, slots):
                failures.append(f"{where}/{tag.value}: {len(usage)} items used")
            if max(usage.values()) - min(usage.values()) > 1:
                failures.append(f"{where}/{tag.value}: unbalanced usage {usage}")

    with pytest.raises(ValueError):
        next(iter(make_batches(datasets, 6)))
    incomplete = dict(datasets)
    incomplete[TaskTag.DELETE] = []
    with pytest.raises(ValueError):
        next(iter(make_batches(incomplete, 8)))
    _verdict(7, "batches hold equal per-task shares with cycling", failures)


# ---------------------------------------------------------------------------
# criterion 8: metric bundle closed forms


def _bleu_oracle(segment_pairs) -> float:
    matches = [0] * 4
    totals = [0] * 4
    hyp_length = 0
    ref_length = 0
    for hyp, ref in segment_pairs:
        hyp_length += len(hyp)
        ref_length += len(ref)
        for n in range(1, 5):
            hyp_grams = Counter(
                tuple(hyp[i : i + n]) for i in range(len(hyp) - n + 1)
            )
            ref_grams = Counter(
                tuple(ref[i : i + n]) for i in range(len(ref) - n + 1)
            )
            matches[n - 1] += sum(
                min(count, ref_grams[g]) for g, count in hyp_grams.items()
            )
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    if any(m == 0 for m in matches):
        return 0.0
    mean_log = sum(math.log(m / t) for m, t in zip(matches, totals)) / 4
    penalty = 1.0 if hyp_length > ref_length else math.exp(1 - ref_length / hyp_length)
    return penalty * math.exp(mean_log)


def test_criterion_08_metric_bundle():
    failures = []

    # exact endpoints
    identical = [["the", "cat", "sat", "down"], ["on", "a", "mat", "now", "please"]]
    if bleu4(identical, identical) != 1.0:
        failures.append("identical corpus is not exactly 1.0")
    if bleu4([["aa", "bb", "cc", "dd"]], [["ee", "ff", "gg", "hh"]]) != 0.0:
        failures.append("disjoint corpus is not exactly 0.0")

    # precisions 5/6, 3/5, 2/4, 1/3 with equal lengths, derived by hand
    hyp = "the cat sat on the mat".split()
    ref = "the cat sat on a mat".split()
    expected = math.exp(
        (math.log(5 / 6) + math.log(3 / 5) + math.log(2 / 4) + math.log(1 / 3)) / 4
    )
    if abs(bleu4([hyp], [ref]) - expected) > 1e-9:
        failures.append(f"fixed case {bleu4([hyp], [ref])!r} vs {expected!r}")

    rng = random.Random(17)
    vocabulary = ["a", "b", "c", "d"]
    for trial in range(5):
        segment_pairs = []
        for _ in range(8):
            ref_tokens = [rng.choice(vocabulary) for _ in range(rng.randrange(8, 15))]
            hyp_tokens = [
                t if rng.random() > 0.2 else rng.choice(vocabulary)
                for t in ref_tokens
            ]
            drop = rng.randrange(0, 3)
            if drop:
                hyp_tokens = hyp_tokens[:-drop]
            segment_pairs.append((hyp_tokens, ref_tokens))
        got = bleu4([h for h, _ in segment_pairs], [r for _, r in segment_pairs])
        want = _bleu_oracle(segment_pairs)
        if abs(got - want) > 1e-9:
            failures.append(f"random corpus {trial}: {got!r} vs oracle {want!r}")

    # 10 copies of a 3-type sentence with no discounting: the model is
    # uniform over {a, b, c, </s>}, so perplexity is the vocabulary size
    streams = [["a", "b", "c"]] * 10
    lm1 = train_lm(streams, order=1, discount=0.0, map_singletons=False)
    ppl = perplexity(lm1, streams)
    if abs(ppl - 4.0) > 1e-6:
        failures.append(f"uniform perplexity {ppl!r}, want 4.0")

    # conditional distributions must sum to one for seen, unseen and
    # out-of-vocabulary contexts alike
    rng_lm = random.Random(8)
    vocab12 = [f"t{i}" for i in range(12)]
    train_streams = [
        [rng_lm.choice(vocab12) for _ in range(rng_lm.randrange(1, 10))]
        for _ in range(30)
    ]
    lm5 = train_lm(train_streams, order=5, discount=0.75, map_singletons=True)
    contexts = []
    windows = []
    for stream in train_streams[:20]:
        padded = ["<s>"] * 4 + stream
        windows.extend(
            tuple(padded[i - 4 : i]) for i in range(4, len(padded))
        )
    rng_lm.shuffle(windows)
    contexts.extend(windows[:40])
    while len(contexts) < 80:
        contexts.append(
            tuple(rng_lm.choice(vocab12) for _ in range(rng_lm.randrange(0, 5)))
        )
    while len(contexts) < 100:
        broken = [rng_lm.choice(vocab12) for _ in range(3)]
        broken[rng_lm.randrange(3)] = f"zz{rng_lm.randrange(5)}"
        contexts.append(tuple(broken))
    worst_gap = 0.0
    for context in contexts:
        total = sum(lm5.conditional(w, list(context)) for w in lm5.vocabulary)
        worst_gap = max(worst_gap, abs(total - 1.0))
    if worst_gap > 1e-6:
        failures.append(f"conditional sums off by {worst_gap:.2e}")
    if len(contexts) != 100:
        failures.append(f"{len(contexts)} contexts checked, want 100")

    # ten single-annotator items with hand-counted pass flags
    flag_table = [
        ("i0", 1, 1, 1), ("i1", 1, 1, 0), ("i2", 1, 0, 1), ("i3", 1, 0, 0),
        ("i4", 1, 1, 1), ("i5", 0, 1, 1), ("i6", 0, 0, 1), ("i7", 0, 0, 1),
        ("i8", 1, 0, 1), ("i9", 0, 1, 0),
    ]
    records = [
        RatingRecord(
            item_id=item,
            direction=Direction.E2L,
            content=5 if c else 1,
            understanding=5 if u else 1,
            grammar=4 if g else 1,
        )
        for item, c, u, g in flag_table
    ]
    report = success_rates(records)
    wanted = {
        "csr": 0.6, "usr": 0.5, "gsr": 0.7,
        "ucsr": 0.3, "ugsr": 0.3, "osr": 0.2, "n": 10,
    }
    if report.to_dict() != wanted:
        failures.append(f"success rates {report.to_dict()}")

    # annotator scores average before thresholding; mean 4.0 passes
    averaged = success_rates(
        [
            RatingRecord("avg", Direction.E2L, content=3, understanding=5, grammar=1),
            RatingRecord("avg", Direction.E2L, content=5, understanding=5, grammar=2),
        ]
    )
    if (averaged.csr, averaged.usr, averaged.gsr, averaged.n) != (1.0, 1.0, 0.0, 1):
        failures.append(f"averaging case {averaged.to_dict()}")

    # random ratings exercise the dominance checks built into the report
    rng_r = random.Random(11)
    success_rates(
        [
            RatingRecord(
                f"r{i // 2}",
                Direction.L2E if i % 3 else Direction.E2L,
                content=rng_r.randint(1, 5),
                understanding=rng_r.randint(1, 5),
                grammar=rng_r.randint(1, 5),
            )
            for i in range(200)
        ]
    )

    x = [1.0, 2.0, 3.0, 4.0, 5.0]
    r_up, n_up = pearson(x, [2 * v + 1 for v in x])
    r_down, n_down = pearson(x, [-3 * v + 7 for v in x])
    if abs(r_up - 1.0) > 1e-12 or n_up != 5:
        failures.append(f"perfect correlation gave {r_up!r}")
    if abs(r_down + 1.0) > 1e-12 or n_down != 5:
        failures.append(f"perfect anticorrelation gave {r_down!r}")

    _verdict(8, "metric bundle matches closed forms", failures)


# ---------------------------------------------------------------------------
# criterion 9: recorded system scores and a reconstructed ratings file


# one row per published system configuration, identical order everywhere
_SYSTEM_BLEU = [61.2, 30.6, 80.4, 19.8, 37.1, 59.2, 39.2, 40.2]
_SYSTEM_CSR = [0.703, 0.695, 0.852, 0.683, 0.733, 0.870, 0.825, 0.860]

# (understanding, content, grammar, items) cells for the best system's
# 1000 rated items; marginals give the six observed success rates
_RATING_CELLS = [
    (1, 1, 1, 216),
    (1, 1, 0, 104),
    (1, 0, 1, 19),
    (1, 0, 0, 34),
    (0, 1, 1, 384),
    (0, 1, 0, 156),
    (0, 0, 1, 47),
    (0, 0, 0, 40),
]


def test_criterion_09_reference_correlation_and_rates(tmp_path):
    failures = []

    rho, n = spearman(_SYSTEM_BLEU, _SYSTEM_CSR)
    if n != 8:
        failures.append(f"correlation over {n} systems, want 8")
    if abs(rho - 0.64) > 0.02:
        failures.append(f"rank correlation {rho:.4f}, reference 0.64 +- 0.02")

    # both statistics cross-checked against numpy on the same columns;
    # the columns have no ties, so ranks are plain argsort positions
    def ranks(values):
        order = np.argsort(values)
        out = np.empty(len(values))
        out[order] = np.arange(len(values))
        return out

    rho_oracle = float(np.corrcoef(ranks(_SYSTEM_BLEU), ranks(_SYSTEM_CSR))[0, 1])
    if abs(rho - rho_oracle) > 1e-12:
        failures.append(f"rank correlation {rho!r} vs oracle {rho_oracle!r}")
    r_pm, _ = pearson(_SYSTEM_BLEU, _SYSTEM_CSR)
    r_pm_oracle = float(np.corrcoef(_SYSTEM_BLEU, _SYSTEM_CSR)[0, 1])
    if abs(r_pm - r_pm_oracle) > 1e-12:
        failures.append(f"product-moment {r_pm!r} vs oracle {r_pm_oracle!r}")

    path = tmp_path / "ratings.csv"
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["item_id", "direction", "content", "understanding", "grammar"])
        item = 0
        for u, c, g, count in _RATING_CELLS:
            for _ in range(count):
                writer.writerow(
                    [f"r{item:04d}", "E2L", 5 if c else 1, 5 if u else 1, 5 if g else 1]
                )
                item += 1
    records = load_ratings_csv(path)
    if len(records) != 1000:
        failures.append(f"{len(records)} records loaded")
    report = success_rates(records)
    wanted = {
        "csr": 0.860, "usr": 0.373, "gsr": 0.666,
        "ucsr": 0.320, "ugsr": 0.235, "osr": 0.216, "n": 1000,
    }
    if report.to_dict() != wanted:
        failures.append(f"rates {report.to_dict()}")

    _verdict(
        9,
        f"recorded scores give rank correlation {rho:.2f} and the six "
        "reference success rates",
        failures,
    )


# ---------------------------------------------------------------------------
# criterion 10: full-scale mining inside time and memory budgets


def test_criterion_10_scale_smoke():
    rng = random.Random(7)
    vocabulary = [f"v{i}" for i in range(2000)]
    sentences = []
    for side, style in (("e", Style.EXPERT), ("l", Style.LAYMAN)):
        for i in range(100_000):
            tokens = tuple(
                rng.choice(vocabulary) for _ in range(10 + rng.randrange(5))
            )
            sentences.append(
                Sentence(id=f"{side}{i}", style=style, tokens=tokens, concepts=())
            )
    corpus = build_corpus(sentences, provenance="scale-smoke")
    del sentences

    started = time.perf_counter()
    embeddings = toy_embed(corpus, dim=64, seed=0)
    del corpus
    pairs, diagnostics = mine_pairs(
        embeddings[Style.EXPERT],
        embeddings[Style.LAYMAN],
        MarginParams(k=4, threshold=1.06),
        block_rows=128,
        workers=8,
    )
    elapsed = time.perf_counter() - started
    peak_bytes = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024

    failures = []
    if diagnostics.n_expert != 100_000 or diagnostics.n_layman != 100_000:
        failures.append("wrong population sizes")
    if any(pairs[i].margin < pairs[i + 1].margin for i in range(len(pairs) - 1)):
        failures.append("pairs are not sorted by margin")
    if any(p.margin < 1.06 for p in pairs):
        failures.append("pair below threshold")
    if len({p.expert_id for p in pairs}) != len(pairs):
        failures.append("expert sentence reused")
    if len({p.layman_id for p in pairs}) != len(pairs):
        failures.append("layman sentence reused")
    if elapsed >= 900.0:
        failures.append(f"took {elapsed:.0f}s, budget 900s")
    if peak_bytes >= 8 * 2**30:
        failures.append(f"peak rss {peak_bytes / 2**30:.2f} GiB, budget 8 GiB")
    _verdict(
        10,
        f"100k x 100k mining run ({elapsed:.0f}s, peak "
        f"{peak_bytes / 2**30:.2f} GiB, {len(pairs)} pairs)",
        failures,
    )
