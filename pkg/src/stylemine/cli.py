"""Command-line pipeline driver.

Five subcommands cover the workflow: ``stats`` summarizes a corpus,
``build-graph`` constructs the terminology graph, ``gen-data`` writes
the four pretraining datasets plus batches, ``mine`` extracts a
pseudo-parallel corpus from embeddings, and ``evaluate`` computes the
metric report. One TOML config (see the repository README) describes a
run; command-line flags override individual config values. Every
command is deterministic given its inputs, config, and seed, and
rerunning writes byte-identical outputs.

Exit codes: 0 success, 1 internal error, 2 input or validation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import corpus as corpus_mod
from . import datagen, evaluation, mining, term_graph
from .corpus import CorpusFormatError, Style, load_corpus, tokenize
from .term_graph import GraphValidationError


class ConfigError(ValueError):
    """The config file or flag combination cannot drive the command."""


class PipelineConfig:
    """TOML config sections merged with command-line overrides."""

    def __init__(self, data: dict[str, Any], args: argparse.Namespace):
        self._data = data
        self.seed = args.seed if args.seed is not None else data.get("seed", 0)
        self.threads = (
            args.threads if args.threads is not None else data.get("threads", 1)
        )
        out = args.out if args.out is not None else data.get("out", ".")
        self.out_dir = Path(out)

    def section(self, name: str) -> dict[str, Any]:
        value = self._data.get(name, {})
        if not isinstance(value, dict):
            raise ConfigError(f"config section [{name}] must be a table")
        return value

    def get(self, section: str, key: str, default: Any = None) -> Any:
        return self.section(section).get(key, default)

    def require(self, section: str, key: str) -> Any:
        value = self.get(section, key)
        if value is None:
            raise ConfigError(f"config value {section}.{key} is required")
        return value

    def input_path(self, section: str, key: str) -> Path:
        path = Path(self.require(section, key))
        if not path.exists():
            raise ConfigError(f"{section}.{key}: no such file: {path}")
        return path


def load_config(args: argparse.Namespace) -> PipelineConfig:
    data: dict[str, Any] = {}
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with path.open("rb") as handle:
            data = tomllib.load(handle)
    return PipelineConfig(data, args)


def _write_json(payload: dict, path: Path) -> None:
    path.write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _load_lines(path: Path) -> list[list[str]]:
    """Plain-text sentences, one per line, run through the tokenizer."""
    sentences = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            sentences.append(tokenize(line))
    if not sentences:
        raise ConfigError(f"{path}: no sentences")
    return sentences


# ---------------------------------------------------------------------------
# Subcommands


def cmd_stats(config: PipelineConfig) -> int:
    corpus = load_corpus(config.input_path("corpus", "path"))
    report = corpus_mod.corpus_stats(corpus).to_dict()
    print(json.dumps(report, sort_keys=True, indent=2))
    if config.out_dir != Path("."):
        config.out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(report, config.out_dir / "stats.json")
    return 0


def cmd_build_graph(config: PipelineConfig) -> int:
    corpus = load_corpus(config.input_path("corpus", "path"))
    params = term_graph.RefineParams(
        d=int(config.get("graph", "min_distance", term_graph.RefineParams().d))
    )
    graph, report = term_graph.build_graph(corpus, params)
    if len(graph) == 0:
        print(
            "warning: no edges survived refinement (is the corpus annotated?)",
            file=sys.stderr,
        )
    config.out_dir.mkdir(parents=True, exist_ok=True)
    graph_path = config.out_dir / "graph.tsv"
    term_graph.save_graph(graph, graph_path)
    _write_json(
        {"params": {"min_distance": params.d}, "stages": report.to_dict()},
        config.out_dir / "graph_report.json",
    )
    print(f"wrote {len(graph)} edges to {graph_path}")
    return 0


def cmd_gen_data(config: PipelineConfig) -> int:
    corpus = load_corpus(config.input_path("corpus", "path"))
    noise = datagen.NoiseParams(
        rate=float(config.get("datagen", "rate", datagen.NoiseParams().rate)),
        seed=config.seed,
    )
    batch_size = int(config.get("datagen", "batch_size", 32))
    want_kba = bool(config.get("datagen", "kba", True))

    graph = None
    if want_kba:
        graph = term_graph.load_graph(config.input_path("graph", "path"))

    pretraining = datagen.build_pretraining_set(corpus, graph, noise)
    config.out_dir.mkdir(parents=True, exist_ok=True)
    for tag in datagen.TaskTag:
        datagen.save_pairs(
            pretraining[tag], config.out_dir / f"{tag.value}.jsonl"
        )

    n_batches = 0
    if all(pretraining[tag] for tag in datagen.TaskTag):
        batches_path = config.out_dir / "batches.jsonl"
        with batches_path.open("w", encoding="utf-8", newline="\n") as handle:
            for batch in datagen.make_batches(
                pretraining.datasets, batch_size, seed=config.seed
            ):
                record = {
                    "pairs": [datagen.pair_to_record(p) for p in batch.pairs]
                }
                handle.write(json.dumps(record, sort_keys=True) + "\n")
                n_batches += 1
    else:
        empty = [
            tag.value for tag in datagen.TaskTag if not pretraining[tag]
        ]
        print(
            f"warning: no batches written, empty task datasets: {empty}",
            file=sys.stderr,
        )

    manifest = dict(pretraining.manifest)
    manifest["batch_size"] = batch_size
    manifest["per_task"] = batch_size // 4
    manifest["n_batches"] = n_batches
    _write_json(manifest, config.out_dir / "manifest.json")
    print(f"wrote 4 task files and {n_batches} batches to {config.out_dir}")
    return 0


def cmd_mine(config: PipelineConfig, args: argparse.Namespace) -> int:
    params = mining.MarginParams(
        k=args.k
        if args.k is not None
        else int(config.get("mining", "k", mining.MarginParams().k)),
        threshold=args.threshold
        if args.threshold is not None
        else float(
            config.get("mining", "threshold", mining.MarginParams().threshold)
        ),
    )
    toy_dim = (
        args.toy_embed
        if args.toy_embed is not None
        else int(config.get("mining", "toy_embed_dim", 0))
    )

    config.out_dir.mkdir(parents=True, exist_ok=True)
    if toy_dim:
        corpus = load_corpus(config.input_path("corpus", "path"))
        embedded = mining.toy_embed(corpus, dim=toy_dim, seed=config.seed)
        if Style.EXPERT not in embedded or Style.LAYMAN not in embedded:
            raise ConfigError("toy embedding needs sentences in both styles")
        expert = embedded[Style.EXPERT]
        layman = embedded[Style.LAYMAN]
        # persisted so a rerun can skip the corpus and load these instead
        mining.save_embeddings(expert, config.out_dir / "expert.emb")
        mining.save_embeddings(layman, config.out_dir / "layman.emb")
    else:
        expert = mining.load_embeddings(
            config.input_path("mining", "expert_embeddings"), Style.EXPERT
        )
        layman = mining.load_embeddings(
            config.input_path("mining", "layman_embeddings"), Style.LAYMAN
        )

    pairs, diagnostics = mining.mine_pairs(
        expert, layman, params, workers=config.threads
    )
    pairs_path = config.out_dir / "mined_pairs.tsv"
    mining.save_pairs_tsv(pairs, pairs_path)
    _write_json(
        {
            "params": {"k": params.k, "threshold": params.threshold},
            "stages": diagnostics.to_dict(),
        },
        config.out_dir / "mining_report.json",
    )
    print(f"mined {len(pairs)} pairs into {pairs_path}")
    return 0


def cmd_evaluate(config: PipelineConfig) -> int:
    hypotheses = _load_lines(config.input_path("evaluate", "hypotheses"))
    report: dict[str, Any] = {}

    references_path = config.get("evaluate", "references")
    if references_path:
        references = _load_lines(
            config.input_path("evaluate", "references")
        )
        report["bleu"] = evaluation.bleu4(hypotheses, references)

    train_path = config.get("evaluate", "train_corpus")
    if train_path:
        train_corpus = load_corpus(config.input_path("evaluate", "train_corpus"))
        intended = Style(config.get("evaluate", "intended_style", "layman"))
        classifier = evaluation.train_style_classifier(
            train_corpus,
            evaluation.ClassifierParams(seed=config.seed),
        )
        report["style_accuracy"] = evaluation.style_accuracy(
            classifier, hypotheses, [intended] * len(hypotheses)
        )
        lm = evaluation.train_lm(
            train_corpus, order=int(config.get("evaluate", "lm_order", 5))
        )
        report["ppl"] = evaluation.perplexity(lm, hypotheses)

    ratings_path = config.get("evaluate", "ratings")
    if ratings_path:
        records = evaluation.load_ratings_csv(
            config.input_path("evaluate", "ratings")
        )
        report["success_rates"] = evaluation.success_rates(records).to_dict()

    correlations_path = config.get("evaluate", "correlations")
    if correlations_path:
        columns = _load_metric_columns(
            config.input_path("evaluate", "correlations")
        )
        report["pearson"] = {}
        report["spearman"] = {}
        names = sorted(columns)
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                key = f"{a}~{b}"
                r, n = evaluation.pearson(columns[a], columns[b])
                report["pearson"][key] = {"r": r, "n": n}
                rho, _ = evaluation.spearman(columns[a], columns[b])
                report["spearman"][key] = {"r": rho, "n": n}

    config.out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(report, config.out_dir / "metrics.json")
    print(json.dumps(report, sort_keys=True, indent=2))
    return 0


def _load_metric_columns(path: Path) -> dict[str, list[float]]:
    """CSV with one row per system and one named metric per column."""
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header:
            raise ConfigError(f"{path}: empty metric table")
        columns: dict[str, list[float]] = {name: [] for name in header}
        if len(columns) != len(header):
            raise ConfigError(f"{path}: duplicate metric column names")
        for line_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ConfigError(
                    f"{path}:{line_number}: expected {len(header)} fields, "
                    f"got {len(row)}"
                )
            for name, value in zip(header, row):
                try:
                    columns[name].append(float(value))
                except ValueError:
                    raise ConfigError(
                        f"{path}:{line_number}: non-numeric value {value!r}"
                    ) from None
    return columns


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stylemine",
        description=(
            "Corpus pipeline for expert/layman style transfer: terminology "
            "graph, pretraining data, parallel-pair mining, evaluation."
        ),
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("stats", "summarize a corpus file"),
        ("build-graph", "construct and refine the terminology graph"),
        ("gen-data", "generate pretraining datasets and batches"),
        ("mine", "mine pseudo-parallel pairs from embeddings"),
        ("evaluate", "compute the metric report"),
    ]:
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", help="TOML config file")
        sub.add_argument("--seed", type=int, help="override the global seed")
        sub.add_argument("--threads", type=int, help="worker thread count")
        sub.add_argument("--out", help="output directory")
        if name == "mine":
            sub.add_argument("--k", type=int, help="neighborhood size")
            sub.add_argument(
                "--threshold", type=float, help="minimum margin score"
            )
            sub.add_argument(
                "--toy-embed",
                type=int,
                metavar="DIM",
                help="embed the corpus with the hashing embedder at DIM "
                "dimensions instead of loading embedding files",
            )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
        if args.command == "stats":
            return cmd_stats(config)
        if args.command == "build-graph":
            return cmd_build_graph(config)
        if args.command == "gen-data":
            return cmd_gen_data(config)
        if args.command == "mine":
            return cmd_mine(config, args)
        if args.command == "evaluate":
            return cmd_evaluate(config)
        raise AssertionError(f"unhandled command {args.command!r}")
    except (
        ConfigError,
        CorpusFormatError,
        GraphValidationError,
        mining.EmbeddingFormatError,
        ValueError,
        OSError,
    ) as error:
        print(f"error [{args.command}]: {error}", file=sys.stderr)
        return 2
    except Exception as error:  # pragma: no cover - defensive
        print(f"internal error [{args.command}]: {error}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
