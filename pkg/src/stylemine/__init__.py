"""Corpus engineering toolkit for medical expert/layman style transfer.

Pipeline stages, each in its own module:

- ``corpus``: style-labeled, concept-annotated sentence corpora (JSONL I/O,
  statistics, tokenization).
- ``term_graph``: expert/layman terminology graph construction with majority
  voting and edit-distance edge refinement.
- ``datagen``: pretraining data synthesis (term replacement plus mask /
  switch / delete denoising) and evenly distributed multi-task batching.
- ``mining``: margin-criterion parallel-corpus mining over sentence
  embeddings with exact brute-force nearest neighbors.
- ``evaluation``: corpus BLEU, Kneser-Ney n-gram LM perplexity, a hashed
  linear style classifier, human-rating success rates, and correlation.
- ``cli``: the ``stylemine`` command-line front end.
"""

__version__ = "0.1.0"
