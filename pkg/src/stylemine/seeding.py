"""Deterministic seed derivation.

Every random stream in the pipeline is derived from one root seed plus a
stable sequence of string labels, so reruns are byte-identical and
corpus-level generation can be reordered or parallelized without changing
per-item output.
"""

from __future__ import annotations

import hashlib


def derive_seed(root: int, *labels: str | int) -> int:
    """Derive a 64-bit child seed from a root seed and a label path."""
    key = "|".join([str(root), *[str(label) for label in labels]])
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")
