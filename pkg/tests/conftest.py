"""Shared sentence and corpus builders."""

from stylemine.corpus import ConceptSpan, Corpus, Sentence, Style, build_corpus


def sent(sid, style, text, spans=()):
    """Build a Sentence from space-separated text.

    ``spans`` is a sequence of (cui, start, end) triples; the surface is
    taken verbatim from the tokens so the span always validates.
    """
    tokens = tuple(text.split()) if isinstance(text, str) else tuple(text)
    concepts = tuple(
        ConceptSpan(cui=cui, start=start, end=end, surface=" ".join(tokens[start:end]))
        for cui, start, end in spans
    )
    return Sentence(id=sid, style=style, tokens=tokens, concepts=concepts)


def corpus_of(*sentences, provenance="test"):
    return build_corpus(sentences, provenance=provenance)
