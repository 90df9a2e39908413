"""Corpus-level BLEU over note-token sequences.

Whole note tokens are the words.  Aggregation follows the original corpus
definition: clipped modified n-gram precisions summed over the corpus, a
brevity penalty of exp(1 - r/h) for short output, and no smoothing, so the
score is zero whenever any n-gram order has zero matches.  A smoothed
per-sentence variant exists for debugging only.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from .errors import LyricMelodyError


class LengthMismatch(LyricMelodyError):
    """Hypothesis and reference lists differ in length."""


class EmptyInput(LyricMelodyError):
    """No sentence pairs to score."""


@dataclass(frozen=True)
class BleuReport:
    """Corpus BLEU with its ingredients.

    ``bleu`` is in [0, 1]; multiply by 100 for the conventional presentation
    scale.  ``matched`` / ``total`` hold the clipped n-gram match counts and
    candidate n-gram counts per order.
    """

    bleu: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    hypothesis_length: int
    reference_length: int
    matched: tuple[int, ...]
    total: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "bleu": self.bleu,
            "bleu_x100": self.bleu * 100.0,
            "precisions": list(self.precisions),
            "brevity_penalty": self.brevity_penalty,
            "hypothesis_length": self.hypothesis_length,
            "reference_length": self.reference_length,
            "matched": list(self.matched),
            "total": list(self.total),
        }


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _combine(matched: list[int], total: list[int],
             hyp_len: int, ref_len: int) -> BleuReport:
    precisions = tuple(m / t if t > 0 else 0.0 for m, t in zip(matched, total))
    if hyp_len == 0:
        # Limit of exp(1 - r/h) as h -> 0+.
        bp = 1.0 if ref_len == 0 else 0.0
    elif hyp_len >= ref_len:
        bp = 1.0
    else:
        bp = math.exp(1.0 - ref_len / hyp_len)
    if any(p == 0.0 for p in precisions):
        bleu = 0.0
    else:
        bleu = bp * math.exp(sum(math.log(p) for p in precisions) / len(precisions))
    return BleuReport(bleu=bleu, precisions=precisions, brevity_penalty=bp,
                      hypothesis_length=hyp_len, reference_length=ref_len,
                      matched=tuple(matched), total=tuple(total))


def corpus_bleu(hypotheses: list[list[str]], references: list[list[str]],
                max_n: int = 4) -> BleuReport:
    """Unsmoothed corpus BLEU with one reference per hypothesis."""
    if len(hypotheses) != len(references):
        raise LengthMismatch(
            f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise EmptyInput("nothing to score")
    matched = [0] * max_n
    total = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = list(hyp), list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hyp_counts = _ngram_counts(hyp, n)
            ref_counts = _ngram_counts(ref, n)
            total[n - 1] += sum(hyp_counts.values())
            matched[n - 1] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
    return _combine(matched, total, hyp_len, ref_len)


def sentence_bleu(hypothesis: list[str], reference: list[str],
                  max_n: int = 4, smooth: bool = True) -> BleuReport:
    """Single-pair BLEU; with ``smooth`` the n >= 2 counts get +1.

    For debugging and inspection only; reported scores use
    :func:`corpus_bleu`.
    """
    hypothesis, reference = list(hypothesis), list(reference)
    matched = [0] * max_n
    total = [0] * max_n
    for n in range(1, max_n + 1):
        hyp_counts = _ngram_counts(hypothesis, n)
        ref_counts = _ngram_counts(reference, n)
        total[n - 1] = sum(hyp_counts.values())
        matched[n - 1] = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
        if smooth and n >= 2:
            matched[n - 1] += 1
            total[n - 1] += 1
    return _combine(matched, total, len(hypothesis), len(reference))


def evaluate_model(model, corpus, max_len: int | None = None) -> BleuReport:
    """Greedy-decode every source in the corpus and score against its pair.

    ``model`` is a :class:`lyric2melody.seq2seq.Checkpoint` (parameters,
    config and both vocabularies).  Sentence framing tokens never appear in
    decoder output, so hypotheses are content tokens only.
    """
    # Imported here: seq2seq uses corpus_bleu for dev scoring during training.
    from .seq2seq import greedy_decode

    if not corpus.pairs:
        raise EmptyInput("cannot evaluate on an empty corpus")
    hypotheses = []
    references = []
    for pair in corpus.pairs:
        result = greedy_decode(model.params, model.config, model.src_vocab,
                               model.tgt_vocab, list(pair.syllables), max_len)
        hypotheses.append(result.tokens)
        references.append(list(pair.note_tokens))
    return corpus_bleu(hypotheses, references)


def unigram_baseline(train_corpus) -> list[str]:
    """A no-model baseline: the most frequent target unigrams, most first.

    Emits round(mean target length) tokens; padded with the single most
    frequent token if the vocabulary is smaller than that.  Every source
    gets this same hypothesis.
    """
    counts = Counter(tok for pair in train_corpus.pairs for tok in pair.note_tokens)
    if not counts:
        raise EmptyInput("baseline needs a nonempty training corpus")
    mean_len = sum(len(p.note_tokens) for p in train_corpus.pairs) / len(train_corpus.pairs)
    length = max(1, round(mean_len))
    ordered = sorted(counts, key=lambda tok: (-counts[tok], tok))
    hypothesis = ordered[:length]
    while len(hypothesis) < length:
        hypothesis.append(ordered[0])
    return hypothesis
