"""Parallel corpus construction from parsed note streams.

A melodic sentence pairs an ordered syllable sequence with an ordered
note-token sequence.  Note tokens follow a frozen grammar,

    STEP("#"|"b")? "-" OCTAVE "-" TYPE("."?)

for example ``G-4-eighth`` or ``Bb-3-quarter.``.  Rests never tokenize;
they only delimit sentences.

Three segmentation strategies are provided.  The default splits on melodic
silence: rests end a sentence, leading syllable-less notes are dropped, and
trailing syllable-less notes are kept so tremolo melisma survives.  A
fixed-length strategy groups every k syllable-bearing notes, and a measure
strategy treats each measure as a sentence.
"""

from __future__ import annotations

import random
import re
from collections import Counter
from dataclasses import dataclass, field
from itertools import groupby
from pathlib import Path
from typing import Iterable, NamedTuple

from .errors import LyricMelodyError
from .musicxml import NoteEvent, ScoreDocument

#: Grammar version recorded in corpus metadata.
NOTE_TOKEN_GRAMMAR_VERSION = "note-token-v1"

_NOTE_TOKEN_RE = re.compile(
    r"^([A-G])([#b])?-(\d)-(whole|half|quarter|eighth|16th|32nd|64th)(\.)?$"
)

#: Segmentation strategy names accepted by :func:`build_corpus`.
STRATEGIES = ("silence", "fixed", "measures")

#: Reserved vocabulary tokens, always ids 0..3.
PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
RESERVED_TOKENS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3


class RestNotTokenizable(LyricMelodyError):
    """tokenize_note was called on a rest."""


class BadNoteToken(LyricMelodyError):
    """A note token does not match the frozen grammar."""


class EmptyCorpus(LyricMelodyError):
    """Segmentation produced zero sentence pairs."""


class SplitTooSmall(LyricMelodyError):
    """The corpus cannot be split without an empty part."""


class CorpusFormatError(LyricMelodyError):
    """Corpus files on disk are inconsistent or unreadable."""


def tokenize_note(event: NoteEvent) -> str:
    """Render one non-rest note as a note token (pitch + octave + duration)."""
    if event.is_rest:
        raise RestNotTokenizable("rests have no note token")
    mark = "#" if event.alter == 1 else "b" if event.alter == -1 else ""
    dot = "." if event.dotted else ""
    return f"{event.step}{mark}-{event.octave}-{event.note_type}{dot}"


def parse_note_token(token: str) -> NoteEvent:
    """Inverse of :func:`tokenize_note`; raises :class:`BadNoteToken`."""
    m = _NOTE_TOKEN_RE.match(token)
    if m is None:
        raise BadNoteToken(f"token {token!r} does not match the note grammar")
    step, mark, octave, note_type, dot = m.groups()
    alter = {"#": 1, "b": -1, None: 0}[mark]
    return NoteEvent(step=step, alter=alter, octave=int(octave),
                     note_type=note_type, dotted=dot is not None)


@dataclass(frozen=True)
class MelodicSentence:
    """One training pair: syllables and their melody's note tokens."""

    syllables: tuple[str, ...]
    note_tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.syllables or not self.note_tokens:
            raise ValueError("melodic sentences need at least one syllable and one note")


class Provenance(NamedTuple):
    source: str
    segment: int


@dataclass
class ParallelCorpus:
    pairs: list[MelodicSentence]
    provenance: list[Provenance]

    def __post_init__(self):
        if len(self.pairs) != len(self.provenance):
            raise ValueError("provenance must align with pairs")

    def __len__(self):
        return len(self.pairs)


@dataclass(frozen=True)
class CorpusStats:
    sentence_count: int
    mean_syllables_per_sentence: float
    mean_notes_per_sentence: float
    unique_syllables: int
    unique_notes: int
    syllable_vocab_variety: float
    note_vocab_variety: float


def _sentence_from_run(run: list[NoteEvent]) -> MelodicSentence | None:
    """Trim leading syllable-less notes; None when the run has no syllable."""
    first = next((i for i, ev in enumerate(run) if ev.syllable is not None), None)
    if first is None:
        return None
    kept = run[first:]
    return MelodicSentence(
        syllables=tuple(ev.syllable for ev in kept if ev.syllable is not None),
        note_tokens=tuple(tokenize_note(ev) for ev in kept),
    )


def segment_silence(stream: list[NoteEvent]) -> list[MelodicSentence]:
    """Split on rests or the end of the stream.

    Within each voiced run the sentence starts at the first syllable-bearing
    note; trailing syllable-less notes stay attached as melisma.  Runs with
    no syllable at all are discarded.
    """
    sentences: list[MelodicSentence] = []
    run: list[NoteEvent] = []
    for ev in stream:
        if ev.is_rest:
            sentence = _sentence_from_run(run)
            if sentence is not None:
                sentences.append(sentence)
            run = []
        else:
            run.append(ev)
    sentence = _sentence_from_run(run)
    if sentence is not None:
        sentences.append(sentence)
    return sentences


def segment_fixed(stream: list[NoteEvent], k: int = 5) -> list[MelodicSentence]:
    """Group every k consecutive syllable-bearing notes into one sentence.

    Interleaved and trailing syllable-less notes stay with the group holding
    their syllable; the final short group is kept.
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    notes = [ev for ev in stream if not ev.is_rest]
    first = next((i for i, ev in enumerate(notes) if ev.syllable is not None), None)
    if first is None:
        return []
    sentences: list[MelodicSentence] = []
    group: list[NoteEvent] = []
    syllable_count = 0
    for ev in notes[first:]:
        if ev.syllable is not None and syllable_count == k:
            sentences.append(_sentence_from_run(group))
            group, syllable_count = [], 0
        group.append(ev)
        if ev.syllable is not None:
            syllable_count += 1
    sentences.append(_sentence_from_run(group))
    return sentences


def segment_measures(stream: list[NoteEvent]) -> list[MelodicSentence]:
    """One sentence per measure.

    Measures without any syllable merge into the previous sentence's note
    tail; leading syllable-less measures are dropped.
    """
    grouped: list[list[NoteEvent]] = []
    for _, events in groupby(stream, key=lambda ev: ev.measure_index):
        notes = [ev for ev in events if not ev.is_rest]
        if not notes:
            continue
        if any(ev.syllable is not None for ev in notes):
            grouped.append(notes)
        elif grouped:
            grouped[-1].extend(notes)
        # else: leading syllable-less measure, dropped
    sentences = []
    for notes in grouped:
        sentences.append(MelodicSentence(
            syllables=tuple(ev.syllable for ev in notes if ev.syllable is not None),
            note_tokens=tuple(tokenize_note(ev) for ev in notes),
        ))
    return sentences


def build_corpus(scores: list[ScoreDocument], strategy: str = "silence",
                 fixed_k: int = 5) -> ParallelCorpus:
    """Segment every score and concatenate the results with provenance."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}, expected one of {STRATEGIES}")
    pairs: list[MelodicSentence] = []
    provenance: list[Provenance] = []
    for i, doc in enumerate(scores):
        if strategy == "silence":
            sentences = segment_silence(doc.note_stream)
        elif strategy == "fixed":
            sentences = segment_fixed(doc.note_stream, fixed_k)
        else:
            sentences = segment_measures(doc.note_stream)
        source = doc.source or doc.title or f"score{i}"
        for j, sentence in enumerate(sentences):
            pairs.append(sentence)
            provenance.append(Provenance(source, j))
    if not pairs:
        raise EmptyCorpus("segmentation produced no sentence pairs")
    return ParallelCorpus(pairs, provenance)


def compute_stats(corpus: ParallelCorpus) -> CorpusStats:
    """Corpus statistics: counts, arithmetic means and vocabulary varieties."""
    if not corpus.pairs:
        raise EmptyCorpus("cannot compute statistics of an empty corpus")
    total_syllables = sum(len(p.syllables) for p in corpus.pairs)
    total_notes = sum(len(p.note_tokens) for p in corpus.pairs)
    unique_syllables = len({s for p in corpus.pairs for s in p.syllables})
    unique_notes = len({t for p in corpus.pairs for t in p.note_tokens})
    n = len(corpus.pairs)
    return CorpusStats(
        sentence_count=n,
        mean_syllables_per_sentence=total_syllables / n,
        mean_notes_per_sentence=total_notes / n,
        unique_syllables=unique_syllables,
        unique_notes=unique_notes,
        syllable_vocab_variety=unique_syllables / total_syllables,
        note_vocab_variety=unique_notes / total_notes,
    )


def split_corpus(corpus: ParallelCorpus, ratios: tuple[int, int, int] = (80, 10, 10),
                 seed: int = 0) -> tuple[ParallelCorpus, ParallelCorpus, ParallelCorpus]:
    """Seeded shuffle, then contiguous train/dev/test slices.

    Dev and test sizes are floored percentages; train takes the remainder
    (1521 pairs at 80/10/10 give 1217/152/152).  Raises
    :class:`SplitTooSmall` when any part would be empty.
    """
    if sum(ratios) != 100 or any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be positive and sum to 100, got {ratios}")
    n = len(corpus.pairs)
    n_dev = n * ratios[1] // 100
    n_test = n * ratios[2] // 100
    n_train = n - n_dev - n_test
    if n_dev == 0 or n_test == 0 or n_train == 0:
        raise SplitTooSmall(f"{n} pairs cannot fill a {ratios} split")

    order = list(range(n))
    random.Random(seed).shuffle(order)

    def take(indices: list[int]) -> ParallelCorpus:
        return ParallelCorpus(pairs=[corpus.pairs[i] for i in indices],
                              provenance=[corpus.provenance[i] for i in indices])

    return (take(order[:n_train]),
            take(order[n_train:n_train + n_dev]),
            take(order[n_train + n_dev:]))


@dataclass
class Vocabulary:
    """Bidirectional token/index map with reserved ids 0..3."""

    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != RESERVED_TOKENS:
            raise ValueError(f"vocabulary must start with {RESERVED_TOKENS}")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")

    def __len__(self):
        return len(self.tokens)

    def id(self, token: str) -> int:
        """Token id; unseen tokens map to <unk>."""
        return self.index.get(token, UNK_ID)

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


def build_vocab(sequences: Iterable[Iterable[str]]) -> Vocabulary:
    """Vocabulary ordered by descending frequency, then lexicographically."""
    counts = Counter(tok for seq in sequences for tok in seq)
    if not counts:
        raise ValueError("cannot build a vocabulary from no tokens")
    ordered = sorted(counts, key=lambda tok: (-counts[tok], tok))
    return Vocabulary(tokens=list(RESERVED_TOKENS) + ordered)


# ---------------------------------------------------------------------------
# On-disk corpus layout: per split an aligned pair of plain text files
# (<split>.syl / <split>.not), one sentence per line, space-separated tokens,
# plus a corpus.meta sidecar carrying the header and split sizes.

_META_NAME = "corpus.meta"
_META_HEADER_PREFIX = "#melody-corpus v1"


def save_corpus(directory: str | Path, splits: dict[str, ParallelCorpus],
                strategy: str, seed: int | None = None):
    """Write split files and the metadata sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"{_META_HEADER_PREFIX} strategy={strategy} "
             f"grammar={NOTE_TOKEN_GRAMMAR_VERSION}"]
    if seed is not None:
        lines.append(f"seed={seed}")
    for name, part in splits.items():
        syl_path = directory / f"{name}.syl"
        not_path = directory / f"{name}.not"
        syl_path.write_text(
            "".join(" ".join(p.syllables) + "\n" for p in part.pairs), encoding="utf-8")
        not_path.write_text(
            "".join(" ".join(p.note_tokens) + "\n" for p in part.pairs), encoding="utf-8")
        lines.append(f"split={name} pairs={len(part.pairs)}")
    (directory / _META_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_corpus(directory: str | Path, split: str) -> ParallelCorpus:
    """Read one split back; provenance points at the file and line number."""
    directory = Path(directory)
    syl_path = directory / f"{split}.syl"
    not_path = directory / f"{split}.not"
    if not syl_path.exists() or not not_path.exists():
        missing = syl_path if not syl_path.exists() else not_path
        raise CorpusFormatError(f"missing corpus file {missing}")
    syl_lines = syl_path.read_text(encoding="utf-8").splitlines()
    not_lines = not_path.read_text(encoding="utf-8").splitlines()
    if len(syl_lines) != len(not_lines):
        raise CorpusFormatError(
            f"{syl_path.name} has {len(syl_lines)} lines "
            f"but {not_path.name} has {len(not_lines)}")
    pairs = []
    provenance = []
    for i, (syl, noteline) in enumerate(zip(syl_lines, not_lines)):
        syllables = tuple(syl.split())
        note_tokens = tuple(noteline.split())
        if not syllables or not note_tokens:
            raise CorpusFormatError(f"empty sentence at {syl_path.name}:{i + 1}")
        pairs.append(MelodicSentence(syllables, note_tokens))
        provenance.append(Provenance(f"{split}.syl", i))
    return ParallelCorpus(pairs, provenance)


def read_meta(directory: str | Path) -> dict[str, str]:
    """Parse corpus.meta into a flat dict (header fields included)."""
    path = Path(directory) / _META_NAME
    if not path.exists():
        raise CorpusFormatError(f"missing {path}")
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].startswith(_META_HEADER_PREFIX):
        raise CorpusFormatError("corpus.meta does not start with the v1 header")
    meta: dict[str, str] = {"version": "v1"}
    header_fields = lines[0][len(_META_HEADER_PREFIX):].split()
    splits = []
    for token in header_fields:
        key, _, value = token.partition("=")
        meta[key] = value
    for line in lines[1:]:
        if line.startswith("split="):
            splits.append(line.split()[0].partition("=")[2])
        else:
            key, _, value = line.partition("=")
            if key:
                meta[key] = value
    meta["splits"] = ",".join(splits)
    return meta
