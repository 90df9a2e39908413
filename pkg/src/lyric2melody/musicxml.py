"""MusicXML ingestion and emission for monophonic vocal lines.

Parses a practical subset of score-partwise MusicXML into a flat stream of
:class:`NoteEvent` and writes generated melodies back out as valid MusicXML.
The supported subset is: pitch (step / alter / octave), rests, duration type,
a single augmentation dot, lyric text and measure boundaries.  Everything
else (grace notes, chord continuations, directions, time signatures, ...)
is skipped and recorded in a machine-readable :class:`ParseReport`, never an
error.  Ties are deliberately kept as two independent events.

Quarter-tone accidentals (koron / sori) are rejected with a distinct
``unsupported-accidental`` skip entry and never silently rounded.

Syllables use a Latin transliteration alphabet: ASCII letters (capital A is
the long vowel "â" as in "tAb") plus the apostrophe for the glottal stop.
Persian phonemes without a single Latin letter are written as digraphs
("ch", "sh", "zh", "kh", "gh"), which need no extra characters.  This
charset is a reconstruction from the corpus conventions, frozen in
:data:`SYLLABLE_CHARS`.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from fractions import Fraction
from string import ascii_letters

from .errors import LyricMelodyError


class MalformedXml(LyricMelodyError):
    """Input bytes are not well-formed XML."""


class UnsupportedRoot(LyricMelodyError):
    """XML is well-formed but the root element is not score-partwise."""


class EmptyScore(LyricMelodyError):
    """The document contains no note elements at all."""


class EmptyMelody(LyricMelodyError):
    """emit_score was called with no notes."""


class IllegalCharacter(LyricMelodyError):
    """A syllable contains a character outside the transliteration charset."""

    def __init__(self, text: str, char: str, position: int):
        self.char = char
        self.position = position
        super().__init__(
            f"illegal character {char!r} (U+{ord(char):04X}) "
            f"at position {position} in syllable {text!r}"
        )


#: Steps of the diatonic signature.
STEPS = frozenset("ABCDEFG")

#: Supported duration classes, as fractions of a whole note.
NOTE_TYPE_FRACTIONS: dict[str, Fraction] = {
    "whole": Fraction(1, 1),
    "half": Fraction(1, 2),
    "quarter": Fraction(1, 4),
    "eighth": Fraction(1, 8),
    "16th": Fraction(1, 16),
    "32nd": Fraction(1, 32),
    "64th": Fraction(1, 64),
}

NOTE_TYPES = frozenset(NOTE_TYPE_FRACTIONS)

#: Frozen transliteration charset for choral syllables.
SYLLABLE_CHARS = frozenset(ascii_letters + "'")

#: MusicXML accidental names that would need quarter-tone support.
_QUARTER_TONE_ACCIDENTALS = frozenset(
    {"koron", "sori", "quarter-flat", "quarter-sharp", "slash-flat",
     "slash-quarter-sharp", "slash-sharp", "three-quarters-flat",
     "three-quarters-sharp"}
)

# Emission constants: divisions per quarter note.  32 keeps the duration of
# every supported type an integer, including a dotted 64th (3 divisions).
_DIVISIONS = 32


@dataclass(frozen=True)
class NoteEvent:
    """One parsed note or rest.

    ``step``, ``alter``, ``octave`` and ``syllable`` are None for rests.
    """

    step: str | None = None
    alter: int | None = None
    octave: int | None = None
    note_type: str = "quarter"
    dotted: bool = False
    is_rest: bool = False
    syllable: str | None = None
    measure_index: int = 0

    def __post_init__(self):
        if self.note_type not in NOTE_TYPES:
            raise ValueError(f"unsupported note type {self.note_type!r}")
        if self.is_rest:
            if not (self.step is None and self.alter is None
                    and self.octave is None and self.syllable is None):
                raise ValueError("rest events carry no pitch or syllable")
        else:
            if self.step not in STEPS:
                raise ValueError(f"step must be one of A..G, got {self.step!r}")
            if self.alter not in (-1, 0, 1):
                raise ValueError(f"alter must be in {{-1,0,1}}, got {self.alter!r}")
            if self.octave is None or not 0 <= self.octave <= 9:
                raise ValueError(f"octave must be in 0..9, got {self.octave!r}")
            if self.syllable is not None and not self.syllable.strip():
                raise ValueError("syllable must be nonempty when present")

    def duration(self) -> Fraction:
        """Duration as a fraction of a whole note, dot included."""
        frac = NOTE_TYPE_FRACTIONS[self.note_type]
        return frac * 3 / 2 if self.dotted else frac

    def pitch_tuple(self):
        """(step, alter, octave, note_type, dotted, syllable) for comparisons."""
        return (self.step, self.alter, self.octave, self.note_type,
                self.dotted, self.syllable)

    def to_dict(self) -> dict:
        d = {"type": self.note_type, "dotted": self.dotted,
             "rest": self.is_rest, "measure": self.measure_index}
        if not self.is_rest:
            d.update(step=self.step, alter=self.alter, octave=self.octave)
            if self.syllable is not None:
                d["syllable"] = self.syllable
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NoteEvent":
        if d["rest"]:
            return cls(is_rest=True, note_type=d["type"], dotted=d["dotted"],
                       measure_index=d["measure"])
        return cls(step=d["step"], alter=d["alter"], octave=d["octave"],
                   note_type=d["type"], dotted=d["dotted"],
                   syllable=d.get("syllable"), measure_index=d["measure"])


@dataclass(frozen=True)
class SkipEntry:
    """One element the parser consciously did not convert."""

    reason: str
    measure_index: int
    detail: str = ""


@dataclass
class ParseReport:
    """Machine-readable record of everything skipped during a parse."""

    entries: list[SkipEntry] = field(default_factory=list)

    def add(self, reason: str, measure_index: int, detail: str = ""):
        self.entries.append(SkipEntry(reason, measure_index, detail))

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.entries:
            out[e.reason] = out.get(e.reason, 0) + 1
        return out

    def to_dict(self) -> dict:
        return {
            "counts": self.counts(),
            "entries": [
                {"reason": e.reason, "measure": e.measure_index, "detail": e.detail}
                for e in self.entries
            ],
        }


@dataclass
class ScoreDocument:
    """A parsed score: all parts as measure lists plus the selected vocal line."""

    title: str
    parts: list[list[list[NoteEvent]]]
    note_stream: list[NoteEvent]
    report: ParseReport
    source: str = ""


def validate_syllable(text: str) -> str:
    """Trim and charset-check one syllable.

    Returns the trimmed syllable (case preserved: capital A is a long-vowel
    mark).  Raises :class:`IllegalCharacter` naming the first offending code
    point and its position within the trimmed text.
    """
    trimmed = text.strip()
    for i, ch in enumerate(trimmed):
        if ch not in SYLLABLE_CHARS:
            raise IllegalCharacter(trimmed, ch, i)
    return trimmed


def _local(tag: str) -> str:
    """Tag name with any XML namespace stripped."""
    return tag.rsplit("}", 1)[-1]


def _parse_note(note_el, measure_index: int, report: ParseReport) -> NoteEvent | None:
    """Convert one <note> element, or record a skip and return None."""
    children = {_local(c.tag): c for c in note_el}

    if "grace" in children:
        report.add("grace", measure_index)
        return None
    if "chord" in children:
        report.add("chord-continuation", measure_index)
        return None
    if "cue" in children:
        report.add("cue", measure_index)
        return None

    dots = sum(1 for c in note_el if _local(c.tag) == "dot")
    if dots > 1:
        report.add("multiple-dots", measure_index, f"{dots} dots")
        return None

    type_el = children.get("type")
    note_type = type_el.text.strip() if type_el is not None and type_el.text else None

    if "rest" in children:
        # Whole-measure rests commonly omit <type>.
        if note_type is None:
            note_type = "whole"
        if note_type not in NOTE_TYPES:
            report.add("unsupported-type", measure_index, note_type)
            return None
        return NoteEvent(is_rest=True, note_type=note_type, dotted=dots == 1,
                         measure_index=measure_index)

    pitch_el = children.get("pitch")
    if pitch_el is None:
        report.add("unpitched", measure_index)
        return None
    if note_type is None:
        report.add("missing-type", measure_index)
        return None
    if note_type not in NOTE_TYPES:
        report.add("unsupported-type", measure_index, note_type)
        return None

    acc_el = children.get("accidental")
    if acc_el is not None and acc_el.text:
        acc = acc_el.text.strip()
        if acc in _QUARTER_TONE_ACCIDENTALS:
            report.add("unsupported-accidental", measure_index, acc)
            return None

    pitch = {_local(c.tag): (c.text or "").strip() for c in pitch_el}
    step = pitch.get("step", "")
    octave_text = pitch.get("octave", "")
    alter_text = pitch.get("alter", "0") or "0"
    try:
        alter_value = float(alter_text)
    except ValueError:
        report.add("unsupported-accidental", measure_index, alter_text)
        return None
    if alter_value != int(alter_value) or int(alter_value) not in (-1, 0, 1):
        report.add("unsupported-accidental", measure_index, f"alter={alter_text}")
        return None

    if step not in STEPS or not octave_text.isdigit() or not 0 <= int(octave_text) <= 9:
        report.add("invalid-pitch", measure_index, f"{step}/{octave_text}")
        return None

    syllable = None
    lyric_el = children.get("lyric")
    if lyric_el is not None:
        for c in lyric_el:
            if _local(c.tag) == "text" and c.text:
                # Collapse internal whitespace so syllables stay single tokens.
                syllable = "_".join(c.text.split()) or None
                break

    return NoteEvent(step=step, alter=int(alter_value), octave=int(octave_text),
                     note_type=note_type, dotted=dots == 1,
                     syllable=syllable, measure_index=measure_index)


def parse_score(document_bytes: bytes, source: str = "") -> ScoreDocument:
    """Parse score-partwise MusicXML into a :class:`ScoreDocument`.

    The note stream is taken from the first part that carries any lyric, or
    part 0 if none does.  Unsupported elements are recorded in the returned
    document's ``report`` rather than raising.

    Raises :class:`MalformedXml`, :class:`UnsupportedRoot` or
    :class:`EmptyScore`.
    """
    try:
        root = ET.fromstring(document_bytes)
    except ET.ParseError as exc:
        raise MalformedXml(f"not parseable as XML: {exc}") from exc

    if _local(root.tag) != "score-partwise":
        raise UnsupportedRoot(f"expected score-partwise root, got {_local(root.tag)!r}")

    title = ""
    for el in root.iter():
        if _local(el.tag) in ("work-title", "movement-title") and el.text:
            title = el.text.strip()
            break

    report = ParseReport()
    parts: list[list[list[NoteEvent]]] = []
    part_has_lyric: list[bool] = []
    note_element_count = 0

    for part_el in root:
        if _local(part_el.tag) != "part":
            continue
        measures: list[list[NoteEvent]] = []
        has_lyric = False
        for measure_index, measure_el in enumerate(
                el for el in part_el if _local(el.tag) == "measure"):
            events: list[NoteEvent] = []
            for child in measure_el:
                tag = _local(child.tag)
                if tag == "note":
                    note_element_count += 1
                    ev = _parse_note(child, measure_index, report)
                    if ev is not None:
                        events.append(ev)
                        if ev.syllable is not None:
                            has_lyric = True
                elif tag == "attributes":
                    if any(_local(c.tag) == "time" for c in child):
                        report.add("time-signature", measure_index)
                elif tag == "direction":
                    report.add("direction", measure_index)
                elif tag in ("backup", "forward", "harmony", "sound",
                             "figured-bass", "grouping"):
                    report.add("ignored-element", measure_index, tag)
                # barline / print / barely-presentational tags: silent.
            measures.append(events)
        parts.append(measures)
        part_has_lyric.append(has_lyric)

    if not parts:
        raise EmptyScore("document has no part elements")
    if note_element_count == 0:
        raise EmptyScore("document has no note elements")

    selected = 0
    for i, has_lyric in enumerate(part_has_lyric):
        if has_lyric:
            selected = i
            break
    note_stream = [ev for measure in parts[selected] for ev in measure]

    return ScoreDocument(title=title, parts=parts, note_stream=note_stream,
                         report=report, source=source)


def emit_score(melody: list[tuple[str | None, NoteEvent]], title: str = "",
               time_signature: tuple[int, int] = (4, 4)) -> bytes:
    """Emit a melody as score-partwise MusicXML bytes.

    ``melody`` is an ordered list of (syllable, note) pairs; a None syllable
    marks a melisma continuation and produces no lyric element.  Notes are
    packed greedily into measures of the given time signature by cumulative
    duration; the final measure may be underfull.  Output is deterministic.
    """
    if not melody:
        raise EmptyMelody("cannot emit an empty melody")
    for _, ev in melody:
        if ev.is_rest:
            raise ValueError("emit_score takes non-rest notes only")

    beats, beat_type = time_signature
    capacity = Fraction(beats, beat_type)

    root = ET.Element("score-partwise", version="3.1")
    if title:
        work = ET.SubElement(root, "work")
        ET.SubElement(work, "work-title").text = title
    part_list = ET.SubElement(root, "part-list")
    score_part = ET.SubElement(part_list, "score-part", id="P1")
    ET.SubElement(score_part, "part-name").text = "Voice"
    part = ET.SubElement(root, "part", id="P1")

    measure_number = 0
    measure_el = None
    cum = Fraction(0)

    def open_measure():
        nonlocal measure_el, measure_number, cum
        measure_number += 1
        cum = Fraction(0)
        measure_el = ET.SubElement(part, "measure", number=str(measure_number))
        if measure_number == 1:
            attrs = ET.SubElement(measure_el, "attributes")
            ET.SubElement(attrs, "divisions").text = str(_DIVISIONS)
            key = ET.SubElement(attrs, "key")
            ET.SubElement(key, "fifths").text = "0"
            time = ET.SubElement(attrs, "time")
            ET.SubElement(time, "beats").text = str(beats)
            ET.SubElement(time, "beat-type").text = str(beat_type)
            clef = ET.SubElement(attrs, "clef")
            ET.SubElement(clef, "sign").text = "G"
            ET.SubElement(clef, "line").text = "2"

    open_measure()
    for i, (syllable, ev) in enumerate(melody):
        dur = ev.duration()
        if cum > 0 and cum + dur > capacity:
            open_measure()
        note_el = ET.SubElement(measure_el, "note")
        pitch_el = ET.SubElement(note_el, "pitch")
        ET.SubElement(pitch_el, "step").text = ev.step
        if ev.alter:
            ET.SubElement(pitch_el, "alter").text = str(ev.alter)
        ET.SubElement(pitch_el, "octave").text = str(ev.octave)
        duration_divisions = dur * 4 * _DIVISIONS
        ET.SubElement(note_el, "duration").text = str(int(duration_divisions))
        ET.SubElement(note_el, "type").text = ev.note_type
        if ev.dotted:
            ET.SubElement(note_el, "dot")
        if syllable is not None:
            lyric_el = ET.SubElement(note_el, "lyric")
            ET.SubElement(lyric_el, "syllabic").text = "single"
            ET.SubElement(lyric_el, "text").text = syllable
            if i + 1 < len(melody) and melody[i + 1][0] is None:
                ET.SubElement(lyric_el, "extend")
        cum += dur
        if cum >= capacity and i + 1 < len(melody):
            open_measure()

    ET.indent(root)
    return ET.tostring(root, encoding="UTF-8", xml_declaration=True)
