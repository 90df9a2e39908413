"""Command-line pipeline: ingest, corpus, train, evaluate, generate.

Every command is batch and deterministic: identical inputs, seeds and
configs produce byte-identical output files.  Exit codes by error family:

    0  success
    1  usage errors and unexpected failures
    2  MusicXML parse problems (malformed, wrong root, empty input set)
    3  corpus problems (empty corpus, split too small, bad corpus files)
    4  training divergence
    5  generation problems (illegal syllable, alignment shortfall)
    6  checkpoint problems (corrupt file, version mismatch)
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bleu as bleu_mod
from . import corpus as corpus_mod
from . import musicxml
from . import seq2seq
from .errors import LyricMelodyError

EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_CORPUS = 3
EXIT_TRAIN = 4
EXIT_GENERATE = 5
EXIT_CHECKPOINT = 6


class AlignmentShortfall(LyricMelodyError):
    """A lyric line has more syllables than decoded notes."""


class ConfigError(LyricMelodyError):
    """A training config file contains an unknown key or a bad value."""


_CONFIG_KEYS = {
    "units": ("num_units", int),
    "layers": ("num_layers", int),
    "attention": ("attention", str),
    "dropout_keep": ("dropout_keep", float),
    "learning_rate": ("learning_rate", float),
    "clip_norm": ("clip_norm", float),
    "max_epochs": ("max_epochs", int),
    "steps_per_epoch": ("steps_per_epoch", int),
    "max_len": ("max_decode_len", int),
    "seed": ("seed", int),
}


def _read_config_file(path: Path) -> dict:
    """Flat key=value config; unknown keys are named diagnostics."""
    overrides: dict = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        if key not in _CONFIG_KEYS:
            raise ConfigError(
                f"{path}:{lineno}: unknown config key {key!r} "
                f"(known: {', '.join(sorted(_CONFIG_KEYS))})")
        field, cast = _CONFIG_KEYS[key]
        try:
            overrides[field] = cast(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return overrides


def _parse_time_signature(text: str) -> tuple[int, int]:
    try:
        beats, beat_type = text.split("/")
        beats, beat_type = int(beats), int(beat_type)
        if beats <= 0 or beat_type <= 0:
            raise ValueError
    except ValueError:
        raise ConfigError(f"bad time signature {text!r}, expected e.g. 4/4") from None
    return beats, beat_type


def cmd_ingest(args) -> int:
    input_dir = Path(args.input_dir)
    out_dir = Path(args.out)
    files = sorted(p for p in input_dir.glob("*")
                   if p.suffix.lower() in (".xml", ".musicxml"))
    if not files:
        print(f"error: no MusicXML files in {input_dir}", file=sys.stderr)
        return EXIT_PARSE

    out_dir.mkdir(parents=True, exist_ok=True)
    reports: dict[str, dict] = {}
    parsed = 0
    with open(out_dir / "streams.jsonl", "w", encoding="utf-8") as fh:
        for path in files:
            try:
                doc = musicxml.parse_score(path.read_bytes(), source=path.name)
            except LyricMelodyError as exc:
                print(f"{path.name}: {exc}", file=sys.stderr)
                reports[path.name] = {"error": str(exc)}
                continue
            record = {
                "source": doc.source,
                "title": doc.title,
                "events": [ev.to_dict() for ev in doc.note_stream],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            reports[path.name] = doc.report.to_dict()
            parsed += 1
    (out_dir / "parse_report.json").write_text(
        json.dumps(reports, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"parsed {parsed}/{len(files)} files -> {out_dir / 'streams.jsonl'}")
    if parsed == 0:
        print("error: no file parsed successfully", file=sys.stderr)
        return EXIT_PARSE
    return 0


def _load_streams(path: Path) -> list[musicxml.ScoreDocument]:
    if path.is_dir():
        path = path / "streams.jsonl"
    docs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            events = [musicxml.NoteEvent.from_dict(d) for d in record["events"]]
            docs.append(musicxml.ScoreDocument(
                title=record.get("title", ""), parts=[[events]],
                note_stream=events, report=musicxml.ParseReport(),
                source=record.get("source", "")))
    return docs


_STATS_ROWS = (
    ("Number of extracted sentences", "sentence_count", "{:d}"),
    ("The average syllables per sentence", "mean_syllables_per_sentence", "{:.2f}"),
    ("Average notes per sentence", "mean_notes_per_sentence", "{:.2f}"),
    ("Unique syllables", "unique_syllables", "{:d}"),
    ("Unique notes", "unique_notes", "{:d}"),
    ("Vocabulary variety of syllables", "syllable_vocab_variety", "{:.3f}"),
    ("Vocabulary diversity of notes", "note_vocab_variety", "{:.3f}"),
)


def format_stats(stats: corpus_mod.CorpusStats) -> str:
    lines = []
    for label, attr, fmt in _STATS_ROWS:
        lines.append(f"{label:<36}{fmt.format(getattr(stats, attr))}")
    return "\n".join(lines)


def cmd_corpus(args) -> int:
    docs = _load_streams(Path(args.streams))
    full = corpus_mod.build_corpus(docs, strategy=args.strategy, fixed_k=args.fixed_k)
    train, dev, test = corpus_mod.split_corpus(full, seed=args.seed)
    out_dir = Path(args.out)
    corpus_mod.save_corpus(out_dir, {"train": train, "dev": dev, "test": test},
                           strategy=args.strategy, seed=args.seed)
    stats = corpus_mod.compute_stats(full)
    print(format_stats(stats))
    print(f"split {len(train)}/{len(dev)}/{len(test)} -> {out_dir}")
    (out_dir / "stats.json").write_text(
        json.dumps(stats.__dict__, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def _model_config_from_args(args, src_size: int, tgt_size: int) -> seq2seq.ModelConfig:
    overrides: dict = {}
    if args.config:
        overrides.update(_read_config_file(Path(args.config)))
    flag_map = {
        "units": "num_units", "layers": "num_layers", "attention": "attention",
        "max_len": "max_decode_len", "seed": "seed", "epochs": "max_epochs",
        "steps": "steps_per_epoch",
    }
    for flag, field in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    try:
        return seq2seq.ModelConfig(src_vocab_size=src_size,
                                   tgt_vocab_size=tgt_size, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_train(args) -> int:
    corpus_dir = Path(args.corpus_dir)
    train_part = corpus_mod.load_corpus(corpus_dir, "train")
    dev_part = corpus_mod.load_corpus(corpus_dir, "dev")
    src_vocab = corpus_mod.build_vocab(p.syllables for p in train_part.pairs)
    tgt_vocab = corpus_mod.build_vocab(p.note_tokens for p in train_part.pairs)
    config = _model_config_from_args(args, len(src_vocab), len(tgt_vocab))

    params, log = seq2seq.train(train_part, dev_part, config, src_vocab, tgt_vocab)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / "checkpoint.bin"
    seq2seq.save_checkpoint(checkpoint_path, params, config, src_vocab, tgt_vocab)
    with open(out_dir / "train_log.jsonl", "w", encoding="utf-8") as fh:
        for record in log:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    best = next(r for r in log if r["type"] == "best")
    print(f"best epoch {best['epoch']} dev BLEU {best['dev_bleu'] * 100:.2f}")
    print(f"checkpoint -> {checkpoint_path}")
    return 0


def cmd_evaluate(args) -> int:
    model = seq2seq.load_checkpoint(args.checkpoint)
    part = corpus_mod.load_corpus(Path(args.corpus_dir), args.split)
    report = bleu_mod.evaluate_model(model, part, max_len=args.max_len)
    print(f"BLEU        {report.bleu * 100:.2f}")
    for n, p in enumerate(report.precisions, 1):
        print(f"p{n}          {p * 100:.2f}")
    print(f"BP          {report.brevity_penalty:.4f}")
    print(f"lengths     hyp={report.hypothesis_length} ref={report.reference_length}")
    if args.out:
        Path(args.out).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
    return 0


def cmd_generate(args) -> int:
    model = seq2seq.load_checkpoint(args.checkpoint)
    time_signature = _parse_time_signature(args.time_signature)
    lines = Path(args.lyrics).read_text(encoding="utf-8").splitlines()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    written = 0
    for lineno, raw in enumerate(lines, 1):
        if not raw.strip():
            continue
        try:
            syllables = [musicxml.validate_syllable(tok) for tok in raw.split()]
        except musicxml.IllegalCharacter:
            print(f"error: lyric line {lineno} rejected", file=sys.stderr)
            raise
        result = seq2seq.greedy_decode(model.params, model.config, model.src_vocab,
                                       model.tgt_vocab, syllables,
                                       max_len=args.max_len)
        notes = []
        for token in result.tokens:
            try:
                notes.append(corpus_mod.parse_note_token(token))
            except corpus_mod.BadNoteToken:
                print(f"line {lineno}: dropped non-note token {token!r}",
                      file=sys.stderr)
        if len(notes) < len(syllables):
            raise AlignmentShortfall(
                f"line {lineno}: {len(syllables)} syllables but only "
                f"{len(notes)} decoded notes")
        melody = [(syllables[i] if i < len(syllables) else None, note)
                  for i, note in enumerate(notes)]
        document = musicxml.emit_score(melody, title=f"Generated melody {lineno}",
                                       time_signature=time_signature)
        out_path = out_dir / f"melody_{lineno:03d}.musicxml"
        out_path.write_bytes(document)
        written += 1
        print(f"line {lineno} -> {out_path.name} ({len(notes)} notes)")
    if written == 0:
        print("error: lyric file had no nonempty lines", file=sys.stderr)
        return EXIT_GENERATE
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lyric2melody",
        description="Translate syllable lines into melodies via a seq2seq LSTM.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a directory of MusicXML files")
    p.add_argument("input_dir")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("corpus", help="segment streams into a split corpus")
    p.add_argument("streams", help="streams.jsonl (or its directory)")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--strategy", choices=corpus_mod.STRATEGIES, default="silence")
    p.add_argument("--fixed-k", type=int, default=5,
                   help="syllables per sentence for --strategy fixed")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("train", help="train a model on a corpus directory")
    p.add_argument("corpus_dir")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--units", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--attention", choices=seq2seq.ATTENTION_KINDS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="BLEU of a checkpoint on a corpus split")
    p.add_argument("checkpoint")
    p.add_argument("corpus_dir")
    p.add_argument("--split", default="test")
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("-o", "--out", help="write the report as JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("generate", help="decode lyric lines into MusicXML files")
    p.add_argument("checkpoint")
    p.add_argument("lyrics", help="text file, one syllable line per melody")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("--time-signature", default="4/4")
    p.set_defaults(func=cmd_generate)

    return parser


_ERROR_EXIT_CODES: tuple[tuple[type, int], ...] = (
    (musicxml.IllegalCharacter, EXIT_GENERATE),
    (AlignmentShortfall, EXIT_GENERATE),
    (musicxml.EmptyMelody, EXIT_GENERATE),
    ((musicxml.MalformedXml, musicxml.UnsupportedRoot, musicxml.EmptyScore),
     EXIT_PARSE),
    ((corpus_mod.EmptyCorpus, corpus_mod.SplitTooSmall,
      corpus_mod.CorpusFormatError), EXIT_CORPUS),
    (seq2seq.DivergedLoss, EXIT_TRAIN),
    ((seq2seq.CorruptCheckpoint, seq2seq.VersionMismatch), EXIT_CHECKPOINT),
)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LyricMelodyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for types, code in _ERROR_EXIT_CODES:
            if isinstance(exc, types):
                return code
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
