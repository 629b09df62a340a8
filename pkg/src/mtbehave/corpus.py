"""Parallel corpus access: tokenized bitext, word alignments, linguistic annotations.

A corpus is three files that describe the same ordered set of translation pairs:

* pairs: one tab-separated line per pair, ``id<TAB>source<TAB>reference``,
  both sides pre-tokenized with single spaces between tokens;
* alignments: one Pharaoh-format line per pair, in corpus order
  (e.g. ``0-0 1-2 2-1``, source index first);
* annotations: one JSON object per line with POS tags, past-perfect flags,
  named-entity spans and phrase spans for the pair named by its ``id``.

Loaders validate aggressively and report the offending file and line; dumpers
emit a canonical form (sorted links and spans) so that dump(load(f)) == f holds
for canonical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

Span = tuple[int, int]

POS_TAGS = frozenset({"NOUN", "VERB", "ADJ", "ADV", "ADP", "OTHER"})

_ANNOTATION_FIELDS = ("id", "pos", "past_perfect", "ne", "phrases_src", "phrases_ref")


class CorpusError(ValueError):
    """Malformed corpus data; the message names the file and line."""


def _fail(path: object, lineno: int, message: str) -> None:
    raise CorpusError(f"{path}:{lineno}: {message}")


def _check_span(span: Span, what: str) -> None:
    start, end = span
    if start < 0 or end <= start:
        raise ValueError(f"{what} ({start}, {end}) is not a valid span")


@dataclass(frozen=True)
class TranslationPair:
    """One bitext pair; ``source`` and ``reference`` are token tuples."""

    pair_id: str
    source: tuple[str, ...]
    reference: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.pair_id or any(ch.isspace() for ch in self.pair_id):
            raise ValueError(f"invalid pair id {self.pair_id!r}")
        for side, tokens in (("source", self.source), ("reference", self.reference)):
            if not tokens:
                raise ValueError(f"{side} has no tokens")
            for token in tokens:
                if not token or any(ch.isspace() for ch in token):
                    raise ValueError(f"{side} contains an empty or whitespace token")


@dataclass(frozen=True)
class AlignmentSet:
    """Word alignment links for one pair, as (source index, reference index)."""

    pair_id: str
    links: frozenset[tuple[int, int]]


@dataclass(frozen=True)
class Annotation:
    """Token-level and span-level annotations for one pair.

    ``pos`` and ``past_perfect`` run parallel to the source tokens. NE spans are
    (start, end, type) on the source; phrase spans are (start, end) on the side
    their name says. All spans are half-open.
    """

    pair_id: str
    pos: tuple[str, ...]
    past_perfect: tuple[bool, ...]
    ne_spans: tuple[tuple[int, int, str], ...]
    phrase_spans_src: tuple[Span, ...]
    phrase_spans_ref: tuple[Span, ...]

    def __post_init__(self) -> None:
        for tag in self.pos:
            if tag not in POS_TAGS:
                raise ValueError(f"unknown POS tag {tag!r}")
        if len(self.past_perfect) != len(self.pos):
            raise ValueError("past_perfect length differs from pos length")
        for start, end, label in self.ne_spans:
            _check_span((start, end), "NE span")
            if not label or any(ch.isspace() for ch in label):
                raise ValueError(f"invalid NE type {label!r}")
        for span in self.phrase_spans_src:
            _check_span(span, "source phrase span")
        for span in self.phrase_spans_ref:
            _check_span(span, "reference phrase span")


@dataclass(frozen=True)
class Corpus:
    """Pairs plus their alignments and annotations, keyed by pair id."""

    pairs: dict[str, TranslationPair]
    alignments: dict[str, AlignmentSet]
    annotations: dict[str, Annotation]

    def __post_init__(self) -> None:
        if set(self.alignments) != set(self.pairs):
            raise ValueError("alignments do not cover exactly the corpus pairs")
        if set(self.annotations) != set(self.pairs):
            raise ValueError("annotations do not cover exactly the corpus pairs")

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[str]:
        return iter(self.pairs)

    def triples(self) -> Iterator[tuple[TranslationPair, AlignmentSet, Annotation]]:
        """Yield (pair, alignment, annotation) in corpus order."""
        for pair_id, pair in self.pairs.items():
            yield pair, self.alignments[pair_id], self.annotations[pair_id]


def load_pairs(path) -> dict[str, TranslationPair]:
    """Read the tab-separated pairs file, preserving file order."""
    pairs: dict[str, TranslationPair] = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            fields = line.split("\t")
            if len(fields) != 3:
                _fail(path, lineno, f"expected 3 tab-separated fields, got {len(fields)}")
            pair_id, src_text, ref_text = fields
            if pair_id in pairs:
                _fail(path, lineno, f"duplicate pair id {pair_id!r}")
            try:
                pair = TranslationPair(
                    pair_id,
                    tuple(src_text.split(" ")),
                    tuple(ref_text.split(" ")),
                )
            except ValueError as exc:
                _fail(path, lineno, str(exc))
            pairs[pair_id] = pair
    return pairs


def load_alignments(path, pairs: Mapping[str, TranslationPair]) -> dict[str, AlignmentSet]:
    """Read the Pharaoh alignment file; line k belongs to the k-th corpus pair.

    Duplicate links on a line are dropped silently. Indices are checked against
    the pair's token counts.
    """
    with open(path, encoding="utf-8") as handle:
        lines = handle.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) != len(pairs):
        raise CorpusError(
            f"{path}: expected {len(pairs)} alignment lines, got {len(lines)}"
        )
    alignments: dict[str, AlignmentSet] = {}
    for lineno, (line, pair) in enumerate(zip(lines, pairs.values()), start=1):
        links: set[tuple[int, int]] = set()
        for item in line.split():
            left, sep, right = item.partition("-")
            if not sep or not left.isdigit() or not right.isdigit():
                _fail(path, lineno, f"malformed link {item!r}")
            i, j = int(left), int(right)
            if i >= len(pair.source):
                _fail(
                    path,
                    lineno,
                    f"src index {i} out of range (source has {len(pair.source)} tokens)",
                )
            if j >= len(pair.reference):
                _fail(
                    path,
                    lineno,
                    f"ref index {j} out of range (reference has {len(pair.reference)} tokens)",
                )
            links.add((i, j))
        alignments[pair.pair_id] = AlignmentSet(pair.pair_id, frozenset(links))
    return alignments


def _require_int(value: object, path, lineno: int, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(path, lineno, f"{what} must be an integer, got {value!r}")
    return value


def _read_span(value: object, limit: int, path, lineno: int, what: str) -> Span:
    if not isinstance(value, list) or len(value) != 2:
        _fail(path, lineno, f"{what} must be a [start, end] list, got {value!r}")
    start = _require_int(value[0], path, lineno, f"{what} start")
    end = _require_int(value[1], path, lineno, f"{what} end")
    if start < 0 or end <= start:
        _fail(path, lineno, f"{what} ({start}, {end}) is not a valid span")
    if end > limit:
        _fail(path, lineno, f"{what} ({start}, {end}) out of range (length {limit})")
    return (start, end)


def load_annotations(path, pairs: Mapping[str, TranslationPair]) -> dict[str, Annotation]:
    """Read the JSONL annotation file; exactly one record per corpus pair."""
    annotations: dict[str, Annotation] = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                _fail(path, lineno, "blank line")
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                _fail(path, lineno, f"invalid JSON: {exc}")
            if not isinstance(record, dict):
                _fail(path, lineno, "annotation record must be a JSON object")
            missing = [key for key in _ANNOTATION_FIELDS if key not in record]
            if missing:
                _fail(path, lineno, f"missing fields: {missing}")
            unknown = sorted(set(record) - set(_ANNOTATION_FIELDS))
            if unknown:
                _fail(path, lineno, f"unknown fields: {unknown}")
            pair_id = record["id"]
            if pair_id not in pairs:
                _fail(path, lineno, f"unknown pair id {pair_id!r}")
            if pair_id in annotations:
                _fail(path, lineno, f"duplicate annotation for pair {pair_id!r}")
            pair = pairs[pair_id]
            n_src = len(pair.source)
            n_ref = len(pair.reference)

            pos = record["pos"]
            if not isinstance(pos, list) or len(pos) != n_src:
                _fail(path, lineno, f"pos must list one tag per source token ({n_src})")
            for tag in pos:
                if tag not in POS_TAGS:
                    _fail(path, lineno, f"unknown POS tag {tag!r}")

            past = record["past_perfect"]
            if (
                not isinstance(past, list)
                or len(past) != n_src
                or any(not isinstance(flag, bool) for flag in past)
            ):
                _fail(path, lineno, f"past_perfect must list one bool per source token ({n_src})")

            ne_field = record["ne"]
            if not isinstance(ne_field, list):
                _fail(path, lineno, "ne must be a list")
            ne_spans: list[tuple[int, int, str]] = []
            for item in ne_field:
                if not isinstance(item, list) or len(item) != 3:
                    _fail(path, lineno, f"NE entry must be [start, end, type], got {item!r}")
                start, end = _read_span(item[:2], n_src, path, lineno, "NE span")
                label = item[2]
                if not isinstance(label, str) or not label or any(ch.isspace() for ch in label):
                    _fail(path, lineno, f"invalid NE type {label!r}")
                entry = (start, end, label)
                if entry not in ne_spans:
                    ne_spans.append(entry)

            phrases_src: list[Span] = []
            for item in record["phrases_src"]:
                span = _read_span(item, n_src, path, lineno, "source phrase span")
                if span not in phrases_src:
                    phrases_src.append(span)
            phrases_ref: list[Span] = []
            for item in record["phrases_ref"]:
                span = _read_span(item, n_ref, path, lineno, "reference phrase span")
                if span not in phrases_ref:
                    phrases_ref.append(span)

            annotations[pair_id] = Annotation(
                pair_id,
                tuple(pos),
                tuple(past),
                tuple(ne_spans),
                tuple(phrases_src),
                tuple(phrases_ref),
            )
    absent = [pair_id for pair_id in pairs if pair_id not in annotations]
    if absent:
        raise CorpusError(f"{path}: missing annotation records for pairs {absent}")
    return annotations


def load_corpus(pairs_path, alignments_path, annotations_path) -> Corpus:
    """Load and cross-validate the three corpus files."""
    pairs = load_pairs(pairs_path)
    alignments = load_alignments(alignments_path, pairs)
    annotations = load_annotations(annotations_path, pairs)
    return Corpus(pairs, alignments, annotations)


def dump_pairs(pairs: Mapping[str, TranslationPair], path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for pair in pairs.values():
            handle.write(
                f"{pair.pair_id}\t{' '.join(pair.source)}\t{' '.join(pair.reference)}\n"
            )


def dump_alignments(
    alignments: Mapping[str, AlignmentSet], order: Iterable[str], path
) -> None:
    """Write one alignment line per pair id in ``order``, links sorted."""
    with open(path, "w", encoding="utf-8") as handle:
        for pair_id in order:
            links = sorted(alignments[pair_id].links)
            handle.write(" ".join(f"{i}-{j}" for i, j in links) + "\n")


def dump_annotations(
    annotations: Mapping[str, Annotation], order: Iterable[str], path
) -> None:
    """Write one canonical JSON record per pair id in ``order``, spans sorted."""
    with open(path, "w", encoding="utf-8") as handle:
        for pair_id in order:
            note = annotations[pair_id]
            record = {
                "id": note.pair_id,
                "pos": list(note.pos),
                "past_perfect": list(note.past_perfect),
                "ne": [[s, e, t] for s, e, t in sorted(note.ne_spans)],
                "phrases_src": [[s, e] for s, e in sorted(note.phrase_spans_src)],
                "phrases_ref": [[s, e] for s, e in sorted(note.phrase_spans_ref)],
            }
            handle.write(json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n")


def dump_corpus(corpus: Corpus, pairs_path, alignments_path, annotations_path) -> None:
    order = list(corpus.pairs)
    dump_pairs(corpus.pairs, pairs_path)
    dump_alignments(corpus.alignments, order, alignments_path)
    dump_annotations(corpus.annotations, order, annotations_path)
