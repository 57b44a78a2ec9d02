"""DNA alphabet, reverse complement, one-hot encoding and sequence ingestion.

Sequences are plain ``str`` over ``ACGTN``. One-hot channels are ordered
``A, C, G, T``; ``N`` encodes as the all-zero row, which keeps every entry in
{0, 1} and makes ``one_hot(revcomp(s))`` an exact row-reversal plus channel
swap of ``one_hot(s)``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace
from typing import IO, Any, Iterable, Iterator

import numpy as np

ALPHABET = "ACGTN"
NUCLEOTIDES = "ACGT"

_COMPLEMENT = {"A": "T", "T": "A", "C": "G", "G": "C", "N": "N"}
_RC_TABLE = str.maketrans("ACGTN", "TGCAN")

# lookup from ASCII code to one-hot channel; -1 marks N (zero row)
_CODE = np.full(256, -2, dtype=np.int8)
for _i, _b in enumerate(NUCLEOTIDES):
    _CODE[ord(_b)] = _i
_CODE[ord("N")] = -1

#: channel permutation induced by complementing bases (A<->T, C<->G)
COMPLEMENT_CHANNELS = np.array([3, 2, 1, 0])


class SequenceError(ValueError):
    """Raised for sequences containing symbols outside ``ACGTN``."""


class FastaParseError(ValueError):
    """Malformed FASTA input. ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class SequenceRecord:
    """A DNA sequence with an identifier and an opaque label payload."""

    id: str
    seq: str
    label: Any = None

    def __post_init__(self):
        if not self.seq:
            raise SequenceError(f"record {self.id!r} has an empty sequence")
        bad = set(self.seq) - set(ALPHABET)
        if bad:
            raise SequenceError(
                f"record {self.id!r} contains illegal symbol(s) {''.join(sorted(bad))!r}"
            )

    def __len__(self) -> int:
        return len(self.seq)


def complement_base(b: str) -> str:
    """Watson-Crick complement of a single base; ``N`` maps to itself."""
    try:
        return _COMPLEMENT[b]
    except KeyError:
        raise SequenceError(f"not a base: {b!r}") from None


def revcomp(seq: str) -> str:
    """Reverse complement of a sequence string."""
    return seq.translate(_RC_TABLE)[::-1]


def reverse_complement(record: SequenceRecord) -> SequenceRecord:
    """Reverse-complement a record. The label is carried through untouched;
    re-expressing it in the new frame is the caller's job."""
    return replace(record, seq=revcomp(record.seq))


def canonical(seq: str) -> str:
    """Lexicographic minimum of a sequence and its reverse complement."""
    rc = revcomp(seq)
    return seq if seq <= rc else rc


def one_hot(seq: str | SequenceRecord) -> np.ndarray:
    """Encode as an ``(L, 4)`` float64 matrix. N rows are all zero."""
    if isinstance(seq, SequenceRecord):
        seq = seq.seq
    codes = _CODE[np.frombuffer(seq.encode("ascii"), dtype=np.uint8)]
    if (codes == -2).any():
        bad = seq[int(np.argmax(codes == -2))]
        raise SequenceError(f"illegal symbol {bad!r}")
    out = np.zeros((len(seq), 4))
    det = codes >= 0
    out[np.nonzero(det)[0], codes[det]] = 1.0
    return out


def one_hot_batch(seqs: Iterable[str | SequenceRecord]) -> np.ndarray:
    """Stack equal-length sequences into an ``(N, L, 4)`` array."""
    mats = [one_hot(s) for s in seqs]
    if not mats:
        raise ValueError("empty batch")
    lengths = {m.shape[0] for m in mats}
    if len(lengths) != 1:
        raise ValueError(f"sequences differ in length: {sorted(lengths)}")
    return np.stack(mats)


def revcomp_onehot(x: np.ndarray) -> np.ndarray:
    """Reverse complement in one-hot space: reverse positions, swap A<->T, C<->G.

    Works on ``(L, 4)`` or ``(N, L, 4)`` arrays.
    """
    return np.ascontiguousarray(x[..., ::-1, :][..., COMPLEMENT_CHANNELS])


def ambiguous_fraction(seq: str) -> float:
    return seq.count("N") / len(seq)


def filter_ambiguous(records: Iterable[SequenceRecord], max_fraction: float = 0.20):
    """Drop records whose fraction of ``N`` exceeds ``max_fraction``."""
    return [r for r in records if ambiguous_fraction(r.seq) <= max_fraction]


# -- FASTA -----------------------------------------------------------------


def _text_lines(stream: IO) -> Iterator[str]:
    for raw in stream:
        if isinstance(raw, bytes):
            raw = raw.decode("ascii")
        yield raw.rstrip("\r\n")


def parse_fasta(stream: IO | str | bytes) -> list[SequenceRecord]:
    """Parse FASTA text from a byte or text stream.

    Lower-case bases are upper-cased. Anything outside ``ACGTN`` is rejected
    with the offending symbol and record id in the message.
    """
    if isinstance(stream, bytes):
        stream = io.BytesIO(stream)
    elif isinstance(stream, str):
        stream = io.StringIO(stream)

    records = []
    cur_id, chunks, header_line = None, [], 0

    def flush():
        seq = "".join(chunks)
        if not seq:
            raise FastaParseError(f"record {cur_id!r} has no sequence", header_line)
        records.append(SequenceRecord(cur_id, seq))

    for lineno, line in enumerate(_text_lines(stream), start=1):
        if not line.strip():
            continue
        if line.startswith(">"):
            if cur_id is not None:
                flush()
            fields = line[1:].split()
            if not fields:
                raise FastaParseError("empty header", lineno)
            cur_id, chunks, header_line = fields[0], [], lineno
            continue
        if cur_id is None:
            raise FastaParseError("sequence data before first '>' header", lineno)
        body = line.strip().upper()
        bad = set(body) - set(ALPHABET)
        if bad:
            sym = next(c for c in body if c in bad)
            raise FastaParseError(f"illegal symbol {sym!r} in record {cur_id!r}", lineno)
        chunks.append(body)
    if cur_id is not None:
        flush()
    return records


def read_fasta(path) -> list[SequenceRecord]:
    with open(path, "rb") as fh:
        return parse_fasta(fh)


def write_fasta(records: Iterable[SequenceRecord], path, width: int = 80) -> None:
    with open(path, "w", newline="\n") as fh:
        for r in records:
            fh.write(f">{r.id}\n")
            for i in range(0, len(r.seq), width):
                fh.write(r.seq[i : i + width] + "\n")


# -- TSV -------------------------------------------------------------------


def encode_label(label) -> str:
    """JSON text for a label payload (int, float, list or nested list)."""
    if label is None:
        return ""
    if isinstance(label, np.ndarray):
        label = label.tolist()
    elif isinstance(label, np.generic):
        label = label.item()
    return json.dumps(label, separators=(",", ":"))


def decode_label(text: str):
    if text == "":
        return None
    value = json.loads(text)
    if isinstance(value, list):
        return np.asarray(value, dtype=float)
    return value


def read_tsv(path_or_stream) -> list[SequenceRecord]:
    """Read records from a TSV with a header row ``id, sequence, label``."""
    if isinstance(path_or_stream, (str, bytes)) or hasattr(path_or_stream, "__fspath__"):
        with open(path_or_stream, newline="") as fh:
            return read_tsv(fh)
    reader = csv.reader(path_or_stream, delimiter="\t")
    try:
        header = next(reader)
    except StopIteration:
        raise FastaParseError("empty TSV, header row required", 1) from None
    if header[:2] != ["id", "sequence"]:
        raise FastaParseError(f"bad TSV header {header!r}", 1)
    has_label = len(header) > 2 and header[2] == "label"
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        seq = row[1].strip().upper()
        try:
            label = decode_label(row[2]) if has_label and len(row) > 2 else None
            out.append(SequenceRecord(row[0], seq, label))
        except (SequenceError, json.JSONDecodeError) as exc:
            raise FastaParseError(str(exc), lineno) from None
    return out


def write_tsv(records: Iterable[SequenceRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["id", "sequence", "label"])
        for r in records:
            w.writerow([r.id, r.seq, encode_label(r.label)])
