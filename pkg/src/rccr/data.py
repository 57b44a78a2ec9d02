"""Synthetic tasks for the three RC regimes plus an orientation-dependent control.

* ``rc-invariant-classification``: label 1 iff a motif or its reverse
  complement occurs, so ``label(x) == label(RC(x))``.
* ``rc-equivariant-profile``: per-bin motif counts; with ``K=2`` channel 0
  counts forward hits and channel 1 reverse-complement hits, so the target
  of ``RC(x)`` is the bin-reversed, channel-swapped target of ``x``.
* ``scalar-regression``: a smooth function of the orientation-free motif
  count plus Gaussian noise.
* ``strand-control``: class 1 carries a marker in forward orientation, class
  0 is the reverse complement of a fresh class-1 sequence, so
  ``label(RC(x)) == 1 - label(x)``.

Every example is generated from its own generator seeded by
``(seed, index)``, so results do not depend on generation order.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from rccr.model import ConfigError, HeadKind
from rccr.seqcore import (
    SequenceRecord,
    canonical,
    decode_label,
    encode_label,
    parse_fasta,
    read_tsv,
    revcomp,
    write_fasta,
    write_tsv,
)

TASK_KINDS = (
    "rc-invariant-classification",
    "rc-equivariant-profile",
    "scalar-regression",
    "strand-control",
)

_BASES = np.frombuffer(b"ACGT", dtype=np.uint8)


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "rc-invariant-classification"
    length: int = 200
    motifs: tuple[str, ...] = ("TATAAA",)
    noise: float = 0.1
    resolution: int = 128
    channels: int = 2
    seed: int = 2025
    n_train: int = 5000
    n_val: int = 500
    n_test: int = 500
    motif_rate: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "motifs", tuple(m.upper() for m in self.motifs))
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}", "task.kind")
        if self.length < 1:
            raise ConfigError("length must be positive", "task.length")
        if not self.motifs:
            raise ConfigError("at least one motif is required", "task.motifs")
        for m in self.motifs:
            if not m or set(m) - set("ACGT"):
                raise ConfigError(f"motif {m!r} must be a nonempty ACGT string", "task.motifs")
            if len(m) > self.length:
                raise ConfigError(f"motif {m!r} longer than L={self.length}", "task.motifs")
        if not 0.0 <= self.noise < 0.5:
            raise ConfigError("noise rate must lie in [0, 0.5)", "task.noise")
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ConfigError("split sizes must be positive", "task.n_train")
        if self.kind == "rc-equivariant-profile":
            if self.channels not in (1, 2):
                raise ConfigError("profile tasks support K in {1, 2}", "task.channels")
            bins = math.ceil(self.length / self.resolution)
            if self.resolution < 1 or self.length % self.resolution or bins < 2:
                raise ConfigError(
                    f"resolution {self.resolution} must divide L={self.length} into >= 2 bins",
                    "task.resolution",
                )
            if len(self.motifs[0]) > self.resolution:
                raise ConfigError("motif longer than one bin", "task.motifs")
            if self.motifs[0] == revcomp(self.motifs[0]) and self.channels == 2:
                raise ConfigError("strand channels need a non-palindromic motif", "task.motifs")
        if self.kind == "strand-control" and self.motifs[0] == revcomp(self.motifs[0]):
            raise ConfigError("the strand marker must not be an RC palindrome", "task.motifs")

    @property
    def bins(self) -> int:
        return math.ceil(self.length / self.resolution)

    def head(self) -> HeadKind:
        if self.kind == "rc-equivariant-profile":
            return HeadKind.bin_regression(self.bins, self.channels, self.resolution)
        if self.kind == "scalar-regression":
            return HeadKind.sequence_regression(1)
        return HeadKind.sequence_classification(2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["motifs"] = list(self.motifs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        d = dict(d)
        if "motifs" in d:
            d["motifs"] = tuple(d["motifs"])
        return cls(**d)


@dataclass
class Dataset:
    train: list[SequenceRecord]
    val: list[SequenceRecord]
    test: list[SequenceRecord]
    spec: TaskSpec | None = None
    splits: tuple[str, ...] = field(default=("train", "val", "test"), repr=False)

    def split(self, name: str) -> list[SequenceRecord]:
        if name not in self.splits:
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)

    def check_rc_safe(self) -> None:
        """Raise if any sequence (or its RC) appears in two different splits."""
        owner = {}
        for name in self.splits:
            for r in self.split(name):
                key = canonical(r.seq)
                if owner.setdefault(key, name) != name:
                    raise SplitError(f"sequence {r.id!r} overlaps splits {owner[key]} and {name}")


# -- helpers ---------------------------------------------------------------


def example_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def random_background(rng: np.random.Generator, length: int) -> str:
    return _BASES[rng.integers(0, 4, length)].tobytes().decode()


def find_all(seq: str, motif: str) -> list[int]:
    """Start positions of every (possibly overlapping) occurrence."""
    out, i = [], seq.find(motif)
    while i >= 0:
        out.append(i)
        i = seq.find(motif, i + 1)
    return out


def hit_positions(seq: str, motif: str) -> set[tuple[int, str]]:
    """Occurrences of a motif in either orientation as ``(start, pattern)``."""
    rc = revcomp(motif)
    hits = {(i, motif) for i in find_all(seq, motif)}
    hits |= {(i, rc) for i in find_all(seq, rc)}
    return hits


def _plant(seq: str, motif: str, pos: int) -> str:
    return seq[:pos] + motif + seq[pos + len(motif) :]


def _has_any(seq: str, motifs) -> bool:
    return any(m in seq or revcomp(m) in seq for m in motifs)


def _maybe_flip(rng, label: int, noise: float) -> int:
    # always draw, so noise=0 and noise>0 runs consume the same stream
    return 1 - label if rng.random() < noise else label


# -- generators ------------------------------------------------------------


def _invariant_example(spec: TaskSpec, i: int) -> SequenceRecord:
    rng = example_rng(spec.seed, i)
    positive = rng.random() < 0.5
    while True:
        seq = random_background(rng, spec.length)
        if positive:
            motif = spec.motifs[rng.integers(len(spec.motifs))]
            if rng.random() < 0.5:
                motif = revcomp(motif)
            seq = _plant(seq, motif, int(rng.integers(0, spec.length - len(motif) + 1)))
            if sum(len(hit_positions(seq, m)) for m in spec.motifs) == 1:
                break
        elif not _has_any(seq, spec.motifs):
            break
    label = _maybe_flip(rng, int(positive), spec.noise)
    return SequenceRecord(f"s{i}", seq, label)


def invariant_label(seq: str, motifs) -> int:
    """Noise-free ground truth of the invariant classification task."""
    return int(_has_any(seq, motifs))


def profile_target(seq: str, motif: str, resolution: int, channels: int) -> np.ndarray:
    """Per-bin hit counts; ``(B, K)``. Hits must lie inside a single bin."""
    bins = len(seq) // resolution
    out = np.zeros((bins, channels))
    rc = revcomp(motif)
    for start, pattern in hit_positions(seq, motif):
        b = start // resolution
        if (start + len(motif) - 1) // resolution != b:
            raise ValueError(f"hit at {start} straddles a bin boundary")
        ch = 0 if channels == 1 or pattern == motif else 1
        out[b, ch] += 1
    if channels == 2 and motif == rc:
        raise ValueError("palindromic motif with two strand channels")
    return out


def _profile_example(spec: TaskSpec, i: int) -> SequenceRecord:
    rng = example_rng(spec.seed, i)
    motif, r, m = spec.motifs[0], spec.resolution, len(spec.motifs[0])
    n_hits = int(rng.poisson(spec.motif_rate))
    while True:
        seq = random_background(rng, spec.length)
        for _ in range(n_hits):
            b = int(rng.integers(spec.bins))
            pos = b * r + int(rng.integers(0, r - m + 1))
            pattern = motif if rng.random() < 0.5 else revcomp(motif)
            seq = _plant(seq, pattern, pos)
        try:
            target = profile_target(seq, motif, r, spec.channels)
        except ValueError:
            continue
        # planted copies may overwrite each other; keep what was realised
        break
    return SequenceRecord(f"s{i}", seq, target)


def regression_target(seq: str, motif: str) -> float:
    """Noise-free regression target: ``log1p`` of the orientation-free hit count."""
    return float(np.log1p(len({p for p, _ in hit_positions(seq, motif)})))


def _regression_example(spec: TaskSpec, i: int) -> SequenceRecord:
    rng = example_rng(spec.seed, i)
    motif = spec.motifs[0]
    n_hits = int(rng.poisson(spec.motif_rate))
    seq = random_background(rng, spec.length)
    for _ in range(n_hits):
        pattern = motif if rng.random() < 0.5 else revcomp(motif)
        seq = _plant(seq, pattern, int(rng.integers(0, spec.length - len(motif) + 1)))
    y = regression_target(seq, motif) + spec.noise * float(rng.standard_normal())
    return SequenceRecord(f"s{i}", seq, y)


def strand_plus_sequence(rng: np.random.Generator, spec: TaskSpec) -> str:
    """A class-1 sequence: exactly one forward marker, no reverse-complement marker."""
    marker = spec.motifs[0]
    rc = revcomp(marker)
    while True:
        seq = random_background(rng, spec.length)
        seq = _plant(seq, marker, int(rng.integers(0, spec.length - len(marker) + 1)))
        if len(find_all(seq, marker)) == 1 and rc not in seq:
            return seq


def strand_label(seq: str, marker: str) -> int:
    """Noise-free ground truth of the strand task: 1 iff the marker reads forward."""
    fwd, rc = marker in seq, revcomp(marker) in seq
    if fwd == rc:
        raise ValueError("marker orientation is ambiguous")
    return int(fwd)


def _strand_example(spec: TaskSpec, i: int) -> SequenceRecord:
    rng = example_rng(spec.seed, i)
    plus = rng.random() < 0.5
    seq = strand_plus_sequence(rng, spec)
    if not plus:
        seq = revcomp(seq)
    label = _maybe_flip(rng, int(plus), spec.noise)
    return SequenceRecord(f"s{i}", seq, label)


_GENERATORS = {
    "rc-invariant-classification": _invariant_example,
    "rc-equivariant-profile": _profile_example,
    "scalar-regression": _regression_example,
    "strand-control": _strand_example,
}


def generate_records(spec: TaskSpec, n: int | None = None) -> list[SequenceRecord]:
    n = spec.n_train + spec.n_val + spec.n_test if n is None else n
    gen = _GENERATORS[spec.kind]
    return [gen(spec, i) for i in range(n)]


def _generate(spec: TaskSpec, kind: str) -> Dataset:
    if spec.kind != kind:
        raise ConfigError(f"spec kind {spec.kind!r} does not match generator {kind!r}", "task.kind")
    records = generate_records(spec)
    total = len(records)
    fractions = (spec.n_train / total, spec.n_val / total, spec.n_test / total)
    ds = split_rc_safe(records, fractions, seed=spec.seed)
    ds.spec = spec
    return ds


def gen_rc_invariant_classification(spec: TaskSpec) -> Dataset:
    return _generate(spec, "rc-invariant-classification")


def gen_rc_equivariant_profile(spec: TaskSpec) -> Dataset:
    return _generate(spec, "rc-equivariant-profile")


def gen_scalar_regression(spec: TaskSpec) -> Dataset:
    return _generate(spec, "scalar-regression")


def gen_strand_control(spec: TaskSpec) -> Dataset:
    return _generate(spec, "strand-control")


def generate(spec: TaskSpec) -> Dataset:
    return _generate(spec, spec.kind)


# -- splitting -------------------------------------------------------------


def split_rc_safe(records, fractions=(0.8, 0.1, 0.1), seed: int = 2025) -> Dataset:
    """Assign whole RC-equivalence groups to train/val/test.

    Sequences are keyed by ``min(x, RC(x))``; groups are shuffled with
    ``seed`` and filled in order until each split reaches its target size.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) <= 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    groups: dict[str, list[SequenceRecord]] = {}
    for r in records:
        groups.setdefault(canonical(r.seq), []).append(r)
    if len(groups) < 3:
        raise SplitError(f"need at least 3 RC groups, got {len(groups)}")
    keys = list(groups)
    order = np.random.default_rng(seed).permutation(len(keys))
    total = len(records)
    target_train = round(fractions[0] * total)
    target_val = round((fractions[0] + fractions[1]) * total)
    out: list[list[SequenceRecord]] = [[], [], []]
    placed = 0
    for j in order:
        g = groups[keys[j]]
        dest = 0 if placed < target_train else 1 if placed < target_val else 2
        out[dest].extend(g)
        placed += len(g)
    if not all(out):
        raise SplitError("a split came out empty; groups too coarse for these fractions")
    ds = Dataset(*out)
    ds.check_rc_safe()
    return ds


# -- files -----------------------------------------------------------------


def export_dataset(ds: Dataset, directory, fmt: str = "tsv") -> list[str]:
    """Write each split as ``<split>.tsv`` (id, sequence, label) or as
    ``<split>.fasta`` plus a ``<split>.labels.tsv`` sidecar (id, label).

    Labels are JSON text: an integer class, a real, or a nested list for
    profiles.
    """
    os.makedirs(directory, exist_ok=True)
    written = []
    for name in ds.splits:
        recs = ds.split(name)
        if fmt == "tsv":
            path = os.path.join(directory, f"{name}.tsv")
            write_tsv(recs, path)
            written.append(path)
        elif fmt == "fasta":
            fa = os.path.join(directory, f"{name}.fasta")
            side = os.path.join(directory, f"{name}.labels.tsv")
            write_fasta(recs, fa)
            with open(side, "w", newline="\n") as fh:
                fh.write("id\tlabel\n")
                for r in recs:
                    fh.write(f"{r.id}\t{encode_label(r.label)}\n")
            written += [fa, side]
        else:
            raise ValueError(f"unknown export format {fmt!r}")
    return written


def _read_split(directory, name) -> list[SequenceRecord]:
    tsv = os.path.join(directory, f"{name}.tsv")
    if os.path.exists(tsv):
        return read_tsv(tsv)
    fa = os.path.join(directory, f"{name}.fasta")
    if not os.path.exists(fa):
        raise FileNotFoundError(f"no {name}.tsv or {name}.fasta in {directory}")
    with open(fa, "rb") as fh:
        recs = parse_fasta(fh)
    side = os.path.join(directory, f"{name}.labels.tsv")
    if not os.path.exists(side):
        return recs
    labels = {}
    with open(side) as fh:
        next(fh)
        for line in fh:
            rid, _, text = line.rstrip("\n").partition("\t")
            labels[rid] = decode_label(text)
    return [SequenceRecord(r.id, r.seq, labels.get(r.id)) for r in recs]


def load_dataset(directory, spec: TaskSpec | None = None) -> Dataset:
    return Dataset(*(_read_split(directory, n) for n in ("train", "val", "test")), spec=spec)
