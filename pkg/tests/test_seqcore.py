import io
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rccr.seqcore import (
    FastaParseError,
    SequenceError,
    SequenceRecord,
    canonical,
    complement_base,
    decode_label,
    encode_label,
    filter_ambiguous,
    one_hot,
    one_hot_batch,
    parse_fasta,
    read_fasta,
    read_tsv,
    reverse_complement,
    revcomp,
    revcomp_onehot,
    write_fasta,
    write_tsv,
)

dna = st.text(alphabet="ACGTN", min_size=1, max_size=512)


def test_complement_base():
    assert complement_base("A") == "T"
    assert complement_base("N") == "N"
    assert complement_base(complement_base("G")) == "G"
    with pytest.raises(SequenceError):
        complement_base("X")


def test_reverse_complement_examples():
    assert revcomp("ACGT") == "ACGT"
    assert revcomp("AAACCC") == "GGGTTT"
    rec = SequenceRecord("r", "AAACCC", label=7)
    rc = reverse_complement(rec)
    assert rc.seq == "GGGTTT" and rc.label == 7 and rc.id == "r"


def test_revcomp_involution_random():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 513))
        s = "".join(rng.choice(list("ACGTN"), n))
        rec = SequenceRecord("x", s)
        assert reverse_complement(reverse_complement(rec)) == rec


@given(dna)
def test_revcomp_is_involution(s):
    assert revcomp(revcomp(s)) == s
    assert canonical(s) == canonical(revcomp(s))


def test_one_hot_examples():
    np.testing.assert_array_equal(one_hot("A"), [[1, 0, 0, 0]])
    np.testing.assert_array_equal(one_hot("N"), [[0, 0, 0, 0]])
    with pytest.raises(SequenceError):
        one_hot("ACX")


@given(dna)
@settings(max_examples=200)
def test_one_hot_commutes_with_revcomp(s):
    np.testing.assert_array_equal(one_hot(revcomp(s)), revcomp_onehot(one_hot(s)))


def test_one_hot_batch_shapes():
    x = one_hot_batch(["ACGT", "NNAA"])
    assert x.shape == (2, 4, 4)
    np.testing.assert_array_equal(revcomp_onehot(x)[1], one_hot(revcomp("NNAA")))
    with pytest.raises(ValueError):
        one_hot_batch(["AC", "ACG"])


def test_record_validation():
    with pytest.raises(SequenceError):
        SequenceRecord("r", "")
    with pytest.raises(SequenceError, match="'X'"):
        SequenceRecord("r", "ACXT")


def test_parse_fasta_examples():
    recs = parse_fasta(b">r1\nacgt\n")
    assert [(r.id, r.seq) for r in recs] == [("r1", "ACGT")]
    recs = parse_fasta(io.BytesIO(b">r1\nAC\nGT\n"))
    assert recs[0].seq == "ACGT"
    recs = parse_fasta(">a desc\nAC\n\n>b\nNN\r\n")
    assert [(r.id, r.seq) for r in recs] == [("a", "AC"), ("b", "NN")]


def test_parse_fasta_errors():
    with pytest.raises(FastaParseError) as err:
        parse_fasta(b"AC\n")
    assert err.value.line == 1
    with pytest.raises(FastaParseError, match=r"'Z'.*'r2'") as err:
        parse_fasta(b">r1\nAC\n>r2\nAZ\n")
    assert err.value.line == 4
    with pytest.raises(FastaParseError):
        parse_fasta(b">r1\n>r2\nAC\n")


def test_fasta_round_trip(tmp_path):
    recs = [SequenceRecord("a", "ACGT" * 50), SequenceRecord("b", "N")]
    path = tmp_path / "x.fa"
    write_fasta(recs, path, width=60)
    assert read_fasta(path) == recs


def test_tsv_round_trip(tmp_path):
    recs = [
        SequenceRecord("a", "ACGT", 1),
        SequenceRecord("b", "GGCC", 0.25),
        SequenceRecord("c", "TTAA", np.array([[0.0, 1.0], [2.0, 0.0]])),
    ]
    path = tmp_path / "x.tsv"
    write_tsv(recs, path)
    back = read_tsv(path)
    assert [r.seq for r in back] == [r.seq for r in recs]
    assert back[0].label == 1 and back[1].label == 0.25
    np.testing.assert_array_equal(back[2].label, recs[2].label)


def test_tsv_errors():
    with pytest.raises(FastaParseError):
        read_tsv(io.StringIO("name\tseq\n"))
    with pytest.raises(FastaParseError) as err:
        read_tsv(io.StringIO("id\tsequence\tlabel\na\tACQ\t1\n"))
    assert err.value.line == 2


def test_label_codec():
    assert encode_label(None) == "" and decode_label("") is None
    assert decode_label(encode_label(np.int64(3))) == 3
    np.testing.assert_array_equal(decode_label(encode_label([1, 2])), [1.0, 2.0])


def test_filter_ambiguous():
    recs = [SequenceRecord("a", "ACGTN"), SequenceRecord("b", "NNACG")]
    assert [r.id for r in filter_ambiguous(recs, 0.2)] == ["a"]


def test_exhaustive_short_involution():
    for n in range(1, 7):
        for bases in itertools.product("ACGTN", repeat=n):
            s = "".join(bases)
            assert revcomp(revcomp(s)) == s
