import itertools
import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from amisec import sequencer as sq
from amisec.oracles import oracle_first_pick, oracle_fisher_yates
from amisec.sequencer import (OrderingError, RandomSequence, SegmentationError, SequencerError,
                              TransmissionOrder)


def test_n2_with_previous_forces_other_order():
    prev = RandomSequence((1, 2))
    gen = np.random.default_rng(0)
    for _ in range(20):
        assert sq.gen_sequence(gen, 2, prev).values == (2, 1)


def test_gen_sequence_reproducible():
    a = sq.gen_sequence(np.random.default_rng(4), 32)
    b = sq.gen_sequence(np.random.default_rng(4), 32)
    assert a == b
    assert sorted(a.values) == list(range(1, 33))


def test_gen_sequence_rejects_small_n():
    with pytest.raises(SequencerError):
        sq.gen_sequence(np.random.default_rng(0), 1)
    with pytest.raises(SequencerError):
        RandomSequence((1, 1, 2))


def test_fisher_yates_uniform():
    ok, detail = oracle_fisher_yates()
    assert ok, detail


def test_weights_exact():
    np.testing.assert_allclose(sq.block_weights(RandomSequence((1, 2))), [2 / 3, 1 / 3], rtol=0, atol=1e-15)
    np.testing.assert_allclose(sq.block_weights(RandomSequence((2, 1))), [1 / 3, 2 / 3], rtol=0, atol=1e-15)


@given(st.permutations(list(range(1, 17))))
def test_weights_normalized_and_ranked(perm):
    S = RandomSequence(tuple(perm))
    w = sq.block_weights(S)
    assert abs(w.sum() - 1) < 1e-12
    # smaller s_i means larger weight
    assert list(np.argsort(-w, kind="stable")) == list(np.argsort(perm, kind="stable"))


def test_first_pick_frequency():
    ok, detail = oracle_first_pick()
    assert ok, detail


def test_weighted_order_picks_by_cumulative_weight():
    assert sq.weighted_order([0.5, 0.25, 0.25], [0.1, 0.1]) == (1, 2, 3)
    assert sq.weighted_order([0.5, 0.25, 0.25], [0.9, 0.9]) == (3, 2, 1)
    assert sq.weighted_order([0.5, 0.25, 0.25], [0.6, 0.0]) == (2, 1, 3)


def test_derive_order_frozen_n3():
    want = {(1, 2, 3): (1, 2, 3), (1, 3, 2): (3, 1, 2), (2, 1, 3): (3, 1, 2),
            (2, 3, 1): (1, 3, 2), (3, 1, 2): (2, 3, 1), (3, 2, 1): (3, 1, 2)}
    for s, o in want.items():
        assert sq.derive_order(RandomSequence(s)).order == o


@given(st.permutations(list(range(1, 33))))
def test_derive_order_is_bijection_and_pure(perm):
    S = RandomSequence(tuple(perm))
    o = sq.derive_order(S)
    assert sorted(o.order) == list(range(1, 33))
    assert sq.derive_order(RandomSequence(tuple(perm))) == o


def test_derive_order_same_in_fresh_process():
    S = RandomSequence(tuple(range(32, 0, -1)))
    code = ("from amisec.sequencer import *; "
            "print(derive_order(RandomSequence(tuple(range(32, 0, -1)))).order)")
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True,
                         env={"PYTHONHASHSEED": "123", "PATH": ""})
    assert out.stdout.strip() == str(sq.derive_order(S).order)


def test_segment_256_bits_into_32():
    bs = sq.segment(bytes(range(32)), 32)
    assert len(bs.blocks) == 32 and bs.block_bits == 8 and bs.pad_len == 0
    assert bs.join() == bytes(range(32))


def test_segment_errors():
    with pytest.raises(SegmentationError):
        sq.segment(b"abc", 1)
    with pytest.raises(SegmentationError):
        sq.segment(b"a", 9)


def test_segment_pads_tail():
    bs = sq.segment(b"abcde", 4)
    assert bs.pad_len == 3
    assert all(len(b) == 2 for b in bs.blocks)
    assert bs.join() == b"abcde"


@given(st.binary(min_size=1, max_size=300), st.integers(2, 64), st.randoms(use_true_random=False))
def test_order_round_trip(c, n, rnd):
    n = min(n, 8 * len(c))
    vals = list(range(1, n + 1))
    rnd.shuffle(vals)
    o = sq.derive_order(RandomSequence(tuple(vals)))
    bs = sq.segment(c, n)
    h = sq.apply_order(bs, o)
    assert sq.invert_order(h, o, bs.pad_len).join() == c


def test_apply_order_identity_and_swap():
    blocks = [b"a", b"b", b"c"]
    assert sq.apply_order(blocks, TransmissionOrder((1, 2, 3))) == blocks
    assert sq.apply_order(blocks, TransmissionOrder((2, 1, 3))) == [b"b", b"a", b"c"]


def test_invert_order_errors():
    o = TransmissionOrder((2, 1, 3))
    with pytest.raises(OrderingError):
        sq.invert_order([b"a", None, b"c"], o)
    with pytest.raises(OrderingError):
        sq.invert_order([b"a", b"b"], o)
    with pytest.raises(OrderingError):
        TransmissionOrder((1, 1, 2))


def test_entropy_examples():
    assert sq.shannon_entropy(np.full(256, 1 / 256)) == 8.0
    assert sq.uniform_entropy(2**256) == 256.0
    assert sq.shannon_entropy([1.0, 0.0]) == 0.0
    assert abs(sq.shannon_entropy([0.5, 0.25, 0.25]) - 1.5) < 1e-15


@pytest.mark.parametrize("dist", [[0.5, 0.6], [-0.1, 1.1], [], [float("nan"), 1.0]])
def test_entropy_invalid(dist):
    with pytest.raises(ValueError):
        sq.shannon_entropy(dist)


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=40).filter(lambda v: sum(v) > 0))
def test_entropy_bounds(raw):
    p = np.array(raw) / sum(raw)
    h = sq.shannon_entropy(p)
    assert -1e-12 <= h <= math.log2(len(p)) + 1e-9


def test_permutation_entropy_32():
    assert abs(sq.permutation_entropy(32) - math.log2(math.factorial(32))) < 1e-9
    assert round(sq.permutation_entropy(32), 2) == 117.66


def test_strength_report():
    rep = sq.strength_report(256, 32, 256)
    assert rep.strength == 2**256 + 2**128
    assert rep.terms == "2^256 + 2^128"
    assert sq.strength_report(8, 2, 8).strength == 272
    assert rep.to_csv().splitlines()[0] == ",".join(rep.CSV_COLUMNS)
    with pytest.raises(ValueError):
        sq.strength_report(256, 30, 256)


def test_sequence_bytes_round_trip():
    for perm in itertools.permutations((1, 2, 3, 4)):
        S = RandomSequence(perm)
        assert RandomSequence.from_bytes(S.to_bytes()) == S
    with pytest.raises(SequencerError):
        RandomSequence.from_bytes(b"\x00\x05\x00\x01")
