import hashlib
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from triattn.model import Example
from triattn.synthetic import (
    FIRST_ANCHOR,
    GATE_TOKENS,
    OverlapBaseline,
    SyntheticSpec,
    accuracy,
    anchor_group,
    gen_synthetic,
    overlap_feature,
    read_jsonl,
    rule_oracle,
    write_jsonl,
)

SPEC = SyntheticSpec(n_train=400, n_test=200)


def test_rule_oracle_on_hand_made_pairs():
    same_gate, differ_gate = GATE_TOKENS
    a0, a1 = FIRST_ANCHOR, FIRST_ANCHOR + 1  # groups 0 and 1
    assert rule_oracle(Example((a0, 20, same_gate), (a0 + 2, 21), 1)) == 1
    assert rule_oracle(Example((a0, 20), (a1, 21, same_gate), 0)) == 0
    assert rule_oracle(Example((a0, 20, differ_gate), (a1, 21), 1)) == 1
    assert rule_oracle(Example((a1, 20), (a1, differ_gate), 0)) == 0
    with pytest.raises(ValueError):
        rule_oracle(Example((a0, 20), (a1, 21), 0))


@pytest.mark.parametrize("seed", range(3))
def test_rule_oracle_is_perfect_at_full_strength(seed):
    train, test = gen_synthetic(replace(SPEC, seed=seed))
    assert accuracy(rule_oracle, train) == 1.0
    assert accuracy(rule_oracle, test) == 1.0


def test_overlap_baseline_near_chance():
    train, test = gen_synthetic(SyntheticSpec())
    base = OverlapBaseline().fit(train)
    assert accuracy(base.predict, test) <= 0.6


def test_gate_strength_sets_oracle_ceiling():
    train, test = gen_synthetic(replace(SPEC, n_train=4000, context_gate_strength=0.8))
    assert abs(accuracy(rule_oracle, train) - 0.8) < 0.03


@settings(max_examples=20, deadline=None)
@given(n_train=st.integers(1, 60), n_test=st.integers(1, 30), seed=st.integers(0, 10**6),
       strength=st.floats(0.51, 1.0))
def test_balance_and_layout(n_train, n_test, seed, strength):
    spec = SyntheticSpec(n_train=n_train, n_test=n_test, seed=seed, context_gate_strength=strength)
    train, test = gen_synthetic(spec)
    assert len(train) == n_train and len(test) == n_test
    for split in (train, test):
        pos = sum(ex.label for ex in split)
        assert abs(pos - (len(split) - pos)) <= 1
    for ex in train:
        assert len(ex.seq_a) == len(ex.seq_b) == spec.seq_len
        tokens = ex.seq_a + ex.seq_b
        assert sum(t in GATE_TOKENS for t in tokens) == 1
        assert all(3 <= t < spec.vocab_size for t in tokens)
        fillers = [t for t in tokens if t >= FIRST_ANCHOR + spec.n_anchors]
        assert len(fillers) == len(set(fillers))


def test_single_views_are_uninformative():
    """Each of the three latent bits, and each pair of them, is independent of the label."""
    train, _ = gen_synthetic(replace(SPEC, n_train=6000))
    rows = []
    for ex in train:
        ga = anchor_group([t for t in ex.seq_a if FIRST_ANCHOR <= t < FIRST_ANCHOR + 6][0])
        gb = anchor_group([t for t in ex.seq_b if FIRST_ANCHOR <= t < FIRST_ANCHOR + 6][0])
        g = [GATE_TOKENS.index(t) for t in ex.seq_a + ex.seq_b if t in GATE_TOKENS][0]
        rows.append((ga, gb, g, ex.label))
    rows = np.array(rows)
    for cols in ([0], [1], [2], [0, 1], [0, 2], [1, 2]):
        for key in {tuple(r[cols]) for r in rows}:
            sel = np.all(rows[:, cols] == key, axis=1)
            assert abs(rows[sel, 3].mean() - 0.5) < 0.06


def test_deterministic_and_seed_sensitive(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_jsonl(a, gen_synthetic(SPEC)[0])
    write_jsonl(b, gen_synthetic(SPEC)[0])
    digest = lambda p: hashlib.sha256(p.read_bytes()).hexdigest()
    assert digest(a) == digest(b)
    write_jsonl(b, gen_synthetic(replace(SPEC, seed=1))[0])
    assert digest(a) != digest(b)


def test_jsonl_round_trip(tmp_path):
    train, _ = gen_synthetic(SPEC)
    path = tmp_path / "d.jsonl"
    write_jsonl(path, train)
    assert read_jsonl(path) == train
    assert path.read_text().splitlines()[0].startswith('{"seq_a":[')


def test_jsonl_bad_record(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"seq_a":[5],"seq_b":[6],"label":1}\n{"seq_a":[5],"label":0}\n')
    with pytest.raises(ValueError, match=":2:"):
        read_jsonl(path)


@pytest.mark.parametrize("kw", [
    {"seq_len": 2}, {"n_train": 0}, {"n_test": 0}, {"context_gate_strength": 0.5},
    {"context_gate_strength": 1.01}, {"vocab_size": 20}, {"n_anchors": 3},
])
def test_invalid_specs(kw):
    with pytest.raises(ValueError):
        gen_synthetic(replace(SyntheticSpec(), **kw))


def test_overlap_feature_counts_shared_types():
    assert overlap_feature(Example((5, 6, 7), (7, 6, 9), 0)) == 2
    assert overlap_feature(Example((1, 5), (1, 2, 6), 0)) == 0
