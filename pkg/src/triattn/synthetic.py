"""Context-gated sentence-pair matching task.

Token layout: ``0, 1, 2`` are PAD/CLS/SEP, ``3`` and ``4`` are the two gate
tokens, the next ``n_anchors`` ids are anchors and everything above is
filler. Anchors fall into two groups by parity of their offset.

Each sequence holds exactly one anchor plus fillers; one gate token sits in
one of the two sequences. The pair matches when

* gate ``3`` ("same"): both anchors are in the same group,
* gate ``4`` ("differ"): the anchors are in different groups,

with the label flipped with probability ``1 - context_gate_strength``.

The two anchor groups and the gate are each uniform, and any two of them are
independent of the label. A classifier that looks at only one sequence, or
that ignores the gate, is therefore at chance. Fillers never repeat within a
pair, so token overlap carries no signal either.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import N_SPECIAL, Example

GATE_TOKENS = (3, 4)
FIRST_ANCHOR = N_SPECIAL + len(GATE_TOKENS)


@dataclass(frozen=True)
class SyntheticSpec:
    vocab_size: int = 50
    seq_len: int = 8
    n_train: int = 2000
    n_test: int = 500
    context_gate_strength: float = 1.0
    seed: int = 0
    n_anchors: int = 6

    def validate(self) -> None:
        if self.seq_len < 3:
            raise ValueError(f"seq_len must be >= 3, got {self.seq_len}")
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("n_train and n_test must be >= 1")
        if not 0.5 < self.context_gate_strength <= 1.0:
            raise ValueError(f"context_gate_strength must be in (0.5, 1], got {self.context_gate_strength}")
        if self.n_anchors < 2 or self.n_anchors % 2:
            raise ValueError(f"n_anchors must be even and >= 2, got {self.n_anchors}")
        need = FIRST_ANCHOR + self.n_anchors + 2 * self.seq_len - 3
        if self.vocab_size < need:
            raise ValueError(
                f"vocab_size {self.vocab_size} too small: seq_len {self.seq_len} with "
                f"{self.n_anchors} anchors needs at least {need}"
            )

    @property
    def fillers(self) -> np.ndarray:
        return np.arange(FIRST_ANCHOR + self.n_anchors, self.vocab_size)

    def anchor_pool(self, group: int) -> np.ndarray:
        anchors = np.arange(FIRST_ANCHOR, FIRST_ANCHOR + self.n_anchors)
        return anchors[anchor_group(anchors) == group]


def anchor_group(token):
    return (token - FIRST_ANCHOR) % 2


def _pair(rng: np.random.Generator, spec: SyntheticSpec, label: int) -> Example:
    L = spec.seq_len
    consistent = rng.random() < spec.context_gate_strength
    rule_label = label if consistent else 1 - label
    gate = int(rng.integers(2))
    ga = int(rng.integers(2))
    same = bool(rule_label) == (gate == 0)
    gb = ga if same else 1 - ga
    xa = int(rng.choice(spec.anchor_pool(ga)))
    xb = int(rng.choice(spec.anchor_pool(gb)))

    gate_side = int(rng.integers(2))
    fill = [int(t) for t in rng.choice(spec.fillers, size=2 * L - 3, replace=False)]
    n_a = L - 2 if gate_side == 0 else L - 1
    a = [xa] + fill[:n_a]
    b = [xb] + fill[n_a:]
    (a if gate_side == 0 else b).append(GATE_TOKENS[gate])
    return Example(tuple(int(t) for t in rng.permutation(a)), tuple(int(t) for t in rng.permutation(b)), label)


def _split(rng, spec, n):
    labels = rng.permutation(np.array([1] * (n // 2) + [0] * (n - n // 2)))
    return [_pair(rng, spec, int(y)) for y in labels]


def gen_synthetic(spec: SyntheticSpec) -> tuple[list[Example], list[Example]]:
    """Train and test example lists, deterministic in ``spec.seed``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    train = _split(rng, spec, spec.n_train)
    test = _split(rng, spec, spec.n_test)
    return train, test


# --- reference classifiers ------------------------------------------------------

def _anchor_in(seq, n_anchors):
    found = [t for t in seq if FIRST_ANCHOR <= t < FIRST_ANCHOR + n_anchors]
    if len(found) != 1:
        raise ValueError(f"expected one anchor per sequence, found {found}")
    return found[0]


def rule_oracle(ex: Example, n_anchors: int = SyntheticSpec.n_anchors) -> int:
    """Read the gate, compare the groups of the two anchors."""
    gates = [GATE_TOKENS.index(t) for t in ex.seq_a + ex.seq_b if t in GATE_TOKENS]
    if len(gates) != 1:
        raise ValueError(f"expected exactly one gate token, found {len(gates)}")
    same = anchor_group(_anchor_in(ex.seq_a, n_anchors)) == anchor_group(_anchor_in(ex.seq_b, n_anchors))
    return int(same == (gates[0] == 0))


def overlap_feature(ex: Example) -> int:
    return len((set(ex.seq_a) & set(ex.seq_b)) - {0, 1, 2})


class OverlapBaseline:
    """Threshold on the number of shared token types, fitted on training data."""

    def fit(self, examples: Sequence[Example]) -> "OverlapBaseline":
        feats = np.array([overlap_feature(ex) for ex in examples])
        labels = np.array([ex.label for ex in examples])
        best = (-1.0, 0, 1)
        for thr in np.unique(np.concatenate([feats, feats + 1])):
            for sign in (1, 0):
                pred = (feats >= thr).astype(int) if sign else (feats < thr).astype(int)
                acc = float(np.mean(pred == labels))
                if acc > best[0]:
                    best = (acc, int(thr), sign)
        _, self.threshold, self.sign = best
        return self

    def predict(self, ex: Example) -> int:
        above = overlap_feature(ex) >= self.threshold
        return int(above) if self.sign else int(not above)


def accuracy(predict, examples: Sequence[Example]) -> float:
    return float(np.mean([predict(ex) == ex.label for ex in examples]))


# --- dataset files ----------------------------------------------------------------

def write_jsonl(path, examples: Sequence[Example]) -> None:
    lines = [json.dumps(ex.to_record(), separators=(",", ":")) for ex in examples]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_jsonl(path) -> list[Example]:
    out = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        try:
            out.append(Example(rec["seq_a"], rec["seq_b"], rec["label"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{n}: bad record {line!r}") from exc
    return out
