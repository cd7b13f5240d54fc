"""Desk-scale Tri-Attention network (TAN) and its Bi / C-Bi baselines.

Pipeline per sentence pair: embed both sequences with a lookup table, build
the context from ``[CLS] a [SEP] b [SEP]``, run ``layers`` interaction
layers, mean-pool, classify.

In every interaction layer sequence ``a`` attends over ``b`` and ``b`` over
``a`` with the same layer parameters; layer ``n + 1`` consumes layer ``n``'s
outputs while the context stays fixed. ``mode`` picks the attention path:

* ``tri``  -- Tri-Attention with the context as third dimension,
* ``bi``   -- Bi-Attention, context only reaches the pooled features,
* ``c_bi`` -- pooled context added to every position, then Bi-Attention.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bi_attention import BiParams, BiVariant, bi_forward, init_bi_params
from .grad import bi_backward, tri_backward
from .tensor_core import ShapeError
from .tri_attention import (
    DEFAULT_INTEGRATION,
    TriParams,
    TriVariant,
    ValueIntegration,
    check_tri_params,
    init_tri_params,
    tri_forward,
)

PAD, CLS, SEP = 0, 1, 2
N_SPECIAL = 3
MODES = ("tri", "bi", "c_bi")
STATE_FORMAT = "triattn.tan_state"
STATE_VERSION = 1

BI_FOR_TRI = {
    TriVariant.TADD: BiVariant.ADD,
    TriVariant.TDP: BiVariant.DP,
    TriVariant.TSDP: BiVariant.SDP,
    TriVariant.TRILI_FULL: BiVariant.BILI,
    TriVariant.TRILI_ECON: BiVariant.BILI,
}


class TrainingError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class Example:
    seq_a: tuple[int, ...]
    seq_b: tuple[int, ...]
    label: int

    def __post_init__(self):
        object.__setattr__(self, "seq_a", tuple(int(t) for t in self.seq_a))
        object.__setattr__(self, "seq_b", tuple(int(t) for t in self.seq_b))
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")

    def to_record(self) -> dict:
        return {"seq_a": list(self.seq_a), "seq_b": list(self.seq_b), "label": int(self.label)}


@dataclass
class TanConfig:
    mode: str = "tri"
    variant: TriVariant = TriVariant.TDP
    integration: ValueIntegration | None = None
    layers: int = 1
    D: int = 16
    vocab_size: int = 50
    max_seq_len: int = 32
    dropout_rate: float = 0.1
    residual: bool = False
    seed: int = 0
    learning_rate: float = 0.1
    batch_size: int = 32
    epochs: int = 10
    optimizer: str = "sgd"
    init_scale: float | None = None

    def __post_init__(self):
        if isinstance(self.variant, str):
            self.variant = TriVariant(self.variant)
        if isinstance(self.integration, str):
            self.integration = ValueIntegration(self.integration)
        if self.integration is None:
            self.integration = DEFAULT_INTEGRATION[self.variant]
        self.mode = self.mode.replace("-", "_")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 1 <= self.layers <= 8:
            raise ValueError(f"layers must be within 1..8, got {self.layers}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.D < 1 or self.vocab_size <= N_SPECIAL or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("D, batch_size must be positive, vocab_size > 3, epochs >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")

    @property
    def bi_variant(self) -> BiVariant:
        return BI_FOR_TRI[self.variant]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["integration"] = self.integration.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TanConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ToyEncoder:
    """Embedding lookup standing in for a pretrained sentence encoder.

    ``table`` is ``D x vocab_size``; column ``t`` embeds token ``t``.
    """

    table: np.ndarray
    cls_id: int = CLS
    sep_id: int = SEP
    pad_id: int = PAD

    @property
    def vocab_size(self) -> int:
        return self.table.shape[1]

    @property
    def D(self) -> int:
        return self.table.shape[0]

    def check_ids(self, ids: Iterable[int]) -> None:
        for t in ids:
            if not 0 <= t < self.vocab_size:
                raise ValueError(f"token id {t} outside vocabulary of size {self.vocab_size}")

    def encode(self, ids: Sequence[int]) -> np.ndarray:
        """``D x len(ids)`` matrix of embeddings."""
        self.check_ids(ids)
        return self.table[:, list(ids)]


@dataclass
class TanState:
    encoder: ToyEncoder
    layers: list = field(default_factory=list)  # TriParams or BiParams per layer
    Wc: np.ndarray = None
    bc: np.ndarray = None

    def arrays(self) -> dict[str, np.ndarray]:
        """Every learnable array by stable name (references, not copies)."""
        out = {"table": self.encoder.table}
        for l, P in enumerate(self.layers):
            for name, arr in P.blocks().items():
                out[f"layer{l}.{name}"] = arr
        out["Wc"] = self.Wc
        out["bc"] = self.bc
        return out

    def copy(self) -> "TanState":
        layers = [type(P)(**{k: v.copy() for k, v in P.blocks().items()}) for P in self.layers]
        enc = ToyEncoder(self.encoder.table.copy(), self.encoder.cls_id,
                         self.encoder.sep_id, self.encoder.pad_id)
        return TanState(enc, layers, self.Wc.copy(), self.bc.copy())


def init_state(config: TanConfig, rng: np.random.Generator | None = None) -> TanState:
    """Uniform(-a, a) matrices with ``a = 1/sqrt(D)`` (or ``init_scale``); zero bias and ``p``."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    D = config.D
    a = 1.0 / math.sqrt(D) if config.init_scale is None else config.init_scale
    table = rng.uniform(-a, a, (D, config.vocab_size))
    layers = []
    for _ in range(config.layers):
        if config.mode == "tri":
            layers.append(init_tri_params(config.variant, config.integration, D, rng, scale=a))
        else:
            layers.append(init_bi_params(config.bi_variant, D, rng, scale=a))
    Wc = rng.uniform(-a, a, (2, 4 * D))
    return TanState(ToyEncoder(table), layers, Wc, np.zeros(2))


# --- input construction -------------------------------------------------------

def filter_tokens(seq: Sequence[int], max_seq_len: int) -> list[int]:
    """Keep at most the first ``max_seq_len`` tokens."""
    return list(seq[: max(max_seq_len, 0)])


def context_ids(seq_a: Sequence[int], seq_b: Sequence[int], encoder: ToyEncoder | None = None) -> list[int]:
    cls_id = CLS if encoder is None else encoder.cls_id
    sep_id = SEP if encoder is None else encoder.sep_id
    return [cls_id, *seq_a, sep_id, *seq_b, sep_id]


def build_context(seq_a: Sequence[int], seq_b: Sequence[int], encoder: ToyEncoder) -> np.ndarray:
    """Context matrix ``D x J`` from ``[CLS] a [SEP] b [SEP]``, ``J = len(a) + len(b) + 3``."""
    if len(seq_a) == 0 or len(seq_b) == 0:
        raise ValueError("both sequences must be non-empty to build a context")
    return encoder.encode(context_ids(seq_a, seq_b, encoder))


# --- batched forward / backward ----------------------------------------------

@dataclass
class _Batch:
    ids_a: np.ndarray  # (B, La)
    ids_b: np.ndarray  # (B, Lb)
    ids_c: np.ndarray | None  # (B, J); None when the context is given explicitly
    labels: np.ndarray  # (B,)
    context: np.ndarray | None = None  # (B, J, D) override


def _make_batches(examples: Sequence[Example], config: TanConfig, encoder: ToyEncoder) -> list[_Batch]:
    """Filter, validate and group examples by (len a, len b); order of first appearance."""
    groups: dict[tuple[int, int], list] = {}
    for ex in examples:
        a = filter_tokens(ex.seq_a, config.max_seq_len)
        b = filter_tokens(ex.seq_b, config.max_seq_len)
        if not a or not b:
            raise ValueError("sequences must be non-empty after filtering")
        encoder.check_ids(a)
        encoder.check_ids(b)
        groups.setdefault((len(a), len(b)), []).append((a, b, ex.label))
    out = []
    for rows in groups.values():
        ids_a = np.array([r[0] for r in rows], dtype=np.intp)
        ids_b = np.array([r[1] for r in rows], dtype=np.intp)
        ids_c = np.array([context_ids(r[0], r[1], encoder) for r in rows], dtype=np.intp)
        out.append(_Batch(ids_a, ids_b, ids_c, np.array([r[2] for r in rows], dtype=np.intp)))
    return out


def _softmax_rows(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _forward(state: TanState, config: TanConfig, batch: _Batch, train_mode: bool,
             rng: np.random.Generator | None):
    E = state.encoder.table.T
    a = E[batch.ids_a]
    b = E[batch.ids_b]
    C = batch.context if batch.context is not None else E[batch.ids_c]
    if config.mode == "c_bi":
        cmean = C.mean(axis=1, keepdims=True)
        a = a + cmean
        b = b + cmean
    caches = []
    for P in state.layers:
        if config.mode == "tri":
            a_new, ca = tri_forward(a, b, b, C, config.variant, config.integration, P)
            b_new, cb = tri_forward(b, a, a, C, config.variant, config.integration, P)
        else:
            a_new, ca = bi_forward(a, b, b, config.bi_variant, P)
            b_new, cb = bi_forward(b, a, a, config.bi_variant, P)
        if config.residual:
            a_new = a_new + a
            b_new = b_new + b
        caches.append((ca, cb))
        a, b = a_new, b_new
    pa, pb, pc = a.mean(axis=1), b.mean(axis=1), C.mean(axis=1)
    diff = pa - pb
    h = np.concatenate([pa, pb, pc, np.abs(diff)], axis=1)
    mask = None
    if train_mode and config.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("train_mode with dropout needs a random generator")
        keep = 1.0 - config.dropout_rate
        mask = (rng.random(h.shape) < keep) / keep
        h = h * mask
    logits = h @ state.Wc.T + state.bc
    probs = _softmax_rows(logits)
    cache = dict(batch=batch, caches=caches, h=h, mask=mask, diff=diff,
                 La=a.shape[1], Lb=b.shape[1], J=C.shape[1])
    return probs, cache


def _backward(state: TanState, config: TanConfig, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    D = config.D
    grads = {name: np.zeros_like(arr) for name, arr in state.arrays().items()}
    grads["Wc"] += dlogits.T @ cache["h"]
    grads["bc"] += dlogits.sum(axis=0)
    dh = dlogits @ state.Wc
    if cache["mask"] is not None:
        dh = dh * cache["mask"]
    sgn = np.sign(cache["diff"])
    dpa = dh[:, :D] + dh[:, 3 * D:] * sgn
    dpb = dh[:, D:2 * D] - dh[:, 3 * D:] * sgn
    La, Lb, J = cache["La"], cache["Lb"], cache["J"]
    B = dh.shape[0]
    da = np.broadcast_to(dpa[:, None, :] / La, (B, La, D)).copy()
    db = np.broadcast_to(dpb[:, None, :] / Lb, (B, Lb, D)).copy()
    dC = np.broadcast_to(dh[:, None, 2 * D:3 * D] / J, (B, J, D)).copy()
    backward = tri_backward if config.mode == "tri" else bi_backward
    for l in range(len(state.layers) - 1, -1, -1):
        ca, cb = cache["caches"][l]
        da_out, db_out = da, db
        da = da_out.copy() if config.residual else np.zeros_like(da_out)
        db = db_out.copy() if config.residual else np.zeros_like(db_out)
        ga = backward(ca, da_out)
        gb = backward(cb, db_out)
        da += ga.dQ + gb.dK + gb.dV
        db += gb.dQ + ga.dK + ga.dV
        if config.mode == "tri":
            dC += ga.dC + gb.dC
        for name in set(ga.dparams) | set(gb.dparams):
            grads[f"layer{l}.{name}"] += ga.dparams.get(name, 0.0) + gb.dparams.get(name, 0.0)
    if config.mode == "c_bi":
        dC += (da.sum(axis=1) + db.sum(axis=1))[:, None, :] / J
    batch = cache["batch"]
    dE = np.zeros((state.encoder.vocab_size, D))
    np.add.at(dE, batch.ids_a, da)
    np.add.at(dE, batch.ids_b, db)
    if batch.context is None:
        np.add.at(dE, batch.ids_c, dC)
    grads["table"] += dE.T
    return grads


def _check_state(state: TanState, config: TanConfig) -> None:
    if state.encoder.D != config.D:
        raise ShapeError(f"encoder dimension {state.encoder.D} != config D {config.D}")
    if len(state.layers) != config.layers:
        raise ShapeError(f"state has {len(state.layers)} layers, config expects {config.layers}")
    if state.Wc.shape != (2, 4 * config.D) or state.bc.shape != (2,):
        raise ShapeError("classifier must be (2, 4D) with a length-2 bias")
    if config.mode == "tri":
        for P in state.layers:
            check_tri_params(config.variant, config.integration, P, config.D)


def tan_forward(state: TanState, ex: Example, config: TanConfig, train_mode: bool = False,
                rng: np.random.Generator | None = None, context=None) -> np.ndarray:
    """Class probabilities (length 2) for one sentence pair.

    ``context`` (``D x J``) replaces the context built from the pair; used to
    probe the network with a hand-made context.
    """
    _check_state(state, config)
    batch = _make_batches([ex], config, state.encoder)[0]
    if context is not None:
        C = np.asarray(context, dtype=np.float64)
        if C.ndim != 2 or C.shape[0] != config.D:
            raise ShapeError(f"context must be D x J with D={config.D}, got {C.shape}")
        batch.context = C.T[None]
        batch.ids_c = None
    probs, _ = _forward(state, config, batch, train_mode, rng)
    return probs[0]


def c_bi_forward(state: TanState, ex: Example, config: TanConfig, train_mode: bool = False,
                 rng: np.random.Generator | None = None, context=None) -> np.ndarray:
    """Forward pass of the C-Bi baseline regardless of ``config.mode``."""
    cfg = TanConfig.from_dict({**config.to_dict(), "mode": "c_bi"})
    return tan_forward(state, ex, cfg, train_mode, rng, context)


def _loss_and_grads(state, config, batches, n_total, train_mode, rng):
    loss = 0.0
    correct = 0
    grads = None
    for batch in batches:
        probs, cache = _forward(state, config, batch, train_mode, rng)
        idx = np.arange(len(batch.labels))
        p_true = probs[idx, batch.labels]
        loss += float(-np.sum(np.log(np.maximum(p_true, 1e-300))))
        correct += int(np.sum(np.argmax(probs, axis=1) == batch.labels))
        dlogits = probs.copy()
        dlogits[idx, batch.labels] -= 1.0
        g = _backward(state, config, cache, dlogits / n_total)
        if grads is None:
            grads = g
        else:
            for k in grads:
                grads[k] += g[k]
    return loss / n_total, correct, grads


def loss_and_gradients(state: TanState, config: TanConfig, examples: Sequence[Example],
                       train_mode: bool = False, rng: np.random.Generator | None = None):
    """Mean cross-entropy over ``examples`` and its gradient for every array in ``state.arrays()``."""
    _check_state(state, config)
    batches = _make_batches(examples, config, state.encoder)
    loss, _, grads = _loss_and_grads(state, config, batches, len(examples), train_mode, rng)
    return loss, grads


def predict_proba(state: TanState, config: TanConfig, examples: Sequence[Example]) -> np.ndarray:
    """Eval-mode probabilities ``(n, 2)`` in input order."""
    _check_state(state, config)
    out = np.empty((len(examples), 2))
    # group per shape but keep track of original positions
    positions: dict[tuple[int, int], list[int]] = {}
    for n, ex in enumerate(examples):
        key = (min(len(ex.seq_a), config.max_seq_len), min(len(ex.seq_b), config.max_seq_len))
        positions.setdefault(key, []).append(n)
    for idx in positions.values():
        chunk = [examples[n] for n in idx]
        for start in range(0, len(chunk), 256):
            (batch,) = _make_batches(chunk[start:start + 256], config, state.encoder)
            probs, _ = _forward(state, config, batch, False, None)
            out[idx[start:start + 256]] = probs
    return out


def evaluate(state: TanState, config: TanConfig, examples: Sequence[Example]) -> dict[str, float]:
    """Accuracy, binary F1 (positive class 1) and mean cross-entropy."""
    probs = predict_proba(state, config, examples)
    labels = np.array([ex.label for ex in examples])
    pred = np.argmax(probs, axis=1)
    tp = int(np.sum((pred == 1) & (labels == 1)))
    fp = int(np.sum((pred == 1) & (labels == 0)))
    fn = int(np.sum((pred == 0) & (labels == 1)))
    f1 = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0
    loss = float(-np.mean(np.log(np.maximum(probs[np.arange(len(labels)), labels], 1e-300))))
    return {"accuracy": float(np.mean(pred == labels)), "f1": float(f1), "loss": loss}


class _Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, arrays, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, arr in arrays.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(arr))
            v = self.v.setdefault(name, np.zeros_like(arr))
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            arr -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(config: TanConfig, dataset: Sequence[Example], state: TanState | None = None,
          monitor: bool = True):
    """Minibatch training with cross-entropy loss.

    Returns ``(state, metrics)``; ``metrics["epochs"]`` holds the mean
    minibatch loss of each epoch and, with ``monitor``, the eval-mode loss
    and accuracy on ``dataset`` after it. ``metrics["initial_loss"]`` is the
    loss before the first update. Fully determined by ``config.seed``.
    """
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    for ex in dataset:
        if ex.label not in (0, 1):
            raise ValueError(f"label {ex.label} out of range")
    state = init_state(config) if state is None else state
    _check_state(state, config)
    rng = np.random.default_rng([config.seed, 1])
    arrays = state.arrays()
    opt = _Adam(config.learning_rate) if config.optimizer == "adam" else None
    n = len(dataset)
    metrics = {"initial_loss": evaluate(state, config, dataset)["loss"], "epochs": []}
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for bi, start in enumerate(range(0, n, config.batch_size)):
            chunk = [dataset[k] for k in order[start:start + config.batch_size]]
            batches = _make_batches(chunk, config, state.encoder)
            loss, _, grads = _loss_and_grads(state, config, batches, len(chunk), True, rng)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, batch {bi}")
            total += loss * len(chunk)
            if opt is None:
                for name, arr in arrays.items():
                    arr -= config.learning_rate * grads[name]
            else:
                opt.step(arrays, grads)
        record = {"epoch": epoch + 1, "train_loss": total / n}
        if monitor:
            ev = evaluate(state, config, dataset)
            if not math.isfinite(ev["loss"]):
                raise TrainingError(f"non-finite loss {ev['loss']} after epoch {epoch}")
            record.update(loss=ev["loss"], accuracy=ev["accuracy"])
        metrics["epochs"].append(record)
    return state, metrics


# --- serialization --------------------------------------------------------------
#
# JSON document, keys in this order:
#   format, version, config, encoder {cls_id, sep_id, pad_id, table},
#   layers [{block name: nested list}], classifier {W, b}

def state_to_dict(state: TanState, config: TanConfig) -> dict:
    return {
        "format": STATE_FORMAT,
        "version": STATE_VERSION,
        "config": config.to_dict(),
        "encoder": {
            "cls_id": state.encoder.cls_id,
            "sep_id": state.encoder.sep_id,
            "pad_id": state.encoder.pad_id,
            "table": state.encoder.table.tolist(),
        },
        "layers": [{k: v.tolist() for k, v in P.blocks().items()} for P in state.layers],
        "classifier": {"W": state.Wc.tolist(), "b": state.bc.tolist()},
    }


def state_from_dict(doc: dict) -> tuple[TanState, TanConfig]:
    if doc.get("format") != STATE_FORMAT:
        raise ValueError(f"not a {STATE_FORMAT} document")
    if doc.get("version") != STATE_VERSION:
        raise ValueError(f"unsupported state version {doc.get('version')!r}")
    config = TanConfig.from_dict(doc["config"])
    enc = doc["encoder"]
    encoder = ToyEncoder(np.array(enc["table"], dtype=np.float64), enc["cls_id"], enc["sep_id"], enc["pad_id"])
    kind = TriParams if config.mode == "tri" else BiParams
    layers = [kind(**{k: np.array(v, dtype=np.float64) for k, v in L.items()}) for L in doc["layers"]]
    state = TanState(encoder, layers, np.array(doc["classifier"]["W"], dtype=np.float64),
                     np.array(doc["classifier"]["b"], dtype=np.float64))
    _check_state(state, config)
    return state, config


def save_state(path, state: TanState, config: TanConfig) -> None:
    Path(path).write_text(json.dumps(state_to_dict(state, config)))


def load_state(path) -> tuple[TanState, TanConfig]:
    return state_from_dict(json.loads(Path(path).read_text()))
