"""Command-line entry point: ``triattn <command> [options]``.

``--config FILE`` takes a JSON object whose top-level keys are training
settings (any ``TanConfig`` field) plus an optional ``"synthetic"`` object
with ``SyntheticSpec`` fields. Explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import experiments
from .grad import gradcheck_report
from .model import TanConfig, evaluate, save_state, train
from .synthetic import SyntheticSpec, gen_synthetic, read_jsonl, write_jsonl
from .tensor_core import CapacityError, NumericalError, ShapeError
from .tri_attention import TriVariant, ValueIntegration, init_tri_params, tri_attend_trace

VARIANTS = [v.value for v in TriVariant]
INTEGRATIONS = [i.value for i in ValueIntegration]
SPEC_FIELDS = {f.name for f in fields(SyntheticSpec)}


def _int_list(text: str) -> list[int]:
    """``"0,1,2"`` or a range ``"1-4"``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"empty integer list {text!r}")
    return out


def _load_config(path) -> tuple[dict, dict]:
    if path is None:
        return {}, {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    synth = doc.pop("synthetic", {})
    unknown = set(synth) - SPEC_FIELDS
    if unknown:
        raise ValueError(f"{path}: unknown synthetic keys {sorted(unknown)}")
    return doc, synth


def _spec(args, synth: dict) -> SyntheticSpec:
    spec = SyntheticSpec(**synth)
    overrides = {k: getattr(args, k) for k in ("vocab_size", "seq_len", "n_train", "n_test")
                 if getattr(args, k, None) is not None}
    if getattr(args, "gate_strength", None) is not None:
        overrides["context_gate_strength"] = args.gate_strength
    return replace(spec, **overrides)


def _print_json(obj, out=None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


# --- commands ---------------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    variants = [TriVariant(args.variant)] if args.variant else list(TriVariant)
    integrations = [ValueIntegration(args.integration)] if args.integration else list(ValueIntegration)
    seeds = args.seeds or [args.seed]
    reports = [gradcheck_report(v, i, seed=s) for v in variants for i in integrations for s in seeds]
    passed = all(r.passed for r in reports)
    _print_json({"passed": passed, "reports": [asdict(r) for r in reports]}, args.out)
    return 0 if passed else 1


def cmd_gen(args) -> int:
    _, synth = _load_config(args.config)
    spec = _spec(args, synth)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    train_set, test_set = gen_synthetic(spec)
    write_jsonl(args.out, train_set)
    if args.test_out:
        write_jsonl(args.test_out, test_set)
    print(f"wrote {len(train_set)} training pairs to {args.out}"
          + (f" and {len(test_set)} test pairs to {args.test_out}" if args.test_out else ""))
    return 0


def _training_dict(args, base: dict) -> dict:
    d = {**experiments.DEFAULT_TRAINING, **base}
    for key in ("mode", "variant", "integration", "layers", "seed", "epochs"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    return d


def cmd_train(args) -> int:
    base, synth = _load_config(args.config)
    config = TanConfig.from_dict(_training_dict(args, base))
    if args.train:
        train_set = read_jsonl(args.train)
        test_set = read_jsonl(args.test) if args.test else []
    else:
        train_set, test_set = gen_synthetic(replace(_spec(args, synth), seed=config.seed))
    state, metrics = train(config, train_set)
    result = {"config": config.to_dict(), "initial_loss": metrics["initial_loss"], "epochs": metrics["epochs"]}
    if test_set:
        result["test"] = evaluate(state, config, test_set)
    if args.out:
        save_state(args.out, state, config)
    _print_json(result)
    return 0


def cmd_ablate(args) -> int:
    base, synth = _load_config(args.config)
    base = {k: v for k, v in _training_dict(args, base).items()
            if k not in ("mode", "variant", "integration", "layers", "seed")}
    variants = [args.variant] if args.variant else experiments.MATCHED_VARIANTS
    mechanisms = [args.mode.replace("-", "_")] if args.mode else experiments.MECHANISMS
    cells = experiments.ablation_cells(variants, mechanisms, args.integration, args.layers or 1)
    seeds = args.seeds or ([args.seed] if args.seed is not None else experiments.DEFAULT_SEEDS)
    report = experiments.run_ablation(cells, _spec(args, synth), seeds, base, out=args.out)
    if not args.out:
        sys.stdout.write(report.to_csv())
    return 0


def cmd_sweep(args) -> int:
    base, synth = _load_config(args.config)
    base = {k: v for k, v in _training_dict(args, base).items()
            if k not in ("mode", "variant", "integration", "layers", "seed")}
    variants = [args.variant] if args.variant else VARIANTS
    seeds = args.seeds or ([args.seed] if args.seed is not None else experiments.DEFAULT_SEEDS)
    report = experiments.run_layer_sweep(
        variants, _spec(args, synth), args.layers or [1, 2, 3, 4], seeds, base,
        mechanism=(args.mode or "tri").replace("-", "_"), integration=args.integration,
        out=args.out, plot_prefix=args.plot_data)
    if not args.out:
        sys.stdout.write(report.to_csv())
    return 0


def _matrix(name: str, M: np.ndarray) -> str:
    rows = ["  [" + "  ".join(f"{x: .6f}" for x in row) + "]" for row in np.atleast_2d(M)]
    return f"{name}:\n" + "\n".join(rows)


def cmd_demo(args) -> int:
    variant = TriVariant(args.variant or "tdp")
    integration = ValueIntegration(args.integration) if args.integration else None
    from .tri_attention import DEFAULT_INTEGRATION
    integration = integration or DEFAULT_INTEGRATION[variant]
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    D, I, J = 3, 2, 2
    q = rng.normal(size=D)
    K = rng.normal(size=(D, I))
    V = K.copy()
    C = rng.normal(size=(D, J))
    params = init_tri_params(variant, integration, D, rng, zero_p=False)
    tr = tri_attend_trace(q, K, V, C, variant, integration, params)
    print(f"Tri-Attention worked example: variant={variant.value} integration={integration.value} "
          f"D={D} I={I} J={J} (V = K)")
    print(_matrix("q", q[None, :]))
    print(_matrix("K (columns are keys)", K))
    print(_matrix("C (columns are context vectors)", C))
    print(_matrix("ScoreGrid S[i, j]", tr["scores"]))
    print(_matrix("AttnWeights A[i, j]", tr["weights"]))
    print(f"sum of weights: {tr['weights'].sum():.12f}")
    for i in range(I):
        for j in range(J):
            print(f"contextual value v[{i},{j}]: " + "  ".join(f"{x: .6f}" for x in tr["values"][i, j]))
    print(_matrix("embedding", tr["embedding"][None, :]))
    return 0


# --- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="triattn", description="Tri-Attention toolkit")
    sub = p.add_subparsers(dest="command", metavar="command")

    def common(sp, layers_list=False):
        sp.add_argument("--variant", choices=VARIANTS)
        sp.add_argument("--integration", choices=INTEGRATIONS)
        sp.add_argument("--mode", choices=["bi", "c-bi", "c_bi", "tri"])
        if layers_list:
            sp.add_argument("--layers", type=_int_list, help="layer counts, e.g. 1-4 or 1,2,4")
        else:
            sp.add_argument("--layers", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--seeds", type=_int_list, help="comma list or range, e.g. 0-4")
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", help="output file")

    def data(sp):
        sp.add_argument("--vocab-size", type=int, dest="vocab_size")
        sp.add_argument("--seq-len", type=int, dest="seq_len")
        sp.add_argument("--n-train", type=int, dest="n_train")
        sp.add_argument("--n-test", type=int, dest="n_test")
        sp.add_argument("--gate-strength", type=float, dest="gate_strength")

    sp = sub.add_parser("gradcheck", help="finite-difference check of Tri-Attention gradients")
    common(sp)
    sp.set_defaults(func=cmd_gradcheck, seed=0)

    sp = sub.add_parser("gen", help="write a synthetic context-gated dataset")
    common(sp)
    data(sp)
    sp.add_argument("--test-out", help="also write the test split here")
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("train", help="train one configuration")
    common(sp)
    data(sp)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--train", help="training JSONL file (default: generate synthetic data)")
    sp.add_argument("--test", help="test JSONL file")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("ablate", help="bi / c-bi / tri ablation grid, CSV report")
    common(sp)
    data(sp)
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("sweep", help="layer-count sweep, CSV report")
    common(sp, layers_list=True)
    data(sp)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--plot-data", help="prefix for per-variant (layers, accuracy) files")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("demo", help="print a worked I=2, J=2, D=3 example")
    common(sp)
    sp.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ValueError, ShapeError, CapacityError, NumericalError, OSError, KeyError) as exc:
        print(f"triattn: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
