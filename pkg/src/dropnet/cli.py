"""Command line entry point: ``dropnet <subcommand>``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import oracles
from .config import ConfigError, load_config
from .data import BowVocab, DataError, corpus_dataset, load_feature_idx, read_text_corpus, write_idx
from .dropout import DropoutConfigError, DropoutSpec
from .numeric import RandomSource
from .trainer import (TrainingDiverged, checkpoint_load, evaluate, export_features, init_state,
                      load_datasets, train)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


def _overrides(extra: list[str]) -> dict[str, str]:
    out = {}
    for arg in extra:
        if not arg.startswith("--") or "=" not in arg:
            raise ConfigError(f"unrecognised argument {arg!r}; overrides look like --section.key=value")
        key, value = arg[2:].split("=", 1)
        out[key] = value
    return out


def cmd_train(args, extra) -> int:
    cfg = load_config(args.config, _overrides(extra))
    train_ds, test_ds = load_datasets(cfg)
    state = checkpoint_load(args.resume) if args.resume else init_state(cfg)
    _, rows = train(cfg, train_ds, test_ds, state=state)
    if rows:
        last = rows[-1]
        print(f"finished epoch {last.epoch}: train_err={last.train_err:.4f} test_err={last.test_err}")
    return EXIT_OK


def cmd_eval(args, extra) -> int:
    cfg = load_config(args.config, _overrides(extra)) if args.config or extra else None
    spec = cfg.dropout if cfg else DropoutSpec(args.input_retain, args.hidden_retain)
    state = checkpoint_load(args.checkpoint)
    if args.images:
        ds = load_feature_idx(args.images, args.labels)
    elif cfg is not None:
        _, ds = load_datasets(cfg)
        if ds is None:
            raise FileNotFoundError("config names no test set")
    else:
        raise ConfigError("give --images/--labels or a --config with a test set")
    errors, frac = evaluate(state.net, spec, ds)
    print(f"errors={errors} cases={len(ds)} error_rate={frac:.6f}")
    return EXIT_OK


def _report(reports, path) -> int:
    for r in reports:
        print(r.line())
    if path:
        oracles.write_reports_csv(reports, path)
    return EXIT_OK if all(r.passed for r in reports) else 1


def cmd_oracle_check(args, extra) -> int:
    reports = [
        oracles.check_geometric_equivalence(args.trials_equiv, args.n_max, args.seed),
        oracles.check_logprob_superiority(args.trials, args.seed),
        oracles.check_regression_superiority(args.trials, args.seed),
    ]
    return _report(reports, args.report)


def cmd_gradcheck(args, extra) -> int:
    return _report([oracles.check_gradients(args.archs, args.seed)], args.report)


def cmd_export_features(args, extra) -> int:
    state = checkpoint_load(args.checkpoint)
    h, w = (int(v) for v in args.tile.lower().split("x"))
    rng = RandomSource(args.seed) if args.random else None
    img = export_features(state.net, args.layer, (h, w), args.out, args.units, rng)
    print(f"wrote {args.out} ({img.shape[1]}x{img.shape[0]})")
    return EXIT_OK


def cmd_ingest(args, extra) -> int:
    """Text corpus -> log(1+count) features as float64 IDX plus a label IDX and vocabulary file."""
    labels, texts = read_text_corpus(args.corpus)
    vocab = BowVocab.load(args.vocab) if args.vocab else BowVocab.build(texts, args.vocab_size)
    classes = sorted(set(labels))
    ds = corpus_dataset(labels, texts, vocab, classes)
    prefix = Path(args.out_prefix)
    write_idx(f"{prefix}-features.idx", ds.features)
    write_idx(f"{prefix}-labels.idx", ds.labels.astype(np.uint8))
    vocab.save(f"{prefix}-vocab.txt")
    Path(f"{prefix}-classes.json").write_text(json.dumps(classes))
    print(f"{len(ds)} documents, {len(vocab)} vocabulary entries, {len(classes)} classes")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dropnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a network from a key = value config")
    t.add_argument("--config")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="mean-network error of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config")
    e.add_argument("--images")
    e.add_argument("--labels")
    e.add_argument("--input-retain", type=float, default=0.8)
    e.add_argument("--hidden-retain", type=float, default=0.5)
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("oracle-check", help="verify the model-averaging guarantees by enumeration")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--trials", type=int, default=1000)
    o.add_argument("--trials-equiv", type=int, default=100)
    o.add_argument("--n-max", type=int, default=12)
    o.add_argument("--report", help="write a CSV report here")
    o.set_defaults(func=cmd_oracle_check)

    g = sub.add_parser("gradcheck", help="backprop vs central finite differences")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--archs", type=int, default=50)
    g.add_argument("--report")
    g.set_defaults(func=cmd_gradcheck)

    x = sub.add_parser("export-features", help="write first-layer features as a PGM grid")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--layer", type=int, default=0)
    x.add_argument("--tile", default="28x28")
    x.add_argument("--units", type=int, default=100)
    x.add_argument("--random", action="store_true", help="pick units at random instead of the first ones")
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_features)

    i = sub.add_parser("ingest", help="turn a label<TAB>text corpus into bag-of-words IDX files")
    i.add_argument("--corpus", required=True)
    i.add_argument("--vocab", help="existing vocabulary file (one token per line)")
    i.add_argument("--vocab-size", type=int, default=2000)
    i.add_argument("--out-prefix", required=True)
    i.set_defaults(func=cmd_ingest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    if extra and args.command not in ("train", "eval"):
        parser.error(f"unrecognised arguments: {' '.join(extra)}")
    try:
        return args.func(args, extra)
    except (ConfigError, DropoutConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, DataError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"diverged: {exc}\n{json.dumps(exc.snapshot)}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
