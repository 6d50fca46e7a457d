"""Command line interface: ``pgil <verb> [options]``.

Verbs: synth, xm, encode, train-pgn, train-pin, evaluate, run, report.
Configuration flags mirror :class:`RunConfig` fields; ``--config`` loads a
JSON file whose values are overridden by explicit flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import typing
from pathlib import Path

import numpy as np

from . import blobs
from .benchmark import BenchmarkSpec, build_benchmark
from .config import ConfigError, RunConfig
from .imgphy import TEST_SPLIT, read_imgphy, write_imgphy
from .metrics import classification_report
from .nn import PgnModel, PinModel, load_model, save_model, train_pgn, train_pin, predict_scores
from .pipeline import (BotStore, Prepared, guidance_targets, pgn_train_config, pin_train_config,
                       prepare, run_encode, run_experiment, run_xm)
from .topics import Vocabulary

STORE_KIND = "bot-store"


def _add_config_flags(p: argparse.ArgumentParser):
    hints = typing.get_type_hints(RunConfig)
    for f in dataclasses.fields(RunConfig):
        if f.name in ("extra", "seed"):
            continue
        flag = "--" + f.name.replace("_", "-")
        t = hints[f.name]
        if t is bool:
            p.add_argument(flag, dest=f.name, type=lambda s: s.lower() in ("1", "true", "yes", "on"),
                           default=None, metavar="BOOL")
        elif f.name == "sites":
            p.add_argument(flag, dest=f.name, default=None,
                           help="comma separated subset of inj-2,inj-3,inj-4 (empty for none)")
        else:
            base = float if "float" in str(t) else int if "int" in str(t) else str
            p.add_argument(flag, dest=f.name, type=base, default=None)
    p.add_argument("--config", type=Path, help="JSON config file")


def _config_from(args, seed_required: bool) -> RunConfig:
    base = json.loads(args.config.read_text()) if getattr(args, "config", None) else {}
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is None:
            continue
        if f.name == "sites":
            v = [s for s in v.split(",") if s]
        base[f.name] = v
    if seed_required and getattr(args, "seed", None) is None:
        raise ConfigError("--seed is required for training verbs")
    if getattr(args, "seed", None) is not None:
        base["seed"] = args.seed
    return RunConfig.from_dict(base).validate()


def _emit(obj, out: Path | None):
    text = json.dumps(obj, sort_keys=True, indent=1)
    if out is None:
        print(text)
    else:
        Path(out).write_text(text + "\n")


def _save_store(path, store: BotStore):
    arrays = {"bots": store.bots, "docs": store.docs, "vocab": store.vocab.centers,
              "topic_word": store.topic_word}
    return blobs.save(path, arrays, {"ids": store.ids, "lda_alpha": store.lda_alpha,
                                     "sparsity": store.sparsity, "hashes": store.hashes}, STORE_KIND)


def _load_store(path) -> BotStore:
    a, m = blobs.load(path, STORE_KIND)
    return BotStore(m["ids"], a["bots"], a["docs"], Vocabulary(a["vocab"]), a["topic_word"],
                    m["lda_alpha"], m["sparsity"], m["hashes"])


def _prepared(ds, store) -> Prepared:
    return Prepared(ds, store, {}, dict(store.hashes))


# ---------------------------------------------------------------- verbs

def cmd_synth(args):
    spec = BenchmarkSpec(n_patches=args.patches, patch_size=args.patch_size,
                         test_per_class=args.test_per_class,
                         train_sizes=tuple(int(k) for k in args.train_sizes.split(",")),
                         seed=args.seed if args.seed is not None else 0)
    ds = build_benchmark(spec)
    cfg = _config_from(args, False).replace(data_seed=spec.seed)
    run_xm(ds, cfg)
    digest = write_imgphy(ds, args.out)
    _emit({"root": str(args.out), "patches": len(ds.ids), "hash": digest,
           "splits": {k: len(v) for k, v in ds.splits.items()}}, None)


def cmd_xm(args):
    ds = read_imgphy(args.data)
    ds.phy = {}
    run_xm(ds, _config_from(args, False))
    digest = write_imgphy(ds, args.data)
    _emit({"root": str(args.data), "n_s": ds.n_s, "provenance": ds.phy_provenance, "hash": digest}, None)


def cmd_encode(args):
    ds = read_imgphy(args.data)
    cfg = _config_from(args, False)
    vocab = None
    if args.vocab is not None:
        vocab = Vocabulary(_load_store(args.vocab).vocab.centers)
    store = run_encode(ds, cfg, vocab)
    digest = _save_store(args.out, store)
    _emit({"store": str(args.out), "hash": digest, "sparsity": store.sparsity}, None)


def cmd_train_pgn(args):
    cfg = _config_from(args, True)
    ds = read_imgphy(args.data)
    prep = _prepared(ds, _load_store(args.bots))
    ids = ds.corpus_ids(include_test=cfg.transductive_corpus)
    y = guidance_targets(prep, ids, args.raw_labels)
    pgn = PgnModel(cfg.profile, y.shape[1], seed=cfg.seed)
    log = train_pgn(pgn, ds.image_stack(ids), y, pgn_train_config(cfg), log_path=args.log)
    digest = save_model(args.out, pgn, epoch=cfg.pgn_epochs, log=log)
    _emit({"checkpoint": str(args.out), "hash": digest, "final_loss": log[-1]["loss"]}, None)


def _source_kind(cfg: RunConfig) -> str:
    if cfg.mode == "direct-bot-injection":
        return "bot"
    return "none" if cfg.mode in ("baseline-cnn",) else "pgn"


def cmd_train_pin(args):
    cfg = _config_from(args, True)
    if cfg.mode not in ("baseline-cnn", "direct-bot-injection", "pgil-full", "no-sal", "raw-label-guidance"):
        raise ConfigError(f"train-pin does not handle mode {cfg.mode}; use `run`")
    ds = read_imgphy(args.data)
    prep = _prepared(ds, _load_store(args.bots))
    ids = ds.split_ids(cfg.train_split)
    x, y = ds.image_stack(ids), ds.labels(ids)
    kind = _source_kind(cfg)
    raw = cfg.mode == "raw-label-guidance"
    bots = guidance_targets(prep, ids, raw)
    pgn = None
    if kind == "pgn":
        if args.pgn is None:
            raise ConfigError(f"mode {cfg.mode} needs --pgn")
        pgn, _ = load_model(args.pgn)
    sites = () if kind == "none" else cfg.sites
    channels = bots.shape[1] if kind == "bot" else None
    pin = PinModel(cfg.profile, len(ds.class_names), sites, source_channels=channels, seed=cfg.seed)
    log = train_pin(pin, x, y, pin_train_config(cfg), pgn=pgn, bots=bots, source=kind, log_path=args.log)
    digest = save_model(args.out, pin, epoch=cfg.pin_epochs, mode=cfg.mode, log=log)
    if pgn is not None and cfg.effective_sal() and args.pgn_out is not None:
        save_model(args.pgn_out, pgn, finetuned=True)
    _emit({"checkpoint": str(args.out), "hash": digest, "final_loss": log[-1]["loss"]}, None)


def cmd_evaluate(args):
    ds = read_imgphy(args.data)
    pin, meta = load_model(args.pin)
    mode = meta.get("mode", "baseline-cnn")
    ids = ds.split_ids(args.split)
    x = ds.image_stack(ids)
    kind = "bot" if mode == "direct-bot-injection" else ("pgn" if pin.sites else "none")
    pgn = load_model(args.pgn)[0] if kind == "pgn" else None
    bots = None
    if kind == "bot":
        bots = _load_store(args.bots).rows(ids)
    scores = predict_scores(pin, x, pgn=pgn, bots=bots, source=kind)
    truth = ds.labels(ids, allow_test=args.split == TEST_SPLIT)
    rep = classification_report(np.argmax(scores, axis=1), truth, len(ds.class_names), ds.class_names)
    if args.csv is not None:
        Path(args.csv).write_text(rep.to_csv())
    _emit(rep.to_dict(), args.out)


def cmd_run(args):
    cfg = _config_from(args, True)
    ds = read_imgphy(args.data) if args.data else None
    report = run_experiment(cfg, prepare(cfg, ds))
    _emit(report.to_dict(), args.out)


def cmd_report(args):
    rows = []
    for path in args.reports:
        r = json.loads(Path(path).read_text())
        m = r["metrics"]
        rows.append({"file": str(path), "mode": r["mode"], "seed": r["seed"],
                     **{k: m[k] for k in ("oa", "macro_f1", "probe_oa", "pgn_silhouette", "cnn_silhouette")
                        if k in m}})
    by_mode: dict = {}
    for row in rows:
        by_mode.setdefault(row["mode"], []).append(row)
    summary = {}
    for mode, rs in by_mode.items():
        keys = sorted({k for r in rs for k in r if k not in ("file", "mode", "seed")})
        summary[mode] = {k: float(np.mean([r[k] for r in rs if k in r])) for k in keys}
        summary[mode]["runs"] = len(rs)
    _emit({"runs": rows, "summary": summary}, args.out)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pgil", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("synth", help="generate the synthetic benchmark and its Img-Phy rasters")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--patches", type=int, default=BenchmarkSpec.n_patches)
    s.add_argument("--patch-size", type=int, default=BenchmarkSpec.patch_size)
    s.add_argument("--test-per-class", type=int, default=BenchmarkSpec.test_per_class)
    s.add_argument("--train-sizes", default=",".join(map(str, BenchmarkSpec.train_sizes)))
    _add_config_flags(s)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("xm", help="(re)compute scattering-label rasters")
    s.add_argument("--data", type=Path, required=True)
    _add_config_flags(s)
    s.set_defaults(func=cmd_xm)

    s = sub.add_parser("encode", help="vocabulary, LDA and BoT vectors")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--vocab", type=Path, help="reuse the vocabulary of an existing store")
    _add_config_flags(s)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("train-pgn", help="train the physics-guided network")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--bots", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--log", type=Path)
    s.add_argument("--seed", type=int)
    s.add_argument("--raw-labels", action="store_true", help="guide with label histograms instead of BoT")
    _add_config_flags(s)
    s.set_defaults(func=cmd_train_pgn)

    s = sub.add_parser("train-pin", help="train the classifier, optionally with injection")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--bots", type=Path, required=True)
    s.add_argument("--pgn", type=Path)
    s.add_argument("--pgn-out", type=Path, help="where to save the fine-tuned PGN")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--log", type=Path)
    s.add_argument("--seed", type=int)
    _add_config_flags(s)
    s.set_defaults(func=cmd_train_pin)

    s = sub.add_parser("evaluate", help="score a trained classifier")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--pin", type=Path, required=True)
    s.add_argument("--pgn", type=Path)
    s.add_argument("--bots", type=Path)
    s.add_argument("--split", default=TEST_SPLIT)
    s.add_argument("--out", type=Path)
    s.add_argument("--csv", type=Path)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("run", help="full pipeline for one mode")
    s.add_argument("--data", type=Path, help="existing dataset root (default: build the benchmark)")
    s.add_argument("--out", type=Path)
    s.add_argument("--seed", type=int)
    _add_config_flags(s)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="summarize RunReport files by mode")
    s.add_argument("reports", nargs="+", type=Path)
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, ValueError, KeyError, FileNotFoundError, PermissionError, RuntimeError) as exc:
        print(f"pgil {args.verb}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
