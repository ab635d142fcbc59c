"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 runtime error.  Errors are reported on stderr as one ``error: ...`` line.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import Config, ConfigError, load_config
from .corpus import (
    ChatClient, GeneratedQuery, LLMError, Lexicon, OfflineClient, UnknownPredicate, build_corpus, corpus_stats,
    export_review,
)
from .evaluation import evaluate, report
from .featalign import ModelParams, load_params, predict, save_params
from .graphs import (
    DataError, SceneGraph, load_dependency_graph, load_queries, load_scene_graph, mask_from_json, read_jsonl,
    validate_queries,
)
from .structal import SignatureConfig, align, greedy_match
from .training import OptimizerState, make_example, train

log = logging.getLogger("dumoga")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    def __init__(self, message: str, usage: str = ""):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, self.format_usage())


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="INI config file")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 42)")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output path (default: stdout)")
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="only log warnings")
    return p


def _signature_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hops", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--discount", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--landmarks", type=int)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="dumoga", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"dumoga {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("align", parents=[common], help="structural alignment map for one scene/query pair")
    p.add_argument("--scene", required=True)
    p.add_argument("--dep", required=True)
    _signature_flags(p)

    p = sub.add_parser("train", parents=[common], help="train scoring parameters on a dataset directory")
    p.add_argument("--data", required=True, help="dataset directory (queries.jsonl, scenes/, deps/, ...)")
    p.add_argument("--params-out", required=True)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--resume", help="initialise from this checkpoint")
    _signature_flags(p)

    p = sub.add_parser("infer", parents=[common], help="select a candidate mask for a query")
    p.add_argument("--params", required=True)
    p.add_argument("--scene")
    p.add_argument("--dep")
    p.add_argument("--features", help="object feature file (default: <scene>.bin)")
    p.add_argument("--embeddings", help="token embedding file (default: <dep>.bin)")
    p.add_argument("--data", help="dataset directory: predict every query in it")
    _signature_flags(p)

    p = sub.add_parser("eval", parents=[common], help="IoU / Precision@X report")
    p.add_argument("--pred", required=True, help="JSON Lines {query_id, rle, h, w}")
    p.add_argument("--gt", required=True, help="JSON Lines {query_id, rle, h, w}")
    p.add_argument("--overall", action="store_true", help="accumulate I/U over all queries instead of mean IoU")

    p = sub.add_parser("corpus", parents=[common], help="query construction tools")
    csub = p.add_subparsers(dest="corpus_command", parser_class=_Parser, metavar="ACTION")
    csub.required = True
    b = csub.add_parser("build", parents=[common], help="generate queries from scene graphs")
    b.add_argument("--scenes", nargs="+", required=True, help="scene-graph files or directories")
    b.add_argument("--offline", action="store_true", default=None, help="use the deterministic offline generator")
    b.add_argument("--endpoint")
    b.add_argument("--model")
    b.add_argument("--max-words", type=int)
    b.add_argument("--min-relations", type=int)
    b.add_argument("--concurrency", type=int)
    b.add_argument("--lexicon")
    s = csub.add_parser("stats", parents=[common], help="dataset statistics")
    s.add_argument("--queries", required=True)
    s.add_argument("--scenes", nargs="+", required=True)

    sub.add_parser("selftest", parents=[common], help="run the embedded invariant checks")
    return parser


def _pick(flag, default):
    return default if flag is None else flag


def _sig_config(args, cfg: Config) -> tuple[SignatureConfig, Optional[int]]:
    s = cfg.signature
    sig = SignatureConfig(_pick(args.hops, s.hops), _pick(args.bins, s.bins),
                          _pick(args.discount, s.discount), _pick(args.gamma, s.gamma))
    return sig, _pick(args.landmarks, s.landmarks)


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def _dumps(doc) -> str:
    return json.dumps(doc, ensure_ascii=False) + "\n"


def _scene_files(paths: Sequence[str]) -> list[Path]:
    files = []
    for p in map(Path, paths):
        files.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
    return files


def _load_scenes(paths: Sequence[str], cfg: Config) -> dict[str, SceneGraph]:
    scenes = {}
    for f in _scene_files(paths):
        sg = load_scene_graph(f, max_objects=cfg.model.max_objects)
        if sg.image_id in scenes:
            raise DataError(f"duplicate image_id {sg.image_id!r}", source=str(f))
        scenes[sg.image_id] = sg
    return scenes


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_align(args, cfg: Config, seed: int, out: Optional[str]) -> int:
    sig, p = _sig_config(args, cfg)
    scene = load_scene_graph(args.scene, max_objects=cfg.model.max_objects)
    dep = load_dependency_graph(args.dep)
    amap = align(scene, dep, sig, landmarks=p, seed=seed)
    doc = {"query_id": dep.query_id, "alpha": amap.alpha.tolist(),
           "matches": [list(m) for m in greedy_match(amap)]}
    _emit(_dumps(doc), out)
    return EXIT_OK


def _load_split(data: Path, cfg: Config, sig: SignatureConfig, p: Optional[int], seed: int):
    """Yield ``(query, scene, dep, alpha)`` for every query in a dataset directory."""
    queries = load_queries(data / "queries.jsonl")
    scenes: dict[str, SceneGraph] = {}
    for q in queries:
        if q.image_id not in scenes:
            scenes[q.image_id] = load_scene_graph(
                data / "scenes" / f"{q.image_id}.json", features=data / "features" / f"{q.image_id}.bin",
                max_objects=cfg.model.max_objects)
    validate_queries(queries, scenes)
    for q in queries:
        dep = load_dependency_graph(data / "deps" / f"{q.query_id}.json", embeddings=data / "embeddings" / f"{q.query_id}.bin")
        scene = scenes[q.image_id]
        yield q, scene, dep, align(scene, dep, sig, landmarks=p, seed=seed)


def cmd_train(args, cfg: Config, seed: int, out: Optional[str]) -> int:
    sig, p = _sig_config(args, cfg)
    o = cfg.optimizer
    examples = [make_example(scene, dep, alpha, q) for q, scene, dep, alpha in _load_split(Path(args.data), cfg, sig, p, seed)]
    if not examples:
        raise DataError("dataset has no queries", source=args.data)
    dv, dt = examples[0].F_i.shape[1], examples[0].F_l.shape[1]
    if args.resume:
        params = load_params(args.resume)
    else:
        params = ModelParams.init(dv, dt, _pick(args.hidden, cfg.model.hidden), seed=seed)
    if (params.visual_dim, params.text_dim) != (dv, dt):
        raise DataError(f"parameters expect D_v={params.visual_dim}, D_t={params.text_dim}; data has {dv}, {dt}")
    opt = OptimizerState(lr=_pick(args.lr, o.lr), batch_size=_pick(args.batch, o.batch),
                         weight_decay=_pick(args.weight_decay, o.weight_decay),
                         beta1=o.beta1, beta2=o.beta2, eps=o.eps)
    epochs = _pick(args.epochs, o.epochs)
    log.info("training on %d queries (%d supervised) for up to %d epochs",
             len(examples), sum(ex.target is not None for ex in examples), epochs)
    result = train(examples, params, opt, epochs, seed=seed, patience=o.patience, min_delta=o.min_delta,
                   on_epoch=lambda e, loss: log.debug("epoch %d loss %.6f", e, loss))
    save_params(args.params_out, result.params)
    lines = ["epoch,mean_loss"] + [f"{i},{loss!r}" for i, loss in enumerate(result.history, 1)]
    _emit("\n".join(lines) + "\n", out)
    return EXIT_OK


def _prediction_doc(query_id: str, pred) -> dict:
    doc = {"query_id": query_id, "selected": pred.selected}
    doc.update(pred.mask.to_json())
    doc["scores"] = [float(s) for s in pred.scores.scores]
    return doc


def cmd_infer(args, cfg: Config, seed: int, out: Optional[str]) -> int:
    sig, p = _sig_config(args, cfg)
    params = load_params(args.params)
    docs = []
    if args.data:
        for q, scene, dep, alpha in _load_split(Path(args.data), cfg, sig, p, seed):
            docs.append(_prediction_doc(q.query_id, predict(scene, dep, alpha, params)))
    else:
        if not (args.scene and args.dep):
            raise UsageError("infer needs --scene and --dep, or --data")
        features = args.features or str(Path(args.scene).with_suffix(".bin"))
        embeddings = args.embeddings or str(Path(args.dep).with_suffix(".bin"))
        scene = load_scene_graph(args.scene, features=features, max_objects=cfg.model.max_objects)
        dep = load_dependency_graph(args.dep, embeddings=embeddings)
        docs.append(_prediction_doc(dep.query_id, predict(scene, dep, align(scene, dep, sig, p, seed), params)))
    _emit("".join(_dumps(d) for d in docs), out)
    return EXIT_OK


def _masks(path) -> list[tuple]:
    rows = []
    for i, doc in enumerate(read_jsonl(path)):
        if "query_id" not in doc:
            raise DataError("missing field 'query_id'", f"line {i + 1}", str(path))
        rows.append((str(doc["query_id"]), mask_from_json(doc, source=f"{path}:{i + 1}"), doc.get("selected")))
    return rows


def cmd_eval(args, cfg: Config, seed: int, out: Optional[str]) -> int:
    results = evaluate(_masks(args.pred), [(q, m) for q, m, _ in _masks(args.gt)])
    rep = report(results, mode="overall" if args.overall else "mean")
    doc = rep.to_json()
    doc["results"] = [{"query_id": r.query_id, "iou": r.iou, "selected": r.object_id} for r in results]
    if out:
        _emit(json.dumps(doc, indent=2) + "\n", out)
        sys.stdout.write(rep.table())
    else:
        sys.stdout.write(json.dumps(doc, indent=2) + "\n")
        sys.stderr.write(rep.table())
    return EXIT_OK


def cmd_corpus_build(args, cfg: Config, seed: int, out: Optional[str]) -> int:
    c = cfg.corpus
    if not out:
        raise UsageError("corpus build needs --out DIR")
    scenes = _load_scenes(args.scenes, cfg)
    lexicon = Lexicon.load(_pick(args.lexicon, c.lexicon))
    if _pick(args.offline, c.offline):
        client = OfflineClient()
    else:
        client = ChatClient(_pick(args.endpoint, c.endpoint), _pick(args.model, c.model), c.api_key_env)
    queries = build_corpus(list(scenes.values()), client, lexicon, max_words=_pick(args.max_words, c.max_words),
                           min_relations=_pick(args.min_relations, c.min_relations),
                           concurrency=_pick(args.concurrency, c.concurrency))
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "queries.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for q in queries:
            fh.write(_dumps(q.to_json(scenes[q.image_id])))
    export_review(queries, outdir / "review.jsonl")
    stats = corpus_stats(queries, scenes)
    (outdir / "stats.json").write_text(json.dumps(stats.to_json(), indent=2) + "\n", encoding="utf-8")
    log.info("wrote %d queries (%d flagged for review) to %s", len(queries),
             sum(q.flagged_for_review for q in queries), outdir)
    return EXIT_OK


def cmd_corpus_stats(args, cfg: Config, seed: int, out: Optional[str]) -> int:
    scenes = _load_scenes(args.scenes, cfg)
    queries = [GeneratedQuery.from_json(d) for d in read_jsonl(args.queries)]
    _emit(json.dumps(corpus_stats(queries, scenes).to_json(), indent=2) + "\n", out)
    return EXIT_OK


def cmd_selftest(args, cfg: Config, seed: int, out: Optional[str]) -> int:
    from .selftest import run_all

    lines = []
    ok = run_all(lines.append)
    _emit("\n".join(lines) + "\n", out)
    return EXIT_OK if ok else EXIT_RUNTIME


COMMANDS = {
    "align": cmd_align,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "selftest": cmd_selftest,
    ("corpus", "build"): cmd_corpus_build,
    ("corpus", "stats"): cmd_corpus_stats,
}


def _setup_logging(quiet: bool) -> None:
    log.handlers.clear()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.WARNING if quiet else logging.INFO)
    log.propagate = False


def _error(message: str) -> None:
    sys.stderr.write("error: " + " ".join(str(message).split()) + "\n")


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(exc.usage)
        _error(exc)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)

    _setup_logging(getattr(args, "quiet", False))
    seed = getattr(args, "seed", 42)
    out = getattr(args, "out", None)
    try:
        cfg = load_config(args.config) if getattr(args, "config", None) else Config()
    except (ConfigError, OSError) as exc:
        _error(exc)
        return EXIT_USAGE
    log.info("dumoga %s", __version__)
    log.info("config %s", json.dumps({"seed": seed, **cfg.to_dict()}, sort_keys=True))

    key = (args.command, args.corpus_command) if args.command == "corpus" else args.command
    np.seterr(all="ignore")
    try:
        return COMMANDS[key](args, cfg, seed, out)
    except UsageError as exc:
        _error(exc)
        return EXIT_USAGE
    except (DataError, UnknownPredicate, ValueError, KeyError, FileNotFoundError, IsADirectoryError,
            UnicodeDecodeError) as exc:
        _error(exc)
        return EXIT_DATA
    except (LLMError, OSError, RuntimeError) as exc:
        _error(exc)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        _error(f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
