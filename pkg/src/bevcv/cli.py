"""``bevcv`` command line.

Exit codes: 0 success, 1 validation or usage error, 2 I/O error.  Every
randomised subcommand takes a mandatory ``--seed``; output files are
byte-identical across runs for fixed inputs.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .data import (EMBEDDING_MAGIC, EMBEDDING_VERSION, WEIGHTS_MAGIC, WEIGHTS_VERSION, parse_manifest,
                   read_embeddings, read_weights, write_embeddings, write_weights)
from .errors import ValidationError
from .evaluation import (DEFAULT_OFFSETS, _pmap, benchmark_scaling, complexity_report, evaluate,
                         offset_sweep, retrieve_all)
from .imaging import CropSpec, fov_crop, load_image, resize_bilinear, save_ppm
from .index import build_index
from .net.model import init_weights, layer_graph
from .pipeline import Embedder

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    text = buf.getvalue()
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _table(header, rows) -> str:
    cells = [list(map(str, header))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def _crop_spec(args, cfg: RunConfig, yaw: float) -> CropSpec:
    fov = cfg.crop.fov_deg if args.fov is None else args.fov
    return CropSpec(fov, yaw + args.yaw_offset)


def _load_index(path):
    ids, vecs = read_embeddings(path)
    return build_index(ids, vecs)


def _rounded(v) -> str:
    return f"{v:.2f}"


# --------------------------------------------------------------------------- subcommands


def cmd_crop(args, cfg):
    entries = parse_manifest(args.manifest)
    base = Path(args.manifest).parent
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def work(e):
        img = fov_crop(load_image(_resolve(base, e.pov_path)), _crop_spec(args, cfg, e.yaw_deg))
        if args.size:
            img = resize_bilinear(img, args.size, args.size)
        save_ppm(img, out / f"{e.id}.ppm")

    _pmap(work, entries, args.jobs)
    print(f"cropped {len(entries)} images into {out}")


def cmd_init_weights(args, cfg):
    w = init_weights(cfg.model_config(), args.seed)
    write_weights(args.out, w)
    print(f"wrote {len(w)} tensors to {args.out}")


def cmd_embed(args, cfg):
    entries = parse_manifest(args.manifest)
    base = Path(args.manifest).parent
    emb = Embedder(cfg.model_config(), read_weights(args.weights))
    if args.branch == "pov":
        emb.pov_branch  # build the resample map once, before workers start

        def work(e):
            return emb.embed_pov(load_image(_resolve(base, e.pov_path)), _crop_spec(args, cfg, e.yaw_deg))
    else:
        def work(e):
            return emb.embed_aerial(load_image(_resolve(base, e.aerial_path)))

    vecs = _pmap(work, entries, args.jobs)
    dim = cfg.model_config().embed_dim
    mat = np.stack(vecs) if vecs else np.zeros((0, dim), np.float32)
    write_embeddings(args.out, [e.id for e in entries], mat)
    print(f"wrote {len(entries)} {args.branch} embeddings to {args.out}")


def cmd_build_index(args, cfg):
    ids, vecs = read_embeddings(args.embeddings)
    if args.normalize:
        norms = np.linalg.norm(vecs.astype(np.float64), axis=1, keepdims=True)
        if (norms == 0).any():
            raise ValidationError("vectors", "cannot normalise a zero vector")
        vecs = (vecs / norms).astype(np.float32)
    index = build_index(ids, vecs)
    # the tree is rebuilt on load, so the persisted form is the validated embedding file
    write_embeddings(args.out, ids, vecs)
    print(f"indexed {len(index)} vectors of dim {index.dim} (tree depth {index.depth()})")


def cmd_query(args, cfg):
    index = _load_index(args.index)
    qids, qvecs = read_embeddings(args.queries)
    results = retrieve_all(index, qvecs, args.k, args.jobs)
    rows = [(int(qid), rank, int(i), _fmt(s))
            for qid, r in zip(qids, results)
            for rank, (i, s) in enumerate(zip(r.ids, r.similarities), start=1)]
    _write_csv(args.out, ["query_id", "rank", "id", "similarity"], rows)


def cmd_evaluate(args, cfg):
    index = _load_index(args.index)
    qids, qvecs = read_embeddings(args.queries)
    report = evaluate(index, qvecs, [int(i) for i in qids], pct=args.pct, jobs=args.jobs)
    row = report.row()
    if args.json:
        sys.stdout.write(json.dumps(row, indent=2) + "\n")
    else:
        sys.stdout.write(_table(["metric", "value"],
                                [(k, _rounded(v) if isinstance(v, float) else v) for k, v in row.items()]))
    if args.out:
        _write_csv(args.out, list(row), [[_fmt(v) if isinstance(v, float) else v for v in row.values()]])
        from .plots import figure_path, plot_recall
        plot_recall(report, figure_path(args.out))


def _pairs_from_file(path):
    tensors = read_weights(path)
    missing = {"pov", "aerial"} - set(tensors)
    if missing:
        raise ValidationError(sorted(missing)[0], f"pairs file lacks tensor {sorted(missing)[0]!r}")
    return tensors["pov"], tensors["aerial"]


def cmd_train_head(args, cfg):
    from .train import train_heads
    pov, aer = _pairs_from_file(args.pairs)
    trainer = replace(cfg.trainer, seed=args.seed)
    if args.epochs is not None:
        trainer = replace(trainer, epochs=args.epochs)
    init = read_weights(args.weights) if args.weights else None
    result = train_heads(pov, aer, trainer, cfg.loss, weights=init,
                         embed_dim=cfg.model_config().embed_dim)
    write_weights(args.out, result.weights)
    rows = [(ep, _fmt(loss), _fmt(lr)) for ep, loss, lr in result.trace_rows()]
    _write_csv(args.loss_csv, ["epoch", "loss", "lr"], rows)
    if args.loss_csv:
        from .plots import figure_path, plot_loss_trace
        plot_loss_trace(result.losses, result.lrs, figure_path(args.loss_csv))
    print(f"trained {len(result.losses)} epochs, final loss {result.losses[-1]:.6f}", file=sys.stderr)


def _sweep_synthetic(args, cfg, offsets):
    from .synthetic import SyntheticConfig, SyntheticDataset, run_synthetic_experiment
    trainer = replace(cfg.trainer, seed=args.seed)
    data = SyntheticDataset(SyntheticConfig(seed=args.seed, fov_deg=cfg.crop.fov_deg))
    run = run_synthetic_experiment(data, trainer, cfg.loss, offsets, sweep_seed=args.seed, jobs=args.jobs)
    return run.sweep


def _sweep_manifest(args, cfg, offsets):
    if not args.weights:
        raise ValidationError("weights", "--weights is required with --manifest")
    entries = parse_manifest(args.manifest)
    base = Path(args.manifest).parent
    emb = Embedder(cfg.model_config(), read_weights(args.weights))
    emb.pov_branch
    aer = np.stack(_pmap(lambda e: emb.embed_aerial(load_image(_resolve(base, e.aerial_path))),
                         entries, args.jobs))
    ids = [e.id for e in entries]
    index = build_index(ids, aer)
    panos = [load_image(_resolve(base, e.pov_path)) for e in entries]
    fov = cfg.crop.fov_deg if args.fov is None else args.fov

    def pipeline(i, yaw):
        return emb.embed_pov(panos[i], CropSpec(fov, yaw))

    return offset_sweep(pipeline, [e.yaw_deg for e in entries], ids, index, offsets, args.seed, args.jobs)


def cmd_sweep_offset(args, cfg):
    offsets = tuple(args.yaw_offset) if args.yaw_offset else DEFAULT_OFFSETS
    if any(o < 0 for o in offsets):
        raise ValidationError("yaw_offset", "offsets are magnitudes and must be >= 0")
    rows = _sweep_manifest(args, cfg, offsets) if args.manifest else _sweep_synthetic(args, cfg, offsets)
    header = ["offset_deg"] + list(rows[0][1].row())
    _write_csv(args.out, header, [[_fmt(o)] + [_fmt(v) if isinstance(v, float) else v
                                               for v in r.row().values()] for o, r in rows])
    if args.out:
        sys.stdout.write(_table(header, [[f"{o:g}"] + [_rounded(v) if isinstance(v, float) else v
                                                       for v in r.row().values()] for o, r in rows]))
        from .plots import figure_path, plot_offset_sweep
        plot_offset_sweep(rows, figure_path(args.out))


def cmd_report_complexity(args, cfg):
    mc = cfg.model_config()
    graph = layer_graph(mc)
    report = complexity_report(graph, mc.embed_dim, args.ref_dim)
    row = report.row()
    if args.json:
        sys.stdout.write(json.dumps(row, indent=2) + "\n")
    else:
        sys.stdout.write("FLOPs are counted as 2 x multiply-accumulates\n")
        sys.stdout.write(_table(["quantity", "value"],
                                [(k, _rounded(v) if isinstance(v, float) else v) for k, v in row.items()]))
    if args.out:
        _write_csv(args.out, list(row), [[_fmt(v) if isinstance(v, float) else v for v in row.values()]])


def cmd_benchmark(args, cfg):
    timings = benchmark_scaling(tuple(args.dims), tuple(args.sizes), args.queries, args.k, args.seed,
                                args.repeats)
    rows = [(t.method, t.dim, t.size, t.k, f"{t.median_s:.6e}", f"{t.p95_s:.6e}") for t in timings]
    header = ["method", "dim", "size", "k", "median_s", "p95_s"]
    _write_csv(args.out, header, rows)
    if args.out:
        sys.stdout.write(_table(header, rows))
        from .plots import figure_path, plot_benchmark
        plot_benchmark(timings, figure_path(args.out))


def cmd_config(args, cfg):
    sys.stdout.write(cfg.dumps() + "\n")


def version_info(as_json: bool = False) -> str:
    cfg = RunConfig()
    info = {
        "artifact": __version__,
        "formats": {EMBEDDING_MAGIC.decode(): EMBEDDING_VERSION, WEIGHTS_MAGIC.decode(): WEIGHTS_VERSION},
        "default_config": cfg.to_dict(),
    }
    if as_json:
        return json.dumps(info, indent=2, sort_keys=True) + "\n"
    return (f"bevcv {__version__}\n"
            f"BEVC embedding format v{EMBEDDING_VERSION}\n"
            f"BVWT weights format v{WEIGHTS_VERSION}\n"
            f"default config:\n{cfg.dumps()}\n")


def cmd_version(args, cfg):
    sys.stdout.write(version_info(args.json))


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bevcv", description="BEV cross-view geo-localisation toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_, config=True):
        sp = sub.add_parser(name, help=help_, description=help_)
        if config:
            sp.add_argument("--config", help="JSON run config (defaults if omitted)")
        sp.set_defaults(func=fn)
        return sp

    def jobs(sp):
        sp.add_argument("--jobs", type=int, default=1, help="worker threads (output order is fixed)")

    def crop_flags(sp):
        sp.add_argument("--fov", type=float, help="crop field of view in degrees (config default)")
        sp.add_argument("--yaw-offset", type=float, default=0.0, help="degrees added to every yaw")

    sp = add("crop", cmd_crop, "crop limited-FOV views out of manifest panoramas")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True, help="output directory for <id>.ppm")
    sp.add_argument("--size", type=int, default=224, help="square resize after cropping; 0 keeps crop size")
    crop_flags(sp)
    jobs(sp)

    sp = add("init-weights", cmd_init_weights, "write seeded random weights for the whole model")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)

    sp = add("embed", cmd_embed, "embed manifest images with one branch")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--weights", required=True)
    sp.add_argument("--branch", choices=("pov", "aerial"), required=True)
    sp.add_argument("--out", required=True)
    crop_flags(sp)
    jobs(sp)

    sp = add("build-index", cmd_build_index, "validate an embedding file as a retrieval index", config=False)
    sp.add_argument("embeddings")
    sp.add_argument("--out", required=True)
    sp.add_argument("--normalize", action="store_true", help="L2-normalise rows instead of rejecting them")

    sp = add("query", cmd_query, "top-K retrieval for every query embedding", config=False)
    sp.add_argument("index")
    sp.add_argument("queries")
    sp.add_argument("--k", type=int, default=10)
    sp.add_argument("--out", help="CSV path (stdout if omitted)")
    jobs(sp)

    sp = add("evaluate", cmd_evaluate, "recall@K of queries whose truth id is their own id", config=False)
    sp.add_argument("index")
    sp.add_argument("queries")
    sp.add_argument("--pct", type=float, default=1.0, help="top-percent K (default 1)")
    sp.add_argument("--out", help="CSV path; a recall PNG is written next to it")
    sp.add_argument("--json", action="store_true")
    jobs(sp)

    sp = add("train-head", cmd_train_head, "train both projection heads on stored feature pairs")
    sp.add_argument("pairs", help="BVWT file with 'pov' and 'aerial' feature tensors")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True, help="output weights")
    sp.add_argument("--weights", help="starting weights (head tensors are replaced)")
    sp.add_argument("--epochs", type=int, help="override trainer.epochs")
    sp.add_argument("--loss-csv", help="per-epoch loss trace; a PNG is written next to it")

    sp = add("sweep-offset", cmd_sweep_offset, "recall under yaw offsets (synthetic unless --manifest)")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--yaw-offset", type=float, action="append",
                    help="offset magnitude in degrees, repeatable (default 0 5 15 25 35 45)")
    sp.add_argument("--manifest")
    sp.add_argument("--weights")
    sp.add_argument("--fov", type=float)
    sp.add_argument("--out", help="CSV path; a PNG is written next to it")
    jobs(sp)

    sp = add("report-complexity", cmd_report_complexity, "parameter, FLOP and retrieval-cost report")
    sp.add_argument("--ref-dim", type=int, default=768)
    sp.add_argument("--out")
    sp.add_argument("--json", action="store_true")

    sp = add("benchmark", cmd_benchmark, "KD-tree vs brute-force query latency", config=False)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--dims", type=int, nargs="+", default=[128, 512, 768])
    sp.add_argument("--sizes", type=int, nargs="+", default=[1000, 2000, 4000, 8000])
    sp.add_argument("--queries", type=int, default=20)
    sp.add_argument("--k", type=int, default=10)
    sp.add_argument("--repeats", type=int, default=3)
    sp.add_argument("--out")

    add("config", cmd_config, "print the effective config as JSON")

    sp = add("version", cmd_version, "artifact and format versions", config=False)
    sp.add_argument("--json", action="store_true")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "jobs", 1) < 1:
            raise ValidationError("jobs", "--jobs must be >= 1")
        if getattr(args, "k", 1) < 1:
            raise ValidationError("k", "--k must be >= 1")
        cfg = load_config(getattr(args, "config", None))
        args.func(args, cfg)
    except ValidationError as exc:
        print(f"bevcv: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"bevcv: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main(argv=None) -> int:
    try:
        return run(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_VALIDATION
