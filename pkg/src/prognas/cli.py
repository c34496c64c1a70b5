"""Command-line interface: search, derive, refine, stats, eval, gradcheck."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .cell import alpha_table_from_snapshot
from .config import (ConfigError, RunConfig, apply_stage_overrides,
                     desk_run_config, load_run_config)
from .data import Dataset, load_cifar10, synth_dataset
from .evalnet import EVAL_METRIC_COLUMNS, build_eval_net, train_eval
from .genotype import (connection_levels, count_skips, derive_genotype,
                       genotype_parse, genotype_serialize, refine_skips)
from .optim import ParamStore
from .search import SearchState, run_progressive_search
from .tensor import set_default_dtype

log = logging.getLogger(__name__)

_TEST_SEED_OFFSET = 1  # synthetic test split draws from seed + 1


def _error_line(exc: Exception) -> str:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        payload["field"] = exc.field
    return "ERROR " + json.dumps(payload, sort_keys=True)


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else desk_run_config()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if args.precision is not None:
        cfg.precision = args.precision
    if getattr(args, "stage_override", None):
        cfg.schedule = apply_stage_overrides(cfg.schedule, args.stage_override)
    set_default_dtype(cfg.precision)
    return cfg


def _build_datasets(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    d = cfg.dataset
    if d.kind == "synth":
        train = synth_dataset(cfg.seed, d.n, d.classes, d.size, d.preset,
                              d.channels, d.noise)
        test = synth_dataset(cfg.seed + _TEST_SEED_OFFSET, d.n_test, d.classes,
                             d.size, d.preset, d.channels, d.noise)
        return train, test
    train = load_cifar10(d.dir, "train", d.subset, cfg.seed)
    return train, load_cifar10(d.dir, "test")


def _load_alpha_table(path: str):
    return alpha_table_from_snapshot(json.loads(Path(path).read_text()))


def cmd_search(args) -> int:
    cfg = _load_config(args)
    train, _ = _build_datasets(cfg)
    resume = SearchState.load(args.resume) if args.resume else None
    genotype = run_progressive_search(cfg.schedule, cfg.settings, train,
                                      cfg.seed, cfg.out_dir, resume_from=resume)
    print(f"genotype written to {Path(cfg.out_dir) / 'genotype.txt'}")
    print(genotype_serialize(genotype), end="")
    return 0


def cmd_derive(args) -> int:
    table = _load_alpha_table(args.alphas)
    g = derive_genotype(table)
    text = genotype_serialize(g)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_refine(args) -> int:
    table = _load_alpha_table(args.alphas)
    g = refine_skips(table, args.max_skips, args.cell)
    text = genotype_serialize(g)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_stats(args) -> int:
    from .report import save_histogram_figure, write_csv

    g = genotype_parse(Path(args.genotype).read_text())
    hist = connection_levels(g)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for cell_type in ("normal", "reduce"):
        rows = [{"level": lvl, "count": cnt}
                for lvl, cnt in sorted(hist.cell(cell_type).items())]
        write_csv(out / f"levels_{cell_type}.csv", rows, ("level", "count"))
    save_histogram_figure({"normal": hist.normal, "reduce": hist.reduce},
                          out / "levels.png")

    from .evalnet import EvalConfig
    store = ParamStore()
    build_eval_net(g, EvalConfig(cells=args.cells, channels=args.channels),
                   store, np.random.default_rng(0), num_classes=args.classes)
    summary = {
        "nodes": g.nodes,
        "skip_count_normal": count_skips(g, "normal"),
        "skip_count_reduce": count_skips(g, "reduce"),
        "param_count": store.num_scalars(),
        "levels_normal": hist.normal,
        "levels_reduce": hist.reduce,
    }
    (out / "stats.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for k, v in summary.items():
        print(f"{k}: {v}")
    return 0


def cmd_eval(args) -> int:
    from .report import save_eval_figure, write_csv

    cfg = _load_config(args)
    train, test = _build_datasets(cfg)
    g = genotype_parse(Path(args.genotype).read_text())
    store = ParamStore()
    net = build_eval_net(g, cfg.eval, store, np.random.default_rng([cfg.seed, 42]),
                         num_classes=train.num_classes,
                         in_channels=train.images.shape[1],
                         input_size=train.images.shape[2])
    rows = train_eval(net, store, train, test, cfg.eval, cfg.seed)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "metrics.csv", rows, EVAL_METRIC_COLUMNS)
    save_eval_figure(rows, out / "metrics.png", title="evaluation")
    store.save(out / "model.ckpt")
    print(f"final test accuracy: {rows[-1]['test_acc']:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import gradcheck_suite

    results = gradcheck_suite(seeds=range(args.seeds))
    worst = 0.0
    for name in sorted(results):
        err = results[name]
        worst = max(worst, err)
        print(f"{'PASS' if err <= args.tol else 'FAIL'} {name}: {err:.3e}")
    print(f"worst: {worst:.3e} (tolerance {args.tol:.1e})")
    return 0 if worst <= args.tol else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prognas",
        description="Progressive differentiable cell-based architecture search")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--precision", choices=("f32", "f64"))
        p.add_argument("--stage-override", action="append", default=[],
                       metavar="K=V", help="override a stage field, e.g. "
                       "epochs=5 or 2.dropout=0.3")

    p = sub.add_parser("search", help="run the progressive search")
    common(p)
    p.add_argument("--resume", help="state.json from an interrupted run")
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("derive", help="derive a genotype from an alpha snapshot")
    p.add_argument("--alphas", required=True, help="alpha.json from a search stage")
    p.add_argument("--out", help="write the genotype here")
    p.set_defaults(fn=cmd_derive)

    p = sub.add_parser("refine", help="derive with a skip-connect cap")
    p.add_argument("--alphas", required=True)
    p.add_argument("--max-skips", "-M", type=int, default=2)
    p.add_argument("--cell", choices=("normal", "reduce"), default="normal")
    p.add_argument("--out", help="write the genotype here")
    p.set_defaults(fn=cmd_refine)

    p = sub.add_parser("stats", help="connection levels, skip and parameter counts")
    p.add_argument("--genotype", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cells", type=int, default=8)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--classes", type=int, default=10)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("eval", help="train the discrete network from a genotype")
    common(p)
    p.add_argument("--genotype", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference verification suite")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(_error_line(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
