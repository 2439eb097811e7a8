"""Command-line entry point: ``python -m canet <subcommand>``.

Data directories hold one pair of VVOL files per case,
``<case>_img.vvol`` (float32 intensities) and ``<case>_seg.vvol`` (int8
labels). Every command that writes a directory also writes
``config.txt`` with all settings resolved.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..metrics import aggregate, evaluate_case, read_report, write_report
from ..net.checkpoint import load_checkpoint, save_checkpoint
from ..net.model import NetworkConfig
from ..prep import PrepStats, foreground_stats, median_spacing, preprocess_case
from ..voxcore import Rng
from .config import flatten, load_configs, resolved, write_kv
from .folds import make_folds
from .phantom import PhantomConfig, gen_phantom
from .vvol import read_vvol, write_vvol

IMG, SEG = "_img.vvol", "_seg.vvol"


def list_cases(folder) -> list[str]:
    cases = sorted(p.name[: -len(IMG)] for p in Path(folder).glob(f"*{IMG}"))
    if not cases:
        raise SystemExit(f"no *{IMG} files in {folder}")
    return cases


def load_case(folder, case, labels=True):
    v = read_vvol(Path(folder) / f"{case}{IMG}", "volume")
    if not labels:
        return v
    return v, read_vvol(Path(folder) / f"{case}{SEG}", "label")


def _echo(out: Path, settings: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_kv(out / "config.txt", {k: str(v) for k, v in settings.items()})


def _overrides(pairs) -> dict[str, str]:
    kv = {}
    for item in pairs or ():
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        k, _, v = item.partition("=")
        kv[k.strip()] = v.strip()
    return kv


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_phantom(a):
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = Rng(a.seed)
    for i in range(a.count):
        v, m = gen_phantom(rng.child(), tuple(a.dims), tuple(a.spacing))
        write_vvol(out / f"case_{i:03d}{IMG}", v)
        write_vvol(out / f"case_{i:03d}{SEG}", m)
    settings = {"count": a.count, "seed": a.seed, "dims": " ".join(map(str, a.dims)),
                "spacing": " ".join(map(repr, map(float, a.spacing)))}
    settings.update({f"phantom.{k}": v for k, v in flatten(PhantomConfig()).items()})
    _echo(out, settings)
    print(f"wrote {a.count} cases to {out}")


def cmd_preprocess(a):
    src, out = Path(a.data), Path(a.out)
    cases = list_cases(src)
    pairs = [load_case(src, c) for c in cases]
    target = tuple(a.spacing) if a.spacing else median_spacing([v.spacing for v, _ in pairs])
    stats = foreground_stats([v for v, _ in pairs], [m for _, m in pairs], target)
    out.mkdir(parents=True, exist_ok=True)
    stats.save(out / "stats.txt")
    for c, (v, m) in zip(cases, pairs):
        z, zm = preprocess_case(v, stats, m)
        write_vvol(out / f"{c}{IMG}", z)
        write_vvol(out / f"{c}{SEG}", zm)
    _echo(out, {"source": src, **{f"stats.{k}": v for k, v in flatten(stats).items()}})
    print(f"preprocessed {len(cases)} cases; stats in {out / 'stats.txt'}")


def cmd_train(a):
    kv = _overrides(a.set)
    if a.deterministic:
        kv["deterministic"] = "true"
    if a.workers is not None:
        kv["workers"] = str(a.workers)
    cfg, netcfg = load_configs(a.config, kv)
    from .train import train, write_history  # deferred: pulls in the whole network stack

    src, out = Path(a.data), Path(a.out)
    ids = list_cases(src)
    if a.fold is None:
        train_ids, val_ids = ids, []
    else:
        split = make_folds(ids, cfg.folds, cfg.seed)[a.fold]
        train_ids, val_ids = list(split.train), list(split.val)
    settings = resolved(cfg, netcfg)
    settings["fold"] = "all" if a.fold is None else str(a.fold)
    _echo(out, settings)
    write_kv(out / "split.txt", {"train": " ".join(train_ids), "val": " ".join(val_ids)})
    result = train([load_case(src, c) for c in train_ids], cfg, netcfg,
                   [load_case(src, c) for c in val_ids], log=print)
    save_checkpoint(out / "checkpoint.cnck", result.net)
    write_history(out / "history.tsv", result.history)
    print(f"saved {out / 'checkpoint.cnck'} after {result.steps} steps")


def cmd_infer(a):
    from .infer import infer

    net = load_checkpoint(a.checkpoint)
    stats = PrepStats.load(a.stats)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = [Path(p) for p in a.inputs]
    for path in inputs:
        v = read_vvol(path, "volume")
        labels = infer(v, net, stats, tuple(a.patch), a.mode, a.overlap, postproc=a.postproc)
        name = path.name[: -len(IMG)] if path.name.endswith(IMG) else path.stem
        write_vvol(out / f"{name}{SEG}", labels)
    _echo(out, {"checkpoint": a.checkpoint, "stats": a.stats, "patch": " ".join(map(str, a.patch)),
                "mode": a.mode, "overlap": repr(a.overlap), "postproc": a.postproc,
                **{f"net.{k}": v for k, v in flatten(net.cfg).items()}})
    print(f"wrote {len(inputs)} label maps to {out}")


def cmd_eval(a):
    if a.aggregate:
        reports = [r for p in a.aggregate for r in read_report(p)]
    else:
        if not (a.pred and a.gt and a.out):
            raise SystemExit("eval needs --pred, --gt and --out (or --aggregate REPORT...)")
        reports = []
        for case in list_cases(a.gt):
            gt = read_vvol(Path(a.gt) / f"{case}{SEG}", "label")
            pred = read_vvol(Path(a.pred) / f"{case}{SEG}", "label")
            reports.append(evaluate_case(pred, gt, case))
        write_report(a.out, reports)
    summary = aggregate(reports)
    print("class\tdsc\thd_mm\tavd_mm")
    for cls, s in summary.items():
        print(f"{cls}\t{s['dsc']:.4f}\t{s['hd_mm']:.3f}\t{s['avd_mm']:.3f}")


def cmd_gradcheck(a):
    from .gradcheck import format_report, gradcheck

    cfg = NetworkConfig(stages=a.stages, base_filters=a.base, aac_enabled=not a.no_aac,
                        max_axis_len=max(a.dims), seed=a.seed)
    rows = gradcheck(cfg, tuple(a.dims), a.seed, a.step)
    sys.stdout.write(format_report(rows))
    worst = max(r.max_rel_err for r in rows)
    print(f"worst relative error {worst:.3e} (tolerance {a.tol:g})")
    return 0 if worst < a.tol else 1


def cmd_bench(a):
    from .bench import bench_attention, format_report

    report = format_report(bench_attention(tuple(a.sizes), a.channels, a.repeats))
    sys.stdout.write(report)
    if a.out:
        Path(a.out).write_text(report)


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="canet", description="Kidney multi-structure segmentation toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a seeded synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", type=int, nargs=3, default=[48, 48, 48])
    p.add_argument("--spacing", type=float, nargs=3, default=[1.0, 1.0, 1.0])
    p.set_defaults(fn=cmd_phantom)

    p = sub.add_parser("preprocess", help="compute intensity stats and resample/normalize a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--spacing", type=float, nargs=3, help="target spacing (default: median)")
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train", help="train on a preprocessed dataset, optionally one fold")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key = value file of TrainConfig / net.* fields")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
    p.add_argument("--fold", type=int, help="fold index; omit to train on every case")
    p.add_argument("--deterministic", action="store_true", help="single worker, fixed order")
    p.add_argument("--workers", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="segment raw volumes with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--patch", type=int, nargs=3, default=[64, 64, 64])
    p.add_argument("--mode", choices=("sliding", "whole"), default="sliding")
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--postproc", choices=("largest", "closing", "none"), default="largest")
    p.add_argument("inputs", nargs="+", help="*_img.vvol files")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="score predictions, or aggregate existing reports")
    p.add_argument("--pred", help="directory of predicted *_seg.vvol")
    p.add_argument("--gt", help="directory of reference *_seg.vvol")
    p.add_argument("--out", help="report file to write")
    p.add_argument("--aggregate", nargs="+", metavar="REPORT", help="summarize these report files")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all parameter gradients")
    p.add_argument("--base", type=int, default=2)
    p.add_argument("--stages", type=int, default=2)
    p.add_argument("--no-aac", action="store_true")
    p.add_argument("--dims", type=int, nargs=3, default=[8, 8, 8])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("bench-attn", help="axial vs full attention cost")
    p.add_argument("--sizes", type=int, nargs="+", default=[4, 8, 16, 24])
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return int(args.fn(args) or 0)


if __name__ == "__main__":
    raise SystemExit(main())
