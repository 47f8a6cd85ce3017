"""Command-line interface: `aspd <command> ...`.

Exit codes: 0 success, 2 configuration or contract error, 3 io or format
error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import geometry
from .data import gen_synthetic, load_dataset, load_xyz, save_xyz, write_metrics_csv
from .errors import AspdError, ConfigError
from .objectives import LossWeights
from .sampler import FPSSampler, RandomSampler
from .serialization import load_checkpoint, save_checkpoint
from .training import (
    DEFAULT_SIZES,
    TrainConfig,
    TrainTaskConfig,
    epoch_log_csv,
    evaluate_grid,
    sampler_from_checkpoint,
    task_from_checkpoint,
    train_sampler,
    train_task,
)


def _int_list(text: str) -> tuple:
    try:
        vals = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _range(text: str) -> tuple:
    lo, sep, hi = text.partition(":")
    try:
        if not sep:
            raise ValueError
        return int(lo), int(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def cmd_gen_data(args) -> None:
    man = gen_synthetic(args.out, args.classes, args.per_class, args.points, args.seed)
    print(f"wrote {sum(len(v) for v in man.splits.values())} clouds to {args.out}")


def cmd_train_task(args) -> None:
    ds = load_dataset(args.data)
    cfg = TrainTaskConfig(epochs=args.epochs, batch=args.batch, widths=args.widths, seed=args.seed)
    ckpt = train_task(ds.train, len(ds.classes), cfg, log=_log)
    save_checkpoint(args.out, ckpt.tensors, ckpt.config)
    print(f"saved task network to {args.out}")


def cmd_train_sampler(args) -> None:
    ds = load_dataset(args.data)
    task_params, _ = task_from_checkpoint(load_checkpoint(args.task))
    stage1 = load_checkpoint(args.from_) if args.from_ else None
    if args.stage != "2" and stage1 is not None:
        raise ConfigError("--from is only used with --stage 2")
    cfg = TrainConfig(stage=args.stage, sizes=args.sizes, var_input=args.var_input, epochs=args.epochs,
                      weights=LossWeights(args.lambda_, args.alpha, args.beta), presampler=args.presampler,
                      density_attention=not args.no_density_attention, seed=args.seed)
    ckpt = train_sampler(ds.train, task_params, cfg, stage1, log=_log)
    save_checkpoint(args.out, ckpt.tensors, ckpt.config)
    log_path = Path(str(args.out) + ".log.csv")
    with open(log_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(epoch_log_csv(ckpt))
    print(f"saved sampler to {args.out} (epoch log {log_path})")


def _load_sampler(name: str, seed: int = 0):
    if name == "fps":
        return "fps", FPSSampler(0)
    if name == "rs":
        return "rs", RandomSampler(seed)
    return Path(name).stem, sampler_from_checkpoint(load_checkpoint(name))


def cmd_sample(args) -> None:
    points = load_xyz(args.input)
    if args.sampler == "fps":
        out = points[geometry.fps(points, args.m, args.start)]
    elif args.sampler == "rs":
        out = points[geometry.random_sample(points, args.m, args.start)]
    else:
        _, sampler = _load_sampler(args.sampler)
        out = sampler.sample(points, args.m, args.start)
    save_xyz(out, args.out)
    print(f"wrote {len(out)} points to {args.out}")


def cmd_eval(args) -> None:
    ds = load_dataset(args.data)
    samplers = [_load_sampler(s) for s in args.samplers.split(",") if s]
    tasks = []
    for path in args.tasks.split(","):
        params, _ = task_from_checkpoint(load_checkpoint(path))
        tasks.append((Path(path).stem, params))
    rows = evaluate_grid(samplers, tasks, ds.test, args.sizes, args.input_sizes)
    write_metrics_csv(rows, args.csv)
    print(f"wrote {2 * len(rows)} measurements to {args.csv}")


def cmd_bench(args) -> None:
    rng = np.random.default_rng(0)
    p = rng.normal(size=(args.n, 3))
    if args.op == "fps":
        run = lambda: geometry.fps(p, args.m, 0)  # noqa: E731
    elif args.op == "knn":
        run = lambda: geometry.knn(p, p, args.k)  # noqa: E731
    else:
        s = rng.normal(size=(args.m, 3))
        run = lambda: geometry.chamfer(p, s)  # noqa: E731
    run()  # compile / warm up
    times = []
    for _ in range(args.repeat):
        t0 = time.perf_counter()
        run()
        times.append(time.perf_counter() - t0)
    print(f"{args.op} n={args.n} m={args.m} k={args.k}: median {np.median(times) * 1e3:.3f} ms "
          f"over {args.repeat} runs")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aspd", description="Arbitrary-size task-aware point cloud downsampling.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic shape dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--points", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-task", help="train the PointNet task network")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--widths", type=_int_list, default=(64, 64, 128, 1024))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_task)

    p = sub.add_parser("train-sampler", help="train the learned sampler against a frozen task network")
    p.add_argument("--data", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stage", choices=("1", "2", "one"), default="1")
    p.add_argument("--from", dest="from_", default=None)
    p.add_argument("--sizes", type=_int_list, default=DEFAULT_SIZES)
    p.add_argument("--presampler", choices=("fps", "rs"), default="fps")
    p.add_argument("--no-density-attention", action="store_true")
    p.add_argument("--var-input", type=_range, default=None)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lambda", dest="lambda_", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=10.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_sampler)

    p = sub.add_parser("sample", help="downsample one XYZ file")
    p.add_argument("--input", required=True)
    p.add_argument("--sampler", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="accuracy / Hausdorff grid over samplers, task nets and sizes")
    p.add_argument("--data", required=True)
    p.add_argument("--samplers", required=True)
    p.add_argument("--tasks", required=True)
    p.add_argument("--sizes", type=_int_list, required=True)
    p.add_argument("--input-sizes", type=_int_list, default=None)
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time a geometry kernel")
    p.add_argument("--op", choices=("fps", "knn", "chamfer"), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, default=32)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--repeat", type=int, default=5)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except AspdError as exc:
        print(f"aspd: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"aspd: error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
