"""Desk-scale end-to-end run: synthetic data, task net, two-stage sampler, metrics CSV.

    python scripts/desk_pipeline.py --out runs/desk [--stage1-epochs 30 --stage2-epochs 30]
"""

import argparse

from aspd.pipeline import PipelineConfig, run_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--classes", type=int, default=6)
    ap.add_argument("--per-class", type=int, default=250)
    ap.add_argument("--task-epochs", type=int, default=6)
    ap.add_argument("--stage1-epochs", type=int, default=30)
    ap.add_argument("--stage2-epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = PipelineConfig(classes=args.classes, per_class=args.per_class, task_epochs=args.task_epochs,
                         stage1_epochs=args.stage1_epochs, stage2_epochs=args.stage2_epochs, seed=args.seed)
    res = run_pipeline(cfg, args.out, log=print)
    for r in res.rows:
        print(f"{r.sampler:6s} m={r.m:4d}  acc {r.acc:.4f}  hd {r.hd:.4f}")
    print(f"total {res.seconds['total']:.0f} s; metrics in {res.paths['csv']}")


if __name__ == "__main__":
    main()
