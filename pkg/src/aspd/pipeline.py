"""End-to-end experiment: dataset, task network, two-stage sampler, evaluation grid."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

from .data import gen_synthetic, load_dataset, write_metrics_csv
from .serialization import save_checkpoint
from .taskheads import accuracy_eval
from .training import (
    DEFAULT_SIZES,
    TrainConfig,
    TrainTaskConfig,
    baseline_sampler,
    evaluate_grid,
    sampler_from_checkpoint,
    task_from_checkpoint,
    task_label,
    train_sampler_stage1,
    train_sampler_stage2,
    train_task,
)


@dataclass(frozen=True)
class PipelineConfig:
    classes: int = 6
    per_class: int = 250
    points: int = 1024
    task_epochs: int = 6
    stage1_epochs: int = 30
    stage2_epochs: int = 30
    stage: str = "2"  # "2" runs both stages, "one" skips stage 1
    sizes: tuple = DEFAULT_SIZES
    stage1_m: int = 32
    eval_sizes: tuple = (16, 32, 64)
    presampler: str = "fps"
    density_attention: bool = True
    seed: int = 0


@dataclass
class PipelineResult:
    paths: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    seconds: dict = field(default_factory=dict)
    task_accuracy: float = float("nan")  # full-resolution test accuracy of the task net

    def metric(self, sampler: str, m: int, name: str) -> float:
        for r in self.rows:
            if r.sampler == sampler and r.m == m:
                return getattr(r, name)
        raise KeyError((sampler, m))


def run_pipeline(cfg: PipelineConfig, workdir, log=None) -> PipelineResult:
    work = Path(workdir)
    work.mkdir(parents=True, exist_ok=True)
    res = PipelineResult()
    clock = time.perf_counter()

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        res.seconds[name] = now - clock
        clock = now
        if log is not None:
            log(f"{name}: {res.seconds[name]:.1f} s")

    data_dir = work / "data"
    gen_synthetic(data_dir, cfg.classes, cfg.per_class, cfg.points, cfg.seed)
    ds = load_dataset(data_dir)
    lap("data")

    task = train_task(ds.train, len(ds.classes), TrainTaskConfig(epochs=cfg.task_epochs, seed=cfg.seed), log)
    res.paths["task"] = work / "task.ckpt"
    save_checkpoint(res.paths["task"], task.tensors, task.config)
    task_params, task_cfg = task_from_checkpoint(task)
    res.task_accuracy = accuracy_eval(task_params, ds.test.clouds, ds.test.labels)
    if log is not None:
        log(f"task test accuracy {res.task_accuracy:.4f}")
    lap("task")

    common = dict(sizes=tuple(cfg.sizes), stage1_m=cfg.stage1_m, presampler=cfg.presampler,
                  density_attention=cfg.density_attention, seed=cfg.seed)
    stage1 = None
    if cfg.stage == "2":
        stage1 = train_sampler_stage1(ds.train, task_params,
                                      TrainConfig(stage="1", epochs=cfg.stage1_epochs, **common), log=log)
        res.paths["stage1"] = work / "stage1.ckpt"
        save_checkpoint(res.paths["stage1"], stage1.tensors, stage1.config)
        lap("stage1")
    final = train_sampler_stage2(ds.train, task_params,
                                 TrainConfig(stage=cfg.stage, epochs=cfg.stage2_epochs, **common), stage1, log=log)
    res.paths["sampler"] = work / "sampler.ckpt"
    save_checkpoint(res.paths["sampler"], final.tensors, final.config)
    lap("stage2")

    samplers = [("fps", baseline_sampler("fps")), ("rs", baseline_sampler("rs", cfg.seed)),
                ("as-pd", sampler_from_checkpoint(final))]
    res.rows = evaluate_grid(samplers, [(task_label(task_cfg), task_params)], ds.test, cfg.eval_sizes)
    res.paths["csv"] = work / "metrics.csv"
    write_metrics_csv(res.rows, res.paths["csv"])
    lap("eval")
    res.seconds["total"] = sum(res.seconds.values())
    return res
