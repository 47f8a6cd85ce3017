"""Task-network training, two-stage sampler training, augmentation and evaluation grids."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .data import MetricsRow, Split
from .errors import CheckpointError, ConfigError, ContractError, NumericError
from .objectives import (
    CLASSIFICATION_WEIGHTS,
    LossWeights,
    compound_loss,
    conformity_loss,
    cross_entropy,
    offset_loss,
)
from .optim import AdamState, adam_step, step_lr
from .presampling import adaptive_k
from .refinement import DENSITY_PREFIXES
from .sampler import FPSSampler, LearnedSampler, RandomSampler, SamplerConfig, stage_points
from .serialization import Checkpoint
from .taskheads import PointNetConfig, accuracy_eval, classify_forward, init_pointnet, pointwise_widths
from .tensor import Tape, backward

__all__ = [
    "adaptive_k", "augment", "TrainTaskConfig", "TrainConfig", "train_task", "train_sampler_stage1",
    "train_sampler_stage2", "train_sampler", "evaluate_grid", "task_from_checkpoint",
    "sampler_from_checkpoint", "resize_inputs",
]

DEFAULT_SIZES = (16, 32, 64, 128, 256, 512)
JITTER_SIGMA = 0.01
JITTER_CLIP = 0.05


# ---------------------------------------------------------------- augmentation

def rotation_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def augment(points, rng: np.random.Generator, angle: float | None = None, sigma: float = JITTER_SIGMA,
            clip: float = JITTER_CLIP) -> np.ndarray:
    """Random rotation about y followed by clipped Gaussian jitter.

    Works on one (n, 3) cloud or a (b, n, 3) batch (one angle per cloud).
    """
    p = np.asarray(points, dtype=np.float64)
    batch = p.ndim == 3
    clouds = p if batch else p[None]
    if angle is None:
        angles = rng.uniform(0.0, 2.0 * np.pi, size=len(clouds))
    else:
        angles = np.full(len(clouds), float(angle))
    out = np.stack([c @ rotation_y(a).T for c, a in zip(clouds, angles)])
    if sigma > 0:
        out = out + np.clip(rng.normal(0.0, sigma, size=out.shape), -clip, clip)
    return out if batch else out[0]


# ---------------------------------------------------------------- configs

@dataclass(frozen=True)
class TrainTaskConfig:
    epochs: int = 10
    batch: int = 32
    widths: tuple = (64, 64, 128, 1024)
    head: tuple = (512, 256)
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch < 1:
            raise ConfigError("epochs and batch must be >= 1")
        if not self.widths or min(self.widths) < 1:
            raise ConfigError(f"bad point-wise widths {self.widths}")


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "2"  # "1", "2" or "one"
    sizes: tuple = DEFAULT_SIZES  # stage-2 candidate sample sizes
    stage1_m: int = 32
    var_input: tuple | None = None  # (lo, hi) input-size range, inclusive
    batch: int = 32
    epochs: int = 30
    lr: float = 1e-3
    lr_decay: float = 0.7
    lr_every: int = 20
    lr_floor: float = 1e-5
    weights: LossWeights = CLASSIFICATION_WEIGHTS
    presampler: str = "fps"
    density_attention: bool = True
    seed: int = 0
    n0: int = 1024
    k0: int = 40

    def __post_init__(self):
        if self.stage not in ("1", "2", "one"):
            raise ConfigError(f"stage must be 1, 2 or one, got {self.stage!r}")
        if self.presampler not in ("fps", "rs"):
            raise ConfigError(f"unknown pre-sampler {self.presampler!r}")
        if self.epochs < 1 or self.batch < 1:
            raise ConfigError("epochs and batch must be >= 1")
        if not self.sizes or min(self.sizes) < 1 or self.stage1_m < 1:
            raise ConfigError("sample sizes must be >= 1")
        if self.var_input is not None:
            lo, hi = self.var_input
            if not 1 <= lo <= hi:
                raise ConfigError(f"bad input-size range {self.var_input}")

    def lr_at(self, epoch: int) -> float:
        return step_lr(epoch, self.lr, self.lr_decay, self.lr_every, self.lr_floor)

    def sample_sizes(self) -> tuple:
        return (self.stage1_m,) if self.stage == "1" else tuple(self.sizes)

    def check_sizes(self, points_per_cloud: int) -> None:
        """Every drawn (n, m) pair must satisfy m < n."""
        n_min = points_per_cloud if self.var_input is None else self.var_input[0]
        n_max = points_per_cloud if self.var_input is None else self.var_input[1]
        if n_max > points_per_cloud:
            raise ConfigError(f"input size {n_max} exceeds the {points_per_cloud} points per cloud")
        if max(self.sample_sizes()) >= n_min:
            raise ContractError(f"sample size {max(self.sample_sizes())} must be < input size {n_min}")

    def to_meta(self) -> dict:
        vi = "" if self.var_input is None else f"{self.var_input[0]}:{self.var_input[1]}"
        return {
            "train.stage": self.stage, "train.sizes": ",".join(map(str, self.sizes)),
            "train.stage1_m": str(self.stage1_m), "train.var_input": vi, "train.batch": str(self.batch),
            "train.epochs": str(self.epochs), "train.seed": str(self.seed),
            "train.lambda": repr(self.weights.task), "train.alpha": repr(self.weights.conf),
            "train.beta": repr(self.weights.off),
        }


# ---------------------------------------------------------------- checkpoints

def _check_structure(params: dict, expected: dict, what: str) -> None:
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise CheckpointError(f"{what}: missing tensors {missing}, unexpected {extra}")
    for k, v in expected.items():
        if params[k].shape != v.shape:
            raise CheckpointError(f"{what}: tensor {k} has shape {params[k].shape}, expected {v.shape}")


def task_from_checkpoint(ckpt: Checkpoint) -> tuple[dict, PointNetConfig]:
    if ckpt.config.get("kind") != "task":
        raise CheckpointError("not a task-network checkpoint")
    try:
        widths = tuple(int(v) for v in ckpt.config["widths"].split(","))
        head = tuple(int(v) for v in ckpt.config["head"].split(","))
        cfg = PointNetConfig(widths, head, int(ckpt.config["classes"]))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"task checkpoint config malformed: {exc}") from exc
    params = ckpt.params()
    _check_structure(params, init_pointnet(cfg, np.random.default_rng(0)), "task checkpoint")
    return params, cfg


def sampler_from_checkpoint(ckpt: Checkpoint) -> LearnedSampler:
    if ckpt.config.get("kind") != "sampler":
        raise CheckpointError("not a sampler checkpoint")
    cfg = SamplerConfig.from_meta(ckpt.config)
    params = ckpt.params()
    _check_structure(params, LearnedSampler.fresh(cfg, 0).params, "sampler checkpoint")
    return LearnedSampler(cfg, params)


def _encode_log(rows) -> str:
    return ";".join(",".join(str(v) for v in row) for row in rows)


# ---------------------------------------------------------------- task network

@dataclass
class EpochLog:
    rows: list = field(default_factory=list)

    def add(self, **values):
        self.rows.append(values)


def train_task(train: Split, classes: int, cfg: TrainTaskConfig = TrainTaskConfig(), log=None) -> Checkpoint:
    """Cross-entropy training of a PointNet on full augmented clouds."""
    if len(train) == 0:
        raise ContractError("train_task: empty training split")
    rng = np.random.default_rng(cfg.seed)
    net = PointNetConfig(tuple(cfg.widths), tuple(cfg.head), classes)
    params = init_pointnet(net, rng)
    state = AdamState(lr=cfg.lr)
    history = []
    for epoch in range(cfg.epochs):
        state.lr = step_lr(epoch, cfg.lr)
        order = rng.permutation(len(train))
        loss_sum, correct = 0.0, 0
        for start in range(0, len(order), cfg.batch):
            sel = order[start:start + cfg.batch]
            clouds = augment(train.clouds[sel], rng)
            tape = Tape()
            tp = tape.watch_all(params)
            logits = classify_forward(clouds, tp)
            loss = cross_entropy(logits, train.labels[sel])
            if not np.isfinite(loss.item()):
                raise NumericError(f"train_task: non-finite loss at epoch {epoch}")
            params, state = adam_step(params, backward(tape, loss), state)
            loss_sum += loss.item() * len(sel)
            correct += int((np.argmax(logits.data, axis=1) == train.labels[sel]).sum())
        row = (epoch, f"{state.lr:.6g}", f"{loss_sum / len(order):.6f}", f"{correct / len(order):.6f}")
        history.append(row)
        if log is not None:
            log(f"task epoch {epoch}: loss {row[2]} acc {row[3]}")
    config = {
        "kind": "task", "widths": ",".join(map(str, net.widths)), "head": ",".join(map(str, net.head)),
        "classes": str(classes), "seed": str(cfg.seed), "epochs": str(cfg.epochs),
        "log.columns": "epoch,lr,loss,accuracy", "log.epochs": _encode_log(history),
    }
    return Checkpoint(params, config)


# ---------------------------------------------------------------- sampler training

EPOCH_COLUMNS = ("epoch", "lr", "loss_total", "loss_task", "loss_conf", "loss_off", "nm_hist")


def resize_inputs(clouds: np.ndarray, n: int, keys, seed: int = 0) -> np.ndarray:
    """Random n-point subsets of each cloud, reproducible per cloud key."""
    b, total, _ = clouds.shape
    if n == total:
        return clouds
    if not 1 <= n <= total:
        raise ContractError(f"cannot take {n} points from clouds of {total}")
    return np.stack([c[np.sort(np.random.default_rng((seed, int(k), n)).permutation(total)[:n])]
                     for c, k in zip(clouds, keys)])


def _sampler_step(sampler, params, task_params, clouds, labels, m, starts, keys, graph, weights):
    tape = Tape()
    tp = tape.watch_all(params)
    b = len(clouds)
    out = sampler.forward(tp, clouds, m, starts=starts, rng_keys=keys, graph=graph)
    s = stage_points(out, b, m)
    task = cross_entropy(classify_forward(s, task_params), labels)
    conf = conformity_loss(clouds, s)
    off = offset_loss(out.coords, out.points)
    loss = compound_loss(task, conf, off, weights)
    if not np.isfinite(loss.item()):
        raise NumericError("sampler training: non-finite loss")
    return backward(tape, loss), (loss.item(), task.item(), conf.item(), off.item())


def _run_sampler_training(sampler: LearnedSampler, train: Split, task_params: dict, cfg: TrainConfig,
                          stage_name: str, log=None) -> Checkpoint:
    cfg.check_sizes(train.clouds.shape[1])
    rng = np.random.default_rng(cfg.seed)
    params = dict(sampler.params)
    state = AdamState(lr=cfg.lr)
    sizes = cfg.sample_sizes()
    total = train.clouds.shape[1]
    # rotation about y is an isometry, so the k-NN graph of each stored cloud
    # can be built once and reused for every augmented copy
    graphs = {}
    epochs, batches = [], []
    for epoch in range(cfg.epochs):
        state.lr = cfg.lr_at(epoch)
        order = rng.permutation(len(train))
        sums = np.zeros(4)
        hist = {}
        for bi, start in enumerate(range(0, len(order), cfg.batch)):
            sel = order[start:start + cfg.batch]
            m = int(rng.choice(sizes))
            n = total if cfg.var_input is None else int(rng.integers(cfg.var_input[0], cfg.var_input[1] + 1))
            angles = rng.uniform(0.0, 2.0 * np.pi, size=len(sel))
            starts = rng.integers(0, n, size=len(sel))
            keys = rng.integers(0, 2**31, size=len(sel))
            clouds = resize_inputs(train.clouds[sel], n, keys, cfg.seed)
            k = adaptive_k(n, cfg.n0, cfg.k0)
            if n == total:
                for i in sel:
                    if i not in graphs:
                        graphs[i] = geometry.knn(train.clouds[i], train.clouds[i], k).astype(np.int32)
                graph = np.concatenate([graphs[i] + j * n for j, i in enumerate(sel)]).astype(np.int64)
            else:
                graph = geometry.knn_batched(clouds, k)
            clouds = np.stack([c @ rotation_y(a).T for c, a in zip(clouds, angles)])
            grads, terms = _sampler_step(sampler, params, task_params, clouds, train.labels[sel], m,
                                         starts, keys, graph, cfg.weights)
            params, state = adam_step(params, grads, state)
            sums += np.array(terms) * len(sel)
            hist[(n, m)] = hist.get((n, m), 0) + 1
            batches.append((epoch, bi, n, m))
        means = sums / len(order)
        nm = " ".join(f"{n}x{m}:{c}" for (n, m), c in sorted(hist.items()))
        epochs.append((epoch, f"{state.lr:.6g}", *(f"{v:.6f}" for v in means), nm))
        if log is not None:
            log(f"{stage_name} epoch {epoch}: loss {means[0]:.5f} (task {means[1]:.5f} "
                f"conf {means[2]:.5f} off {means[3]:.5f})")
    config = {"kind": "sampler", "stage": stage_name, **sampler.config.to_meta(), **cfg.to_meta(),
              "log.columns": ",".join(EPOCH_COLUMNS), "log.epochs": _encode_log(epochs),
              "log.batches": _encode_log(batches)}
    return Checkpoint(params, config)


def train_sampler_stage1(train: Split, task_params: dict, cfg: TrainConfig, sampler_config: SamplerConfig | None = None,
                         log=None) -> Checkpoint:
    """Embedding and trunk at one sample size, density attention bypassed."""
    if cfg.stage != "1":
        raise ConfigError("stage-1 training needs stage='1'")
    base = sampler_config or SamplerConfig(presampler=cfg.presampler)
    scfg = SamplerConfig(base.embed, base.refine, False, cfg.presampler)
    sampler = LearnedSampler.fresh(scfg, cfg.seed)
    return _run_sampler_training(sampler, train, task_params, cfg, "1", log)


def train_sampler_stage2(train: Split, task_params: dict, cfg: TrainConfig, stage1: Checkpoint | None = None,
                         sampler_config: SamplerConfig | None = None, log=None) -> Checkpoint:
    """Variable-size training, warm-started from a stage-1 checkpoint unless cfg.stage == 'one'."""
    if cfg.stage == "1":
        raise ConfigError("stage-2 training needs stage='2' or 'one'")
    if cfg.stage == "2":
        if stage1 is None:
            raise ConfigError("stage 2 needs a stage-1 checkpoint")
        if stage1.config.get("stage") != "1":
            raise CheckpointError("warm-start checkpoint is not a stage-1 sampler")
        prev = sampler_from_checkpoint(stage1)
        if prev.config.presampler != cfg.presampler:
            raise CheckpointError("stage-1 checkpoint was trained with a different pre-sampler")
        if cfg.density_attention:
            sampler = prev.with_density_attention(cfg.seed + 1)
        else:
            sampler = prev
    else:
        base = sampler_config or SamplerConfig()
        scfg = SamplerConfig(base.embed, base.refine, cfg.density_attention, cfg.presampler)
        sampler = LearnedSampler.fresh(scfg, cfg.seed)
    return _run_sampler_training(sampler, train, task_params, cfg, cfg.stage, log)


def train_sampler(train: Split, task_params: dict, cfg: TrainConfig, stage1: Checkpoint | None = None,
                  log=None) -> Checkpoint:
    if cfg.stage == "1":
        return train_sampler_stage1(train, task_params, cfg, log=log)
    return train_sampler_stage2(train, task_params, cfg, stage1, log=log)


def epoch_log_csv(ckpt: Checkpoint) -> str:
    """The per-epoch training log embedded in a checkpoint, as CSV text."""
    rows = [r.split(",") for r in ckpt.config.get("log.epochs", "").split(";") if r]
    header = ckpt.config.get("log.columns", "")
    return "".join(",".join(r) + "\n" for r in [header.split(",")] + rows)


def batch_log(ckpt: Checkpoint) -> list:
    """(epoch, batch, n, m) for every training batch of a sampler checkpoint."""
    return [tuple(int(v) for v in r.split(",")) for r in ckpt.config.get("log.batches", "").split(";") if r]


def stripped_of_density(params: dict) -> bool:
    return not any(k.startswith(DENSITY_PREFIXES) for k in params)


# ---------------------------------------------------------------- evaluation

def _sample_all(sampler, clouds, m, keys, batch=64):
    parts = [sampler.sample_batch(clouds[i:i + batch], m, keys[i:i + batch]) for i in range(0, len(clouds), batch)]
    return np.concatenate(parts)


def evaluate_grid(samplers: list, tasks: list, test: Split, sizes, input_sizes=None, seed: int = 0) -> list:
    """Accuracy and Hausdorff distance for every (sampler, task model, n, m).

    `samplers` holds (name, sampler) pairs, `tasks` holds (name, params)
    pairs. Rows are ordered by sampler, task model, n, then m.
    """
    if not samplers or not tasks:
        raise ContractError("evaluate_grid: need at least one sampler and one task model")
    if len(test) == 0:
        raise ContractError("evaluate_grid: empty test split")
    total = test.clouds.shape[1]
    input_sizes = [total] if not input_sizes else list(input_sizes)
    keys = np.arange(len(test))
    results = {}
    for si, (sname, sampler) in enumerate(samplers):
        for n in input_sizes:
            clouds = resize_inputs(test.clouds, n, keys, seed)
            for m in sizes:
                if not 1 <= m < n:
                    raise ContractError(f"evaluate_grid: need 1 <= m < n, got m={m}, n={n}")
                sampled = _sample_all(sampler, clouds, m, keys)
                hd = float(np.mean([geometry.hausdorff(c, s) for c, s in zip(clouds, sampled)]))
                for ti, (tname, params) in enumerate(tasks):
                    acc = accuracy_eval(params, sampled, test.labels)
                    results[(si, ti, n, m)] = MetricsRow(sname, tname, n, m, acc, hd)
    return [results[(si, ti, n, m)] for si in range(len(samplers)) for ti in range(len(tasks))
            for n in input_sizes for m in sizes]


def baseline_sampler(name: str, seed: int = 0):
    if name == "fps":
        return FPSSampler(0)
    if name == "rs":
        return RandomSampler(seed)
    raise ConfigError(f"unknown baseline sampler {name!r}")


def task_label(cfg: PointNetConfig | dict) -> str:
    widths = cfg.widths if isinstance(cfg, PointNetConfig) else pointwise_widths(cfg)
    return "pointnet-" + "-".join(map(str, widths))
