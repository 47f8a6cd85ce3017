"""XYZ point files, the synthetic shape dataset, dataset manifests, and metrics CSV."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, FormatError, ParseError
from .geometry import as_points, normalize_unit_sphere

SHAPES = ("sphere", "cube", "cylinder", "cone", "torus", "plane", "two_spheres", "capped_cylinder")
MANIFEST = "manifest.json"


# ---------------------------------------------------------------- xyz files

def parse_xyz(text: str, source: str = "<text>") -> np.ndarray:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if len(parts) != 3:
            raise ParseError(f"{source}: expected 3 values, got {len(parts)}", lineno)
        try:
            rows.append([float(v) for v in parts])
        except ValueError:
            raise ParseError(f"{source}: not a number in {stripped!r}", lineno) from None
    if not rows:
        raise ContractError(f"{source}: no points")
    return np.array(rows, dtype=np.float64)


def load_xyz(path) -> np.ndarray:
    path = Path(path)
    return parse_xyz(path.read_text(encoding="utf-8"), str(path))


def format_xyz(points) -> str:
    points = as_points(points)
    return "".join(f"{x:.10f} {y:.10f} {z:.10f}\n" for x, y, z in points)


def save_xyz(points, path) -> None:
    text = format_xyz(points)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------- synthetic shapes

def _rotate_y(p, angle):
    c, s = math.cos(angle), math.sin(angle)
    r = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return p @ r.T


def _sphere(rng, n, radius=1.0, centre=(0.0, 0.0, 0.0)):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius + np.asarray(centre)


def _disk(rng, n, radius, y):
    r = radius * np.sqrt(rng.uniform(size=n))
    t = rng.uniform(0, 2 * np.pi, size=n)
    return np.stack([r * np.cos(t), np.full(n, y), r * np.sin(t)], axis=1)


def _tube(rng, n, radius, height):
    t = rng.uniform(0, 2 * np.pi, size=n)
    y = rng.uniform(-height / 2, height / 2, size=n)
    return np.stack([radius * np.cos(t), y, radius * np.sin(t)], axis=1)


def _split(rng, n, areas):
    """Counts per part proportional to area."""
    areas = np.asarray(areas, dtype=np.float64)
    return rng.multinomial(n, areas / areas.sum())


def sample_shape(kind: str, n: int, rng: np.random.Generator) -> np.ndarray:
    """n points uniformly distributed over the surface of a randomly sized shape."""
    if kind == "sphere":
        p = _sphere(rng, n)
    elif kind == "cube":
        a, b, c = rng.uniform(0.6, 1.4, size=3)
        faces = [(a, b, 2, c), (a, c, 1, b), (b, c, 0, a)]  # (u extent, v extent, fixed axis, its extent)
        counts = _split(rng, n, [u * v for u, v, _, _ in faces for _ in (0, 1)])
        parts = []
        for (u, v, axis, w), (c0, c1) in zip(faces, counts.reshape(3, 2)):
            for sign, cnt in ((-1, c0), (1, c1)):
                uv = rng.uniform(-0.5, 0.5, size=(cnt, 2)) * [u, v]
                pts = np.insert(uv, axis, sign * w / 2, axis=1)
                parts.append(pts)
        p = np.concatenate(parts)
    elif kind == "cylinder":
        p = _tube(rng, n, rng.uniform(0.3, 0.7), rng.uniform(0.8, 2.0))
    elif kind == "capped_cylinder":
        r, h = rng.uniform(0.3, 0.7), rng.uniform(0.8, 2.0)
        k = _split(rng, n, [2 * np.pi * r * h, np.pi * r * r, np.pi * r * r])
        p = np.concatenate([_tube(rng, k[0], r, h), _disk(rng, k[1], r, -h / 2), _disk(rng, k[2], r, h / 2)])
    elif kind == "cone":
        r, h = rng.uniform(0.4, 0.8), rng.uniform(0.8, 1.6)
        slant = math.hypot(r, h)
        k = _split(rng, n, [np.pi * r * slant, np.pi * r * r])
        frac = np.sqrt(rng.uniform(size=k[0]))  # distance from apex; area grows linearly
        t = rng.uniform(0, 2 * np.pi, size=k[0])
        side = np.stack([frac * r * np.cos(t), h / 2 - frac * h, frac * r * np.sin(t)], axis=1)
        p = np.concatenate([side, _disk(rng, k[1], r, -h / 2)])
    elif kind == "torus":
        big, small = rng.uniform(0.6, 0.9), rng.uniform(0.15, 0.35)
        out = []
        while sum(len(o) for o in out) < n:
            u = rng.uniform(0, 2 * np.pi, size=n)
            v = rng.uniform(0, 2 * np.pi, size=n)
            keep = rng.uniform(size=n) < (big + small * np.cos(v)) / (big + small)
            u, v = u[keep], v[keep]
            ring = big + small * np.cos(v)
            out.append(np.stack([ring * np.cos(u), small * np.sin(v), ring * np.sin(u)], axis=1))
        p = np.concatenate(out)[:n]
    elif kind == "plane":
        w, d = rng.uniform(0.6, 1.4, size=2)
        p = np.stack([rng.uniform(-w / 2, w / 2, n), np.zeros(n), rng.uniform(-d / 2, d / 2, n)], axis=1)
    elif kind == "two_spheres":
        r1, r2 = rng.uniform(0.3, 0.5, size=2)
        gap = rng.uniform(0.9, 1.3)
        k = _split(rng, n, [r1 * r1, r2 * r2])
        p = np.concatenate([_sphere(rng, k[0], r1, (-gap / 2, 0, 0)), _sphere(rng, k[1], r2, (gap / 2, 0, 0))])
    else:
        raise ConfigError(f"unknown shape {kind!r}")
    p = _rotate_y(p[rng.permutation(n)], rng.uniform(0, 2 * np.pi))
    return normalize_unit_sphere(p)


@dataclass
class DatasetManifest:
    root: Path
    classes: list
    points: int
    splits: dict  # split name -> list of (relative file, class index)

    def to_json(self) -> str:
        body = {"classes": self.classes, "points": self.points,
                "splits": {k: [[f, c] for f, c in v] for k, v in self.splits.items()}}
        return json.dumps(body, indent=1, sort_keys=True) + "\n"

    @classmethod
    def load(cls, root) -> DatasetManifest:
        root = Path(root)
        try:
            body = json.loads((root / MANIFEST).read_text(encoding="utf-8"))
            splits = {k: [(str(f), int(c)) for f, c in v] for k, v in body["splits"].items()}
            manifest = cls(root, list(body["classes"]), int(body["points"]), splits)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{root / MANIFEST}: malformed manifest ({exc})") from exc
        for entries in manifest.splits.values():
            for f, c in entries:
                if not 0 <= c < len(manifest.classes):
                    raise FormatError(f"{f}: class index {c} out of range")
        return manifest


def gen_synthetic(out_dir, classes: int, per_class: int, points: int, seed: int) -> DatasetManifest:
    """Write a synthetic dataset of parametric shapes (80/20 train/test split per class)."""
    if not 2 <= classes <= len(SHAPES):
        raise ConfigError(f"classes must be in [2, {len(SHAPES)}], got {classes}")
    if per_class < 2 or points < 1:
        raise ConfigError("need per_class >= 2 and points >= 1")
    root = Path(out_dir)
    rng = np.random.default_rng(seed)
    n_train = int(round(per_class * 0.8))
    splits = {"train": [], "test": []}
    for split in splits:
        (root / split).mkdir(parents=True, exist_ok=True)
    for label, kind in enumerate(SHAPES[:classes]):
        for i in range(per_class):
            split = "train" if i < n_train else "test"
            rel = f"{split}/{kind}_{i:04d}.xyz"
            save_xyz(sample_shape(kind, points, rng), root / rel)
            splits[split].append((rel, label))
    manifest = DatasetManifest(root, list(SHAPES[:classes]), points, splits)
    with open(root / MANIFEST, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(manifest.to_json())
    return manifest


@dataclass
class Split:
    clouds: np.ndarray  # (N, n, 3)
    labels: np.ndarray  # (N,)

    def __len__(self):
        return len(self.labels)


@dataclass
class Dataset:
    classes: list
    train: Split
    test: Split


def load_split(manifest: DatasetManifest, name: str) -> Split:
    entries = manifest.splits.get(name, [])
    if not entries:
        return Split(np.zeros((0, manifest.points, 3)), np.zeros(0, dtype=np.int64))
    clouds = [load_xyz(manifest.root / f) for f, _ in entries]
    sizes = {len(c) for c in clouds}
    if len(sizes) != 1:
        raise FormatError(f"split {name!r}: clouds have differing sizes {sorted(sizes)}")
    return Split(np.stack(clouds), np.array([c for _, c in entries], dtype=np.int64))


def load_dataset(root) -> Dataset:
    manifest = DatasetManifest.load(root)
    return Dataset(manifest.classes, load_split(manifest, "train"), load_split(manifest, "test"))


# ---------------------------------------------------------------- metrics

@dataclass(frozen=True)
class MetricsRow:
    sampler: str
    task_model: str
    n: int
    m: int
    acc: float
    hd: float


CSV_HEADER = ("sampler", "task_model", "n", "m", "metric", "value")


def write_metrics_csv(rows, path) -> None:
    """One CSV line per measurement: each MetricsRow yields an 'acc' and an 'hd' line."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            for metric, value in (("acc", r.acc), ("hd", r.hd)):
                w.writerow([r.sampler, r.task_model, r.n, r.m, metric, f"{value:.6f}"])
