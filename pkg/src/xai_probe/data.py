"""Deterministic synthetic shapes dataset and the training loop.

Each image is a flat Voronoi mosaic of muted background cells with one
bright class-specific shape drawn on top: disc, square, cross, or
triangle. The mosaic guarantees graph segmentation finds several sizable
regions per image; the shape carries the class signal.

All randomness comes from numpy's PCG64 bit generator; image i of a
dataset uses SeedSequence([cfg.seed, i]), so generation is reproducible
per image and safe to parallelize.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import net as network
from .errors import ConfigError, TrainingError
from .ppm import read_ppm, write_ppm

SHAPE_NAMES = ("disc", "square", "cross", "triangle")


@dataclass
class DatasetConfig:
    num_classes: int = 4
    images_per_class: int = 50
    height: int = 64
    width: int = 64
    seed: int = 0

    def validate(self):
        if not 2 <= self.num_classes <= len(SHAPE_NAMES):
            raise ConfigError(
                f"num_classes must be in [2, {len(SHAPE_NAMES)}], got {self.num_classes}"
            )
        if self.images_per_class < 1:
            raise ConfigError("images_per_class must be >= 1")
        if min(self.height, self.width) < 24:
            raise ConfigError(
                f"image {self.height}x{self.width} too small to place a shape"
            )


def _rng_for(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index])))


def _mosaic_background(rng, h, w):
    """Voronoi mosaic of 8-13 muted cells, each with a faint linear shade."""
    n_cells = int(rng.integers(8, 14))
    sites = np.column_stack(
        [rng.uniform(0, h, size=n_cells), rng.uniform(0, w, size=n_cells)]
    )
    colors = np.empty((n_cells, 3))
    for i in range(n_cells):
        for _ in range(40):
            c = rng.uniform(0.15, 0.55, size=3)
            if i == 0 or np.min(np.linalg.norm(colors[:i] - c, axis=1)) >= 0.12:
                break
        colors[i] = c
    yy, xx = np.mgrid[0:h, 0:w]
    d2 = (yy[..., None] - sites[:, 0]) ** 2 + (xx[..., None] - sites[:, 1]) ** 2
    cell = d2.argmin(axis=-1)
    # cells are flat: plateaus segment cleanly and stay lossless under
    # 8-bit quantization (shading would staircase into stripe segments)
    img = colors[cell].transpose(2, 0, 1).copy()
    return img, cell


def _shape_mask(rng, label, h, w):
    scale = min(h, w)
    r = rng.uniform(0.17, 0.26) * scale
    margin = r + 3.0
    cy = rng.uniform(margin, h - margin)
    cx = rng.uniform(margin, w - margin)
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy - cy, xx - cx
    kind = SHAPE_NAMES[label]
    if kind == "disc":
        return dy**2 + dx**2 <= r**2
    if kind == "square":
        return (np.abs(dy) <= r * 0.9) & (np.abs(dx) <= r * 0.9)
    if kind == "cross":
        bar = r * 0.38
        return ((np.abs(dy) <= bar) & (np.abs(dx) <= r)) | (
            (np.abs(dx) <= bar) & (np.abs(dy) <= r)
        )
    # triangle: apex up, base down, via three half-plane tests
    ay, ax_ = -r, 0.0
    by, bx = 0.75 * r, -0.95 * r
    cy2, cx2 = 0.75 * r, 0.95 * r
    def side(py, px, qy, qx):
        return (qx - px) * (dy - py) - (qy - py) * (dx - px)
    s1 = side(ay, ax_, by, bx)
    s2 = side(by, bx, cy2, cx2)
    s3 = side(cy2, cx2, ay, ax_)
    return (s1 >= 0) & (s2 >= 0) & (s3 >= 0)


def generate_image(cfg: DatasetConfig, index: int, label: int) -> np.ndarray:
    """One (3, H, W) image on the 8-bit grid, fully determined by
    (cfg.seed, index, label)."""
    rng = _rng_for(cfg.seed, index)
    h, w = cfg.height, cfg.width
    img, _ = _mosaic_background(rng, h, w)
    mask = _shape_mask(rng, label, h, w)
    color = rng.uniform(0.55, 0.95, size=3)
    color[rng.integers(3)] = rng.uniform(0.82, 0.95)
    for c in range(3):
        img[c][mask] = color[c]
    np.clip(img, 0.0, 1.0, out=img)
    # snap to the 8-bit grid so PPM round-trips are lossless
    return np.round(img * 255.0) / 255.0


def generate_dataset(cfg: DatasetConfig):
    """All images, ordered class-major: index = label * images_per_class + j."""
    cfg.validate()
    out = []
    for label in range(cfg.num_classes):
        for j in range(cfg.images_per_class):
            index = label * cfg.images_per_class + j
            out.append((generate_image(cfg, index, label), label))
    return out


def save_dataset(dataset, cfg: DatasetConfig, out_dir) -> str:
    """Write PPM files plus a JSON manifest; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, (img, label) in enumerate(dataset):
        name = f"img_{i:04d}.ppm"
        write_ppm(os.path.join(out_dir, name), img)
        entries.append({"file": name, "label": int(label), "seed": [cfg.seed, i]})
    manifest = os.path.join(out_dir, "manifest.json")
    with open(manifest, "w") as f:
        json.dump({"config": asdict(cfg), "images": entries}, f, indent=1)
    return manifest


def load_dataset(data_dir):
    manifest = os.path.join(data_dir, "manifest.json")
    if not os.path.exists(manifest):
        raise ConfigError(f"no dataset manifest at {manifest}")
    with open(manifest) as f:
        doc = json.load(f)
    dataset = []
    for entry in doc["images"]:
        img = read_ppm(os.path.join(data_dir, entry["file"]))
        dataset.append((img, int(entry["label"])))
    return dataset, doc


@dataclass
class TrainReport:
    epochs: int
    train_accuracy: float
    holdout_accuracy: float | None
    epoch_losses: list = field(default_factory=list)


def accuracy(net, dataset) -> float:
    if not dataset:
        raise ConfigError("empty dataset")
    images = np.stack([img for img, _ in dataset])
    labels = np.array([label for _, label in dataset])
    preds = np.empty(len(dataset), dtype=np.int64)
    for i0 in range(0, len(dataset), 25):
        scores = net.forward_batch(images[i0 : i0 + 25])
        preds[i0 : i0 + 25] = scores.argmax(axis=1)
    return float(np.mean(preds == labels))


def train(net, dataset, epochs, lr, seed, holdout=None) -> TrainReport:
    """Plain per-sample SGD on softmax cross-entropy, shuffled by `seed`.

    Deterministic: the same (net weights, dataset, epochs, lr, seed)
    reproduce identical final parameters.
    """
    if not dataset:
        raise ConfigError("cannot train on an empty dataset")
    if epochs < 1:
        raise ConfigError("epochs must be >= 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed])))
    losses = []
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for idx in order:
            img, label = dataset[idx]
            loss, _, grads = network.loss_and_grad(
                net, img, label, network.BackwardMode.STANDARD
            )
            if not np.isfinite(loss):
                raise TrainingError(
                    f"loss diverged to {loss} at epoch {epoch}, sample {idx}; "
                    "reduce the learning rate"
                )
            network.sgd_step(net, grads, lr)
            total += loss
        losses.append(total / len(dataset))
    return TrainReport(
        epochs=epochs,
        train_accuracy=accuracy(net, dataset),
        holdout_accuracy=accuracy(net, holdout) if holdout else None,
        epoch_losses=losses,
    )
