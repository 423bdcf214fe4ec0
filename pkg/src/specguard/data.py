"""Datasets: the XOR toy task (clean and noisy), IDX-format image files,
subset sampling, and a deterministic synthetic digit corpus for desk-scale
image runs in environments without the real files.

Normalization metadata travels with every dataset so downstream attack
distances stay interpretable in the declared input scale.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX file; message carries the byte offset of the problem."""


@dataclass
class Dataset:
    inputs: np.ndarray   # (m, n) or (m, c, h, w), float64
    labels: np.ndarray   # (m,) ints in [0, K)
    n_classes: int
    split: str = ""
    normalization: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels disagree in length")
        if len(self.labels) and (self.labels.min() < 0
                                 or self.labels.max() >= self.n_classes):
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return len(self.labels)


XOR_CORNERS = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
XOR_LABELS = np.array([0, 1, 1, 0])  # class by the sign product of the corner


def xor_dataset(noisy: bool = False, points_per_cluster: int = 50,
                noise_std: float = 0.2, rng: Rng | None = None,
                split: str = "train") -> Dataset:
    """Four corners at [+-1, +-1] labeled by sign product; the noisy variant
    surrounds each corner with a gaussian cloud."""
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    if not noisy:
        return Dataset(inputs=XOR_CORNERS.copy(), labels=XOR_LABELS.copy(),
                       n_classes=2, split=split,
                       normalization={"scale": 1.0, "range": [-1.0, 1.0]})
    if rng is None:
        rng = Rng(0)
    xs, ys = [], []
    for corner, label in zip(XOR_CORNERS, XOR_LABELS):
        xs.append(corner[None] + rng.gaussian((points_per_cluster, 2), 0.0,
                                              noise_std))
        ys.append(np.full(points_per_cluster, label))
    return Dataset(inputs=np.concatenate(xs), labels=np.concatenate(ys),
                   n_classes=2, split=split,
                   normalization={"scale": 1.0, "range": [-1.0, 1.0],
                                  "noise_std": noise_std})


def _open_maybe_gzip(path):
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(f, count: int, offset: int, what: str) -> bytes:
    buf = f.read(count)
    if len(buf) != count:
        raise IdxFormatError(
            f"truncated IDX file: wanted {count} bytes of {what} at offset "
            f"{offset}, got {len(buf)}")
    return buf


def load_mnist_idx(image_path, label_path, scale: bool = True,
                   center: bool = False, split: str = "") -> Dataset:
    """Load an IDX image/label pair (big-endian, magic 0x803 / 0x801).

    Pixels land in [0, 1] (divide by 255); row-major flattening to
    (m, rows*cols). ``center`` additionally subtracts the per-pixel train
    mean — off by default.
    """
    with _open_maybe_gzip(image_path) as f:
        magic, m, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, 0,
                                                                  "image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise IdxFormatError(
                f"bad image magic 0x{magic:08x} at offset 0 "
                f"(expected 0x{IDX_IMAGES_MAGIC:08x})")
        raw = _read_exact(f, m * rows * cols, 16, "pixel data")
    images = np.frombuffer(raw, dtype=np.uint8).astype(np.float64)
    images = images.reshape(m, rows * cols)

    with _open_maybe_gzip(label_path) as f:
        magic, ml = struct.unpack(">II", _read_exact(f, 8, 0, "label header"))
        if magic != IDX_LABELS_MAGIC:
            raise IdxFormatError(
                f"bad label magic 0x{magic:08x} at offset 0 "
                f"(expected 0x{IDX_LABELS_MAGIC:08x})")
        lraw = _read_exact(f, ml, 8, "label data")
    labels = np.frombuffer(lraw, dtype=np.uint8).astype(np.int64)
    if ml != m:
        raise IdxFormatError(f"image count {m} != label count {ml}")

    norm = {"scale": 255.0 if scale else 1.0, "centered": bool(center),
            "shape": [rows, cols]}
    if scale:
        images = images / 255.0
    if center:
        mean = images.mean(axis=0)
        images = images - mean
        norm["pixel_mean"] = mean.tolist()
    return Dataset(inputs=images, labels=labels, n_classes=10, split=split,
                   normalization=norm)


def write_idx(image_path, label_path, images: np.ndarray,
              labels: np.ndarray) -> None:
    """Write uint8 images (m, rows, cols) and labels to IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    m, rows, cols = images.shape
    with open(image_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, m, rows, cols))
        f.write(images.tobytes())
    with open(label_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, m))
        f.write(labels.tobytes())


def subset_sample(ds: Dataset, m: int, stratified: bool = False,
                  rng: Rng | None = None) -> Dataset:
    """Sample m examples without replacement; stratified sampling keeps the
    class proportions within one sample of exact."""
    if m > len(ds):
        raise ValueError(f"cannot sample {m} from {len(ds)} examples")
    if rng is None:
        rng = Rng(0)
    if not stratified:
        idx = rng.choice(len(ds), size=m, replace=False)
    else:
        per_class = [np.where(ds.labels == k)[0] for k in range(ds.n_classes)]
        want = np.array([m * len(p) / len(ds) for p in per_class])
        counts = np.floor(want).astype(int)
        remainder = m - counts.sum()
        order = np.argsort(-(want - counts))
        counts[order[:remainder]] += 1
        parts = []
        for k, pool in enumerate(per_class):
            take = rng.choice(len(pool), size=counts[k], replace=False)
            parts.append(pool[take])
        idx = np.concatenate(parts)
        idx = idx[rng.permutation(len(idx))]
    return Dataset(inputs=ds.inputs[idx].copy(), labels=ds.labels[idx].copy(),
                   n_classes=ds.n_classes, split=ds.split,
                   normalization=dict(ds.normalization))


def save_dataset(path, ds: Dataset) -> None:
    """Versioned binary cache (npz); reload is bit-exact."""
    import json

    np.savez(path, inputs=ds.inputs, labels=ds.labels,
             n_classes=np.int64(ds.n_classes),
             split=np.bytes_(ds.split.encode()),
             normalization=np.bytes_(json.dumps(ds.normalization).encode()),
             cache_version=np.int64(1))


def load_dataset(path) -> Dataset:
    import json

    with np.load(path) as z:
        if int(z["cache_version"]) != 1:
            raise ValueError(f"unsupported cache version {int(z['cache_version'])}")
        return Dataset(inputs=z["inputs"], labels=z["labels"],
                       n_classes=int(z["n_classes"]),
                       split=bytes(z["split"]).decode(),
                       normalization=json.loads(bytes(z["normalization"]).decode()))


def render_digit_corpus(n_per_class: int, rng: Rng, size: int = 28,
                        split: str = "") -> Dataset:
    """Synthetic handwriting-like digit images: font-rendered glyphs under
    random shift/rotation/scale/contrast jitter plus pixel noise, in [0, 1].

    Deterministic given the rng. Serves as a stand-in corpus with the same
    shape contract as the IDX digit files (28x28 grayscale, 10 classes).
    """
    from PIL import Image, ImageDraw, ImageFont

    font = ImageFont.load_default()
    glyphs = []
    for digit in range(10):
        img = Image.new("L", (16, 16), 0)
        draw = ImageDraw.Draw(img)
        draw.text((3, 1), str(digit), fill=255, font=font)
        glyphs.append(img)

    m = 10 * n_per_class
    X = np.empty((m, size * size))
    y = np.empty(m, dtype=np.int64)
    i = 0
    for digit in range(10):
        for _ in range(n_per_class):
            # jitter calibrated so a one-hidden-layer MLP lands in the
            # mid-90s test accuracy, comparable to handwritten digits
            scale = 1.2 + 0.6 * float(rng.uniform(()))
            angle = float(rng.gaussian((), 0.0, 12.0))
            g = glyphs[digit].resize(
                (max(1, int(16 * scale)),) * 2, Image.BICUBIC).rotate(
                angle, resample=Image.BICUBIC, expand=False)
            canvas = Image.new("L", (size, size), 0)
            dx = (size - g.size[0]) // 2 + int(rng.integers(-4, 5))
            dy = (size - g.size[1]) // 2 + int(rng.integers(-4, 5))
            canvas.paste(g, (dx, dy))
            arr = np.asarray(canvas, dtype=np.float64) / 255.0
            arr *= 0.6 + 0.4 * float(rng.uniform(()))          # contrast
            arr += rng.gaussian((size, size), 0.0, 0.05)       # pixel noise
            X[i] = np.clip(arr, 0.0, 1.0).ravel()
            y[i] = digit
            i += 1
    perm = rng.permutation(m)
    return Dataset(inputs=X[perm], labels=y[perm], n_classes=10, split=split,
                   normalization={"scale": 255.0, "range": [0.0, 1.0],
                                  "synthetic": True})


def synth_digit_idx_files(out_dir, n_train_per_class: int,
                          n_test_per_class: int, seed: int = 0) -> dict:
    """Write a synthetic digit corpus as standard IDX files and return their
    paths (train-images/train-labels/test-images/test-labels)."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    rng = Rng(seed)
    paths = {}
    for split, n in (("train", n_train_per_class), ("test", n_test_per_class)):
        ds = render_digit_corpus(n, rng.spawn(0 if split == "train" else 1),
                                 split=split)
        imgs = np.round(ds.inputs.reshape(-1, 28, 28) * 255.0).astype(np.uint8)
        ip = os.path.join(out_dir, f"{split}-images-idx3-ubyte")
        lp = os.path.join(out_dir, f"{split}-labels-idx1-ubyte")
        write_idx(ip, lp, imgs, ds.labels)
        paths[f"{split}_images"] = ip
        paths[f"{split}_labels"] = lp
    return paths
