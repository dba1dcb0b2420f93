"""Dataset sources: synthetic shapes, the shift task, CIFAR-10 binaries, dataset dirs."""

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from randaug.errors import FormatError, InvalidParams, LabelOutOfRange
from randaug.imgcore import DeterministicRng, atomic_write_bytes
from randaug.learn.classifier import Dataset
from randaug.transforms import TransformKind, magnitude_to_param

SHAPES = ("square", "disk", "cross", "triangle")
BACKGROUND = 128
FOREGROUND = 255

CIFAR_RECORD = 3073
CIFAR_SIDE = 32


@dataclass(frozen=True)
class SyntheticShapesParams:
    """Parameters of the synthetic shapes task.

    Attributes:
        count: number of images.
        image_size: side length in pixels (>= 8).
        classes: number of shape classes, 2..4, taken from ``SHAPES`` in order.
        noise_std: Gaussian pixel noise on the [0, 1] scale.
        seed: generator seed.
        shape_size: side of the shape stencil; defaults to half the image.
    """

    count: int
    image_size: int = 16
    classes: int = 2
    noise_std: float = 0.05
    seed: int = 0
    shape_size: int = None

    @property
    def extent(self):
        return self.image_size // 2 if self.shape_size is None else self.shape_size

    def validate(self):
        if self.count < 1:
            raise InvalidParams(f"count must be >= 1, got {self.count}")
        if self.image_size < 8:
            raise InvalidParams(f"image_size must be >= 8, got {self.image_size}")
        if not 2 <= self.classes <= len(SHAPES):
            raise InvalidParams(f"classes must be in [2, {len(SHAPES)}], got {self.classes}")
        if not (np.isfinite(self.noise_std) and self.noise_std >= 0):
            raise InvalidParams(f"noise_std must be finite and >= 0, got {self.noise_std}")
        if not 4 <= self.extent <= self.image_size:
            raise InvalidParams(f"shape_size must be in [4, image_size], got {self.extent}")


def shape_mask(name, extent):
    """Boolean ``(extent, extent)`` stencil; the four shapes have distinct areas."""
    yy, xx = np.mgrid[0:extent, 0:extent] + 0.5
    c = extent / 2.0
    if name == "square":
        return np.ones((extent, extent), dtype=bool)
    if name == "disk":
        return (xx - c) ** 2 + (yy - c) ** 2 <= c * c
    if name == "cross":
        arm = max(1, extent // 4)
        lo, hi = (extent - arm) // 2, (extent - arm) // 2 + arm
        mask = np.zeros((extent, extent), dtype=bool)
        mask[lo:hi, :] = True
        mask[:, lo:hi] = True
        return mask
    if name == "triangle":
        # apex at the top center, base along the bottom row
        return np.abs(xx - c) <= yy / 2.0
    raise InvalidParams(f"unknown shape {name!r}")


def balanced_labels(count, classes):
    """``count`` labels cycling through the classes (counts differ by <= 1)."""
    return np.arange(count) % classes


def gen_synthetic_shapes(p, split="train"):
    """White shapes at random positions on a gray background, plus noise.

    The shape stencil is always fully inside the image. Labels are balanced
    and ordered cyclically.
    """
    p.validate()
    rng = DeterministicRng(p.seed).split("shapes").numpy_generator()
    extent = p.extent
    masks = [shape_mask(name, extent) for name in SHAPES[: p.classes]]
    labels = balanced_labels(p.count, p.classes)
    images = np.full((p.count, p.image_size, p.image_size, 3), BACKGROUND, dtype=np.float64)
    span = p.image_size - extent + 1
    for i, label in enumerate(labels):
        top, left = rng.integers(0, span, size=2)
        region = images[i, top : top + extent, left : left + extent]
        region[masks[label]] = FOREGROUND
    if p.noise_std > 0:
        images += rng.normal(0.0, p.noise_std * 255.0, size=images.shape)
    pixels = np.clip(np.floor(images + 0.5), 0, 255).astype(np.uint8)
    return Dataset(pixels, labels, p.classes, split)


def synthetic_splits(
    train_size, val_size, image_size=16, classes=2, noise_std=0.05, seed=0, shape_size=None
):
    """Independent train and validation draws of the shapes task."""
    p = SyntheticShapesParams(train_size, image_size, classes, noise_std, seed, shape_size)
    train = gen_synthetic_shapes(p, "train")
    val = gen_synthetic_shapes(replace(p, count=val_size, seed=seed + 1_000_003), "val")
    return train, val


def shift_offset(image_size, level):
    """Pixel offset of translate-x at ``level`` with a positive direction."""
    rng = DeterministicRng(0)
    param = magnitude_to_param(TransformKind.TRANSLATE_X, level, rng, (image_size, image_size), sign=1)
    return int(param.value)


def gen_shift_task(count, image_size=16, classes=3, level=5.0, seed=0, noise_std=0.02):
    """Train/val pair whose gap is closed by exactly one transform.

    Class ``c`` is a full-height white bar at column ``s + 1 + (2s + 1) c``.
    Validation bars sit ``s`` pixels further left, where ``s`` is the
    translate-x offset at ``level``, so translating a validation image
    right by ``s`` reproduces the training distribution.

    Returns:
        ``(train, val, offset)``.
    """
    s = shift_offset(image_size, level)
    if s < 1:
        raise InvalidParams(f"level {level} gives no shift at size {image_size}")
    spacing = 2 * s + 1
    first = s + 1
    if first + spacing * (classes - 1) >= image_size:
        raise InvalidParams("bars do not fit; use a larger image or fewer classes")
    rng = DeterministicRng(seed).split("shift").numpy_generator()

    def build(shift, split):
        labels = balanced_labels(count, classes)
        images = np.full((count, image_size, image_size, 3), BACKGROUND, dtype=np.float64)
        for i, label in enumerate(labels):
            images[i, :, first + spacing * label - shift] = FOREGROUND
        images += rng.normal(0.0, noise_std * 255.0, size=images.shape)
        pixels = np.clip(np.floor(images + 0.5), 0, 255).astype(np.uint8)
        return Dataset(pixels, labels, classes, split)

    return build(0, "train"), build(s, "val"), s


def parse_cifar10_records(blob, source="<bytes>"):
    """Decode concatenated CIFAR-10 binary records into ``(n, 32, 32, 3)`` and labels."""
    if len(blob) % CIFAR_RECORD:
        raise FormatError(f"{source}: length {len(blob)} is not a multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise LabelOutOfRange(f"{source}: record {int(bad[0])} has label {int(labels[bad[0]])}")
    planes = rec[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE)
    return np.ascontiguousarray(planes.transpose(0, 2, 3, 1)), labels


def read_cifar10_bin(directory, split="train"):
    """Read ``data_batch_*.bin`` (train) or ``test_batch.bin`` (val) from ``directory``.

    Raises:
        FormatError: a file length is not a multiple of 3073, or no files match.
        LabelOutOfRange: a label byte exceeds 9.
    """
    directory = Path(directory)
    names = sorted(directory.glob("data_batch_*.bin")) if split == "train" else [directory / "test_batch.bin"]
    names = [n for n in names if n.is_file()]
    if not names:
        raise FormatError(f"no CIFAR-10 {split} batches in {directory}")
    images, labels = [], []
    for path in names:
        x, y = parse_cifar10_records(path.read_bytes(), str(path))
        images.append(x)
        labels.append(y)
    return Dataset(np.concatenate(images), np.concatenate(labels), 10, split)


# Dataset directories: dataset.json plus one <split>.bin per split, each a
# sequence of (label byte, H*W*3 pixel bytes in row-major HWC order).


def save_dataset_dir(directory, splits, meta=None):
    """Write ``{"train": Dataset, "val": Dataset}`` to ``directory`` atomically per file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    first = next(iter(splits.values()))
    index = {
        "format": "randaug-dataset-v1",
        "image_shape": list(first.image_shape),
        "num_classes": first.num_classes,
        "splits": {name: len(d) for name, d in splits.items()},
        "meta": meta or {},
    }
    for name, data in splits.items():
        if data.num_classes > 256:
            raise InvalidParams("label bytes hold at most 256 classes")
        rec = np.concatenate(
            [data.labels.astype(np.uint8)[:, None], data.images.reshape(len(data), -1)], axis=1
        )
        atomic_write_bytes(directory / f"{name}.bin", rec.tobytes())
    atomic_write_bytes(directory / "dataset.json", (json.dumps(index, indent=2, sort_keys=True) + "\n").encode())


def load_dataset_dir(directory):
    """Inverse of ``save_dataset_dir``; returns ``{split: Dataset}``."""
    directory = Path(directory)
    try:
        index = json.loads((directory / "dataset.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{directory}: unreadable dataset.json ({exc})") from exc
    shape = tuple(index["image_shape"])
    size = 1 + int(np.prod(shape))
    out = {}
    for name, count in index["splits"].items():
        blob = (directory / f"{name}.bin").read_bytes()
        if len(blob) != count * size:
            raise FormatError(f"{name}.bin: expected {count * size} bytes, got {len(blob)}")
        rec = np.frombuffer(blob, dtype=np.uint8).reshape(count, size)
        out[name] = Dataset(rec[:, 1:].reshape((count,) + shape), rec[:, 0], index["num_classes"], name)
    return out


def dataset_checksum(data):
    """Total pixel sum plus label sum; platform independent."""
    return int(data.images.astype(np.int64).sum()) + int(data.labels.sum())


__all__ = [
    "SHAPES",
    "SyntheticShapesParams",
    "dataset_checksum",
    "gen_shift_task",
    "gen_synthetic_shapes",
    "load_dataset_dir",
    "parse_cifar10_records",
    "read_cifar10_bin",
    "save_dataset_dir",
    "shift_offset",
    "synthetic_splits",
]
