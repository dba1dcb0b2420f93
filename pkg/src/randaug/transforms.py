"""The fourteen magnitude-parameterized transforms and the baseline augmentations.

Magnitude levels live on a linear scale where 10 is the canonical maximum and
values up to 30 extrapolate linearly (with clamping to parameter validity).
With ``f = level / 10`` the mapping is:

============  =========================================  ==========
kind          parameter                                  signed
============  =========================================  ==========
rotate        angle = 30 f degrees                       yes
shear-x/y     slope = 0.3 f                              yes
translate-x/y offset = round(0.3 f * width|height) px    yes
solarize      threshold = max(0, round(256 (1 - f)))     no
posterize     bits = clamp(round(8 - 4 f), 1, 8)         no
color, ...    factor = max(0, 1 +/- 0.9 f)               yes
============  =========================================  ==========

Geometric transforms sample nearest-neighbour and fill with gray 128.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np

from randaug.errors import LevelOutOfRange, NegativeFactor, SizeOutOfRange
from randaug.imgcore import apply_lut, as_image, blend, round_half_away

MAX_LEVEL = 30.0
FILL_GRAY = 128


class TransformKind(enum.Enum):
    IDENTITY = "identity"
    AUTO_CONTRAST = "autoContrast"
    EQUALIZE = "equalize"
    ROTATE = "rotate"
    SOLARIZE = "solarize"
    COLOR = "color"
    POSTERIZE = "posterize"
    CONTRAST = "contrast"
    BRIGHTNESS = "brightness"
    SHARPNESS = "sharpness"
    SHEAR_X = "shear-x"
    SHEAR_Y = "shear-y"
    TRANSLATE_X = "translate-x"
    TRANSLATE_Y = "translate-y"

    def __str__(self):
        return self.value

    @property
    def magnitude_dependent(self):
        return self not in _MAGNITUDE_FREE

    @property
    def signed(self):
        return self in _SIGNED

    @classmethod
    def parse(cls, name):
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"unknown transform name {name!r}") from None


_MAGNITUDE_FREE = frozenset(
    {TransformKind.IDENTITY, TransformKind.AUTO_CONTRAST, TransformKind.EQUALIZE}
)
_ENHANCE = frozenset(
    {
        TransformKind.COLOR,
        TransformKind.CONTRAST,
        TransformKind.BRIGHTNESS,
        TransformKind.SHARPNESS,
    }
)
_GEOMETRIC = frozenset(
    {
        TransformKind.ROTATE,
        TransformKind.SHEAR_X,
        TransformKind.SHEAR_Y,
        TransformKind.TRANSLATE_X,
        TransformKind.TRANSLATE_Y,
    }
)
_SIGNED = _GEOMETRIC | _ENHANCE

ALL_KINDS = tuple(TransformKind)
K = len(ALL_KINDS)


def check_level(level):
    """Return ``level`` as a float, rejecting anything outside [0, 30]."""
    try:
        value = float(level)
    except (TypeError, ValueError):
        raise LevelOutOfRange(f"level must be a number, got {level!r}") from None
    if not 0.0 <= value <= MAX_LEVEL:
        raise LevelOutOfRange(f"level {level} outside [0, {MAX_LEVEL:g}]")
    return value


@dataclass(frozen=True)
class TransformParam:
    """Concrete parameter for one transform application.

    ``tag`` is one of ``angle``, ``shear``, ``offset``, ``threshold``,
    ``bits``, ``factor`` or ``none``.
    """

    kind: TransformKind
    tag: str
    value: float = None


def magnitude_to_param(kind, level, rng, image_size=None, sign=None):
    """Map a level to the concrete parameter for ``kind``.

    Signed kinds consume exactly one draw from ``rng`` for the direction
    (unless ``sign`` is forced); the other kinds consume none.

    Args:
        kind: the transform.
        level: magnitude on the [0, 30] scale.
        rng: a ``DeterministicRng`` (may be None when ``sign`` is given or the
            kind is unsigned).
        image_size: ``(height, width)``, required for the translate kinds.
        sign: force the direction to +1/-1 instead of drawing it.
    """
    kind = TransformKind(kind)
    f = check_level(level) / 10.0
    if kind.signed and sign is None:
        sign = rng.sign()
    if kind is TransformKind.ROTATE:
        return TransformParam(kind, "angle", sign * 30.0 * f)
    if kind in (TransformKind.SHEAR_X, TransformKind.SHEAR_Y):
        return TransformParam(kind, "shear", sign * 0.3 * f)
    if kind in (TransformKind.TRANSLATE_X, TransformKind.TRANSLATE_Y):
        if image_size is None:
            raise ValueError("translate needs image_size=(height, width)")
        extent = image_size[1] if kind is TransformKind.TRANSLATE_X else image_size[0]
        return TransformParam(kind, "offset", sign * int(round_half_away(0.3 * f * extent)))
    if kind is TransformKind.SOLARIZE:
        return TransformParam(kind, "threshold", max(0, int(round_half_away(256.0 * (1.0 - f)))))
    if kind is TransformKind.POSTERIZE:
        return TransformParam(kind, "bits", min(8, max(1, int(round_half_away(8.0 - 4.0 * f)))))
    if kind in _ENHANCE:
        return TransformParam(kind, "factor", max(0.0, 1.0 + sign * 0.9 * f))
    return TransformParam(kind, "none")


# ---------------------------------------------------------------- geometric ops


def rotation_inverse_map(angle_deg, height, width):
    """Inverse map for a counter-clockwise (on screen) rotation about the center."""
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    cx, cy = width / 2.0, height / 2.0
    return np.array(
        [[c, -s, cx - c * cx + s * cy], [s, c, cy - s * cx - c * cy]], dtype=np.float64
    )


def shear_inverse_map(slope, axis, height, width):
    """Inverse map for a shear about the image center along ``axis`` ('x' or 'y')."""
    cx, cy = width / 2.0, height / 2.0
    if axis == "x":
        return np.array([[1.0, -slope, slope * cy], [0.0, 1.0, 0.0]])
    return np.array([[1.0, 0.0, 0.0], [-slope, 1.0, slope * cx]])


def translate_inverse_map(dx, dy):
    """Content moves by ``(+dx, +dy)``: ``out(x, y) = in(x - dx, y - dy)``."""
    return np.array([[1.0, 0.0, -float(dx)], [0.0, 1.0, -float(dy)]])


def _affine_indices(height, width, inverse_map):
    m = np.asarray(inverse_map, dtype=np.float64)
    if m.shape != (2, 3) or not np.all(np.isfinite(m)):
        raise ValueError("inverse_map must be a finite 2x3 matrix")
    py = np.arange(height, dtype=np.float64)[:, None] + 0.5
    px = np.arange(width, dtype=np.float64)[None, :] + 0.5
    sx = m[0, 0] * px + m[0, 1] * py + m[0, 2]
    sy = m[1, 0] * px + m[1, 1] * py + m[1, 2]
    ix = np.floor(sx)
    iy = np.floor(sy)
    valid = (ix >= 0) & (ix < width) & (iy >= 0) & (iy < height)
    ix = np.where(valid, ix, 0).astype(np.intp)
    iy = np.where(valid, iy, 0).astype(np.intp)
    return iy, ix, valid


def remap(arr, inverse_map, fill):
    """Nearest-neighbour remap of ``(..., H, W, C)`` arrays of any dtype."""
    h, w = arr.shape[-3], arr.shape[-2]
    iy, ix, valid = _affine_indices(h, w, inverse_map)
    out = arr[..., iy, ix, :]
    out[..., ~valid, :] = fill
    return out


def op_affine(img, inverse_map, fill=FILL_GRAY):
    """Resample ``img`` through an output-to-source affine map.

    Each output pixel center ``(x + 0.5, y + 0.5)`` is mapped to source
    coordinates and sampled nearest-neighbour (the source pixel whose square
    contains the point). Sources outside the image take ``fill``.
    """
    img = as_image(img)
    return remap(img, inverse_map, fill)


def _geometric_map(param, height, width):
    kind = param.kind
    if kind is TransformKind.ROTATE:
        return rotation_inverse_map(param.value, height, width)
    if kind is TransformKind.SHEAR_X:
        return shear_inverse_map(param.value, "x", height, width)
    if kind is TransformKind.SHEAR_Y:
        return shear_inverse_map(param.value, "y", height, width)
    if kind is TransformKind.TRANSLATE_X:
        return translate_inverse_map(param.value, 0)
    return translate_inverse_map(0, param.value)


# ------------------------------------------------------------ histogram family


def autocontrast_lut(channel_values):
    lo = int(channel_values.min())
    hi = int(channel_values.max())
    if lo == hi:
        return np.arange(256)
    i = np.arange(256, dtype=np.float64)
    return np.clip(round_half_away((i - lo) * 255.0 / (hi - lo)), 0, 255).astype(np.int64)


def op_autocontrast(img):
    """Stretch each channel so its min maps to 0 and its max to 255."""
    img = as_image(img)
    return apply_lut(img, np.stack([autocontrast_lut(img[..., c]) for c in range(3)]))


def equalize_lut(channel_values):
    hist = np.bincount(channel_values.ravel(), minlength=256).astype(np.int64)
    last = int(np.flatnonzero(hist)[-1])
    step = (int(hist.sum()) - int(hist[last])) // 255
    if step == 0:
        return np.arange(256)
    prefix = np.concatenate(([0], np.cumsum(hist)[:-1]))
    return np.clip((prefix + step // 2) // step, 0, 255)


def op_equalize(img):
    """Histogram-equalize each channel independently."""
    img = as_image(img)
    return apply_lut(img, np.stack([equalize_lut(img[..., c]) for c in range(3)]))


def solarize_lut(threshold):
    i = np.arange(256)
    return np.where(i >= threshold, 255 - i, i)


def posterize_lut(bits):
    if not 1 <= bits <= 8:
        raise ValueError(f"posterize bits must be in [1, 8], got {bits}")
    mask = (0xFF << (8 - bits)) & 0xFF
    return np.arange(256) & mask


# ------------------------------------------------------------------- enhance


def luma(img):
    """Per-pixel rounded Rec.601 luma, computed exactly in integers."""
    img = img.astype(np.int64)
    return (299 * img[..., 0] + 587 * img[..., 1] + 114 * img[..., 2] + 500) // 1000


def mean_luma(img):
    lum = luma(img)
    count = lum.size
    return int((2 * int(lum.sum()) + count) // (2 * count))


_SMOOTH_KERNEL = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=np.int64)


def smooth(img):
    """3x3 smoothing (weights sum to 13) on the interior; border pixels copied."""
    img = as_image(img)
    h, w, _ = img.shape
    out = img.copy()
    if h < 3 or w < 3:
        return out
    src = img.astype(np.int64)
    acc = np.zeros((h - 2, w - 2, 3), dtype=np.int64)
    for dy in range(3):
        for dx in range(3):
            acc += _SMOOTH_KERNEL[dy, dx] * src[dy : dy + h - 2, dx : dx + w - 2]
    out[1:-1, 1:-1] = np.clip((2 * acc + 13) // 26, 0, 255)
    return out


def enhance_base(img, kind):
    img = as_image(img)
    kind = TransformKind(kind)
    if kind is TransformKind.COLOR:
        return np.repeat(luma(img)[..., None], 3, axis=2).astype(np.uint8)
    if kind is TransformKind.CONTRAST:
        return np.full_like(img, mean_luma(img))
    if kind is TransformKind.BRIGHTNESS:
        return np.zeros_like(img)
    if kind is TransformKind.SHARPNESS:
        return smooth(img)
    raise ValueError(f"{kind} is not an enhance transform")


def op_enhance(img, kind, factor):
    """Blend ``img`` with a kind-specific degenerate image.

    factor 1 returns the input; 0 returns the degenerate image (grayscale,
    mean-luma gray, black, or smoothed); values above 1 extrapolate.
    """
    if factor < 0:
        raise NegativeFactor(f"enhance factor must be >= 0, got {factor}")
    img = as_image(img)
    return blend(img, enhance_base(img, kind), factor)


# ------------------------------------------------------------------ dispatch


def apply_param(img, param):
    """Apply an already-resolved ``TransformParam``."""
    img = as_image(img)
    kind = param.kind
    if kind is TransformKind.IDENTITY:
        return img.copy()
    if kind is TransformKind.AUTO_CONTRAST:
        return op_autocontrast(img)
    if kind is TransformKind.EQUALIZE:
        return op_equalize(img)
    if kind is TransformKind.SOLARIZE:
        return apply_lut(img, solarize_lut(param.value))
    if kind is TransformKind.POSTERIZE:
        return apply_lut(img, posterize_lut(param.value))
    if kind in _ENHANCE:
        return op_enhance(img, kind, param.value)
    h, w, _ = img.shape
    return op_affine(img, _geometric_map(param, h, w))


def apply_transform(img, kind, level, rng, sign=None):
    """Apply one transform at ``level``; dimensions are always preserved."""
    img = as_image(img)
    param = magnitude_to_param(kind, level, rng, image_size=img.shape[:2], sign=sign)
    return apply_param(img, param)


# ------------------------------------------------------------------ baseline


@dataclass(frozen=True)
class BaselineOp:
    """One of the default augmentations: ``flip-lr``, ``pad-crop`` or ``cutout``.

    ``size`` is the padding for pad-crop and the square side for cutout.
    """

    name: str
    size: int = 0

    def __post_init__(self):
        if self.name not in BASELINE_NAMES:
            raise ValueError(f"unknown baseline op {self.name!r}")
        if int(self.size) != self.size or self.size < 0:
            raise SizeOutOfRange(f"{self.name} size must be a non-negative int")

    def to_dict(self):
        if self.name == "flip-lr":
            return {"op": self.name}
        key = "pad" if self.name == "pad-crop" else "size"
        return {"op": self.name, key: int(self.size)}

    @classmethod
    def from_dict(cls, d):
        name = d["op"]
        if name == "pad-crop":
            return cls(name, d["pad"])
        if name == "cutout":
            return cls(name, d["size"])
        return cls(name)


BASELINE_NAMES = ("flip-lr", "pad-crop", "cutout")


def flip_lr(img):
    return as_image(img)[:, ::-1].copy()


def pad_crop(img, pad, rng):
    img = as_image(img)
    if pad < 0:
        raise SizeOutOfRange(f"pad must be >= 0, got {pad}")
    if pad == 0:
        return img.copy()
    h, w, _ = img.shape
    padded = np.zeros((h + 2 * pad, w + 2 * pad, 3), dtype=np.uint8)
    padded[pad : pad + h, pad : pad + w] = img
    oy = rng.choice(2 * pad + 1)
    ox = rng.choice(2 * pad + 1)
    return padded[oy : oy + h, ox : ox + w].copy()


def cutout(img, size, rng, fill=FILL_GRAY):
    """Gray out a ``size`` x ``size`` square centered on a uniform pixel."""
    img = as_image(img)
    h, w, _ = img.shape
    if not 0 <= size <= min(h, w):
        raise SizeOutOfRange(f"cutout size {size} outside [0, {min(h, w)}]")
    if size == 0:
        return img.copy()
    cy = rng.choice(h)
    cx = rng.choice(w)
    y0, x0 = cy - size // 2, cx - size // 2
    out = img.copy()
    out[max(0, y0) : max(0, y0 + size), max(0, x0) : max(0, x0 + size)] = fill
    return out


def op_baseline(img, which, rng):
    """Apply one baseline augmentation (flip with probability 0.5)."""
    if which.name == "flip-lr":
        return flip_lr(img) if rng.choice(2) == 1 else as_image(img).copy()
    if which.name == "pad-crop":
        return pad_crop(img, which.size, rng)
    return cutout(img, which.size, rng)


# ------------------------------------------------------ real-valued lifts
#
# Used by the differentiable mixture. Inputs are float arrays in [0, 1] with
# shape (..., H, W, 3); directions are fixed to +1 and nothing is quantized
# except where the op itself is a quantizer (posterize, equalize).


def _real_indices(x):
    return np.clip(round_half_away(x * 255.0), 0, 255).astype(np.int64)


def _real_autocontrast(x):
    lo = x.min(axis=(-3, -2), keepdims=True)
    hi = x.max(axis=(-3, -2), keepdims=True)
    span = hi - lo
    flat = span <= 1e-12
    return np.where(flat, x, (x - lo) / np.where(flat, 1.0, span))


def _real_equalize(x):
    q = _real_indices(x)
    lead = q.shape[:-3]
    flat_q = q.reshape((-1,) + q.shape[-3:])
    out = np.empty(flat_q.shape, dtype=np.float64)
    for b in range(flat_q.shape[0]):
        for c in range(3):
            lut = equalize_lut(flat_q[b, ..., c])
            out[b, ..., c] = lut[flat_q[b, ..., c]] / 255.0
    return out.reshape(lead + q.shape[-3:])


def _real_luma(x):
    return 0.299 * x[..., 0] + 0.587 * x[..., 1] + 0.114 * x[..., 2]


def _real_smooth(x):
    h, w = x.shape[-3], x.shape[-2]
    out = x.copy()
    if h < 3 or w < 3:
        return out
    acc = np.zeros(x[..., 1:-1, 1:-1, :].shape)
    for dy in range(3):
        for dx in range(3):
            acc += _SMOOTH_KERNEL[dy, dx] * x[..., dy : dy + h - 2, dx : dx + w - 2, :]
    out[..., 1:-1, 1:-1, :] = acc / 13.0
    return out


def _real_base(x, kind):
    if kind is TransformKind.COLOR:
        return np.repeat(_real_luma(x)[..., None], 3, axis=-1)
    if kind is TransformKind.CONTRAST:
        m = _real_luma(x).mean(axis=(-2, -1))
        return np.broadcast_to(m[..., None, None, None], x.shape)
    if kind is TransformKind.BRIGHTNESS:
        return np.zeros_like(x)
    return _real_smooth(x)


def real_transform(x, kind, level):
    """Real-valued version of ``kind`` at ``level`` with direction +1."""
    kind = TransformKind(kind)
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-3], x.shape[-2]
    param = magnitude_to_param(kind, level, None, image_size=(h, w), sign=1)
    if kind is TransformKind.IDENTITY:
        return x.copy()
    if kind is TransformKind.AUTO_CONTRAST:
        return _real_autocontrast(x)
    if kind is TransformKind.EQUALIZE:
        return _real_equalize(x)
    if kind is TransformKind.SOLARIZE:
        return np.where(x * 255.0 >= param.value, 1.0 - x, x)
    if kind is TransformKind.POSTERIZE:
        return (_real_indices(x) & ((0xFF << (8 - param.value)) & 0xFF)) / 255.0
    if kind in _ENHANCE:
        base = _real_base(x, kind)
        return np.clip(base + param.value * (x - base), 0.0, 1.0)
    return remap(x.copy(), _geometric_map(param, h, w), FILL_GRAY / 255.0)
