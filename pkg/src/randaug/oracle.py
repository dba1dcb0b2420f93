"""Scalar reference implementation used to produce the golden corpus.

Everything here works pixel by pixel on nested Python lists with Python
floats and ints. It deliberately shares no code with ``randaug.transforms``
(only the random stream is common) so the committed goldens are an
independent check on the vectorized engine.
"""

import math
from pathlib import Path

from randaug.imgcore import DeterministicRng

GOLDEN_SEED = 0x5EED
GOLDEN_LEVELS = (0, 5, 10)
GOLDEN_SIZE = 8
POLICY_GOLDEN = {"seed": 42, "n": 2, "m": 9, "step": 0, "total_steps": 1, "image_index": 0}

KIND_NAMES = (
    "identity",
    "autoContrast",
    "equalize",
    "rotate",
    "solarize",
    "color",
    "posterize",
    "contrast",
    "brightness",
    "sharpness",
    "shear-x",
    "shear-y",
    "translate-x",
    "translate-y",
)
SIGNED = {
    "rotate",
    "shear-x",
    "shear-y",
    "translate-x",
    "translate-y",
    "color",
    "contrast",
    "brightness",
    "sharpness",
}


def seed_image(size=GOLDEN_SIZE):
    """Deterministic, non-constant test pattern with a spread histogram."""
    img = []
    for y in range(size):
        row = []
        for x in range(size):
            r = (37 * x + 11 * y + 5 * x * y + 20) % 256
            g = (17 * x * x + 29 * y + 60) % 256
            b = (255 - 23 * y - 9 * x + 3 * x * y) % 256
            row.append([r, g, b])
        img.append(row)
    return img


def _round(v):
    return int(math.floor(abs(v) + 0.5)) * (1 if v >= 0 else -1)


def _clamp(v):
    return 0 if v < 0 else 255 if v > 255 else v


def _copy(img):
    return [[list(p) for p in row] for row in img]


def _per_channel_lut(img, make_lut):
    out = _copy(img)
    for c in range(3):
        values = [p[c] for row in img for p in row]
        lut = make_lut(values)
        for row in out:
            for p in row:
                p[c] = lut[p[c]]
    return out


def _autocontrast(img):
    def make(values):
        lo, hi = min(values), max(values)
        if lo == hi:
            return list(range(256))
        return [_clamp(_round((i - lo) * 255.0 / (hi - lo))) for i in range(256)]

    return _per_channel_lut(img, make)


def _equalize(img):
    def make(values):
        hist = [0] * 256
        for v in values:
            hist[v] += 1
        last = max(i for i in range(256) if hist[i])
        step = (len(values) - hist[last]) // 255
        if step == 0:
            return list(range(256))
        lut, acc = [], 0
        for i in range(256):
            lut.append(_clamp((acc + step // 2) // step))
            acc += hist[i]
        return lut

    return _per_channel_lut(img, make)


def _solarize(img, threshold):
    return [[[255 - v if v >= threshold else v for v in p] for p in row] for row in img]


def _posterize(img, bits):
    keep = 256 - (1 << (8 - bits))
    return [[[v & keep for v in p] for p in row] for row in img]


def _luma(p):
    return (299 * p[0] + 587 * p[1] + 114 * p[2] + 500) // 1000


def _blend(a, b, factor):
    out = []
    for ra, rb in zip(a, b):
        row = []
        for pa, pb in zip(ra, rb):
            row.append([_clamp(_round(vb + factor * (va - vb))) for va, vb in zip(pa, pb)])
        out.append(row)
    return out


def _degenerate(img, kind):
    h, w = len(img), len(img[0])
    if kind == "color":
        return [[[_luma(p)] * 3 for p in row] for row in img]
    if kind == "contrast":
        total = sum(_luma(p) for row in img for p in row)
        n = h * w
        mean = (2 * total + n) // (2 * n)
        return [[[mean] * 3 for _ in range(w)] for _ in range(h)]
    if kind == "brightness":
        return [[[0, 0, 0] for _ in range(w)] for _ in range(h)]
    out = _copy(img)
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            for c in range(3):
                s = 0
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        weight = 5 if dy == 0 and dx == 0 else 1
                        s += weight * img[y + dy][x + dx][c]
                # s / 13 never lands on .5, so half-up equals half-away here
                out[y][x][c] = _clamp((2 * s + 13) // 26)
    return out


def _sample(img, source_of):
    """Nearest-neighbour pull: ``source_of(px, py)`` gives source coordinates."""
    h, w = len(img), len(img[0])
    out = []
    for y in range(h):
        row = []
        for x in range(w):
            sx, sy = source_of(x + 0.5, y + 0.5)
            ix, iy = math.floor(sx), math.floor(sy)
            if 0 <= ix < w and 0 <= iy < h:
                row.append(list(img[iy][ix]))
            else:
                row.append([128, 128, 128])
        out.append(row)
    return out


def transform(img, kind, level, sign):
    """Apply ``kind`` at ``level`` with an explicit direction ``sign``."""
    h, w = len(img), len(img[0])
    f = level / 10.0
    if kind == "identity":
        return _copy(img)
    if kind == "autoContrast":
        return _autocontrast(img)
    if kind == "equalize":
        return _equalize(img)
    if kind == "solarize":
        return _solarize(img, max(0, _round(256.0 * (1.0 - f))))
    if kind == "posterize":
        return _posterize(img, min(8, max(1, _round(8.0 - 4.0 * f))))
    if kind in ("color", "contrast", "brightness", "sharpness"):
        factor = max(0.0, 1.0 + sign * 0.9 * f)
        if factor == 1.0:
            return _copy(img)
        return _blend(img, _degenerate(img, kind), factor)
    cx, cy = w / 2.0, h / 2.0
    if kind == "rotate":
        t = math.radians(sign * 30.0 * f)
        c, s = math.cos(t), math.sin(t)
        # keep the same floating-point evaluation order as an affine matrix
        ox, oy = cx - c * cx + s * cy, cy - s * cx - c * cy
        return _sample(img, lambda px, py: (c * px + -s * py + ox, s * px + c * py + oy))
    if kind == "shear-x":
        k = sign * 0.3 * f
        return _sample(img, lambda px, py: (1.0 * px + -k * py + k * cy, 0.0 * px + 1.0 * py + 0.0))
    if kind == "shear-y":
        k = sign * 0.3 * f
        return _sample(img, lambda px, py: (1.0 * px + 0.0 * py + 0.0, -k * px + 1.0 * py + k * cx))
    if kind == "translate-x":
        t = sign * _round(0.3 * f * w)
        return _sample(img, lambda px, py: (px - t, py))
    if kind == "translate-y":
        t = sign * _round(0.3 * f * h)
        return _sample(img, lambda px, py: (px, py - t))
    raise ValueError(f"unknown transform {kind!r}")


def golden_rng(kind):
    return DeterministicRng(GOLDEN_SEED).split(KIND_NAMES.index(kind))


def golden_transform(img, kind, level):
    """The golden-corpus recipe: one sign draw from the per-kind stream."""
    rng = golden_rng(kind)
    sign = rng.sign() if kind in SIGNED else 1
    return transform(img, kind, level, sign)


def golden_policy(img, seed, n, m, step, total_steps, image_index):
    """Constant-M policy over the full registry, drawn exactly like the engine.

    Stream: ``DeterministicRng(seed).split(step).split(image_index)``; draw the
    N kind indices first, then one sign per signed op while applying.
    """
    rng = DeterministicRng(seed).split(step).split(image_index)
    kinds = [KIND_NAMES[rng.choice(len(KIND_NAMES))] for _ in range(n)]
    out = _copy(img)
    for kind in kinds:
        sign = rng.sign() if kind in SIGNED else 1
        out = transform(out, kind, float(m), sign)
    return out, kinds


def to_ppm_bytes(img):
    h, w = len(img), len(img[0])
    body = bytes(v for row in img for p in row for v in p)
    return b"P6\n%d %d\n255\n" % (w, h) + body


def golden_name(kind, level):
    return f"{kind}_L{level:02d}.ppm"


POLICY_GOLDEN_NAME = "policy_seed42_n2_m9.ppm"
SEED_IMAGE_NAME = "seed_image.ppm"


def write_golden_corpus(directory, force=False):
    """Write every golden PPM into ``directory``.

    Refuses to touch an existing file unless ``force`` is set.

    Returns:
        List of written paths.
    """
    directory = Path(directory)
    base = seed_image()
    files = {SEED_IMAGE_NAME: to_ppm_bytes(base)}
    for kind in KIND_NAMES:
        for level in GOLDEN_LEVELS:
            files[golden_name(kind, level)] = to_ppm_bytes(golden_transform(base, kind, level))
    policy_img, _ = golden_policy(base, **POLICY_GOLDEN)
    files[POLICY_GOLDEN_NAME] = to_ppm_bytes(policy_img)

    existing = [name for name in files if (directory / name).exists()]
    if existing and not force:
        raise FileExistsError(
            f"{len(existing)} golden file(s) already exist in {directory} "
            "(use force to overwrite)"
        )
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, data in files.items():
        path = directory / name
        path.write_bytes(data)
        written.append(path)
    return written
