"""Raster buffers, deterministic randomness and the low-level pixel kernels.

Images are plain ``numpy.ndarray`` objects of shape ``(height, width, 3)`` and
dtype ``uint8`` (row-major sRGB). Nothing in the package mutates an input
buffer; every operation returns a fresh array.
"""

import hashlib
import io
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from randaug.errors import (
    DimensionMismatch,
    FormatError,
    ImageIOError,
    InvalidRange,
)

_MASK64 = (1 << 64) - 1
_SPLIT_DOMAIN = 1 << 64
_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def as_image(arr):
    """Validate ``arr`` as an image buffer and return it as ``uint8``.

    Raises:
        DimensionMismatch: if the array is not ``(H, W, 3)`` with H, W >= 1.
        InvalidRange: if samples fall outside [0, 255].
    """
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionMismatch(f"expected (H, W, 3) image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise InvalidRange("image samples must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def round_half_away(x):
    """Round to nearest integer, ties away from zero (works on arrays)."""
    x = np.asarray(x, dtype=np.float64)
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def quantize(x):
    """Round half away from zero, clamp to [0, 255] and narrow to uint8."""
    return np.clip(round_half_away(x), 0, 255).astype(np.uint8)


def blend(a, b, factor):
    """Interpolate (or extrapolate) from ``b`` towards ``a``.

    ``out = clamp(round(b + factor * (a - b)))`` per sample, so factor 1
    returns ``a`` and factor 0 returns ``b``.
    """
    a = as_image(a)
    b = as_image(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"blend of {a.shape} with {b.shape}")
    factor = float(factor)
    if factor == 1.0:
        return a.copy()
    if factor == 0.0:
        return b.copy()
    af = a.astype(np.float64)
    bf = b.astype(np.float64)
    return quantize(bf + factor * (af - bf))


def apply_lut(img, lut):
    """Map every sample through a 256-entry table.

    ``lut`` is either one table of shape ``(256,)`` shared by all channels or
    one table per channel with shape ``(3, 256)``.
    """
    img = as_image(img)
    lut = np.asarray(lut)
    if lut.shape == (256,):
        lut = np.broadcast_to(lut, (3, 256))
    if lut.shape != (3, 256):
        raise DimensionMismatch(f"LUT must be (256,) or (3, 256), got {lut.shape}")
    lut = np.clip(lut, 0, 255).astype(np.uint8)
    out = np.empty_like(img)
    for c in range(3):
        out[..., c] = lut[c][img[..., c]]
    return out


# --------------------------------------------------------------------------- io


def _read_header_tokens(data, count):
    """Parse ``count`` whitespace-separated PNM header tokens.

    Returns the tokens and the offset of the single whitespace byte that
    terminates the last token.
    """
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PNM header")
        tokens.append(data[start:pos])
    if pos >= n or not data[pos : pos + 1].isspace():
        raise FormatError("PNM header must end with a single whitespace byte")
    return tokens, pos


def _decode_pnm(data):
    tokens, pos = _read_header_tokens(data, 4)
    magic = tokens[0]
    if magic not in (b"P6", b"P5"):
        raise FormatError(f"unsupported PNM variant {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"bad PNM header: {exc}") from None
    if width < 1 or height < 1:
        raise FormatError(f"invalid PNM size {width}x{height}")
    if maxval != 255:
        raise FormatError(f"only 8-bit PNM (maxval 255) is supported, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    payload = data[pos + 1 :]
    need = width * height * channels
    if len(payload) < need:
        raise FormatError(f"truncated PNM payload: need {need} bytes, have {len(payload)}")
    arr = np.frombuffer(payload[:need], dtype=np.uint8).reshape(height, width, channels)
    if channels == 1:
        arr = np.repeat(arr, 3, axis=2)
    return arr.copy()


def _decode_png(path):
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I", "F") or "16" in mode:
                raise FormatError(f"16-bit / non-8-bit PNG (mode {mode}) is not supported")
            if mode == "P":
                im = im.convert("RGB")
                mode = "RGB"
            if mode == "L":
                arr = np.asarray(im, dtype=np.uint8)[..., None].repeat(3, axis=2)
            elif mode == "RGB":
                arr = np.asarray(im, dtype=np.uint8)
            else:
                raise FormatError(f"unsupported PNG mode {mode}")
    except UnidentifiedImageError as exc:
        raise FormatError(str(exc)) from None
    return np.ascontiguousarray(arr)


def load_image(path):
    """Decode a binary PPM (P6, or gray P5) or an 8-bit PNG file.

    Grayscale inputs are replicated to three channels.

    Raises:
        ImageIOError: the file is missing or unreadable.
        FormatError: not PPM/PNG, truncated, or 16-bit samples.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ImageIOError(f"cannot read {path}: {exc}") from exc
    if data.startswith(_PNG_MAGIC):
        return _decode_png(path)
    if data[:2] in (b"P6", b"P5"):
        return _decode_pnm(data)
    raise FormatError(f"{path} is neither PNG nor binary PPM")


def encode_ppm(img):
    img = as_image(img)
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def atomic_write_bytes(path, data):
    """Write ``data`` to ``path`` through a temp file and ``os.replace``."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=path.parent or ".")
    except OSError as exc:
        raise ImageIOError(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise ImageIOError(f"cannot write {path}: {exc}") from exc


def save_image(img, path):
    """Write ``img`` as PNG when the suffix is ``.png``, else as binary PPM."""
    img = as_image(img)
    path = Path(path)
    if path.suffix.lower() == ".png":
        buf = io.BytesIO()
        Image.fromarray(np.ascontiguousarray(img), mode="RGB").save(buf, format="PNG")
        atomic_write_bytes(path, buf.getvalue())
    else:
        atomic_write_bytes(path, encode_ppm(img))


# -------------------------------------------------------------------------- rng


def _label_to_int(label):
    if isinstance(label, (bool, np.bool_)):
        raise TypeError("boolean split labels are ambiguous")
    if isinstance(label, (int, np.integer)):
        label = int(label)
        if label < 0:
            raise InvalidRange("split labels must be non-negative")
        return label & _MASK64
    if isinstance(label, str):
        digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
        # string labels live above the integer range so they never alias an int
        return int.from_bytes(digest, "little") | (1 << 64)
    raise TypeError(f"unsupported split label {label!r}")


class DeterministicRng:
    """Counter-based random stream keyed by a 64-bit seed.

    Word ``i`` of the stream is word ``i % 4`` of the Philox4x64-10 block for
    counter ``i // 4`` (numpy's ``Philox(key=key, counter=i // 4)``). A given
    ``(key, counter)`` therefore yields the same sequence on every platform,
    and any position can be reached without replaying the prefix.

    Every draw (``next_u64``, ``uniform``, ``choice``, ``sign``) consumes
    exactly one 64-bit word, i.e. advances ``counter`` by one.
    """

    __slots__ = ("key", "counter", "_block_index", "_block")

    def __init__(self, key, counter=0):
        key = int(key)
        counter = int(counter)
        if not 0 <= key <= _MASK64:
            raise InvalidRange(f"rng key must be a 64-bit unsigned integer, got {key}")
        if counter < 0:
            raise InvalidRange("rng counter must be non-negative")
        self.key = key
        self.counter = counter
        self._block_index = -1
        self._block = None

    def __repr__(self):
        return f"DeterministicRng(key={self.key}, counter={self.counter})"

    def next_u64(self):
        block_index = self.counter >> 2
        if block_index != self._block_index:
            self._block = [int(v) for v in np.random.Philox(key=self.key, counter=block_index).random_raw(4)]
            self._block_index = block_index
        value = self._block[self.counter & 3]
        self.counter += 1
        return value

    def uniform(self, lo=0.0, hi=1.0):
        """Uniform real in ``[lo, hi)`` built from the top 53 bits of one word."""
        if not lo <= hi:
            raise InvalidRange(f"uniform bounds out of order: [{lo}, {hi})")
        u = (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return lo + (hi - lo) * u

    def choice(self, k):
        """Uniform index in ``{0, ..., k-1}`` via a 64x64 multiply-high."""
        k = int(k)
        if k < 1:
            raise InvalidRange(f"choice needs k >= 1, got {k}")
        return (self.next_u64() * k) >> 64

    def sign(self):
        """+1 or -1 with equal probability (``choice(2) == 0`` means +1)."""
        return 1 if self.choice(2) == 0 else -1

    def split(self, label):
        """Derive an independent child stream.

        The child key is the first Philox word of ``label`` under this key in
        a separate key domain, so it never overlaps the parent's draw stream.
        """
        lab = _label_to_int(label)
        child = int(np.random.Philox(key=self.key | _SPLIT_DOMAIN, counter=lab).random_raw(1)[0])
        return DeterministicRng(child)

    def spawn(self, *labels):
        """Chain ``split`` over several labels."""
        rng = self
        for lab in labels:
            rng = rng.split(lab)
        return rng

    def numpy_generator(self):
        """A ``numpy.random.Generator`` seeded from one draw of this stream."""
        return np.random.Generator(np.random.Philox(key=self.next_u64()))
