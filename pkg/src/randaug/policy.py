"""The RandAugment sampler, magnitude schedules and config serialization.

A policy is two numbers: ``n`` transforms applied in sequence, each chosen
uniformly (with replacement) from the allowed subset, all sharing one
magnitude drawn from a schedule.

Random-stream layout for one image (``augment_image``)::

    rng = DeterministicRng(cfg.seed).split(step).split(image_index)
    baseline ops, in order           (flip: 1 draw, pad-crop: 2, cutout: 2)
    schedule value                   (random schedules: 1 draw, else 0)
    n kind indices                   (1 draw each)
    one direction per signed op      (drawn when the op is applied)
    cutout_after                     (2 draws)
"""

import dataclasses
import json
import re
from dataclasses import dataclass, field

from randaug.errors import (
    EmptySubset,
    InvalidConfig,
    InvalidSchedule,
    LevelOutOfRange,
    ParseError,
    PolicyOverflow,
)
from randaug.imgcore import DeterministicRng, as_image
from randaug.transforms import (
    ALL_KINDS,
    MAX_LEVEL,
    BaselineOp,
    TransformKind,
    apply_transform,
    check_level,
    cutout,
    op_baseline,
)

CONFIG_VERSION = 1
MAX_N = 8
_U64 = (1 << 64) - 1


def _bounded_level(value, name):
    try:
        return check_level(value)
    except LevelOutOfRange as exc:
        raise InvalidSchedule(f"{name}: {exc}") from None


def _check_progress(step, total_steps):
    if total_steps < 1 or not 0 <= step <= total_steps:
        raise InvalidSchedule(f"need 0 <= step <= total_steps, total_steps >= 1; got {step}/{total_steps}")
    return step / total_steps


def _lerp(a, b, t):
    # exact at t = 0 and t = 1
    return a * (1.0 - t) + b * t


@dataclass(frozen=True)
class Constant:
    m: float

    type_name = "constant"

    def __post_init__(self):
        object.__setattr__(self, "m", _bounded_level(self.m, "m"))

    def value(self, step, total_steps, rng):
        _check_progress(step, total_steps)
        return self.m

    def params(self):
        return {"m": self.m}


@dataclass(frozen=True)
class Random:
    """Uniform magnitude in ``[lo, hi]``, resampled for every image."""

    lo: float
    hi: float

    type_name = "random"

    def __post_init__(self):
        object.__setattr__(self, "lo", _bounded_level(self.lo, "lo"))
        object.__setattr__(self, "hi", _bounded_level(self.hi, "hi"))
        if self.lo > self.hi:
            raise InvalidSchedule(f"lo {self.lo} > hi {self.hi}")

    def value(self, step, total_steps, rng):
        _check_progress(step, total_steps)
        return rng.uniform(self.lo, self.hi)

    def params(self):
        return {"lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class Linear:
    m_start: float
    m_end: float

    type_name = "linear"

    def __post_init__(self):
        object.__setattr__(self, "m_start", _bounded_level(self.m_start, "m_start"))
        object.__setattr__(self, "m_end", _bounded_level(self.m_end, "m_end"))

    def value(self, step, total_steps, rng):
        return _lerp(self.m_start, self.m_end, _check_progress(step, total_steps))

    def params(self):
        return {"m_start": self.m_start, "m_end": self.m_end}


@dataclass(frozen=True)
class RandomIncreasingUpper:
    """Uniform in ``[lo, hi(t)]`` where ``hi`` grows linearly over training."""

    lo: float
    hi_start: float
    hi_end: float

    type_name = "random-increasing-upper"

    def __post_init__(self):
        for name in ("lo", "hi_start", "hi_end"):
            object.__setattr__(self, name, _bounded_level(getattr(self, name), name))
        if not self.lo <= self.hi_start <= self.hi_end:
            raise InvalidSchedule(
                f"need lo <= hi_start <= hi_end, got {self.lo}, {self.hi_start}, {self.hi_end}"
            )

    def upper(self, step, total_steps):
        return _lerp(self.hi_start, self.hi_end, _check_progress(step, total_steps))

    def value(self, step, total_steps, rng):
        return rng.uniform(self.lo, self.upper(step, total_steps))

    def params(self):
        return {"lo": self.lo, "hi_start": self.hi_start, "hi_end": self.hi_end}


SCHEDULE_TYPES = {cls.type_name: cls for cls in (Constant, Random, Linear, RandomIncreasingUpper)}


def schedule_value(schedule, step, total_steps, rng):
    """Magnitude for training progress ``step / total_steps``."""
    return schedule.value(step, total_steps, rng)


def _canonical_subset(kinds):
    chosen = {TransformKind(k) for k in kinds}
    return tuple(k for k in ALL_KINDS if k in chosen)


@dataclass(frozen=True)
class RandAugmentConfig:
    """Everything needed to augment an image reproducibly.

    Attributes:
        n: number of transforms applied in sequence (0..8).
        schedule: magnitude schedule (``Constant(m)`` for plain RandAugment).
        subset: allowed kinds; stored in registry order.
        seed: 64-bit stream key.
        baseline: ``BaselineOp`` list applied before the sampled transforms.
        cutout_after: optional cutout size applied last.
        level_overrides: per-kind level replacing the schedule value.
    """

    n: int = 2
    schedule: object = field(default_factory=lambda: Constant(9))
    subset: tuple = ALL_KINDS
    seed: int = 0
    baseline: tuple = ()
    cutout_after: int = None
    level_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.n, bool) or int(self.n) != self.n or not 0 <= self.n <= MAX_N:
            raise InvalidConfig(f"n must be an integer in [0, {MAX_N}], got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        if not isinstance(self.schedule, tuple(SCHEDULE_TYPES.values())):
            raise InvalidConfig(f"unsupported schedule {self.schedule!r}")
        subset = _canonical_subset(self.subset)
        if not subset:
            raise EmptySubset("transform subset must not be empty")
        object.__setattr__(self, "subset", subset)
        if int(self.seed) != self.seed or not 0 <= self.seed <= _U64:
            raise InvalidConfig(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "baseline", tuple(self.baseline))
        if self.cutout_after is not None and (int(self.cutout_after) != self.cutout_after or self.cutout_after < 0):
            raise InvalidConfig(f"cutout_after must be a non-negative int, got {self.cutout_after}")
        overrides = {TransformKind(k): check_level(v) for k, v in dict(self.level_overrides).items()}
        object.__setattr__(self, "level_overrides", overrides)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class PolicyRealization:
    """The concrete ``(kind, level)`` list applied to one image."""

    ops: tuple

    def to_json(self):
        return [{"op": kind.value, "level": level} for kind, level in self.ops]


def sample_policy(cfg, step, total_steps, rng):
    """Draw one realization: one schedule value, then ``n`` kinds with replacement."""
    if not cfg.subset:
        raise EmptySubset("transform subset must not be empty")
    level = schedule_value(cfg.schedule, step, total_steps, rng)
    kinds = [cfg.subset[rng.choice(len(cfg.subset))] for _ in range(cfg.n)]
    return PolicyRealization(tuple((k, cfg.level_overrides.get(k, level)) for k in kinds))


def image_stream(seed, step, image_index):
    return DeterministicRng(seed).split(step).split(image_index)


def apply_realization(img, realization, rng):
    out = as_image(img)
    for kind, level in realization.ops:
        out = apply_transform(out, kind, level, rng)
    return out


def augment_with_realization(img, cfg, step, total_steps, image_index):
    """Like ``augment_image`` but also returns the sampled ``PolicyRealization``."""
    rng = image_stream(cfg.seed, step, image_index)
    out = as_image(img).copy()
    for op in cfg.baseline:
        out = op_baseline(out, op, rng)
    realization = sample_policy(cfg, step, total_steps, rng)
    out = apply_realization(out, realization, rng)
    if cfg.cutout_after:
        out = cutout(out, cfg.cutout_after, rng)
    return out, realization


def augment_image(img, cfg, step, total_steps, image_index):
    """Baseline ops, then the sampled transforms, then the optional cutout."""
    return augment_with_realization(img, cfg, step, total_steps, image_index)[0]


def policy_space_size(k, n):
    """Number of distinct ordered policies, ``k ** n``."""
    if k < 1 or n < 0:
        raise ValueError(f"need k >= 1 and n >= 0, got k={k}, n={n}")
    size = k**n
    if size > _U64:
        raise PolicyOverflow(f"{k}**{n} does not fit in 64 bits")
    return size


# ------------------------------------------------------------- serialization


def config_to_dict(cfg):
    doc = {
        "version": CONFIG_VERSION,
        "n": cfg.n,
        "schedule": {"type": cfg.schedule.type_name, **cfg.schedule.params()},
        "subset": [k.value for k in cfg.subset],
        "seed": cfg.seed,
        "baseline": [op.to_dict() for op in cfg.baseline],
        "cutout_after": cfg.cutout_after,
    }
    if cfg.level_overrides:
        doc["level_overrides"] = {
            k.value: cfg.level_overrides[k] for k in ALL_KINDS if k in cfg.level_overrides
        }
    return doc


def serialize_config(cfg):
    """Render ``cfg`` as an indented JSON document with a fixed key order."""
    return json.dumps(config_to_dict(cfg), indent=2) + "\n"


def _line_of(text, key):
    if text is None:
        return None
    match = re.search(r'"%s"\s*:' % re.escape(key), text)
    if match is None:
        return None
    return text.count("\n", 0, match.start()) + 1


def _line_of_token(text, token):
    if text is None:
        return None
    idx = text.find(token)
    return None if idx < 0 else text.count("\n", 0, idx) + 1


def _require(doc, key, text, path=None):
    if key not in doc:
        raise ParseError("missing required key", line=None, field=path or key)
    return doc[key]


def _as_level(value, key, text):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"expected a number, got {value!r}", _line_of(text, key), key)
    if not 0 <= value <= MAX_LEVEL:
        raise ParseError(f"level {value} outside [0, {MAX_LEVEL:g}]", _line_of(text, key), key)
    return float(value)


def _as_int(value, key, text, lo=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(f"expected an integer, got {value!r}", _line_of(text, key), key)
    if lo is not None and value < lo:
        raise ParseError(f"must be >= {lo}, got {value}", _line_of(text, key), key)
    return value


def config_from_dict(doc, text=None):
    """Validate a decoded document and build the config it describes."""
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object", 1)
    known = {"version", "n", "schedule", "subset", "seed", "baseline", "cutout_after", "level_overrides"}
    for key in doc:
        if key not in known:
            raise ParseError("unknown key", _line_of(text, key), key)
    version = _require(doc, "version", text)
    if version != CONFIG_VERSION:
        raise ParseError(f"unsupported version {version!r}", _line_of(text, "version"), "version")

    n = _as_int(_require(doc, "n", text), "n", text, lo=0)
    if n > MAX_N:
        raise ParseError(f"n must be <= {MAX_N}", _line_of(text, "n"), "n")

    sched = _require(doc, "schedule", text)
    if not isinstance(sched, dict) or "type" not in sched:
        raise ParseError("schedule must be an object with a 'type'", _line_of(text, "schedule"), "schedule")
    cls = SCHEDULE_TYPES.get(sched["type"])
    if cls is None:
        raise ParseError(f"unknown schedule type {sched['type']!r}", _line_of(text, "type"), "schedule.type")
    names = [f.name for f in dataclasses.fields(cls)]
    extra = set(sched) - set(names) - {"type"}
    if extra:
        key = sorted(extra)[0]
        raise ParseError("unknown schedule parameter", _line_of(text, key), f"schedule.{key}")
    kwargs = {}
    for name in names:
        if name not in sched:
            raise ParseError("missing schedule parameter", _line_of(text, "schedule"), f"schedule.{name}")
        kwargs[name] = _as_level(sched[name], name, text)
    try:
        schedule = cls(**kwargs)
    except InvalidSchedule as exc:
        raise ParseError(str(exc), _line_of(text, "schedule"), "schedule") from None

    subset_raw = doc.get("subset", [k.value for k in ALL_KINDS])
    if not isinstance(subset_raw, list) or not subset_raw:
        raise ParseError("subset must be a non-empty list", _line_of(text, "subset"), "subset")
    subset = []
    for name in subset_raw:
        try:
            subset.append(TransformKind(name))
        except ValueError:
            raise ParseError(
                f"unknown transform name {name!r}", _line_of_token(text, f'"{name}"'), "subset"
            ) from None

    seed = _as_int(doc.get("seed", 0), "seed", text, lo=0)
    if seed > _U64:
        raise ParseError("seed must fit in 64 bits", _line_of(text, "seed"), "seed")

    baseline = []
    for i, entry in enumerate(doc.get("baseline", [])):
        try:
            baseline.append(BaselineOp.from_dict(entry))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad baseline op: {exc}", _line_of(text, "baseline"), f"baseline[{i}]") from None

    cutout_after = doc.get("cutout_after")
    if cutout_after is not None:
        cutout_after = _as_int(cutout_after, "cutout_after", text, lo=0)

    overrides = {}
    for name, value in doc.get("level_overrides", {}).items():
        try:
            kind = TransformKind(name)
        except ValueError:
            raise ParseError(
                f"unknown transform name {name!r}", _line_of(text, name), "level_overrides"
            ) from None
        overrides[kind] = _as_level(value, name, text)

    return RandAugmentConfig(
        n=n,
        schedule=schedule,
        subset=tuple(subset),
        seed=seed,
        baseline=tuple(baseline),
        cutout_after=cutout_after,
        level_overrides=overrides,
    )


def parse_config(text):
    """Inverse of ``serialize_config``.

    Raises:
        ParseError: malformed JSON or an invalid field, with the line number
            and field name when they can be located.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from None
    return config_from_dict(doc, text)
