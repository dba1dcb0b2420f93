"""Grid search over (N, M), random-subset ablations and single-kind magnitude sweeps.

An *evaluator* is any callable ``evaluator(cfg, seed) -> accuracy`` that is
deterministic in its arguments. Results are always merged by cell key, so
parallel evaluation (``jobs > 1``) gives the same answer as a serial run.
"""

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field

from randaug.errors import EvaluatorFailure, InsufficientCoverage, InvalidSizeRange
from randaug.policy import Constant, RandAugmentConfig
from randaug.transforms import ALL_KINDS, TransformKind, check_level

# Full-scale per-transform deltas (percentage points) measured with
# Wide-ResNet-28-2 on CIFAR-10, N=3, M=4; shown next to desk-scale results.
REFERENCE_DELTAS_PP = {
    "rotate": 1.3,
    "shear-x": 0.9,
    "shear-y": 0.9,
    "translate-y": 0.4,
    "translate-x": 0.4,
    "autoContrast": 0.1,
    "sharpness": 0.1,
    "identity": 0.1,
    "contrast": 0.0,
    "color": 0.0,
    "brightness": 0.0,
    "equalize": -0.0,
    "solarize": -0.1,
    "posterize": -0.3,
}

ABLATION_N = 3
ABLATION_M = 4


def fmt(x):
    """Fixed six-decimal rendering used by every CSV report."""
    return f"{x:.6f}"


def _run_jobs(fn, tasks, jobs, executor, keys=None):
    """Evaluate ``fn(*task)`` for every task; returns ``{key: result}``.

    ``keys`` label the tasks (defaults to their indices). On the first
    failure in task order, raises ``EvaluatorFailure`` carrying every result
    that did finish.
    """
    keys = list(range(len(tasks))) if keys is None else list(keys)
    results = {}
    if jobs <= 1:
        for key, task in zip(keys, tasks):
            try:
                results[key] = fn(*task)
            except Exception as exc:
                raise EvaluatorFailure(key, exc, dict(results)) from exc
        return results
    pool_cls = ProcessPoolExecutor if executor == "process" else ThreadPoolExecutor
    failure = None
    with pool_cls(max_workers=jobs) as pool:
        futures = [pool.submit(fn, *task) for task in tasks]
        for key, fut in zip(keys, futures):
            try:
                results[key] = fut.result()
            except Exception as exc:
                if failure is None:
                    failure = (key, exc)
    if failure is not None:
        raise EvaluatorFailure(failure[0], failure[1], dict(results)) from failure[1]
    return results


def _checked_accuracy(value):
    acc = float(value)
    if not (0.0 <= acc <= 1.0):
        raise ValueError(f"evaluator returned accuracy {value} outside [0, 1]")
    return acc


# ---------------------------------------------------------------- grid search


@dataclass(frozen=True)
class GridSpec:
    n_candidates: tuple
    m_candidates: tuple
    seeds: tuple = (0, 1, 2, 3, 4)

    def __post_init__(self):
        object.__setattr__(self, "n_candidates", tuple(int(n) for n in self.n_candidates))
        object.__setattr__(self, "m_candidates", tuple(check_level(m) for m in self.m_candidates))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        for name in ("n_candidates", "m_candidates", "seeds"):
            values = getattr(self, name)
            if not values:
                raise ValueError(f"GridSpec.{name} must not be empty")
            if len(set(values)) != len(values):
                raise ValueError(f"GridSpec.{name} has duplicates")

    def cells(self):
        return [(n, m) for n in sorted(self.n_candidates) for m in sorted(self.m_candidates)]


@dataclass(frozen=True)
class CellResult:
    mean: float
    per_seed: tuple  # (seed, accuracy) pairs in ascending seed order


@dataclass
class GridResult:
    cells: dict  # (n, m) -> CellResult
    best: tuple
    seeds: tuple = ()

    @property
    def curve(self):
        """``{n: [(m, mean accuracy), ...]}`` with m ascending."""
        out = {}
        for (n, m), cell in sorted(self.cells.items()):
            out.setdefault(n, []).append((m, cell.mean))
        return out

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["n", "m", "seed", "accuracy"])
        for (n, m), cell in sorted(self.cells.items()):
            for seed, acc in cell.per_seed:
                writer.writerow([n, fmt(m), seed, fmt(acc)])
        return buf.getvalue()

    def summary_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["n", "m", "mean_accuracy"])
        for (n, m), cell in sorted(self.cells.items()):
            writer.writerow([n, fmt(m), fmt(cell.mean)])
        return buf.getvalue()

    def summary(self):
        n, m = self.best
        lines = [f"grid: {len(self.cells)} cells x {len(self.seeds)} seeds"]
        for n_, points in self.curve.items():
            row = "  ".join(f"M={pm:g}:{acc:.4f}" for pm, acc in points)
            lines.append(f"  N={n_}  {row}")
        lines.append(f"best: N={n} M={m:g} mean accuracy {self.cells[self.best].mean:.6f}")
        return "\n".join(lines)


def best_cell(means):
    """Argmax of ``{(n, m): mean}``; ties go to smaller n, then smaller m."""
    return min(means, key=lambda cell: (-means[cell], cell[0], cell[1]))


def _evaluate_cell(evaluator, cfg, seed):
    return _checked_accuracy(evaluator(cfg, seed))


def grid_search(spec, evaluator, base_config=None, jobs=1, executor="thread"):
    """Evaluate every ``(n, m, seed)`` and pick the best mean cell.

    Each cell uses ``base_config`` with ``n`` replaced, a constant schedule
    at ``m``, and ``seed`` as the config seed.

    Raises:
        EvaluatorFailure: with ``partial`` mapping finished
            ``(n, m, seed)`` triples to accuracies.
    """
    base = base_config or RandAugmentConfig()
    tasks = []
    keys = []
    for n, m in spec.cells():
        cfg = base.replace(n=n, schedule=Constant(m))
        for seed in sorted(spec.seeds):
            tasks.append((evaluator, cfg.replace(seed=seed), seed))
            keys.append((n, m, seed))
    raw = _run_jobs(_evaluate_cell, tasks, jobs, executor, keys)
    cells = {}
    for n, m in spec.cells():
        per_seed = tuple((s, raw[(n, m, s)]) for s in sorted(spec.seeds))
        mean = math.fsum(a for _, a in per_seed) / len(per_seed)
        cells[(n, m)] = CellResult(mean, per_seed)
    best = best_cell({k: c.mean for k, c in cells.items()})
    return GridResult(cells, best, tuple(sorted(spec.seeds)))


# ------------------------------------------------------------------ ablation


@dataclass(frozen=True)
class AblationSample:
    subset: frozenset
    accuracy: float

    def __post_init__(self):
        object.__setattr__(self, "subset", frozenset(TransformKind(k) for k in self.subset))
        if not self.subset:
            raise ValueError("ablation subset must not be empty")


def draw_subset(rng, lo, hi):
    """Uniform size in ``[lo, hi]``, then that many distinct uniform kinds."""
    size = lo + rng.choice(hi - lo + 1)
    pool = list(ALL_KINDS)
    chosen = []
    for _ in range(size):
        chosen.append(pool.pop(rng.choice(len(pool))))
    return frozenset(chosen)


def run_ablation(num_samples, size_range, evaluator, rng, base_config=None, jobs=1, executor="thread"):
    """Score random transform subsets with RandAugment at N=3, M=4.

    No other augmentation is applied. Each sample's evaluation seed is one
    draw from ``rng`` taken right after its subset.
    """
    lo, hi = size_range
    if not 1 <= lo <= hi <= len(ALL_KINDS):
        raise InvalidSizeRange(f"need 1 <= lo <= hi <= {len(ALL_KINDS)}, got [{lo}, {hi}]")
    base = base_config or RandAugmentConfig()
    base = base.replace(n=ABLATION_N, schedule=Constant(ABLATION_M), baseline=(), cutout_after=None)
    subsets, tasks = [], []
    for _ in range(num_samples):
        subset = draw_subset(rng, lo, hi)
        seed = rng.next_u64()
        subsets.append(subset)
        tasks.append((evaluator, base.replace(subset=tuple(subset), seed=seed), seed))
    raw = _run_jobs(_evaluate_cell, tasks, jobs, executor)
    return [AblationSample(subsets[i], raw[i]) for i in range(num_samples)]


def nearest_rank(sorted_values, pct):
    """Nearest-rank percentile of an already sorted sequence."""
    if not sorted_values:
        raise ValueError("percentile of an empty sequence")
    rank = max(1, math.ceil(pct / 100.0 * len(sorted_values)))
    return sorted_values[rank - 1]


@dataclass
class AblationReport:
    """Per-kind deltas (accuracy units) and accuracy-by-subset-size curve."""

    per_kind_delta: dict
    curve_by_size: dict  # size -> (median, p30, p70)
    num_samples: int = 0
    uncovered: tuple = ()
    metadata: dict = field(default_factory=dict)

    def ranked(self):
        """Kinds ordered from most to least helpful (ties by registry order)."""
        order = {k: i for i, k in enumerate(ALL_KINDS)}
        return sorted(self.per_kind_delta.items(), key=lambda kv: (-kv[1], order[kv[0]]))

    def to_csv(self):
        """``kind,delta`` rows, delta in percentage points, descending."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["kind", "delta"])
        for kind, delta in self.ranked():
            writer.writerow([kind.value, fmt(100.0 * delta)])
        return buf.getvalue()

    def curve_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["size", "median", "p30", "p70"])
        for size in sorted(self.curve_by_size):
            writer.writerow([size, *(fmt(v) for v in self.curve_by_size[size])])
        return buf.getvalue()

    def summary(self):
        lines = [f"ablation over {self.num_samples} random subsets"]
        for key, value in self.metadata.items():
            lines.append(f"  {key}: {value}")
        lines.append("  kind            delta(pp)  reference(pp)")
        for kind, delta in self.ranked():
            ref = REFERENCE_DELTAS_PP[kind.value]
            lines.append(f"  {kind.value:<14}  {100 * delta:+9.3f}  {ref:+13.1f}")
        if self.uncovered:
            lines.append("  uncovered: " + ", ".join(k.value for k in self.uncovered))
        lines.append("  reference: full-scale CIFAR-10 deltas, N=3, M=4")
        return "\n".join(lines)


def per_transform_delta(samples, kinds=None):
    """Mean accuracy with a kind minus mean accuracy without it.

    Args:
        samples: ``AblationSample`` list.
        kinds: kinds to report. Defaults to every kind present in at least
            one sample; kinds never sampled are listed in ``uncovered``.

    Raises:
        InsufficientCoverage: a requested kind is in every sample or in none.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("no ablation samples")
    present = set().union(*(s.subset for s in samples))
    if kinds is None:
        targets = [k for k in ALL_KINDS if k in present]
    else:
        targets = [TransformKind(k) for k in kinds]
    # offsets from one sample's accuracy make equal accuracies give exactly 0
    ref = samples[0].accuracy
    deltas = {}
    for kind in targets:
        with_kind = [s.accuracy - ref for s in samples if kind in s.subset]
        without = [s.accuracy - ref for s in samples if kind not in s.subset]
        if not with_kind or not without:
            raise InsufficientCoverage(kind)
        deltas[kind] = math.fsum(with_kind) / len(with_kind) - math.fsum(without) / len(without)
    by_size = {}
    for s in samples:
        by_size.setdefault(len(s.subset), []).append(s.accuracy)
    curve = {}
    for size, accs in by_size.items():
        accs.sort()
        curve[size] = (nearest_rank(accs, 50), nearest_rank(accs, 30), nearest_rank(accs, 70))
    uncovered = tuple(k for k in ALL_KINDS if k not in present)
    metadata = {
        "subset sampling": "size uniform in [lo, hi], kinds uniform without replacement",
        "policy": f"N={ABLATION_N}, M={ABLATION_M}, no other augmentation",
        "percentiles": "nearest-rank",
    }
    return AblationReport(deltas, curve, len(samples), uncovered, metadata)


# ----------------------------------------------------------- magnitude sweep


@dataclass
class SweepTable:
    kind: TransformKind
    base_level: float
    rows: list  # (level, accuracy) in input order
    best_level: float
    base_accuracy: float

    @property
    def gap(self):
        """Accuracy of the best level minus accuracy at the shared base level."""
        return dict(self.rows).get(self.best_level) - self.base_accuracy

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["level", "accuracy"])
        for level, acc in self.rows:
            writer.writerow([fmt(level), fmt(acc)])
        return buf.getvalue()

    def summary(self):
        return (
            f"{self.kind.value}: best level {self.best_level:g} "
            f"({dict(self.rows)[self.best_level]:.6f}) vs shared level "
            f"{self.base_level:g} ({self.base_accuracy:.6f}); gap {self.gap:+.6f}"
        )


def magnitude_sweep(kind, levels, base_level, evaluator, base_config=None, seed=0, jobs=1, executor="thread"):
    """Vary one kind's level while every other kind stays at ``base_level``.

    The base level is evaluated as well when it is not among ``levels``.
    """
    kind = TransformKind(kind)
    levels = [check_level(v) for v in levels]
    if not levels:
        raise ValueError("levels must not be empty")
    base_level = check_level(base_level)
    base = (base_config or RandAugmentConfig()).replace(schedule=Constant(base_level), seed=seed)
    todo = list(dict.fromkeys(levels + [base_level]))
    tasks = [
        (evaluator, base.replace(level_overrides={**base.level_overrides, kind: lv}), seed)
        for lv in todo
    ]
    raw = _run_jobs(_evaluate_cell, tasks, jobs, executor)
    acc = {lv: raw[i] for i, lv in enumerate(todo)}
    rows = [(lv, acc[lv]) for lv in levels]
    best_level = min(levels, key=lambda lv: (-acc[lv], lv))
    return SweepTable(kind, base_level, rows, best_level, acc[base_level])
