"""Command-line interface.

Every run writes its artifacts plus ``manifest.json`` into a fresh run
directory under ``--out``. ``replay MANIFEST`` re-executes a run from its
manifest; outputs are byte-identical on the same platform.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

import argparse
import datetime
import json
import sys
from pathlib import Path

import numpy as np

from randaug import __version__
from randaug.app.datasets import (
    gen_shift_task,
    load_dataset_dir,
    read_cifar10_bin,
    save_dataset_dir,
    synthetic_splits,
)
from randaug.errors import RandAugError
from randaug.imgcore import DeterministicRng, atomic_write_bytes, load_image, save_image
from randaug.learn.bilevel import BilevelConfig, pretrain_model, train_density
from randaug.learn.classifier import ClassifierEvaluator
from randaug.learn.mixture import alpha_probabilities, uniform_alpha
from randaug.oracle import write_golden_corpus
from randaug.policy import (
    SCHEDULE_TYPES,
    Constant,
    RandAugmentConfig,
    augment_with_realization,
    config_to_dict,
    image_stream,
    parse_config,
    sample_policy,
)
from randaug.search import GridSpec, grid_search, magnitude_sweep, per_transform_delta, run_ablation
from randaug.transforms import ALL_KINDS, TransformKind

MANIFEST_FORMAT = "randaug-manifest-v1"
MANIFEST_NAME = "manifest.json"

# argparse destinations that only say where to write, not what to compute
_LOCATION_ARGS = ("out", "run_dir", "command")
_PATH_ARGS = ("input", "output", "config", "data", "cifar", "dest")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ parsing


def _int_list(text, flag):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated integers, got {text!r}") from None


def _float_list(text, flag):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated numbers, got {text!r}") from None


def _kinds(text, flag="--subset"):
    try:
        return tuple(TransformKind.parse(v.strip()) for v in str(text).split(",") if v.strip())
    except (ValueError, KeyError):
        raise UsageError(f"{flag}: unknown transform in {text!r}") from None


def parse_schedule(text, m=None):
    """``TYPE[:a,b,...]``; ``constant`` without values uses ``m``.

    Examples: ``constant:9``, ``random:0,10``, ``linear:0,15``,
    ``random-increasing-upper:0,5,15``.
    """
    name, _, rest = str(text).partition(":")
    cls = SCHEDULE_TYPES.get(name)
    if cls is None:
        raise UsageError(f"--schedule: unknown type {name!r} (choose from {', '.join(SCHEDULE_TYPES)})")
    values = _float_list(rest, "--schedule") if rest else []
    if cls is Constant and not values and m is not None:
        values = [m]
    try:
        return cls(*values)
    except TypeError:
        raise UsageError(f"--schedule: wrong number of values for {name!r}") from None


def build_config(args):
    """Policy config from ``--config`` plus command-line overrides."""
    if getattr(args, "config", None):
        cfg = parse_config(Path(args.config).read_text())
    else:
        cfg = RandAugmentConfig()
    changes = {}
    if getattr(args, "n", None) is not None:
        changes["n"] = args.n
    if getattr(args, "schedule", None):
        changes["schedule"] = parse_schedule(args.schedule, getattr(args, "m", None))
    elif getattr(args, "m", None) is not None:
        changes["schedule"] = Constant(args.m)
    if getattr(args, "subset", None):
        changes["subset"] = _kinds(args.subset)
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    return cfg.replace(**changes)


def _add_policy_flags(p, with_nm=True):
    p.add_argument("--config", help="policy config JSON file")
    if with_nm:
        p.add_argument("--n", type=int, help="number of transforms per image")
        p.add_argument("--m", type=float, help="constant magnitude")
        p.add_argument("--schedule", help="TYPE[:values], e.g. linear:0,15")
        p.add_argument("--seed", type=int, help="policy seed")
    p.add_argument("--subset", help="comma-separated transform names")


def _add_data_flags(p):
    g = p.add_argument_group("data (synthetic shapes unless --data or --cifar)")
    g.add_argument("--data", help="directory written by dataset-gen")
    g.add_argument("--cifar", help="directory of CIFAR-10 .bin batches")
    g.add_argument("--train-size", type=int, default=200)
    g.add_argument("--val-size", type=int, default=500)
    g.add_argument("--image-size", type=int, default=16)
    g.add_argument("--shape-size", type=int, default=None)
    g.add_argument("--classes", type=int, default=2)
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--data-seed", type=int, default=0)


def _add_train_flags(p):
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--jobs", type=int, default=1, help="parallel evaluations")


def build_parser():
    parser = _Parser(prog="randaug", description="RandAugment engine and experiment harness")
    parser.add_argument("--version", action="version", version=f"randaug {__version__}")
    parser.add_argument("--out", default="runs", help="parent directory for run directories")
    parser.add_argument("--run-dir", help="exact run directory (must not exist)")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("apply", help="augment one image")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    _add_policy_flags(p)
    p.add_argument("--step", type=int, default=0)
    p.add_argument("--total-steps", type=int, default=1)
    p.add_argument("--image-index", type=int, default=0)

    p = sub.add_parser("sample", help="print one sampled policy as JSON")
    _add_policy_flags(p)
    p.add_argument("--step", type=int, default=0)
    p.add_argument("--total-steps", type=int, default=1)
    p.add_argument("--image-index", type=int, default=0)

    p = sub.add_parser("grid-search", help="accuracy over an (N, M) grid")
    p.add_argument("--n", dest="grid_n", default="1,2,3", help="N candidates")
    p.add_argument("--m", dest="grid_m", default="4,5,7,9,11", help="M candidates")
    p.add_argument("--seeds", default="0,1,2,3,4")
    _add_policy_flags(p, with_nm=False)
    _add_data_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("ablate", help="per-transform deltas over random subsets")
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--size-lo", type=int, default=1)
    p.add_argument("--size-hi", type=int, default=14)
    p.add_argument("--seed", type=int, default=0, help="subset sampling seed")
    _add_data_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("mag-sweep", help="vary one transform's magnitude")
    p.add_argument("--kind", required=True)
    p.add_argument("--levels", default="0,5,10,15,20,25,30")
    p.add_argument("--base-level", type=float, default=9.0)
    _add_policy_flags(p, with_nm=False)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    _add_data_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("density-train", help="learn transform probabilities")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--xi", type=float, default=0.1)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--alpha-lr", type=float, default=1.0)
    p.add_argument("--second-order", action="store_true")
    p.add_argument("--slots", type=int, default=1, help="operation slots N")
    p.add_argument("--level", type=float, default=5.0)
    p.add_argument("--task", choices=("shift", "data"), default="shift")
    p.add_argument("--shift-count", type=int, default=60)
    p.add_argument("--pretrain-epochs", type=int, default=20)
    p.add_argument("--model-lr", type=float, default=0.1)
    p.add_argument("--density-batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    _add_data_flags(p)

    p = sub.add_parser("dataset-gen", help="write a synthetic shapes dataset")
    p.add_argument("--dest", help="dataset directory (default: <run dir>/dataset)")
    _add_data_flags(p)

    p = sub.add_parser("golden-gen", help="regenerate the golden corpus from the scalar oracle")
    p.add_argument("--dest", default="tests/golden")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("replay", help="re-run a manifest into a new run directory")
    p.add_argument("manifest")
    return parser


# -------------------------------------------------------------- run plumbing


class Run:
    """A run directory; every artifact is written atomically."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.outputs = []

    @classmethod
    def create(cls, out, command, run_dir=None):
        if run_dir:
            path = Path(run_dir)
            path.mkdir(parents=True, exist_ok=False)
            return cls(path)
        stamp = datetime.datetime.now(datetime.timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
        base = Path(out) / f"{command}-{stamp}"
        for i in range(1000):
            path = base if i == 0 else base.with_name(f"{base.name}-{i}")
            try:
                path.mkdir(parents=True, exist_ok=False)
                return cls(path)
            except FileExistsError:
                continue
        raise FileExistsError(f"could not create a run directory under {out}")

    def write_text(self, name, text):
        atomic_write_bytes(self.dir / name, text.encode())
        self.outputs.append(name)

    def write_json(self, name, obj):
        self.write_text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _resolved_args(args):
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in _LOCATION_ARGS:
            continue
        if key in _PATH_ARGS and value is not None:
            value = str(Path(value).resolve())
        out[key] = value
    return out


def write_manifest(run, command, args, extra=None):
    doc = {
        "format": MANIFEST_FORMAT,
        "tool": "randaug",
        "version": __version__,
        "command": command,
        "args": _resolved_args(args),
        "outputs": sorted(run.outputs),
    }
    doc.update(extra or {})
    atomic_write_bytes(run.dir / MANIFEST_NAME, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())


def load_splits(args):
    if args.data:
        splits = load_dataset_dir(args.data)
        return splits["train"], splits["val"]
    if args.cifar:
        return read_cifar10_bin(args.cifar, "train"), read_cifar10_bin(args.cifar, "val")
    return synthetic_splits(
        args.train_size,
        args.val_size,
        image_size=args.image_size,
        classes=args.classes,
        noise_std=args.noise,
        seed=args.data_seed,
        shape_size=args.shape_size,
    )


def _evaluator(args):
    train, val = load_splits(args)
    return ClassifierEvaluator(train, val, epochs=args.epochs, lr=args.lr, batch_size=args.batch_size)


def _executor(args):
    return "process" if args.jobs > 1 else "thread"


# ----------------------------------------------------------------- commands


def cmd_apply(args, run):
    cfg = build_config(args)
    img = load_image(args.input)
    out, realization = augment_with_realization(img, cfg, args.step, args.total_steps, args.image_index)
    save_image(out, args.output)
    run.write_json("realization.json", realization.to_json())
    print(f"wrote {args.output}: " + ", ".join(f"{k.value}@{lv:g}" for k, lv in realization.ops))
    return {"config": config_to_dict(cfg)}


def cmd_sample(args, run):
    cfg = build_config(args)
    rng = image_stream(cfg.seed, args.step, args.image_index)
    realization = sample_policy(cfg, args.step, args.total_steps, rng)
    text = json.dumps(realization.to_json(), sort_keys=True)
    run.write_text("realization.json", text + "\n")
    print(text)
    return {"config": config_to_dict(cfg)}


def cmd_grid_search(args, run):
    spec = GridSpec(
        _int_list(args.grid_n, "--n"), _float_list(args.grid_m, "--m"), _int_list(args.seeds, "--seeds")
    )
    base = build_config(args)
    result = grid_search(spec, _evaluator(args), base, jobs=args.jobs, executor=_executor(args))
    run.write_text("grid.csv", result.to_csv())
    run.write_text("grid_summary.csv", result.summary_csv())
    n, m = result.best
    run.write_json("best.json", {"n": n, "m": m, "mean_accuracy": result.cells[result.best].mean})
    summary = result.summary()
    run.write_text("summary.txt", summary + "\n")
    print(summary)
    return {"config": config_to_dict(base)}


def cmd_ablate(args, run):
    rng = DeterministicRng(args.seed).split("ablation")
    samples = run_ablation(
        args.samples, (args.size_lo, args.size_hi), _evaluator(args), rng, jobs=args.jobs, executor=_executor(args)
    )
    report = per_transform_delta(samples)
    run.write_text("ablation.csv", report.to_csv())
    run.write_text("ablation_curve.csv", report.curve_csv())
    lines = ["subset,accuracy"]
    for s in samples:
        names = "+".join(k.value for k in ALL_KINDS if k in s.subset)
        lines.append(f"{names},{s.accuracy:.6f}")
    run.write_text("samples.csv", "\n".join(lines) + "\n")
    run.write_text("summary.txt", report.summary() + "\n")
    print(report.summary())
    return {}


def cmd_mag_sweep(args, run):
    try:
        kind = TransformKind.parse(args.kind)
    except (ValueError, KeyError):
        raise UsageError(f"--kind: unknown transform {args.kind!r}") from None
    base = build_config(args).replace(n=args.n)
    table = magnitude_sweep(
        kind,
        _float_list(args.levels, "--levels"),
        args.base_level,
        _evaluator(args),
        base,
        seed=args.seed,
        jobs=args.jobs,
        executor=_executor(args),
    )
    run.write_text("sweep.csv", table.to_csv())
    run.write_text("summary.txt", table.summary() + "\n")
    print(table.summary())
    return {"config": config_to_dict(base)}


def cmd_density_train(args, run):
    if args.task == "shift":
        train, val, offset = gen_shift_task(
            args.shift_count, image_size=args.image_size, level=args.level, seed=args.data_seed
        )
    else:
        train, val = load_splits(args)
        offset = None
    cfg = BilevelConfig(args.xi, args.epsilon, args.alpha_lr)
    model = pretrain_model(train, epochs=args.pretrain_epochs, lr=args.model_lr, seed=args.seed)
    alpha, trace = train_density(
        uniform_alpha(len(ALL_KINDS), args.slots),
        train,
        val,
        args.steps,
        cfg,
        args.second_order,
        level=args.level,
        model=model,
        model_lr=args.model_lr,
        batch_size=args.density_batch,
        seed=args.seed,
    )
    probs = alpha_probabilities(alpha)
    run.write_text("trace.csv", trace.to_csv())
    run.write_json(
        "alpha.json",
        {
            "kinds": [k.value for k in ALL_KINDS],
            "logits": alpha.tolist(),
            "probabilities": probs.tolist(),
            "metadata": trace.metadata,
        },
    )
    lines = [f"density matching: {args.steps} steps, second order {'on' if args.second_order else 'off'}"]
    if offset is not None:
        lines.append(f"  shift task: validation offset {offset} px (undone by translate-x)")
    for j in range(probs.shape[1]):
        top = np.argsort(-probs[:, j], kind="stable")[:3]
        ranked = ", ".join(f"{ALL_KINDS[i].value}={probs[i, j]:.4f}" for i in top)
        lines.append(f"  slot {j + 1}: {ranked}")
    summary = "\n".join(lines)
    run.write_text("summary.txt", summary + "\n")
    print(summary)
    return {}


def cmd_dataset_gen(args, run):
    train, val = load_splits(args)
    dest = Path(args.dest) if args.dest else run.dir / "dataset"
    meta = {k: v for k, v in _resolved_args(args).items() if k not in ("dest", "data", "cifar")}
    save_dataset_dir(dest, {"train": train, "val": val}, meta)
    print(f"wrote {len(train)} train / {len(val)} val images to {dest}")
    return {"dataset": str(dest.resolve())}


def cmd_golden_gen(args, run):
    written = write_golden_corpus(args.dest, force=args.force)
    print(f"wrote {len(written)} golden files to {args.dest}")
    return {}


COMMANDS = {
    "apply": cmd_apply,
    "sample": cmd_sample,
    "grid-search": cmd_grid_search,
    "ablate": cmd_ablate,
    "mag-sweep": cmd_mag_sweep,
    "density-train": cmd_density_train,
    "dataset-gen": cmd_dataset_gen,
    "golden-gen": cmd_golden_gen,
}


def _check_ranges(args):
    for flag in ("jobs", "epochs", "steps", "samples", "train_size", "val_size", "batch_size"):
        value = getattr(args, flag, None)
        if value is not None and value < 1:
            raise UsageError(f"--{flag.replace('_', '-')}: must be >= 1, got {value}")
    if getattr(args, "data", None) and getattr(args, "cifar", None):
        raise UsageError("--data and --cifar are mutually exclusive")


def execute(command, args, out, run_dir=None):
    _check_ranges(args)
    run = Run.create(out, command, run_dir)
    extra = COMMANDS[command](args, run)
    write_manifest(run, command, args, extra)
    print(f"run directory: {run.dir}")
    return run


def replay(manifest_path, out, run_dir=None):
    """Re-execute the run described by ``manifest_path``."""
    doc = json.loads(Path(manifest_path).read_text())
    if doc.get("format") != MANIFEST_FORMAT:
        raise RandAugError(f"{manifest_path}: not a randaug manifest")
    command = doc["command"]
    if command not in COMMANDS:
        raise RandAugError(f"{manifest_path}: unknown command {command!r}")
    args = argparse.Namespace(command=command, **doc["args"])
    return execute(command, args, out, run_dir)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "replay":
            replay(args.manifest, args.out, args.run_dir)
        else:
            execute(args.command, args, args.out, args.run_dir)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (RandAugError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
