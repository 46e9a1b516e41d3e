"""Command-line entry point: ``tspkit <subcommand> ...``.

Exit codes: 0 success, 1 check failure, 2 input error, 3 numeric failure.
Option precedence: command-line flag > ``--config`` file > environment > default.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from . import metrics, stats
from .data import (
    SPLITS,
    AnnotationError,
    ClassRegistry,
    GenerationError,
    RegistryError,
    default_registry,
    generate_synthetic,
    load_instance_map,
    load_label_map,
    load_split,
    save_dataset,
    toy_registry,
    validate_pair,
)
from .drd import (
    ConfigError,
    DrdConfig,
    TrainingDiverged,
    export_attention_maps,
    images_to_batch,
    preset,
    toy_training_set,
    train_toy,
)
from .drd.checks import GRAD_CHECK_CONFIG, check_end_to_end, run_all
from .tensor import Tensor, serialize

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("tspkit")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
THREADS_ENV = "TSPKIT_THREADS"

DRD_KEYS = {f.name for f in dataclasses.fields(DrdConfig)}


class InputError(Exception):
    """Bad user input; reported and mapped to exit code 2."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def load_config_file(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve_options(args: argparse.Namespace, defaults: dict[str, Any], extra_keys: Iterable[str] = ()) -> dict:
    """Merge flag > config file > TSPKIT_THREADS > defaults; reject unknown file keys."""
    file_opts = load_config_file(getattr(args, "config", None))
    allowed = set(defaults) | set(extra_keys)
    unknown = sorted(set(file_opts) - allowed)
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(unknown)}")
    merged = dict(defaults)
    if "threads" in merged and os.environ.get(THREADS_ENV):
        try:
            merged["threads"] = int(os.environ[THREADS_ENV])
        except ValueError:
            raise InputError(f"{THREADS_ENV} must be an integer") from None
    merged.update(file_opts)
    for key in allowed:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def default_threads() -> int:
    return os.cpu_count() or 1


def load_registry(path: str | None) -> ClassRegistry:
    if not path:
        return default_registry()
    try:
        return ClassRegistry.load(path)
    except (OSError, RegistryError) as exc:
        raise InputError(f"registry {path}: {exc}") from None


def ordered_map(fn: Callable, items: Sequence, threads: int) -> list:
    """Parallel map with results in input order (reductions stay deterministic)."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def write_json(path: str | os.PathLike, data: Any) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# eval-semantic
# ---------------------------------------------------------------------------

def _label_dir(d: Path) -> Path:
    return d / "labels" if (d / "labels").is_dir() else d


def cmd_eval_semantic(args: argparse.Namespace) -> int:
    opts = resolve_options(args, {"gt_dir": None, "pred_dir": None, "gt_inst_dir": None, "registry": None,
                                  "out": None, "threads": default_threads()})
    if not opts["gt_dir"] or not opts["pred_dir"]:
        raise InputError("--gt-dir and --pred-dir are required")
    registry = load_registry(opts["registry"])
    gt_dir, pred_dir = Path(opts["gt_dir"]), Path(opts["pred_dir"])
    gt_labels, pred_labels = _label_dir(gt_dir), _label_dir(pred_dir)
    inst_dir = Path(opts["gt_inst_dir"]) if opts["gt_inst_dir"] else (
        gt_dir / "instances" if (gt_dir / "instances").is_dir() else None)

    gt_ids = {p.stem for p in gt_labels.glob("*.png")} if gt_labels.is_dir() else set()
    pred_ids = {p.stem for p in pred_labels.glob("*.png")} if pred_labels.is_dir() else set()
    if not gt_ids and not pred_ids:
        print(f"error: no label files found in {gt_labels} / {pred_labels}", file=sys.stderr)
        return EXIT_INPUT
    problems = [f"missing prediction: {pred_labels / (i + '.png')}" for i in sorted(gt_ids - pred_ids)]
    problems += [f"missing ground truth: {gt_labels / (i + '.png')}" for i in sorted(pred_ids - gt_ids)]
    if inst_dir is not None:
        problems += [f"missing instance map: {inst_dir / (i + '.png')}"
                     for i in sorted(gt_ids) if not (inst_dir / f"{i}.png").exists()]
    if problems:
        for p in problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_INPUT

    ids = sorted(gt_ids)
    K = registry.num_classes

    def load(image_id):
        gt = load_label_map(gt_labels / f"{image_id}.png", K)
        pred = load_label_map(pred_labels / f"{image_id}.png", K)
        if (pred.pixels == 255).any():
            raise AnnotationError(f"{pred_labels / (image_id + '.png')}: prediction contains ignore label 255")
        if gt.pixels.shape != pred.pixels.shape:
            raise AnnotationError(f"{image_id}: prediction extents {pred.pixels.shape} != gt {gt.pixels.shape}")
        inst = load_instance_map(inst_dir / f"{image_id}.png") if inst_dir is not None else None
        return gt, pred, inst

    try:
        loaded = ordered_map(load, ids, opts["threads"])
    except (AnnotationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    avg_sizes = metrics.average_instance_sizes([inst for _, _, inst in loaded if inst is not None], registry)

    def evaluate(triple):
        gt, pred, inst = triple
        if inst is None:
            cm = metrics.accumulate(metrics.ConfusionMatrix(K), gt, pred)
            return metrics.EvaluationResult(registry, cm, metrics.WeightedTallies.for_registry(registry))
        return metrics.evaluate_pair(registry, gt, inst, pred, avg_sizes)

    try:
        result = metrics.merge_results(ordered_map(evaluate, loaded, opts["threads"]), registry)
        report = result.report()
    except metrics.MetricError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if inst_dir is None:
        report["iiou"] = None
        report["per_class_iiou"] = {}
    report["num_images"] = len(ids)
    print(metrics.format_table(report))
    if opts["out"]:
        write_json(opts["out"], report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------

def cmd_stats(args: argparse.Namespace) -> int:
    opts = resolve_options(args, {"data_root": None, "split": "train", "registry": None, "out": None,
                                  "threads": default_threads()})
    if not opts["data_root"]:
        raise InputError("--data-root is required")
    registry = load_registry(opts["registry"])
    splits = [s.strip() for s in str(opts["split"]).split(",") if s.strip()]
    bad = [s for s in splits if s not in SPLITS]
    if bad or not splits:
        raise InputError(f"unknown split(s) {bad}; choose from {SPLITS}")

    results = [load_split(opts["data_root"], s, registry) for s in splits]
    errors = [e for r in results for e in r.errors]
    items = [it for r in results for it in r.items]
    for it in items:
        try:
            rep = validate_pair(it.label, it.instances, registry)
        except AnnotationError as exc:
            errors.append(f"{it.image_id}: {exc}")
            continue
        errors += [f"{it.image_id}: {e}" for e in rep.entries[:5]]
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    if not items:
        print(f"error: split {'+'.join(splits)} under {opts['data_root']} is empty", file=sys.stderr)
        return EXIT_INPUT

    tallies = ordered_map(lambda it: stats.tally_split([it], registry), items, opts["threads"])
    total = stats.DatasetTally(tuple(registry.participant_ids))
    for t in tallies:
        total = total.merge(t)
    report = stats.report_from_tally(total, registry)
    print(stats.format_report_table(report, name="+".join(splits)))
    if opts["out"]:
        write_json(opts["out"], report.to_dict())
    return EXIT_OK


# ---------------------------------------------------------------------------
# crowd-rate
# ---------------------------------------------------------------------------

def cmd_crowd_rate(args: argparse.Namespace) -> int:
    opts = resolve_options(args, {"label_dir": None, "registry": None, "out_prefix": "crowd_rate"})
    if not opts["label_dir"]:
        raise InputError("--label-dir is required")
    registry = load_registry(opts["registry"])
    series = stats.crowd_rate_series_from_dir(_label_dir(Path(opts["label_dir"])), registry)
    for m in series.missing:
        print(f"warning: {m}", file=sys.stderr)
    if not series.rows:
        print("error: no readable label maps", file=sys.stderr)
        return EXIT_INPUT
    prefix = Path(opts["out_prefix"])
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}.csv").write_text(series.to_csv(), encoding="utf-8")
    Path(f"{prefix}.svg").write_text(series.to_svg(), encoding="utf-8")
    s = series.summary()
    print(f"images {s['count']}  min {s['min']:.6f}  mean {s['mean']:.6f}  max {s['max']:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def cmd_generate(args: argparse.Namespace) -> int:
    opts = resolve_options(args, {"out_root": None, "split": "train", "count": 10, "width": 128, "height": 128,
                                  "density": 10.0, "seed": 0, "registry": None, "toy": False})
    if not opts["out_root"]:
        raise InputError("--out-root is required")
    registry = toy_registry() if opts["toy"] else load_registry(opts["registry"])
    try:
        items = generate_synthetic(int(opts["seed"]), int(opts["count"]), int(opts["width"]), int(opts["height"]),
                                   registry, float(opts["density"]), split=opts["split"])
    except (GenerationError, AnnotationError) as exc:
        raise InputError(str(exc)) from None
    save_dataset(opts["out_root"], items)
    registry.save(Path(opts["out_root"]) / "registry.tsv")
    print(f"wrote {len(items)} images to {opts['out_root']}/{opts['split']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# drd-demo / grad-check
# ---------------------------------------------------------------------------

def _drd_config(opts: dict, base: DrdConfig) -> DrdConfig:
    changes = {k: opts[k] for k in DRD_KEYS if opts.get(k) is not None}
    try:
        return dataclasses.replace(base, **changes)
    except (ConfigError, TypeError) as exc:
        raise InputError(f"invalid decoder config: {exc}") from None


DEMO_DEFAULTS = {"preset": "setting2", "seed": 0, "steps": 500, "lr": 0.05, "out_dir": "drd_demo",
                 "images": 8, "size": 64, "density": 4.0, "num_classes": 4}


def cmd_drd_demo(args: argparse.Namespace) -> int:
    opts = resolve_options(args, {**DEMO_DEFAULTS, **{k: None for k in DRD_KEYS if k not in DEMO_DEFAULTS}})
    try:
        base = preset(opts["preset"], num_classes=int(opts["num_classes"])) if opts["preset"] == "class" \
            else preset(opts["preset"])
    except ConfigError as exc:
        raise InputError(str(exc)) from None
    if opts["preset"] == "class":
        opts["num_region_tokens"] = opts.get("num_region_tokens") or int(opts["num_classes"])
    config = _drd_config(opts, base)
    registry = toy_registry() if config.num_classes == 4 else default_registry()
    if config.num_classes != registry.num_classes:
        raise InputError(f"num_classes must be 4 (toy registry) or {default_registry().num_classes}")
    seed, steps, size = int(opts["seed"]), int(opts["steps"]), int(opts["size"])
    if size % 16:
        raise InputError("--size must be divisible by 16")
    try:
        items = toy_training_set(seed, int(opts["images"]), size, float(opts["density"]), registry)
    except GenerationError as exc:
        raise InputError(str(exc)) from None

    out_dir = Path(opts["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        result = train_toy(items, config, steps=steps, lr=float(opts["lr"]), seed=seed)
    except TrainingDiverged as exc:
        print(f"error: training diverged at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    model = result.model

    with open(out_dir / "loss.csv", "w", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        for i, v in enumerate(result.losses):
            fh.write(f"{i},{v:.17g}\n")
    serialize.save(out_dir / "weights.tspk", model.state_dict())

    x, _ = images_to_batch(items[:1])
    _, maps = model.forward_with_maps(Tensor(x))
    export_attention_maps(maps.A.data[0], size // 8, size // 8, out_dir / "attention")

    check = check_end_to_end(config, seed=seed)
    summary = {
        "config": config.to_dict(),
        "seed": seed,
        "steps": steps,
        "lr": float(opts["lr"]),
        "initial_loss": result.losses[0],
        "final_loss": result.losses[-1],
        "pixel_accuracy": result.accuracy,
        "grad_check_max_rel_error": check.max_rel_error,
    }
    write_json(out_dir / "summary.json", summary)
    print(f"steps {steps}  loss {result.losses[0]:.6f} -> {result.losses[-1]:.6f}  "
          f"pixel accuracy {result.accuracy:.4f}  grad-check {check.max_rel_error:.2e}")
    return EXIT_OK


def cmd_grad_check(args: argparse.Namespace) -> int:
    opts = resolve_options(args, {"seed": 0, "tolerance": 1e-4, "corrupt_grad": 0.0,
                                  **{k: None for k in DRD_KEYS}})
    config = _drd_config(opts, GRAD_CHECK_CONFIG)
    reports = run_all(config, seed=int(opts["seed"]), tolerance=float(opts["tolerance"]),
                      corrupt=float(opts["corrupt_grad"]))
    ok = True
    for name, rep in reports.items():
        status = "pass" if rep.passed else "FAIL"
        ok &= rep.passed
        print(f"{name:<14} max relative error {rep.max_rel_error:.3e}  ({rep.checked} coords)  {status}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_drd_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tokens", dest="num_region_tokens", type=int)
    p.add_argument("--heads", dest="num_heads", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--num-classes", dest="num_classes", type=int)
    p.add_argument("--token-mode", dest="token_mode", choices=("region", "class"))
    p.add_argument("--literal-sqrt-c", dest="literal_sqrt_c", action="store_const", const=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tspkit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval-semantic", help="mIoU / iIoU of predicted label maps")
    p.add_argument("--gt-dir")
    p.add_argument("--pred-dir")
    p.add_argument("--gt-inst-dir")
    p.add_argument("--registry")
    p.add_argument("--out")
    p.add_argument("--threads", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval_semantic)

    p = sub.add_parser("stats", help="traffic-participant statistics of a dataset split")
    p.add_argument("--data-root")
    p.add_argument("--split", help="split name or comma-separated list, e.g. train,val")
    p.add_argument("--registry")
    p.add_argument("--out")
    p.add_argument("--threads", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("crowd-rate", help="per-image crowd rate as CSV + SVG")
    p.add_argument("--label-dir")
    p.add_argument("--registry")
    p.add_argument("--out-prefix")
    p.add_argument("--config")
    p.set_defaults(func=cmd_crowd_rate)

    p = sub.add_parser("generate", help="write a synthetic dataset split")
    p.add_argument("--out-root")
    p.add_argument("--split", choices=SPLITS)
    p.add_argument("--count", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--density", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--registry")
    p.add_argument("--toy", action="store_const", const=True, help="use the 4-class toy registry")
    p.add_argument("--config")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("drd-demo", help="train the decoder on a synthetic set")
    p.add_argument("--config")
    p.add_argument("--preset", help="setting1..setting4 or class")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out-dir")
    p.add_argument("--images", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--density", type=float)
    _add_drd_flags(p)
    p.set_defaults(func=cmd_drd_demo)

    p = sub.add_parser("grad-check", help="finite-difference check of the decoder gradients")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--corrupt-grad", dest="corrupt_grad", type=float, help=argparse.SUPPRESS)
    _add_drd_flags(p)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FloatingPointError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
