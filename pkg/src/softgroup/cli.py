"""Command-line interface: ``softgroup <command> ...``.

Commands: synth, group, refine, eval, sweep-tau, bench. Every command exits 0
on success and prints a one-line diagnostic with a nonzero status otherwise.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .evaluation import DEFAULT_TAUS, evaluate, semantic_pr_sweep
from .grouping import (
    DEFAULT_BANDWIDTH, DEFAULT_MIN_POINTS, DEFAULT_TAU, GroupingConfig, hard_group, soft_group,
)
from .refinement import load_external_refinement, refine
from .synthesis import SynthConfig, make_scene

_GROUPERS = {"soft": soft_group, "hard": hard_group}


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _add_grouping_args(p):
    p.add_argument("--mode", choices=sorted(_GROUPERS), default="soft")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--bandwidth", type=float, default=DEFAULT_BANDWIDTH)
    p.add_argument("--min-points", type=int, default=DEFAULT_MIN_POINTS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="softgroup", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--config", type=Path, help="JSON file of synthesis settings")
    p.add_argument("--seed", type=_u64, help="overrides the seed in --config")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("group", help="group points into instance proposals")
    p.add_argument("--scene", type=Path, required=True)
    _add_grouping_args(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("refine", help="score proposals (heuristic or external records)")
    p.add_argument("--scene", type=Path, required=True)
    p.add_argument("--proposals", type=Path, required=True)
    p.add_argument("--external", type=Path, help="refinement record file to use instead of the heuristic")
    p.add_argument("--mask-threshold", type=float, default=0.5)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="evaluate instances against the scene ground truth")
    p.add_argument("--scene", type=Path, required=True)
    p.add_argument("--instances", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("sweep-tau", help="semantic recall/precision over score thresholds")
    p.add_argument("--scene", type=Path, required=True)
    p.add_argument("--taus", type=_floats, default=DEFAULT_TAUS)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("bench", help="time loading, grouping and refinement")
    p.add_argument("--scene", type=Path, required=True)
    p.add_argument("--repeat", type=_positive_int, default=3)
    _add_grouping_args(p)
    p.add_argument("--out", type=Path, help="also write the timings as a table")
    return parser


def _scene_with_gt(path):
    scene = io.read_scene(path)
    if scene.gt is None:
        raise ValueError(f"{path}: scene has no ground truth")
    return scene


def cmd_synth(args):
    settings = json.loads(args.config.read_text()) if args.config else {}
    if not isinstance(settings, dict):
        raise ValueError(f"{args.config}: expected a JSON object")
    if args.seed is not None:
        settings["seed"] = args.seed
    scene = make_scene(SynthConfig.from_dict(settings))
    io.write_scene(scene, args.out)
    n_inst = scene.gt.n_instances if scene.gt is not None else 0
    print(f"wrote {args.out}: {scene.n_points} points, {scene.n_classes} classes, {n_inst} instances")


def cmd_group(args):
    config = GroupingConfig(args.tau, args.bandwidth, args.min_points)
    scene = io.read_scene(args.scene)
    proposals = _GROUPERS[args.mode](scene, config)
    io.write_proposals(proposals, args.out)
    print(f"wrote {args.out}: {len(proposals)} proposals ({args.mode} grouping)")


def cmd_refine(args):
    scene = io.read_scene(args.scene)
    proposals = io.read_proposals(args.proposals)
    if scene.semantic is None:
        raise ValueError(f"{args.scene}: scene has no semantic scores")
    if proposals and max(int(p.point_ids[-1]) for p in proposals) >= scene.n_points:
        raise ValueError(f"{args.proposals}: proposal point ids exceed the scene size")
    if args.external:
        instances = load_external_refinement(proposals, args.external, scene.points.coords, scene.n_classes)
    else:
        instances = refine(proposals, scene, args.mask_threshold)
    io.write_instances(instances, args.out)
    n_bg = sum(inst.category == scene.n_classes for inst in instances)
    print(f"wrote {args.out}: {len(instances)} instances ({n_bg} background)")


def format_report(report) -> str:
    lines = [f"{k:>9s}  {getattr(report, k):.4f}" for k in report.SCALARS]
    if report.per_class_ap:
        lines.append("")
        lines.append(f"{'class':>9s}  {'AP':>6s}  {'AP50':>6s}  {'AP25':>6s}")
        for c, (a, a50, a25) in sorted(report.per_class_ap.items()):
            lines.append(f"{c:>9d}  {a:6.4f}  {a50:6.4f}  {a25:6.4f}")
    lines += [f"note: {n}" for n in report.notes]
    return "\n".join(lines)


def cmd_eval(args):
    scene = _scene_with_gt(args.scene)
    instances = io.read_instances(args.instances)
    report = evaluate(scene, instances)
    io.write_table(io.report_rows(report), args.out, header=("key", "value"))
    print(format_report(report))


def cmd_sweep(args):
    scene = _scene_with_gt(args.scene)
    if scene.semantic is None:
        raise ValueError(f"{args.scene}: scene has no semantic scores")
    sweep = semantic_pr_sweep(scene.semantic, scene.gt.semantic_label, args.taus)
    io.write_table(sweep.rows(), args.out, header=("tau", "class", "recall", "precision"))
    print(f"{'tau':>6s}  {'recall':>7s}  {'precision':>9s}")
    for t, tau in enumerate(sweep.taus):
        print(f"{tau:6.3f}  {sweep.mean_recall[t]:7.4f}  {sweep.mean_precision[t]:9.4f}")
    hard = [r for r in sweep.rows() if r[0] == "hard" and r[1] == "mean"]
    if hard:
        print(f"{'hard':>6s}  {hard[0][2]:7.4f}  {hard[0][3]:9.4f}")


def _timed(fn):
    start = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - start


def cmd_bench(args):
    config = GroupingConfig(args.tau, args.bandwidth, args.min_points)
    group = _GROUPERS[args.mode]
    times = {"load": [], "grouping": [], "refinement": []}
    counts = None
    for _ in range(args.repeat):
        scene, t_load = _timed(lambda: io.read_scene(args.scene))
        proposals, t_group = _timed(lambda: group(scene, config))
        instances, t_refine = _timed(lambda: refine(proposals, scene))
        times["load"].append(t_load)
        times["grouping"].append(t_group)
        times["refinement"].append(t_refine)
        counts = (scene.n_points, len(proposals), len(instances))
    rows = [
        (stage, float(np.median(ts)) * 1e3, float(np.min(ts)) * 1e3)
        for stage, ts in times.items()
    ]
    total = sum(r[1] for r in rows)
    print(f"{counts[0]} points, {counts[1]} proposals, {args.mode} grouping, {args.repeat} repeats")
    print(f"{'stage':<11s} {'median ms':>10s} {'min ms':>10s}")
    for stage, med, best in rows:
        print(f"{stage:<11s} {med:10.1f} {best:10.1f}")
    print(f"{'total':<11s} {total:10.1f}")
    if args.out:
        io.write_table(rows, args.out, header=("stage", "median_ms", "min_ms"))


_COMMANDS = {
    "synth": cmd_synth,
    "group": cmd_group,
    "refine": cmd_refine,
    "eval": cmd_eval,
    "sweep-tau": cmd_sweep,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _COMMANDS[args.command](args)
    except (ValueError, OSError, RuntimeError, json.JSONDecodeError) as exc:
        print(f"softgroup {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
