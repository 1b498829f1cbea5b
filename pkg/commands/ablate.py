# 俯仰消融：±pitch 旋转后重新裁剪并计算体积，与 0° 比较；队列层面做 Mann-Whitney + FDR

import logging

import pandas as pd

from cohort import (
    DECIMALS_MM,
    DECIMALS_PERCENT,
    SubjectResult,
    load_manifest,
    outcome_rows,
    round_frame,
    run_subjects,
    write_report,
)
from commands.common import add_batch_arguments, add_volume_arguments, finish, input_options, jobs_of, load_labels
from morphometry import tilt_ablation
from options_loader import build_snapshot, get_ablation_options, get_mann_whitney_exact_below
from roi_crop import brain_boundary
from stats_tools import fdr_adjust, mann_whitney_u

logger = logging.getLogger(__name__)

NAME = "ablate"
HELP = "±pitch 俯仰消融：各类别体积绝对变化与百分比变化，含队列检验"

COLUMNS = [
    "id", "status", "reason", "group", "pitch_deg", "class",
    "baseline_mm3", "tilted_mm3", "abs_delta_mm3", "percent",
]
MIN_PER_ARM = 2


def add_arguments(parser):
    parser.add_argument("manifest", help="清单：id,labels,...[,group]")
    parser.add_argument("--pitch", type=float, default=None, help="俯仰角（度），同时计算 +pitch 与 −pitch，默认 5")
    parser.add_argument("--allow-empty-brain", action="store_true", help="无脑组织时按全零边界裁剪")
    parser.add_argument(
        "--mw-method", choices=("auto", "exact", "asymptotic"), default="auto",
        help="Mann-Whitney p 值：auto 按样本量切换精确分布 / 正态近似",
    )
    add_batch_arguments(parser)
    add_volume_arguments(parser)


def _pitches(pitch):
    return (0.0,) if pitch == 0 else (abs(pitch), -abs(pitch))


def _subject(args, pitches, max_abs_pitch):
    def boundary_fn(labels):
        return brain_boundary(labels, allow_empty_brain=args.allow_empty_brain)

    def process(record):
        report = tilt_ablation(load_labels(record.labels, args), boundary_fn, pitches, max_abs_pitch)
        rows = [
            {
                "group": record.group,
                "pitch_deg": r.pitch_deg,
                "class": r.name,
                "baseline_mm3": r.baseline_mm3,
                "tilted_mm3": r.tilted_mm3,
                "abs_delta_mm3": r.abs_delta_mm3,
                "percent": r.percent,
            }
            for r in report.rows
        ]
        return SubjectResult(rows)
    return process


def _test(x, y, method, exact_below):
    if len(x) < MIN_PER_ARM or len(y) < MIN_PER_ARM:
        return {"n_x": len(x), "n_y": len(y), "u": None, "p": None, "note": "insufficient-n"}
    res = mann_whitney_u(x, y, method=method, exact_below=exact_below)
    return {"n_x": len(x), "n_y": len(y), "u": res.u, "p": res.p, "method": res.method,
            "note": "degenerate" if res.degenerate else ""}


def _adjust(tests):
    """对有 p 值的检验做 BH 校正，写回 p_fdr"""
    tested = [t for t in tests if t["p"] is not None]
    for t, q in zip(tested, fdr_adjust([t["p"] for t in tested])):
        t["p_fdr"] = q
    for t in tests:
        t.setdefault("p_fdr", None)
    return tests


def cohort_tests(outcomes, method, exact_below):
    """
    tilted_vs_baseline：每个 pitch × 类别，倾斜体积分布 vs 未倾斜体积分布
    between_groups：恰有两个分组时，比较两组的百分比变化
    """
    rows = [row for o in outcomes if o.ok for row in o.result.rows]
    frame = pd.DataFrame(rows, columns=COLUMNS[3:])
    tilted, groups = [], []
    if frame.empty:
        return {"tilted_vs_baseline": [], "between_groups": [], "percent": []}
    for (pitch, name), part in frame.groupby(["pitch_deg", "class"], sort=True):
        entry = {"pitch_deg": pitch, "class": name}
        entry.update(_test(part["tilted_mm3"].tolist(), part["baseline_mm3"].tolist(), method, exact_below))
        tilted.append(entry)
    labels = sorted({g for g in frame["group"] if g})
    if len(labels) == 2:
        for (pitch, name), part in frame.groupby(["pitch_deg", "class"], sort=True):
            x = part.loc[part["group"] == labels[0], "percent"].tolist()
            y = part.loc[part["group"] == labels[1], "percent"].tolist()
            entry = {"pitch_deg": pitch, "class": name, "groups": labels}
            entry.update(_test(x, y, method, exact_below))
            groups.append(entry)
    elif labels:
        logger.info("分组数为 %d，跳过组间比较（需要恰好 2 组）", len(labels))
    percent = [
        {"pitch_deg": pitch, "class": name, "n": int(len(part)),
         "mean_percent": float(part["percent"].mean()), "max_percent": float(part["percent"].max())}
        for (pitch, name), part in frame.groupby(["pitch_deg", "class"], sort=True)
    ]
    return {"tilted_vs_baseline": _adjust(tilted), "between_groups": _adjust(groups), "percent": percent}


def run(args):
    opts = get_ablation_options()
    pitch = float(args.pitch if args.pitch is not None else opts["pitch_deg"])
    max_abs_pitch = float(opts["max_abs_pitch"])
    pitches = _pitches(pitch)
    exact_below = get_mann_whitney_exact_below()
    manifest = load_manifest(args.manifest)
    if not manifest.subjects:
        logger.warning("清单为空，只输出表头")
    outcomes = run_subjects(manifest.subjects, _subject(args, pitches, max_abs_pitch), jobs_of(args))
    table = pd.DataFrame(outcome_rows(outcomes), columns=COLUMNS)
    table = round_frame(table, {
        "baseline_mm3": DECIMALS_MM, "tilted_mm3": DECIMALS_MM,
        "abs_delta_mm3": DECIMALS_MM, "percent": DECIMALS_PERCENT,
    })
    summary = cohort_tests(outcomes, args.mw_method, exact_below)
    summary["fdr_method"] = "benjamini-hochberg"
    options = build_snapshot({
        "ablation": {"pitch_deg": pitch, "pitches": list(pitches)},
        "mann_whitney": {"method": args.mw_method},
        "input": input_options(args),
    })
    inputs = [args.manifest] + [p for s in manifest.subjects for p in s.input_paths()]
    write_report(args.out, NAME, table, options, inputs, manifest.subjects, summary, COLUMNS)
    return finish(outcomes, args)
