# 组织体积：每个受试者每个类别一行，末尾追加队列中位数与 IQR

import logging

import pandas as pd

from cohort import (
    DECIMALS_MM,
    SubjectResult,
    load_manifest,
    outcome_rows,
    round_frame,
    run_subjects,
    write_report,
)
from commands.common import (
    add_batch_arguments,
    add_volume_arguments,
    finish,
    input_options,
    jobs_of,
    load_labels,
    load_mask,
)
from eval_metrics import median_iqr
from morphometry import volumes
from options_loader import build_snapshot
from roi_crop import brain_boundary
from volume_core import BACKGROUND

logger = logging.getLogger(__name__)

NAME = "volumes"
HELP = "队列组织体积表（mm³ / cm³），先按脑掩码裁剪 ROI"

COLUMNS = ["id", "status", "reason", "stat", "class", "code", "voxels", "volume_mm3", "volume_cm3", "crop_applied"]


def add_arguments(parser):
    parser.add_argument("manifest", help="清单：id,labels,ct,brain_mask,reference_slice")
    parser.add_argument("--no-crop", action="store_true", help="不做 ROI 裁剪，直接统计全体积")
    parser.add_argument("--allow-empty-brain", action="store_true", help="无脑组织时按全零边界裁剪")
    add_batch_arguments(parser)
    add_volume_arguments(parser)


def _subject(args):
    def process(record):
        labels = load_labels(record.labels, args)
        boundary = None
        if not args.no_crop:
            mask = load_mask(record.brain_mask, args) if record.brain_mask else None
            boundary = brain_boundary(labels, mask, args.allow_empty_brain)
        report = volumes(labels, boundary)
        rows = [
            {
                "stat": "",
                "class": c.name,
                "code": c.code,
                "voxels": c.voxels,
                "volume_mm3": c.mm3,
                "volume_cm3": c.cm3,
                "crop_applied": report.crop_applied,
            }
            for c in report.classes
            if c.code != BACKGROUND
        ]
        return SubjectResult(rows)
    return process


def cohort_summary(outcomes):
    """各类别的中位数 [Q1, Q3]，失败受试者不计入"""
    values = {}
    for o in outcomes:
        if not o.ok:
            continue
        for row in o.result.rows:
            values.setdefault(row["class"], []).append(row["volume_mm3"])
    summary, rows = {}, []
    for name, vals in values.items():
        med, q1, q3 = median_iqr(vals)
        summary[name] = {"n": len(vals), "median_mm3": med, "q1_mm3": q1, "q3_mm3": q3}
        for stat, v in (("median", med), ("q1", q1), ("q3", q3)):
            rows.append({
                "id": "cohort", "status": "summary", "reason": "", "stat": stat, "class": name,
                "volume_mm3": v, "volume_cm3": v / 1000.0,
            })
    return summary, rows


def run(args):
    manifest = load_manifest(args.manifest)
    if not manifest.subjects:
        logger.warning("清单为空，只输出表头")
    outcomes = run_subjects(manifest.subjects, _subject(args), jobs_of(args))
    summary, summary_rows = cohort_summary(outcomes)
    table = pd.DataFrame(outcome_rows(outcomes) + summary_rows, columns=COLUMNS)
    table = round_frame(table, {"volume_mm3": DECIMALS_MM, "volume_cm3": DECIMALS_MM + 3}, integers=("code", "voxels"))
    options = build_snapshot({
        "crop": {"enabled": not args.no_crop, "allow_empty_brain": args.allow_empty_brain},
        "input": input_options(args),
    })
    inputs = [args.manifest] + [p for s in manifest.subjects for p in s.input_paths()]
    write_report(args.out, NAME, table, options, inputs, manifest.subjects, summary, COLUMNS)
    return finish(outcomes, args)
