# 分割比较：配对清单逐类别 Dice / HD95，队列中位数 [IQR]

import logging

import pandas as pd

from cohort import (
    DECIMALS_DICE,
    DECIMALS_MM,
    SubjectResult,
    load_manifest,
    outcome_rows,
    round_frame,
    run_subjects,
    write_report,
)
from commands.common import add_batch_arguments, add_volume_arguments, finish, input_options, jobs_of, load_labels
from eval_metrics import compare, median_iqr
from options_loader import build_snapshot

logger = logging.getLogger(__name__)

NAME = "compare"
HELP = "两组标签体逐类别 Dice / HD95（颅骨、皮下脂肪、肌肉）"

COLUMNS = ["id", "status", "reason", "class", "dice", "hd95_mm", "flag"]
OVERALL = "overall"


def add_arguments(parser):
    parser.add_argument("pairs", help="配对清单：id,labels_a,labels_b")
    add_batch_arguments(parser)
    add_volume_arguments(parser)


def _subject(args):
    def process(record):
        report = compare(load_labels(record.labels, args), load_labels(record.labels_b, args))
        rows = []
        for c in report.classes:
            flag = "both-empty" if c.both_empty else ("one-empty" if c.one_empty else "")
            rows.append({"class": c.name, "dice": c.dice, "hd95_mm": c.hd95_mm, "flag": flag})
        rows.append({"class": OVERALL, "dice": report.overall_dice, "hd95_mm": report.overall_hd95_mm, "flag": ""})
        return SubjectResult(rows, {"flags": report.flags})
    return process


def cohort_summary(outcomes):
    """每个类别（含 overall）的 Dice / HD95 中位数 [Q1, Q3]，无定义值不计入"""
    values = {}
    for o in outcomes:
        if not o.ok:
            continue
        for row in o.result.rows:
            entry = values.setdefault(row["class"], {"dice": [], "hd95_mm": []})
            for key in ("dice", "hd95_mm"):
                if row[key] is not None:
                    entry[key].append(row[key])
    summary = {}
    for name, entry in values.items():
        summary[name] = {}
        for key, vals in entry.items():
            if vals:
                med, q1, q3 = median_iqr(vals)
                summary[name][key] = {"n": len(vals), "median": med, "q1": q1, "q3": q3}
            else:
                summary[name][key] = {"n": 0, "median": None, "q1": None, "q3": None}
    return summary


def run(args):
    manifest = load_manifest(args.pairs, kind="pairs")
    if not manifest.subjects:
        logger.warning("清单为空，只输出表头")
    outcomes = run_subjects(manifest.subjects, _subject(args), jobs_of(args))
    table = pd.DataFrame(outcome_rows(outcomes), columns=COLUMNS)
    table = round_frame(table, {"dice": DECIMALS_DICE, "hd95_mm": DECIMALS_MM})
    options = build_snapshot({"input": input_options(args)})
    inputs = [args.pairs] + [p for s in manifest.subjects for p in s.input_paths()]
    write_report(args.out, NAME, table, options, inputs, manifest.subjects, cohort_summary(outcomes), COLUMNS)
    return finish(outcomes, args)
