# 颅骨厚度：标签体颅骨类别 vs CT 骨阈值，逐受试者配对并给出绝对差与 Bland-Altman

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
    load_intensity,
    load_labels,
)
from errors import PreconditionError, SampleSizeError
from eval_metrics import bland_altman
from morphometry import hu_bone_mask, hu_window_sweep, summarize_thickness, thickness_pipeline
from options_loader import build_snapshot, get_hu_options, get_thickness_options
from volume_core import SKULL, class_mask

logger = logging.getLogger(__name__)

NAME = "thickness"
HELP = "16 层颅骨厚度（中间 95% 截尾中位数），可与 CT 骨阈值结果配对比较"

BASE_COLUMNS = [
    "id", "status", "reason", "reference_slice", "start_slice",
    "mri_median_mm", "mri_slices", "ct_median_mm", "ct_slices", "abs_diff_mm",
]


def add_arguments(parser):
    parser.add_argument("manifest", help="清单：id,labels,ct,brain_mask,reference_slice（reference_slice 为眶顶层）")
    parser.add_argument("--threshold-hu", type=float, default=None, help="CT 骨阈值（HU），默认 471")
    parser.add_argument("--hu-sweep", action="store_true", help="额外输出各 HU 阈值下的 CT 厚度")
    parser.add_argument("--n-points", type=int, default=None, help="每层外轮廓采样点数，默认 100")
    parser.add_argument("--offset-mm", type=float, default=None, help="测量起始层相对参考层的上移距离，默认 10")
    parser.add_argument("--slab-mm", type=float, default=None, help="测量层块厚度，默认 16")
    parser.add_argument("--pooling", choices=("pooled", "per-slice"), default=None, help="先合并再截尾 / 逐层截尾")
    parser.add_argument("--thickness-method", choices=("normal", "nearest"), default=None, help="内法线步进 / 最近内轮廓距离")
    add_batch_arguments(parser)
    add_volume_arguments(parser)


def _settings(args):
    opts = get_thickness_options()
    hu = get_hu_options()
    overrides = {
        "n_points": args.n_points,
        "offset_mm": args.offset_mm,
        "slab_mm": args.slab_mm,
        "pooling": args.pooling,
        "method": args.thickness_method,
    }
    opts.update({k: v for k, v in overrides.items() if v is not None})
    threshold = args.threshold_hu if args.threshold_hu is not None else hu["threshold"]
    return opts, float(threshold), [float(t) for t in hu["sweep"]]


def _pipeline_kwargs(opts):
    return {
        "n_points": int(opts["n_points"]),
        "offset_mm": float(opts["offset_mm"]),
        "slab_mm": float(opts["slab_mm"]),
        "trim_percentiles": tuple(float(p) for p in opts["trim_percentiles"]),
        "pooling": opts["pooling"],
        "method": opts["method"],
        "step_voxels": float(opts["step_voxels"]),
        "cap_mm": float(opts["cap_mm"]),
    }


def _sweep_column(threshold):
    return f"ct_{threshold:g}hu_mm"


def _subject(args, opts, threshold, sweep):
    kwargs = _pipeline_kwargs(opts)

    def process(record):
        if record.reference_slice is None:
            raise PreconditionError(f"受试者 {record.id} 缺少 reference_slice")
        labels = load_labels(record.labels, args)
        mri = thickness_pipeline(class_mask(labels, SKULL), record.reference_slice, **kwargs)
        row = {
            "reference_slice": record.reference_slice,
            "start_slice": mri.start_slice,
            "mri_median_mm": mri.median_mm,
            "mri_slices": len(mri.slice_indices),
        }
        degraded = []
        if mri.degraded:
            degraded.append(f"mri 可用层 {len(mri.slice_indices)}: {mri.skipped}")
        detail = {"mri": {"raw_samples": len(mri.raw_pool), "trimmed_samples": len(mri.trimmed_pool)}}
        if record.ct:
            ct = load_intensity(record.ct, args)
            est = thickness_pipeline(hu_bone_mask(ct, threshold), record.reference_slice, **kwargs)
            row.update(ct_median_mm=est.median_mm, ct_slices=len(est.slice_indices),
                       abs_diff_mm=abs(mri.median_mm - est.median_mm))
            detail["ct"] = {"raw_samples": len(est.raw_pool), "trimmed_samples": len(est.trimmed_pool)}
            if est.degraded:
                degraded.append(f"ct 可用层 {len(est.slice_indices)}: {est.skipped}")
            if args.hu_sweep:
                excluded = {}
                for res in hu_window_sweep(ct, record.reference_slice, sweep, **kwargs):
                    row[_sweep_column(res.threshold_hu)] = res.estimate.median_mm if res.estimate else None
                    if res.excluded:
                        excluded[f"{res.threshold_hu:g}"] = res.excluded
                detail["hu_sweep_excluded"] = excluded
        return SubjectResult([row], detail, "; ".join(degraded))
    return process


def cohort_summary(outcomes):
    """MRI / CT 厚度均值（SD）、平均绝对差、Bland-Altman"""
    mri, ct, pairs = [], [], []
    for o in outcomes:
        if not o.ok:
            continue
        row = o.result.rows[0]
        mri.append(row["mri_median_mm"])
        if row.get("ct_median_mm") is not None:
            ct.append(row["ct_median_mm"])
            pairs.append((row["mri_median_mm"], row["ct_median_mm"]))
    summary = {}
    for name, values in (("mri", mri), ("ct", ct)):
        mean, sd = summarize_thickness(values)
        summary[name] = {"n": len(values), "mean_mm": mean, "sd_mm": sd}
    if pairs:
        diffs = [abs(a - b) for a, b in pairs]
        mean, sd = summarize_thickness(diffs)
        summary["abs_diff"] = {"n": len(diffs), "mean_mm": mean, "sd_mm": sd}
        try:
            ba = bland_altman([a for a, _ in pairs], [b for _, b in pairs])
            summary["bland_altman"] = {
                "n": ba.n, "bias_mm": ba.mean_diff, "sd_mm": ba.sd_diff,
                "loa_low_mm": ba.lower, "loa_high_mm": ba.upper,
            }
        except SampleSizeError as e:
            summary["bland_altman"] = {"n": len(pairs), "note": "insufficient-n", "message": str(e)}
    return summary


def run(args):
    opts, threshold, sweep = _settings(args)
    manifest = load_manifest(args.manifest)
    if not manifest.subjects:
        logger.warning("清单为空，只输出表头")
    outcomes = run_subjects(manifest.subjects, _subject(args, opts, threshold, sweep), jobs_of(args))
    columns = BASE_COLUMNS + ([_sweep_column(t) for t in sweep] if args.hu_sweep else [])
    table = pd.DataFrame(outcome_rows(outcomes), columns=columns)
    mm_columns = [c for c in columns if c.endswith("_mm")]
    table = round_frame(
        table, {c: DECIMALS_MM for c in mm_columns},
        integers=("reference_slice", "start_slice", "mri_slices", "ct_slices"),
    )
    summary = cohort_summary(outcomes)
    summary["subjects"] = {o.record.id: o.result.detail for o in outcomes if o.ok}
    options = build_snapshot({
        "thickness": opts,
        "hu": {"threshold": threshold, "sweep": sweep if args.hu_sweep else None},
        "input": input_options(args),
    })
    inputs = [args.manifest] + [p for s in manifest.subjects for p in s.input_paths()]
    write_report(args.out, NAME, table, options, inputs, manifest.subjects, summary, columns)
    return finish(outcomes, args)
