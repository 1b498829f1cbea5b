"""
子命令公用部分：批处理参数、体数据读取（编码合并 + 方向标准化 + 可选重采样）、报告收尾
"""

import logging

import numpy as np

from cohort import default_jobs, exit_status
from errors import MaskError, PreconditionError
from nifti_io import read_labels, read_volume
from options_loader import get_label_merge_table
from volume_core import canonicalize, canonicalize_labels, resample_isotropic, resample_labels

logger = logging.getLogger(__name__)


def add_batch_arguments(parser):
    """清单类子命令共用：--out / --jobs / --strict"""
    parser.add_argument("--out", required=True, help="报告输出前缀，生成 <out>.csv 与 <out>.json")
    parser.add_argument("--jobs", type=int, default=None, help="并行受试者数，默认取环境变量 CRANIO_JOBS 或 1")
    parser.add_argument("--strict", action="store_true", help="degraded 受试者也视为失败（退出码 3）")


def add_volume_arguments(parser):
    """读取体数据相关：原始多标签合并、各向同性重采样"""
    parser.add_argument(
        "--merge-labels", action="store_true",
        help="按 cranio_options.yaml 的 label_merge 表合并原始多标签（如左右颞肌 -> 肌肉）",
    )
    parser.add_argument("--resample-mm", type=float, default=None, help="读入后重采样到该各向同性体素尺寸（mm）")


def jobs_of(args):
    jobs = args.jobs if args.jobs is not None else default_jobs()
    if jobs < 1:
        raise PreconditionError(f"--jobs 必须 >= 1，实际 {jobs}")
    return jobs


def load_labels(path, args):
    remap = get_label_merge_table() if getattr(args, "merge_labels", False) else None
    labels = canonicalize_labels(read_labels(path, remap=remap))
    if getattr(args, "resample_mm", None):
        labels = resample_labels(labels, args.resample_mm)
    return labels


def load_intensity(path, args):
    grid = canonicalize(read_volume(path))
    if getattr(args, "resample_mm", None):
        grid = resample_isotropic(grid, args.resample_mm, "trilinear")
    return grid


def load_mask(path, args):
    """二值掩码：非 0/1 取值报错"""
    grid = canonicalize(read_volume(path))
    if getattr(args, "resample_mm", None):
        grid = resample_isotropic(grid, args.resample_mm, "nearest")
    data = np.asarray(grid.data)
    if not np.all(np.isin(data, (0, 1))):
        raise MaskError(f"{path} 不是 0/1 掩码")
    return grid.with_data(data.astype(np.uint8))


def finish(outcomes, args):
    """日志汇总并给出退出码"""
    counts = {}
    for o in outcomes:
        counts[o.status] = counts.get(o.status, 0) + 1
    logger.info("受试者处理完成: %s", counts or "无受试者")
    return exit_status(outcomes, strict=getattr(args, "strict", False))


def input_options(args):
    """参数快照中的读取选项"""
    return {
        "merge_labels": bool(getattr(args, "merge_labels", False)),
        "resample_mm": getattr(args, "resample_mm", None),
    }
