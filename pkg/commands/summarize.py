# 分组描述统计：n / 中位数 / IQR，可按阈值把连续变量切成两组（如胆固醇 170 mg/dl）

import logging

import pandas as pd

from cohort import read_table, round_frame, write_report
from errors import EXIT_OK, ManifestError
from options_loader import build_snapshot
from stats_tools import group_summary

logger = logging.getLogger(__name__)

NAME = "summarize"
HELP = "按分组列输出各变量的 n / 中位数 / Q1 / Q3"


def add_arguments(parser):
    parser.add_argument("table", help="数据表（逗号或制表符分隔，带表头）")
    parser.add_argument("--by", required=True, help="分组列，逗号分隔")
    parser.add_argument("--columns", required=True, help="汇总的数值列，逗号分隔")
    parser.add_argument(
        "--cut", action="append", default=[], metavar="COL=VALUE",
        help="按阈值生成分组列 COL_group（<VALUE / >=VALUE），可多次指定",
    )
    parser.add_argument("--out", required=True, help="报告输出前缀")


def _split(value):
    return [c.strip() for c in value.split(",") if c.strip()]


def apply_cut(df, cut):
    """COL=VALUE -> 新增列 COL_group，缺失值保持为空"""
    col, sep, value = cut.partition("=")
    col = col.strip()
    if not sep or col not in df.columns:
        raise ManifestError(f"--cut 格式应为 COL=VALUE 且列存在: {cut!r}")
    try:
        threshold = float(value)
    except ValueError:
        raise ManifestError(f"--cut 阈值不是数值: {cut!r}")
    numeric = pd.to_numeric(df[col], errors="coerce")
    name = f"{col}_group"
    df[name] = numeric.map(lambda v: "" if pd.isna(v) else (f">={threshold:g}" if v >= threshold else f"<{threshold:g}"))
    return name


def run(args):
    df = read_table(args.table)
    by = _split(args.by)
    for cut in args.cut:
        by.append(apply_cut(df, cut))
    columns = _split(args.columns)
    table = group_summary(df, by, columns)
    table = round_frame(table, {"median": 2, "q1": 2, "q3": 2}, integers=("n",))
    options = build_snapshot({"summarize": {"by": by, "columns": columns, "cut": list(args.cut)}})
    write_report(args.out, NAME, table, options, [args.table], columns=list(table.columns))
    return EXIT_OK
