# 评分一致性：Likert 分箱后按层（健康状态 × 组织）和评分者对计算 Gwet AC1

import itertools
import logging

import pandas as pd

from cohort import read_table, round_frame, write_report
from errors import EXIT_INPUT_FORMAT, EXIT_OK, CranioError, RatingError
from options_loader import build_snapshot, get_likert_bins
from stats_tools import AgreementTable, LikertBinning, chi_squared, gwet_ac1

logger = logging.getLogger(__name__)

NAME = "agree"
HELP = "Likert 评分分箱 + Gwet AC1（95% CI），按健康状态 × 组织 × 评分者对分层"

OVERALL = "Overall"


def add_arguments(parser):
    parser.add_argument("ratings", help="评分表：每行一个条目，各评分者一列（1-5 分）")
    parser.add_argument("--raters", required=True, help="评分者列名，逗号分隔（至少 2 个），两两成对")
    parser.add_argument("--group-columns", default="health_status", help="分层列，逗号分隔；留空表示不分层")
    parser.add_argument("--class-column", default="tissue", help="组织类别列；另按该列合并给出 Overall")
    parser.add_argument("--out", required=True, help="报告输出前缀")
    parser.add_argument("--strict", action="store_true", help="存在被拒绝的评分行时退出码为 2")


def _split(value):
    return [c.strip() for c in (value or "").split(",") if c.strip()]


def bin_rows(df, raters, binning):
    """逐行分箱；空单元格视为缺失，越界或无法解析的行整行拒绝"""
    binned, rejected = [], []
    for idx, row in df.iterrows():
        try:
            values = {}
            for r in raters:
                cell = str(row[r]).strip()
                values[r] = binning.apply(cell) if cell else None
        except RatingError as e:
            logger.warning("第 %d 行评分被拒绝: %s", idx + 2, e)
            rejected.append({"row": int(idx) + 2, "message": str(e)})
            continue
        binned.append({**row.to_dict(), **values})
    return pd.DataFrame(binned, columns=list(df.columns)), rejected


def _ac1_row(keys, pair, part, categories):
    a, b = pair
    row = {**keys, "rater_pair": f"{a}-{b}", "n_items": 0, "dropped": 0,
           "ac1": None, "ci_low": None, "ci_high": None, "note": ""}
    try:
        table = AgreementTable.from_ratings(part[a].tolist(), part[b].tolist(), declared=categories)
        res = gwet_ac1(table)
    except CranioError as e:
        row["note"] = e.kind
        row["n_items"] = int(part[[a, b]].notna().all(axis=1).sum())
        return row
    row.update(n_items=res.n_items, dropped=res.dropped, ac1=res.ac1, ci_low=res.ci_low, ci_high=res.ci_high)
    return row


def agreement_rows(df, raters, group_cols, class_col, categories):
    """逐层 AC1；有组织列时每个分组追加一行 Overall（合并全部组织）"""
    pairs = list(itertools.combinations(raters, 2))
    rows = []
    strata = group_cols + ([class_col] if class_col else [])
    grouped = df.groupby(strata, sort=True) if strata else [((), df)]
    for key, part in grouped:
        key = key if isinstance(key, tuple) else (key,)
        keys = dict(zip(strata, key))
        for pair in pairs:
            rows.append(_ac1_row(keys, pair, part, categories))
    if class_col:
        overall = df.groupby(group_cols, sort=True) if group_cols else [((), df)]
        for key, part in overall:
            key = key if isinstance(key, tuple) else (key,)
            keys = {**dict(zip(group_cols, key)), class_col: OVERALL}
            for pair in pairs:
                rows.append(_ac1_row(keys, pair, part, categories))
    return rows


def acceptability_tests(df, raters, group_col, categories):
    """每位评分者：分组 × 分箱类别列联表的卡方检验"""
    results = {}
    for r in raters:
        counts = pd.crosstab(df[group_col], df[r]).reindex(columns=list(categories), fill_value=0)
        entry = {"table": counts.to_dict(orient="index")}
        # 全零列（某类别无人评）不参与检验
        counts = counts.loc[:, counts.sum(axis=0) > 0]
        try:
            stat, p, dof = chi_squared(counts.to_numpy())
            entry.update(statistic=stat, p=p, dof=dof)
        except CranioError as e:
            entry.update(statistic=None, p=None, dof=None, note=e.kind)
        results[r] = entry
    return results


def run(args):
    raters = _split(args.raters)
    if len(raters) < 2:
        raise RatingError("--raters 至少需要 2 个评分者列")
    group_cols = _split(args.group_columns)
    class_col = (args.class_column or "").strip()
    df = read_table(args.ratings, error_cls=RatingError)
    missing = [c for c in raters + group_cols + ([class_col] if class_col else []) if c not in df.columns]
    if missing:
        raise RatingError(f"评分表缺少列: {missing}（不按组织分层时用 --class-column \"\"）")

    binning = LikertBinning(get_likert_bins())
    categories = binning.categories
    binned, rejected = bin_rows(df, raters, binning)
    rows = agreement_rows(binned, raters, group_cols, class_col, categories)
    strata = group_cols + ([class_col] if class_col else [])
    columns = strata + ["rater_pair", "n_items", "dropped", "ac1", "ci_low", "ci_high", "note"]
    table = pd.DataFrame(rows, columns=columns)
    table = round_frame(table, {"ac1": 3, "ci_low": 3, "ci_high": 3}, integers=("n_items", "dropped"))

    summary = {"rejected_rows": rejected, "categories": list(categories)}
    if len(group_cols) == 1 and not binned.empty:
        summary["chi_squared"] = acceptability_tests(binned, raters, group_cols[0], categories)
    options = build_snapshot({"agree": {"raters": raters, "group_columns": group_cols, "class_column": class_col}})
    write_report(args.out, NAME, table, options, [args.ratings], summary=summary, columns=columns)
    if rejected and args.strict:
        return EXIT_INPUT_FORMAT
    return EXIT_OK
