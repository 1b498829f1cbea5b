# 线性回归：结局可做 Box-Cox 变换，输出逐个预测变量的单变量模型与多变量模型

import logging

import numpy as np
import pandas as pd

from cohort import read_table, round_frame, write_report
from errors import EXIT_OK, DomainError, ManifestError
from options_loader import build_snapshot, get_regression_options
from stats_tools import box_cox, boxcox_mle, ols_fit

logger = logging.getLogger(__name__)

NAME = "regress"
HELP = "OLS 回归（估计值、95% CI、p 值、VIF），单变量 + 多变量"

COLUMNS = ["model", "term", "estimate", "std_error", "ci_low", "ci_high", "p_value", "vif", "n", "r_squared"]


def add_arguments(parser):
    parser.add_argument("table", help="数据表（逗号或制表符分隔，带表头）")
    parser.add_argument("--outcome", required=True, help="结局列")
    parser.add_argument("--predictors", required=True, help="预测变量列，逗号分隔；非数值列自动哑变量化")
    parser.add_argument(
        "--box-cox-lambda", default=None,
        help="结局 Box-Cox λ：数值（默认 0.2）、mle（网格极大似然）或 none（不变换）",
    )
    parser.add_argument("--out", required=True, help="报告输出前缀")


def _numeric_predictors(df, predictors):
    """过半单元格可解析为数值的预测变量按数值处理"""
    return [col for col in predictors if pd.to_numeric(df[col], errors="coerce").notna().mean() > 0.5]


def _design(df, predictors, numeric_cols):
    """数值列直接使用，其余列按类别哑变量化（去掉首个水平）；返回 (设计矩阵, 预测变量 -> 列)"""
    parts, mapping = [], {}
    for col in predictors:
        if col in numeric_cols:
            part = pd.to_numeric(df[col], errors="coerce").rename(col).to_frame()
        else:
            part = pd.get_dummies(df[col].astype(str), prefix=col, drop_first=True, dtype=float)
        parts.append(part)
        mapping[col] = list(part.columns)
    return pd.concat(parts, axis=1), mapping


def _outcome(values, setting, reg_opts):
    """返回 (变换后结局, 实际 λ 或 None)"""
    if setting is None:
        setting = str(reg_opts["box_cox_lambda"])
    setting = str(setting).strip().lower()
    if setting == "none":
        return values, None
    if setting == "mle":
        lo, hi, step = (float(v) for v in reg_opts["lambda_grid"])
        lam, _ = boxcox_mle(values, lo, hi, step)
        logger.info("Box-Cox λ 极大似然估计: %.2f", lam)
    else:
        try:
            lam = float(setting)
        except ValueError:
            raise DomainError(f"--box-cox-lambda 无法解析: {setting!r}")
    return box_cox(values, lam), lam


def _fit_rows(model, X, y):
    fit = ols_fit(X, y, add_intercept=True)
    frame = fit.to_frame()
    frame.insert(0, "model", model)
    frame["n"] = fit.n
    frame["r_squared"] = fit.r_squared
    return frame


def run(args):
    predictors = [c.strip() for c in args.predictors.split(",") if c.strip()]
    df = read_table(args.table)
    missing = [c for c in [args.outcome] + predictors if c not in df.columns]
    if missing:
        raise ManifestError(f"数据表缺少列: {missing}")
    df = df[[args.outcome] + predictors].replace("", np.nan)
    complete = df.dropna()
    if len(complete) < len(df):
        logger.warning("丢弃 %d 行含缺失值的记录", len(df) - len(complete))
    numeric_cols = _numeric_predictors(complete, predictors)
    parsed = pd.Series(True, index=complete.index)
    for col in numeric_cols:
        parsed &= pd.to_numeric(complete[col], errors="coerce").notna()
    if not parsed.all():
        logger.warning("丢弃 %d 行数值预测变量无法解析的记录", int((~parsed).sum()))
        complete = complete[parsed]
    y_raw = pd.to_numeric(complete[args.outcome], errors="coerce")
    if y_raw.isna().any():
        raise DomainError(f"结局列 {args.outcome} 含非数值")
    reg_opts = get_regression_options()
    y, lam = _outcome(y_raw.to_numpy(dtype=np.float64), args.box_cox_lambda, reg_opts)

    X, mapping = _design(complete, predictors, numeric_cols)
    frames = []
    for col in predictors:
        frames.append(_fit_rows(f"univariable:{col}", X[mapping[col]], y))
    frames.append(_fit_rows("multivariable", X, y))
    table = pd.concat(frames, ignore_index=True).reindex(columns=COLUMNS)
    table = round_frame(table, {
        "estimate": 4, "std_error": 4, "ci_low": 4, "ci_high": 4, "vif": 2, "r_squared": 4,
    }, integers=("n",))
    summary = {"n_rows": int(len(df)), "n_complete": int(len(complete)), "box_cox_lambda": lam}
    options = build_snapshot({"regression": {
        "outcome": args.outcome, "predictors": predictors,
        "box_cox_lambda": lam if lam is not None else "none",
    }})
    write_report(args.out, NAME, table, options, [args.table], summary=summary, columns=COLUMNS)
    return EXIT_OK
