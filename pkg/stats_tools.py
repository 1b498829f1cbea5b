"""
统计工具
- Mann-Whitney U（小样本精确分布 / 大样本正态近似）与 BH-FDR 校正
- 卡方独立性检验
- Likert 五级评分分箱、Gwet AC1 及其 95% CI
- Box-Cox 变换（固定 λ 或网格极大似然）
- OLS 回归（估计值、95% CI、p 值、VIF）与分组中位数汇总
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import statsmodels.api as sm
from scipy import special, stats
from statsmodels.stats.outliers_influence import variance_inflation_factor

from errors import (
    CollinearityError,
    DegeneratePrevalenceError,
    DegenerateTableError,
    DomainError,
    RatingError,
    SampleSizeError,
    ShapeError,
)

logger = logging.getLogger(__name__)

EXACT_BELOW = 8
DEFAULT_LIKERT_BINS = {1: "Acceptable", 2: "Acceptable", 3: "Unacceptable", 4: "Unacceptable", 5: "BadImage"}
LIKERT_CATEGORIES = ("Acceptable", "Unacceptable", "BadImage")


# =============================================================================
# Mann-Whitney U / FDR
# =============================================================================

@dataclass
class MannWhitneyResult:
    u: float
    p: float
    method: str
    degenerate: bool = False

    def __iter__(self):
        return iter((self.u, self.p))


def _exact_p(x, y):
    """
    精确零分布：按加倍中位秩（整数）对秩和做动态规划，计数所有 C(n, nx) 种分配。
    双侧 p = P(|U − E[U]| ≥ |U_obs − E[U]|)
    """
    nx, ny = len(x), len(y)
    n = nx + ny
    doubled = np.rint(2.0 * stats.rankdata(np.concatenate([x, y]))).astype(np.int64)
    top = int(doubled.sum())
    # dp[k, s]: 选 k 个、加倍秩和为 s 的分配数（逐项整体缩放，只用比值）
    dp = np.zeros((nx + 1, top + 1), dtype=np.float64)
    dp[0, 0] = 1.0
    for i, r in enumerate(doubled):
        for k in range(min(i + 1, nx), 0, -1):
            dp[k, r:] += dp[k - 1, : top + 1 - r]
        dp /= dp.max()
    dist = dp[nx]
    centre = nx * (n + 1)
    s_obs = int(doubled[:nx].sum())
    far = np.abs(np.arange(top + 1) - centre) >= abs(s_obs - centre)
    u_obs = s_obs / 2.0 - nx * (nx + 1) / 2.0
    return float(u_obs), float(min(1.0, dist[far].sum() / dist.sum()))


def mann_whitney_u(x, y, method="auto", exact_below=EXACT_BELOW):
    """
    U = R_x − nx(nx+1)/2（中位秩处理并列）。
    method="auto" 时合计样本量 < exact_below 用精确分布，否则正态近似（并列校正 + 连续性校正）。
    所有值相同时方差退化，p=1 并标记 degenerate
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 1 or y.size < 1:
        raise SampleSizeError(f"Mann-Whitney 每组至少 1 个样本，实际 {x.size}/{y.size}")
    if method not in ("auto", "exact", "asymptotic"):
        raise ValueError(f"未知方法: {method}")
    if method == "auto":
        method = "exact" if x.size + y.size < exact_below else "asymptotic"
    pooled = np.concatenate([x, y])
    if np.all(pooled == pooled[0]):
        return MannWhitneyResult(x.size * y.size / 2.0, 1.0, method, degenerate=True)
    if method == "exact":
        u, p = _exact_p(x, y)
        return MannWhitneyResult(u, p, method)
    res = stats.mannwhitneyu(x, y, alternative="two-sided", use_continuity=True, method="asymptotic")
    return MannWhitneyResult(float(res.statistic), float(min(1.0, res.pvalue)), method)


def fdr_adjust(p_values):
    """Benjamini-Hochberg 校正，按输入顺序返回"""
    p = np.asarray(list(p_values), dtype=np.float64)
    if p.size == 0:
        return []
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise DomainError(f"p 值必须在 [0, 1] 内: {p.tolist()}")
    return stats.false_discovery_control(p, method="bh").tolist()


# =============================================================================
# 卡方
# =============================================================================

def chi_squared(table):
    """Pearson 卡方（不做 Yates 校正），返回 (统计量, p, 自由度)"""
    t = np.asarray(table, dtype=np.float64)
    if t.ndim != 2 or t.shape[0] < 2 or t.shape[1] < 2:
        raise DegenerateTableError(f"列联表至少需要 2x2，实际形状 {t.shape}")
    if np.any(t < 0):
        raise DegenerateTableError("列联表计数不能为负")
    if np.any(t.sum(axis=0) == 0) or np.any(t.sum(axis=1) == 0):
        raise DegenerateTableError("列联表存在全零的行或列")
    res = stats.chi2_contingency(t, correction=False)
    return float(res.statistic), float(res.pvalue), int(res.dof)


# =============================================================================
# Likert 分箱 / Gwet AC1
# =============================================================================

@dataclass
class LikertBinning:
    mapping: dict = field(default_factory=lambda: dict(DEFAULT_LIKERT_BINS))

    @property
    def categories(self):
        return tuple(dict.fromkeys(self.mapping.values()))

    def apply(self, rating):
        try:
            value = float(rating)
        except (TypeError, ValueError):
            raise RatingError(f"评分无法解析: {rating!r}")
        if not value.is_integer() or int(value) not in self.mapping:
            raise RatingError(f"评分超出范围 {sorted(self.mapping)}: {rating!r}")
        return self.mapping[int(value)]


def bin_likert(ratings, binning=None):
    """五级评分 -> {Acceptable, Unacceptable, BadImage}"""
    binning = binning or LikertBinning()
    return [binning.apply(r) for r in ratings]


def _missing(v):
    return v is None or (isinstance(v, float) and np.isnan(v)) or (isinstance(v, str) and not v.strip())


@dataclass
class AgreementTable:
    """两位评分者对同一批条目的类别评分"""

    rater_a: list
    rater_b: list
    categories: tuple
    dropped: int = 0

    @classmethod
    def from_ratings(cls, rater_a, rater_b, declared=LIKERT_CATEGORIES):
        """
        丢弃任一评分缺失的条目并记录数量。
        类别取该层实际出现的类别；不足 2 个时退回声明的类别集
        """
        if len(rater_a) != len(rater_b):
            raise ShapeError(f"两位评分者条目数不一致: {len(rater_a)} vs {len(rater_b)}")
        pairs = [(a, b) for a, b in zip(rater_a, rater_b) if not _missing(a) and not _missing(b)]
        dropped = len(rater_a) - len(pairs)
        if dropped:
            logger.warning("丢弃 %d 个评分缺失的条目", dropped)
        observed = sorted({v for pair in pairs for v in pair}, key=str)
        categories = tuple(observed) if len(observed) >= 2 else tuple(declared)
        extra = set(observed) - set(categories)
        if extra or len(categories) < 2:
            raise RatingError(f"类别集不足或包含未声明的类别: {sorted(extra, key=str)}")
        return cls([a for a, _ in pairs], [b for _, b in pairs], categories, dropped)

    @property
    def n_items(self):
        return len(self.rater_a)

    def counts(self):
        """r[i, k]：第 i 个条目被评为第 k 类的评分者人数"""
        index = {c: k for k, c in enumerate(self.categories)}
        r = np.zeros((self.n_items, len(self.categories)))
        for i, (a, b) in enumerate(zip(self.rater_a, self.rater_b)):
            r[i, index[a]] += 1
            r[i, index[b]] += 1
        return r


@dataclass
class AC1Result:
    ac1: float
    ci_low: float
    ci_high: float
    se: float
    pa: float
    pe: float
    n_items: int
    dropped: int = 0

    def __iter__(self):
        return iter((self.ac1, self.ci_low, self.ci_high))


def gwet_ac1(table):
    """
    Gwet AC1 与 95% CI。方差为逐条目估计量（有限总体校正取 0）：
    var = Σ(ac1*_i − AC1)² / (n(n−1))，ac1*_i 为去除机会一致性波动后的条目贡献
    """
    n = table.n_items
    if n < 2:
        raise SampleSizeError(f"AC1 至少需要 2 个条目，实际 {n}")
    r = table.counts()
    k = r.shape[1]
    ri = r.sum(axis=1)
    pa_i = (r * (r - 1)).sum(axis=1) / (ri * (ri - 1))
    pi = (r / ri[:, None]).mean(axis=0)
    pe = float((pi * (1 - pi)).sum() / (k - 1))
    if pe >= 1:
        raise DegeneratePrevalenceError("机会一致性 pe=1，AC1 无定义")
    pa = float(pa_i.mean())
    ac1 = (pa - pe) / (1 - pe)

    pe_i = (r / ri[:, None] * (1 - pi)[None, :]).sum(axis=1) / (k - 1)
    ac1_i = (pa_i - pe) / (1 - pe)
    ac1_ix = ac1_i - 2 * (1 - ac1) * (pe_i - pe) / (1 - pe)
    var = float(((ac1_ix - ac1) ** 2).sum() / (n * (n - 1)))
    se = float(np.sqrt(max(var, 0.0)))
    lo = max(-1.0, ac1 - 1.96 * se)
    hi = min(1.0, ac1 + 1.96 * se)
    return AC1Result(float(ac1), float(lo), float(hi), se, pa, pe, n, table.dropped)


# =============================================================================
# Box-Cox
# =============================================================================

def _positive(y):
    arr = np.asarray(y, dtype=np.float64)
    if arr.size == 0 or np.any(~np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError("Box-Cox 要求所有取值为正")
    return arr


def box_cox(y, lam=0.2):
    """(y^λ − 1)/λ，λ=0 时为 ln y"""
    return special.boxcox(_positive(y), lam)


def inv_box_cox(z, lam=0.2):
    return special.inv_boxcox(np.asarray(z, dtype=np.float64), lam)


def boxcox_mle(y, lo=-2.0, hi=2.0, step=0.01):
    """在 [lo, hi] 网格上最大化 Box-Cox 轮廓对数似然，返回 (λ, 对数似然)"""
    arr = _positive(y)
    if arr.size < 2 or np.all(arr == arr[0]):
        raise SampleSizeError("至少需要 2 个不同的取值才能估计 λ")
    grid = np.round(np.arange(lo, hi + step / 2, step), 10)
    llf = np.array([stats.boxcox_llf(lam, arr) for lam in grid])
    best = int(np.nanargmax(llf))
    return float(grid[best]), float(llf[best])


# =============================================================================
# OLS 回归
# =============================================================================

@dataclass
class RegressionFit:
    names: list
    estimates: list
    std_errors: list
    ci_low: list
    ci_high: list
    p_values: list
    vif: list           # 常数列为 None
    r_squared: float
    n: int
    df_resid: int
    residuals: list = field(default_factory=list, repr=False)

    def to_frame(self):
        return pd.DataFrame({
            "term": self.names,
            "estimate": self.estimates,
            "std_error": self.std_errors,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "p_value": self.p_values,
            "vif": self.vif,
        })


def _collinear_columns(X, names):
    """找出能由前面列线性表示的列，以及参与表示的列"""
    kept, offending = [], set()
    for j in range(X.shape[1]):
        trial = kept + [j]
        if np.linalg.matrix_rank(X[:, trial]) == len(trial):
            kept.append(j)
            continue
        offending.add(names[j])
        if kept:
            coef = np.linalg.lstsq(X[:, kept], X[:, j], rcond=None)[0]
            offending.update(names[kept[i]] for i, c in enumerate(coef) if abs(c) > 1e-8)
    return [n for n in names if n in offending]


def _is_constant(col):
    return bool(np.ptp(col) == 0 and col[0] != 0)


def ols_fit(X, y, names=None, add_intercept=False):
    """
    最小二乘（statsmodels，伪逆求解），t 分布 95% CI 与双侧 p。
    VIF_j = 1/(1−R²_j)，由第 j 列对其余列的辅助回归得到
    """
    if isinstance(X, pd.DataFrame):
        names = names or [str(c) for c in X.columns]
        X = X.to_numpy(dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64)
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    if add_intercept:
        X = np.column_stack([np.ones(X.shape[0]), X])
        names = ["intercept"] + names
    if len(names) != X.shape[1]:
        raise ShapeError(f"列名数 {len(names)} 与设计矩阵列数 {X.shape[1]} 不一致")
    n, p = X.shape
    if y.shape != (n,):
        raise ShapeError(f"因变量长度 {y.shape} 与设计矩阵行数 {n} 不一致")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise DomainError("设计矩阵或因变量含缺失值或非有限值")
    if n <= p:
        raise SampleSizeError(f"样本量 {n} 必须大于参数个数 {p}")
    offending = _collinear_columns(X, names)
    if offending:
        raise CollinearityError(f"设计矩阵列共线: {', '.join(offending)}", columns=offending)

    res = sm.OLS(y, X).fit()
    ci = np.asarray(res.conf_int(alpha=0.05))
    vif = []
    for j in range(p):
        if _is_constant(X[:, j]):
            vif.append(None)
        elif p == 1:
            vif.append(1.0)
        else:
            vif.append(float(variance_inflation_factor(X, j)))
    return RegressionFit(
        names=names,
        estimates=np.asarray(res.params).tolist(),
        std_errors=np.asarray(res.bse).tolist(),
        ci_low=ci[:, 0].tolist(),
        ci_high=ci[:, 1].tolist(),
        p_values=np.asarray(res.pvalues).tolist(),
        vif=vif,
        r_squared=float(res.rsquared),
        n=int(n),
        df_resid=int(res.df_resid),
        residuals=np.asarray(res.resid).tolist(),
    )


# =============================================================================
# 分组汇总
# =============================================================================

def group_summary(table, by, columns):
    """按 by 分组，每列给出 n / 中位数 / Q1 / Q3（缺失值不计入）"""
    by = [by] if isinstance(by, str) else list(by)
    missing = [c for c in by + list(columns) if c not in table.columns]
    if missing:
        raise ShapeError(f"表中缺少列: {missing}")
    rows = []
    for key, group in table.groupby(by, sort=True, dropna=False):
        key = key if isinstance(key, tuple) else (key,)
        for col in columns:
            values = pd.to_numeric(group[col], errors="coerce").dropna().to_numpy()
            row = dict(zip(by, key))
            row["variable"] = col
            row["n"] = int(values.size)
            if values.size:
                q1, med, q3 = np.percentile(values, [25, 50, 75])
                row.update(median=float(med), q1=float(q1), q3=float(q3))
            else:
                row.update(median=None, q1=None, q3=None)
            rows.append(row)
    return pd.DataFrame(rows, columns=by + ["variable", "n", "median", "q1", "q3"])
