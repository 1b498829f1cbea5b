"""
批量处理
- 清单解析：`id,labels,ct,brain_mask,reference_slice[,group]` 或配对清单 `id,labels_a,labels_b`
- 受试者级并行（--jobs），结果按清单顺序合并
- 报告输出：CSV（按列保留小数位）+ JSON（schema_version、参数快照、输入摘要）
- 退出码：任一受试者硬失败 -> 3；--strict 时 degraded 也记为 3
"""

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from digest_cache import digests_for
from errors import EXIT_OK, EXIT_PROCESSING, CranioError, ManifestError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

COHORT_COLUMNS = ("id", "labels", "ct", "brain_mask", "reference_slice")
PAIR_COLUMNS = ("id", "labels_a", "labels_b")
_REQUIRED = {"cohort": ("id", "labels"), "pairs": PAIR_COLUMNS}

# 报告小数位：mm 与百分比 2 位，Dice 3 位
DECIMALS_MM = 2
DECIMALS_PERCENT = 2
DECIMALS_DICE = 3


@dataclass
class SubjectRecord:
    id: str
    labels: str = ""
    ct: str = ""
    brain_mask: str = ""
    reference_slice: int = None
    group: str = ""
    labels_b: str = ""
    status: str = "pending"   # ok | degraded | failed
    reason: str = ""

    def input_paths(self):
        return [p for p in (self.labels, self.labels_b, self.ct, self.brain_mask) if p]


@dataclass
class CohortManifest:
    subjects: list
    path: str = ""
    options: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.subjects)


def _resolve(base, value):
    value = (value or "").strip()
    if not value:
        return ""
    p = Path(value)
    return str(p if p.is_absolute() else base / p)


def _parse_slice(subject_id, value):
    value = (value or "").strip()
    if not value:
        return None
    try:
        number = float(value)
    except ValueError:
        raise ManifestError(f"受试者 {subject_id} 的 reference_slice 不是整数: {value!r}")
    if not number.is_integer() or number < 0:
        raise ManifestError(f"受试者 {subject_id} 的 reference_slice 不是非负整数: {value!r}")
    return int(number)


def read_table(path, error_cls=ManifestError):
    """读取带表头的分隔文本表（逗号或制表符），所有单元格按字符串读入"""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline()
    except OSError as e:
        raise error_cls(f"无法读取 {path}: {e}") from e
    if not header.strip():
        raise error_cls(f"{path} 缺少表头")
    sep = "\t" if "\t" in header else ","
    try:
        df = pd.read_csv(path, sep=sep, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise error_cls(f"{path} 解析失败: {e}") from e
    df.columns = [str(c).strip() for c in df.columns]
    return df


def load_manifest(path, kind="cohort"):
    """
    读取清单（逗号或制表符分隔，带表头）。相对路径按清单所在目录解析；
    id 必须唯一。空清单（只有表头）返回空列表
    """
    path = Path(path)
    df = read_table(path)
    missing = [c for c in _REQUIRED[kind] if c not in df.columns]
    if missing:
        raise ManifestError(f"清单 {path} 缺少列: {', '.join(missing)}")
    duplicated = df["id"][df["id"].duplicated()].tolist()
    if duplicated:
        raise ManifestError(f"清单 {path} 中 id 重复: {duplicated}")

    base = path.parent
    subjects = []
    for row in df.to_dict("records"):
        sid = str(row["id"]).strip()
        if not sid:
            raise ManifestError(f"清单 {path} 存在空 id")
        if kind == "pairs":
            subjects.append(SubjectRecord(
                id=sid,
                labels=_resolve(base, row.get("labels_a")),
                labels_b=_resolve(base, row.get("labels_b")),
                group=str(row.get("group", "")).strip(),
            ))
        else:
            subjects.append(SubjectRecord(
                id=sid,
                labels=_resolve(base, row.get("labels")),
                ct=_resolve(base, row.get("ct")),
                brain_mask=_resolve(base, row.get("brain_mask")),
                reference_slice=_parse_slice(sid, row.get("reference_slice")),
                group=str(row.get("group", "")).strip(),
            ))
    if not subjects:
        logger.warning("清单 %s 为空", path)
    return CohortManifest(subjects, str(path))


# =============================================================================
# 并行执行
# =============================================================================

@dataclass
class SubjectResult:
    """单个受试者的处理结果；degraded 非空表示结果可用但不完整"""
    rows: list = field(default_factory=list)
    detail: dict = field(default_factory=dict)
    degraded: str = ""


@dataclass
class SubjectOutcome:
    record: SubjectRecord
    status: str
    reason: str = ""
    kind: str = ""
    result: SubjectResult = None

    @property
    def ok(self):
        return self.status != "failed"


def default_jobs():
    try:
        return max(1, int(os.environ.get("CRANIO_JOBS", "1")))
    except ValueError:
        logger.warning("CRANIO_JOBS 不是整数，按 1 处理")
        return 1


def _run_one(fn, record):
    try:
        result = fn(record)
    except CranioError as e:
        logger.warning("受试者 %s 处理失败 [%s]: %s", record.id, e.kind, e)
        return SubjectOutcome(record, "failed", str(e), e.kind)
    except Exception as e:
        logger.exception("受试者 %s 处理异常: %s", record.id, e)
        return SubjectOutcome(record, "failed", f"{type(e).__name__}: {e}", "internal")
    if result.degraded:
        logger.warning("受试者 %s 结果不完整: %s", record.id, result.degraded)
        return SubjectOutcome(record, "degraded", result.degraded, "", result)
    return SubjectOutcome(record, "ok", "", "", result)


def run_subjects(subjects, fn, jobs=1):
    """fn(record) -> SubjectResult；返回与 subjects 同序的 SubjectOutcome 列表"""
    subjects = list(subjects)
    if jobs > 1 and len(subjects) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(lambda r: _run_one(fn, r), subjects))
    else:
        outcomes = [_run_one(fn, r) for r in subjects]
    for o in outcomes:
        o.record.status, o.record.reason = o.status, o.reason
    return outcomes


def exit_status(outcomes, strict=False):
    if any(o.status == "failed" for o in outcomes):
        return EXIT_PROCESSING
    if strict and any(o.status == "degraded" for o in outcomes):
        return EXIT_PROCESSING
    return EXIT_OK


def outcome_rows(outcomes):
    """按清单顺序展开各受试者的行；失败受试者输出一行状态"""
    rows = []
    for o in outcomes:
        if o.status == "failed" or not o.result or not o.result.rows:
            rows.append({"id": o.record.id, "status": o.status, "reason": o.reason})
            continue
        for row in o.result.rows:
            rows.append({"id": o.record.id, "status": o.status, "reason": o.reason, **row})
    return rows


# =============================================================================
# 报告
# =============================================================================

def round_frame(df, decimals, integers=()):
    """decimals: {列名: 小数位}；integers 中的列转为可空整数；缺失列跳过"""
    out = df.copy()
    for col, d in decimals.items():
        if col in out.columns:
            out[col] = pd.to_numeric(out[col], errors="coerce").round(d)
    for col in integers:
        if col in out.columns:
            out[col] = pd.to_numeric(out[col], errors="coerce").astype("Int64")
    return out


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return None if not np.isfinite(value) else float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (set, tuple)):
        return list(value)
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"无法序列化: {type(value).__name__}")


def _clean(value):
    """NaN -> None，递归处理容器"""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (float, np.floating)) and not np.isfinite(value):
        return None
    return value


def frame_records(df):
    return _clean(df.astype(object).where(df.notna(), None).to_dict("records"))


def write_report(out_prefix, command, table, options, inputs, subjects=None, summary=None, columns=None):
    """
    写出 <prefix>.csv 与 <prefix>.json。
    table: DataFrame（已按列保留小数位）；columns 给定时固定 CSV 列顺序（空表也输出表头）
    """
    prefix = Path(out_prefix)
    if prefix.parent and not prefix.parent.exists():
        prefix.parent.mkdir(parents=True, exist_ok=True)
    if columns is not None:
        table = table.reindex(columns=list(columns))
    csv_path = prefix.with_name(prefix.name + ".csv")
    json_path = prefix.with_name(prefix.name + ".json")
    table.to_csv(csv_path, index=False, lineterminator="\n")
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "options": options,
        "input_digests": digests_for(inputs),
        "subjects": [
            {"id": s.id, "status": s.status, "reason": s.reason} for s in (subjects or [])
        ],
        "rows": frame_records(table),
        "summary": _clean(summary or {}),
    }
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(report, f, ensure_ascii=False, indent=2, sort_keys=False, default=_json_default)
        f.write("\n")
    logger.info("报告已写出: %s, %s", csv_path, json_path)
    return csv_path, json_path
