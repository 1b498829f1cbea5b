"""
处理参数加载模块
- 加载 cranio_options.yaml（路径可由 CRANIO_OPTIONS_FILE 覆盖）
- 提供各模块的默认参数，命令行参数覆盖后生成报告用的参数快照
"""

import copy
import logging
import os
import threading
from pathlib import Path

logger = logging.getLogger(__name__)

# 参数文件路径：项目根目录
_OPTIONS_FILE = os.environ.get("CRANIO_OPTIONS_FILE") or str(
    Path(__file__).resolve().parent / "cranio_options.yaml"
)

# 文件缺失或 PyYAML 未安装时的兜底
DEFAULT_OPTIONS = {
    "hu": {"threshold": 471.0, "sweep": [300.0, 400.0, 471.0, 500.0, 800.0]},
    "thickness": {
        "offset_mm": 10.0,
        "slab_mm": 16.0,
        "n_points": 100,
        "step_voxels": 0.1,
        "cap_mm": 30.0,
        "trim_percentiles": [2.5, 97.5],
        "pooling": "pooled",
        "method": "normal",
    },
    "ablation": {"pitch_deg": 5.0, "max_abs_pitch": 30.0},
    "regression": {"box_cox_lambda": 0.2, "lambda_grid": [-2.0, 2.0, 0.01]},
    "mann_whitney": {"exact_below": 8},
    "label_merge": {
        "temporalis_left": "muscle",
        "temporalis_right": "muscle",
        "skull": "skull",
        "subcutaneous_fat": "subcutaneous_fat",
        "brain": "brain",
    },
    "raw_label_codes": {
        "brain": 1,
        "skull": 2,
        "subcutaneous_fat": 3,
        "temporalis_left": 4,
        "temporalis_right": 5,
        "other_muscle": 6,
    },
    "likert_bins": {1: "Acceptable", 2: "Acceptable", 3: "Unacceptable", 4: "Unacceptable", 5: "BadImage"},
}

# 内存缓存（受试者线程共享）
_options_cache = None
_options_key = None
_lock = threading.RLock()


def _merge(base, override):
    """按层级合并，override 中的键覆盖 base"""
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _load_options():
    """加载 YAML 参数，带缓存"""
    global _options_cache, _options_key
    try:
        import yaml
    except ImportError:
        logger.warning("PyYAML 未安装，使用内置默认参数")
        return copy.deepcopy(DEFAULT_OPTIONS)
    path = Path(_OPTIONS_FILE)
    if not path.exists():
        logger.warning("参数文件不存在: %s，使用内置默认参数", _OPTIONS_FILE)
        return copy.deepcopy(DEFAULT_OPTIONS)
    key = (str(path), path.stat().st_mtime_ns)
    with _lock:
        if _options_cache is not None and key == _options_key:
            return copy.deepcopy(_options_cache)
        try:
            with open(path, "r", encoding="utf-8") as f:
                _options_cache = _merge(DEFAULT_OPTIONS, yaml.safe_load(f) or {})
            _options_key = key
            return copy.deepcopy(_options_cache)
        except Exception as e:
            logger.exception("加载参数文件失败: %s", e)
            return copy.deepcopy(_options_cache or DEFAULT_OPTIONS)


def get_options():
    """完整参数字典（副本）"""
    return _load_options()


def get_hu_options():
    return _load_options()["hu"]


def get_thickness_options():
    return _load_options()["thickness"]


def get_ablation_options():
    return _load_options()["ablation"]


def get_regression_options():
    return _load_options()["regression"]


def get_mann_whitney_exact_below():
    return int(_load_options()["mann_whitney"]["exact_below"])


def get_label_merge_table():
    """
    原始数值编码 -> 标准类别名。
    由 raw_label_codes（名称 -> 数值）与 label_merge（名称 -> 类别）组合得到；
    label_merge 未列出的原始标签（如 other_muscle）映射为 background。
    """
    opts = _load_options()
    merge = opts.get("label_merge") or {}
    codes = opts.get("raw_label_codes") or {}
    return {int(code): merge.get(name, "background") for name, code in codes.items()}


def get_likert_bins():
    bins = _load_options().get("likert_bins") or {}
    return {int(k): str(v) for k, v in bins.items()}


def build_snapshot(section_overrides):
    """
    生成报告用的参数快照：YAML 默认值 + 命令行覆盖。
    section_overrides: {section: {key: value}}，值为 None 的键不覆盖
    """
    opts = _load_options()
    for section, values in (section_overrides or {}).items():
        target = opts.setdefault(section, {})
        for k, v in (values or {}).items():
            if v is not None:
                target[k] = v
    return opts
