"""
分割评估
- Dice、对称 95% Hausdorff 距离（mm）
- 两个标签体逐类别比较（颅骨 / 皮下脂肪 / 肌肉）及宏平均
- Bland-Altman 一致性、中位数（IQR）
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from errors import CodebookError, SampleSizeError, ShapeError, UndefinedDistanceError
from volume_core import CANONICAL_CODEBOOK, EXTRACRANIAL_CODES

logger = logging.getLogger(__name__)


def _check_pair(a, b):
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ShapeError(f"两个掩码尺寸不一致: {a.shape} vs {b.shape}")
    return a, b


def dice(a, b):
    """
    2|A∩B| / (|A|+|B|)。
    返回 (值, both_empty)：两者皆空时为 (1.0, True)
    """
    a, b = _check_pair(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0, True
    return 2.0 * int(np.logical_and(a, b).sum()) / total, False


def _border(mask):
    # 体外视为背景，贴边的前景体素也算边界
    structure = ndimage.generate_binary_structure(3, 1)
    eroded = ndimage.binary_erosion(mask, structure=structure, border_value=0)
    return mask & ~eroded


def surface_distances(a, b, spacing):
    """
    两个方向的边界点距离（mm），合并为一个数组。
    任一掩码为空时距离无定义，抛 UndefinedDistanceError
    """
    a, b = _check_pair(a, b)
    if not a.any() or not b.any():
        raise UndefinedDistanceError("掩码为空，表面距离无定义")
    border_a = _border(a)
    border_b = _border(b)
    # 到对方边界的欧氏距离场，sampling 即物理间距
    to_b = ndimage.distance_transform_edt(~border_b, sampling=spacing)
    to_a = ndimage.distance_transform_edt(~border_a, sampling=spacing)
    return np.concatenate([to_b[border_a], to_a[border_b]])


def hd95(a, b, spacing):
    """对称 95% Hausdorff 距离：双向表面距离合并后的第 95 百分位（线性插值）"""
    return float(np.percentile(surface_distances(a, b, spacing), 95))


@dataclass
class ClassMetrics:
    code: int
    name: str
    dice: float
    hd95_mm: float = None
    both_empty: bool = False
    one_empty: bool = False


@dataclass
class ComparisonReport:
    classes: list
    overall_dice: float = None
    overall_hd95_mm: float = None
    flags: list = field(default_factory=list)

    def get(self, name):
        for c in self.classes:
            if c.name == name:
                return c
        raise KeyError(name)


def compare(labels_a, labels_b, codes=EXTRACRANIAL_CODES):
    """
    逐类别 Dice 与 HD95。
    - 两者皆空：Dice=1，HD95 无定义，记 both-empty
    - 仅一方为空：Dice=0，HD95 无定义，记 one-empty
    overall 为两方任一出现的类别的算术平均
    """
    if labels_a.dims != labels_b.dims:
        raise ShapeError(f"标签体尺寸不一致: {labels_a.dims} vs {labels_b.dims}")
    if not np.allclose(labels_a.spacing, labels_b.spacing):
        raise ShapeError(f"体素间距不一致: {labels_a.spacing} vs {labels_b.spacing}")
    if labels_a.codebook != labels_b.codebook:
        raise CodebookError("两个标签体的编码表不一致")
    codebook = labels_a.codebook or CANONICAL_CODEBOOK
    classes, flags = [], []
    for code in codes:
        if code not in codebook:
            raise CodebookError(f"编码 {code} 不在编码表中")
        name = codebook[code]
        a = np.asarray(labels_a.data) == code
        b = np.asarray(labels_b.data) == code
        d, both_empty = dice(a, b)
        one_empty = not both_empty and (not a.any() or not b.any())
        h = None
        if both_empty:
            flags.append(f"{name}:both-empty")
        elif one_empty:
            flags.append(f"{name}:one-empty")
        else:
            h = hd95(a, b, labels_a.spacing)
        classes.append(ClassMetrics(code, name, d, h, both_empty, one_empty))

    present = [c for c in classes if not c.both_empty]
    overall_dice = float(np.mean([c.dice for c in present])) if present else None
    hds = [c.hd95_mm for c in present if c.hd95_mm is not None]
    overall_hd = float(np.mean(hds)) if hds else None
    return ComparisonReport(classes, overall_dice, overall_hd, flags)


@dataclass
class BlandAltman:
    n: int
    mean_diff: float
    sd_diff: float
    lower: float
    upper: float
    differences: list = field(default_factory=list)
    means: list = field(default_factory=list)


def bland_altman(x, y):
    """差值 d = x − y；均值 ± 1.96·SD（样本标准差）为一致性界限"""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"配对数据长度不一致: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise SampleSizeError(f"Bland-Altman 至少需要 2 对数据，实际 {x.size}")
    d = x - y
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    return BlandAltman(
        n=int(x.size),
        mean_diff=mean,
        sd_diff=sd,
        lower=mean - 1.96 * sd,
        upper=mean + 1.96 * sd,
        differences=d.tolist(),
        means=((x + y) / 2.0).tolist(),
    )


def median_iqr(values):
    """(中位数, 第 25 百分位, 第 75 百分位)"""
    arr = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if arr.size == 0:
        raise SampleSizeError("没有可汇总的数据")
    q1, med, q3 = np.percentile(arr, [25, 50, 75])
    return float(med), float(q1), float(q3)
