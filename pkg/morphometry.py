"""
形态测量
- 组织体积（体素数、mm³、cm³）
- CT 骨阈值提取与 HU 窗宽扫描
- 轴位层颅骨轮廓（OpenCV）与沿内法线的厚度采样
- 16 层厚度汇总（中间 95% 截尾后取中位数）
- ±5° 俯仰消融
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from errors import EmptySliceError, PreconditionError, ShapeError, ThicknessError
from roi_crop import apply_crop, brain_boundary
from volume_core import BACKGROUND, rotate_labels

logger = logging.getLogger(__name__)

DEFAULT_HU_THRESHOLD = 471.0
HU_SWEEP = (300.0, 400.0, 471.0, 500.0, 800.0)
ISO_LEVEL = 0.5
# 切向取外轮廓上 ±3 个体素弧长的弦方向，抑制阶梯状轮廓的噪声
TANGENT_SPAN_VOXELS = 3.0


# =============================================================================
# 体积
# =============================================================================

@dataclass
class ClassVolume:
    code: int
    name: str
    voxels: int
    mm3: float
    cm3: float


@dataclass
class VolumeReport:
    classes: list
    spacing: tuple
    crop_applied: bool

    def get(self, name):
        for c in self.classes:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def total_mm3(self):
        return sum(c.mm3 for c in self.classes)


def volumes(labels, boundary=None):
    """各类别体积；给定边界时先裁剪再计数"""
    if boundary is not None:
        if tuple(boundary.dims) != labels.dims:
            raise ShapeError(f"裁剪边界 {boundary.dims} 与标签体 {labels.dims} 不一致")
        labels = apply_crop(labels, boundary)
    voxel_mm3 = labels.grid.voxel_volume_mm3
    codes = sorted(labels.codebook)
    counts = np.bincount(np.asarray(labels.data, dtype=np.int64).ravel(), minlength=max(codes) + 1)
    classes = []
    for code in codes:
        n = int(counts[code])
        mm3 = n * voxel_mm3
        classes.append(ClassVolume(code, labels.codebook[code], n, mm3, mm3 / 1000.0))
    return VolumeReport(classes, labels.spacing, boundary is not None)


# =============================================================================
# CT 骨阈值
# =============================================================================

def hu_bone_mask(ct, threshold_hu=DEFAULT_HU_THRESHOLD):
    """value > threshold 的二值骨掩码；空掩码不报错，由下游标记"""
    mask = (np.asarray(ct.data) > threshold_hu).astype(np.uint8)
    if not mask.any():
        logger.warning("HU>%s 的骨掩码为空", threshold_hu)
    return ct.with_data(mask)


# =============================================================================
# 轴位层轮廓
# =============================================================================

@dataclass
class SliceContours:
    z: int
    outer: np.ndarray            # (N, 2) mm，(前后, 左右)
    inner: np.ndarray = None     # (M, 2) mm；无封闭内腔时为 None
    open_skull: bool = False


def _slice(mask, z):
    if not 0 <= z < mask.dims[2]:
        raise PreconditionError(f"层号 {z} 超出范围 [0, {mask.dims[2]})")
    return np.ascontiguousarray(np.asarray(mask.data)[:, :, z] > 0).astype(np.uint8)


def _to_mm(contour, spacing):
    # OpenCV 点为 (列, 行)，对应 (第 2 轴, 第 1 轴)
    pts = contour.reshape(-1, 2)[:, ::-1].astype(np.float64)
    return pts * np.asarray(spacing[:2], dtype=np.float64)


def slice_contours(bone_mask, z):
    """
    最大 8 连通骨组件的外轮廓，以及其中最大封闭背景腔的内轮廓。
    空层抛 EmptySliceError；无内腔时 open_skull=True
    """
    sl = _slice(bone_mask, z)
    if not sl.any():
        raise EmptySliceError(f"第 {z} 层没有骨组织")
    n, labels, stats, _ = cv2.connectedComponentsWithStats(sl, connectivity=8)
    largest = 1 + int(np.argmax(stats[1:, cv2.CC_STAT_AREA]))
    component = (labels == largest).astype(np.uint8)
    found = cv2.findContours(component, cv2.RETR_CCOMP, cv2.CHAIN_APPROX_NONE)
    contours, hierarchy = found[-2], found[-1]
    hierarchy = hierarchy.reshape(-1, 4)
    outer_ids = [i for i in range(len(contours)) if hierarchy[i][3] < 0]
    hole_ids = [i for i in range(len(contours)) if hierarchy[i][3] >= 0]
    outer = max(outer_ids, key=lambda i: (cv2.contourArea(contours[i]), len(contours[i])))
    spacing = bone_mask.spacing
    if not hole_ids:
        logger.debug("第 %d 层无封闭内腔（open skull）", z)
        return SliceContours(z, _to_mm(contours[outer], spacing), None, True)
    inner = max(hole_ids, key=lambda i: (cv2.contourArea(contours[i]), len(contours[i])))
    return SliceContours(z, _to_mm(contours[outer], spacing), _to_mm(contours[inner], spacing), False)


# =============================================================================
# 单层厚度
# =============================================================================

@dataclass
class SliceThickness:
    z: int
    samples: list
    attempted: int
    open_skull: bool = False
    empty: bool = False

    @property
    def usable(self):
        return bool(self.samples) and not self.open_skull and not self.empty


def _resample_closed(points, n_points, delta):
    """按弧长在闭合折线上等距取 n_points 个点，返回 (点, 单位切向)"""
    closed = np.vstack([points, points[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    length = cum[-1]
    if length <= 0:
        return np.repeat(points[:1], n_points, axis=0), np.zeros((n_points, 2))

    def at(s):
        s = np.mod(s, length)
        return np.stack([np.interp(s, cum, closed[:, 0]), np.interp(s, cum, closed[:, 1])], axis=1)

    # 从半个间隔处开始取点，避开轮廓起点（通常是拐角）
    s = (np.arange(n_points) + 0.5) * length / n_points
    tangent = at(s + delta) - at(s - delta)
    norm = np.linalg.norm(tangent, axis=1, keepdims=True)
    tangent = np.divide(tangent, norm, out=np.zeros_like(tangent), where=norm > 0)
    return at(s), tangent


def _crossing(t, v, i, step):
    if i == 0:
        return t[0]
    return t[i - 1] + (ISO_LEVEL - v[i - 1]) / (v[i] - v[i - 1]) * step


def _march_normals(sl, spacing, points, normals, step_voxels, cap_mm):
    """
    从外轮廓外侧一个体素处沿内法线步进，双线性插值取 0.5 等值面，
    厚度 = 进入骨与离开骨两次穿越之间的距离（mm）。
    射线出层、未进入骨或超过 cap_mm 的丢弃。
    """
    pixel = float(min(spacing))
    step = step_voxels * pixel
    back = pixel
    t = np.arange(0.0, cap_mm + 2 * back + step, step)
    field_ = sl.astype(np.float64)
    h, w = sl.shape
    samples = []
    for p, n in zip(points, normals):
        if not np.any(n):
            continue
        pos = (p - back * n)[None, :] + t[:, None] * n[None, :]
        coords = pos / np.asarray(spacing, dtype=np.float64)
        v = ndimage.map_coordinates(field_, coords.T, order=1, mode="constant", cval=0.0)
        inside = v >= ISO_LEVEL
        if not inside.any():
            continue
        i_in = int(np.argmax(inside))
        leaving = ~inside[i_in:]
        if not leaving.any():
            continue
        i_out = i_in + int(np.argmax(leaving))
        c = coords[: i_out + 1]
        if c.min() < 0 or np.any(c[:, 0] > h - 1) or np.any(c[:, 1] > w - 1):
            continue
        thickness = _crossing(t, v, i_out, step) - _crossing(t, v, i_in, step)
        if 0 < thickness <= cap_mm:
            samples.append(float(thickness))
    return samples


def _nearest_inner(points, inner, spacing, cap_mm):
    """外轮廓点到最近内轮廓点的距离；轮廓取在边界像素中心，两侧各补半个体素"""
    dist, _ = cKDTree(inner).query(points)
    dist = dist + float(min(spacing))
    return [float(d) for d in dist if d <= cap_mm]


def slice_thickness(bone_mask, z, n_points=100, step_voxels=0.1, cap_mm=30.0, method="normal"):
    """
    第 z 层的厚度样本（mm）。外轮廓按弧长等距取 n_points 个点，
    method="normal" 沿指向层质心的内法线步进；"nearest" 取到内轮廓的最近距离
    """
    if method not in ("normal", "nearest"):
        raise PreconditionError(f"未知厚度方法: {method}")
    contours = slice_contours(bone_mask, z)
    if contours.open_skull:
        return SliceThickness(z, [], n_points, open_skull=True)
    spacing = bone_mask.spacing[:2]
    points, tangents = _resample_closed(contours.outer, n_points, TANGENT_SPAN_VOXELS * float(min(spacing)))
    if method == "nearest":
        return SliceThickness(z, _nearest_inner(points, contours.inner, spacing, cap_mm), n_points)
    normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1)
    centroid = contours.outer.mean(axis=0)
    flip = np.einsum("ij,ij->i", normals, centroid[None, :] - points) < 0
    normals[flip] *= -1
    samples = _march_normals(_slice(bone_mask, z), spacing, points, normals, step_voxels, cap_mm)
    logger.debug("第 %d 层: %d/%d 条射线有效", z, len(samples), n_points)
    return SliceThickness(z, samples, n_points)


# =============================================================================
# 厚度汇总
# =============================================================================

@dataclass
class ThicknessEstimate:
    reference_slice: int
    start_slice: int
    slice_indices: list
    slice_samples: list
    raw_pool: list
    trimmed_pool: list
    median_mm: float
    degraded: bool = False
    skipped: dict = field(default_factory=dict)   # 层号 -> 原因
    method: str = "normal"
    pooling: str = "pooled"
    trim_percentiles: tuple = (2.5, 97.5)


def trim_central(values, lo=2.5, hi=97.5):
    """保留 [lo, hi] 百分位（线性插值）之间的值"""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return arr
    q_lo, q_hi = np.percentile(arr, [lo, hi])
    return arr[(arr >= q_lo) & (arr <= q_hi)]


def thickness_pipeline(
    bone_mask,
    reference_slice,
    n_points=100,
    offset_mm=10.0,
    slab_mm=16.0,
    trim_percentiles=(2.5, 97.5),
    pooling="pooled",
    method="normal",
    step_voxels=0.1,
    cap_mm=30.0,
    jobs=1,
):
    """
    从参考层（眶顶）向上 offset_mm 开始，连续 slab_mm 厚的轴位层测厚，
    合并样本后截取中间 95% 取中位数。pooling="per-slice" 时逐层截尾后再合并。
    要求各向同性体素；可用层不足时 degraded=True，一层都没有时抛 ThicknessError
    """
    if not bone_mask.is_isotropic():
        raise PreconditionError(f"厚度测量要求各向同性体素，实际 {bone_mask.spacing}")
    if pooling not in ("pooled", "per-slice"):
        raise PreconditionError(f"未知合并方式: {pooling}")
    depth = bone_mask.dims[2]
    if not 0 <= reference_slice < depth:
        raise PreconditionError(f"参考层 {reference_slice} 超出范围 [0, {depth})")
    s = bone_mask.spacing[2]
    n_slices = max(1, int(round(slab_mm / s)))
    start = reference_slice + int(round(offset_mm / s))
    indices = [start + k for k in range(n_slices)]
    skipped = {z: "out-of-volume" for z in indices if z >= depth}
    in_range = [z for z in indices if z < depth]

    def measure(z):
        try:
            return slice_thickness(bone_mask, z, n_points, step_voxels, cap_mm, method)
        except EmptySliceError:
            return SliceThickness(z, [], n_points, empty=True)

    if jobs > 1 and len(in_range) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(measure, in_range))
    else:
        results = [measure(z) for z in in_range]

    usable = []
    for r in results:
        if r.usable:
            usable.append(r)
        else:
            skipped[r.z] = "empty" if r.empty else ("open-skull" if r.open_skull else "no-samples")
    if not usable:
        raise ThicknessError(f"参考层 {reference_slice} 之上没有可用的测厚层")
    degraded = len(usable) < n_slices
    if degraded:
        logger.warning("可用测厚层 %d/%d，结果标记为 degraded，跳过: %s", len(usable), n_slices, skipped)

    lo, hi = trim_percentiles
    raw_pool = np.concatenate([np.asarray(r.samples) for r in usable])
    if pooling == "pooled":
        trimmed = trim_central(raw_pool, lo, hi)
    else:
        trimmed = np.concatenate([trim_central(r.samples, lo, hi) for r in usable])
    return ThicknessEstimate(
        reference_slice=reference_slice,
        start_slice=start,
        slice_indices=[r.z for r in usable],
        slice_samples=[list(r.samples) for r in usable],
        raw_pool=raw_pool.tolist(),
        trimmed_pool=trimmed.tolist(),
        median_mm=float(np.median(trimmed)),
        degraded=degraded,
        skipped=dict(sorted(skipped.items())),
        method=method,
        pooling=pooling,
        trim_percentiles=(lo, hi),
    )


@dataclass
class HuWindowResult:
    threshold_hu: float
    estimate: ThicknessEstimate = None
    excluded: str = ""


def hu_window_sweep(ct, reference_slice, thresholds=HU_SWEEP, **kwargs):
    """各 HU 阈值下的 CT 厚度；某阈值下没有有效轮廓时记为排除而非失败"""
    results = []
    for threshold in thresholds:
        mask = hu_bone_mask(ct, threshold)
        try:
            results.append(HuWindowResult(float(threshold), thickness_pipeline(mask, reference_slice, **kwargs)))
        except ThicknessError as e:
            logger.warning("HU=%s 无有效轮廓，排除: %s", threshold, e)
            results.append(HuWindowResult(float(threshold), None, str(e)))
    return results


def summarize_thickness(values):
    """(均值, 标准差)，n<2 时标准差为 None"""
    arr = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if arr.size == 0:
        return None, None
    sd = float(np.std(arr, ddof=1)) if arr.size > 1 else None
    return float(arr.mean()), sd


# =============================================================================
# 俯仰消融
# =============================================================================

@dataclass
class TiltDelta:
    pitch_deg: float
    code: int
    name: str
    baseline_mm3: float
    tilted_mm3: float
    abs_delta_mm3: float
    percent: float


@dataclass
class TiltAblationReport:
    rows: list
    baseline: VolumeReport

    def for_pitch(self, pitch):
        return [r for r in self.rows if r.pitch_deg == pitch]


def tilt_ablation(labels, boundary_fn=None, pitches=(5.0, -5.0), max_abs_pitch=30.0):
    """
    对每个俯仰角：旋转标签体，重新求裁剪边界（脑掩码随旋转移动），重新计算体积，
    与 0° 体积比较。percent = 100·|V_tilt − V_0| / V_0，仅报告 V_0 > 0 的非背景类别
    """
    boundary_fn = boundary_fn or brain_boundary
    baseline = volumes(labels, boundary_fn(labels))
    rows = []
    for pitch in pitches:
        if pitch == 0:
            tilted = baseline
        else:
            rotated = rotate_labels(labels, pitch, max_abs_pitch)
            tilted = volumes(rotated, boundary_fn(rotated))
        for base in baseline.classes:
            if base.code == BACKGROUND or base.mm3 <= 0:
                continue
            v_tilt = tilted.get(base.name).mm3
            delta = abs(v_tilt - base.mm3)
            rows.append(TiltDelta(float(pitch), base.code, base.name, base.mm3, v_tilt, delta, 100.0 * delta / base.mm3))
    return TiltAblationReport(rows, baseline)
