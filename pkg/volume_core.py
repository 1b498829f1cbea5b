"""
三维体素网格数据模型
- VoxelGrid / LabelVolume：构造后不可变
- 方向标准化（仅轴置换与翻转，不插值）
- 各向同性重采样、标签体的俯仰旋转、类别掩码提取
标准坐标系：第 1 轴由后向前（anterior+），第 2 轴由左向右，第 3 轴由下向上（superior+）
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment

from errors import CodebookError, DegenerateVolumeError, OrientationError, PreconditionError, ShapeError

logger = logging.getLogger(__name__)

BACKGROUND = 0
BRAIN = 1
SKULL = 2
FAT = 3
MUSCLE = 4

CANONICAL_CODEBOOK = {
    BACKGROUND: "background",
    BRAIN: "brain",
    SKULL: "skull",
    FAT: "subcutaneous_fat",
    MUSCLE: "muscle",
}
CLASS_CODES = {v: k for k, v in CANONICAL_CODEBOOK.items()}
# 颅外组织：评估与体积统计的主要对象
EXTRACRANIAL_CODES = (SKULL, FAT, MUSCLE)

# 世界坐标（RAS）各轴正方向 / 负方向的解剖名
_WORLD_LABELS = (("R", "L"), ("A", "P"), ("S", "I"))
# 标准坐标系下第 k 个体素轴对应的世界轴：A、R、S
_CANONICAL_WORLD_AXES = (1, 0, 2)


def _readonly(arr):
    view = np.asarray(arr).view()
    view.flags.writeable = False
    return view


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """三维标量网格。data 形状为 (H, W, D)，spacing 单位 mm，affine 为体素 -> 世界（mm）的 4x4 矩阵"""

    data: np.ndarray
    spacing: tuple
    affine: np.ndarray = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ShapeError(f"体数据必须为三维，实际 ndim={data.ndim}")
        if min(data.shape) <= 0:
            raise DegenerateVolumeError(f"体数据尺寸为零: {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
            raise DegenerateVolumeError(f"体素间距必须为三个正有限数: {self.spacing}")
        affine = np.diag(spacing + (1.0,)) if self.affine is None else np.array(self.affine, dtype=np.float64)
        if affine.shape != (4, 4):
            raise OrientationError(f"affine 必须为 4x4，实际 {affine.shape}")
        if not abs(np.linalg.det(affine[:3, :3])) > 0:
            raise OrientationError("affine 的 3x3 部分不可逆")
        object.__setattr__(self, "data", _readonly(data))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", _readonly(affine))

    @property
    def dims(self):
        return tuple(int(n) for n in self.data.shape)

    @property
    def voxel_volume_mm3(self):
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def with_data(self, data):
        """同几何、新数据"""
        return VoxelGrid(data, self.spacing, self.affine)

    def is_isotropic(self, rtol=1e-6):
        return bool(np.allclose(self.spacing, self.spacing[0], rtol=rtol, atol=0.0))


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """整数类别编码的体数据；codebook: 编码 -> 类别名"""

    grid: VoxelGrid
    codebook: dict = field(default_factory=lambda: dict(CANONICAL_CODEBOOK))

    def __post_init__(self):
        if not np.issubdtype(self.grid.data.dtype, np.integer):
            raise CodebookError(f"标签体必须为整数类型，实际 {self.grid.data.dtype}")
        present = set(int(v) for v in np.unique(self.grid.data))
        unknown = sorted(present - set(self.codebook))
        if unknown:
            raise CodebookError(f"标签值不在编码表中: {unknown}")
        object.__setattr__(self, "codebook", dict(self.codebook))

    @property
    def data(self):
        return self.grid.data

    @property
    def dims(self):
        return self.grid.dims

    @property
    def spacing(self):
        return self.grid.spacing

    def with_data(self, data):
        return LabelVolume(self.grid.with_data(data), self.codebook)


@dataclass(frozen=True)
class Orientation:
    """每个体素轴增大方向对应的世界轴与符号，axis_labels 如 ("A", "R", "S")"""

    world_axes: tuple
    signs: tuple

    @property
    def axis_labels(self):
        return tuple(_WORLD_LABELS[w][0 if s > 0 else 1] for w, s in zip(self.world_axes, self.signs))

    @property
    def is_canonical(self):
        return self.world_axes == _CANONICAL_WORLD_AXES and self.signs == (1, 1, 1)


def orientation_of(affine):
    """由 affine 推断各体素轴的解剖方向；斜切时按最大分量做一一指派"""
    affine = np.asarray(affine, dtype=np.float64)
    rot = affine[:3, :3]
    if not abs(np.linalg.det(rot)) > 0:
        raise OrientationError("affine 的 3x3 部分不可逆，无法确定方向")
    unit = rot / np.linalg.norm(rot, axis=0, keepdims=True)
    # cost[j, i]: 体素轴 j 指派到世界轴 i
    voxel_axes, world_axes = linear_sum_assignment(-np.abs(unit.T))
    order = np.argsort(voxel_axes)
    world = tuple(int(world_axes[k]) for k in order)
    signs = tuple(1 if unit[world[j], j] > 0 else -1 for j in range(3))
    return Orientation(world, signs)


def canonicalize(grid):
    """
    转到标准坐标系（第 1 轴向前、第 3 轴向上），只做轴置换与翻转。
    affine 同步更新，保证每个体素的世界坐标不变。
    """
    orient = orientation_of(grid.affine)
    if orient.is_canonical:
        return grid
    perm = [orient.world_axes.index(w) for w in _CANONICAL_WORLD_AXES]
    flips = [orient.signs[j] < 0 for j in perm]
    data = np.transpose(grid.data, perm)
    transform = np.zeros((4, 4))
    transform[3, 3] = 1.0
    for k, j in enumerate(perm):
        if flips[k]:
            data = np.flip(data, axis=k)
            transform[j, k] = -1.0
            transform[j, 3] = data.shape[k] - 1
        else:
            transform[j, k] = 1.0
    spacing = tuple(grid.spacing[j] for j in perm)
    logger.debug("方向标准化: %s -> ARS, perm=%s flips=%s", orient.axis_labels, perm, flips)
    return VoxelGrid(np.ascontiguousarray(data), spacing, grid.affine @ transform)


def canonicalize_labels(labels):
    return LabelVolume(canonicalize(labels.grid), labels.codebook)


def resample_isotropic(grid, target_mm=1.0, mode="nearest"):
    """
    重采样到 target_mm 各向同性。
    输出网格与输入共用世界坐标原点角点；nearest 用于标签（不引入新编码），trilinear 用于强度。
    """
    if not target_mm > 0:
        raise PreconditionError(f"目标体素尺寸必须为正: {target_mm}")
    if mode not in ("nearest", "trilinear"):
        raise PreconditionError(f"未知重采样模式: {mode}")
    if min(grid.dims) <= 0:
        raise DegenerateVolumeError("零尺寸体数据无法重采样")
    t = float(target_mm)
    out_shape = tuple(max(1, int(round(n * s / t))) for n, s in zip(grid.dims, grid.spacing))
    zoom = np.array([t / s for s in grid.spacing])
    offset = 0.5 * zoom - 0.5
    if mode == "nearest":
        data = ndimage.affine_transform(
            grid.data, zoom, offset=offset, output_shape=out_shape, order=0, mode="nearest", prefilter=False
        )
    else:
        data = ndimage.affine_transform(
            grid.data.astype(np.float64), zoom, offset=offset, output_shape=out_shape,
            order=1, mode="nearest", prefilter=False,
        )
    transform = np.eye(4)
    transform[:3, :3] = np.diag(zoom)
    transform[:3, 3] = offset
    logger.debug("重采样: %s @ %s -> %s @ %.3fmm (%s)", grid.dims, grid.spacing, out_shape, t, mode)
    return VoxelGrid(data, (t, t, t), grid.affine @ transform)


def resample_labels(labels, target_mm=1.0):
    return LabelVolume(resample_isotropic(labels.grid, target_mm, "nearest"), labels.codebook)


def pitch_matrix(pitch_deg):
    """
    绕左右轴（第 2 轴）的旋转矩阵，作用于 (前后, 左右, 上下) 物理坐标。
    pitch > 0 为前倾：前方的点向下移动。
    """
    theta = np.deg2rad(pitch_deg)
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotate_labels(labels, pitch_deg, max_abs_pitch=30.0):
    """
    标签体绕非背景体素质心做俯仰旋转，最近邻反向映射。
    映射到输入范围外的体素置为背景；输出尺寸与间距不变。
    """
    if abs(pitch_deg) > max_abs_pitch:
        raise PreconditionError(f"俯仰角超出范围: |{pitch_deg}| > {max_abs_pitch}")
    data = labels.data
    foreground = data != BACKGROUND
    if not foreground.any():
        raise DegenerateVolumeError("标签体全为背景，无法确定旋转中心")
    if pitch_deg == 0:
        return labels
    center = np.array(ndimage.center_of_mass(foreground))
    scale = np.diag(labels.spacing)
    # 输出体素 -> 输入体素：S^-1 R^T S
    matrix = np.linalg.inv(scale) @ pitch_matrix(pitch_deg).T @ scale
    offset = center - matrix @ center
    rotated = ndimage.affine_transform(
        data, matrix, offset=offset, output_shape=labels.dims, order=0,
        mode="constant", cval=BACKGROUND, prefilter=False,
    )
    logger.debug("俯仰旋转 %.2f°，中心 %s", pitch_deg, np.round(center, 2).tolist())
    return labels.with_data(rotated)


def class_mask(labels, code):
    """labels == code 的二值网格（uint8）"""
    if code not in labels.codebook:
        raise CodebookError(f"编码 {code} 不在编码表中")
    return labels.grid.with_data((labels.data == code).astype(np.uint8))


def merge_labels(grid, table, codebook=None):
    """
    按映射表合并原始标签。
    table: 原始值 -> 标准编码（int）或类别名（str）；表中未出现的值保持原值
    """
    codebook = dict(codebook or CANONICAL_CODEBOOK)
    names = {v: k for k, v in codebook.items()}
    data = np.asarray(grid.data)
    if not np.issubdtype(data.dtype, np.integer):
        raise CodebookError(f"合并标签需要整数数据，实际 {data.dtype}")
    out = data.astype(np.int32, copy=True)
    for raw, target in (table or {}).items():
        if isinstance(target, str):
            if target not in names:
                raise CodebookError(f"映射目标类别未知: {target}")
            target = names[target]
        out[data == int(raw)] = int(target)
    if out.size and out.max() <= np.iinfo(np.uint8).max and out.min() >= 0:
        out = out.astype(np.uint8)
    return LabelVolume(grid.with_data(out), codebook)
