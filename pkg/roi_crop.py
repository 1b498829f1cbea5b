"""
脑掩码引导的 ROI 裁剪（去面部）
- 逐轴位层求脑组织最前点 T(z)，无脑组织的层 T(z)=0
- T*(z) = max(T(z), T*(z-1))，T*(-1)=0，切割面随 z 单调不回退
- 体素 (x, y, z) 在 x > T*(z) 时置 0（标签置背景）
输入须为标准方向（第 1 轴向前，第 3 轴向上）
"""

import logging
from dataclasses import dataclass

import numpy as np

from errors import EmptyBrainError, MaskError, ShapeError
from volume_core import BACKGROUND, BRAIN, LabelVolume, VoxelGrid, class_mask

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CropBoundary:
    top: np.ndarray       # T(z)
    adjusted: np.ndarray  # T*(z)
    dims: tuple

    def to_text(self):
        """边界旁车文件：每行一个 T*(z)"""
        return "".join(f"{int(v)}\n" for v in self.adjusted)

    @classmethod
    def from_text(cls, text, dims):
        adjusted = np.array([int(line) for line in text.split()], dtype=np.int64)
        if len(adjusted) != dims[2]:
            raise ShapeError(f"边界层数 {len(adjusted)} 与体数据深度 {dims[2]} 不一致")
        return cls(adjusted.copy(), adjusted, tuple(dims))


def top_points(brain_mask):
    """由二值脑掩码计算 T(z) 与 T*(z)"""
    data = np.asarray(brain_mask.data)
    values = np.unique(data)
    if not np.all(np.isin(values, (0, 1))):
        raise MaskError(f"脑掩码必须为 0/1，实际取值 {values[:10].tolist()}")
    # occupied[x, z]：第 z 层第 x 行是否有脑组织
    occupied = data.astype(bool).any(axis=1)
    has_brain = occupied.any(axis=0)
    h = occupied.shape[0]
    last = h - 1 - np.argmax(occupied[::-1, :], axis=0)
    top = np.where(has_brain, last, 0).astype(np.int64)
    adjusted = np.maximum.accumulate(top)
    return CropBoundary(top, adjusted, tuple(data.shape))


def _crop_array(data, boundary):
    if tuple(data.shape) != tuple(boundary.dims):
        raise ShapeError(f"体数据尺寸 {data.shape} 与裁剪边界 {boundary.dims} 不一致")
    x = np.arange(data.shape[0])[:, None, None]
    outside = x > boundary.adjusted[None, None, :]
    return outside


def apply_crop(volume, boundary):
    """x > T*(z) 的体素置 0 / 背景，其余不变；返回同类型"""
    if isinstance(volume, LabelVolume):
        outside = _crop_array(volume.data, boundary)
        data = np.where(outside, np.asarray(BACKGROUND, dtype=volume.data.dtype), volume.data)
        return volume.with_data(data)
    if isinstance(volume, VoxelGrid):
        outside = _crop_array(volume.data, boundary)
        data = np.where(outside, np.zeros((), dtype=volume.data.dtype), volume.data)
        return volume.with_data(data)
    raise TypeError(f"不支持的裁剪对象: {type(volume).__name__}")


def brain_boundary(labels, brain_mask=None, allow_empty_brain=False):
    """
    由标签体的脑类别（或外部脑掩码）求裁剪边界。
    无脑组织时默认报错；allow_empty_brain=True 时返回全零边界
    """
    mask = brain_mask if brain_mask is not None else class_mask(labels, BRAIN)
    if mask.dims != labels.dims:
        raise ShapeError(f"脑掩码尺寸 {mask.dims} 与标签体 {labels.dims} 不一致")
    if not np.asarray(mask.data).any():
        if not allow_empty_brain:
            raise EmptyBrainError("标签体中没有脑组织，无法确定裁剪边界")
        logger.warning("无脑组织，按全零边界裁剪（仅保留 x=0 平面）")
    return top_points(mask)


def crop_pipeline(labels, brain_mask=None, allow_empty_brain=False):
    """
    求边界并裁剪整个标签体，返回 (裁剪后的 LabelVolume, CropBoundary)
    """
    boundary = brain_boundary(labels, brain_mask, allow_empty_brain)
    cropped = apply_crop(labels, boundary)
    logger.debug(
        "ROI 裁剪: 移除 %d 个非背景体素",
        int(np.count_nonzero(labels.data)) - int(np.count_nonzero(cropped.data)),
    )
    return cropped, boundary
