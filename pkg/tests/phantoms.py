"""
测试用合成体模：球、球壳、圆环、头部体模、CT 头部
坐标均为标准方向（第 1 轴向前，第 3 轴向上），单位 mm
"""

import numpy as np
from scipy import ndimage

from volume_core import BRAIN, FAT, MUSCLE, SKULL, LabelVolume, VoxelGrid


def canonical_affine(spacing=(1.0, 1.0, 1.0)):
    """标准方向的 affine：第 1 轴 -> 世界 A，第 2 轴 -> 世界 R，第 3 轴 -> 世界 S"""
    affine = np.zeros((4, 4))
    affine[1, 0], affine[0, 1], affine[2, 2], affine[3, 3] = spacing[0], spacing[1], spacing[2], 1.0
    return affine


def grid(data, spacing=(1.0, 1.0, 1.0), affine=None):
    """默认使用标准方向 affine，写出后再读入不会被重新排轴"""
    affine = canonical_affine(spacing) if affine is None else affine
    return VoxelGrid(np.asarray(data), spacing, affine)


def labels(data, spacing=(1.0, 1.0, 1.0), affine=None):
    return LabelVolume(grid(np.asarray(data, dtype=np.uint8), spacing, affine))


def radius_field(shape, center, spacing=(1.0, 1.0, 1.0), scale=(1.0, 1.0, 1.0)):
    """各体素中心到 center（体素坐标）的物理距离；scale 拉伸各轴得到椭球"""
    axes = [
        ((np.arange(n) - c) * s / k) ** 2
        for n, c, s, k in zip(shape, center, spacing, scale)
    ]
    return np.sqrt(axes[0][:, None, None] + axes[1][None, :, None] + axes[2][None, None, :])


def sphere(shape, center, radius, spacing=(1.0, 1.0, 1.0)):
    return radius_field(shape, center, spacing) <= radius


def shell(shape, center, outer, wall, spacing=(1.0, 1.0, 1.0)):
    """outer - wall < r <= outer 的球壳"""
    r = radius_field(shape, center, spacing)
    return (r <= outer) & (r > outer - wall)


def shell_mask_grid(outer=60.0, wall=5.0, spacing=1.0, margin=4):
    """
    球壳二值网格，返回 (网格, 赤道层号)。
    体积恰好包住球壳，球心在体素中心
    """
    half = int(np.ceil(outer / spacing)) + margin
    n = 2 * half + 1
    center = (half, half, half)
    data = shell((n, n, n), center, outer, wall, (spacing,) * 3).astype(np.uint8)
    return grid(data, (spacing,) * 3), half


def expected_slab_thickness(outer, wall, offsets_mm):
    """各层面内的解析壁厚：sqrt(R²−dz²) − sqrt((R−w)²−dz²)"""
    dz = np.asarray(offsets_mm, dtype=np.float64)
    inner = outer - wall
    return np.sqrt(outer ** 2 - dz ** 2) - np.sqrt(inner ** 2 - dz ** 2)


def annulus_slice(shape2d, center, outer, inner):
    """二维圆环：inner < r <= outer（像素）"""
    y, x = np.mgrid[: shape2d[0], : shape2d[1]]
    r = np.hypot(y - center[0], x - center[1])
    return ((r <= outer) & (r > inner)).astype(np.uint8)


def stack_slice(sl, depth=3, spacing=1.0):
    """把二维切片复制成 depth 层的三维网格"""
    data = np.repeat(np.asarray(sl, dtype=np.uint8)[:, :, None], depth, axis=2)
    return grid(data, (spacing,) * 3)


def head_phantom(shape=(64, 64, 64), center=(32, 32, 32)):
    """
    脑椭球（前后方向拉长）外包颅骨、皮下脂肪，两侧为肌肉。
    返回 LabelVolume
    """
    r = radius_field(shape, center, scale=(1.1, 1.0, 1.0))
    dy = np.abs(np.arange(shape[1]) - center[1])[None, :, None]
    data = np.zeros(shape, dtype=np.uint8)
    data[r < 18] = BRAIN
    data[(r >= 18) & (r < 22)] = SKULL
    data[(r >= 22) & (r < 25)] = FAT
    data[(r >= 25) & (r < 28) & (dy > 10)] = MUSCLE
    return labels(data)


def sphere_in_shell(shape=(72, 72, 72), center=(36, 36, 36), brain_r=20.0):
    """
    球形头部：脑球 + 颅骨壳 + 脂肪壳 + 两侧肌肉带。
    各层都绕左右轴旋转对称
    """
    r = radius_field(shape, center)
    dy = np.abs(np.arange(shape[1]) - center[1])[None, :, None]
    data = np.zeros(shape, dtype=np.uint8)
    data[r <= brain_r] = BRAIN
    data[(r > brain_r) & (r <= brain_r + 4)] = SKULL
    data[(r > brain_r + 4) & (r <= brain_r + 7)] = FAT
    data[(r > brain_r + 7) & (r <= brain_r + 10) & (dy > 12)] = MUSCLE
    return labels(data)


def fat_pad_phantom(shape=(80, 80, 80), center=(40, 40, 40)):
    """
    脑球 R=20 + 颅骨壳，前上方一块薄脂肪垫横跨裁剪面 x = cx+20：
    旋转后垫子相对裁剪面前后移动，保留部分的比例变化远大于颅骨
    """
    cx, cy, cz = center
    r = radius_field(shape, center)
    data = np.zeros(shape, dtype=np.uint8)
    data[r <= 20] = BRAIN
    data[(r > 20) & (r <= 24)] = SKULL
    data[cx + 17: cx + 24, cy - 6: cy + 7, cz + 8: cz + 10] = FAT
    return labels(data)


def ct_head(shape=(64, 64, 64), center=(32, 32, 32), outer=24.0, wall=4.0):
    """
    CT 头部：颅骨壳 1000 HU，壳内及壳外 2mm 软组织 40 HU，其余空气 -1000 HU。
    返回 (VoxelGrid, 颅骨壳布尔掩码)
    """
    r = radius_field(shape, center)
    bone = (r <= outer) & (r > outer - wall)
    data = np.full(shape, -1000.0, dtype=np.float32)
    data[r <= outer + 2] = 40.0
    data[bone] = 1000.0
    return grid(data), bone


def random_masks(rng, shape, density=0.3, smooth=True):
    """随机二值掩码；smooth=True 时做 3x3x3 均值滤波再取阈值，得到成块的形状"""
    m = rng.random(shape) < density
    if smooth:
        m = ndimage.uniform_filter(m.astype(np.float64), size=3) > 0.5 * density + 0.1
    return m
