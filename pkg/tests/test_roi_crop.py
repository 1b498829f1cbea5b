import numpy as np
import pytest

from errors import EmptyBrainError, MaskError, ShapeError
from phantoms import grid, head_phantom, labels, random_masks
from roi_crop import CropBoundary, apply_crop, brain_boundary, crop_pipeline, top_points
from volume_core import BRAIN, FAT, SKULL


def _oracle(mask):
    """逐层逐体素的直接实现"""
    h, _, d = mask.shape
    top = np.zeros(d, dtype=np.int64)
    for z in range(d):
        for x in range(h):
            if mask[x, :, z].any():
                top[z] = x
    adjusted = np.zeros(d, dtype=np.int64)
    running = 0
    for z in range(d):
        running = max(running, top[z])
        adjusted[z] = running
    keep = np.zeros(mask.shape, dtype=bool)
    for z in range(d):
        keep[: adjusted[z] + 1, :, z] = True
    return top, adjusted, keep


def test_top_points_hand_example():
    mask = np.zeros((4, 2, 3), dtype=np.uint8)
    mask[2, 0, 0] = 1
    mask[1, 1, 2] = 1
    b = top_points(grid(mask))
    assert b.top.tolist() == [2, 0, 1]
    assert b.adjusted.tolist() == [2, 2, 2]


def test_top_points_monotone_staircase():
    mask = np.zeros((6, 1, 4), dtype=np.uint8)
    mask[1, 0, 0] = 1
    mask[4, 0, 1] = 1
    mask[2, 0, 2] = 1
    mask[5, 0, 3] = 1
    b = top_points(grid(mask))
    assert b.top.tolist() == [1, 4, 2, 5]
    assert b.adjusted.tolist() == [1, 4, 4, 5]


def test_crop_matches_oracle_on_random_masks(rng):
    for _ in range(200):
        mask = random_masks(rng, (16, 16, 16), density=rng.uniform(0.05, 0.5))
        data = np.where(rng.random(mask.shape) < 0.5, SKULL, FAT).astype(np.uint8)
        data[mask] = BRAIN
        lv = labels(data)
        cropped, boundary = crop_pipeline(lv, allow_empty_brain=True)
        top, adjusted, keep = _oracle(mask)
        assert np.array_equal(boundary.top, top)
        assert np.array_equal(boundary.adjusted, adjusted)
        assert np.array_equal(cropped.data, np.where(keep, data, 0))


def test_crop_invariants_on_head():
    lv = head_phantom()
    cropped, boundary = crop_pipeline(lv)
    assert np.all(np.diff(boundary.adjusted) >= 0)
    assert np.all(boundary.adjusted >= boundary.top)
    # 裁剪只会把体素置为背景
    changed = cropped.data != lv.data
    assert np.all(cropped.data[changed] == 0)
    # 脑组织不受影响
    assert np.count_nonzero(cropped.data == BRAIN) == np.count_nonzero(lv.data == BRAIN)
    assert np.count_nonzero(cropped.data == FAT) < np.count_nonzero(lv.data == FAT)


def test_crop_is_idempotent():
    lv = head_phantom()
    once, b1 = crop_pipeline(lv)
    twice, b2 = crop_pipeline(once)
    assert np.array_equal(once.data, twice.data)
    assert np.array_equal(b1.adjusted, b2.adjusted)


def test_external_brain_mask_and_intensity_crop():
    lv = head_phantom()
    mask = grid((lv.data == BRAIN).astype(np.uint8))
    boundary = brain_boundary(lv, mask)
    ct = grid(np.full(lv.dims, 50.0, dtype=np.float32))
    out = apply_crop(ct, boundary)
    assert out.data.dtype == np.float32
    x = np.arange(lv.dims[0])[:, None, None]
    outside = x > boundary.adjusted[None, None, :]
    assert np.all(out.data[outside] == 0)
    assert np.all(out.data[~outside] == 50.0)


def test_empty_brain_rejected():
    lv = labels(np.full((5, 5, 5), SKULL, dtype=np.uint8))
    with pytest.raises(EmptyBrainError):
        crop_pipeline(lv)


def test_empty_brain_allowed_keeps_front_plane():
    lv = labels(np.full((5, 5, 5), SKULL, dtype=np.uint8))
    cropped, boundary = crop_pipeline(lv, allow_empty_brain=True)
    assert boundary.adjusted.tolist() == [0] * 5
    assert np.all(cropped.data[0] == SKULL)
    assert np.count_nonzero(cropped.data[1:]) == 0


def test_mask_must_be_binary():
    with pytest.raises(MaskError):
        top_points(grid(np.full((2, 2, 2), 2, dtype=np.uint8)))


def test_shape_mismatch():
    lv = head_phantom()
    boundary = top_points(grid(np.ones((4, 4, 4), dtype=np.uint8)))
    with pytest.raises(ShapeError):
        apply_crop(lv, boundary)


def test_boundary_text_round_trip():
    b = top_points(grid((head_phantom().data == BRAIN).astype(np.uint8)))
    back = CropBoundary.from_text(b.to_text(), b.dims)
    assert np.array_equal(back.adjusted, b.adjusted)
    with pytest.raises(ShapeError):
        CropBoundary.from_text("1\n2\n", b.dims)
