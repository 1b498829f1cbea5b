import numpy as np
import pytest

from errors import EmptySliceError, PreconditionError, ShapeError, ThicknessError
from morphometry import (
    hu_bone_mask,
    hu_window_sweep,
    slice_contours,
    slice_thickness,
    summarize_thickness,
    thickness_pipeline,
    tilt_ablation,
    trim_central,
    volumes,
)
from phantoms import (
    annulus_slice,
    ct_head,
    expected_slab_thickness,
    fat_pad_phantom,
    grid,
    head_phantom,
    labels,
    shell_mask_grid,
    sphere_in_shell,
    stack_slice,
)
from roi_crop import top_points
from volume_core import BRAIN, FAT, MUSCLE, SKULL


@pytest.fixture(scope="module")
def shell60():
    return shell_mask_grid(60.0, 5.0, 1.0)


@pytest.fixture(scope="module")
def shell60_estimate(shell60):
    mask, equator = shell60
    return thickness_pipeline(mask, equator - 10)


def _expected_median(outer, wall, spacing, slab_mm=16.0):
    n = int(round(slab_mm / spacing))
    return float(np.median(expected_slab_thickness(outer, wall, np.arange(n) * spacing)))


# =============================================================================
# 体积
# =============================================================================

def test_volumes_counts_and_units():
    data = np.array([0, 1, 1, 2, 3, 3, 3, 4], dtype=np.uint8).reshape(2, 2, 2)
    report = volumes(labels(data, (1.0, 1.0, 2.0)))
    brain = report.get("brain")
    assert (brain.voxels, brain.mm3, brain.cm3) == (2, 4.0, 0.004)
    assert report.get("subcutaneous_fat").voxels == 3
    assert report.get("muscle").mm3 == 2.0
    assert report.total_mm3 == 16.0
    assert not report.crop_applied


def test_volumes_with_crop_drop_facial_tissue():
    lv = head_phantom()
    boundary = top_points(grid((lv.data == BRAIN).astype(np.uint8)))
    full = volumes(lv)
    cropped = volumes(lv, boundary)
    assert cropped.crop_applied
    assert cropped.get("brain").voxels == full.get("brain").voxels
    assert cropped.get("subcutaneous_fat").voxels < full.get("subcutaneous_fat").voxels
    assert cropped.get("muscle").voxels <= full.get("muscle").voxels


def test_volumes_boundary_shape_mismatch():
    lv = head_phantom()
    boundary = top_points(grid(np.ones((4, 4, 4), dtype=np.uint8)))
    with pytest.raises(ShapeError):
        volumes(lv, boundary)


def test_volumes_reports_absent_class_as_zero():
    data = np.ones((3, 3, 3), dtype=np.uint8)
    report = volumes(labels(data))
    assert report.get("muscle").voxels == 0
    assert report.get("muscle").mm3 == 0.0


# =============================================================================
# HU 骨阈值
# =============================================================================

def test_hu_mask_is_strictly_greater():
    ct = grid(np.array([470.0, 471.0, 472.0, 1000.0, -1000.0, 0.0, 471.5, 40.0]).reshape(2, 2, 2))
    mask = hu_bone_mask(ct, 471.0)
    assert mask.data.dtype == np.uint8
    assert int(mask.data.sum()) == 3


def test_hu_mask_monotone_in_threshold(rng):
    ct = grid(rng.normal(300.0, 400.0, size=(12, 12, 12)))
    counts = [int(hu_bone_mask(ct, t).data.sum()) for t in (0.0, 200.0, 471.0, 800.0, 1500.0)]
    assert counts == sorted(counts, reverse=True)


@pytest.mark.parametrize("threshold", [300.0, 400.0, 471.0, 500.0, 800.0])
def test_hu_mask_recovers_shell(threshold):
    ct, bone = ct_head()
    assert np.array_equal(hu_bone_mask(ct, threshold).data.astype(bool), bone)


def test_hu_bone_volume_never_grows_across_sweep():
    ct, bone = ct_head()
    thresholds = (0.0, 300.0, 400.0, 471.0, 500.0, 800.0, 1000.0)
    counts = [int(hu_bone_mask(ct, t).data.sum()) for t in thresholds]
    assert counts == sorted(counts, reverse=True)
    assert counts[0] > int(bone.sum()) and counts[-1] == 0


# =============================================================================
# 轮廓
# =============================================================================

def test_annulus_contours():
    sl = annulus_slice((41, 41), (20, 20), 15, 10)
    c = slice_contours(stack_slice(sl), 1)
    assert not c.open_skull
    r_outer = np.hypot(c.outer[:, 0] - 20, c.outer[:, 1] - 20)
    r_inner = np.hypot(c.inner[:, 0] - 20, c.inner[:, 1] - 20)
    assert np.all(np.abs(r_outer - 15) <= 1.5)
    assert np.all((r_inner > 9.5) & (r_inner < 12.0))


def test_contours_scaled_by_spacing():
    sl = annulus_slice((41, 41), (20, 20), 15, 10)
    c = slice_contours(stack_slice(sl, spacing=0.5), 0)
    r_outer = np.hypot(c.outer[:, 0] - 10, c.outer[:, 1] - 10)
    assert np.all(np.abs(r_outer - 7.5) <= 0.75)


def test_disk_is_open_skull():
    sl = annulus_slice((21, 21), (10, 10), 8, -1)
    c = slice_contours(stack_slice(sl), 0)
    assert c.open_skull
    assert c.inner is None


def test_largest_component_wins():
    sl = annulus_slice((61, 61), (30, 30), 15, 10)
    sl[2:6, 2:6] = 1
    c = slice_contours(stack_slice(sl), 0)
    r_outer = np.hypot(c.outer[:, 0] - 30, c.outer[:, 1] - 30)
    assert np.all(np.abs(r_outer - 15) <= 1.5)


def test_empty_slice():
    with pytest.raises(EmptySliceError):
        slice_contours(stack_slice(np.zeros((8, 8))), 0)


def test_slice_out_of_range():
    with pytest.raises(PreconditionError):
        slice_contours(stack_slice(np.ones((8, 8))), 5)


# =============================================================================
# 单层厚度
# =============================================================================

def _square_ring():
    sl = np.zeros((41, 41), dtype=np.uint8)
    sl[10:31, 10:31] = 1
    sl[14:27, 14:27] = 0
    return stack_slice(sl)


def test_square_ring_normal_rays():
    st = slice_thickness(_square_ring(), 1, n_points=4)
    assert st.usable
    assert len(st.samples) == 4
    assert st.samples == pytest.approx([4.0] * 4, abs=1e-6)


def test_square_ring_nearest():
    st = slice_thickness(_square_ring(), 1, n_points=4, method="nearest")
    assert st.samples == pytest.approx([4.0] * 4, abs=1e-6)


def test_annulus_wall_five_mm():
    sl = annulus_slice((101, 101), (50, 50), 40, 35)
    st = slice_thickness(stack_slice(sl), 1, n_points=100)
    assert len(st.samples) >= 90
    assert np.median(st.samples) == pytest.approx(5.0, abs=0.5)
    assert max(st.samples) < 8.0


def test_one_voxel_ring():
    sl = annulus_slice((31, 31), (15, 15), 10, 9)
    st = slice_thickness(stack_slice(sl), 1, n_points=50)
    assert st.samples
    assert all(0 < s <= 3.0 for s in st.samples)
    assert 0.5 <= np.median(st.samples) <= 2.5


def test_open_slice_has_no_samples():
    sl = annulus_slice((21, 21), (10, 10), 8, -1)
    st = slice_thickness(stack_slice(sl), 0)
    assert st.open_skull and not st.usable and st.samples == []


def test_cap_discards_long_rays():
    sl = annulus_slice((101, 101), (50, 50), 40, 35)
    st = slice_thickness(stack_slice(sl), 1, n_points=40, cap_mm=3.0)
    assert st.samples == []


def test_unknown_method():
    with pytest.raises(PreconditionError):
        slice_thickness(_square_ring(), 1, method="radial")


# =============================================================================
# 厚度汇总
# =============================================================================

def test_trim_central_keeps_middle():
    kept = trim_central(np.arange(1, 101, dtype=np.float64))
    assert kept.min() == 4.0 and kept.max() == 97.0
    assert len(kept) == 94
    assert trim_central([]).size == 0


def test_shell_median(shell60_estimate):
    est = shell60_estimate
    assert not est.degraded
    assert len(est.slice_indices) == 16
    assert est.median_mm == pytest.approx(_expected_median(60.0, 5.0, 1.0), abs=0.5)
    assert len(est.trimmed_pool) < len(est.raw_pool)


def test_slab_geometry(shell60, shell60_estimate):
    _, equator = shell60
    assert shell60_estimate.start_slice == equator
    assert shell60_estimate.slice_indices == list(range(equator, equator + 16))


def test_single_thick_slice_barely_moves_median(shell60, shell60_estimate):
    mask, equator = shell60
    data = np.array(mask.data)
    n = data.shape[0]
    y, x = np.mgrid[:n, :n]
    r = np.hypot(y - equator, x - equator)
    z = equator + 3
    plane_outer = np.sqrt(60.0 ** 2 - 3.0 ** 2)
    data[:, :, z] = ((r <= plane_outer) & (r > plane_outer - 25.0)).astype(np.uint8)
    est = thickness_pipeline(mask.with_data(data), equator - 10)
    assert abs(est.median_mm - shell60_estimate.median_mm) < 0.2


def test_jobs_do_not_change_result(shell60, shell60_estimate):
    mask, equator = shell60
    est = thickness_pipeline(mask, equator - 10, jobs=4)
    assert est.raw_pool == shell60_estimate.raw_pool
    assert est.median_mm == shell60_estimate.median_mm


def test_per_slice_pooling(shell60):
    mask, equator = shell60
    est = thickness_pipeline(mask, equator - 10, pooling="per-slice")
    assert est.pooling == "per-slice"
    assert est.median_mm == pytest.approx(_expected_median(60.0, 5.0, 1.0), abs=0.5)


def test_nearest_method_on_shell(shell60):
    mask, equator = shell60
    est = thickness_pipeline(mask, equator - 10, method="nearest")
    assert est.method == "nearest"
    assert est.median_mm == pytest.approx(_expected_median(60.0, 5.0, 1.0), abs=0.5)


def test_resolution_consistency():
    coarse, eq_coarse = shell_mask_grid(30.0, 5.0, 1.0)
    fine, eq_fine = shell_mask_grid(30.0, 5.0, 0.5)
    m_coarse = thickness_pipeline(coarse, eq_coarse - 10).median_mm
    m_fine = thickness_pipeline(fine, eq_fine - 20).median_mm
    assert m_coarse == pytest.approx(_expected_median(30.0, 5.0, 1.0), abs=0.5)
    assert m_fine == pytest.approx(_expected_median(30.0, 5.0, 0.5), abs=0.5)
    assert abs(m_fine - m_coarse) < 0.5


def test_slab_near_vertex_is_degraded():
    mask, equator = shell_mask_grid(30.0, 5.0, 1.0)
    est = thickness_pipeline(mask, equator + 8)
    assert est.degraded
    reasons = set(est.skipped.values())
    assert "open-skull" in reasons
    assert "empty" in reasons
    assert all(z < equator + 26 for z in est.slice_indices)


def test_slab_past_top_of_volume():
    mask, equator = shell_mask_grid(30.0, 5.0, 1.0)
    cut = mask.with_data(np.ascontiguousarray(mask.data[:, :, : equator + 12]))
    est = thickness_pipeline(cut, equator - 10)
    assert est.degraded
    assert len(est.slice_indices) == 12
    assert [z for z, why in est.skipped.items() if why == "out-of-volume"] == list(range(equator + 12, equator + 16))


def test_no_usable_slice():
    mask, equator = shell_mask_grid(30.0, 5.0, 1.0)
    with pytest.raises(ThicknessError):
        thickness_pipeline(mask, mask.dims[2] - 1)


def test_pipeline_requires_isotropic():
    mask = grid(np.zeros((8, 8, 8), dtype=np.uint8), (1.0, 1.0, 2.0))
    with pytest.raises(PreconditionError):
        thickness_pipeline(mask, 0)


def test_pipeline_reference_out_of_range():
    mask = grid(np.zeros((8, 8, 8), dtype=np.uint8))
    with pytest.raises(PreconditionError):
        thickness_pipeline(mask, 8)


def test_hu_window_sweep():
    ct, _ = ct_head()
    results = hu_window_sweep(ct, 22, thresholds=(0.0, 300.0, 471.0, 800.0, 1000.0))
    by_threshold = {r.threshold_hu: r for r in results}
    # 0 HU 时软组织并入骨掩码，层内没有内腔
    assert by_threshold[0.0].estimate is None and by_threshold[0.0].excluded
    # 1000 HU 严格大于判断下掩码为空
    assert by_threshold[1000.0].estimate is None
    medians = {by_threshold[t].estimate.median_mm for t in (300.0, 471.0, 800.0)}
    assert len(medians) == 1
    assert medians.pop() == pytest.approx(_expected_median(24.0, 4.0, 1.0), abs=0.5)


def test_summarize_thickness():
    assert summarize_thickness([]) == (None, None)
    assert summarize_thickness([5.0, None]) == (5.0, None)
    mean, sd = summarize_thickness([4.0, 6.0])
    assert mean == 5.0
    assert sd == pytest.approx(np.sqrt(2.0))


# =============================================================================
# 俯仰消融
# =============================================================================

def test_zero_pitch_has_no_change():
    report = tilt_ablation(head_phantom(), pitches=(0.0,))
    assert report.rows
    assert all(r.percent == 0.0 and r.tilted_mm3 == r.baseline_mm3 for r in report.rows)


def test_sphere_in_shell_cohort_is_tilt_invariant(rng):
    for _ in range(20):
        center = tuple(int(c) for c in rng.integers(34, 39, size=3))
        report = tilt_ablation(sphere_in_shell(center=center, brain_r=float(rng.uniform(18.0, 21.0))))
        assert {r.pitch_deg for r in report.rows} == {5.0, -5.0}
        assert {r.code for r in report.rows} == {BRAIN, SKULL, FAT, MUSCLE}
        assert max(r.percent for r in report.rows) < 3.0


def test_fat_pad_is_tilt_sensitive():
    report = tilt_ablation(fat_pad_phantom())
    fat = [r.percent for r in report.rows if r.code == FAT]
    skull = [r.percent for r in report.rows if r.code == SKULL]
    assert len(fat) == 2 and len(skull) == 2
    assert np.mean(fat) > np.mean(skull)
    assert not any(r.code == MUSCLE for r in report.rows)


def test_tilt_percent_definition():
    report = tilt_ablation(head_phantom(), pitches=(5.0,))
    for r in report.rows:
        assert r.abs_delta_mm3 == pytest.approx(abs(r.tilted_mm3 - r.baseline_mm3))
        assert r.percent == pytest.approx(100.0 * r.abs_delta_mm3 / r.baseline_mm3)


def test_tilt_rejects_large_pitch():
    with pytest.raises(PreconditionError):
        tilt_ablation(head_phantom(), pitches=(45.0,))
