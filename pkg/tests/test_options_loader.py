import os
from concurrent.futures import ThreadPoolExecutor

import pytest

import options_loader


@pytest.fixture
def options_file(tmp_path, monkeypatch):
    """把参数文件指向 tmp_path 下的 YAML；返回写入函数"""
    path = tmp_path / "options.yaml"
    monkeypatch.setattr(options_loader, "_OPTIONS_FILE", str(path))
    monkeypatch.setattr(options_loader, "_options_cache", None)
    monkeypatch.setattr(options_loader, "_options_key", None)

    def _write(text):
        path.write_text(text, encoding="utf-8")
        return path

    return _write


def test_shipped_defaults():
    assert options_loader.get_hu_options()["threshold"] == 471
    assert options_loader.get_hu_options()["sweep"] == [300, 400, 471, 500, 800]
    thickness = options_loader.get_thickness_options()
    assert thickness["n_points"] == 100
    assert thickness["trim_percentiles"] == [2.5, 97.5]
    assert options_loader.get_mann_whitney_exact_below() == 8


def test_missing_file_falls_back(options_file):
    assert options_loader.get_thickness_options() == options_loader.DEFAULT_OPTIONS["thickness"]


def test_partial_file_is_merged(options_file):
    options_file("thickness:\n  n_points: 50\n")
    thickness = options_loader.get_thickness_options()
    assert thickness["n_points"] == 50
    assert thickness["slab_mm"] == 16.0
    assert options_loader.get_ablation_options()["pitch_deg"] == 5.0


def test_returned_options_are_copies(options_file):
    options_file("hu:\n  threshold: 300\n")
    options_loader.get_hu_options()["threshold"] = 0
    assert options_loader.get_hu_options()["threshold"] == 300


def test_label_merge_table():
    assert options_loader.get_label_merge_table() == {
        1: "brain", 2: "skull", 3: "subcutaneous_fat", 4: "muscle", 5: "muscle", 6: "background",
    }


def test_concurrent_reads_share_one_load(options_file):
    path = options_file("raw_label_codes:\n  brain: 11\n  skull: 12\n")
    with ThreadPoolExecutor(max_workers=16) as pool:
        tables = list(pool.map(lambda _: options_loader.get_label_merge_table(), range(64)))
    assert all(t == tables[0] for t in tables)
    assert tables[0][11] == "brain" and tables[0][12] == "skull"
    assert options_loader._options_key == (str(path), path.stat().st_mtime_ns)

    path.write_text("raw_label_codes:\n  brain: 21\n", encoding="utf-8")
    stat = path.stat()
    os.utime(path, ns=(stat.st_atime_ns, stat.st_mtime_ns + 10**9))
    with ThreadPoolExecutor(max_workers=16) as pool:
        reloaded = list(pool.map(lambda _: options_loader.get_label_merge_table(), range(64)))
    assert all(t == reloaded[0] for t in reloaded)
    assert reloaded[0][21] == "brain" and 11 not in reloaded[0]


def test_likert_bins():
    bins = options_loader.get_likert_bins()
    assert bins[2] == "Acceptable" and bins[4] == "Unacceptable" and bins[5] == "BadImage"


def test_snapshot_skips_none_overrides():
    snap = options_loader.build_snapshot({"thickness": {"n_points": 40, "pooling": None}, "extra": {"a": 1}})
    assert snap["thickness"]["n_points"] == 40
    assert snap["thickness"]["pooling"] == "pooled"
    assert snap["extra"] == {"a": 1}
