"""
公共 fixture：随机数、NIfTI 写出、清单写出
"""

import numpy as np
import pytest

from nifti_io import write_volume


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


@pytest.fixture
def write_nifti(tmp_path):
    """write_nifti(name, volume, byteorder="<") -> 路径字符串"""

    def _write(name, volume, byteorder="<"):
        path = tmp_path / name
        write_volume(volume, path, byteorder=byteorder)
        return str(path)

    return _write


@pytest.fixture
def write_manifest(tmp_path):
    """write_manifest(name, header, rows, sep=",") -> 路径字符串；rows 为单元格列表"""

    def _write(name, header, rows, sep=","):
        lines = [sep.join(header)]
        lines += [sep.join("" if v is None else str(v) for v in row) for row in rows]
        path = tmp_path / name
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return str(path)

    return _write
