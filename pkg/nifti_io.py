"""
NIfTI-1 读写（.nii / .nii.gz / .hdr+.img）
- 348 字节头，数据位于 vox_offset；大小端由 sizeof_hdr 字节序推断
- gzip 按文件头 0x1F 0x8B 判断，不看扩展名
- affine：sform_code > 0 用 srow，其次 qform 四元数，否则 pixdim 对角阵
- 写出：magic "n+1\\0"，vox_offset 352，sform 取自网格 affine
"""

import gzip
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from errors import (
    DataLengthError,
    LabelDtypeError,
    NiftiFormatError,
    UnsupportedDtypeError,
    VolumeIOError,
)
from volume_core import LabelVolume, VoxelGrid, merge_labels

logger = logging.getLogger(__name__)

HEADER_SIZE = 348
NIFTI2_HEADER_SIZE = 540
WRITE_VOX_OFFSET = 352

# 字段布局（偏移量见注释）
_HEADER_FIELDS = [
    ("sizeof_hdr", "i4"),       # 0; 必须为 348
    ("data_type", "S10"),       # 4
    ("db_name", "S18"),         # 14
    ("extents", "i4"),          # 32
    ("session_error", "i2"),    # 36
    ("regular", "S1"),          # 38
    ("dim_info", "u1"),         # 39
    ("dim", "i2", (8,)),        # 40
    ("intent_p1", "f4"),        # 56
    ("intent_p2", "f4"),        # 60
    ("intent_p3", "f4"),        # 64
    ("intent_code", "i2"),      # 68
    ("datatype", "i2"),         # 70
    ("bitpix", "i2"),           # 72
    ("slice_start", "i2"),      # 74
    ("pixdim", "f4", (8,)),     # 76
    ("vox_offset", "f4"),       # 108
    ("scl_slope", "f4"),        # 112
    ("scl_inter", "f4"),        # 116
    ("slice_end", "i2"),        # 120
    ("slice_code", "u1"),       # 122
    ("xyzt_units", "u1"),       # 123
    ("cal_max", "f4"),          # 124
    ("cal_min", "f4"),          # 128
    ("slice_duration", "f4"),   # 132
    ("toffset", "f4"),          # 136
    ("glmax", "i4"),            # 140
    ("glmin", "i4"),            # 144
    ("descrip", "S80"),         # 148
    ("aux_file", "S24"),        # 228
    ("qform_code", "i2"),       # 252
    ("sform_code", "i2"),       # 254
    ("quatern_b", "f4"),        # 256
    ("quatern_c", "f4"),        # 260
    ("quatern_d", "f4"),        # 264
    ("qoffset_x", "f4"),        # 268
    ("qoffset_y", "f4"),        # 272
    ("qoffset_z", "f4"),        # 276
    ("srow_x", "f4", (4,)),     # 280
    ("srow_y", "f4", (4,)),     # 296
    ("srow_z", "f4", (4,)),     # 312
    ("intent_name", "S16"),     # 328
    ("magic", "S4"),            # 344; 'ni1\0' 或 'n+1\0'
]
HEADER_DTYPE = np.dtype(_HEADER_FIELDS)

# datatype 编码 -> numpy 类型
DATATYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}
DATATYPE_CODES = {dt: code for code, dt in DATATYPES.items()}

_VALID_MAGIC = (b"n+1", b"ni1")
_GZIP_MAGIC = b"\x1f\x8b"


@dataclass
class NiftiHeader:
    sizeof_hdr: int
    dim: tuple
    datatype: int
    bitpix: int
    pixdim: tuple
    vox_offset: int
    scl_slope: float
    scl_inter: float
    qform_code: int
    sform_code: int
    quatern: tuple
    qoffset: tuple
    srow: np.ndarray
    magic: bytes
    byteorder: str

    @property
    def shape(self):
        return tuple(int(n) for n in self.dim[1:4])

    @property
    def dtype(self):
        return DATATYPES[self.datatype].newbyteorder(self.byteorder)

    @property
    def data_nbytes(self):
        return int(np.prod(self.shape)) * self.bitpix // 8

    def qform_affine(self):
        """由四元数参数重建 affine"""
        b, c, d = self.quatern
        a = np.sqrt(max(0.0, 1.0 - (b * b + c * c + d * d)))
        rot = np.array([
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ])
        qfac = -1.0 if self.pixdim[0] < 0 else 1.0
        vox = np.array(self.pixdim[1:4], dtype=np.float64)
        vox[2] *= qfac
        affine = np.eye(4)
        affine[:3, :3] = rot @ np.diag(vox)
        affine[:3, 3] = self.qoffset
        return affine

    def affine(self):
        if self.sform_code > 0:
            affine = np.eye(4)
            affine[:3, :] = self.srow
            return affine
        if self.qform_code > 0:
            return self.qform_affine()
        return np.diag([float(p) for p in self.pixdim[1:4]] + [1.0])

    def spacing(self):
        pix = [abs(float(p)) for p in self.pixdim[1:4]]
        if all(np.isfinite(p) and p > 0 for p in pix):
            return tuple(pix)
        # pixdim 无效时按 affine 列范数
        return tuple(float(n) for n in np.linalg.norm(self.affine()[:3, :3], axis=0))


def _detect_byteorder(raw):
    le = int.from_bytes(raw[:4], "little")
    be = int.from_bytes(raw[:4], "big")
    if le == HEADER_SIZE:
        return "<"
    if be == HEADER_SIZE:
        return ">"
    if NIFTI2_HEADER_SIZE in (le, be):
        raise NiftiFormatError("不支持 NIfTI-2 格式（sizeof_hdr=540）")
    raise NiftiFormatError(f"sizeof_hdr 非 348: {le}")


def _parse_header(raw):
    if len(raw) < HEADER_SIZE:
        raise DataLengthError(f"文件头不完整: {len(raw)} < {HEADER_SIZE} 字节")
    order = _detect_byteorder(raw)
    hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=HEADER_DTYPE.newbyteorder(order))[0]
    magic = bytes(hdr["magic"]).rstrip(b"\x00")
    if magic not in _VALID_MAGIC:
        raise NiftiFormatError(f"magic 无效: {bytes(hdr['magic'])!r}")
    dim = tuple(int(x) for x in hdr["dim"])
    if not 1 <= dim[0] <= 7:
        raise NiftiFormatError(f"dim[0] 超出 [1,7]: {dim[0]}")
    if not (dim[0] == 3 or (dim[0] == 4 and dim[4] == 1)):
        raise NiftiFormatError(f"仅支持三维体数据（或第四维为 1），dim={dim[:dim[0] + 1]}")
    if min(dim[1:4]) <= 0:
        raise NiftiFormatError(f"dim 尺寸无效: {dim[1:4]}")
    datatype = int(hdr["datatype"])
    if datatype not in DATATYPES:
        raise UnsupportedDtypeError(f"不支持的 datatype: {datatype}")
    bitpix = int(hdr["bitpix"])
    if bitpix != DATATYPES[datatype].itemsize * 8:
        raise NiftiFormatError(f"bitpix={bitpix} 与 datatype={datatype} 不一致")
    return NiftiHeader(
        sizeof_hdr=HEADER_SIZE,
        dim=dim,
        datatype=datatype,
        bitpix=bitpix,
        pixdim=tuple(float(x) for x in hdr["pixdim"]),
        vox_offset=int(hdr["vox_offset"]),
        scl_slope=float(hdr["scl_slope"]),
        scl_inter=float(hdr["scl_inter"]),
        qform_code=int(hdr["qform_code"]),
        sform_code=int(hdr["sform_code"]),
        quatern=(float(hdr["quatern_b"]), float(hdr["quatern_c"]), float(hdr["quatern_d"])),
        qoffset=(float(hdr["qoffset_x"]), float(hdr["qoffset_y"]), float(hdr["qoffset_z"])),
        srow=np.array([hdr["srow_x"], hdr["srow_y"], hdr["srow_z"]], dtype=np.float64),
        magic=magic,
        byteorder=order,
    )


def _open(path):
    """按文件头魔数决定是否 gzip 解压"""
    with open(path, "rb") as probe:
        head = probe.read(2)
    if head == _GZIP_MAGIC:
        return gzip.open(path, "rb")
    return open(path, "rb")


def _image_path(path, header):
    """ni1 为 .hdr/.img 分离存储"""
    if header.magic == b"ni1":
        p = Path(path)
        name = p.name[:-3] if p.name.endswith(".gz") else p.name
        stem = name[:-4] if name.endswith(".hdr") else name
        return p.with_name(stem + ".img")
    return Path(path)


def read_header(path):
    try:
        with _open(path) as f:
            raw = f.read(HEADER_SIZE)
    except OSError as e:
        raise VolumeIOError(f"无法读取 {path}: {e}") from e
    except EOFError as e:
        raise DataLengthError(f"gzip 数据不完整: {path}") from e
    return _parse_header(raw)


def _read_raw(path):
    """返回 (header, 原始数据 ndarray，已转为本机字节序，Fortran 顺序还原为 (H, W, D))"""
    header = read_header(path)
    data_path = _image_path(path, header)
    offset = header.vox_offset
    if header.magic == b"n+1" and offset < HEADER_SIZE:
        raise NiftiFormatError(f"vox_offset 无效: {offset}")
    nbytes = header.data_nbytes
    try:
        with _open(data_path) as f:
            f.seek(offset)
            buf = f.read(nbytes)
    except OSError as e:
        raise VolumeIOError(f"无法读取 {data_path}: {e}") from e
    except EOFError as e:
        raise DataLengthError(f"gzip 数据不完整: {data_path}") from e
    if len(buf) < nbytes:
        raise DataLengthError(f"数据段不完整: 期望 {nbytes} 字节，实际 {len(buf)}")
    arr = np.frombuffer(buf, dtype=header.dtype).reshape(header.shape, order="F")
    arr = arr.astype(header.dtype.newbyteorder("="))
    logger.debug("读取 %s: shape=%s dtype=%s byteorder=%s", path, header.shape, arr.dtype, header.byteorder)
    return header, arr


def read_volume(path):
    """读取强度体数据；scl_slope 非 0 时做线性缩放"""
    header, arr = _read_raw(path)
    slope, inter = header.scl_slope, header.scl_inter
    if np.isfinite(slope) and slope != 0 and not (slope == 1 and inter == 0):
        arr = arr.astype(np.float64) * slope + (inter if np.isfinite(inter) else 0.0)
    return VoxelGrid(arr, header.spacing(), header.affine())


def read_labels(path, remap=None, codebook=None):
    """
    读取标签体，忽略 scl 缩放。
    remap: 原始值 -> 标准编码或类别名（如 {7: 2}）；浮点类型仅在全部为整数值时接受
    """
    header, arr = _read_raw(path)
    if np.issubdtype(arr.dtype, np.floating):
        if not np.all(np.isfinite(arr)) or not np.array_equal(arr, np.round(arr)):
            raise LabelDtypeError(f"{path} 含非整数标签值")
        arr = arr.astype(np.int32)
    grid = VoxelGrid(arr, header.spacing(), header.affine())
    return merge_labels(grid, remap, codebook)


def _choose_dtype(data):
    """按数值范围选择可写出的数据类型"""
    native = data.dtype.newbyteorder("=")
    if native in DATATYPE_CODES:
        return native
    if data.dtype == np.bool_:
        return np.dtype(np.uint8)
    if np.issubdtype(data.dtype, np.integer):
        lo, hi = (int(data.min()), int(data.max())) if data.size else (0, 0)
        for dt in (np.uint8, np.int16, np.int32):
            info = np.iinfo(dt)
            if info.min <= lo and hi <= info.max:
                return np.dtype(dt)
        raise UnsupportedDtypeError(f"整数范围 [{lo}, {hi}] 超出 int32")
    if np.issubdtype(data.dtype, np.floating):
        return np.dtype(np.float32) if data.dtype.itemsize <= 4 else np.dtype(np.float64)
    raise UnsupportedDtypeError(f"不支持写出的类型: {data.dtype}")


def _build_header(grid, dtype, byteorder):
    hdr = np.zeros((), dtype=HEADER_DTYPE.newbyteorder(byteorder))
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["dim"] = [3, *grid.dims, 1, 1, 1, 1]
    hdr["datatype"] = DATATYPE_CODES[dtype]
    hdr["bitpix"] = dtype.itemsize * 8
    hdr["pixdim"] = [1.0, *grid.spacing, 1.0, 1.0, 1.0, 1.0]
    hdr["vox_offset"] = WRITE_VOX_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2  # mm
    hdr["descrip"] = b"cranio-morph"
    hdr["qform_code"] = 0
    hdr["sform_code"] = 2
    affine = np.asarray(grid.affine, dtype=np.float64)
    hdr["srow_x"] = affine[0]
    hdr["srow_y"] = affine[1]
    hdr["srow_z"] = affine[2]
    hdr["magic"] = b"n+1"
    return hdr


def write_volume(volume, path, byteorder="<"):
    """写出 VoxelGrid 或 LabelVolume；路径以 .gz 结尾时 gzip 压缩（mtime 固定为 0，输出可复现）"""
    grid = volume.grid if isinstance(volume, LabelVolume) else volume
    data = np.asarray(grid.data)
    dtype = _choose_dtype(data)
    hdr = _build_header(grid, dtype, byteorder)
    payload = (
        hdr.tobytes()
        + b"\x00" * (WRITE_VOX_OFFSET - HEADER_SIZE)
        + data.astype(dtype.newbyteorder(byteorder)).tobytes(order="F")
    )
    if str(path).endswith(".gz"):
        payload = gzip.compress(payload, mtime=0)
    try:
        with open(path, "wb") as f:
            f.write(payload)
    except OSError as e:
        raise VolumeIOError(f"无法写入 {path}: {e}") from e
    logger.debug("写出 %s: shape=%s dtype=%s", path, grid.dims, dtype)
