"""
异常定义
- 所有业务异常继承 CranioError，带机器可读的 kind 与 CLI 退出码
- 同时继承最接近的内置异常（ValueError / RuntimeError / OSError），调用方可按内置类型捕获
"""

# 退出码：1 用法错误，2 输入格式错误，3 处理失败
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT_FORMAT = 2
EXIT_PROCESSING = 3


class CranioError(Exception):
    kind = "error"
    exit_code = EXIT_PROCESSING

    def to_record(self):
        """CLI 输出到 stderr 的错误记录"""
        return {"error": self.kind, "message": str(self)}


# =============================================================================
# 体数据
# =============================================================================

class OrientationError(CranioError, ValueError):
    kind = "orientation"


class DegenerateVolumeError(CranioError, ValueError):
    kind = "degenerate-volume"


class CodebookError(CranioError, ValueError):
    kind = "codebook"


class ShapeError(CranioError, ValueError):
    kind = "shape"


class MaskError(CranioError, ValueError):
    kind = "mask"


# =============================================================================
# NIfTI 读写
# =============================================================================

class NiftiFormatError(CranioError, ValueError):
    kind = "format"
    exit_code = EXIT_INPUT_FORMAT


class UnsupportedDtypeError(NiftiFormatError):
    kind = "unsupported-dtype"


class DataLengthError(NiftiFormatError):
    kind = "length"


class LabelDtypeError(NiftiFormatError):
    kind = "label-dtype"


class VolumeIOError(CranioError, OSError):
    kind = "io"
    exit_code = EXIT_INPUT_FORMAT


# =============================================================================
# 裁剪 / 形态测量 / 评估
# =============================================================================

class EmptyBrainError(CranioError, ValueError):
    kind = "empty-brain"


class EmptySliceError(CranioError, ValueError):
    kind = "empty-slice"


class ThicknessError(CranioError, RuntimeError):
    kind = "thickness"


class PreconditionError(CranioError, ValueError):
    kind = "precondition"


class UndefinedDistanceError(CranioError, ValueError):
    kind = "undefined-distance"


# =============================================================================
# 统计
# =============================================================================

class SampleSizeError(CranioError, ValueError):
    kind = "sample-size"


class DegenerateTableError(CranioError, ValueError):
    kind = "degenerate-table"


class DegeneratePrevalenceError(CranioError, ValueError):
    kind = "degenerate-prevalence"


class DomainError(CranioError, ValueError):
    kind = "domain"


class CollinearityError(CranioError, ValueError):
    kind = "collinearity"

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = list(columns)


class RatingError(CranioError, ValueError):
    kind = "rating"
    exit_code = EXIT_INPUT_FORMAT


# =============================================================================
# 清单
# =============================================================================

class ManifestError(CranioError, ValueError):
    kind = "manifest"
    exit_code = EXIT_INPUT_FORMAT
