"""
输入文件摘要缓存：以 (绝对路径, mtime, 大小) 为 key 存储 SHA-256，
同一批次内多个子命令/多个受试者引用同一文件时只计算一次。
报告中的 input_digests 均来自这里。
"""

import hashlib
import logging
import os
import threading

logger = logging.getLogger(__name__)

# (path, mtime_ns, size) -> hexdigest
_cache = {}
_lock = threading.RLock()
_CHUNK = 1 << 20
# 超过此数量时清理已失效的条目
MAX_ENTRIES = 2048


def _key(path):
    st = os.stat(path)
    return (os.path.abspath(path), st.st_mtime_ns, st.st_size)


def file_digest(path):
    """文件内容的 SHA-256（十六进制）"""
    key = _key(path)
    with _lock:
        cached = _cache.get(key)
        if cached:
            return cached
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(_CHUNK), b""):
            h.update(chunk)
    digest = h.hexdigest()
    with _lock:
        _cache[key] = digest
        logger.debug("摘要缓存写入: %s %s", key[0], digest[:12])
        if len(_cache) > MAX_ENTRIES:
            _cleanup_stale()
    return digest


def digests_for(paths):
    """{原始路径字符串: 摘要}，空路径跳过，按路径排序；不存在的文件记为 None"""
    out = {}
    for p in sorted({str(p) for p in paths if p}):
        try:
            out[p] = file_digest(p)
        except OSError:
            logger.warning("输入文件不存在或不可读，摘要记为空: %s", p)
            out[p] = None
    return out


def clear():
    with _lock:
        _cache.clear()


def _cleanup_stale():
    """清理文件已变化或已删除的条目"""
    with _lock:
        to_remove = []
        for key in _cache:
            try:
                if _key(key[0]) != key:
                    to_remove.append(key)
            except OSError:
                to_remove.append(key)
        for key in to_remove:
            del _cache[key]
