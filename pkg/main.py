"""
命令行入口：python3 main.py <子命令> ...

子命令见 commands/（crop / volumes / thickness / compare / agree / ablate / regress / summarize）。
退出码：0 成功，1 用法错误，2 输入格式错误，3 处理失败。
业务异常以一行 JSON 错误记录 {"error": kind, "message": ...} 输出到 stderr。
"""

import argparse
import json
import logging
import os
import sys

from commands import register
from errors import EXIT_USAGE, CranioError

logger = logging.getLogger(__name__)

# 默认日志级别，可通过 CRANIO_LOG_LEVEL 覆盖；--verbose 切到 DEBUG
LOG_LEVEL = os.environ.get("CRANIO_LOG_LEVEL", "INFO").upper()


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """参数错误时不直接退出进程，由 main 统一返回退出码 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: 参数错误: {message}\n")
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="cranio", description="头部标签体的 ROI 裁剪、组织体积、颅骨厚度、分割评估与统计分析")
    parser.add_argument("-v", "--verbose", action="store_true", help="输出 DEBUG 日志")
    subparsers = parser.add_subparsers(dest="command", metavar="<子命令>")
    subparsers.required = True
    register(subparsers)
    return parser


def _setup_logging(verbose):
    level = logging.DEBUG if verbose else getattr(logging, LOG_LEVEL, logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    logging.getLogger().setLevel(level)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    _setup_logging(args.verbose)
    try:
        return args.handler(args)
    except CranioError as e:
        logger.error("%s 失败 [%s]: %s", args.command, e.kind, e)
        sys.stderr.write(json.dumps(e.to_record(), ensure_ascii=False) + "\n")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
