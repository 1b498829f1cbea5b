"""
子命令配置 - 每个子命令一个文件，便于维护
新增子命令：在此目录新建 py 文件，在 _COMMANDS 中注册，详见 README.md
"""

from . import ablate, agree, compare, crop, regress, summarize, thickness, volumes

# 注册所有子命令模块（顺序即 --help 中的展示顺序）
_COMMANDS = [crop, volumes, thickness, compare, agree, ablate, regress, summarize]

# 聚合配置
COMMANDS = {c.NAME: c for c in _COMMANDS}


def register(subparsers):
    """为每个子命令建立解析器，并把 run 绑定到 handler"""
    for c in _COMMANDS:
        sub = subparsers.add_parser(c.NAME, help=c.HELP, description=c.HELP)
        c.add_arguments(sub)
        sub.set_defaults(handler=c.run, command=c.NAME)

