from .config import ConfigError, RunConfig, load_config, parse_config, render_config
from .runner import COLUMNS, Run, RunLog, read_runlog, train, write_runlog

__all__ = [
    "COLUMNS",
    "ConfigError",
    "Run",
    "RunConfig",
    "RunLog",
    "load_config",
    "parse_config",
    "read_runlog",
    "render_config",
    "train",
    "write_runlog",
]
