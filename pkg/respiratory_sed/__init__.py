"""Graph-attention, anchor-interval detector for abnormal respiratory sound events."""

from .commands import build_parser, run_command

__all__ = ["build_parser", "run_command"]
