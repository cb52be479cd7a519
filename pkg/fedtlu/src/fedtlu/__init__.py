"""Federated next-token simulation with targeted layer updates."""

from fedtlu.cli import cli, cli_main, main


__all__ = ['cli', 'cli_main', 'main']
