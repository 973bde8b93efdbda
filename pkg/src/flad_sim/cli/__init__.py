"""CLI package for argparse-driven commands."""

from flad_sim.cli.app import main

__all__ = ["main"]
