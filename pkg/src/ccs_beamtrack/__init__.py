"""Curvilinear-road ISAC beam tracking simulator and library."""

from . import beam, channel, cli, errors, harness, road, tracking

__version__ = "0.1.0"

__all__ = ["beam", "channel", "cli", "errors", "harness", "road", "tracking", "__version__"]
