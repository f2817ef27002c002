"""Typical Bell violation of random multipartite pure states: exact classical
bounds, Born-rule behaviours, see-saw lower bounds, and closed-form tail bounds."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover - running from a source tree
    __version__ = "0.0.0"
