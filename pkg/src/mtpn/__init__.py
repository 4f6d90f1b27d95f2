"""Multi-task perception network with an efficiency toolchain."""

__version__ = "0.1.0"
