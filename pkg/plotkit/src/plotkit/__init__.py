"""Figure rendering for the profiling toolkit's CSV/JSON outputs."""

__version__ = "0.1.0"
