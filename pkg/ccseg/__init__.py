"""ccseg: criss-cross attention instance segmentation and robustness evaluation toolkit."""

__version__ = "1.0.0"
