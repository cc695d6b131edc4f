"""
Logging utilities for the ccseg toolkit.
Provides structured, single-line logs for long-running evaluation and benchmark jobs.
"""

import logging
import os
import sys
from datetime import datetime
from typing import Dict, Optional


class SegmentationFormatter(logging.Formatter):
    """Custom formatter for ccseg logs."""

    def format(self, record):
        record.timestamp = datetime.now().isoformat()

        if not hasattr(record, "service"):
            record.service = "CCSEG"

        if record.levelno >= logging.ERROR:
            level = "ERROR"
        elif record.levelno >= logging.WARNING:
            level = "WARN"
        elif record.levelno >= logging.INFO:
            level = "INFO"
        else:
            level = "DEBUG"

        return "[{timestamp}] {service} {level} {name}: {message}".format(
            timestamp=record.timestamp,
            service=record.service,
            level=level,
            name=record.name,
            message=record.getMessage(),
        )


def get_logger(name: str, level: Optional[str] = None) -> logging.Logger:
    """
    Get a configured logger for the toolkit.

    Args:
        name: Logger name (usually __name__)
        level: Log level override

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)

    # Don't add handlers if already configured
    if logger.handlers:
        return logger

    log_level = level or os.getenv("CCSEG_LOG_LEVEL") or os.getenv("LOG_LEVEL", "INFO")
    logger.setLevel(getattr(logging, log_level.upper(), logging.INFO))

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(logging.DEBUG)
    console_handler.setFormatter(SegmentationFormatter())
    logger.addHandler(console_handler)

    # Prevent propagation to root logger
    logger.propagate = False

    return logger


def set_verbosity(level: str) -> None:
    """Apply a log level to every logger created through get_logger."""
    numeric = getattr(logging, level.upper(), logging.INFO)
    for name, logger in logging.Logger.manager.loggerDict.items():
        if isinstance(logger, logging.Logger) and (name.startswith("CCSEG") or name.startswith("ccseg")):
            logger.setLevel(numeric)


def log_frame_eval(logger: logging.Logger, frame_id: str, mi_dsc: float, mi_nsd: float, n_gt: int, n_pred: int, n_matched: int):
    """
    Log the evaluation of one frame.

    Args:
        logger: Logger instance
        frame_id: Frame identifier
        mi_dsc: Multi-instance Dice of the frame
        mi_nsd: Multi-instance surface Dice of the frame
        n_gt: Ground-truth instance count
        n_pred: Predicted instance count
        n_matched: Matched pair count
    """
    logger.debug(
        f"Frame Eval - {frame_id} | "
        f"MI_DSC: {mi_dsc:.4f} | MI_NSD: {mi_nsd:.4f} | "
        f"GT: {n_gt} | Pred: {n_pred} | Matched: {n_matched}"
    )


def log_bench_run(logger: logging.Logger, variant: str, run_index: int, fps: float, frames: int, warmup: bool = False):
    """
    Log one benchmark repetition.

    Args:
        logger: Logger instance
        variant: Variant display name
        run_index: Zero-based repetition index
        fps: Frames per second of the repetition
        frames: Frames processed
        warmup: Whether the repetition is excluded from the result
    """
    kind = "Warmup" if warmup else "Run"
    logger.info(f"Bench {kind} - {variant} | #{run_index} | Frames: {frames} | FPS: {fps:.2f}")


def log_stage_timing(logger: logging.Logger, variant: str, breakdown: Dict[str, float]):
    """
    Log a per-stage wall-time breakdown.

    Args:
        logger: Logger instance
        variant: Variant display name
        breakdown: Seconds spent per pipeline stage
    """
    parts = " | ".join(f"{stage}: {seconds * 1000:.1f}ms" for stage, seconds in breakdown.items())
    logger.info(f"Stage Timing - {variant} | {parts}")


# Global logger instances for common use
main_logger = get_logger("CCSEG.Main")
pipeline_logger = get_logger("CCSEG.Pipeline")
metrics_logger = get_logger("CCSEG.Metrics")
data_logger = get_logger("CCSEG.Data")
bench_logger = get_logger("CCSEG.Bench")
