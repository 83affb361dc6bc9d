"""Observability - Structured logging, run metrics and the training metrics log"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Optional, TextIO


# ============ Structured Logging ============

class JSONFormatter(logging.Formatter):
    """JSON formatter for structured logging"""

    def format(self, record: logging.LogRecord) -> str:
        log_data = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }

        # Add extra fields
        if hasattr(record, "extra"):
            log_data.update(record.extra)

        # Add exception info
        if record.exc_info:
            log_data["exception"] = self.formatException(record.exc_info)

        return json.dumps(log_data, default=str)


def setup_logging(level: str = "INFO", json_format: bool = True) -> logging.Logger:
    """
    Setup structured logging for gendoc.

    Args:
        level: Log level (DEBUG, INFO, WARNING, ERROR)
        json_format: Use JSON format for logs

    Returns:
        Configured root gendoc logger
    """
    logger = logging.getLogger("gendoc")
    logger.setLevel(getattr(logging, level.upper()))

    # Remove existing handlers
    logger.handlers.clear()

    handler = logging.StreamHandler()
    if json_format:
        handler.setFormatter(JSONFormatter())
    else:
        handler.setFormatter(
            logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")
        )

    logger.addHandler(handler)
    return logger


def get_logger(name: str) -> logging.Logger:
    """Child logger under the gendoc namespace (e.g. get_logger("vocab"))"""
    return logging.getLogger(f"gendoc.{name}")


logger = logging.getLogger("gendoc")


def log_with_context(base: Optional[logging.Logger] = None, **context) -> logging.LoggerAdapter:
    """Create a logger adapter that attaches `context` to every record"""
    class ContextAdapter(logging.LoggerAdapter):
        def process(self, msg, kwargs):
            kwargs.setdefault("extra", {})
            kwargs["extra"]["extra"] = {**self.extra, **kwargs["extra"].get("extra", {})}
            return msg, kwargs

    return ContextAdapter(base or logger, context)


# ============ Metrics ============

@dataclass
class Metrics:
    """In-memory run metrics collector"""

    # Counters
    step_count: int = 0
    document_count: int = 0
    eval_count: int = 0
    decode_count: int = 0
    nan_aborts: int = 0
    error_count: int = 0

    # Latency histograms (simplified as lists)
    step_latencies: list[float] = field(default_factory=list)
    eval_latencies: list[float] = field(default_factory=list)
    decode_latencies: list[float] = field(default_factory=list)

    # Gauges
    last_loss: Optional[float] = None
    learning_rate: Optional[float] = None

    def increment(self, name: str, value: int = 1) -> None:
        """Increment a counter"""
        if hasattr(self, name):
            setattr(self, name, getattr(self, name) + value)

    def record_latency(self, name: str, latency_ms: float) -> None:
        """Record a latency measurement"""
        latency_list = getattr(self, f"{name}_latencies", None)
        if latency_list is not None:
            latency_list.append(latency_ms)
            # Keep last 1000 measurements
            if len(latency_list) > 1000:
                latency_list.pop(0)

    def set_gauge(self, name: str, value: float) -> None:
        """Set a gauge value"""
        if hasattr(self, name):
            setattr(self, name, value)

    def get_percentile(self, name: str, percentile: float) -> Optional[float]:
        """Get percentile from latency histogram"""
        latencies = getattr(self, f"{name}_latencies", [])
        if not latencies:
            return None
        sorted_latencies = sorted(latencies)
        idx = int(len(sorted_latencies) * percentile / 100)
        return sorted_latencies[min(idx, len(sorted_latencies) - 1)]

    def to_dict(self) -> dict:
        """Export metrics as dictionary"""
        return {
            "counters": {
                "step_count": self.step_count,
                "document_count": self.document_count,
                "eval_count": self.eval_count,
                "decode_count": self.decode_count,
                "nan_aborts": self.nan_aborts,
                "error_count": self.error_count,
            },
            "latencies": {
                "step_p50": self.get_percentile("step", 50),
                "step_p95": self.get_percentile("step", 95),
                "eval_p50": self.get_percentile("eval", 50),
                "decode_p50": self.get_percentile("decode", 50),
                "decode_p95": self.get_percentile("decode", 95),
            },
            "gauges": {
                "last_loss": self.last_loss,
                "learning_rate": self.learning_rate,
            },
        }

    def reset(self) -> None:
        """Reset all metrics"""
        self.step_count = 0
        self.document_count = 0
        self.eval_count = 0
        self.decode_count = 0
        self.nan_aborts = 0
        self.error_count = 0
        self.step_latencies.clear()
        self.eval_latencies.clear()
        self.decode_latencies.clear()
        self.last_loss = None
        self.learning_rate = None


# Global metrics instance
metrics = Metrics()


# ============ Decorators ============

def track_latency(operation: str):
    """Decorator to track operation latency"""
    def decorator(func: Callable):
        @wraps(func)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            try:
                return func(*args, **kwargs)
            finally:
                elapsed_ms = (time.perf_counter() - start) * 1000
                metrics.record_latency(operation, elapsed_ms)
                metrics.increment(f"{operation}_count")

        return wrapper

    return decorator


# ============ Training metrics log ============

class MetricsLog:
    """Append-only JSON-lines log of `{step, task, loss, lr}` records"""

    def __init__(self, path: Optional[Path] = None, stream: Optional[TextIO] = None):
        self.path = Path(path) if path else None
        self._stream = stream
        self.records: list[dict[str, Any]] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, step: int, task: str, loss: float, lr: float) -> dict[str, Any]:
        record = {"step": int(step), "task": task, "loss": float(loss), "lr": float(lr)}
        self.records.append(record)
        line = json.dumps(record, sort_keys=True)
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as f:
                f.write(line + "\n")
        if self._stream is not None:
            self._stream.write(line + "\n")
        return record

    def losses(self, task: str) -> list[float]:
        """All logged losses for one task, in step order"""
        return [r["loss"] for r in self.records if r["task"] == task]
