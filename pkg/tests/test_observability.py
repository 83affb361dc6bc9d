"""Tests for structured logging, run metrics and the training metrics log"""

from __future__ import annotations

import io
import json
import logging

from gendoc.observability import JSONFormatter, Metrics, MetricsLog, log_with_context, metrics, track_latency


# ============ Unit Tests: logging ============


class TestJSONFormatter:
    def test_context_fields_merged(self):
        stream = io.StringIO()
        handler = logging.StreamHandler(stream)
        handler.setFormatter(JSONFormatter())
        base = logging.getLogger("gendoc.test.formatter")
        base.addHandler(handler)
        base.setLevel(logging.INFO)
        try:
            log_with_context(base, job="pretrain", seed=3).info("step done")
        finally:
            base.removeHandler(handler)
        record = json.loads(stream.getvalue())
        assert record["message"] == "step done"
        assert record["logger"] == "gendoc.test.formatter"
        assert record["job"] == "pretrain" and record["seed"] == 3


# ============ Unit Tests: metrics ============


class TestMetrics:
    def test_counters_and_percentiles(self):
        m = Metrics()
        m.increment("step_count", 2)
        m.increment("no_such_counter")
        for ms in (1.0, 2.0, 3.0, 4.0):
            m.record_latency("step", ms)
        data = m.to_dict()
        assert data["counters"]["step_count"] == 2
        assert data["latencies"]["step_p50"] == 3.0
        assert data["latencies"]["eval_p50"] is None
        m.reset()
        assert m.to_dict()["counters"]["step_count"] == 0

    def test_track_latency_counts_calls(self):
        metrics.reset()

        @track_latency("decode")
        def decode():
            return "ok"

        assert decode() == "ok"
        assert decode() == "ok"
        assert metrics.decode_count == 2
        assert len(metrics.decode_latencies) == 2
        metrics.reset()


class TestMetricsLog:
    def test_writes_json_lines(self, tmp_path):
        stream = io.StringIO()
        log = MetricsLog(tmp_path / "run" / "metrics.jsonl", stream=stream)
        log.write(0, "ti", 2.5, 1e-3)
        log.write(1, "cp", 1.5, 1e-3)
        log.write(1, "ti", 2.0, 1e-3)
        lines = (tmp_path / "run" / "metrics.jsonl").read_text(encoding="utf-8").splitlines()
        assert json.loads(lines[0]) == {"step": 0, "task": "ti", "loss": 2.5, "lr": 1e-3}
        assert stream.getvalue().splitlines() == lines
        assert log.losses("ti") == [2.5, 2.0]
