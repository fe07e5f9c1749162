import csv
import hashlib
import io
import json
from typing import Iterable, Optional

from ..models.responses import Report
from ..utils.logging_manager import LoggingManager
from .cycle_scheduler import CycleTrace
from .storage.base import StorageBackend
from .storage.factory import StorageFactory

logger = LoggingManager.get_logger(__name__)

TRACE_COLUMNS = ["cycle", "task", "status", "overhead_us", "used_us"]


def _write_csv(fieldnames: list[str], rows: Iterable[dict]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buffer.getvalue()


class ReportWriter:
    """Renders reports as JSON or CSV and stores them under content-hash names"""

    def __init__(self, storage_backend: Optional[StorageBackend] = None):
        self._storage = storage_backend

    @property
    def storage(self) -> StorageBackend:
        if self._storage is None:
            self._storage = StorageFactory.create_storage()
        return self._storage

    @staticmethod
    def render_json(report: Report) -> str:
        return json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"

    @staticmethod
    def render_csv(report: Report) -> str:
        """Plot-ready table for the report kind"""
        if report.kind == "alloc_bench" and report.allocation is not None:
            return _write_csv(
                ["order", "trials", "mean_retries", "failure_rate", "failures"],
                (row.model_dump(mode="json", exclude={"retry_histogram"}) for row in report.allocation.rows),
            )
        if report.kind == "attack_matrix":
            return _write_csv(
                ["case", "name", "scheme", "verdict", "trials", "success_rate", "closed_form", "ci_half_width"],
                (cell.model_dump(mode="json", exclude={"detail"}) for cell in report.attacks),
            )
        schemes = [s.value for s in report.schemes]
        rows = []
        for row in report.frequencies:
            flat = {"task": row.task, "priority": row.priority, "aci": row.aci, "expected_hz": row.expected_hz}
            for scheme in report.schemes:
                flat[f"measured_hz_{scheme.value}"] = row.measured_hz.get(scheme)
            rows.append(flat)
        columns = ["task", "priority", "aci", "expected_hz"] + [f"measured_hz_{s}" for s in schemes]
        return _write_csv(columns, rows)

    @staticmethod
    def render_trace(trace: CycleTrace) -> str:
        return _write_csv(TRACE_COLUMNS, trace.csv_rows())

    @staticmethod
    def _content_hash(content: str) -> str:
        return hashlib.sha256(content.encode()).hexdigest()

    def _filename(self, report: Report, content: str, extension: str, prefix: Optional[str]) -> str:
        parts = [prefix] if prefix else []
        parts.append(report.kind)
        if report.meta.scenario:
            parts.append(report.meta.scenario)
        parts.append(self._content_hash(content)[:12])
        return "_".join(parts) + extension

    def save(self, report: Report, fmt: str = "json", prefix: Optional[str] = None) -> str:
        if fmt == "json":
            content = self.render_json(report)
        elif fmt == "csv":
            content = self.render_csv(report)
        else:
            raise ValueError(f"Unsupported report format '{fmt}'")

        filepath = f"{fmt}/" + self._filename(report, content, f".{fmt}", prefix)
        if self.storage.file_exists(filepath):
            logger.debug("Report already saved", kind=report.kind, filepath=filepath)
            return self.storage.get_file_url(filepath)
        if fmt == "json":
            saved_path = self.storage.save_json(report.model_dump(mode="json"), filepath)
        else:
            saved_path = self.storage.save_text(content, filepath)
        logger.info("Saved report", kind=report.kind, format=fmt, filepath=saved_path)
        return saved_path

    def save_trace(self, trace: CycleTrace, scenario: str, prefix: Optional[str] = None) -> str:
        content = self.render_trace(trace)
        parts = [prefix] if prefix else []
        parts += ["trace", scenario, trace.scheme, self._content_hash(content)[:12]]
        filepath = "csv/" + "_".join(parts) + ".csv"
        if self.storage.file_exists(filepath):
            return self.storage.get_file_url(filepath)
        saved_path = self.storage.save_text(content, filepath)
        logger.info("Saved trace", scheme=trace.scheme, cycles=trace.horizon, filepath=saved_path)
        return saved_path
