"""Episode traces: one CSV row per simulated step plus a key=value sidecar.

The same schema serves agent runs and human sessions; humans simply leave
the SoC columns empty.  Floats are written with ``repr`` so a serialize /
deserialize round trip is byte-identical and replays can compare exactly.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

SCHEMA_VERSION = "1"
TRACE_COLUMNS = ("step", "x", "y", "input", "ll_soc", "hl_soc", "intention", "trigger", "crashed")


class SchemaMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TraceRecord:
    step: int
    x: float
    y: float
    input: str
    ll_soc: float | None
    hl_soc: float | None
    intention: str | None
    trigger: bool
    crashed: bool


@dataclass
class EpisodeTrace:
    records: list[TraceRecord]
    outcome: str                        # "crashed" | "landed"
    meta: dict[str, str] = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.records)

    def inputs(self) -> list[str]:
        return [r.input for r in self.records]

    def ll_series(self) -> list[float | None]:
        return [r.ll_soc for r in self.records]

    def hl_series(self) -> list[float | None]:
        return [r.hl_soc for r in self.records]


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(value)


def trace_to_csv(trace: EpisodeTrace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for r in trace.records:
        writer.writerow([
            r.step, repr(r.x), repr(r.y), r.input,
            _fmt(r.ll_soc), _fmt(r.hl_soc),
            r.intention or "",
            int(r.trigger), int(r.crashed),
        ])
    return buf.getvalue()


def trace_from_csv(text: str, meta: dict[str, str] | None = None) -> EpisodeTrace:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != TRACE_COLUMNS:
        raise SchemaMismatch(f"unexpected trace header {header!r}")
    records = []
    for row in reader:
        records.append(TraceRecord(
            step=int(row[0]),
            x=float(row[1]),
            y=float(row[2]),
            input=row[3],
            ll_soc=float(row[4]) if row[4] else None,
            hl_soc=float(row[5]) if row[5] else None,
            intention=row[6] or None,
            trigger=bool(int(row[7])),
            crashed=bool(int(row[8])),
        ))
    meta = dict(meta or {})
    outcome = meta.get("outcome") or ("crashed" if records and records[-1].crashed else "landed")
    return EpisodeTrace(records=records, outcome=outcome, meta=meta)


def meta_to_text(meta: dict[str, str]) -> str:
    lines = [f"schema_version={meta.get('schema_version', SCHEMA_VERSION)}"]
    for key in sorted(k for k in meta if k != "schema_version"):
        lines.append(f"{key}={meta[key]}")
    return "\n".join(lines) + "\n"


def meta_from_text(text: str) -> dict[str, str]:
    meta: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    return meta


def sidecar_path(csv_path: Path) -> Path:
    return csv_path.with_suffix(csv_path.suffix + ".meta")


def write_trace(trace: EpisodeTrace, csv_path: Path) -> None:
    meta = dict(trace.meta)
    meta.setdefault("schema_version", SCHEMA_VERSION)
    meta.setdefault("outcome", trace.outcome)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    csv_path.write_text(trace_to_csv(trace), encoding="utf-8")
    sidecar_path(csv_path).write_text(meta_to_text(meta), encoding="utf-8")


def read_trace(csv_path: Path) -> EpisodeTrace:
    meta_path = sidecar_path(csv_path)
    meta = meta_from_text(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    if meta and meta.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatch(f"trace schema {meta.get('schema_version')!r}, expected {SCHEMA_VERSION!r}")
    return trace_from_csv(csv_path.read_text(encoding="utf-8"), meta)
