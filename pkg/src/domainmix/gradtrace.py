"""Binary gradient-trace format and loss-history CSV ingestion.

Trace file layout (little-endian throughout):

    magic   4 bytes  b"GTRC"
    version u32      currently 1
    dim     u32      entries per gradient vector
    count   u32      number of records
    records count ×  (sample_id u32 | domain_hint i32 | dim × float32)

Gradient entries are stored as IEEE-754 float32; a round trip through
``write_trace``/``read_trace`` is bit-identical. Loss histories travel as
UTF-8 CSV with header ``task,step,loss``.

All types here are immutable after construction; readers are pure and safe
to share across threads.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, TextIO

import numpy as np

MAGIC = b"GTRC"
VERSION = 1
HEADER_SIZE = 16

__all__ = [
    "TraceError",
    "BadMagicError",
    "VersionMismatchError",
    "TruncatedTraceError",
    "NonFiniteValueError",
    "DuplicateSampleIdError",
    "LossHistoryError",
    "TraceRecord",
    "GradientTrace",
    "DecayFit",
    "LossHistory",
    "write_trace",
    "read_trace",
    "read_loss_history",
    "write_loss_history",
]


class TraceError(Exception):
    """Base class for trace serialization problems."""


class BadMagicError(TraceError):
    """Input does not start with the trace magic."""


class VersionMismatchError(TraceError):
    """Trace was written with an unsupported format version."""


class TruncatedTraceError(TraceError):
    """Byte stream ended mid-header or mid-record."""


class NonFiniteValueError(TraceError):
    """A gradient vector contains NaN or infinity."""


class DuplicateSampleIdError(TraceError):
    """Two records in one trace share a sample id."""


class LossHistoryError(ValueError):
    """Loss-history CSV violates the format contract."""


@dataclass(frozen=True)
class TraceRecord:
    """One sample's gradient vector plus identifying metadata.

    ``domain_hint`` carries an initial source/category label when one is
    known; -1 means none.
    """

    sample_id: int
    domain_hint: int
    vector: np.ndarray

    def __post_init__(self):
        if self.sample_id < 0:
            raise ValueError(f"sample_id must be >= 0, got {self.sample_id}")
        if self.domain_hint < -1:
            raise ValueError(f"domain_hint must be >= -1, got {self.domain_hint}")
        vec = np.asarray(self.vector, dtype=np.float32)
        object.__setattr__(self, "vector", vec)


@dataclass(frozen=True)
class GradientTrace:
    """Ordered per-sample gradient vectors from one producing run."""

    dim: int
    records: tuple[TraceRecord, ...]
    source_tag: str = ""

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError(f"dim must be positive, got {self.dim}")
        object.__setattr__(self, "records", tuple(self.records))
        seen: set[int] = set()
        for rec in self.records:
            if rec.vector.shape != (self.dim,):
                raise ValueError(
                    f"record {rec.sample_id}: vector length {rec.vector.shape} "
                    f"does not match trace dim {self.dim}"
                )
            if rec.sample_id in seen:
                raise DuplicateSampleIdError(
                    f"duplicate sample_id {rec.sample_id}"
                )
            seen.add(rec.sample_id)

    def __len__(self) -> int:
        return len(self.records)

    def matrix(self) -> np.ndarray:
        """All vectors stacked as an (n, dim) float32 array, record order."""
        if not self.records:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack([r.vector for r in self.records])


@dataclass(frozen=True)
class DecayFit:
    """Parameters of the fitted decay curve a*exp(-b*t) + c."""

    a: float
    b: float
    c: float
    residual: float

    def __post_init__(self):
        if self.b < 0:
            raise ValueError(f"decay rate b must be >= 0, got {self.b}")
        if not math.isfinite(self.residual) or self.residual < 0:
            raise ValueError(f"residual must be finite and >= 0, got {self.residual}")

    def predict(self, t: float) -> float:
        return self.a * math.exp(-self.b * t) + self.c


@dataclass(frozen=True)
class LossHistory:
    """Per-task sequence of (step, loss) observations."""

    task_id: int
    points: tuple[tuple[int, float], ...]
    fit: DecayFit | None = None

    def __post_init__(self):
        object.__setattr__(self, "points", tuple((int(s), float(l)) for s, l in self.points))
        prev = -1
        for step, loss in self.points:
            if step < 0:
                raise LossHistoryError(f"task {self.task_id}: negative step {step}")
            if step <= prev:
                raise LossHistoryError(
                    f"task {self.task_id}: steps must be strictly increasing "
                    f"({prev} then {step})"
                )
            if not math.isfinite(loss) or loss < 0:
                raise LossHistoryError(
                    f"task {self.task_id}: loss at step {step} must be finite "
                    f"and >= 0, got {loss}"
                )
            prev = step

    def steps(self) -> np.ndarray:
        return np.array([s for s, _ in self.points], dtype=float)

    def losses(self) -> np.ndarray:
        return np.array([l for _, l in self.points], dtype=float)

    def with_fit(self, fit: DecayFit) -> "LossHistory":
        return LossHistory(self.task_id, self.points, fit)


_RECORD_HEAD = struct.Struct("<Ii")


def record_size(dim: int) -> int:
    return _RECORD_HEAD.size + 4 * dim


def _as_binary_sink(destination) -> tuple[BinaryIO, bool]:
    if hasattr(destination, "write"):
        return destination, False
    return open(Path(destination), "wb"), True


def _as_binary_source(source) -> tuple[BinaryIO, bool]:
    if isinstance(source, (bytes, bytearray)):
        return io.BytesIO(source), False
    if hasattr(source, "read"):
        return source, False
    return open(Path(source), "rb"), True


def write_trace(trace: GradientTrace, destination) -> int:
    """Serialize ``trace`` to ``destination`` (path or binary file object).

    Returns the number of bytes written. Rejects non-finite entries,
    naming the offending sample id.
    """
    for rec in trace.records:
        if not np.all(np.isfinite(rec.vector)):
            raise NonFiniteValueError(
                f"sample_id {rec.sample_id}: vector has non-finite entries"
            )
    sink, owned = _as_binary_sink(destination)
    try:
        n = sink.write(MAGIC)
        n += sink.write(struct.pack("<III", VERSION, trace.dim, len(trace.records)))
        for rec in trace.records:
            n += sink.write(_RECORD_HEAD.pack(rec.sample_id, rec.domain_hint))
            n += sink.write(rec.vector.astype("<f4", copy=False).tobytes())
    finally:
        if owned:
            sink.close()
    return n


def read_trace(source, source_tag: str = "") -> GradientTrace:
    """Parse a trace from ``source`` (path, bytes, or binary file object).

    Malformed input raises a categorized :class:`TraceError` subclass
    rather than producing a partial trace.
    """
    fh, owned = _as_binary_source(source)
    try:
        header = fh.read(HEADER_SIZE)
        if len(header) < 4 or header[:4] != MAGIC:
            raise BadMagicError(f"expected magic {MAGIC!r}, got {header[:4]!r}")
        if len(header) < HEADER_SIZE:
            raise TruncatedTraceError("stream ended inside the header")
        version, dim, count = struct.unpack("<III", header[4:])
        if version != VERSION:
            raise VersionMismatchError(f"unsupported version {version}")
        if dim == 0:
            raise TraceError("dim must be positive")
        rsize = record_size(dim)
        records = []
        for idx in range(count):
            blob = fh.read(rsize)
            if len(blob) < rsize:
                raise TruncatedTraceError(
                    f"stream ended inside record {idx} of {count}"
                )
            sample_id, hint = _RECORD_HEAD.unpack_from(blob)
            vec = np.frombuffer(blob, dtype="<f4", count=dim, offset=_RECORD_HEAD.size)
            if not np.all(np.isfinite(vec)):
                raise NonFiniteValueError(
                    f"sample_id {sample_id}: vector has non-finite entries"
                )
            if hint < -1:
                raise TraceError(f"sample_id {sample_id}: invalid domain_hint {hint}")
            records.append(TraceRecord(sample_id, hint, vec.copy()))
        if fh.read(1):
            raise TraceError("trailing bytes after the last record")
        return GradientTrace(dim=dim, records=tuple(records), source_tag=source_tag)
    finally:
        if owned:
            fh.close()


def _as_text_source(source) -> tuple[TextIO, bool]:
    if isinstance(source, str) and "\n" in source:
        return io.StringIO(source), False
    if hasattr(source, "read"):
        return source, False
    return open(Path(source), "r", encoding="utf-8"), True


LOSS_HEADER = ["task", "step", "loss"]


def read_loss_history(source) -> list[LossHistory]:
    """Parse loss-history CSV into one :class:`LossHistory` per task id.

    Rows for a task must appear in strictly increasing step order;
    duplicate (task, step) pairs are rejected rather than overwritten.
    """
    fh, owned = _as_text_source(source)
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LossHistoryError("empty input, expected header task,step,loss")
        if [h.strip() for h in header] != LOSS_HEADER:
            raise LossHistoryError(f"bad header {header!r}, expected task,step,loss")
        by_task: dict[int, list[tuple[int, float]]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise LossHistoryError(f"line {lineno}: expected 3 fields, got {len(row)}")
            try:
                task = int(row[0])
                step = int(row[1])
                loss = float(row[2])
            except ValueError as exc:
                raise LossHistoryError(f"line {lineno}: {exc}") from None
            if task < 0:
                raise LossHistoryError(f"line {lineno}: negative task id {task}")
            if step < 0:
                raise LossHistoryError(f"line {lineno}: negative step {step}")
            if not math.isfinite(loss) or loss < 0:
                raise LossHistoryError(f"line {lineno}: loss must be finite and >= 0")
            points = by_task.setdefault(task, [])
            if points:
                last = points[-1][0]
                if step == last:
                    raise LossHistoryError(
                        f"line {lineno}: duplicate step {step} for task {task}"
                    )
                if step < last:
                    raise LossHistoryError(
                        f"line {lineno}: non-monotone step {step} for task {task}"
                    )
            points.append((step, loss))
        return [LossHistory(task, tuple(pts)) for task, pts in sorted(by_task.items())]
    finally:
        if owned:
            fh.close()


def write_loss_history(histories: Iterable[LossHistory], destination) -> None:
    """Emit histories in the CSV format accepted by :func:`read_loss_history`."""
    if hasattr(destination, "write"):
        fh, owned = destination, False
    else:
        fh, owned = open(Path(destination), "w", encoding="utf-8", newline=""), True
    try:
        writer = csv.writer(fh)
        writer.writerow(LOSS_HEADER)
        for hist in histories:
            for step, loss in hist.points:
                writer.writerow([hist.task_id, step, repr(loss)])
    finally:
        if owned:
            fh.close()
