"""
Line-delimited wire format for plaincode files.

Every file starts with a header line ``{"format": ..., "version": 1}`` followed
by one JSON record per line. The same family is used for trace logs, plan
databases and reconstruction databases; only the ``format`` tag differs.
"""

import json
import logging
from collections.abc import Iterable, Iterator
from pathlib import Path
from typing import Annotated, Any, Literal, TypeVar, Union

from pydantic import BaseModel, Field, TypeAdapter, ValidationError
from pydantic_core import PydanticSerializationError

from .exceptions import TraceDecodingError, TraceEncodingError
from .models import Event, LogEntry, PlanDatabase, ReconstructionPlan, TypeModel

logger = logging.getLogger(__name__)

WIRE_VERSION = 1
TRACE_FORMAT = "plaincode-trace"
PLAN_FORMAT = "plaincode-plans"
RECONSTRUCTION_FORMAT = "plaincode-reconstruction"

T = TypeVar("T")

_event_adapter: TypeAdapter[Any] = TypeAdapter(Event)
_entry_adapter: TypeAdapter[Any] = TypeAdapter(LogEntry)


# =============================================================================
# Header
# =============================================================================


def header_line(file_format: str = TRACE_FORMAT) -> str:
    """Return the header line of a file of the given format."""
    return json.dumps({"format": file_format, "version": WIRE_VERSION})


def check_header(line: str, file_format: str = TRACE_FORMAT) -> None:
    """
    Validate a header line.

    Raises:
        TraceDecodingError: If the line is not a header of the expected format
            and version.
    """
    try:
        header = json.loads(line)
    except json.JSONDecodeError as e:
        raise TraceDecodingError(f"Invalid header: {e.msg}", line_number=1) from e
    if not isinstance(header, dict) or header.get("format") != file_format:
        raise TraceDecodingError(f"Expected a {file_format} header", line_number=1)
    if header.get("version") != WIRE_VERSION:
        raise TraceDecodingError(
            f"Unsupported version {header.get('version')!r}", line_number=1
        )


# =============================================================================
# Encoding
# =============================================================================


def _dump(adapter: TypeAdapter[Any], value: Any) -> str:
    try:
        return adapter.dump_json(value).decode("utf-8")
    except (PydanticSerializationError, ValueError, TypeError) as e:
        raise TraceEncodingError(f"Cannot encode {type(value).__name__}: {e}") from e


def encode_event(event: Event) -> str:
    """
    Encode one event as a single line (without the trailing newline).

    Raises:
        TraceEncodingError: If the event holds a value with no wire form.
    """
    return _dump(_event_adapter, event)


def encode_entry(entry: LogEntry) -> str:
    """Encode any trace log entry (event, serialization record, static field)."""
    return _dump(_entry_adapter, entry)


def decode_event(line: str, line_number: int | None = None) -> Event:
    """
    Decode one event line.

    Raises:
        TraceDecodingError: If the line is not a valid event.
    """
    try:
        return _event_adapter.validate_json(line)
    except ValidationError as e:
        raise TraceDecodingError(
            f"Invalid event: {e.errors()[0]['msg']}", line_number=line_number
        ) from e


def decode_entry(line: str, line_number: int | None = None) -> LogEntry:
    """Decode one trace log line of any kind."""
    try:
        return _entry_adapter.validate_json(line)
    except ValidationError as e:
        raise TraceDecodingError(
            f"Invalid log entry: {e.errors()[0]['msg']}", line_number=line_number
        ) from e


# =============================================================================
# Files
# =============================================================================


def _decode_line(raw: bytes, line_number: int) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise TraceDecodingError(f"Invalid UTF-8: {e.reason}", line_number=line_number) from e


def _iter_body(path: Path, file_format: str) -> Iterator[tuple[int, str]]:
    # Blank lines may only trail the body so line numbers stay positional.
    with path.open("rb") as handle:
        first = handle.readline()
        if not first:
            raise TraceDecodingError("Missing header", line_number=1)
        check_header(_decode_line(first, 1), file_format)
        blank_at: int | None = None
        for line_number, raw in enumerate(handle, start=2):
            line = _decode_line(raw, line_number)
            if not line.strip():
                blank_at = blank_at or line_number
                continue
            if blank_at is not None:
                raise TraceDecodingError("Blank line inside log", line_number=blank_at)
            yield line_number, line


def read_log(path: Path | str) -> list[LogEntry]:
    """
    Read a trace log.

    Entry ``i`` of the result sits on line ``i + 2`` of the file.

    Raises:
        TraceDecodingError: On a bad header or an undecodable line.
    """
    path = Path(path)
    entries = [decode_entry(line, n) for n, line in _iter_body(path, TRACE_FORMAT)]
    logger.info("Read %d trace entries from %s", len(entries), path)
    return entries


def write_log(path: Path | str, entries: Iterable[LogEntry]) -> int:
    """Write a complete trace log and return the number of entries."""
    path = Path(path)
    count = 0
    with path.open("w", encoding="utf-8") as handle:
        handle.write(header_line(TRACE_FORMAT) + "\n")
        for entry in entries:
            handle.write(encode_entry(entry) + "\n")
            count += 1
    return count


def write_records(
    path: Path | str, file_format: str, records: Iterable[BaseModel]
) -> None:
    """Write pydantic records in the line format under a given header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        handle.write(header_line(file_format) + "\n")
        for record in records:
            try:
                handle.write(record.model_dump_json() + "\n")
            except PydanticSerializationError as e:
                raise TraceEncodingError(str(e)) from e


def read_records(path: Path | str, file_format: str, adapter: TypeAdapter[T]) -> list[T]:
    """Read records written by :func:`write_records`."""
    records: list[T] = []
    for line_number, line in _iter_body(Path(path), file_format):
        try:
            records.append(adapter.validate_json(line))
        except ValidationError as e:
            raise TraceDecodingError(
                f"Invalid record: {e.errors()[0]['msg']}", line_number=line_number
            ) from e
    return records


# =============================================================================
# Plan database
# =============================================================================


class TypeLine(BaseModel):
    kind: Literal["type"] = "type"
    model: TypeModel


class PlanLine(BaseModel):
    kind: Literal["plan"] = "plan"
    type_name: str
    plan: ReconstructionPlan


class InfeasibleLine(BaseModel):
    kind: Literal["infeasible"] = "infeasible"
    type_name: str
    message: str


class PointLine(BaseModel):
    kind: Literal["point"] = "point"
    point_id: str


_plan_line_adapter: TypeAdapter[Any] = TypeAdapter(
    Annotated[
        Union[TypeLine, PlanLine, InfeasibleLine, PointLine],
        Field(discriminator="kind"),
    ]
)


def _plan_lines(db: PlanDatabase) -> Iterator[BaseModel]:
    for type_name in sorted(db.types):
        yield TypeLine(model=db.types[type_name])
    for type_name in sorted(db.plans):
        yield PlanLine(type_name=type_name, plan=db.plans[type_name])
    for type_name in sorted(db.infeasible):
        yield InfeasibleLine(type_name=type_name, message=db.infeasible[type_name])
    for point_id in db.points:
        yield PointLine(point_id=point_id)


def write_plan_db(path: Path | str, db: PlanDatabase) -> None:
    """Persist a plan database; output is sorted so identical inputs give identical files."""
    write_records(path, PLAN_FORMAT, _plan_lines(db))
    logger.info(
        "Wrote plan database %s (%d types, %d plans)", path, len(db.types), len(db.plans)
    )


def read_plan_db(path: Path | str) -> PlanDatabase:
    """Load a plan database written by :func:`write_plan_db`."""
    types: dict[str, TypeModel] = {}
    plans: dict[str, ReconstructionPlan] = {}
    infeasible: dict[str, str] = {}
    points: list[str] = []
    for line in read_records(path, PLAN_FORMAT, _plan_line_adapter):
        if isinstance(line, TypeLine):
            types[line.model.type_name] = line.model
        elif isinstance(line, PlanLine):
            plans[line.type_name] = line.plan
        elif isinstance(line, InfeasibleLine):
            infeasible[line.type_name] = line.message
        else:
            points.append(line.point_id)
    return PlanDatabase(
        types=types, plans=plans, infeasible=infeasible, points=tuple(points)
    )

