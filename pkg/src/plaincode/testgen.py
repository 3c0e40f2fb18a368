"""
Arrange-Act-Assert test generation from serialization records.

Each record becomes one test: the receiver and arguments are reconstructed in
Arrange, the method under test is invoked once in Act, and the captured return
value is asserted in Assert. Records whose objects cannot be reconstructed are
discarded with a reason; records that emit identical code collapse into one
test. Tests are grouped into one pytest module per method owner.
"""

import json
import logging
import time
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from pathlib import Path

from pydantic import BaseModel, Field

from .config import Settings
from .database import ReconstructionDatabase
from .emitter import (
    AssertStatement,
    BindStatement,
    CallExpr,
    ConstantExpr,
    DiagnosticCode,
    EmissionUnit,
    Emitter,
    Expr,
    Helper,
    LiteralExpr,
    NameExpr,
    NamingContext,
    Section,
    Statement,
    concat_units,
    deduplicate,
    fingerprint,
    inline_primitives,
    order_helpers,
    outline_helpers,
    sanitize_identifier,
    snake_case,
    statement_binds,
    statement_uses,
)
from .exceptions import EmissionError, PlainCodeError
from .models import (
    CapturedValue,
    EnumConstant,
    NullValue,
    PrimitiveLiteral,
    SerializationRecord,
    Text,
    short_type_name,
    split_type_name,
)
from .render import render_test_module

logger = logging.getLogger(__name__)

ACTUAL = "actual"
EXPECTED = "expected"
RESERVED_NAMES = (ACTUAL, "math", "assert_deep_equals")
GENERATION_REPORT = "report.json"

# =============================================================================
# Models
# =============================================================================


class GenerationStatus(str, Enum):
    """Whether a record produced a test."""

    EMITTED = "emitted"
    DISCARDED = "discarded"


class DiscardReason(str, Enum):
    """Machine-readable reason a record produced no test."""

    NOT_RECONSTRUCTIBLE = "not_reconstructible"
    UNRESOLVED_REFERENCE = "unresolved_reference"
    TRUNCATED_CAPTURE = "truncated_capture"
    OPAQUE_VALUE = "opaque_value"
    EMISSION_FAILED = "emission_failed"


# Discards that point at a defect rather than a known limitation.
ERROR_REASONS = frozenset({DiscardReason.UNRESOLVED_REFERENCE, DiscardReason.EMISSION_FAILED})

# First match wins.
_DIAGNOSTIC_REASONS = (
    (DiagnosticCode.UNRESOLVED, DiscardReason.UNRESOLVED_REFERENCE),
    (DiagnosticCode.NOT_RECONSTRUCTIBLE, DiscardReason.NOT_RECONSTRUCTIBLE),
    (DiagnosticCode.OPAQUE, DiscardReason.OPAQUE_VALUE),
    (DiagnosticCode.TRUNCATED, DiscardReason.TRUNCATED_CAPTURE),
    (DiagnosticCode.CYCLE, DiscardReason.EMISSION_FAILED),
)


class GeneratedTest(BaseModel):
    """
    One test generated from one serialization record.

    Attributes:
        name: ``test_<method>_<ordinal>``, assigned once duplicates are removed.
        point_id: The serialization point (method under test).
        owner_type: Type declaring the method under test.
        method_name: The method under test.
        time: Logical time of the record.
        status: Emitted or discarded.
        reason: Why the record was discarded.
        detail: Human-readable detail of the discard.
        arrange: Units reconstructing the receiver and the arguments.
        act: The single invocation of the method under test.
        expected: Units reconstructing an object-valued expected output.
        assertion: The single assertion against the expected output.
        fingerprint: Identity of the emitted code, used to drop duplicates.
        duration: Seconds spent emitting.
    """

    name: str = ""
    point_id: str
    owner_type: str
    method_name: str
    time: int
    status: GenerationStatus
    reason: DiscardReason | None = None
    detail: str | None = None
    arrange: tuple[EmissionUnit, ...] = ()
    act: BindStatement | None = None
    expected: tuple[EmissionUnit, ...] = ()
    assertion: AssertStatement | None = None
    fingerprint: str | None = None
    duration: float = Field(0.0, ge=0.0)

    model_config = {"frozen": True}

    @property
    def emitted(self) -> bool:
        return self.status == GenerationStatus.EMITTED

    @property
    def statements(self) -> list[Statement]:
        """Arrange, Act, expected-value and Assert statements in order."""
        statements: list[Statement] = [s for unit in self.arrange for s in unit.statements]
        if self.act is not None:
            statements.append(self.act)
        statements.extend(s for unit in self.expected for s in unit.statements)
        if self.assertion is not None:
            statements.append(self.assertion)
        return statements


class ReportEntry(BaseModel):
    """Outcome of one unique record, as persisted in the report."""

    name: str
    point_id: str
    time: int
    status: GenerationStatus
    reason: DiscardReason | None = None
    detail: str | None = None


class GenerationReport(BaseModel):
    """
    Summary of a generation run.

    Attributes:
        records: Serialization records read, duplicates included.
        files: Test modules written.
        entries: One entry per unique record, in capture order.
    """

    records: int = 0
    files: list[str] = Field(default_factory=list)
    entries: list[ReportEntry] = Field(default_factory=list)

    @classmethod
    def from_tests(
        cls,
        tests: Sequence[GeneratedTest],
        files: Iterable[str] = (),
        records: int | None = None,
    ) -> "GenerationReport":
        entries = [
            ReportEntry(
                name=t.name,
                point_id=t.point_id,
                time=t.time,
                status=t.status,
                reason=t.reason,
                detail=t.detail,
            )
            for t in tests
        ]
        return cls(
            records=len(tests) if records is None else records,
            files=sorted(files),
            entries=entries,
        )

    @property
    def emitted(self) -> int:
        return sum(1 for e in self.entries if e.status == GenerationStatus.EMITTED)

    @property
    def discarded(self) -> int:
        return len(self.entries) - self.emitted

    @property
    def duplicates(self) -> int:
        """Records that collapsed into an earlier identical test."""
        return self.records - len(self.entries)

    @property
    def by_reason(self) -> dict[str, int]:
        """Discards per reason; every reason is listed."""
        counts = {reason.value: 0 for reason in DiscardReason}
        for entry in self.entries:
            if entry.reason is not None:
                counts[entry.reason.value] += 1
        return counts

    @property
    def has_errors(self) -> bool:
        """True iff a record was discarded for an error reason."""
        return any(e.reason in ERROR_REASONS for e in self.entries)

    def write(self, path: Path | str) -> None:
        """Persist the report as JSON; identical runs give identical files."""
        payload = self.model_dump(mode="json")
        payload.update(
            emitted=self.emitted,
            discarded=self.discarded,
            duplicates=self.duplicates,
            by_reason=self.by_reason,
        )
        Path(path).write_text(_dumps(payload), encoding="utf-8")


def _dumps(payload: object) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


# =============================================================================
# Per-record emission
# =============================================================================


def split_point(point_id: str) -> tuple[str, str]:
    """
    Split a serialization point into its owner type and method name.

    A module-level function is its own owner: ``pkg.mod:func`` gives
    ``("pkg.mod:func", "func")``.
    """
    module, qualname = split_type_name(point_id)
    owner, _, method = qualname.rpartition(".")
    if not owner:
        return point_id, qualname
    return (f"{module}:{owner}" if module else owner), method


def _invocation(
    record: SerializationRecord,
    emitter: Emitter,
    owner_type: str,
    method_name: str,
) -> tuple[list[EmissionUnit], BindStatement]:
    units: list[EmissionUnit] = []
    receiver: Expr | None = None
    if not isinstance(record.receiver, NullValue):
        unit = emitter.emit(record.receiver)
        units.append(unit)
        receiver = unit.root

    args: list[Expr] = []
    for index, value in enumerate(record.args):
        name = record.arg_names[index] if index < len(record.arg_names) else None
        unit = emitter.emit(value, preferred_name=name, bind=True)
        units.append(unit)
        args.append(unit.root)
    kwargs: list[tuple[str, Expr]] = []
    for key, value in record.kwargs.items():
        unit = emitter.emit(value, preferred_name=key, bind=True)
        units.append(unit)
        kwargs.append((key, unit.root))

    if receiver is not None:
        call = CallExpr(callee=method_name, receiver=receiver, args=tuple(args), kwargs=tuple(kwargs))
    elif owner_type == record.point_id:
        call = CallExpr(callee="__init__", owner_type=owner_type, args=tuple(args), kwargs=tuple(kwargs))
    else:
        call = CallExpr(callee=method_name, owner_type=owner_type, args=tuple(args), kwargs=tuple(kwargs))
    return units, BindStatement(target=ACTUAL, value=call, section=Section.ACT)


def _expectation(
    value: CapturedValue, emitter: Emitter, tolerance: float | None
) -> tuple[list[EmissionUnit], AssertStatement]:
    actual = NameExpr(name=ACTUAL)
    if isinstance(value, (PrimitiveLiteral, Text, NullValue)):
        approximate = tolerance is not None and isinstance(value, PrimitiveLiteral) and isinstance(
            value.value, float
        )
        return [], AssertStatement(
            actual=actual,
            expected=LiteralExpr(value=value),
            deep=approximate,
            tolerance=tolerance if approximate else None,
        )
    if isinstance(value, EnumConstant):
        return [], AssertStatement(
            actual=actual,
            expected=ConstantExpr(owner_type=value.type_name, member=value.constant_name),
        )
    unit = emitter.emit(value, preferred_name=EXPECTED, section=Section.ASSERT)
    return [unit], AssertStatement(actual=actual, expected=unit.root, deep=True, tolerance=tolerance)


def emit_test(
    record: SerializationRecord,
    database: ReconstructionDatabase,
    settings: Settings | None = None,
) -> GeneratedTest:
    """
    Emit the test of one record.

    The expected value is emitted by its own emitter (sharing the naming
    scope), so it is rebuilt independently of the Arrange objects the method
    under test may have mutated.

    Returns:
        An emitted test, or a discarded one carrying the reason. Never raises
        for problems of the record itself.
    """
    settings = settings or Settings()
    started = time.perf_counter()
    owner_type, method_name = split_point(record.point_id)

    def finish(**fields: object) -> GeneratedTest:
        test = GeneratedTest(
            point_id=record.point_id,
            owner_type=owner_type,
            method_name=method_name,
            time=record.time,
            duration=time.perf_counter() - started,
            **fields,  # type: ignore[arg-type]
        )
        logger.info(
            "Record %s@%d %s in %.2f ms",
            record.point_id,
            record.time,
            test.reason.value if test.reason else test.status.value,
            test.duration * 1000,
        )
        return test

    naming = NamingContext(RESERVED_NAMES)
    try:
        arrange, act = _invocation(
            record, Emitter(database, naming, settings.strict), owner_type, method_name
        )
        expected, assertion = _expectation(
            record.return_value,
            Emitter(database, naming, settings.strict),
            settings.float_tolerance,
        )
    except EmissionError as e:
        return finish(
            status=GenerationStatus.DISCARDED,
            reason=DiscardReason.UNRESOLVED_REFERENCE,
            detail=e.message,
        )
    except PlainCodeError as e:
        return finish(
            status=GenerationStatus.DISCARDED,
            reason=DiscardReason.EMISSION_FAILED,
            detail=e.message,
        )

    statements = [s for u in arrange for s in u.statements]
    statements.append(act)
    statements.extend(s for u in expected for s in u.statements)
    statements.append(assertion)
    identity = f"{record.point_id}:{fingerprint(statements, NameExpr(name=ACTUAL))}"

    diagnostics = [d for unit in (*arrange, *expected) for d in unit.diagnostics]
    for code, reason in _DIAGNOSTIC_REASONS:
        found = next((d for d in diagnostics if d.code == code), None)
        if found is not None:
            detail = f"{found.message} ({found.reference})" if found.reference else found.message
            return finish(
                status=GenerationStatus.DISCARDED,
                reason=reason,
                detail=detail,
                fingerprint=identity,
            )
    return finish(
        status=GenerationStatus.EMITTED,
        arrange=tuple(arrange),
        act=act,
        expected=tuple(expected),
        assertion=assertion,
        fingerprint=identity,
    )


def _method_slug(method_name: str) -> str:
    return sanitize_identifier(method_name.strip("_") or "call")


def generate_tests(
    records: Sequence[SerializationRecord],
    database: ReconstructionDatabase,
    settings: Settings | None = None,
    workers: int = 4,
) -> list[GeneratedTest]:
    """
    Generate one test per unique record.

    Records are emitted in parallel and processed in capture order. A record
    whose emitted code equals an earlier record's is dropped. Ordinals count
    unique records per method, so names are stable across runs.

    Args:
        records: Serialization records of the trace.
        database: Resolves object references.
        settings: Strictness and float tolerance.
        workers: Emission threads.

    Returns:
        Emitted and discarded tests, in capture order.
    """
    settings = settings or Settings()
    ordered = sorted(records, key=lambda r: r.time)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        candidates = list(pool.map(lambda r: emit_test(r, database, settings), ordered))

    seen: set[str] = set()
    ordinals: dict[tuple[str, str], int] = {}
    tests: list[GeneratedTest] = []
    for test in candidates:
        if test.fingerprint is not None:
            if test.fingerprint in seen:
                logger.debug("Dropping duplicate record %s@%d", test.point_id, test.time)
                continue
            seen.add(test.fingerprint)
        key = (test.owner_type, test.method_name)
        ordinals[key] = ordinals.get(key, 0) + 1
        name = f"test_{_method_slug(test.method_name)}_{ordinals[key]}"
        tests.append(test.model_copy(update={"name": name}))

    emitted = sum(1 for t in tests if t.emitted)
    logger.info(
        "Generated %d tests from %d records (%d discarded, %d duplicates)",
        emitted,
        len(ordered),
        len(tests) - emitted,
        len(ordered) - len(tests),
    )
    return tests


# =============================================================================
# Modules
# =============================================================================


def _mark_external(units: Sequence[EmissionUnit], tail: Sequence[Statement]) -> list[EmissionUnit]:
    """Record, per unit, which of its bindings the rest of the test reads."""
    marked: list[EmissionUnit] = []
    for index, unit in enumerate(units):
        bound = {n for s in unit.statements if (n := statement_binds(s)) is not None}
        used = {n for s in tail for n in statement_uses(s)}
        for other_index, other in enumerate(units):
            if other_index != index:
                used.update(n for s in other.statements for n in statement_uses(s))
        marked.append(unit.model_copy(update={"external": tuple(sorted(bound & used))}))
    return marked


def _shareable(unit: EmissionUnit) -> bool:
    return bool(unit.segments) and len(unit.statements) > 1


def render_owner_module(
    owner_type: str, tests: Sequence[GeneratedTest], outline_threshold: int = 5
) -> str:
    """
    Render the emitted tests of one owner type as a pytest module.

    Object reconstructions repeated across tests become one shared helper;
    long reconstructions are outlined into helpers; single-use primitive
    locals are inlined within their section.
    """
    names = NamingContext(RESERVED_NAMES)
    for test in tests:
        names.reserve(test.name)
        for statement in test.statements:
            target = statement_binds(statement)
            if target is not None:
                names.reserve(target)

    flat: list[EmissionUnit] = []
    for test in tests:
        tail: list[Statement] = [s for s in (test.act, test.assertion) if s is not None]
        flat.extend(_mark_external([*test.arrange, *test.expected], tail))
    candidates = [i for i, unit in enumerate(flat) if _shareable(unit)]
    shared, _ = deduplicate([flat[i] for i in candidates], names)
    for index, unit in zip(candidates, shared):
        flat[index] = unit

    bodies: list[tuple[str, Sequence[Statement]]] = []
    helpers: dict[str, Helper] = {}
    position = 0
    for test in tests:
        arrange = flat[position : position + len(test.arrange)]
        position += len(test.arrange)
        expected = flat[position : position + len(test.expected)]
        position += len(test.expected)
        assert test.act is not None and test.assertion is not None
        actual = NameExpr(name=ACTUAL)
        unit = concat_units(
            [
                *arrange,
                EmissionUnit(statements=(test.act,), root=actual),
                *expected,
                EmissionUnit(statements=(test.assertion,), root=actual),
            ],
            root=actual,
        )
        unit = inline_primitives(outline_helpers(unit, outline_threshold, names))
        for helper in unit.helpers:
            helpers.setdefault(helper.name, helper)
        bodies.append((test.name, unit.statements))

    every_statement = [s for _, body in bodies for s in body]
    ordered = order_helpers(helpers.values(), every_statement)
    return render_test_module(owner_type, bodies, ordered)


def _module_filename(owner_type: str, taken: set[str]) -> str:
    stem = f"test_{snake_case(short_type_name(owner_type))}"
    candidate = f"{stem}.py"
    counter = 2
    while candidate in taken:
        candidate = f"{stem}_{counter}.py"
        counter += 1
    taken.add(candidate)
    return candidate


def build_test_modules(
    tests: Sequence[GeneratedTest], settings: Settings | None = None
) -> dict[str, str]:
    """
    Render every emitted test, one module per owner type.

    Returns:
        Module source by file name, in owner type order.
    """
    settings = settings or Settings()
    by_owner: dict[str, list[GeneratedTest]] = {}
    for test in tests:
        if test.emitted:
            by_owner.setdefault(test.owner_type, []).append(test)
    taken: set[str] = set()
    return {
        _module_filename(owner, taken): render_owner_module(
            owner, by_owner[owner], settings.outline_threshold
        )
        for owner in sorted(by_owner)
    }


def write_tests(
    tests: Sequence[GeneratedTest],
    out_dir: Path | str,
    settings: Settings | None = None,
    records: int | None = None,
) -> GenerationReport:
    """
    Write generated test modules and ``report.json``.

    Args:
        tests: Output of :func:`generate_tests`.
        out_dir: Target directory, created if missing.
        settings: Outline threshold.
        records: Number of records read, for the duplicate count.

    Returns:
        The generation report.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = build_test_modules(tests, settings)
    for filename, source in files.items():
        (out / filename).write_text(source, encoding="utf-8")
        logger.debug("Wrote %s", out / filename)
    report = GenerationReport.from_tests(tests, files, records)
    report.write(out / GENERATION_REPORT)
    logger.info("Wrote %d test modules to %s", len(files), out)
    return report
