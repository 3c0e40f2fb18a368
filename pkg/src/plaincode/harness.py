"""
Round-trip verification.

Checks that executing emitted code rebuilds an object equal to the original:
:func:`deep_equals` is the structural equality used throughout (cycle-safe,
floats compared bitwise), :class:`ScratchWorkspace` compiles and runs emitted
modules, and :func:`run_corpus` drives the whole record/analyze/emit/verify
loop over the synthetic corpus.

Generated tests import :func:`assert_deep_equals` from here.
"""

import json
import logging
import math
import statistics
import struct
import tempfile
import time
from collections.abc import Iterator
from enum import Enum
from pathlib import Path
from types import CodeType
from typing import Any

from pydantic import BaseModel, Field

from .analyzer import TypeRegistry, build_plan_database
from .config import Settings
from .corpus import CORPUS_POINT, CORPUS_TYPES, charset_adapter, generate_corpus
from .database import ReconstructionDatabase
from .declarations import qualified_name
from .emitter import EmissionUnit, Emitter, inline_primitives, outline_helpers
from .instrument import instrument
from .recorder import Recorder, field_snapshot
from .render import RECONSTRUCT_FUNCTION, render_reconstruction
from .timeline import TraceAnalysis, load_adapters
from .wire import read_log

logger = logging.getLogger(__name__)

ROUNDTRIP_REPORT = "roundtrip.json"

# =============================================================================
# Deep equality
# =============================================================================

_ATOMIC = (type(None), bool, int, str, bytes)


class Comparison(BaseModel):
    """
    Result of a deep comparison.

    Attributes:
        equal: True iff the values are structurally equal.
        path: Where the first difference was found (``root.field[2]``).
        detail: What differs there.
    """

    equal: bool
    path: str | None = None
    detail: str | None = None

    model_config = {"frozen": True}

    def __bool__(self) -> bool:
        return self.equal


def _float_equal(a: float, b: float, tolerance: float | None) -> bool:
    if tolerance is None:
        return struct.pack("<d", a) == struct.pack("<d", b)
    if math.isnan(a) or math.isnan(b):
        return math.isnan(a) and math.isnan(b)
    return a == b or abs(a - b) <= tolerance


def _has_state(obj: Any) -> bool:
    if hasattr(obj, "__dict__"):
        return True
    return any(getattr(klass, "__slots__", ()) for klass in type(obj).__mro__)


class _Comparer:
    """Bisimulation over two object graphs; pairs already assumed equal are skipped."""

    def __init__(self, tolerance: float | None) -> None:
        self.tolerance = tolerance
        self.visited: set[tuple[int, int]] = set()

    def diff(self, a: Any, b: Any, path: str) -> tuple[str, str] | None:
        if a is b:
            return None
        if type(a) is not type(b):
            return path, f"type {type(a).__name__} != {type(b).__name__}"
        if isinstance(a, float):
            return None if _float_equal(a, b, self.tolerance) else (path, f"{a!r} != {b!r}")
        if isinstance(a, complex):
            same = _float_equal(a.real, b.real, self.tolerance) and _float_equal(
                a.imag, b.imag, self.tolerance
            )
            return None if same else (path, f"{a!r} != {b!r}")
        if isinstance(a, (*_ATOMIC, Enum)):
            return None if a == b else (path, f"{a!r} != {b!r}")

        pair = (id(a), id(b))
        if pair in self.visited:
            return None
        self.visited.add(pair)

        if isinstance(a, (list, tuple)):
            if len(a) != len(b):
                return path, f"length {len(a)} != {len(b)}"
            for index, (x, y) in enumerate(zip(a, b)):
                found = self.diff(x, y, f"{path}[{index}]")
                if found:
                    return found
            return None
        if isinstance(a, (set, frozenset)):
            if len(a) != len(b):
                return path, f"size {len(a)} != {len(b)}"
            remaining = list(b)
            for element in a:
                match = self._match(element, remaining)
                if match is None:
                    return path, f"no counterpart for element {element!r}"
                remaining.pop(match)
            return None
        if isinstance(a, dict):
            if len(a) != len(b):
                return path, f"size {len(a)} != {len(b)}"
            keys = list(b)
            for key, value in a.items():
                match = self._match(key, keys)
                if match is None:
                    return path, f"missing key {key!r}"
                found = self.diff(value, b[keys.pop(match)], f"{path}[{key!r}]")
                if found:
                    return found
            return None

        if not _has_state(a):
            return None if a == b else (path, f"{a!r} != {b!r}")
        fields_a, fields_b = field_snapshot(a), field_snapshot(b)
        if fields_a.keys() != fields_b.keys():
            differing = sorted(fields_a.keys() ^ fields_b.keys())
            return path, f"fields {differing} present on one side only"
        for name, value in fields_a.items():
            found = self.diff(value, fields_b[name], f"{path}.{name}")
            if found:
                return found
        return None

    def _match(self, element: Any, candidates: list[Any]) -> int | None:
        for index, candidate in enumerate(candidates):
            saved = set(self.visited)
            if self.diff(element, candidate, "") is None:
                return index
            self.visited = saved
        return None


def deep_equals(a: Any, b: Any, float_tolerance: float | None = None) -> Comparison:
    """
    Compare two values structurally.

    Objects are equal when they have the same type and pairwise equal fields;
    sequences elementwise, sets and dicts by matching members. Floats are
    compared bitwise unless a tolerance is given. Cycles are handled by
    assuming a pair equal while it is being compared.

    Args:
        a: First value.
        b: Second value.
        float_tolerance: Absolute tolerance for floats; None means bitwise.

    Returns:
        The comparison, with the path of the first difference if unequal.
    """
    found = _Comparer(float_tolerance).diff(a, b, "root")
    if found is None:
        return Comparison(equal=True)
    return Comparison(equal=False, path=found[0], detail=found[1])


def assert_deep_equals(actual: Any, expected: Any, float_tolerance: float | None = None) -> None:
    """
    Assert structural equality.

    Raises:
        AssertionError: Naming the path of the first difference.
    """
    comparison = deep_equals(actual, expected, float_tolerance)
    if not comparison.equal:
        raise AssertionError(f"Values differ at {comparison.path}: {comparison.detail}")


# =============================================================================
# Scratch workspace
# =============================================================================


class ScratchWorkspace:
    """
    Temporary directory where emitted modules are written, compiled and run.

    One workspace is reused across objects; :meth:`reset` recreates it.
    """

    def __init__(self, prefix: str = "plaincode-scratch-") -> None:
        self.prefix = prefix
        self._directory: tempfile.TemporaryDirectory[str] | None = None
        self._counter = 0

    @property
    def path(self) -> Path:
        """The workspace directory, created on first use."""
        if self._directory is None:
            self._directory = tempfile.TemporaryDirectory(prefix=self.prefix)
        return Path(self._directory.name)

    def compile(self, source: str, name: str = "reconstruction") -> CodeType:
        """
        Write a module into the workspace and compile it.

        Raises:
            SyntaxError: If the source does not compile.
        """
        self._counter += 1
        target = self.path / f"{name}_{self._counter}.py"
        target.write_text(source, encoding="utf-8")
        return compile(source, str(target), "exec")

    def execute(self, code: CodeType, entry: str = RECONSTRUCT_FUNCTION) -> Any:
        """Run compiled module code and call its entry function."""
        namespace: dict[str, Any] = {
            "__name__": f"plaincode_scratch_{self._counter}",
            "__file__": code.co_filename,
        }
        exec(code, namespace)
        return namespace[entry]()

    def reset(self) -> None:
        """Discard the directory; the next use creates a fresh one."""
        self.close()
        logger.debug("Scratch workspace reset")

    def close(self) -> None:
        """Remove the directory."""
        if self._directory is not None:
            self._directory.cleanup()
            self._directory = None

    def __enter__(self) -> "ScratchWorkspace":
        return self

    def __exit__(self, *args: Any) -> None:
        self.close()


# =============================================================================
# Round trip
# =============================================================================


class OutcomeStatus(str, Enum):
    """Classification of one round trip."""

    EQUAL = "equal"
    UNEQUAL = "unequal"
    COMPILE_FAILED = "compile_failed"
    EXECUTION_FAILED = "execution_failed"
    PARTIAL = "partial"


class Outcome(BaseModel):
    """
    Result of verifying one reconstruction.

    Attributes:
        status: The classification.
        path: First differing path, for ``unequal``.
        message: Compiler or runtime message, or the difference detail.
        duration: Wall-clock seconds spent compiling, running and comparing.
    """

    status: OutcomeStatus
    path: str | None = None
    message: str | None = None
    duration: float = Field(0.0, ge=0.0)

    model_config = {"frozen": True}


def _compile_message(error: SyntaxError | ValueError) -> str:
    if isinstance(error, SyntaxError):
        return f"{error.msg} (line {error.lineno})"
    return str(error)


def verify_roundtrip(
    original: Any,
    emitted: EmissionUnit | str,
    workspace: ScratchWorkspace | None = None,
    float_tolerance: float | None = None,
) -> Outcome:
    """
    Execute emitted code and compare its result with the original value.

    Args:
        original: The value that was captured.
        emitted: An emission unit, or already rendered module source with a
            ``reconstruct()`` function.
        workspace: Workspace to reuse; a temporary one by default.
        float_tolerance: Absolute tolerance for floats; None means bitwise.

    Returns:
        ``partial`` when the capture was truncated (never ``equal``),
        otherwise the comparison result or the compile/run failure.
    """
    started = time.perf_counter()
    partial = isinstance(emitted, EmissionUnit) and emitted.partial
    source = render_reconstruction(emitted) if isinstance(emitted, EmissionUnit) else emitted
    owned = workspace is None
    scratch = workspace or ScratchWorkspace()

    def outcome(status: OutcomeStatus, **details: Any) -> Outcome:
        return Outcome(status=status, duration=time.perf_counter() - started, **details)

    try:
        try:
            code = scratch.compile(source)
        except (SyntaxError, ValueError) as e:
            scratch.reset()
            return outcome(OutcomeStatus.COMPILE_FAILED, message=_compile_message(e))
        try:
            value = scratch.execute(code)
        except Exception as e:  # emitted code may raise anything
            return outcome(OutcomeStatus.EXECUTION_FAILED, message=f"{type(e).__name__}: {e}")
        if partial:
            return outcome(OutcomeStatus.PARTIAL, message="captured collection was truncated")
        comparison = deep_equals(original, value, float_tolerance)
        if comparison.equal:
            return outcome(OutcomeStatus.EQUAL)
        return outcome(OutcomeStatus.UNEQUAL, path=comparison.path, message=comparison.detail)
    finally:
        if owned:
            scratch.close()


class ObjectOutcome(BaseModel):
    """Round-trip outcome of one corpus sample."""

    index: int
    shape: str
    over_bound: bool = False
    status: OutcomeStatus
    path: str | None = None
    message: str | None = None
    duration: float = 0.0


class RoundTripReport(BaseModel):
    """
    Outcomes of a corpus run.

    Attributes:
        seed: Corpus seed.
        outcomes: One entry per sample, in corpus order.
        median_latency_ms: Median serialization latency of the recorder.
    """

    seed: int | None = None
    outcomes: list[ObjectOutcome] = Field(default_factory=list)
    median_latency_ms: float | None = None

    @property
    def total(self) -> int:
        """Number of samples."""
        return len(self.outcomes)

    @property
    def counts(self) -> dict[str, int]:
        """Samples per outcome status; sums to :attr:`total`."""
        counts = {status.value: 0 for status in OutcomeStatus}
        for item in self.outcomes:
            counts[item.status.value] += 1
        return counts

    def failures(self) -> Iterator[ObjectOutcome]:
        """Outcomes that are neither equal nor expected truncations."""
        for item in self.outcomes:
            if item.status == OutcomeStatus.EQUAL:
                continue
            if item.status == OutcomeStatus.PARTIAL and item.over_bound:
                continue
            yield item

    def write(self, path: Path | str) -> None:
        """Persist the report as JSON."""
        payload = {"seed": self.seed, "total": self.total, "counts": self.counts}
        payload.update(self.model_dump(mode="json", exclude={"seed"}))
        Path(path).write_text(_dumps(payload), encoding="utf-8")


def _dumps(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def run_corpus(
    seed: int,
    size: int,
    settings: Settings | None = None,
    out_dir: Path | str | None = None,
    optimize: bool = True,
    cycles: bool = False,
    over_bound_rate: float = 0.0,
) -> RoundTripReport:
    """
    Record, analyze, emit and verify a synthetic corpus.

    The corpus types are analyzed, the trace-based ones are instrumented, the
    samples are generated under recording and each is captured as one
    serialization record. Every record is then emitted and round-tripped.

    Args:
        seed: Corpus seed; equal seeds give equal reports.
        size: Number of samples.
        settings: Bounds, costs, adapters and outline threshold.
        out_dir: Where the trace and ``roundtrip.json`` are kept; a temporary
            directory (and no report file) by default.
        optimize: Apply outlining and primitive inlining before verifying.
        cycles: Include mutually referencing pairs.
        over_bound_rate: Share of samples that are sequences over the bound.

    Returns:
        The report, one outcome per sample.
    """
    settings = settings or Settings()
    started = time.perf_counter()

    registry = TypeRegistry()
    for cls in CORPUS_TYPES:
        registry.register_class(cls)
    plan_db = build_plan_database(
        registry,
        [],
        settings.selection,
        settings.cost_table,
        extra_types=[qualified_name(cls) for cls in CORPUS_TYPES],
    )
    traced = [registry.class_of(name) for name in sorted(plan_db.infeasible)]

    with tempfile.TemporaryDirectory(prefix="plaincode-corpus-") as scratch_dir:
        directory = Path(out_dir) if out_dir is not None else Path(scratch_dir)
        directory.mkdir(parents=True, exist_ok=True)
        trace_path = directory / "corpus-trace.jsonl"
        recorder = Recorder(
            trace_path,
            plan_db,
            max_sequence_length=settings.max_sequence_length,
            max_depth=settings.max_depth,
            queue_capacity=settings.queue_capacity,
            batch_size=settings.batch_size,
        )
        with recorder, instrument(recorder, [cls for cls in traced if cls is not None]):
            samples = generate_corpus(
                seed, size, settings.max_sequence_length, over_bound_rate, cycles
            )
            for sample in samples:
                recorder.request_serialization(CORPUS_POINT, None, return_value=sample.value)
        analysis = TraceAnalysis(read_log(trace_path))

    database = ReconstructionDatabase(
        analysis, adapters=[charset_adapter(), *load_adapters(settings.adapters)]
    )
    report = RoundTripReport(
        seed=seed,
        median_latency_ms=statistics.median(recorder.latencies) * 1000
        if recorder.latencies
        else None,
    )
    with ScratchWorkspace() as workspace:
        for index, (sample, record) in enumerate(zip(samples, analysis.records)):
            unit = Emitter(database, strict=False).emit(record.return_value)
            if optimize:
                unit = inline_primitives(
                    outline_helpers(unit, settings.outline_threshold), preserve_sections=False
                )
            result = verify_roundtrip(sample.value, unit, workspace, settings.float_tolerance)
            if result.status not in {OutcomeStatus.EQUAL, OutcomeStatus.PARTIAL}:
                logger.warning(
                    "Sample %d (%s) %s: %s", index, sample.shape, result.status.value, result.message
                )
            report.outcomes.append(
                ObjectOutcome(
                    index=index,
                    shape=sample.shape,
                    over_bound=sample.over_bound,
                    status=result.status,
                    path=result.path,
                    message=result.message,
                    duration=result.duration,
                )
            )

    if out_dir is not None:
        report.write(Path(out_dir) / ROUNDTRIP_REPORT)
    logger.info(
        "Verified %d samples in %.2f s: %s",
        report.total,
        time.perf_counter() - started,
        report.counts,
    )
    return report


# =============================================================================
# Generated test suites
# =============================================================================


class SuiteResult(BaseModel):
    """
    Result of running a directory of generated tests.

    Attributes:
        files: Test modules found.
        passed: Names of passing tests (``file::test``).
        failed: Failing tests with their message.
        compile_errors: Modules that did not compile, with the message.
    """

    files: list[str] = Field(default_factory=list)
    passed: list[str] = Field(default_factory=list)
    failed: dict[str, str] = Field(default_factory=dict)
    compile_errors: dict[str, str] = Field(default_factory=dict)

    @property
    def ok(self) -> bool:
        """True iff everything compiled and passed."""
        return not self.failed and not self.compile_errors


def check_generated(out_dir: Path | str) -> SuiteResult:
    """
    Compile every generated test module and call its test functions.

    Args:
        out_dir: Directory written by ``plaincode generate``.
    """
    result = SuiteResult()
    for path in sorted(Path(out_dir).glob("test_*.py")):
        result.files.append(path.name)
        source = path.read_text(encoding="utf-8")
        try:
            code = compile(source, str(path), "exec")
        except (SyntaxError, ValueError) as e:
            result.compile_errors[path.name] = _compile_message(e)
            continue
        namespace: dict[str, Any] = {"__name__": f"plaincode_generated_{path.stem}"}
        try:
            exec(code, namespace)
        except Exception as e:  # a broken import fails the whole module
            result.compile_errors[path.name] = f"{type(e).__name__}: {e}"
            continue
        for name, test in namespace.items():
            if not name.startswith("test_") or not callable(test):
                continue
            key = f"{path.name}::{name}"
            try:
                test()
            except Exception as e:  # AssertionError and anything the MUT raises
                result.failed[key] = f"{type(e).__name__}: {e}"
            else:
                result.passed.append(key)
    logger.info(
        "Checked %d generated modules: %d passed, %d failed",
        len(result.files),
        len(result.passed),
        len(result.failed),
    )
    return result
