"""
Unit tests for the execution-phase recorder.

These tests verify value capture, the record operations and their contracts,
persistence through the writer thread and thread safety.
"""

import io
import threading
import time
from pathlib import Path
from typing import Any

import pytest

from plaincode.analyzer import SelectionCriteria, TypeRegistry, build_plan_database
from plaincode.exceptions import ContractViolation, RecorderFailedError
from plaincode.models import (
    NULL,
    ConstructEvent,
    CostTable,
    EnumConstant,
    FieldSetEvent,
    MapValue,
    MethodEndEvent,
    MethodStartEvent,
    ObjectRef,
    Opaque,
    PlanDatabase,
    PrimitiveLiteral,
    SequenceValue,
    SerializationRecord,
    StaticFieldEntry,
    Text,
)
from plaincode.recorder import Recorder, field_snapshot
from plaincode.wire import check_header, decode_entry, read_log
from tests.fixtures.catalog import Catalog
from tests.fixtures.zoo import EyeColor, Monkey

# =============================================================================
# Fixtures
# =============================================================================


class Thing:
    """A plain object with one field."""

    def __init__(self, value: Any = None) -> None:
        self.value = value


class BrokenStream(io.StringIO):
    """A stream whose writes always fail."""

    def write(self, text: str) -> int:
        raise OSError("disk full")


class SlowStream(io.StringIO):
    """A stream whose writes take a fixed time."""

    delay = 0.01

    def write(self, text: str) -> int:
        time.sleep(self.delay)
        return super().write(text)


@pytest.fixture
def stream() -> io.StringIO:
    """In-memory trace stream."""
    return io.StringIO()


@pytest.fixture
def recorder(stream: io.StringIO):
    """A started recorder writing to memory."""
    recorder = Recorder(stream=stream).start()
    yield recorder
    recorder.close()


@pytest.fixture(scope="module")
def zoo_plans() -> PlanDatabase:
    """Plan database of the zoo fixture."""
    registry, declarations = TypeRegistry.from_modules(["tests.fixtures.zoo"])
    return build_plan_database(registry, declarations, SelectionCriteria(), CostTable())


def _entries(stream: io.StringIO) -> list[Any]:
    lines = stream.getvalue().splitlines()
    check_header(lines[0])
    return [decode_entry(line, n) for n, line in enumerate(lines[1:], start=2)]


# =============================================================================
# Lifecycle Tests
# =============================================================================


class TestLifecycle:
    """Tests for starting and stopping the recorder."""

    def test_requires_destination(self) -> None:
        """A path or a stream is required."""
        with pytest.raises(ValueError, match="path or stream"):
            Recorder()

    def test_record_before_start(self) -> None:
        """Record operations need a started recorder."""
        recorder = Recorder(stream=io.StringIO())
        with pytest.raises(ContractViolation, match="Recorder is not started"):
            recorder.record_construct(Thing())

    def test_double_start(self, recorder: Recorder) -> None:
        """A recorder starts once."""
        with pytest.raises(ContractViolation, match="already started"):
            recorder.start()

    def test_context_manager_writes_header(self, stream: io.StringIO) -> None:
        """The header is written even for an empty trace."""
        with Recorder(stream=stream) as recorder:
            assert recorder.active
        assert not recorder.active
        assert _entries(stream) == []

    def test_writes_file(self, tmp_path: Path) -> None:
        """Traces written to a path can be read back."""
        path = tmp_path / "nested" / "trace.jsonl"
        with Recorder(path) as recorder:
            recorder.record_construct(Thing(1))
        entries = read_log(path)
        assert len(entries) == 1
        assert recorder.persisted == 1

    def test_close_is_idempotent(self, stream: io.StringIO) -> None:
        """Closing twice is harmless."""
        recorder = Recorder(stream=stream).start()
        recorder.close()
        recorder.close()
        assert not recorder.active

    def test_failed_persistence(self) -> None:
        """A failed writer makes later record operations fail."""
        recorder = Recorder(stream=BrokenStream()).start()
        recorder.close()
        assert recorder.failed
        with pytest.raises(RecorderFailedError):
            recorder.record_construct(Thing())

    def test_from_settings(self, tmp_path: Path) -> None:
        """Bounds and paths come from settings."""
        from plaincode.config import Settings

        settings = Settings(trace_path=tmp_path / "t.jsonl", max_depth=3, batch_size=7)
        recorder = Recorder.from_settings(settings)
        assert recorder.path == tmp_path / "t.jsonl"
        assert recorder.max_depth == 3
        assert recorder.batch_size == 7


# =============================================================================
# Capture Tests
# =============================================================================


class TestCaptureValue:
    """Tests for capture_value()."""

    def test_scalars(self) -> None:
        """None, booleans, numbers, text and enum members are captured by value."""
        recorder = Recorder(stream=io.StringIO())
        assert recorder.capture_value(None) == NULL
        assert recorder.capture_value(True) == PrimitiveLiteral(value=True, type_name="bool")
        assert recorder.capture_value(7) == PrimitiveLiteral(value=7, type_name="int")
        assert recorder.capture_value("hi") == Text(value="hi")
        assert recorder.capture_value(EyeColor.GREEN) == EnumConstant(
            type_name="tests.fixtures.zoo:EyeColor", constant_name="GREEN"
        )

    def test_sequences(self) -> None:
        """Lists, tuples and sets keep their container kind."""
        recorder = Recorder(stream=io.StringIO())
        captured = recorder.capture_value((1, "a"))
        assert isinstance(captured, SequenceValue)
        assert captured.container == "tuple"
        assert captured.elements == (PrimitiveLiteral(value=1), Text(value="a"))

    def test_sets_are_ordered(self) -> None:
        """Set elements are captured in a canonical order."""
        recorder = Recorder(stream=io.StringIO())
        first = recorder.capture_value({"b", "a", "c"})
        second = recorder.capture_value({"c", "a", "b"})
        assert first == second
        assert first.container == "set"

    def test_truncation(self) -> None:
        """Sequences and maps longer than the bound are truncated."""
        recorder = Recorder(stream=io.StringIO(), max_sequence_length=3)
        captured = recorder.capture_value(list(range(5)))
        assert len(captured.elements) == 3
        assert captured.truncated
        mapping = recorder.capture_value({i: i for i in range(4)})
        assert isinstance(mapping, MapValue)
        assert len(mapping.entries) == 3
        assert mapping.truncated

    def test_depth_bound(self) -> None:
        """Nesting deeper than the bound becomes opaque."""
        recorder = Recorder(stream=io.StringIO(), max_depth=1)
        captured = recorder.capture_value([[1]])
        assert captured.elements == (Opaque(type_name="list"),)

    def test_unknown_object_is_opaque(self) -> None:
        """Objects without a strategy are opaque."""
        recorder = Recorder(stream=io.StringIO())
        assert recorder.capture_value(Thing()) == Opaque(
            type_name="tests.unit.test_recorder:Thing"
        )

    def test_registered_object_is_reference(self, recorder: Recorder) -> None:
        """Registered objects are captured as references at the current time."""
        thing = Thing()
        object_id = recorder.record_construct(thing)
        captured = recorder.capture_value(thing)
        assert captured == ObjectRef(object_id=object_id, logical_time=recorder.clock)

    def test_structure_based_object(self, stream: io.StringIO, zoo_plans: PlanDatabase) -> None:
        """Objects with a plan are captured with an instantiated plan."""
        monkey = Monkey(3, EyeColor.BROWN, None)
        with Recorder(stream=stream, plan_db=zoo_plans) as recorder:
            record = recorder.request_serialization(
                "tests.fixtures.zoo:Zoo.describe", None, [monkey], return_value="ok",
                arg_names=["monkey"],
            )
        ref = record.args[0]
        assert isinstance(ref, ObjectRef)
        plan = record.embedded_plans[ref.object_id]
        assert plan.is_instantiated
        values = {m.placeholder_name: m.value for m in plan.actions[0].meta_variables}
        assert values == {
            "age": PrimitiveLiteral(value=3),
            "eye_color": EnumConstant(
                type_name="tests.fixtures.zoo:EyeColor", constant_name="BROWN"
            ),
            "habitat": NULL,
        }

    def test_shared_structure_captured_once(
        self, stream: io.StringIO, zoo_plans: PlanDatabase
    ) -> None:
        """The same object twice in one record gets one id."""
        monkey = Monkey(3, EyeColor.BROWN, None)
        with Recorder(stream=stream, plan_db=zoo_plans) as recorder:
            record = recorder.request_serialization(
                "tests.fixtures.zoo:Zoo.describe", None, [[monkey, monkey]]
            )
        first, second = record.args[0].elements
        assert first.object_id == second.object_id
        assert len(record.embedded_plans) == 1


class TestFieldSnapshot:
    """Tests for field_snapshot()."""

    def test_dict_and_slots(self) -> None:
        """Instance attributes and slots are both reported."""

        class Slotted:
            __slots__ = ("a", "b")

            def __init__(self) -> None:
                self.a = 1

        assert field_snapshot(Thing(2)) == {"value": 2}
        assert field_snapshot(Slotted()) == {"a": 1}


# =============================================================================
# Record Operation Tests
# =============================================================================


class TestRecordOperations:
    """Tests for the record operations."""

    def test_construct(self, stream: io.StringIO) -> None:
        """Constructions carry arguments and initial fields."""
        with Recorder(stream=stream) as recorder:
            start = recorder.begin_construct()
            thing = Thing("x")
            object_id = recorder.record_construct(
                thing, args=["x"], arg_names=["value"], start_time=start
            )
        [event] = _entries(stream)
        assert isinstance(event, ConstructEvent)
        assert event.object_id == object_id
        assert event.type_name == "tests.unit.test_recorder:Thing"
        assert event.args == (Text(value="x"),)
        assert event.arg_names == ("value",)
        assert event.initial_fields == {"value": Text(value="x")}
        assert event.start_time == start < event.time

    def test_construct_twice(self, recorder: Recorder) -> None:
        """An object is registered once."""
        thing = Thing()
        object_id = recorder.record_construct(thing)
        with pytest.raises(ContractViolation, match=f"already registered as {object_id}"):
            recorder.record_construct(thing)

    def test_method_calls(self, stream: io.StringIO) -> None:
        """Starts and ends pair up by call id."""
        with Recorder(stream=stream) as recorder:
            object_id = recorder.record_construct(Thing())
            call_id = recorder.record_method_start(
                object_id, "m:Thing.poke", args=[1], arg_names=["times"]
            )
            recorder.record_method_end(call_id, abnormal=True)
        _, start, end = _entries(stream)
        assert isinstance(start, MethodStartEvent)
        assert start.method_name == "poke"
        assert start.args == (PrimitiveLiteral(value=1),)
        assert isinstance(end, MethodEndEvent)
        assert end.call_id == start.call_id == call_id
        assert end.abnormal

    def test_unknown_receiver(self, recorder: Recorder) -> None:
        """Calls and writes need a registered receiver."""
        with pytest.raises(ContractViolation, match="Unknown receiver object id 99"):
            recorder.record_method_start(99, "m:Thing.poke")
        with pytest.raises(ContractViolation, match="Unknown receiver object id 99"):
            recorder.record_field_set(99, "value", 1, 2)

    def test_unknown_call(self, recorder: Recorder) -> None:
        """Ends need an open call."""
        with pytest.raises(ContractViolation, match="Unknown call id 5"):
            recorder.record_method_end(5)

    def test_call_ends_once(self, recorder: Recorder) -> None:
        """A call id cannot end twice."""
        object_id = recorder.record_construct(Thing())
        call_id = recorder.record_method_start(object_id, "m:Thing.poke")
        recorder.record_method_end(call_id)
        with pytest.raises(ContractViolation, match=f"Unknown call id {call_id}"):
            recorder.record_method_end(call_id)

    def test_field_set_with_equal_values(self, stream: io.StringIO) -> None:
        """Writes that change nothing are still recorded."""
        with Recorder(stream=stream) as recorder:
            object_id = recorder.record_construct(Thing(1))
            recorder.record_field_set(object_id, "value", 1, 1)
        _, event = _entries(stream)
        assert isinstance(event, FieldSetEvent)
        assert event.old_value == event.new_value == PrimitiveLiteral(value=1)

    def test_static_constants(self, stream: io.StringIO) -> None:
        """Class constants holding instances are catalogued by name."""
        with Recorder(stream=stream) as recorder:
            entries = recorder.catalog_static_constants([Catalog, EyeColor])
        assert [e.field_name for e in entries] == ["LEGAL", "STANDARD"]
        persisted = _entries(stream)
        assert all(isinstance(e, StaticFieldEntry) for e in persisted)
        assert recorder.object_id_of(Catalog.LEGAL) == entries[0].object_id

    def test_two_phase_serialization(self, stream: io.StringIO) -> None:
        """Arguments are captured before the call and the result after it."""
        with Recorder(stream=stream) as recorder:
            values = [1]
            pending = recorder.begin_serialization("m:f", None, [values], ["values"])
            values.append(2)
            record = pending.complete(len(values))
        [persisted] = _entries(stream)
        assert isinstance(persisted, SerializationRecord)
        assert persisted == record
        assert record.args[0].elements == (PrimitiveLiteral(value=1),)
        assert record.return_value == PrimitiveLiteral(value=2)
        assert record.start_time is not None and record.start_time < record.time
        assert len(recorder.latencies) == 1

    def test_times_strictly_increase(self, stream: io.StringIO) -> None:
        """Every entry gets a fresh logical time."""
        with Recorder(stream=stream) as recorder:
            object_id = recorder.record_construct(Thing())
            for i in range(10):
                recorder.record_field_set(object_id, "value", i, i + 1)
        times = [e.time for e in _entries(stream)]
        assert times == sorted(set(times))


# =============================================================================
# Concurrency Tests
# =============================================================================


class TestConcurrency:
    """Tests for recording from several threads."""

    def test_no_entry_lost(self, stream: io.StringIO) -> None:
        """Concurrent producers lose nothing and times stay ordered."""
        per_thread = 200

        def produce(recorder: Recorder) -> None:
            for i in range(per_thread):
                thing = Thing()
                object_id = recorder.record_construct(thing)
                recorder.record_field_set(object_id, "value", None, i)

        with Recorder(stream=stream, queue_capacity=8, batch_size=4) as recorder:
            threads = [threading.Thread(target=produce, args=(recorder,)) for _ in range(4)]
            for thread in threads:
                thread.start()
            for thread in threads:
                thread.join()

        entries = _entries(stream)
        assert len(entries) == 4 * per_thread * 2
        assert recorder.persisted == len(entries)
        times = [e.time for e in entries]
        assert all(a < b for a, b in zip(times, times[1:]))
        ids = [e.object_id for e in entries if isinstance(e, ConstructEvent)]
        assert len(set(ids)) == 4 * per_thread

    def test_full_queue_blocks_producer(self) -> None:
        """A producer outrunning the writer waits instead of dropping entries."""
        stream = SlowStream()
        count = 30
        with Recorder(stream=stream, queue_capacity=2, batch_size=1) as recorder:
            object_id = recorder.record_construct(Thing())
            started = time.perf_counter()
            for i in range(count):
                recorder.record_field_set(object_id, "value", None, i)
            blocked = time.perf_counter() - started

        # Each entry beyond the queue slots waits for one slow write.
        assert blocked >= SlowStream.delay * (count - 10)
        entries = _entries(stream)
        assert len(entries) == count + 1
        assert recorder.persisted == count + 1
        sets = [e for e in entries if isinstance(e, FieldSetEvent)]
        assert [e.new_value.value for e in sets] == list(range(count))

    def test_rapid_assignments_keep_order(self, stream: io.StringIO) -> None:
        """Ten thousand back-to-back assignments persist in program order."""
        count = 10_000
        with Recorder(stream=stream, queue_capacity=64, batch_size=32) as recorder:
            thing = Thing(0)
            object_id = recorder.record_construct(thing)
            for i in range(1, count + 1):
                recorder.record_field_set(object_id, "value", i - 1, i)

        sets = [e for e in _entries(stream) if isinstance(e, FieldSetEvent)]
        assert len(sets) == count
        assert [e.new_value.value for e in sets] == list(range(1, count + 1))
        assert all(e.old_value.value == e.new_value.value - 1 for e in sets)
        times = [e.time for e in sets]
        assert all(a < b for a, b in zip(times, times[1:]))
