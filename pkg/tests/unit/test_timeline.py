"""
Unit tests for post-execution trace analysis.

These tests verify timeline construction, the filtering of pure, nested and
failed invocations, log consistency checks and named-constant adapters.
"""

import pytest

from plaincode.exceptions import ConfigurationError, LogCorruptionError, ResolutionError
from plaincode.models import (
    NULL,
    ActionKind,
    ConstructEvent,
    ObjectRef,
    SerializationRecord,
    StaticFieldEntry,
    Text,
)
from plaincode.timeline import (
    EncodingConstantAdapter,
    ObjectTimeline,
    TraceAnalysis,
    actions_for,
    apply_named_constant_adapters,
    build_timelines,
    construct_action,
    iter_timelines,
    load_adapters,
    resolve_static_constant,
)
from tests.fixtures.events import construct, end, num, start, write

# =============================================================================
# Fixtures
# =============================================================================


@pytest.fixture
def counter_events() -> list:
    """A counter that is incremented once and read once."""
    return [
        construct(2, 1, args=(num(0),), arg_names=("start",), start_time=1),
        start(3, 1, 1, args=(num(5),), arg_names=("amount",)),
        write(4, 1, "count", num(0), num(5)),
        end(5, 1),
        start(6, 2, 1, method="m:Counter.total"),
        end(7, 2),
    ]


# =============================================================================
# Timeline Tests
# =============================================================================


class TestBuildTimelines:
    """Tests for build_timelines()."""

    def test_mutating_call_kept(self, counter_events: list) -> None:
        """Calls that change the receiver are kept, pure calls are dropped."""
        timeline = build_timelines(counter_events)[1]
        assert timeline.reconstructible
        assert [(t, a.label) for t, a in timeline.mutating_calls] == [(5, "add")]
        action = timeline.mutating_calls[0][1]
        assert action.kind == ActionKind.CALL_METHOD
        assert action.meta_variables[0].placeholder_name == "amount"
        assert action.meta_variables[0].value == num(5)

    def test_fields_over_time(self, counter_events: list) -> None:
        """Field state follows the recorded writes."""
        timeline = build_timelines(counter_events)[1]
        assert timeline.fields_at(3) == {"count": num(0)}
        assert timeline.fields_at(4) == {"count": num(5)}

    def test_actions_until(self, counter_events: list) -> None:
        """Actions complete at the end of their call."""
        timeline = build_timelines(counter_events)[1]
        assert [a.label for a in timeline.actions_until(4)] == ["__init__"]
        assert [a.label for a in timeline.actions_until(5)] == ["__init__", "add"]

    def test_equal_write_changes_nothing(self) -> None:
        """A write of the same value does not make a call mutating."""
        events = [
            construct(1, 1),
            start(2, 1, 1),
            write(3, 1, "count", num(0), num(0)),
            end(4, 1),
        ]
        timeline = build_timelines(events)[1]
        assert timeline.mutating_calls == ()
        assert timeline.field_history == ()

    def test_nested_call_on_same_receiver(self) -> None:
        """Only the outermost call on a receiver is replayed."""
        events = [
            construct(1, 1),
            start(2, 1, 1, method="m:Counter.add_twice"),
            start(3, 2, 1),
            write(4, 1, "count", num(0), num(1)),
            end(5, 2),
            end(6, 1),
        ]
        timeline = build_timelines(events)[1]
        assert [a.label for _, a in timeline.mutating_calls] == ["add_twice"]

    def test_change_through_reachable_object(self) -> None:
        """Changing an object reachable from the receiver mutates the receiver."""
        events = [
            construct(1, 1),
            construct(2, 2, fields={"counter": ObjectRef(object_id=1, logical_time=1)},
                      type_name="m:Holder"),
            start(3, 1, 2, method="m:Holder.bump"),
            write(4, 1, "count", num(0), num(1)),
            end(5, 1),
        ]
        timelines = build_timelines(events)
        assert [a.label for _, a in timelines[2].mutating_calls] == ["bump"]
        assert timelines[1].mutating_calls == ()
        assert timelines[1].fields_at(5) == {"count": num(1)}

    def test_call_during_other_construction_kept(self) -> None:
        """A call on a built object is replayed even while another is constructed."""
        events = [
            construct(1, 1),
            start(3, 1, 1),
            write(4, 1, "count", num(0), num(1)),
            end(5, 1),
            construct(6, 2, type_name="m:Holder", fields={}, start_time=2),
        ]
        timeline = build_timelines(events)[1]
        assert [a.label for a in timeline.actions_until(10)] == ["__init__", "add"]
        assert timeline.fields_at(10) == {"count": num(1)}

    def test_write_during_other_construction_kept(self) -> None:
        """A write outside calls during another constructor is replayed."""
        events = [
            construct(1, 1),
            write(3, 1, "count", num(0), num(2)),
            construct(4, 2, type_name="m:Holder", fields={}, start_time=2),
        ]
        [(time, action)] = build_timelines(events)[1].mutating_calls
        assert time == 3
        assert action.kind == ActionKind.ASSIGN_FIELD

    def test_call_inside_own_constructor_dropped(self) -> None:
        """Calls on an object while its own constructor runs are not replayed."""
        events = [
            construct(1, 1),
            start(3, 1, 2, method="m:Holder.attach"),
            write(4, 2, "counter", NULL, ObjectRef(object_id=1, logical_time=1)),
            end(5, 1),
            construct(6, 2, type_name="m:Holder", fields={"counter": NULL}, start_time=2),
        ]
        assert build_timelines(events)[2].mutating_calls == ()

    def test_abnormal_call(self) -> None:
        """A call that raised makes its receiver unreconstructible."""
        events = [
            construct(1, 1),
            start(2, 1, 1),
            write(3, 1, "count", num(0), num(9)),
            end(4, 1, abnormal=True),
        ]
        timeline = build_timelines(events)[1]
        assert not timeline.reconstructible
        assert timeline.reason == "add raised"
        assert timeline.mutating_calls == ()

    def test_abnormal_call_marks_reachable_objects(self) -> None:
        """Objects changed by a call that raised are unreconstructible too."""
        events = [
            construct(1, 2),
            construct(2, 1, fields={"counter": ObjectRef(object_id=2, logical_time=1)},
                      type_name="m:Holder"),
            start(3, 1, 1, method="m:Holder.bump"),
            write(4, 2, "count", num(0), num(1)),
            end(5, 1, abnormal=True),
        ]
        timelines = build_timelines(events)
        assert not timelines[1].reconstructible
        assert not timelines[2].reconstructible
        assert timelines[2].reason == "bump raised"

    def test_abnormal_pure_call(self) -> None:
        """A call that raised without changing anything marks nothing."""
        events = [construct(1, 1), start(2, 1, 1), end(3, 1, abnormal=True)]
        timeline = build_timelines(events)[1]
        assert timeline.reconstructible
        assert timeline.reason is None

    def test_public_write_outside_calls(self) -> None:
        """Writes outside any call are replayed as assignments."""
        events = [construct(1, 1), write(2, 1, "count", num(0), num(4))]
        timeline = build_timelines(events)[1]
        [(time, action)] = timeline.mutating_calls
        assert time == 2
        assert action.kind == ActionKind.ASSIGN_FIELD
        assert action.meta_variables[0].value == num(4)

    def test_private_write_outside_calls(self) -> None:
        """Private writes outside calls cannot be replayed."""
        events = [
            construct(1, 1, fields={"_secret": NULL}),
            write(2, 1, "_secret", NULL, Text(value="x")),
        ]
        timeline = build_timelines(events)[1]
        assert not timeline.reconstructible
        assert timeline.reason == "private field _secret written outside methods"

    def test_unfinished_call(self) -> None:
        """A mutating call that never ended is reported."""
        events = [construct(1, 1), start(2, 1, 1), write(3, 1, "count", num(0), num(1))]
        timeline = build_timelines(events)[1]
        assert timeline.reason == "unfinished call to add"

    def test_static_constants_are_known_receivers(self) -> None:
        """Catalogued constants may receive calls without a construct event."""
        events = [
            StaticFieldEntry(time=1, type_name="m:Counter", field_name="ZERO", object_id=4),
            start(2, 1, 4, method="m:Counter.total"),
            end(3, 1),
        ]
        assert build_timelines(events) == {}


class TestLogConsistency:
    """Tests for corrupted trace logs."""

    def test_time_must_increase(self) -> None:
        """Times strictly increase from line to line."""
        with pytest.raises(LogCorruptionError, match="Time 1 does not increase over 1") as excinfo:
            build_timelines([construct(1, 1), construct(1, 2)])
        assert excinfo.value.line_number == 3

    def test_object_id_reused(self) -> None:
        """Object ids are constructed once."""
        with pytest.raises(LogCorruptionError, match="Object id 1 reused"):
            build_timelines([construct(1, 1), construct(2, 1)])

    def test_unknown_receiver(self) -> None:
        """Calls and writes need a known receiver."""
        with pytest.raises(LogCorruptionError, match="Unknown receiver 7"):
            build_timelines([construct(1, 1), start(2, 1, 7)])
        with pytest.raises(LogCorruptionError, match="Unknown receiver 7"):
            build_timelines([write(1, 7, "count", num(0), num(1))])

    def test_call_id_reused(self) -> None:
        """Open call ids are unique."""
        with pytest.raises(LogCorruptionError, match="Call id 1 reused"):
            build_timelines([construct(1, 1), start(2, 1, 1), start(3, 1, 1)])

    def test_end_without_start(self) -> None:
        """Every end has a start."""
        with pytest.raises(LogCorruptionError, match="Method end without start for call 3"):
            build_timelines([construct(1, 1), end(2, 3)], first_line=10)

    def test_line_numbers_follow_first_line(self) -> None:
        """Reported lines are offset by the first line."""
        with pytest.raises(LogCorruptionError) as excinfo:
            build_timelines([construct(1, 1), end(2, 3)], first_line=10)
        assert excinfo.value.line_number == 11


# =============================================================================
# Action Tests
# =============================================================================


class TestConstructAction:
    """Tests for construct_action()."""

    def test_named_arguments(self) -> None:
        """Parameters take recorded names, falling back to positions."""
        event = construct(1, 1, args=(num(1), num(2)), arg_names=("start",))
        action = construct_action(event)
        assert action.kind == ActionKind.CALL_CONSTRUCTOR
        assert [m.placeholder_name for m in action.meta_variables] == ["start", "arg1"]
        assert action.covered_fields == ("count",)

    def test_keyword_arguments(self) -> None:
        """Keyword arguments become keyword meta-variables."""
        event = ConstructEvent(
            time=1, object_id=1, type_name="m:Counter", kwargs={"step": num(2)}
        )
        meta = construct_action(event).meta_variables[0]
        assert meta.placeholder_name == "step"
        assert meta.keyword


class TestTraceAnalysis:
    """Tests for TraceAnalysis."""

    def test_collects_records_and_constants(self, counter_events: list) -> None:
        """Records and static entries are kept apart from timelines."""
        record = SerializationRecord(point_id="m:Counter.total", time=8)
        static = StaticFieldEntry(time=9, type_name="m:Counter", field_name="ZERO", object_id=1)
        analysis = TraceAnalysis([*counter_events, record, static])
        assert analysis.records == [record]
        assert analysis.static_entries == [static]
        assert list(analysis.timelines) == [1]

    def test_actions_for(self, counter_events: list) -> None:
        """Actions are looked up by object and time."""
        analysis = TraceAnalysis(counter_events)
        assert [a.label for a in analysis.actions_for(1, 7)] == ["__init__", "add"]
        assert [a.label for a in actions_for(analysis.timelines, 1, 2)] == ["__init__"]

    def test_unknown_object(self, counter_events: list) -> None:
        """Objects without a timeline cannot be resolved."""
        with pytest.raises(ResolutionError, match="Cannot resolve object 9@3"):
            TraceAnalysis(counter_events).actions_for(9, 3)
        with pytest.raises(ResolutionError):
            actions_for({}, 9, 3)

    def test_iter_timelines_by_id(self) -> None:
        """Timelines are iterated in id order."""
        analysis = TraceAnalysis([construct(1, 3), construct(2, 1)])
        assert [t.object_id for t in iter_timelines(analysis)] == [1, 3]


class TestResolveStaticConstant:
    """Tests for resolve_static_constant()."""

    def test_first_name_wins(self) -> None:
        """The lexicographically first (type, field) is used."""
        catalog = [
            StaticFieldEntry(time=1, type_name="m:B", field_name="X", object_id=5),
            StaticFieldEntry(time=2, type_name="m:A", field_name="Y", object_id=5),
            StaticFieldEntry(time=3, type_name="m:A", field_name="Z", object_id=6),
        ]
        action = resolve_static_constant(5, catalog)
        assert action is not None
        assert action.kind == ActionKind.USE_STATIC_FIELD
        assert (action.owner_type, action.member) == ("m:A", "Y")

    def test_not_a_constant(self) -> None:
        """Objects outside the catalog resolve to nothing."""
        assert resolve_static_constant(1, []) is None


# =============================================================================
# Adapter Tests
# =============================================================================


def _charset(name: str, mutated: bool = False) -> ObjectTimeline:
    events = [
        construct(1, 1, fields={"_name": Text(value=name)}, type_name="m:Charset",
                  args=(Text(value=name),), arg_names=("name",)),
    ]
    if mutated:
        events.append(write(2, 1, "label", NULL, Text(value="x")))
    return build_timelines(events)[1]


class Exploding:
    """An adapter that always fails."""

    name = "boom"

    def match(self, timeline: ObjectTimeline) -> None:
        raise RuntimeError("kaput")


class TestEncodingConstantAdapter:
    """Tests for EncodingConstantAdapter."""

    @pytest.fixture
    def adapter(self) -> EncodingConstantAdapter:
        return EncodingConstantAdapter(["m:Charset"], "m:StandardCharsets")

    def test_alias_maps_to_constant(self, adapter: EncodingConstantAdapter) -> None:
        """Encoding aliases normalize to one constant."""
        for alias in ("utf8", "UTF-8", "utf_8"):
            action = adapter.match(_charset(alias))
            assert action is not None
            assert action.kind == ActionKind.USE_NAMED_CONSTANT
            assert (action.owner_type, action.member) == ("m:StandardCharsets", "UTF_8")

    def test_latin1(self, adapter: EncodingConstantAdapter) -> None:
        """Latin-1 aliases map to ISO_8859_1."""
        action = adapter.match(_charset("latin-1"))
        assert action is not None and action.member == "ISO_8859_1"

    def test_no_constant(self, adapter: EncodingConstantAdapter) -> None:
        """Encodings without a constant and unknown names do not match."""
        assert adapter.match(_charset("cp1252")) is None
        assert adapter.match(_charset("klingon")) is None

    def test_mutated_object(self, adapter: EncodingConstantAdapter) -> None:
        """Objects changed after construction are replayed instead."""
        assert adapter.match(_charset("utf-8", mutated=True)) is None

    def test_other_type(self) -> None:
        """Only the configured types are considered."""
        adapter = EncodingConstantAdapter(["m:Other"], "m:StandardCharsets")
        assert adapter.match(_charset("utf-8")) is None

    def test_first_match_wins(self, adapter: EncodingConstantAdapter) -> None:
        """Failing adapters are skipped with a diagnostic."""
        diagnostics: list[str] = []
        action = apply_named_constant_adapters(_charset("ascii"), [Exploding(), adapter], diagnostics)
        assert action is not None and action.member == "US_ASCII"
        assert len(diagnostics) == 1
        assert "adapter boom failed on object 1" in diagnostics[0]


class TestLoadAdapters:
    """Tests for load_adapters()."""

    def test_loads_factory(self) -> None:
        """Factories named module:callable are called."""
        [adapter] = load_adapters(["plaincode.corpus:charset_adapter"])
        assert adapter.name == "encoding"

    def test_bad_spec(self) -> None:
        """Specs need a module and a callable."""
        with pytest.raises(ConfigurationError, match="must be 'module:callable'"):
            load_adapters(["charset_adapter"])

    def test_missing_callable(self) -> None:
        """Unknown callables cannot be loaded."""
        with pytest.raises(ConfigurationError, match="Cannot load adapter"):
            load_adapters(["plaincode.corpus:missing_adapter"])

    def test_not_an_adapter(self) -> None:
        """The factory must produce an adapter."""
        with pytest.raises(ConfigurationError, match="did not produce"):
            load_adapters(["builtins:dict"])
