"""
Post-execution trace analysis.

Builds one timeline per constructed object from a trace log: the constructor
call, the field state over time and the invocations that actually changed the
object (or something reachable from it). Pure invocations, calls on an object
made inside its own constructor and invocations that raised are dropped.
"""

import codecs
import importlib
import logging
from collections.abc import Iterable, Iterator, Mapping, Sequence
from typing import Any, Protocol, runtime_checkable

from pydantic import BaseModel, Field

from .exceptions import ConfigurationError, LogCorruptionError, ResolutionError
from .models import (
    Action,
    ActionKind,
    CallableSpec,
    CapturedValue,
    ConstructEvent,
    FieldSetEvent,
    LogEntry,
    MetaVariable,
    MethodEndEvent,
    MethodStartEvent,
    Parameter,
    ReconstructionPlan,
    SerializationRecord,
    StaticFieldEntry,
    Text,
    iter_object_refs,
    split_type_name,
)

logger = logging.getLogger(__name__)


class ObjectTimeline(BaseModel):
    """
    Everything the trace says about one object.

    Attributes:
        object_id: The object.
        type_name: Its type.
        construct_time: Time of the ConstructEvent.
        construct_action: The constructor call replaying the construction.
        initial_fields: Field values right after construction.
        field_history: ``(time, field, value)`` for every effective field change.
        mutating_calls: ``(end time, action)`` of retained invocations and
            field writes made outside any invocation, in time order.
        reconstructible: False if an invocation on the object raised.
        reason: Why the object is not reconstructible.
    """

    object_id: int
    type_name: str
    construct_time: int
    construct_action: Action
    initial_fields: dict[str, CapturedValue] = Field(default_factory=dict)
    field_history: tuple[tuple[int, str, CapturedValue], ...] = ()
    mutating_calls: tuple[tuple[int, Action], ...] = ()
    reconstructible: bool = True
    reason: str | None = None

    model_config = {"frozen": True}

    def fields_at(self, time: int) -> dict[str, CapturedValue]:
        """Field state at a logical time."""
        state = dict(self.initial_fields)
        for changed_at, name, value in self.field_history:
            if changed_at > time:
                break
            state[name] = value
        return state

    def actions_until(self, time: int) -> list[Action]:
        """Constructor plus every retained action completed by ``time``."""
        return [self.construct_action] + [a for t, a in self.mutating_calls if t <= time]


def _call_action(
    kind: ActionKind,
    name: str,
    owner_type: str,
    args: Sequence[CapturedValue],
    arg_names: Sequence[str],
    kwargs: dict[str, CapturedValue],
    constructing: bool,
    covered: tuple[str, ...] = (),
) -> Action:
    names = [arg_names[i] if i < len(arg_names) else f"arg{i}" for i in range(len(args))]
    parameters = tuple(Parameter(name=n) for n in names) + tuple(
        Parameter(name=k, keyword_only=True) for k in kwargs
    )
    meta = tuple(
        MetaVariable(placeholder_name=n, value=v) for n, v in zip(names, args)
    ) + tuple(MetaVariable(placeholder_name=k, keyword=True, value=v) for k, v in kwargs.items())
    return Action(
        kind=kind,
        constructing=constructing,
        covered_fields=covered,
        callable=CallableSpec(name=name, parameters=parameters, constructing=constructing),
        meta_variables=meta,
        owner_type=owner_type,
    )


def construct_action(event: ConstructEvent) -> Action:
    """The constructor-call action replaying a ConstructEvent."""
    return _call_action(
        ActionKind.CALL_CONSTRUCTOR,
        event.constructor_name,
        event.type_name,
        event.args,
        event.arg_names,
        event.kwargs,
        constructing=True,
        covered=tuple(event.initial_fields),
    )


class _Builder:
    def __init__(self, event: ConstructEvent) -> None:
        self.event = event
        self.state: dict[str, CapturedValue] = dict(event.initial_fields)
        self.history: list[tuple[int, str, CapturedValue]] = []
        self.calls: list[tuple[int, Action]] = []
        self.reason: str | None = None

    def build(self) -> ObjectTimeline:
        return ObjectTimeline(
            object_id=self.event.object_id,
            type_name=self.event.type_name,
            construct_time=self.event.time,
            construct_action=construct_action(self.event),
            initial_fields=self.event.initial_fields,
            field_history=tuple(self.history),
            mutating_calls=tuple(self.calls),
            reconstructible=self.reason is None,
            reason=self.reason,
        )


class _OpenCall:
    def __init__(self, event: MethodStartEvent, line: int) -> None:
        self.event = event
        self.line = line
        # Objects whose fields changed while the call was open.
        self.mutated_objects: set[int] = set()

    @property
    def mutated(self) -> bool:
        return bool(self.mutated_objects)

    @property
    def affected(self) -> set[int]:
        """Changed objects plus the receiver, or nothing for a pure call."""
        return (self.mutated_objects | {self.event.receiver}) if self.mutated else set()


def _under_construction(
    object_id: int, time: int, windows: Mapping[int, tuple[int, int]]
) -> bool:
    window = windows.get(object_id)
    return window is not None and window[0] < time < window[1]


def _mark_unreconstructible(
    object_ids: Iterable[int], builders: Mapping[int, _Builder], reason: str
) -> None:
    for object_id in sorted(object_ids):
        builder = builders.get(object_id)
        if builder is not None and builder.reason is None:
            builder.reason = reason


def build_timelines(
    events: Sequence[LogEntry], first_line: int = 2
) -> dict[int, ObjectTimeline]:
    """
    Build one timeline per constructed object.

    An invocation is kept iff a field of its receiver, or of an object reachable
    from the receiver through object-valued fields, changes before it ends.
    Assignments whose old and new values are equal change nothing. Invocations
    on an object that start while that object's constructor runs are part of
    its construction; an invocation nested in an open invocation on the same
    receiver is covered by the outer one. An invocation that raised, or never
    ended, leaves every object it changed unreconstructible.

    Args:
        events: Log entries in file order; serialization records and static
            entries are skipped.
        first_line: File line of ``events[0]`` (the header is line 1).

    Raises:
        LogCorruptionError: On non-increasing times, reused object ids, unknown
            receivers or unmatched method ends.
    """
    windows: dict[int, tuple[int, int]] = {}
    known: set[int] = set()
    previous = -1
    for index, entry in enumerate(events):
        line = first_line + index
        if entry.time <= previous:
            raise LogCorruptionError(
                f"Time {entry.time} does not increase over {previous}", line
            )
        previous = entry.time
        if isinstance(entry, ConstructEvent):
            if entry.object_id in known:
                raise LogCorruptionError(f"Object id {entry.object_id} reused", line)
            known.add(entry.object_id)
            if entry.start_time is not None:
                windows[entry.object_id] = (entry.start_time, entry.time)
        elif isinstance(entry, StaticFieldEntry):
            known.add(entry.object_id)

    builders: dict[int, _Builder] = {}
    states: dict[int, dict[str, CapturedValue]] = {}
    open_calls: dict[int, _OpenCall] = {}

    def reachable(root: int) -> set[int]:
        seen = {root}
        pending = [root]
        while pending:
            current = pending.pop()
            for value in states.get(current, {}).values():
                for ref in iter_object_refs(value):
                    if ref.object_id not in seen:
                        seen.add(ref.object_id)
                        pending.append(ref.object_id)
        return seen

    for index, entry in enumerate(events):
        line = first_line + index
        if isinstance(entry, ConstructEvent):
            builders[entry.object_id] = _Builder(entry)
            states[entry.object_id] = builders[entry.object_id].state
        elif isinstance(entry, MethodStartEvent):
            if entry.receiver not in known:
                raise LogCorruptionError(f"Unknown receiver {entry.receiver}", line)
            if entry.call_id in open_calls:
                raise LogCorruptionError(f"Call id {entry.call_id} reused", line)
            open_calls[entry.call_id] = _OpenCall(entry, line)
        elif isinstance(entry, MethodEndEvent):
            call = open_calls.pop(entry.call_id, None)
            if call is None:
                raise LogCorruptionError(
                    f"Method end without start for call {entry.call_id}", line
                )
            _close_call(call, entry, builders, open_calls, windows)
        elif isinstance(entry, FieldSetEvent):
            if entry.receiver not in known:
                raise LogCorruptionError(f"Unknown receiver {entry.receiver}", line)
            if entry.old_value == entry.new_value:
                continue
            states.setdefault(entry.receiver, {})[entry.field_name] = entry.new_value
            builder = builders.get(entry.receiver)
            if builder is not None:
                builder.history.append((entry.time, entry.field_name, entry.new_value))
            attributed = False
            for call in open_calls.values():
                if entry.receiver in reachable(call.event.receiver):
                    call.mutated_objects.add(entry.receiver)
                    attributed = True
            if (
                not attributed
                and builder is not None
                and not _under_construction(entry.receiver, entry.time, windows)
            ):
                _record_assignment(builder, entry)

    for call in open_calls.values():
        logger.warning(
            "Call %d to %s never ended", call.event.call_id, call.event.qualified_method_name
        )
        _mark_unreconstructible(
            call.affected, builders, f"unfinished call to {call.event.method_name}"
        )

    timelines = {object_id: b.build() for object_id, b in builders.items()}
    logger.info(
        "Built %d timelines (%d retained calls)",
        len(timelines),
        sum(len(t.mutating_calls) for t in timelines.values()),
    )
    return timelines


def _close_call(
    call: _OpenCall,
    end: MethodEndEvent,
    builders: dict[int, _Builder],
    open_calls: dict[int, _OpenCall],
    windows: Mapping[int, tuple[int, int]],
) -> None:
    start = call.event
    if end.abnormal:
        _mark_unreconstructible(call.affected, builders, f"{start.method_name} raised")
        logger.debug("Discarding abnormal call %d to %s", start.call_id, start.method_name)
        return
    builder = builders.get(start.receiver)
    if builder is None:
        return
    if not call.mutated:
        logger.debug("Filtered pure call %s on %d", start.method_name, start.receiver)
        return
    if _under_construction(start.receiver, start.time, windows):
        return
    if any(other.event.receiver == start.receiver for other in open_calls.values()):
        return
    builder.calls.append(
        (
            end.time,
            _call_action(
                ActionKind.CALL_METHOD,
                start.method_name,
                builder.event.type_name,
                start.args,
                start.arg_names,
                start.kwargs,
                constructing=False,
            ),
        )
    )


def _record_assignment(builder: _Builder, entry: FieldSetEvent) -> None:
    if entry.field_name.startswith("_"):
        if builder.reason is None:
            builder.reason = f"private field {entry.field_name} written outside methods"
        return
    builder.calls.append(
        (
            entry.time,
            Action(
                kind=ActionKind.ASSIGN_FIELD,
                covered_fields=(entry.field_name,),
                meta_variables=(
                    MetaVariable(
                        placeholder_name=entry.field_name,
                        bound_field=entry.field_name,
                        value=entry.new_value,
                    ),
                ),
                owner_type=builder.event.type_name,
                member=entry.field_name,
            ),
        )
    )


# =============================================================================
# Whole-log analysis
# =============================================================================


class TraceAnalysis:
    """
    Timelines plus the other facts of a trace log.

    Attributes:
        timelines: Timeline per constructed object.
        static_entries: Static constant catalog observed at startup.
        records: Serialization records in log order.
        embedded_plans: Instantiated plans of structure-based captures by id.
    """

    def __init__(self, entries: Sequence[LogEntry], first_line: int = 2) -> None:
        self.timelines = build_timelines(entries, first_line)
        self.static_entries = [e for e in entries if isinstance(e, StaticFieldEntry)]
        self.records = [e for e in entries if isinstance(e, SerializationRecord)]
        self.embedded_plans: dict[int, ReconstructionPlan] = {}
        for entry in entries:
            plans = getattr(entry, "embedded_plans", None)
            if plans:
                self.embedded_plans.update(plans)

    def actions_for(self, object_id: int, up_to_time: int) -> list[Action]:
        """
        Return the constructor and every retained action completed by a time.

        Raises:
            ResolutionError: If the object has no timeline.
        """
        timeline = self.timelines.get(object_id)
        if timeline is None:
            raise ResolutionError(object_id, up_to_time)
        return timeline.actions_until(up_to_time)


def actions_for(
    timelines: dict[int, ObjectTimeline], object_id: int, up_to_time: int
) -> list[Action]:
    """Module-level form of :meth:`TraceAnalysis.actions_for`."""
    timeline = timelines.get(object_id)
    if timeline is None:
        raise ResolutionError(object_id, up_to_time)
    return timeline.actions_until(up_to_time)


def resolve_static_constant(
    object_id: int, catalog: Iterable[StaticFieldEntry]
) -> Action | None:
    """
    Return a static field read if the object is a cataloged constant.

    Several catalog entries for one object resolve to the lexicographically
    first ``(type, field)``.
    """
    matches = sorted(
        (e.type_name, e.field_name) for e in catalog if e.object_id == object_id
    )
    if not matches:
        return None
    type_name, field_name = matches[0]
    return Action(
        kind=ActionKind.USE_STATIC_FIELD,
        constructing=True,
        owner_type=type_name,
        member=field_name,
    )


# =============================================================================
# Named-constant adapters
# =============================================================================


@runtime_checkable
class NamedConstantAdapter(Protocol):
    """Maps a traced object to a well-known named constant."""

    name: str

    def match(self, timeline: ObjectTimeline) -> Action | None:
        """Return a ``use_named_constant`` action, or None if not applicable."""
        ...


class EncodingConstantAdapter:
    """
    Replaces text-encoding descriptors with canonical named constants.

    A descriptor is an object of one of ``type_names`` whose encoding name is
    its first constructor argument or its ``field`` field. The name is
    normalized with :func:`codecs.lookup` and looked up in ``constants``.
    """

    DEFAULT_CONSTANTS = {
        "utf-8": "UTF_8",
        "utf-16": "UTF_16",
        "utf-16-le": "UTF_16LE",
        "utf-16-be": "UTF_16BE",
        "ascii": "US_ASCII",
        "iso8859-1": "ISO_8859_1",
    }

    def __init__(
        self,
        type_names: Iterable[str],
        constants_owner: str,
        field: str = "name",
        constants: dict[str, str] | None = None,
    ) -> None:
        self.name = "encoding"
        self.type_names = frozenset(type_names)
        self.constants_owner = constants_owner
        self.field = field
        self.constants = constants or dict(self.DEFAULT_CONSTANTS)

    def _encoding_name(self, timeline: ObjectTimeline) -> str | None:
        value = timeline.initial_fields.get(self.field)
        if not isinstance(value, Text):
            metas = timeline.construct_action.meta_variables
            value = metas[0].value if metas else None
        return value.value if isinstance(value, Text) else None

    def match(self, timeline: ObjectTimeline) -> Action | None:
        if timeline.type_name not in self.type_names or timeline.mutating_calls:
            return None
        raw = self._encoding_name(timeline)
        if raw is None:
            return None
        try:
            canonical = codecs.lookup(raw).name
        except LookupError:
            return None
        constant = self.constants.get(canonical)
        if constant is None:
            return None
        return Action(
            kind=ActionKind.USE_NAMED_CONSTANT,
            constructing=True,
            owner_type=self.constants_owner,
            member=constant,
        )


def apply_named_constant_adapters(
    timeline: ObjectTimeline,
    adapters: Sequence[NamedConstantAdapter],
    diagnostics: list[str] | None = None,
) -> Action | None:
    """
    Ask each adapter in registration order; the first match wins.

    An adapter that raises is skipped and a diagnostic is appended.
    """
    for adapter in adapters:
        try:
            action = adapter.match(timeline)
        except Exception as e:  # plugins are untrusted
            message = f"adapter {getattr(adapter, 'name', adapter)!s} failed on object {timeline.object_id}: {e}"
            logger.warning("Named-constant %s", message)
            if diagnostics is not None:
                diagnostics.append(message)
            continue
        if action is not None:
            return action
    return None


def load_adapters(specs: Iterable[str]) -> list[NamedConstantAdapter]:
    """
    Instantiate adapters from ``module:callable`` factory specs.

    Raises:
        ConfigurationError: If a spec cannot be imported or does not produce an
            adapter.
    """
    adapters: list[NamedConstantAdapter] = []
    for spec in specs:
        module_name, qualname = split_type_name(spec)
        if module_name is None:
            raise ConfigurationError(f"Adapter spec must be 'module:callable': {spec!r}")
        try:
            target: Any = importlib.import_module(module_name)
            for part in qualname.split("."):
                target = getattr(target, part)
            adapter = target()
        except (ImportError, AttributeError, TypeError) as e:
            raise ConfigurationError(f"Cannot load adapter {spec!r}: {e}") from e
        if not isinstance(adapter, NamedConstantAdapter):
            raise ConfigurationError(f"{spec!r} did not produce a named-constant adapter")
        adapters.append(adapter)
    return adapters


def iter_timelines(analysis: TraceAnalysis) -> Iterator[ObjectTimeline]:
    """Timelines in object id order."""
    for object_id in sorted(analysis.timelines):
        yield analysis.timelines[object_id]
