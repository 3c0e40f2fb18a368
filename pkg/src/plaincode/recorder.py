"""
Execution-phase recorder.

The recorder hands out object ids and logical times, captures runtime values
with bounded depth and length, and persists trace entries through a bounded
queue drained by a dedicated writer thread. When the queue is full, producers
block until the writer has caught up; nothing is dropped.

Record operations are safe to call from any number of threads. The clock, the
identity registry and the queue are updated under one lock, so queue order is
clock order and the persisted log has strictly increasing times.
"""

import enum
import logging
import queue
import threading
import time
from collections.abc import Callable, Iterable, Mapping, Sequence
from pathlib import Path
from typing import Any, TextIO

from .declarations import qualified_name
from .exceptions import ContractViolation, InstantiationError, RecorderFailedError
from .models import (
    NULL,
    CapturedValue,
    ConstructEvent,
    EnumConstant,
    FieldSetEvent,
    LogEntry,
    MapValue,
    MethodEndEvent,
    MethodStartEvent,
    NullValue,
    ObjectRef,
    Opaque,
    PlanDatabase,
    PrimitiveLiteral,
    ReconstructionPlan,
    SequenceValue,
    SerializationRecord,
    StaticFieldEntry,
    Text,
)
from .solver import instantiate_plan
from .wire import TRACE_FORMAT, encode_entry, header_line

logger = logging.getLogger(__name__)

_CAPTURED_TYPES = (
    PrimitiveLiteral,
    Text,
    EnumConstant,
    SequenceValue,
    MapValue,
    NullValue,
    ObjectRef,
    Opaque,
)
_CONTAINERS = {list: "list", tuple: "tuple", set: "set", frozenset: "frozenset"}
_STOP = object()


def field_snapshot(obj: Any) -> dict[str, Any]:
    """Return the instance attributes of an object (``__dict__`` and slots)."""
    values: dict[str, Any] = dict(getattr(obj, "__dict__", {}))
    for klass in type(obj).__mro__:
        for slot in getattr(klass, "__slots__", ()):
            if isinstance(slot, str) and slot not in values and hasattr(obj, slot):
                values[slot] = getattr(obj, slot)
    return values


class _CaptureSession:
    """State shared by the captures of one event or record."""

    def __init__(self) -> None:
        self.structure_ids: dict[int, int] = {}
        self.plans: dict[int, ReconstructionPlan] = {}
        self.keep_alive: list[Any] = []


class PendingSerialization:
    """
    First half of a two-phase serialization.

    Receiver and arguments are captured when the pending record is created;
    :meth:`complete` captures the return value and persists the record.
    """

    def __init__(
        self,
        recorder: "Recorder",
        point_id: str,
        receiver: CapturedValue,
        args: tuple[CapturedValue, ...],
        arg_names: tuple[str, ...],
        kwargs: dict[str, CapturedValue],
        plans: dict[int, ReconstructionPlan],
        start_time: int,
        started: float,
    ) -> None:
        self.recorder = recorder
        self.point_id = point_id
        self.receiver = receiver
        self.args = args
        self.arg_names = arg_names
        self.kwargs = kwargs
        self.plans = plans
        self.start_time = start_time
        self._started = started

    def complete(self, return_value: Any = None) -> SerializationRecord:
        """Capture the return value and persist the record."""
        session = _CaptureSession()
        captured = self.recorder._capture(return_value, None, session)
        plans = {**self.plans, **session.plans}

        def build(tick: int) -> SerializationRecord:
            return SerializationRecord(
                point_id=self.point_id,
                receiver=self.receiver,
                args=self.args,
                arg_names=self.arg_names,
                kwargs=self.kwargs,
                return_value=captured,
                time=tick,
                start_time=self.start_time,
                embedded_plans=plans,
            )

        record = self.recorder._emit(build)
        latency = time.perf_counter() - self._started
        self.recorder.latencies.append(latency)
        logger.debug("Serialized %s in %.3f ms", self.point_id, latency * 1000)
        return record  # type: ignore[return-value]


class Recorder:
    """
    Logical clock, identity registry and trace writer.

    Example:
        >>> with Recorder("trace.jsonl", plan_db) as recorder:
        ...     with instrument(classes, recorder):
        ...         run_workload()
    """

    def __init__(
        self,
        path: Path | str | None = None,
        plan_db: PlanDatabase | None = None,
        max_sequence_length: int = 25,
        max_depth: int = 8,
        queue_capacity: int = 65536,
        batch_size: int = 1024,
        stream: TextIO | None = None,
    ) -> None:
        """
        Initialize the recorder.

        Args:
            path: Trace file to write. Ignored when ``stream`` is given.
            plan_db: Plans of structure-based types; objects of those types are
                captured by embedding an instantiated plan.
            max_sequence_length: Elements kept per sequence or map.
            max_depth: Nesting levels captured before degrading to references.
            queue_capacity: Slots of the event queue.
            batch_size: Entries written per batch.
            stream: Already open text stream to write instead of ``path``.
        """
        if path is None and stream is None:
            raise ValueError("Either path or stream is required")
        self.path = Path(path) if path is not None else None
        self.plan_db = plan_db or PlanDatabase()
        self.max_sequence_length = max_sequence_length
        self.max_depth = max_depth
        self.batch_size = batch_size
        self.latencies: list[float] = []

        self._stream = stream
        self._owns_stream = stream is None
        self._queue: queue.Queue[Any] = queue.Queue(maxsize=queue_capacity)
        self._lock = threading.Lock()
        self._clock = 0
        self._next_object_id = 1
        self._next_call_id = 1
        self._registry: dict[int, tuple[int, Any]] = {}
        self._known_ids: set[int] = set()
        self._open_calls: set[int] = set()
        self._writer: threading.Thread | None = None
        self._failure: BaseException | None = None
        self._persisted = 0

    @classmethod
    def from_settings(cls, settings: Any, plan_db: PlanDatabase | None = None) -> "Recorder":
        """Build a recorder from :class:`plaincode.config.Settings`."""
        return cls(
            settings.trace_path,
            plan_db=plan_db,
            max_sequence_length=settings.max_sequence_length,
            max_depth=settings.max_depth,
            queue_capacity=settings.queue_capacity,
            batch_size=settings.batch_size,
        )

    # -------------------------------------------------------------------------
    # Lifecycle
    # -------------------------------------------------------------------------

    @property
    def active(self) -> bool:
        """Check whether the writer thread is running."""
        return self._writer is not None and self._writer.is_alive()

    @property
    def failed(self) -> bool:
        """Check whether persistence has failed."""
        return self._failure is not None

    @property
    def persisted(self) -> int:
        """Entries written so far (header excluded)."""
        return self._persisted

    def start(self) -> "Recorder":
        """Open the trace file and start the writer thread."""
        if self._writer is not None:
            raise ContractViolation("Recorder already started")
        if self._stream is None:
            assert self.path is not None
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._stream = self.path.open("w", encoding="utf-8")
            except OSError as e:
                raise RecorderFailedError(f"Cannot open trace file {self.path}: {e}") from e
        self._writer = threading.Thread(
            target=self._drain, name="plaincode-writer", daemon=True
        )
        self._writer.start()
        logger.info("Recording to %s", self.path or "stream")
        return self

    def close(self) -> None:
        """Flush every queued entry and stop the writer thread."""
        if self._writer is None:
            return
        self._queue.put(_STOP)
        self._writer.join()
        self._writer = None
        if self._owns_stream and self._stream is not None:
            self._stream.close()
        logger.info("Recording stopped: %d entries persisted", self._persisted)

    def __enter__(self) -> "Recorder":
        return self.start()

    def __exit__(self, *args: Any) -> None:
        self.close()

    def _drain(self) -> None:
        stream = self._stream
        assert stream is not None
        try:
            stream.write(header_line(TRACE_FORMAT) + "\n")
            stream.flush()
        except OSError as e:
            self._fail(e)

        while True:
            batch = [self._queue.get()]
            while len(batch) < self.batch_size:
                try:
                    batch.append(self._queue.get_nowait())
                except queue.Empty:
                    break
            stop = any(item is _STOP for item in batch)
            entries = [item for item in batch if item is not _STOP]
            if entries and self._failure is None:
                try:
                    stream.write("".join(encode_entry(e) + "\n" for e in entries))
                    stream.flush()
                    self._persisted += len(entries)
                except Exception as e:  # any failure leaves the log incomplete
                    self._fail(e)
            for _ in batch:
                self._queue.task_done()
            if stop:
                return

    def _fail(self, error: BaseException) -> None:
        self._failure = error
        logger.error("Trace persistence failed: %s", error)

    # -------------------------------------------------------------------------
    # Clock and registry
    # -------------------------------------------------------------------------

    @property
    def clock(self) -> int:
        """The latest logical time handed out."""
        return self._clock

    def _check_usable(self) -> None:
        if self._failure is not None:
            raise RecorderFailedError() from self._failure
        if self._writer is None:
            raise ContractViolation("Recorder is not started")

    def _emit(self, build: Callable[[int], LogEntry]) -> LogEntry:
        self._check_usable()
        with self._lock:
            self._clock += 1
            entry = build(self._clock)
            self._queue.put(entry)
        return entry

    def begin_construct(self) -> int:
        """Reserve a tick marking the start of a constructor execution."""
        with self._lock:
            self._clock += 1
            return self._clock

    def object_id_of(self, obj: Any) -> int | None:
        """Return the id of a registered object."""
        entry = self._registry.get(id(obj))
        return entry[0] if entry is not None and entry[1] is obj else None

    def is_registered(self, obj: Any) -> bool:
        """Check whether an object has an id."""
        return self.object_id_of(obj) is not None

    def _register(self, obj: Any) -> int:
        with self._lock:
            existing = self._registry.get(id(obj))
            if existing is not None and existing[1] is obj:
                raise ContractViolation(
                    f"Object of type {type(obj).__name__} is already registered "
                    f"as {existing[0]}"
                )
            object_id = self._next_object_id
            self._next_object_id += 1
            self._registry[id(obj)] = (object_id, obj)
            self._known_ids.add(object_id)
            return object_id

    def _check_receiver(self, receiver_id: int) -> None:
        if receiver_id not in self._known_ids:
            raise ContractViolation(f"Unknown receiver object id {receiver_id}")

    # -------------------------------------------------------------------------
    # Capture
    # -------------------------------------------------------------------------

    def capture_value(self, value: Any, depth_remaining: int | None = None) -> CapturedValue:
        """
        Capture a runtime value.

        Args:
            value: Any runtime value.
            depth_remaining: Nesting levels left; defaults to ``max_depth``.

        Returns:
            The captured value. Objects of structure-based types become
            ObjectRefs whose instantiated plans are discarded here; use the
            record operations to persist them.
        """
        return self._capture(value, depth_remaining, _CaptureSession())

    def capture_arguments(
        self, args: Sequence[Any], kwargs: Mapping[str, Any] | None = None
    ) -> tuple[
        tuple[CapturedValue, ...], dict[str, CapturedValue], dict[int, ReconstructionPlan]
    ]:
        """
        Capture call arguments before the call runs.

        Returns:
            Captured positional arguments, keyword arguments and the plans of
            structure-based objects among them.
        """
        session = _CaptureSession()
        captured = tuple(self._capture(a, None, session) for a in args)
        captured_kwargs = {
            k: self._capture(v, None, session) for k, v in (kwargs or {}).items()
        }
        return captured, captured_kwargs, session.plans

    def _as_captured(self, value: Any, session: _CaptureSession) -> CapturedValue:
        if isinstance(value, _CAPTURED_TYPES):
            return value  # type: ignore[return-value]
        return self._capture(value, None, session)

    def _capture(
        self, value: Any, depth: int | None, session: _CaptureSession
    ) -> CapturedValue:
        if depth is None:
            depth = self.max_depth
        if value is None:
            return NULL
        if isinstance(value, enum.Enum):
            return EnumConstant(
                type_name=qualified_name(type(value)), constant_name=value.name
            )
        if isinstance(value, (bool, int, float)) and type(value) in (bool, int, float):
            return PrimitiveLiteral(value=value, type_name=type(value).__name__)
        if type(value) is str:
            return Text(value=value)

        object_id = self.object_id_of(value)
        if object_id is not None:
            return ObjectRef(object_id=object_id, logical_time=self._clock)

        if depth <= 0:
            return Opaque(type_name=qualified_name(type(value)))

        container = _CONTAINERS.get(type(value))
        if container is not None:
            return self._capture_sequence(value, container, depth, session)
        if type(value) is dict:
            items = list(value.items())
            entries = tuple(
                (self._capture(k, depth - 1, session), self._capture(v, depth - 1, session))
                for k, v in items[: self.max_sequence_length]
            )
            return MapValue(entries=entries, truncated=len(items) > self.max_sequence_length)

        plan = self.plan_db.plan_for(qualified_name(type(value)))
        if plan is not None:
            return self._capture_structure(value, plan, depth, session)

        logger.warning("No capture strategy for %s", type(value).__name__)
        return Opaque(type_name=qualified_name(type(value)))

    def _capture_sequence(
        self, value: Any, container: str, depth: int, session: _CaptureSession
    ) -> SequenceValue:
        bound = self.max_sequence_length
        if container in {"set", "frozenset"}:
            elements = [self._capture(e, depth - 1, session) for e in value]
            elements.sort(key=lambda e: e.model_dump_json())
            kept = elements[:bound]
        else:
            kept = [self._capture(e, depth - 1, session) for e in list(value)[:bound]]
        return SequenceValue(
            elements=tuple(kept),
            truncated=len(value) > bound,
            container=container,  # type: ignore[arg-type]
        )

    def _capture_structure(
        self,
        value: Any,
        plan: ReconstructionPlan,
        depth: int,
        session: _CaptureSession,
    ) -> CapturedValue:
        if id(value) in session.structure_ids:
            return ObjectRef(
                object_id=session.structure_ids[id(value)], logical_time=self._clock
            )
        with self._lock:
            object_id = self._next_object_id
            self._next_object_id += 1
        session.structure_ids[id(value)] = object_id
        session.keep_alive.append(value)
        reference = ObjectRef(object_id=object_id, logical_time=self._clock)

        fields = field_snapshot(value)
        model = self.plan_db.types.get(plan.target_type)
        names = model.field_names if model else tuple(fields)
        values = {
            name: self._capture(fields[name], depth - 1, session)
            for name in names
            if name in fields
        }
        try:
            session.plans[object_id] = instantiate_plan(plan, values)
        except InstantiationError as e:
            logger.warning("Cannot instantiate plan of %s: %s", plan.target_type, e.message)
            return Opaque(type_name=plan.target_type)
        return reference

    # -------------------------------------------------------------------------
    # Record operations
    # -------------------------------------------------------------------------

    def record_construct(
        self,
        obj: Any,
        type_name: str | None = None,
        constructor_name: str = "__init__",
        args: Sequence[Any] = (),
        initial_fields: Mapping[str, Any] | None = None,
        kwargs: Mapping[str, Any] | None = None,
        arg_names: Sequence[str] = (),
        start_time: int | None = None,
        embedded_plans: Mapping[int, ReconstructionPlan] | None = None,
    ) -> int:
        """
        Register a freshly constructed object and record its construction.

        Args:
            obj: The new object.
            type_name: Type name; defaults to the object's class.
            constructor_name: ``__init__`` or a named constructor.
            args: Positional arguments, runtime or already captured.
            initial_fields: Field values after construction; defaults to a
                snapshot of the object.
            kwargs: Keyword arguments, runtime or already captured.
            arg_names: Parameter names of the positional arguments.
            start_time: Tick reserved by :meth:`begin_construct`.
            embedded_plans: Plans collected when the arguments were captured
                with :meth:`capture_arguments`.

        Returns:
            The new object id.

        Raises:
            ContractViolation: If the object is already registered.
        """
        self._check_usable()
        object_id = self._register(obj)
        session = _CaptureSession()
        session.plans.update(embedded_plans or {})
        captured_args = tuple(self._as_captured(a, session) for a in args)
        captured_kwargs = {k: self._as_captured(v, session) for k, v in (kwargs or {}).items()}
        fields = initial_fields if initial_fields is not None else field_snapshot(obj)
        captured_fields = {k: self._as_captured(v, session) for k, v in fields.items()}

        self._emit(
            lambda tick: ConstructEvent(
                time=tick,
                object_id=object_id,
                type_name=type_name or qualified_name(type(obj)),
                constructor_name=constructor_name,
                args=captured_args,
                kwargs=captured_kwargs,
                arg_names=tuple(arg_names),
                initial_fields=captured_fields,
                start_time=start_time,
                embedded_plans=session.plans,
            )
        )
        return object_id

    def record_method_start(
        self,
        receiver_id: int,
        qualified_method_name: str,
        args: Sequence[Any] = (),
        kwargs: Mapping[str, Any] | None = None,
        arg_names: Sequence[str] = (),
        embedded_plans: Mapping[int, ReconstructionPlan] | None = None,
    ) -> int:
        """
        Record entry into a method.

        Returns:
            The call id pairing this start with its end.

        Raises:
            ContractViolation: If the receiver is not registered.
        """
        self._check_usable()
        self._check_receiver(receiver_id)
        session = _CaptureSession()
        session.plans.update(embedded_plans or {})
        captured_args = tuple(self._as_captured(a, session) for a in args)
        captured_kwargs = {k: self._as_captured(v, session) for k, v in (kwargs or {}).items()}
        with self._lock:
            call_id = self._next_call_id
            self._next_call_id += 1
            self._open_calls.add(call_id)
        self._emit(
            lambda tick: MethodStartEvent(
                time=tick,
                call_id=call_id,
                receiver=receiver_id,
                qualified_method_name=qualified_method_name,
                args=captured_args,
                kwargs=captured_kwargs,
                arg_names=tuple(arg_names),
                embedded_plans=session.plans,
            )
        )
        return call_id

    def record_method_end(self, call_id: int, abnormal: bool = False) -> None:
        """
        Record exit from a method.

        Raises:
            ContractViolation: If the call id is not open.
        """
        self._check_usable()
        with self._lock:
            if call_id not in self._open_calls:
                raise ContractViolation(f"Unknown call id {call_id}")
            self._open_calls.discard(call_id)
        self._emit(lambda tick: MethodEndEvent(time=tick, call_id=call_id, abnormal=abnormal))

    def record_field_set(
        self, receiver_id: int, field_name: str, old_value: Any, new_value: Any
    ) -> None:
        """
        Record a field reassignment; equal old and new values are still recorded.

        Raises:
            ContractViolation: If the receiver is not registered.
        """
        self._check_usable()
        self._check_receiver(receiver_id)
        session = _CaptureSession()
        old = self._as_captured(old_value, session)
        new = self._as_captured(new_value, session)
        self._emit(
            lambda tick: FieldSetEvent(
                time=tick,
                receiver=receiver_id,
                field_name=field_name,
                old_value=old,
                new_value=new,
                embedded_plans=session.plans,
            )
        )

    def catalog_static_constants(self, classes: Iterable[type]) -> list[StaticFieldEntry]:
        """
        Record the public UPPER_CASE class attributes holding instances of their class.

        Constants created before recording get an id without a construct event;
        references to them resolve to a field read.
        """
        entries: list[StaticFieldEntry] = []
        for cls in classes:
            if issubclass(cls, enum.Enum):
                continue
            for name, value in sorted(vars(cls).items()):
                if not name.isupper() or not isinstance(value, cls):
                    continue
                object_id = self.object_id_of(value)
                if object_id is None:
                    object_id = self._register(value)
                type_name = qualified_name(cls)
                entry = self._emit(
                    lambda tick: StaticFieldEntry(
                        time=tick, type_name=type_name, field_name=name, object_id=object_id
                    )
                )
                entries.append(entry)  # type: ignore[arg-type]
        return entries

    # -------------------------------------------------------------------------
    # Serialization points
    # -------------------------------------------------------------------------

    def begin_serialization(
        self,
        point_id: str,
        receiver: Any,
        args: Sequence[Any] = (),
        arg_names: Sequence[str] = (),
        kwargs: Mapping[str, Any] | None = None,
    ) -> PendingSerialization:
        """Capture receiver and arguments of a serialization point invocation."""
        self._check_usable()
        started = time.perf_counter()
        session = _CaptureSession()
        captured_receiver = self._capture(receiver, None, session)
        captured_args = tuple(self._capture(a, None, session) for a in args)
        captured_kwargs = {
            k: self._capture(v, None, session) for k, v in (kwargs or {}).items()
        }
        return PendingSerialization(
            self,
            point_id,
            captured_receiver,
            captured_args,
            tuple(arg_names),
            captured_kwargs,
            session.plans,
            self._clock,
            started,
        )

    def request_serialization(
        self,
        point_id: str,
        receiver: Any,
        args: Sequence[Any] = (),
        return_value: Any = None,
        arg_names: Sequence[str] = (),
        kwargs: Mapping[str, Any] | None = None,
    ) -> SerializationRecord:
        """Capture and persist a complete serialization record in one step."""
        pending = self.begin_serialization(point_id, receiver, args, arg_names, kwargs)
        return pending.complete(return_value)

