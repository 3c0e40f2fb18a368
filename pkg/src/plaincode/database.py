"""
Reconstruction database.

Answers "how do I rebuild object ``id`` as it was at time ``t``?" for the
emitter by combining every source the earlier phases produced, in order of
preference:

1. a public static constant observed at startup (a field read),
2. a named-constant adapter match,
3. an instantiated plan embedded in the log (structure-based capture),
4. the object's timeline (trace-based replay).

Only objects transitively referenced by serialization records are persisted.
"""

import logging
from collections.abc import Iterable, Sequence
from enum import Enum
from pathlib import Path
from typing import Any

from pydantic import BaseModel, TypeAdapter

from .exceptions import ResolutionError
from .models import (
    Action,
    ObjectRef,
    SerializationRecord,
    iter_object_refs,
)
from .timeline import (
    NamedConstantAdapter,
    TraceAnalysis,
    apply_named_constant_adapters,
    resolve_static_constant,
)
from .wire import RECONSTRUCTION_FORMAT, read_records, write_records

logger = logging.getLogger(__name__)


class ReconstructionSource(str, Enum):
    """Where the actions of a resolution come from."""

    STATIC_FIELD = "static_field"
    NAMED_CONSTANT = "named_constant"
    EMBEDDED_PLAN = "embedded_plan"
    TRACE = "trace"


class Resolution(BaseModel):
    """
    Actions rebuilding one object in one state.

    Attributes:
        object_id: The object.
        logical_time: The requested state.
        source: Which strategy produced the actions.
        type_name: The object's type.
        actions: Constructing action first, then field-setting actions.
        reconstructible: False when the trace could not capture the object
            faithfully (an invocation raised, a private field was written).
        reason: Why the object is not reconstructible.
    """

    object_id: int
    logical_time: int
    source: ReconstructionSource
    type_name: str
    actions: tuple[Action, ...]
    reconstructible: bool = True
    reason: str | None = None

    model_config = {"frozen": True}

    @property
    def marker(self) -> str:
        """The ``id@time`` marker this resolution answers."""
        return f"{self.object_id}@{self.logical_time}"

    @property
    def key(self) -> str:
        """
        Identity of the reconstructed state.

        Two times of one traced object with the same retained actions rebuild
        the same state and share a key.
        """
        if self.source == ReconstructionSource.TRACE:
            return f"{self.object_id}#{len(self.actions)}"
        return str(self.object_id)

    def references(self) -> list[ObjectRef]:
        """ObjectRefs bound to the meta-variables of the actions."""
        refs: list[ObjectRef] = []
        for action in self.actions:
            for meta in action.meta_variables:
                if meta.value is not None:
                    refs.extend(iter_object_refs(meta.value))
            if action.reference is not None:
                refs.append(action.reference)
        return refs


_resolution_adapter: TypeAdapter[Resolution] = TypeAdapter(Resolution)


class ReconstructionDatabase:
    """
    Resolves ``id@time`` markers to reconstruction actions.

    Example:
        >>> analysis = TraceAnalysis(read_log("plaincode-trace.jsonl"))
        >>> db = ReconstructionDatabase(analysis, adapters=[EncodingConstantAdapter(...)])
        >>> db.lookup(7, 42).actions
    """

    def __init__(
        self,
        analysis: TraceAnalysis | None = None,
        adapters: Sequence[NamedConstantAdapter] = (),
        resolutions: Iterable[Resolution] = (),
    ) -> None:
        """
        Initialize the database.

        Args:
            analysis: The analyzed trace log.
            adapters: Named-constant adapters, in registration order.
            resolutions: Previously persisted resolutions, consulted first.
        """
        self.analysis = analysis
        self.diagnostics: list[str] = []
        self._loaded = {r.marker: r for r in resolutions}
        self._named: dict[int, Action] = {}
        if analysis is not None and adapters:
            for object_id, timeline in sorted(analysis.timelines.items()):
                action = apply_named_constant_adapters(timeline, adapters, self.diagnostics)
                if action is not None:
                    self._named[object_id] = action
            logger.info("Named-constant adapters matched %d objects", len(self._named))

    @classmethod
    def load(cls, path: Path | str) -> "ReconstructionDatabase":
        """Load a database persisted with :meth:`write`."""
        return cls(resolutions=read_records(path, RECONSTRUCTION_FORMAT, _resolution_adapter))

    @property
    def records(self) -> list[SerializationRecord]:
        """Serialization records of the analyzed log."""
        return list(self.analysis.records) if self.analysis is not None else []

    def lookup(self, object_id: int, logical_time: int) -> Resolution:
        """
        Resolve one object state.

        Raises:
            ResolutionError: If no source knows the object.
        """
        loaded = self._loaded.get(f"{object_id}@{logical_time}")
        if loaded is not None:
            return loaded
        analysis = self.analysis
        if analysis is None:
            raise ResolutionError(object_id, logical_time)

        static = resolve_static_constant(object_id, analysis.static_entries)
        if static is not None:
            return Resolution(
                object_id=object_id,
                logical_time=logical_time,
                source=ReconstructionSource.STATIC_FIELD,
                type_name=static.owner_type,
                actions=(static,),
            )

        named = self._named.get(object_id)
        if named is not None:
            return Resolution(
                object_id=object_id,
                logical_time=logical_time,
                source=ReconstructionSource.NAMED_CONSTANT,
                type_name=analysis.timelines[object_id].type_name,
                actions=(named,),
            )

        plan = analysis.embedded_plans.get(object_id)
        if plan is not None:
            return Resolution(
                object_id=object_id,
                logical_time=logical_time,
                source=ReconstructionSource.EMBEDDED_PLAN,
                type_name=plan.target_type,
                actions=plan.actions,
            )

        timeline = analysis.timelines.get(object_id)
        if timeline is None:
            raise ResolutionError(object_id, logical_time)
        return Resolution(
            object_id=object_id,
            logical_time=logical_time,
            source=ReconstructionSource.TRACE,
            type_name=timeline.type_name,
            actions=tuple(timeline.actions_until(logical_time)),
            reconstructible=timeline.reconstructible,
            reason=timeline.reason,
        )

    def resolve(self, ref: ObjectRef) -> Resolution:
        """Resolve an ObjectRef."""
        return self.lookup(ref.object_id, ref.logical_time)

    def is_reconstructible(self, ref: ObjectRef) -> bool:
        """Check whether a reference resolves to a faithful reconstruction."""
        try:
            return self.resolve(ref).reconstructible
        except ResolutionError:
            return False

    def closure(self, refs: Iterable[ObjectRef]) -> tuple[list[Resolution], list[str]]:
        """
        Resolve references and everything their actions reference.

        Returns:
            Resolutions in discovery order, and the markers that did not
            resolve.
        """
        resolutions: list[Resolution] = []
        unresolved: list[str] = []
        seen: set[str] = set()
        pending = list(refs)
        while pending:
            ref = pending.pop(0)
            if ref.marker in seen:
                continue
            seen.add(ref.marker)
            try:
                resolution = self.resolve(ref)
            except ResolutionError:
                unresolved.append(ref.marker)
                continue
            resolutions.append(resolution)
            pending.extend(resolution.references())
        return resolutions, unresolved

    def unresolved(self, record: SerializationRecord) -> list[str]:
        """Markers reachable from a record that resolve nowhere."""
        return self.closure(record.references())[1]

    def write(self, path: Path | str, records: Iterable[SerializationRecord] | None = None) -> int:
        """
        Persist the resolutions transitively referenced by records.

        Traced objects no record reaches are dropped.

        Returns:
            Number of resolutions written.
        """
        refs: list[ObjectRef] = []
        for record in self.records if records is None else records:
            refs.extend(record.references())
        resolutions, unresolved = self.closure(refs)
        resolutions.sort(key=lambda r: (r.object_id, r.logical_time))
        write_records(path, RECONSTRUCTION_FORMAT, resolutions)
        if unresolved:
            logger.warning("%d references did not resolve: %s", len(unresolved), unresolved)
        logger.info("Wrote %d resolutions to %s", len(resolutions), path)
        return len(resolutions)


def summarize(db: ReconstructionDatabase) -> dict[str, Any]:
    """Counts of objects per source and of non-reconstructible timelines."""
    counts: dict[str, Any] = {source.value: 0 for source in ReconstructionSource}
    analysis = db.analysis
    if analysis is None:
        return counts
    for object_id, timeline in analysis.timelines.items():
        resolution = db.lookup(object_id, timeline.construct_time)
        counts[resolution.source.value] += 1
    counts[ReconstructionSource.EMBEDDED_PLAN.value] = len(analysis.embedded_plans)
    counts["not_reconstructible"] = sum(
        1 for t in analysis.timelines.values() if not t.reconstructible
    )
    return counts
