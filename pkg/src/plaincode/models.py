"""
Pydantic models for plaincode.

This module contains the core data model shared by every phase: static type
descriptions, reconstruction actions and plans, captured runtime values, trace
events, serialization records and the cost table used by plan synthesis.

All models are immutable once built and safe to share across threads.
"""

import math
from collections.abc import Iterator
from enum import Enum
from typing import Annotated, Any, Literal, Union

from pydantic import BaseModel, Field, field_serializer, field_validator, model_validator

# =============================================================================
# Type names
# =============================================================================

PRIMITIVE_TYPE_NAMES = frozenset(
    {"int", "float", "bool", "str", "bytes", "complex", "NoneType", "None"}
)
SEQUENCE_TYPE_NAMES = frozenset({"list", "tuple", "set", "frozenset"})
MAP_TYPE_NAMES = frozenset({"dict"})
OPAQUE_TYPE_NAMES = frozenset({"object", "Any", "typing:Any"})

BUILTIN_TYPE_NAMES = (
    PRIMITIVE_TYPE_NAMES | SEQUENCE_TYPE_NAMES | MAP_TYPE_NAMES | OPAQUE_TYPE_NAMES
)


def split_type_name(type_name: str) -> tuple[str | None, str]:
    """
    Split a ``module.path:QualName`` type name.

    Returns:
        Tuple of (module path or None for builtins, qualified name).
    """
    if ":" not in type_name:
        return None, type_name
    module, _, qualname = type_name.partition(":")
    return module, qualname


def short_type_name(type_name: str) -> str:
    """Return the innermost class name of a type name (``a.b:Outer.Inner`` -> ``Inner``)."""
    return split_type_name(type_name)[1].rsplit(".", 1)[-1]


# =============================================================================
# Enums
# =============================================================================


class TypeKind(str, Enum):
    """Shape of a type as seen by plan synthesis."""

    COMPOSITE = "composite"
    ENUMERATION = "enumeration"
    PRIMITIVE = "primitive"
    SEQUENCE = "sequence"
    MAP = "map"
    OPAQUE = "opaque"


class ActionKind(str, Enum):
    """The eight reconstruction action archetypes."""

    CALL_CONSTRUCTOR = "call_constructor"
    CALL_FACTORY_METHOD = "call_factory_method"
    USE_ENUM_CONSTANT = "use_enum_constant"
    CALL_METHOD = "call_method"
    ASSIGN_FIELD = "assign_field"
    USE_NAMED_CONSTANT = "use_named_constant"
    USE_STATIC_FIELD = "use_static_field"
    USE_OBJECT_REFERENCE = "use_object_reference"


CONSTRUCTING_KINDS = frozenset(
    {
        ActionKind.CALL_CONSTRUCTOR,
        ActionKind.CALL_FACTORY_METHOD,
        ActionKind.USE_ENUM_CONSTANT,
        ActionKind.USE_NAMED_CONSTANT,
        ActionKind.USE_STATIC_FIELD,
        ActionKind.USE_OBJECT_REFERENCE,
    }
)


# =============================================================================
# Captured values
# =============================================================================

_NON_FINITE = {"nan": math.nan, "inf": math.inf, "-inf": -math.inf}


class PrimitiveLiteral(BaseModel):
    """A number or boolean captured by value."""

    kind: Literal["primitive"] = "primitive"
    value: bool | int | float = Field(..., description="Literal value")
    type_name: str = Field("", description="Host type name (int, float, bool)")

    model_config = {"frozen": True}

    @model_validator(mode="before")
    @classmethod
    def _restore_sentinels(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        value = data.get("value")
        if isinstance(value, str):
            if value not in _NON_FINITE:
                raise ValueError(f"Unknown float sentinel: {value!r}")
            value = _NON_FINITE[value]
            data = {**data, "value": value}
        if not data.get("type_name") and isinstance(value, (bool, int, float)):
            data = {**data, "type_name": type(value).__name__}
        return data

    @field_serializer("value", when_used="json")
    def _encode_value(self, value: bool | int | float) -> bool | int | float | str:
        if isinstance(value, float) and not math.isfinite(value):
            if math.isnan(value):
                return "nan"
            return "inf" if value > 0 else "-inf"
        return value


class Text(BaseModel):
    """A string captured by value."""

    kind: Literal["text"] = "text"
    value: str

    model_config = {"frozen": True}


class EnumConstant(BaseModel):
    """A reference to a named member of an enumeration."""

    kind: Literal["enum"] = "enum"
    type_name: str
    constant_name: str

    model_config = {"frozen": True}


class SequenceValue(BaseModel):
    """A list, tuple or set captured element by element."""

    kind: Literal["sequence"] = "sequence"
    elements: tuple["CapturedValue", ...] = ()
    truncated: bool = Field(False, description="True iff elements were dropped")
    container: Literal["list", "tuple", "set", "frozenset"] = "list"

    model_config = {"frozen": True}


class MapValue(BaseModel):
    """A dict captured entry by entry."""

    kind: Literal["map"] = "map"
    entries: tuple[tuple["CapturedValue", "CapturedValue"], ...] = ()
    truncated: bool = False

    model_config = {"frozen": True}


class NullValue(BaseModel):
    """The ``None`` value."""

    kind: Literal["null"] = "null"

    model_config = {"frozen": True}


class ObjectRef(BaseModel):
    """Reference to an object in a given state, rendered as ``id@logical-time``."""

    kind: Literal["ref"] = "ref"
    object_id: int = Field(..., ge=0)
    logical_time: int = Field(..., ge=0)

    model_config = {"frozen": True}

    @property
    def marker(self) -> str:
        """The ``id@time`` marker."""
        return f"{self.object_id}@{self.logical_time}"


class Opaque(BaseModel):
    """A value that could not be captured (depth exhausted or no strategy)."""

    kind: Literal["opaque"] = "opaque"
    type_name: str

    model_config = {"frozen": True}


CapturedValue = Annotated[
    Union[
        PrimitiveLiteral,
        Text,
        EnumConstant,
        SequenceValue,
        MapValue,
        NullValue,
        ObjectRef,
        Opaque,
    ],
    Field(discriminator="kind"),
]

SequenceValue.model_rebuild()
MapValue.model_rebuild()

NULL = NullValue()


def iter_object_refs(value: CapturedValue) -> Iterator[ObjectRef]:
    """Yield every ObjectRef nested in a captured value."""
    if isinstance(value, ObjectRef):
        yield value
    elif isinstance(value, SequenceValue):
        for element in value.elements:
            yield from iter_object_refs(element)
    elif isinstance(value, MapValue):
        for key, item in value.entries:
            yield from iter_object_refs(key)
            yield from iter_object_refs(item)


def is_truncated(value: CapturedValue) -> bool:
    """Check whether a captured value, or anything nested in it, was truncated."""
    if isinstance(value, SequenceValue):
        return value.truncated or any(is_truncated(e) for e in value.elements)
    if isinstance(value, MapValue):
        return value.truncated or any(
            is_truncated(k) or is_truncated(v) for k, v in value.entries
        )
    return False


# =============================================================================
# Static type description
# =============================================================================


class FieldSpec(BaseModel):
    """
    A field of a user-defined type.

    Attributes:
        name: Field (attribute) name.
        type_name: Declared type name.
        accessible: Visible at the reconstruction site.
        assignable: Direct assignment is legal outside the type.
    """

    name: str
    type_name: str = "object"
    accessible: bool = True
    assignable: bool = False

    model_config = {"frozen": True}


class Parameter(BaseModel):
    """A callable parameter and the field it is stored into, if any."""

    name: str
    type_name: str = "object"
    has_default: bool = False
    keyword_only: bool = False
    binds_field: str | None = Field(
        None, description="Field this parameter is assigned to"
    )

    model_config = {"frozen": True}


class CallableSpec(BaseModel):
    """
    A constructor, factory method or setter of a type.

    Attributes:
        name: Callable name (``__init__`` for the primary constructor).
        parameters: Parameters in declaration order (receiver excluded).
        sets_fields: Names of the fields this callable assigns.
        constructing: True for constructors and factory methods.
        accessible: Callable is public.
        owner_type: Type declaring the callable when it differs from the
            constructed type (factory methods on another class).
    """

    name: str
    parameters: tuple[Parameter, ...] = ()
    sets_fields: tuple[str, ...] = ()
    constructing: bool = False
    accessible: bool = True
    owner_type: str | None = None

    model_config = {"frozen": True}


class TypeModel(BaseModel):
    """
    Static description of a user-defined type, as consumed by plan synthesis.
    """

    type_name: str = Field(..., description="Fully-qualified type name")
    kind: TypeKind = TypeKind.COMPOSITE
    fields: tuple[FieldSpec, ...] = ()
    constructors: tuple[CallableSpec, ...] = ()
    factory_methods: tuple[CallableSpec, ...] = ()
    setters: tuple[CallableSpec, ...] = ()
    enum_constants: tuple[str, ...] = ()
    static_constant_fields: tuple[tuple[str, str], ...] = ()

    model_config = {"frozen": True}

    @property
    def field_names(self) -> tuple[str, ...]:
        """Field names in declaration order."""
        return tuple(f.name for f in self.fields)

    def field(self, name: str) -> FieldSpec | None:
        """Look up a field by name."""
        for spec in self.fields:
            if spec.name == name:
                return spec
        return None


def validate_type_model(model: TypeModel) -> list[str]:
    """
    Collect every invariant violation of a type model.

    Args:
        model: The type model to check. It is never mutated.

    Returns:
        Human-readable violations; an empty list means the model is valid.
    """
    violations: list[str] = []
    seen: set[str] = set()
    for spec in model.fields:
        if spec.name in seen:
            violations.append(f"duplicate field name '{spec.name}'")
        seen.add(spec.name)
        if spec.assignable and not spec.accessible:
            violations.append(f"field '{spec.name}' is assignable but not accessible")

    for callable_spec in (*model.constructors, *model.factory_methods, *model.setters):
        for name in callable_spec.sets_fields:
            if name not in seen:
                violations.append(
                    f"callable '{callable_spec.name}' sets unknown field '{name}'"
                )
        for parameter in callable_spec.parameters:
            if parameter.binds_field and parameter.binds_field not in seen:
                violations.append(
                    f"parameter '{parameter.name}' of '{callable_spec.name}' "
                    f"binds unknown field '{parameter.binds_field}'"
                )

    is_enum = model.kind == TypeKind.ENUMERATION
    if is_enum and not model.enum_constants:
        violations.append("enumeration without constants")
    if model.enum_constants and not is_enum:
        violations.append(f"enum constants on a {model.kind.value} type")
    return violations


# =============================================================================
# Actions and plans
# =============================================================================


class MetaVariable(BaseModel):
    """
    A placeholder inside an action, bound to a runtime value at instantiation.

    Attributes:
        placeholder_name: Name of the placeholder (parameter or field name).
        bound_field: Field whose captured value fills the placeholder.
        keyword: Pass the value as a keyword argument.
        value: The bound value once instantiated.
    """

    placeholder_name: str
    bound_field: str | None = None
    keyword: bool = False
    value: CapturedValue | None = None

    model_config = {"frozen": True}

    @property
    def is_bound(self) -> bool:
        """Check whether a value has been supplied."""
        return self.value is not None


class Action(BaseModel):
    """
    An atom of reconstruction.

    Attributes:
        kind: The action archetype.
        constructing: Membership in the set of constructing actions.
        covered_fields: Fields this action sets (membership in each field's
            set of field-setting actions).
        callable: The constructor, factory or method the action invokes.
        meta_variables: Placeholders, bound in instantiated plans.
        owner_type: Type the action constructs or acts on.
        member: Enum constant, static field or named-constant path.
        reference: The deferred object for ``use_object_reference``.
    """

    kind: ActionKind
    constructing: bool = False
    covered_fields: tuple[str, ...] = ()
    callable: CallableSpec | None = None
    meta_variables: tuple[MetaVariable, ...] = ()
    owner_type: str = ""
    member: str | None = None
    reference: ObjectRef | None = None

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def _check_invariants(self) -> "Action":
        if self.kind in CONSTRUCTING_KINDS and not self.constructing:
            raise ValueError(f"{self.kind.value} actions are constructing")
        if self.kind == ActionKind.ASSIGN_FIELD and len(self.covered_fields) != 1:
            raise ValueError("assign_field covers exactly one field")
        return self

    @property
    def label(self) -> str:
        """Name used for deterministic tie-breaking and diagnostics."""
        if self.callable is not None:
            return self.callable.name
        if self.member is not None:
            return self.member
        if self.reference is not None:
            return self.reference.marker
        return ",".join(self.covered_fields)


class ReconstructionPlan(BaseModel):
    """
    An ordered, constraint-satisfying selection of actions for a type.

    Attributes:
        actions: Constructing action first, then field-setting actions.
        target_type: The reconstructed type.
        total_cost: Sum of the action costs.
    """

    actions: tuple[Action, ...]
    target_type: str
    total_cost: int = Field(0, ge=0)

    model_config = {"frozen": True}

    @property
    def is_instantiated(self) -> bool:
        """Check whether every meta-variable carries a value."""
        return all(mv.is_bound for a in self.actions for mv in a.meta_variables)


def validate_plan(plan: ReconstructionPlan, model: TypeModel) -> list[str]:
    """
    Check a plan against the plan constraints for its target type.

    Returns:
        Violations; empty when exactly one constructing action exists, it comes
        first, and the covered fields equal the type's field set.
    """
    violations: list[str] = []
    constructing = [i for i, a in enumerate(plan.actions) if a.constructing]
    if len(constructing) != 1:
        violations.append(
            f"expected exactly one constructing action, found {len(constructing)}"
        )
    elif constructing[0] != 0:
        violations.append("constructing action is not first")
    covered = {f for a in plan.actions for f in a.covered_fields}
    expected = set(model.field_names)
    for missing in sorted(expected - covered):
        violations.append(f"field '{missing}' is not covered")
    for extra in sorted(covered - expected):
        violations.append(f"unknown field '{extra}' is covered")
    return violations


# =============================================================================
# Cost table
# =============================================================================

MAX_ACTION_COST = 2**24

DEFAULT_COSTS: dict[ActionKind, int] = {
    ActionKind.CALL_CONSTRUCTOR: 1,
    ActionKind.USE_ENUM_CONSTANT: 1,
    ActionKind.USE_NAMED_CONSTANT: 1,
    ActionKind.USE_STATIC_FIELD: 1,
    ActionKind.CALL_FACTORY_METHOD: 2,
    ActionKind.CALL_METHOD: 3,
    ActionKind.USE_OBJECT_REFERENCE: 4,
    ActionKind.ASSIGN_FIELD: 5,
}


class CostTable(BaseModel):
    """Integer cost per action kind; lower means more idiomatic."""

    costs: dict[ActionKind, int] = Field(default_factory=lambda: dict(DEFAULT_COSTS))

    model_config = {"frozen": True}

    @field_validator("costs")
    @classmethod
    def _complete_and_bounded(cls, costs: dict[ActionKind, int]) -> dict[ActionKind, int]:
        merged = {**DEFAULT_COSTS, **costs}
        for kind, cost in merged.items():
            if not 0 <= cost <= MAX_ACTION_COST:
                raise ValueError(
                    f"cost of {kind.value} must be within 0..{MAX_ACTION_COST}"
                )
        return merged

    def cost_of(self, kind: ActionKind) -> int:
        """Return the cost of an action kind."""
        return self.costs[kind]

    def scaled(self, factor: int) -> "CostTable":
        """Return a table with every cost multiplied by a positive factor."""
        if factor <= 0:
            raise ValueError("factor must be positive")
        return CostTable(costs={k: v * factor for k, v in self.costs.items()})


# =============================================================================
# Trace events
# =============================================================================


class ConstructEvent(BaseModel):
    """Emitted when a constructor finishes; carries the new object's id."""

    kind: Literal["construct"] = "construct"
    time: int = Field(..., ge=0)
    object_id: int = Field(..., ge=0)
    type_name: str
    constructor_name: str = "__init__"
    args: tuple[CapturedValue, ...] = ()
    kwargs: dict[str, CapturedValue] = Field(default_factory=dict)
    arg_names: tuple[str, ...] = ()
    initial_fields: dict[str, CapturedValue] = Field(default_factory=dict)
    start_time: int | None = Field(
        None, description="Logical time at which construction began"
    )
    embedded_plans: dict[int, ReconstructionPlan] = Field(default_factory=dict)

    model_config = {"frozen": True}


class MethodStartEvent(BaseModel):
    """Emitted when an instrumented method is entered."""

    kind: Literal["method_start"] = "method_start"
    time: int = Field(..., ge=0)
    call_id: int = Field(..., ge=0)
    receiver: int = Field(..., ge=0)
    qualified_method_name: str
    args: tuple[CapturedValue, ...] = ()
    kwargs: dict[str, CapturedValue] = Field(default_factory=dict)
    arg_names: tuple[str, ...] = ()
    embedded_plans: dict[int, ReconstructionPlan] = Field(default_factory=dict)

    model_config = {"frozen": True}

    @property
    def method_name(self) -> str:
        """The unqualified method name."""
        return self.qualified_method_name.rsplit(".", 1)[-1]


class MethodEndEvent(BaseModel):
    """Emitted when an instrumented method returns or raises."""

    kind: Literal["method_end"] = "method_end"
    time: int = Field(..., ge=0)
    call_id: int = Field(..., ge=0)
    abnormal: bool = Field(False, description="The method exited with an exception")

    model_config = {"frozen": True}


class FieldSetEvent(BaseModel):
    """Emitted when a field of a traced object is reassigned."""

    kind: Literal["field_set"] = "field_set"
    time: int = Field(..., ge=0)
    receiver: int = Field(..., ge=0)
    field_name: str
    old_value: CapturedValue = NULL
    new_value: CapturedValue = NULL
    embedded_plans: dict[int, ReconstructionPlan] = Field(default_factory=dict)

    model_config = {"frozen": True}


Event = Annotated[
    Union[ConstructEvent, MethodStartEvent, MethodEndEvent, FieldSetEvent],
    Field(discriminator="kind"),
]


# =============================================================================
# Serialization records
# =============================================================================


class SerializationRecord(BaseModel):
    """
    Everything captured at one serialization point invocation.

    Attributes:
        point_id: Identifier of the instrumented method.
        receiver: The receiver, captured before the call.
        args: Arguments, captured before the call.
        arg_names: Parameter names of the positional arguments.
        kwargs: Keyword-only arguments, captured before the call.
        return_value: Value returned by the call.
        time: Logical time at which the record was completed.
        start_time: Logical time at which receiver and arguments were captured.
        embedded_plans: Instantiated plans of structure-based objects by id.
    """

    kind: Literal["serialization"] = "serialization"
    point_id: str
    receiver: CapturedValue = NULL
    args: tuple[CapturedValue, ...] = ()
    arg_names: tuple[str, ...] = ()
    kwargs: dict[str, CapturedValue] = Field(default_factory=dict)
    return_value: CapturedValue = NULL
    time: int = Field(..., ge=0)
    start_time: int | None = None
    embedded_plans: dict[int, ReconstructionPlan] = Field(default_factory=dict)

    model_config = {"frozen": True}

    @property
    def method_name(self) -> str:
        """The unqualified method name of the serialization point."""
        return split_type_name(self.point_id)[1].rsplit(".", 1)[-1]

    def references(self) -> list[ObjectRef]:
        """Every ObjectRef in receiver, arguments and return value."""
        refs: list[ObjectRef] = []
        for value in (self.receiver, *self.args, *self.kwargs.values(), self.return_value):
            refs.extend(iter_object_refs(value))
        return refs


class StaticFieldEntry(BaseModel):
    """A public static constant observed at startup, pointing at a traced object."""

    kind: Literal["static_field"] = "static_field"
    time: int = Field(..., ge=0)
    type_name: str
    field_name: str
    object_id: int = Field(..., ge=0)

    model_config = {"frozen": True}


LogEntry = Annotated[
    Union[
        ConstructEvent,
        MethodStartEvent,
        MethodEndEvent,
        FieldSetEvent,
        SerializationRecord,
        StaticFieldEntry,
    ],
    Field(discriminator="kind"),
]


# =============================================================================
# Plan database
# =============================================================================


class PlanDatabase(BaseModel):
    """
    Output of the pre-execution phase.

    Attributes:
        types: Type models of the closure of associated types, by type name.
        plans: Uninstantiated plans of structure-based types, by type name.
        infeasible: Failure messages of types without a plan, by type name.
        points: Selected serialization point identifiers.
    """

    types: dict[str, TypeModel] = Field(default_factory=dict)
    plans: dict[str, ReconstructionPlan] = Field(default_factory=dict)
    infeasible: dict[str, str] = Field(default_factory=dict)
    points: tuple[str, ...] = ()

    def plan_for(self, type_name: str) -> ReconstructionPlan | None:
        """Return the plan of a structure-based type, if any."""
        return self.plans.get(type_name)
