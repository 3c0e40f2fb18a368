"""
Unit tests for the pydantic data model.

These tests verify captured values, type model and plan validation, action
invariants, the cost table and serialization records.
"""

import math

import pytest
from pydantic import TypeAdapter, ValidationError

from plaincode.models import (
    NULL,
    Action,
    ActionKind,
    CallableSpec,
    CostTable,
    FieldSpec,
    LogEntry,
    MapValue,
    MetaVariable,
    ObjectRef,
    Parameter,
    PlanDatabase,
    PrimitiveLiteral,
    ReconstructionPlan,
    SequenceValue,
    SerializationRecord,
    Text,
    TypeKind,
    TypeModel,
    is_truncated,
    iter_object_refs,
    short_type_name,
    split_type_name,
    validate_plan,
    validate_type_model,
)

# =============================================================================
# Fixtures
# =============================================================================


@pytest.fixture
def point_model() -> TypeModel:
    """A two-field type with a constructor covering both fields."""
    return TypeModel(
        type_name="geo:Point",
        fields=(FieldSpec(name="x", type_name="float"), FieldSpec(name="y", type_name="float")),
        constructors=(
            CallableSpec(
                name="__init__",
                parameters=(
                    Parameter(name="x", type_name="float", binds_field="x"),
                    Parameter(name="y", type_name="float", binds_field="y"),
                ),
                sets_fields=("x", "y"),
                constructing=True,
            ),
        ),
    )


def _ctor(*fields: str) -> Action:
    return Action(
        kind=ActionKind.CALL_CONSTRUCTOR,
        constructing=True,
        covered_fields=fields,
        callable=CallableSpec(name="__init__", constructing=True, sets_fields=fields),
        owner_type="geo:Point",
    )


# =============================================================================
# Type Name Tests
# =============================================================================


class TestTypeNames:
    """Tests for type name helpers."""

    def test_split_qualified(self) -> None:
        """Module and qualified name are separated at the colon."""
        assert split_type_name("a.b:Outer.Inner") == ("a.b", "Outer.Inner")

    def test_split_builtin(self) -> None:
        """Builtin names have no module."""
        assert split_type_name("int") == (None, "int")

    def test_short_name(self) -> None:
        """The short name is the innermost class name."""
        assert short_type_name("a.b:Outer.Inner") == "Inner"
        assert short_type_name("str") == "str"


# =============================================================================
# Captured Value Tests
# =============================================================================


class TestCapturedValues:
    """Tests for captured value models."""

    def test_primitive_infers_type_name(self) -> None:
        """The host type name is filled in from the value."""
        assert PrimitiveLiteral(value=3).type_name == "int"
        assert PrimitiveLiteral(value=True).type_name == "bool"
        assert PrimitiveLiteral(value=0.5).type_name == "float"

    def test_non_finite_floats_serialize_as_sentinels(self) -> None:
        """NaN and infinities survive JSON as strings."""
        dumped = PrimitiveLiteral(value=-math.inf).model_dump(mode="json")
        assert dumped["value"] == "-inf"
        restored = PrimitiveLiteral.model_validate(dumped)
        assert restored.value == -math.inf

    def test_nan_restored(self) -> None:
        """The nan sentinel restores a NaN float."""
        restored = PrimitiveLiteral.model_validate({"value": "nan", "type_name": "float"})
        assert math.isnan(restored.value)

    def test_unknown_sentinel_rejected(self) -> None:
        """Arbitrary strings are not primitive literals."""
        with pytest.raises(ValidationError):
            PrimitiveLiteral.model_validate({"value": "zero"})

    def test_object_ref_marker(self) -> None:
        """References render as id@time."""
        assert ObjectRef(object_id=7, logical_time=42).marker == "7@42"

    def test_iter_object_refs_nested(self) -> None:
        """References are found inside sequences and map keys and values."""
        first = ObjectRef(object_id=1, logical_time=2)
        second = ObjectRef(object_id=3, logical_time=4)
        value = SequenceValue(
            elements=(Text(value="a"), MapValue(entries=((first, NULL), (Text(value="k"), second))))
        )
        assert list(iter_object_refs(value)) == [first, second]

    def test_is_truncated_nested(self) -> None:
        """Truncation anywhere in a value is detected."""
        inner = SequenceValue(elements=(), truncated=True)
        assert is_truncated(MapValue(entries=((Text(value="k"), inner),)))
        assert not is_truncated(SequenceValue(elements=(inner.model_copy(update={"truncated": False}),)))
        assert not is_truncated(Text(value="plain"))

    def test_discriminated_union(self) -> None:
        """The kind tag selects the model when validating log entries."""
        adapter = TypeAdapter(LogEntry)
        entry = adapter.validate_python(
            {"kind": "field_set", "time": 3, "receiver": 1, "field_name": "x"}
        )
        assert entry.old_value == NULL
        assert entry.new_value == NULL


# =============================================================================
# Type Model Tests
# =============================================================================


class TestValidateTypeModel:
    """Tests for validate_type_model()."""

    def test_valid_model(self, point_model: TypeModel) -> None:
        """A consistent model has no violations."""
        assert validate_type_model(point_model) == []

    def test_duplicate_field(self) -> None:
        """Field names are unique."""
        model = TypeModel(type_name="m:T", fields=(FieldSpec(name="a"), FieldSpec(name="a")))
        assert validate_type_model(model) == ["duplicate field name 'a'"]

    def test_assignable_requires_accessible(self) -> None:
        """Assignable fields must be accessible."""
        model = TypeModel(
            type_name="m:T", fields=(FieldSpec(name="_a", accessible=False, assignable=True),)
        )
        assert validate_type_model(model) == ["field '_a' is assignable but not accessible"]

    def test_unknown_field_references(self) -> None:
        """Callables only set and bind declared fields."""
        model = TypeModel(
            type_name="m:T",
            fields=(FieldSpec(name="a"),),
            setters=(
                CallableSpec(
                    name="set_b",
                    parameters=(Parameter(name="b", binds_field="b"),),
                    sets_fields=("b",),
                ),
            ),
        )
        violations = validate_type_model(model)
        assert "callable 'set_b' sets unknown field 'b'" in violations
        assert "parameter 'b' of 'set_b' binds unknown field 'b'" in violations

    def test_enumeration_needs_constants(self) -> None:
        """An enumeration lists its constants and nothing else does."""
        empty_enum = TypeModel(type_name="m:E", kind=TypeKind.ENUMERATION)
        assert validate_type_model(empty_enum) == ["enumeration without constants"]
        composite = TypeModel(type_name="m:T", enum_constants=("A",))
        assert validate_type_model(composite) == ["enum constants on a composite type"]

    def test_field_lookup(self, point_model: TypeModel) -> None:
        """Fields are found by name."""
        assert point_model.field_names == ("x", "y")
        assert point_model.field("y") == FieldSpec(name="y", type_name="float")
        assert point_model.field("z") is None


# =============================================================================
# Action and Plan Tests
# =============================================================================


class TestAction:
    """Tests for Action invariants."""

    def test_constructing_kinds_must_be_flagged(self) -> None:
        """Constructor actions are constructing."""
        with pytest.raises(ValidationError, match="constructing"):
            Action(kind=ActionKind.CALL_CONSTRUCTOR, constructing=False)

    def test_assign_field_covers_one_field(self) -> None:
        """Assignments set exactly one field."""
        with pytest.raises(ValidationError, match="exactly one field"):
            Action(kind=ActionKind.ASSIGN_FIELD, covered_fields=("a", "b"))

    def test_label_prefers_callable(self) -> None:
        """The label is the callable, member, reference or field list."""
        assert _ctor("x").label == "__init__"
        enum_action = Action(
            kind=ActionKind.USE_ENUM_CONSTANT, constructing=True, member="RED"
        )
        assert enum_action.label == "RED"
        ref_action = Action(
            kind=ActionKind.USE_OBJECT_REFERENCE,
            constructing=True,
            reference=ObjectRef(object_id=2, logical_time=5),
        )
        assert ref_action.label == "2@5"
        assign = Action(kind=ActionKind.ASSIGN_FIELD, covered_fields=("y",))
        assert assign.label == "y"


class TestValidatePlan:
    """Tests for validate_plan()."""

    def test_valid_plan(self, point_model: TypeModel) -> None:
        """One constructing action first and full coverage is valid."""
        plan = ReconstructionPlan(actions=(_ctor("x", "y"),), target_type="geo:Point")
        assert validate_plan(plan, point_model) == []

    def test_missing_field(self, point_model: TypeModel) -> None:
        """Uncovered fields are reported."""
        plan = ReconstructionPlan(actions=(_ctor("x"),), target_type="geo:Point")
        assert validate_plan(plan, point_model) == ["field 'y' is not covered"]

    def test_constructing_not_first(self, point_model: TypeModel) -> None:
        """The constructing action comes first."""
        assign = Action(kind=ActionKind.ASSIGN_FIELD, covered_fields=("y",))
        plan = ReconstructionPlan(actions=(assign, _ctor("x")), target_type="geo:Point")
        assert validate_plan(plan, point_model) == ["constructing action is not first"]

    def test_two_constructing_actions(self, point_model: TypeModel) -> None:
        """Exactly one constructing action is allowed."""
        plan = ReconstructionPlan(actions=(_ctor("x"), _ctor("y")), target_type="geo:Point")
        assert validate_plan(plan, point_model) == [
            "expected exactly one constructing action, found 2"
        ]

    def test_is_instantiated(self) -> None:
        """A plan is instantiated once every meta-variable has a value."""
        bare = MetaVariable(placeholder_name="x", bound_field="x")
        plan = ReconstructionPlan(
            actions=(_ctor("x").model_copy(update={"meta_variables": (bare,)}),),
            target_type="geo:Point",
        )
        assert not plan.is_instantiated
        bound = bare.model_copy(update={"value": PrimitiveLiteral(value=1.5)})
        plan = ReconstructionPlan(
            actions=(_ctor("x").model_copy(update={"meta_variables": (bound,)}),),
            target_type="geo:Point",
        )
        assert plan.is_instantiated


# =============================================================================
# Cost Table Tests
# =============================================================================


class TestCostTable:
    """Tests for CostTable."""

    def test_partial_table_is_completed(self) -> None:
        """Missing kinds take their default cost."""
        table = CostTable(costs={ActionKind.ASSIGN_FIELD: 1})
        assert table.cost_of(ActionKind.ASSIGN_FIELD) == 1
        assert table.cost_of(ActionKind.CALL_METHOD) == 3
        assert len(table.costs) == len(ActionKind)

    def test_bounds(self) -> None:
        """Costs are non-negative and bounded."""
        with pytest.raises(ValidationError):
            CostTable(costs={ActionKind.CALL_METHOD: -1})
        with pytest.raises(ValidationError):
            CostTable(costs={ActionKind.CALL_METHOD: 2**24 + 1})

    def test_scaled(self) -> None:
        """Scaling multiplies every cost."""
        table = CostTable().scaled(3)
        assert table.cost_of(ActionKind.CALL_CONSTRUCTOR) == 3
        assert table.cost_of(ActionKind.ASSIGN_FIELD) == 15

    def test_scaled_rejects_non_positive(self) -> None:
        """The scaling factor is positive."""
        with pytest.raises(ValueError, match="positive"):
            CostTable().scaled(0)


# =============================================================================
# Record Tests
# =============================================================================


class TestSerializationRecord:
    """Tests for SerializationRecord."""

    def test_method_name(self) -> None:
        """The method name is the last component of the point id."""
        record = SerializationRecord(point_id="zoo:Habitat.admit", time=3)
        assert record.method_name == "admit"

    def test_references(self) -> None:
        """References come from receiver, arguments, keywords and return value."""
        receiver = ObjectRef(object_id=1, logical_time=2)
        arg = ObjectRef(object_id=3, logical_time=2)
        kwarg = ObjectRef(object_id=4, logical_time=2)
        returned = ObjectRef(object_id=5, logical_time=9)
        record = SerializationRecord(
            point_id="zoo:Zoo.adopt",
            receiver=receiver,
            args=(arg, Text(value="x")),
            kwargs={"other": kwarg},
            return_value=returned,
            time=9,
        )
        assert record.references() == [receiver, arg, kwarg, returned]

    def test_plan_database_lookup(self) -> None:
        """Plans are looked up by type name."""
        plan = ReconstructionPlan(actions=(_ctor("x", "y"),), target_type="geo:Point")
        db = PlanDatabase(plans={"geo:Point": plan})
        assert db.plan_for("geo:Point") == plan
        assert db.plan_for("geo:Line") is None
