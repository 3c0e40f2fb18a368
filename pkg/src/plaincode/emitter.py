"""
Plain-code emission.

Turns instantiated plans and trace action lists into an abstract statement
list (an :class:`EmissionUnit`). Object references are resolved against a
reconstruction database and emitted in dependency order, each object once per
unit; cycles are broken by constructing with ``None`` and closing the cycle
with a field assignment once both ends exist.

Rendering to Python text lives in :mod:`plaincode.render`. The readability
transforms (:func:`deduplicate`, :func:`outline_helpers`,
:func:`inline_primitives`) work on units and never change what a unit builds.
"""

import builtins
import hashlib
import json
import keyword
import logging
import re
from collections.abc import Callable, Iterable, Iterator, Sequence
from enum import Enum
from typing import Annotated, Literal, Protocol, Union

from pydantic import BaseModel, Field

from .database import Resolution
from .exceptions import EmissionError, ResolutionError
from .models import (
    NULL,
    Action,
    ActionKind,
    CapturedValue,
    EnumConstant,
    MapValue,
    MetaVariable,
    NullValue,
    ObjectRef,
    Opaque,
    PrimitiveLiteral,
    ReconstructionPlan,
    SequenceValue,
    Text,
    short_type_name,
)

logger = logging.getLogger(__name__)


# =============================================================================
# Names
# =============================================================================

_CAMEL_BOUNDARY = re.compile(r"(?<=[a-z0-9])(?=[A-Z])|(?<=[A-Z])(?=[A-Z][a-z])")
_NON_IDENTIFIER = re.compile(r"\W")
_SYNTHETIC_ARGUMENT = re.compile(r"arg\d+")
_BUILTIN_NAMES = frozenset(dir(builtins))


def snake_case(name: str) -> str:
    """Convert ``PDColor`` to ``pd_color``."""
    return _CAMEL_BOUNDARY.sub("_", name).lower()


def sanitize_identifier(text: str) -> str:
    """
    Make text a valid Python identifier that shadows no keyword or builtin.

    Never fails: invalid characters become underscores.
    """
    cleaned = _NON_IDENTIFIER.sub("_", text).strip("_")
    if not cleaned:
        return "value"
    if cleaned[0].isdigit():
        cleaned = f"v{cleaned}"
    if keyword.iskeyword(cleaned) or cleaned in _BUILTIN_NAMES:
        cleaned = f"{cleaned}_"
    return cleaned if cleaned.isidentifier() else "value"


def helper_name(type_name: str) -> str:
    """Helper routine name for a type: ``create_pd_color`` for ``PDColor``."""
    return f"create_{snake_case(short_type_name(type_name))}"


class NamingContext:
    """
    Identifiers handed out in one scope.

    Preferred names come from parameter names, then field names, then the
    snake_case type name. Collisions get 1, 2, 3 appended.
    """

    def __init__(self, reserved: Iterable[str] = ()) -> None:
        self._used: set[str] = set(reserved)

    def __contains__(self, name: object) -> bool:
        return name in self._used

    def reserve(self, name: str) -> None:
        """Mark a name as taken."""
        self._used.add(name)

    def fresh(self, preferred: str | None = None, type_name: str | None = None) -> str:
        """Return an unused identifier."""
        if preferred and _SYNTHETIC_ARGUMENT.fullmatch(preferred):
            preferred = None
        if preferred:
            base = sanitize_identifier(preferred)
        elif type_name:
            base = sanitize_identifier(snake_case(short_type_name(type_name)))
        else:
            base = "value"
        candidate = base
        counter = 1
        while candidate in self._used:
            candidate = f"{base}{counter}"
            counter += 1
        self._used.add(candidate)
        return candidate


# =============================================================================
# Expressions
# =============================================================================


class LiteralExpr(BaseModel):
    """A number, boolean, string or ``None``."""

    kind: Literal["literal"] = "literal"
    value: PrimitiveLiteral | Text | NullValue

    model_config = {"frozen": True}


class NameExpr(BaseModel):
    """A local variable."""

    kind: Literal["name"] = "name"
    name: str

    model_config = {"frozen": True}


class ConstantExpr(BaseModel):
    """A constant read: enum member, static field or named constant."""

    kind: Literal["constant"] = "constant"
    owner_type: str
    member: str

    model_config = {"frozen": True}


class CallExpr(BaseModel):
    """
    A call.

    With ``receiver`` it is a method call; otherwise ``owner_type`` is called
    directly (``__init__``) or through one of its class-level callables.
    """

    kind: Literal["call"] = "call"
    callee: str
    owner_type: str | None = None
    receiver: "Expr | None" = None
    args: tuple["Expr", ...] = ()
    kwargs: tuple[tuple[str, "Expr"], ...] = ()

    model_config = {"frozen": True}


class HelperCallExpr(BaseModel):
    """A call of a generated helper routine."""

    kind: Literal["helper"] = "helper"
    helper: str

    model_config = {"frozen": True}


class CollectionExpr(BaseModel):
    """A list, tuple, set, frozenset or dict display."""

    kind: Literal["collection"] = "collection"
    container: Literal["list", "tuple", "set", "frozenset", "dict"] = "list"
    elements: tuple["Expr", ...] = ()
    entries: tuple[tuple["Expr", "Expr"], ...] = ()

    model_config = {"frozen": True}


class PlaceholderExpr(BaseModel):
    """Stands for a value that could not be reconstructed; never compiles."""

    kind: Literal["placeholder"] = "placeholder"
    reference: str

    model_config = {"frozen": True}


Expr = Annotated[
    Union[
        LiteralExpr,
        NameExpr,
        ConstantExpr,
        CallExpr,
        HelperCallExpr,
        CollectionExpr,
        PlaceholderExpr,
    ],
    Field(discriminator="kind"),
]

CallExpr.model_rebuild()
CollectionExpr.model_rebuild()


# =============================================================================
# Statements
# =============================================================================


class Section(str, Enum):
    """Arrange-Act-Assert section of a statement."""

    ARRANGE = "arrange"
    ACT = "act"
    ASSERT = "assert"


class BindStatement(BaseModel):
    """``target = value``"""

    kind: Literal["bind"] = "bind"
    target: str
    value: Expr
    section: Section = Section.ARRANGE

    model_config = {"frozen": True}


class CallStatement(BaseModel):
    """A call evaluated for its effect."""

    kind: Literal["call"] = "call"
    call: CallExpr
    section: Section = Section.ARRANGE

    model_config = {"frozen": True}


class AssignStatement(BaseModel):
    """``target.field = value``"""

    kind: Literal["assign"] = "assign"
    target: str
    field: str
    value: Expr
    section: Section = Section.ARRANGE

    model_config = {"frozen": True}


class AssertStatement(BaseModel):
    """
    Equality assertion.

    Attributes:
        deep: Compare with the harness's structural equality instead of ``==``.
        tolerance: Absolute float tolerance for deep comparison.
    """

    kind: Literal["assert"] = "assert"
    actual: Expr
    expected: Expr
    deep: bool = False
    tolerance: float | None = None
    section: Section = Section.ASSERT

    model_config = {"frozen": True}


Statement = Annotated[
    Union[BindStatement, CallStatement, AssignStatement, AssertStatement],
    Field(discriminator="kind"),
]


class DiagnosticCode(str, Enum):
    """Why part of a unit does not reconstruct faithfully."""

    TRUNCATED = "truncated"
    OPAQUE = "opaque"
    UNRESOLVED = "unresolved"
    NOT_RECONSTRUCTIBLE = "not_reconstructible"
    CYCLE = "cycle"


class Diagnostic(BaseModel):
    """A problem found while emitting."""

    code: DiagnosticCode
    message: str
    reference: str | None = None

    model_config = {"frozen": True}


class Helper(BaseModel):
    """A zero-argument routine building one object."""

    name: str
    type_name: str
    statements: tuple[Statement, ...] = ()
    result: Expr

    model_config = {"frozen": True}


class Segment(BaseModel):
    """Statements ``[start, end)`` of a unit reconstructing one object into ``variable``."""

    start: int = Field(..., ge=0)
    end: int = Field(..., ge=0)
    variable: str
    type_name: str

    model_config = {"frozen": True}


class EmissionUnit(BaseModel):
    """
    Abstract statements reconstructing one value.

    Attributes:
        statements: Statements in dependency order.
        root: Expression evaluating to the reconstructed value.
        helpers: Helper routines the statements call.
        diagnostics: Truncations, unresolved references and similar problems.
        segments: Per-object statement ranges, used for outlining.
        root_type: Type of the root object, if it is one.
        external: Names bound here that statements outside the unit use.
    """

    statements: tuple[Statement, ...] = ()
    root: Expr
    helpers: tuple[Helper, ...] = ()
    diagnostics: tuple[Diagnostic, ...] = ()
    segments: tuple[Segment, ...] = ()
    root_type: str | None = None
    external: tuple[str, ...] = ()

    model_config = {"frozen": True}

    def has(self, code: DiagnosticCode) -> bool:
        """Check whether a diagnostic of the given code was raised."""
        return any(d.code == code for d in self.diagnostics)

    @property
    def partial(self) -> bool:
        """True iff a captured sequence or map was truncated."""
        return self.has(DiagnosticCode.TRUNCATED)


# =============================================================================
# Name walking
# =============================================================================


def map_names(expr: Expr, replace: Callable[[NameExpr], Expr]) -> Expr:
    """Rebuild an expression with every NameExpr passed through ``replace``."""
    if isinstance(expr, NameExpr):
        return replace(expr)
    if isinstance(expr, CallExpr):
        return expr.model_copy(
            update={
                "receiver": map_names(expr.receiver, replace) if expr.receiver else None,
                "args": tuple(map_names(a, replace) for a in expr.args),
                "kwargs": tuple((k, map_names(v, replace)) for k, v in expr.kwargs),
            }
        )
    if isinstance(expr, CollectionExpr):
        return expr.model_copy(
            update={
                "elements": tuple(map_names(e, replace) for e in expr.elements),
                "entries": tuple(
                    (map_names(k, replace), map_names(v, replace)) for k, v in expr.entries
                ),
            }
        )
    return expr


def _map_statement(
    statement: Statement,
    replace: Callable[[NameExpr], Expr],
    rename: Callable[[str], str] = lambda name: name,
) -> Statement:
    if isinstance(statement, BindStatement):
        return statement.model_copy(
            update={"target": rename(statement.target), "value": map_names(statement.value, replace)}
        )
    if isinstance(statement, AssignStatement):
        return statement.model_copy(
            update={"target": rename(statement.target), "value": map_names(statement.value, replace)}
        )
    if isinstance(statement, CallStatement):
        return statement.model_copy(update={"call": map_names(statement.call, replace)})
    return statement.model_copy(
        update={
            "actual": map_names(statement.actual, replace),
            "expected": map_names(statement.expected, replace),
        }
    )


def expression_names(expr: Expr) -> Iterator[str]:
    """Yield every variable an expression reads."""
    if isinstance(expr, NameExpr):
        yield expr.name
    elif isinstance(expr, CallExpr):
        if expr.receiver is not None:
            yield from expression_names(expr.receiver)
        for arg in expr.args:
            yield from expression_names(arg)
        for _, value in expr.kwargs:
            yield from expression_names(value)
    elif isinstance(expr, CollectionExpr):
        for element in expr.elements:
            yield from expression_names(element)
        for key, value in expr.entries:
            yield from expression_names(key)
            yield from expression_names(value)


def expression_helpers(expr: Expr) -> Iterator[str]:
    """Yield every helper an expression calls."""
    if isinstance(expr, HelperCallExpr):
        yield expr.helper
    elif isinstance(expr, CallExpr):
        for part in (expr.receiver, *expr.args, *(v for _, v in expr.kwargs)):
            if part is not None:
                yield from expression_helpers(part)
    elif isinstance(expr, CollectionExpr):
        for part in (*expr.elements, *(x for pair in expr.entries for x in pair)):
            yield from expression_helpers(part)


def _statement_expressions(statement: Statement) -> tuple[Expr, ...]:
    if isinstance(statement, (BindStatement, AssignStatement)):
        return (statement.value,)
    if isinstance(statement, CallStatement):
        return (statement.call,)
    return (statement.actual, statement.expected)


def statement_uses(statement: Statement) -> list[str]:
    """Variables a statement reads (an assignment target counts as read)."""
    used = [n for e in _statement_expressions(statement) for n in expression_names(e)]
    if isinstance(statement, AssignStatement):
        used.append(statement.target)
    return used


def statement_binds(statement: Statement) -> str | None:
    """The variable a statement binds, if any."""
    return statement.target if isinstance(statement, BindStatement) else None


def statement_helpers(statement: Statement) -> list[str]:
    """Helpers a statement calls."""
    return [h for e in _statement_expressions(statement) for h in expression_helpers(e)]


def free_names(statements: Sequence[Statement], root: Expr | None = None) -> set[str]:
    """Names read by statements (and root) that the statements do not bind first."""
    bound: set[str] = set()
    free: set[str] = set()
    for statement in statements:
        free.update(n for n in statement_uses(statement) if n not in bound)
        target = statement_binds(statement)
        if target is not None:
            bound.add(target)
    if root is not None:
        free.update(n for n in expression_names(root) if n not in bound)
    return free


def fingerprint(statements: Sequence[Statement], root: Expr) -> str:
    """
    Hash of statements and root with identifiers normalized.

    Two reconstructions that differ only in variable names share a fingerprint.
    """
    names: dict[str, str] = {}

    def rename(name: str) -> str:
        return names.setdefault(name, f"_{len(names)}")

    def replace(expr: NameExpr) -> Expr:
        return NameExpr(name=rename(expr.name))

    canonical = [
        _map_statement(s, replace, rename).model_dump(mode="json", exclude={"section"})
        for s in statements
    ]
    canonical.append(map_names(root, replace).model_dump(mode="json"))
    payload = json.dumps(canonical, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def order_helpers(helpers: Iterable[Helper], statements: Sequence[Statement]) -> list[Helper]:
    """Order helpers by first use, reading statements top-down and entering helpers as called."""
    by_name = {h.name: h for h in helpers}
    ordered: list[Helper] = []
    seen: set[str] = set()

    def visit(names: Iterable[str]) -> None:
        for name in names:
            if name in seen or name not in by_name:
                continue
            seen.add(name)
            helper = by_name[name]
            ordered.append(helper)
            visit(h for s in helper.statements for h in statement_helpers(s))
            visit(expression_helpers(helper.result))

    visit(h for s in statements for h in statement_helpers(s))
    ordered.extend(h for name, h in by_name.items() if name not in seen)
    return ordered


# =============================================================================
# Emission
# =============================================================================


class Resolver(Protocol):
    """Anything that resolves ``id@time`` markers (normally a ReconstructionDatabase)."""

    def lookup(self, object_id: int, logical_time: int) -> Resolution:
        """Return the resolution of one object state."""
        ...


class _BackEdge(Exception):
    def __init__(self, key: str, marker: str) -> None:
        self.key = key
        self.marker = marker
        super().__init__(marker)


class _Deferred:
    """A field write or call postponed until the object it needs exists."""

    def __init__(
        self,
        waiting_on: str,
        owner_key: str | None = None,
        variable: str | None = None,
        field: str | None = None,
        value: CapturedValue | None = None,
        action: Action | None = None,
    ) -> None:
        self.waiting_on = waiting_on
        self.owner_key = owner_key
        self.variable = variable
        self.field = field
        self.value = value
        self.action = action


_CONSTANT_KINDS = frozenset(
    {ActionKind.USE_ENUM_CONSTANT, ActionKind.USE_STATIC_FIELD, ActionKind.USE_NAMED_CONSTANT}
)


class Emitter:
    """
    Converts reconstruction sources into emission units.

    One emitter covers one scope: successive :meth:`emit` calls share the
    naming context and the objects already bound, so an object referenced by
    several values is reconstructed once.
    """

    def __init__(
        self,
        database: Resolver | None = None,
        naming: NamingContext | None = None,
        strict: bool = False,
    ) -> None:
        """
        Initialize the emitter.

        Args:
            database: Resolves object references.
            naming: Identifier scope; a fresh one by default.
            strict: Raise EmissionError on unresolvable references instead of
                emitting a placeholder and a diagnostic.
        """
        self.database = database
        self.naming = naming or NamingContext()
        self.strict = strict
        self._bound: dict[str, str] = {}
        self._in_progress: set[str] = set()
        self._deferred: list[_Deferred] = []
        self._statements: list[Statement] = []
        self._segments: list[Segment] = []
        self._diagnostics: list[Diagnostic] = []
        self._section = Section.ARRANGE

    def emit(
        self,
        source: ReconstructionPlan | Sequence[Action] | CapturedValue,
        preferred_name: str | None = None,
        section: Section = Section.ARRANGE,
        bind: bool = False,
    ) -> EmissionUnit:
        """
        Emit the statements reconstructing a value.

        Args:
            source: An instantiated plan, a trace action list or a captured value.
            preferred_name: Name for the root variable.
            section: Section tag of the emitted statements.
            bind: Bind a primitive or collection root to a local as well.

        Returns:
            The unit; its root is a literal for primitives and a variable for
            objects.

        Raises:
            EmissionError: In strict mode, on an unresolvable reference.
        """
        self._statements = []
        self._segments = []
        self._diagnostics = []
        self._section = section
        root_type: str | None = None

        if isinstance(source, ReconstructionPlan):
            root_type = source.target_type
            root = self._emit_actions(source.actions, root_type, None, preferred_name)
        elif isinstance(source, (list, tuple)):
            root_type = source[0].owner_type if source else None
            root = self._emit_actions(tuple(source), root_type or "object", None, preferred_name)
        else:
            value: CapturedValue = source  # type: ignore[assignment]
            if isinstance(value, ObjectRef) and self.database is not None:
                try:
                    root_type = self.database.lookup(value.object_id, value.logical_time).type_name
                except ResolutionError:
                    root_type = None
            root = self._value(value, preferred_name, bind)

        for item in self._deferred:
            self._diagnose(DiagnosticCode.CYCLE, "cycle could not be closed", item.waiting_on)
        self._deferred = []

        return EmissionUnit(
            statements=tuple(self._statements),
            root=root,
            diagnostics=tuple(self._diagnostics),
            segments=tuple(self._segments),
            root_type=root_type,
        )

    # -------------------------------------------------------------------------
    # Internals
    # -------------------------------------------------------------------------

    def _append(self, statement: Statement) -> None:
        self._statements.append(statement)

    def _diagnose(self, code: DiagnosticCode, message: str, reference: str | None = None) -> None:
        self._diagnostics.append(Diagnostic(code=code, message=message, reference=reference))

    def _unresolved(self, marker: str) -> PlaceholderExpr:
        if self.strict:
            raise EmissionError(marker)
        logger.warning("Unresolved object reference %s", marker)
        self._diagnose(DiagnosticCode.UNRESOLVED, f"cannot resolve {marker}", marker)
        return PlaceholderExpr(reference=marker)

    def _value(self, value: CapturedValue | None, preferred: str | None, bind: bool) -> Expr:
        if value is None:
            return self._unresolved(f"unbound {preferred}")
        if isinstance(value, (PrimitiveLiteral, Text)):
            literal = LiteralExpr(value=value)
            if not bind:
                return literal
            variable = self.naming.fresh(preferred, type(value.value).__name__)
            self._append(BindStatement(target=variable, value=literal, section=self._section))
            return NameExpr(name=variable)
        if isinstance(value, NullValue):
            return LiteralExpr(value=NULL)
        if isinstance(value, EnumConstant):
            return ConstantExpr(owner_type=value.type_name, member=value.constant_name)
        if isinstance(value, (SequenceValue, MapValue)):
            if value.truncated:
                self._diagnose(DiagnosticCode.TRUNCATED, "captured collection was truncated")
            if isinstance(value, SequenceValue):
                expr = CollectionExpr(
                    container=value.container,
                    elements=tuple(self._value(e, None, False) for e in value.elements),
                )
            else:
                expr = CollectionExpr(
                    container="dict",
                    entries=tuple(
                        (self._value(k, None, False), self._value(v, None, False))
                        for k, v in value.entries
                    ),
                )
            if not bind or not (expr.elements or expr.entries):
                return expr
            variable = self.naming.fresh(preferred, expr.container)
            self._append(BindStatement(target=variable, value=expr, section=self._section))
            return NameExpr(name=variable)
        if isinstance(value, ObjectRef):
            return self._reference(value, preferred)
        assert isinstance(value, Opaque)
        self._diagnose(DiagnosticCode.OPAQUE, f"value of {value.type_name} was not captured")
        return PlaceholderExpr(reference=f"opaque {value.type_name}")

    def _reference(self, ref: ObjectRef, preferred: str | None) -> Expr:
        if self.database is None:
            return self._unresolved(ref.marker)
        try:
            resolution = self.database.lookup(ref.object_id, ref.logical_time)
        except ResolutionError:
            return self._unresolved(ref.marker)
        key = resolution.key
        if key in self._bound:
            return NameExpr(name=self._bound[key])
        if key in self._in_progress:
            raise _BackEdge(key, ref.marker)
        if not resolution.reconstructible:
            self._diagnose(
                DiagnosticCode.NOT_RECONSTRUCTIBLE,
                resolution.reason or "object is not reconstructible",
                ref.marker,
            )
        if not resolution.actions:
            return self._unresolved(ref.marker)
        return self._emit_actions(resolution.actions, resolution.type_name, key, preferred)

    def _emit_actions(
        self,
        actions: Sequence[Action],
        type_name: str,
        key: str | None,
        preferred: str | None,
    ) -> Expr:
        first, rest = actions[0], actions[1:]
        if first.kind in _CONSTANT_KINDS and not rest:
            if first.member is None:
                return self._unresolved(f"constant of {first.owner_type}")
            return ConstantExpr(owner_type=first.owner_type, member=first.member)
        if first.kind == ActionKind.USE_OBJECT_REFERENCE and not rest and first.reference:
            return self._reference(first.reference, preferred)

        start = len(self._statements)
        if key is not None:
            self._in_progress.add(key)
        try:
            value = self._constructing_expr(first, key, preferred)
        finally:
            if key is not None:
                self._in_progress.discard(key)

        variable = self.naming.fresh(preferred, type_name)
        self._append(BindStatement(target=variable, value=value, section=self._section))
        if key is not None:
            self._bound[key] = variable
        self._flush()
        for action in rest:
            self._apply(action, variable, key)
        self._segments.append(
            Segment(start=start, end=len(self._statements), variable=variable, type_name=type_name)
        )
        return NameExpr(name=variable)

    def _constructing_expr(self, action: Action, key: str | None, preferred: str | None) -> Expr:
        owner = action.owner_type
        if action.callable is not None and action.callable.owner_type:
            owner = action.callable.owner_type
        if action.kind in _CONSTANT_KINDS:
            return ConstantExpr(owner_type=owner, member=action.member or "")
        if action.kind == ActionKind.USE_OBJECT_REFERENCE and action.reference is not None:
            return self._reference(action.reference, preferred)
        args, kwargs = self._arguments(action, key, constructing=True)
        name = action.callable.name if action.callable is not None else "__init__"
        return CallExpr(callee=name, owner_type=owner, args=args, kwargs=kwargs)

    def _arguments(
        self, action: Action, owner_key: str | None, constructing: bool
    ) -> tuple[tuple[Expr, ...], tuple[tuple[str, Expr], ...]]:
        metas = {m.placeholder_name: m for m in action.meta_variables}
        parameters = action.callable.parameters if action.callable is not None else ()
        ordered: list[tuple[MetaVariable, bool]] = []
        positional = True
        for parameter in parameters:
            meta = metas.pop(parameter.name, None)
            if meta is None:
                positional = False
                continue
            positional = positional and not (meta.keyword or parameter.keyword_only)
            ordered.append((meta, positional))
        ordered.extend((meta, False) for meta in metas.values())

        args: list[Expr] = []
        kwargs: list[tuple[str, Expr]] = []
        for meta, as_positional in ordered:
            expr = self._argument(meta, owner_key, constructing)
            if as_positional:
                args.append(expr)
            else:
                kwargs.append((meta.placeholder_name, expr))
        return tuple(args), tuple(kwargs)

    def _argument(self, meta: MetaVariable, owner_key: str | None, constructing: bool) -> Expr:
        try:
            return self._value(meta.value, meta.placeholder_name, True)
        except _BackEdge as edge:
            if not constructing:
                raise
            if meta.bound_field and owner_key is not None:
                logger.debug("Breaking cycle through %s at field %s", edge.marker, meta.bound_field)
                self._deferred.append(
                    _Deferred(
                        edge.key, owner_key=owner_key, field=meta.bound_field, value=meta.value
                    )
                )
                return LiteralExpr(value=NULL)
            self._diagnose(DiagnosticCode.CYCLE, "constructor argument closes a cycle", edge.marker)
            return PlaceholderExpr(reference=edge.marker)

    def _apply(self, action: Action, variable: str, key: str | None) -> None:
        try:
            if action.kind == ActionKind.CALL_METHOD:
                args, kwargs = self._arguments(action, key, constructing=False)
                name = action.callable.name if action.callable is not None else action.label
                self._append(
                    CallStatement(
                        call=CallExpr(
                            callee=name, receiver=NameExpr(name=variable), args=args, kwargs=kwargs
                        ),
                        section=self._section,
                    )
                )
            elif action.kind == ActionKind.ASSIGN_FIELD:
                field = action.covered_fields[0]
                meta = action.meta_variables[0] if action.meta_variables else None
                expr = self._value(meta.value if meta else None, field, True)
                self._append(
                    AssignStatement(target=variable, field=field, value=expr, section=self._section)
                )
            else:
                logger.warning("Ignoring %s action after construction", action.kind.value)
        except _BackEdge as edge:
            self._deferred.append(_Deferred(edge.key, variable=variable, action=action))

    def _owner_variable(self, item: _Deferred) -> str | None:
        if item.variable is not None:
            return item.variable
        return self._bound.get(item.owner_key) if item.owner_key is not None else None

    def _flush(self) -> None:
        progress = True
        while progress:
            progress = False
            for item in list(self._deferred):
                variable = self._owner_variable(item)
                if item.waiting_on not in self._bound or variable is None:
                    continue
                self._deferred.remove(item)
                progress = True
                if item.action is not None:
                    self._apply(item.action, variable, item.owner_key)
                    continue
                try:
                    expr = self._value(item.value, item.field, False)
                except _BackEdge as edge:
                    item.waiting_on = edge.key
                    self._deferred.append(item)
                    continue
                self._append(
                    AssignStatement(
                        target=variable, field=item.field or "", value=expr, section=self._section
                    )
                )


def emit(
    source: ReconstructionPlan | Sequence[Action] | CapturedValue,
    database: Resolver | None = None,
    naming: NamingContext | None = None,
    strict: bool = False,
) -> EmissionUnit:
    """Emit one source with a fresh emitter."""
    return Emitter(database, naming, strict).emit(source)


def concat_units(
    units: Sequence[EmissionUnit],
    tail: Sequence[Statement] = (),
    root: Expr | None = None,
) -> EmissionUnit:
    """Join units (and trailing statements) into one, keeping segment offsets valid."""
    statements: list[Statement] = []
    segments: list[Segment] = []
    diagnostics: list[Diagnostic] = []
    helpers: dict[str, Helper] = {}
    for unit in units:
        offset = len(statements)
        statements.extend(unit.statements)
        segments.extend(
            s.model_copy(update={"start": s.start + offset, "end": s.end + offset})
            for s in unit.segments
        )
        diagnostics.extend(unit.diagnostics)
        helpers.update({h.name: h for h in unit.helpers})
    statements.extend(tail)
    last = units[-1].root if units else LiteralExpr(value=NULL)
    return EmissionUnit(
        statements=tuple(statements),
        root=root if root is not None else last,
        helpers=tuple(helpers.values()),
        diagnostics=tuple(diagnostics),
        segments=tuple(segments),
    )


# =============================================================================
# Readability transforms
# =============================================================================


def deduplicate(
    units: Sequence[EmissionUnit], names: NamingContext | None = None
) -> tuple[list[EmissionUnit], list[Helper]]:
    """
    Collapse structurally identical reconstructions into one shared helper.

    Units are compared after identifier normalization. Units with no
    statements, with free variables, or whose inner variables are used
    elsewhere are left alone.

    Returns:
        The units, with duplicates rewritten to call a helper, and the new
        shared helpers in first-use order.
    """
    names = names or NamingContext()
    groups: dict[str, list[int]] = {}
    for index, unit in enumerate(units):
        if not unit.statements or free_names(unit.statements, unit.root):
            continue
        root_name = unit.root.name if isinstance(unit.root, NameExpr) else None
        if set(unit.external) - {root_name}:
            continue
        groups.setdefault(fingerprint(unit.statements, unit.root), []).append(index)

    result = list(units)
    shared: list[Helper] = []
    for indices in groups.values():
        if len(indices) < 2:
            continue
        first = units[indices[0]]
        helper = Helper(
            name=names.fresh(helper_name(first.root_type or "value")),
            type_name=first.root_type or "object",
            statements=first.statements,
            result=first.root,
        )
        shared.append(helper)
        for index in indices:
            unit = units[index]
            call = HelperCallExpr(helper=helper.name)
            if isinstance(unit.root, NameExpr):
                statements: tuple[Statement, ...] = (
                    BindStatement(
                        target=unit.root.name, value=call, section=unit.statements[0].section
                    ),
                )
                root: Expr = unit.root
            else:
                statements, root = (), call
            result[index] = unit.model_copy(
                update={
                    "statements": statements,
                    "root": root,
                    "segments": (),
                    "helpers": (*first.helpers, helper),
                }
            )
        logger.debug("Deduplicated %d reconstructions into %s", len(indices), helper.name)
    return result, shared


class _Node:
    def __init__(self, segment: Segment) -> None:
        self.segment = segment
        self.children: list["_Node"] = []


def _segment_tree(segments: Iterable[Segment]) -> list[_Node]:
    roots: list[_Node] = []
    stack: list[_Node] = []
    for segment in sorted(segments, key=lambda s: (s.start, -s.end)):
        node = _Node(segment)
        while stack and not (
            segment.start >= stack[-1].segment.start and segment.end <= stack[-1].segment.end
        ):
            stack.pop()
        (stack[-1].children if stack else roots).append(node)
        stack.append(node)
    return roots


def outline_helpers(
    unit: EmissionUnit, threshold: int, names: NamingContext | None = None
) -> EmissionUnit:
    """
    Move every object reconstruction longer than ``threshold`` statements into
    a ``create_<type>`` helper.

    Inner reconstructions are outlined first, so an outer helper calls the
    inner one; the helper list stays flat and is ordered by first use. A
    reconstruction is kept inline when it spans sections, reads variables bound
    before it, or binds variables other code reads.

    Raises:
        ValueError: If ``threshold`` is below 1.
    """
    if threshold < 1:
        raise ValueError("threshold must be at least 1")
    names = names or NamingContext(h.name for h in unit.helpers)
    statements = unit.statements
    helpers = list(unit.helpers)

    def used_outside(start: int, end: int) -> set[str]:
        used = {n for i, s in enumerate(statements) if not start <= i < end for n in statement_uses(s)}
        used.update(expression_names(unit.root))
        used.update(unit.external)
        return used

    def outlinable(segment: Segment, body: list[Statement]) -> bool:
        if len({s.section for s in body}) != 1 or free_names(body):
            return False
        inner = {statement_binds(s) for s in statements[segment.start : segment.end]}
        inner.discard(None)
        inner.discard(segment.variable)
        return not (inner & used_outside(segment.start, segment.end))

    def process(node: _Node) -> list[Statement]:
        segment = node.segment
        body: list[Statement] = []
        position = segment.start
        for child in node.children:
            body.extend(statements[position : child.segment.start])
            body.extend(process(child))
            position = child.segment.end
        body.extend(statements[position : segment.end])
        if len(body) <= threshold or not outlinable(segment, body):
            return body
        helper = Helper(
            name=names.fresh(helper_name(segment.type_name)),
            type_name=segment.type_name,
            statements=tuple(body),
            result=NameExpr(name=segment.variable),
        )
        helpers.append(helper)
        logger.debug("Outlined %d statements into %s", len(body), helper.name)
        return [
            BindStatement(
                target=segment.variable,
                value=HelperCallExpr(helper=helper.name),
                section=body[0].section,
            )
        ]

    result: list[Statement] = []
    position = 0
    for node in _segment_tree(unit.segments):
        result.extend(statements[position : node.segment.start])
        result.extend(process(node))
        position = node.segment.end
    result.extend(statements[position:])

    if len(helpers) == len(unit.helpers):
        return unit
    return unit.model_copy(
        update={
            "statements": tuple(result),
            "helpers": tuple(order_helpers(helpers, result)),
            "segments": (),
        }
    )


def inline_primitives(unit: EmissionUnit, preserve_sections: bool = True) -> EmissionUnit:
    """
    Fold single-use primitive locals into their use site.

    With ``preserve_sections`` a local is kept when its one use lies in another
    Arrange/Act/Assert section. Locals used by the root or by code outside the
    unit are kept.
    """
    statements = list(unit.statements)
    counts: dict[str, int] = {}
    for statement in statements:
        for name in statement_uses(statement):
            counts[name] = counts.get(name, 0) + 1
    pinned = set(expression_names(unit.root)) | set(unit.external)

    index = 0
    inlined = 0
    while index < len(statements):
        statement = statements[index]
        if (
            not isinstance(statement, BindStatement)
            or not isinstance(statement.value, LiteralExpr)
            or counts.get(statement.target) != 1
            or statement.target in pinned
        ):
            index += 1
            continue
        target = statement.target
        user = next(
            (j for j in range(index + 1, len(statements)) if target in statement_uses(statements[j])),
            None,
        )
        if user is None or (
            preserve_sections and statements[user].section != statement.section
        ):
            index += 1
            continue
        literal = statement.value

        def replace(expr: NameExpr, name: str = target) -> Expr:
            return literal if expr.name == name else expr

        statements[user] = _map_statement(statements[user], replace)
        del statements[index]
        inlined += 1

    if not inlined:
        return unit
    logger.debug("Inlined %d primitive locals", inlined)
    return unit.model_copy(update={"statements": tuple(statements), "segments": ()})
