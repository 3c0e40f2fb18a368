"""
Declaration metadata for Python classes.

This module is the host-language side of type analysis: it inspects live
classes with ``inspect``, ``ast``, ``typing`` and ``dataclasses`` and reports
plain facts (fields, callables, parameter bindings, flags). Deciding what those
facts mean for reconstruction is the job of :mod:`plaincode.analyzer`.

The ``constructor``, ``factory`` and ``setter`` decorators let a class author
state those facts explicitly where body analysis cannot see them.
"""

import ast
import dataclasses
import enum
import inspect
import logging
import re
import textwrap
import types
import typing
from collections.abc import Callable
from typing import Any, Literal, TypeVar

from pydantic import BaseModel, Field

from .models import BUILTIN_TYPE_NAMES, TypeKind

logger = logging.getLogger(__name__)

F = TypeVar("F")

ROLE_ATTR = "__plaincode_role__"
SETS_ATTR = "__plaincode_sets__"
BINDINGS_ATTR = "__plaincode_bindings__"

Role = Literal["constructor", "factory", "setter"]


# =============================================================================
# Decorators
# =============================================================================


def _mark(role: Role, fields: tuple[str, ...], bindings: dict[str, str]) -> Callable[[F], F]:
    def decorator(obj: F) -> F:
        target = obj.__func__ if isinstance(obj, (classmethod, staticmethod)) else obj
        setattr(target, ROLE_ATTR, role)
        setattr(target, SETS_ATTR, fields)
        setattr(target, BINDINGS_ATTR, dict(bindings))
        return obj

    return decorator


def constructor(*fields: str, **bindings: str) -> Callable[[F], F]:
    """
    Mark a classmethod as a named constructor.

    Args:
        *fields: Fields the constructor sets.
        **bindings: Explicit ``parameter=field`` bindings.
    """
    return _mark("constructor", fields, bindings)


def factory(*fields: str, **bindings: str) -> Callable[[F], F]:
    """Mark a classmethod or staticmethod as a factory of its class."""
    return _mark("factory", fields, bindings)


def setter(*fields: str, **bindings: str) -> Callable[[F], F]:
    """Mark a method as a setter of the given fields."""
    return _mark("setter", fields, bindings)


# =============================================================================
# Declaration models
# =============================================================================


class ParameterDeclaration(BaseModel):
    """A parameter as declared in a signature."""

    name: str
    annotation: str = "object"
    has_default: bool = False
    kind: Literal["positional", "keyword_only", "var_positional", "var_keyword"] = (
        "positional"
    )

    model_config = {"frozen": True}


class MethodDeclaration(BaseModel):
    """
    Facts about one callable of a class.

    Attributes:
        name: Callable name.
        owner_type: Type name of the declaring class.
        parameters: Parameters without the receiver.
        returns: Return annotation as a type name.
        binding: ``instance``, ``class`` or ``static``.
        statement_count: Statements in the body, docstring excluded.
        assignments: ``(field, parameter or None)`` for each ``self.field = ...``
            in the body.
        instantiates: Arguments of a lone ``return cls(...)`` body, as parameter
            names (None for non-parameter arguments); None if the body has
            another shape.
        instantiates_kwargs: Keyword arguments of that call.
        declared_role: Role stated by a decorator.
        declared_sets: Fields stated by a decorator.
        declared_bindings: ``parameter -> field`` stated by a decorator.
    """

    name: str
    owner_type: str
    parameters: tuple[ParameterDeclaration, ...] = ()
    returns: str = "object"
    binding: Literal["instance", "class", "static"] = "instance"
    statement_count: int = 0
    assignments: tuple[tuple[str, str | None], ...] = ()
    instantiates: tuple[str | None, ...] | None = None
    instantiates_kwargs: dict[str, str | None] = Field(default_factory=dict)
    declared_role: Role | None = None
    declared_sets: tuple[str, ...] = ()
    declared_bindings: dict[str, str] = Field(default_factory=dict)
    is_public: bool = True
    is_abstract: bool = False
    is_deprecated: bool = False

    model_config = {"frozen": True}

    @property
    def identifier(self) -> str:
        """Serialization point id: ``module:Class.method``."""
        return f"{self.owner_type}.{self.name}"


class FieldDeclaration(BaseModel):
    """A field (instance attribute) of a class."""

    name: str
    annotation: str = "object"
    is_public: bool = True
    read_only: bool = False

    model_config = {"frozen": True}


class TypeDeclaration(BaseModel):
    """Facts about one class."""

    type_name: str
    kind: TypeKind = TypeKind.COMPOSITE
    fields: tuple[FieldDeclaration, ...] = ()
    methods: tuple[MethodDeclaration, ...] = ()
    enum_constants: tuple[str, ...] = ()
    static_constants: tuple[tuple[str, str], ...] = ()
    is_public: bool = True
    is_local: bool = False
    is_anonymous: bool = False
    is_abstract: bool = False
    is_deprecated: bool = False
    init_bindings: dict[str, str] = Field(
        default_factory=dict, description="Dataclass init parameter -> field"
    )

    model_config = {"frozen": True}

    def method(self, name: str) -> MethodDeclaration | None:
        """Look up a callable by name."""
        for method in self.methods:
            if method.name == name:
                return method
        return None


class ModuleDeclaration(BaseModel):
    """All class declarations of a module."""

    module_name: str
    types: tuple[TypeDeclaration, ...] = ()

    model_config = {"frozen": True}


# =============================================================================
# Names
# =============================================================================

_TYPE_TOKEN = re.compile(r"[A-Za-z_][\w.]*(?::[\w.]+)?")


def qualified_name(cls: type) -> str:
    """Return ``module:QualName`` for a class, or the bare name for builtins."""
    if cls is type(None):
        return "NoneType"
    if cls.__module__ == "builtins":
        return cls.__qualname__
    return f"{cls.__module__}:{cls.__qualname__}"


def annotation_name(annotation: Any) -> str:
    """Render a type annotation as type-name text."""
    if annotation is inspect.Parameter.empty or annotation is None:
        return "object" if annotation is inspect.Parameter.empty else "NoneType"
    if annotation is typing.Any:
        return "Any"
    if isinstance(annotation, str):
        return annotation
    if isinstance(annotation, typing.ForwardRef):
        return annotation.__forward_arg__
    origin = typing.get_origin(annotation)
    if origin is typing.Union or origin is types.UnionType:
        return " | ".join(annotation_name(arg) for arg in typing.get_args(annotation))
    if origin is typing.ClassVar:
        return annotation_name(typing.get_args(annotation)[0])
    if origin is not None:
        args = typing.get_args(annotation)
        head = annotation_name(origin)
        if not args:
            return head
        return f"{head}[{', '.join(annotation_name(a) for a in args)}]"
    if annotation is Ellipsis:
        return "..."
    if isinstance(annotation, type):
        return qualified_name(annotation)
    return str(annotation)


def referenced_type_names(type_text: str) -> list[str]:
    """Return the non-builtin type names mentioned in rendered annotation text."""
    names: list[str] = []
    for token in _TYPE_TOKEN.findall(type_text):
        if token in BUILTIN_TYPE_NAMES or token in names:
            continue
        names.append(token)
    return names


def _is_private(name: str) -> bool:
    return name.startswith("_") and not (name.startswith("__") and name.endswith("__"))


def _is_deprecated(obj: Any) -> bool:
    return getattr(obj, "__deprecated__", None) is not None


# =============================================================================
# Body analysis
# =============================================================================


def _parse_function(func: Callable[..., Any]) -> ast.FunctionDef | None:
    try:
        source = textwrap.dedent(inspect.getsource(inspect.unwrap(func)))
        tree = ast.parse(source)
    except (OSError, TypeError, SyntaxError, IndentationError):
        return None
    node = tree.body[0] if tree.body else None
    if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
        return node  # type: ignore[return-value]
    return None


def _body_without_docstring(node: ast.FunctionDef) -> list[ast.stmt]:
    body = list(node.body)
    if (
        body
        and isinstance(body[0], ast.Expr)
        and isinstance(body[0].value, ast.Constant)
        and isinstance(body[0].value.value, str)
    ):
        body = body[1:]
    return body


def _count_statements(body: list[ast.stmt]) -> int:
    return sum(
        1 for stmt in body for node in ast.walk(stmt) if isinstance(node, ast.stmt)
    )


def _name_of(node: ast.expr, parameters: set[str]) -> str | None:
    if isinstance(node, ast.Name) and node.id in parameters:
        return node.id
    return None


def _self_assignments(
    body: list[ast.stmt], receiver: str, parameters: set[str]
) -> list[tuple[str, str | None]]:
    found: list[tuple[str, str | None]] = []
    for stmt in body:
        for node in ast.walk(stmt):
            if isinstance(node, ast.Assign):
                targets, value = node.targets, node.value
            elif isinstance(node, ast.AnnAssign) and node.value is not None:
                targets, value = [node.target], node.value
            else:
                continue
            for target in targets:
                if (
                    isinstance(target, ast.Attribute)
                    and isinstance(target.value, ast.Name)
                    and target.value.id == receiver
                ):
                    found.append((target.attr, _name_of(value, parameters)))
    return found


def _instantiation(
    body: list[ast.stmt], class_names: set[str], parameters: set[str]
) -> tuple[tuple[str | None, ...], dict[str, str | None]] | None:
    if len(body) != 1 or not isinstance(body[0], ast.Return):
        return None
    call = body[0].value
    if not isinstance(call, ast.Call) or not isinstance(call.func, ast.Name):
        return None
    if call.func.id not in class_names:
        return None
    if any(isinstance(arg, ast.Starred) for arg in call.args):
        return None
    args = tuple(_name_of(arg, parameters) for arg in call.args)
    kwargs = {kw.arg: _name_of(kw.value, parameters) for kw in call.keywords if kw.arg}
    return args, kwargs


# =============================================================================
# Builders
# =============================================================================


def _resolved_hints(obj: Any) -> dict[str, Any]:
    try:
        return typing.get_type_hints(obj)
    except Exception:  # unresolvable forward references keep their text
        return dict(getattr(obj, "__annotations__", {}) or {})


_PARAMETER_KINDS = {
    inspect.Parameter.POSITIONAL_ONLY: "positional",
    inspect.Parameter.POSITIONAL_OR_KEYWORD: "positional",
    inspect.Parameter.KEYWORD_ONLY: "keyword_only",
    inspect.Parameter.VAR_POSITIONAL: "var_positional",
    inspect.Parameter.VAR_KEYWORD: "var_keyword",
}


def declare_method(
    cls: type, name: str, member: Any, owner_type: str | None = None
) -> MethodDeclaration | None:
    """
    Build the declaration of one class member.

    Returns:
        The declaration, or None if the member is not a callable.
    """
    if isinstance(member, classmethod):
        binding, func = "class", member.__func__
    elif isinstance(member, staticmethod):
        binding, func = "static", member.__func__
    elif inspect.isfunction(member):
        binding, func = "instance", member
    else:
        return None

    try:
        signature = inspect.signature(func)
    except (TypeError, ValueError):
        return None
    hints = _resolved_hints(func)
    all_params = list(signature.parameters.values())
    receiver = all_params[0].name if binding != "static" and all_params else "self"
    if binding != "static":
        all_params = all_params[1:]

    parameters = tuple(
        ParameterDeclaration(
            name=p.name,
            annotation=annotation_name(hints.get(p.name, p.annotation)),
            has_default=p.default is not inspect.Parameter.empty,
            kind=_PARAMETER_KINDS[p.kind],  # type: ignore[arg-type]
        )
        for p in all_params
    )
    parameter_names = {p.name for p in parameters}

    node = _parse_function(func)
    body = _body_without_docstring(node) if node is not None else []
    assignments = _self_assignments(body, receiver, parameter_names) if body else []
    class_names = {cls.__name__} | ({receiver} if binding == "class" else set())
    shape = _instantiation(body, class_names, parameter_names) if body else None

    return MethodDeclaration(
        name=name,
        owner_type=owner_type or qualified_name(cls),
        parameters=parameters,
        returns=annotation_name(hints.get("return", signature.return_annotation)),
        binding=binding,  # type: ignore[arg-type]
        statement_count=_count_statements(body),
        assignments=tuple(assignments),
        instantiates=shape[0] if shape else None,
        instantiates_kwargs=shape[1] if shape else {},
        declared_role=getattr(func, ROLE_ATTR, None),
        declared_sets=tuple(getattr(func, SETS_ATTR, ())),
        declared_bindings=dict(getattr(func, BINDINGS_ATTR, {})),
        is_public=not name.startswith("_") or name == "__init__",
        is_abstract=bool(getattr(func, "__isabstractmethod__", False)),
        is_deprecated=_is_deprecated(func) or _is_deprecated(member),
    )


def _collect_members(cls: type) -> dict[str, Any]:
    members: dict[str, Any] = {}
    for klass in cls.__mro__:
        if klass is object:
            break
        for name, member in vars(klass).items():
            if name not in members:
                members[name] = member
    return members


def _declare_fields(
    cls: type, init: MethodDeclaration | None, members: dict[str, Any]
) -> tuple[list[FieldDeclaration], dict[str, str]]:
    if dataclasses.is_dataclass(cls):
        frozen = cls.__dataclass_params__.frozen  # type: ignore[attr-defined]
        hints = _resolved_hints(cls)
        fields = [
            FieldDeclaration(
                name=f.name,
                annotation=annotation_name(hints.get(f.name, f.type)),
                is_public=not f.name.startswith("_"),
                read_only=frozen,
            )
            for f in dataclasses.fields(cls)
        ]
        bindings = {f.name: f.name for f in dataclasses.fields(cls) if f.init}
        return fields, bindings

    hints: dict[str, Any] = {}
    for klass in reversed(cls.__mro__):
        if klass is object:
            continue
        hints.update(
            {
                k: v
                for k, v in _resolved_hints(klass).items()
                if k in inspect.get_annotations(klass)
            }
        )
    names: list[str] = []
    for name, annotation in hints.items():
        if typing.get_origin(annotation) is typing.ClassVar or name.isupper():
            continue
        names.append(name)
    for slot in getattr(cls, "__slots__", ()):
        if isinstance(slot, str) and slot not in names:
            names.append(slot)
    param_types = {p.name: p.annotation for p in init.parameters} if init else {}
    for field_name, param in init.assignments if init else ():
        if field_name not in names:
            names.append(field_name)
            if param is not None and field_name not in hints:
                hints[field_name] = param_types.get(param, "object")

    fields = []
    for name in names:
        prop = members.get(name)
        read_only = isinstance(prop, property) and prop.fset is None
        annotation = hints.get(name, "object")
        fields.append(
            FieldDeclaration(
                name=name,
                annotation=annotation
                if isinstance(annotation, str)
                else annotation_name(annotation),
                is_public=not name.startswith("_"),
                read_only=read_only,
            )
        )
    return fields, {}


def declare_class(cls: type) -> TypeDeclaration:
    """
    Build the declaration of a class.

    Args:
        cls: The class to describe.

    Returns:
        TypeDeclaration with fields, callables and flags.
    """
    type_name = qualified_name(cls)
    flags = {
        "is_public": not any(_is_private(part) for part in cls.__qualname__.split(".")),
        "is_local": "<locals>" in cls.__qualname__,
        "is_anonymous": not cls.__name__.isidentifier(),
        "is_abstract": inspect.isabstract(cls),
        "is_deprecated": _is_deprecated(cls),
    }

    if issubclass(cls, enum.Enum):
        return TypeDeclaration(
            type_name=type_name,
            kind=TypeKind.ENUMERATION,
            enum_constants=tuple(member.name for member in cls),
            **flags,
        )

    members = _collect_members(cls)
    methods: list[MethodDeclaration] = []
    init_member = members.get("__init__")
    if init_member is None:
        methods.append(MethodDeclaration(name="__init__", owner_type=type_name))
    for name, member in members.items():
        if name.startswith("__") and name != "__init__":
            continue
        declared = declare_method(cls, name, member, owner_type=type_name)
        if declared is not None:
            methods.append(declared)

    init = next((m for m in methods if m.name == "__init__"), None)
    fields, init_bindings = _declare_fields(cls, init, members)

    static_constants = tuple(
        (name, type_name)
        for name, value in vars(cls).items()
        if name.isupper() and isinstance(value, cls)
    )

    return TypeDeclaration(
        type_name=type_name,
        kind=TypeKind.COMPOSITE,
        fields=tuple(fields),
        methods=tuple(methods),
        static_constants=static_constants,
        init_bindings=init_bindings,
        **flags,
    )

