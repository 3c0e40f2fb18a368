"""
Pre-execution analysis.

Turns class declarations into type models, enumerates the reconstruction
actions of each type, selects serialization points and computes the closure of
types needed to reconstruct the objects seen at those points.
"""

import importlib
import inspect
import logging
import re
import time
import types
from collections.abc import Iterable

from pydantic import BaseModel, Field

from .declarations import (
    MethodDeclaration,
    ModuleDeclaration,
    TypeDeclaration,
    declare_class,
    referenced_type_names,
)
from .exceptions import AnalysisError, PlanInfeasibleError
from .models import (
    Action,
    ActionKind,
    CallableSpec,
    CostTable,
    FieldSpec,
    MetaVariable,
    Parameter,
    PlanDatabase,
    TypeKind,
    TypeModel,
    BUILTIN_TYPE_NAMES,
    split_type_name,
)
from .solver import PlanProblem, assemble_plan, solve

logger = logging.getLogger(__name__)

_TOKEN = re.compile(r"[A-Za-z_][\w.]*(?::[\w.]+)?")


class SelectionCriteria(BaseModel):
    """
    Filters deciding which methods become serialization points.

    Every ``require_*`` flag can be disabled; ``min_statements = 0`` disables
    the size filter.
    """

    require_public: bool = True
    require_non_abstract: bool = True
    require_non_static: bool = True
    require_non_deprecated: bool = True
    min_statements: int = Field(2, ge=0)
    require_public_owner: bool = True
    require_named_owner: bool = True
    require_non_local_owner: bool = True
    require_non_deprecated_owner: bool = True

    @classmethod
    def disabled(cls) -> "SelectionCriteria":
        """Criteria that accept every method."""
        return cls(
            require_public=False,
            require_non_abstract=False,
            require_non_static=False,
            require_non_deprecated=False,
            min_statements=0,
            require_public_owner=False,
            require_named_owner=False,
            require_non_local_owner=False,
            require_non_deprecated_owner=False,
        )


# =============================================================================
# Registry
# =============================================================================


class TypeRegistry:
    """
    Known class declarations, by type name.

    The registry also keeps the live classes so later phases can instrument
    them and resolve type names without importing by hand.
    """

    def __init__(self) -> None:
        self._declarations: dict[str, TypeDeclaration] = {}
        self._classes: dict[str, type] = {}

    def __contains__(self, type_name: object) -> bool:
        return type_name in self._declarations

    def __len__(self) -> int:
        return len(self._declarations)

    @property
    def type_names(self) -> list[str]:
        """Registered type names, sorted."""
        return sorted(self._declarations)

    def register_class(self, cls: type) -> TypeDeclaration:
        """Declare and register a class."""
        declaration = declare_class(cls)
        self._declarations[declaration.type_name] = declaration
        self._classes[declaration.type_name] = cls
        return declaration

    def register(self, declaration: TypeDeclaration) -> None:
        """Register a declaration built elsewhere."""
        self._declarations[declaration.type_name] = declaration

    def register_module(self, module: types.ModuleType) -> ModuleDeclaration:
        """Declare and register every class defined at the top level of a module."""
        declared = [
            self.register_class(obj)
            for obj in vars(module).values()
            if inspect.isclass(obj) and obj.__module__ == module.__name__
        ]
        logger.debug("Registered %d classes from %s", len(declared), module.__name__)
        return ModuleDeclaration(module_name=module.__name__, types=tuple(declared))

    @classmethod
    def from_modules(
        cls, module_names: Iterable[str]
    ) -> tuple["TypeRegistry", list[ModuleDeclaration]]:
        """
        Import modules and register their classes.

        Raises:
            AnalysisError: If a module cannot be imported.
        """
        registry = cls()
        declarations: list[ModuleDeclaration] = []
        for name in module_names:
            try:
                module = importlib.import_module(name)
            except ImportError as e:
                raise AnalysisError(f"Cannot import module '{name}': {e}") from e
            declarations.append(registry.register_module(module))
        return registry, declarations

    def get(self, type_name: str) -> TypeDeclaration | None:
        """Return the declaration of a type name, if registered."""
        return self._declarations.get(type_name)

    def class_of(self, type_name: str) -> type | None:
        """Return the live class of a type name, if known."""
        return self._classes.get(type_name)

    def resolve(self, name: str, context_module: str | None = None) -> str | None:
        """
        Resolve a possibly bare type name to a registered type name.

        A bare name is looked up in the context module first, then by unique
        short name across the registry.
        """
        if name in self._declarations:
            return name
        if ":" in name:
            return None
        if context_module and f"{context_module}:{name}" in self._declarations:
            return f"{context_module}:{name}"
        matches = [
            t for t in self._declarations if split_type_name(t)[1] == name
        ]
        return matches[0] if len(matches) == 1 else None


def _resolve_annotation(
    text: str,
    owner_type: str,
    registry: TypeRegistry | None,
) -> str:
    """Qualify bare names in annotation text, raising on unknown ones."""
    context_module = split_type_name(owner_type)[0]
    for token in referenced_type_names(text):
        if ":" in token:
            continue
        resolved = registry.resolve(token, context_module) if registry else None
        if resolved is None:
            raise AnalysisError(
                f"Unknown type '{token}' referenced by {owner_type}", type_name=token
            )

    def qualify(match: re.Match[str]) -> str:
        token = match.group(0)
        if registry is None or ":" in token or token in BUILTIN_TYPE_NAMES:
            return token
        return registry.resolve(token, context_module) or token

    return _TOKEN.sub(qualify, text)


# =============================================================================
# Type models
# =============================================================================


def _is_setter(method: MethodDeclaration) -> bool:
    if method.declared_role is not None:
        return method.declared_role == "setter"
    return (
        method.binding == "instance"
        and method.name != "__init__"
        and method.statement_count == 1
        and len(method.assignments) == 1
        and method.assignments[0][1] is not None
    )


def _is_factory(method: MethodDeclaration) -> bool:
    if method.declared_role is not None:
        return method.declared_role == "factory"
    return method.binding in {"class", "static"} and method.instantiates is not None


def _bindings(
    method: MethodDeclaration,
    field_names: set[str],
    init_bindings: dict[str, str],
    init_parameters: list[str],
) -> dict[str, str]:
    """Map parameter name -> field for one callable; declared metadata wins."""
    parameter_names = {p.name for p in method.parameters}
    bindings: dict[str, str] = {}

    for param, field_name in method.declared_bindings.items():
        if param in parameter_names and field_name in field_names:
            bindings[param] = field_name

    bound_fields = set(bindings.values())
    for field_name, param in method.assignments:
        if param and field_name in field_names and param not in bindings:
            if field_name not in bound_fields:
                bindings[param] = field_name
                bound_fields.add(field_name)

    if method.instantiates is not None:
        for index, param in enumerate(method.instantiates):
            if param and index < len(init_parameters):
                target = init_bindings.get(init_parameters[index])
                if target and param not in bindings:
                    bindings[param] = target
        for keyword, param in method.instantiates_kwargs.items():
            target = init_bindings.get(keyword)
            if param and target and param not in bindings:
                bindings[param] = target

    for field_name in method.declared_sets:
        if field_name in bindings.values():
            continue
        for candidate in (field_name, field_name.lstrip("_")):
            if candidate in parameter_names and candidate not in bindings:
                bindings[candidate] = field_name
                break
        else:
            logger.debug(
                "%s declares it sets '%s' but no parameter binds it",
                method.identifier,
                field_name,
            )
    return bindings


def _callable_spec(
    method: MethodDeclaration,
    bindings: dict[str, str],
    constructing: bool,
    field_order: list[str],
    registry: TypeRegistry | None,
) -> CallableSpec:
    parameters = tuple(
        Parameter(
            name=p.name,
            type_name=_resolve_annotation(p.annotation, method.owner_type, registry),
            has_default=p.has_default,
            keyword_only=p.kind == "keyword_only",
            binds_field=bindings.get(p.name),
        )
        for p in method.parameters
        if p.kind in {"positional", "keyword_only"}
    )
    sets = set(bindings.values())
    return CallableSpec(
        name=method.name,
        parameters=parameters,
        sets_fields=tuple(f for f in field_order if f in sets),
        constructing=constructing,
        accessible=method.is_public,
    )


def extract_type_model(
    declaration: TypeDeclaration, registry: TypeRegistry | None = None
) -> TypeModel:
    """
    Build the type model of a declaration.

    Args:
        declaration: Facts reported by :mod:`plaincode.declarations`.
        registry: Known types used to resolve bare names.

    Returns:
        TypeModel with fields, constructors, factory methods and setters.

    Raises:
        AnalysisError: If the declaration references an unknown type.
    """
    if declaration.kind == TypeKind.ENUMERATION:
        return TypeModel(
            type_name=declaration.type_name,
            kind=TypeKind.ENUMERATION,
            enum_constants=declaration.enum_constants,
        )

    fields = tuple(
        FieldSpec(
            name=f.name,
            type_name=_resolve_annotation(f.annotation, declaration.type_name, registry),
            accessible=f.is_public,
            assignable=f.is_public and not f.read_only,
        )
        for f in declaration.fields
    )
    field_order = [f.name for f in fields]
    field_names = set(field_order)

    init = declaration.method("__init__")
    init_bindings: dict[str, str] = {}
    init_parameters: list[str] = []
    if init is not None:
        init_parameters = [p.name for p in init.parameters]
        init_bindings = {
            p: f for p, f in declaration.init_bindings.items() if f in field_names
        }
        init_bindings.update(_bindings(init, field_names, init_bindings, []))

    constructors: list[CallableSpec] = []
    factories: list[CallableSpec] = []
    setters: list[CallableSpec] = []
    for method in declaration.methods:
        if method.name == "__init__":
            constructors.append(
                _callable_spec(method, init_bindings, True, field_order, registry)
            )
            continue
        if method.declared_role == "constructor":
            bindings = _bindings(method, field_names, init_bindings, init_parameters)
            constructors.append(
                _callable_spec(method, bindings, True, field_order, registry)
            )
        elif _is_factory(method):
            bindings = _bindings(method, field_names, init_bindings, init_parameters)
            factories.append(_callable_spec(method, bindings, True, field_order, registry))
        elif _is_setter(method):
            bindings = _bindings(method, field_names, init_bindings, init_parameters)
            setters.append(_callable_spec(method, bindings, False, field_order, registry))

    model = TypeModel(
        type_name=declaration.type_name,
        kind=TypeKind.COMPOSITE,
        fields=fields,
        constructors=tuple(constructors),
        factory_methods=tuple(factories),
        setters=tuple(setters),
        static_constant_fields=declaration.static_constants,
    )
    logger.debug(
        "Extracted %s: %d fields, %d constructors, %d factories, %d setters",
        model.type_name,
        len(fields),
        len(constructors),
        len(factories),
        len(setters),
    )
    return model


# =============================================================================
# Actions
# =============================================================================


def _callable_action(
    kind: ActionKind, spec: CallableSpec, model: TypeModel
) -> Action | None:
    if not spec.accessible:
        return None
    unbound = [p.name for p in spec.parameters if not p.has_default and not p.binds_field]
    if unbound:
        logger.debug(
            "Skipping %s.%s: parameters %s set no field", model.type_name, spec.name, unbound
        )
        return None
    return Action(
        kind=kind,
        constructing=spec.constructing,
        covered_fields=spec.sets_fields,
        callable=spec,
        meta_variables=tuple(
            MetaVariable(
                placeholder_name=p.name, bound_field=p.binds_field, keyword=p.keyword_only
            )
            for p in spec.parameters
            if p.binds_field
        ),
        owner_type=model.type_name,
    )


def enumerate_actions(model: TypeModel) -> list[Action]:
    """
    List every action available for a type.

    Returns:
        Constructors, factory methods, the enum-constant action, setters and
        one field assignment per assignable field, in that order.
    """
    actions: list[Action] = []
    if model.kind == TypeKind.ENUMERATION:
        actions.append(
            Action(
                kind=ActionKind.USE_ENUM_CONSTANT,
                constructing=True,
                owner_type=model.type_name,
            )
        )
        return actions

    candidates = [
        *((ActionKind.CALL_CONSTRUCTOR, spec) for spec in model.constructors),
        *((ActionKind.CALL_FACTORY_METHOD, spec) for spec in model.factory_methods),
        *((ActionKind.CALL_METHOD, spec) for spec in model.setters),
    ]
    for kind, spec in candidates:
        action = _callable_action(kind, spec, model)
        if action is not None:
            actions.append(action)

    for field_spec in model.fields:
        if field_spec.assignable:
            actions.append(
                Action(
                    kind=ActionKind.ASSIGN_FIELD,
                    covered_fields=(field_spec.name,),
                    meta_variables=(
                        MetaVariable(
                            placeholder_name=field_spec.name,
                            bound_field=field_spec.name,
                        ),
                    ),
                    owner_type=model.type_name,
                    member=field_spec.name,
                )
            )
    return actions


# =============================================================================
# Serialization points
# =============================================================================


def select_serialization_points(
    module_metadata: ModuleDeclaration | Iterable[ModuleDeclaration],
    criteria: SelectionCriteria,
) -> list[str]:
    """
    Return the identifiers of the methods that satisfy every enabled criterion.

    Constructors are never serialization points.
    """
    modules = (
        [module_metadata]
        if isinstance(module_metadata, ModuleDeclaration)
        else list(module_metadata)
    )
    selected: list[str] = []
    for module in modules:
        for owner in module.types:
            if criteria.require_public_owner and not owner.is_public:
                continue
            if criteria.require_named_owner and owner.is_anonymous:
                continue
            if criteria.require_non_local_owner and owner.is_local:
                continue
            if criteria.require_non_deprecated_owner and owner.is_deprecated:
                continue
            for method in owner.methods:
                if method.name == "__init__":
                    continue
                if criteria.require_public and not method.is_public:
                    continue
                if criteria.require_non_abstract and method.is_abstract:
                    continue
                if criteria.require_non_static and method.binding != "instance":
                    continue
                if criteria.require_non_deprecated and method.is_deprecated:
                    continue
                if method.statement_count < criteria.min_statements:
                    continue
                selected.append(method.identifier)
    logger.info("Selected %d serialization points", len(selected))
    return selected


# =============================================================================
# Closure
# =============================================================================


def _split_point(point_id: str) -> tuple[str, str]:
    owner, _, method = point_id.rpartition(".")
    return owner, method


def _mentioned(text: str, owner_type: str, registry: TypeRegistry) -> list[str]:
    context_module = split_type_name(owner_type)[0]
    found: list[str] = []
    for token in referenced_type_names(text):
        resolved = registry.resolve(token, context_module)
        if resolved is not None and resolved not in found:
            found.append(resolved)
    return found


def _neighbours(declaration: TypeDeclaration, registry: TypeRegistry) -> list[str]:
    found: list[str] = []
    texts = [f.annotation for f in declaration.fields]
    for method in declaration.methods:
        if method.is_public:
            texts.extend(p.annotation for p in method.parameters)
    for text in texts:
        for name in _mentioned(text, declaration.type_name, registry):
            if name not in found:
                found.append(name)
    return found


def closure_of_associated_types(
    entry_points: Iterable[str],
    registry: TypeRegistry,
    extra_types: Iterable[str] = (),
) -> list[TypeModel]:
    """
    Compute every type needed to reconstruct receivers, arguments and results.

    Args:
        entry_points: Serialization point identifiers (``module:Class.method``).
        registry: Known declarations.
        extra_types: Further roots, for values captured outside any point.

    Returns:
        Type models of the closure, each exactly once, sorted by type name.
        Primitives and unregistered (opaque) types are leaves and not listed.

    Raises:
        AnalysisError: If an entry point does not name a registered method.
    """
    pending: list[str] = [t for t in extra_types if t in registry]
    for point_id in entry_points:
        owner_name, method_name = _split_point(point_id)
        owner = registry.get(owner_name)
        method = owner.method(method_name) if owner else None
        if owner is None or method is None:
            raise AnalysisError(f"Unknown serialization point '{point_id}'", owner_name)
        pending.append(owner_name)
        for text in (*(p.annotation for p in method.parameters), method.returns):
            pending.extend(_mentioned(text, owner_name, registry))

    seen: set[str] = set()
    while pending:
        name = pending.pop()
        if name in seen:
            continue
        seen.add(name)
        declaration = registry.get(name)
        if declaration is not None:
            pending.extend(n for n in _neighbours(declaration, registry) if n not in seen)

    return [extract_type_model(registry.get(name), registry) for name in sorted(seen)]  # type: ignore[arg-type]


# =============================================================================
# Pre-execution phase
# =============================================================================


def build_plan_database(
    registry: TypeRegistry,
    module_declarations: Iterable[ModuleDeclaration],
    criteria: SelectionCriteria,
    costs: CostTable,
    extra_types: Iterable[str] = (),
) -> PlanDatabase:
    """
    Run the pre-execution phase: select points, close over types and solve plans.

    Types whose plan problem is infeasible are recorded with the reason and are
    reconstructed from the trace.
    """
    started = time.perf_counter()
    points = select_serialization_points(list(module_declarations), criteria)
    models = closure_of_associated_types(points, registry, extra_types)

    plans = {}
    infeasible = {}
    for model in models:
        type_started = time.perf_counter()
        problem = PlanProblem.for_model(model, enumerate_actions(model), costs)
        try:
            plans[model.type_name] = assemble_plan(solve(problem), model, costs)
        except PlanInfeasibleError as e:
            infeasible[model.type_name] = e.message
            logger.info("%s is reconstructed from the trace: %s", model.type_name, e.message)
        logger.info(
            "Analyzed %s in %.2f ms",
            model.type_name,
            (time.perf_counter() - type_started) * 1000,
        )

    logger.info(
        "Pre-execution phase: %d points, %d types, %d plans in %.2f s",
        len(points),
        len(models),
        len(plans),
        time.perf_counter() - started,
    )
    return PlanDatabase(
        types={m.type_name: m for m in models},
        plans=plans,
        infeasible=infeasible,
        points=tuple(points),
    )
