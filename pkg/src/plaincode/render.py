"""
Python backend for emission units.

Renders the abstract statements of :mod:`plaincode.emitter` as Python source:
reconstruction modules (a ``reconstruct()`` function returning the object) and
pytest modules of Arrange-Act-Assert tests. Output depends only on the units,
so identical units render to byte-identical text.
"""

import logging
import math
from collections.abc import Callable, Iterable, Sequence

from .emitter import (
    AssertStatement,
    AssignStatement,
    BindStatement,
    CallExpr,
    CallStatement,
    CollectionExpr,
    ConstantExpr,
    EmissionUnit,
    Expr,
    Helper,
    HelperCallExpr,
    LiteralExpr,
    NameExpr,
    PlaceholderExpr,
    Section,
    Statement,
    statement_binds,
)
from .models import NullValue, PrimitiveLiteral, Text, short_type_name, split_type_name

logger = logging.getLogger(__name__)

INDENT = "    "
HARNESS_IMPORT = "from plaincode.harness import assert_deep_equals"
RECONSTRUCT_FUNCTION = "reconstruct"

_SECTION_TITLES = {
    Section.ARRANGE: "# Arrange",
    Section.ACT: "# Act",
    Section.ASSERT: "# Assert",
}


# =============================================================================
# Imports
# =============================================================================


class ImportTable:
    """
    Imports needed by one rendered module.

    Classes are imported by their outermost name; nested classes are reached
    through it (``Outer.Inner``). An imported name that clashes with a local
    or with another import gets ``_2``, ``_3`` appended.
    """

    def __init__(self, reserved: Iterable[str] = ()) -> None:
        self._taken: set[str] = set(reserved)
        self._aliases: dict[tuple[str, str], str] = {}
        self._extra: set[str] = set()
        self.needs_math = False

    def reference(self, type_name: str) -> str:
        """Return the expression naming a type, importing it if needed."""
        module, qualname = split_type_name(type_name)
        if module is None or module == "builtins":
            return qualname
        outer, _, nested = qualname.partition(".")
        key = (module, outer)
        alias = self._aliases.get(key)
        if alias is None:
            alias = outer
            counter = 2
            while alias in self._taken:
                alias = f"{outer}_{counter}"
                counter += 1
            self._taken.add(alias)
            self._aliases[key] = alias
        return f"{alias}.{nested}" if nested else alias

    def require(self, line: str) -> None:
        """Add a verbatim import line."""
        self._extra.add(line)

    def render(self) -> list[str]:
        """Import lines: ``import math`` first, then sorted ``from`` imports."""
        lines = ["import math"] if self.needs_math else []
        from_lines = set(self._extra)
        for (module, name), alias in self._aliases.items():
            suffix = f" as {alias}" if alias != name else ""
            from_lines.add(f"from {module} import {name}{suffix}")
        lines.extend(sorted(from_lines))
        return lines


# =============================================================================
# Expressions and statements
# =============================================================================


def render_literal(value: PrimitiveLiteral | Text | NullValue, imports: ImportTable) -> str:
    """Render a literal so that evaluating it yields the captured value exactly."""
    if isinstance(value, NullValue):
        return "None"
    if isinstance(value, Text):
        return repr(value.value)
    raw = value.value
    if isinstance(raw, bool):
        return "True" if raw else "False"
    if value.type_name == "float" or isinstance(raw, float):
        number = float(raw)
        if math.isnan(number):
            imports.needs_math = True
            return "math.nan"
        if math.isinf(number):
            imports.needs_math = True
            return "math.inf" if number > 0 else "-math.inf"
        return repr(number)
    return repr(raw)


class PythonRenderer:
    """Renders expressions and statements against one import table."""

    def __init__(self, imports: ImportTable) -> None:
        self.imports = imports
        self._expressions: dict[str, Callable[[Expr], str]] = {
            "literal": self._literal,
            "name": self._name,
            "constant": self._constant,
            "call": self._call,
            "helper": self._helper,
            "collection": self._collection,
            "placeholder": self._placeholder,
        }

    def expr(self, expr: Expr) -> str:
        """Render one expression."""
        return self._expressions[expr.kind](expr)

    def statement(self, statement: Statement) -> str:
        """Render one statement as a single line (no indentation)."""
        if isinstance(statement, BindStatement):
            return f"{statement.target} = {self.expr(statement.value)}"
        if isinstance(statement, AssignStatement):
            return f"{statement.target}.{statement.field} = {self.expr(statement.value)}"
        if isinstance(statement, CallStatement):
            return self.expr(statement.call)
        return self._assertion(statement)

    def body(
        self, statements: Sequence[Statement], indent: str = INDENT, sections: bool = False
    ) -> list[str]:
        """Render a statement block, optionally headed by section comments."""
        lines: list[str] = []
        current: Section | None = None
        for statement in statements:
            if sections and statement.section != current:
                if current is not None:
                    lines.append("")
                lines.append(indent + _SECTION_TITLES[statement.section])
                current = statement.section
            lines.append(indent + self.statement(statement))
        return lines

    def _literal(self, expr: Expr) -> str:
        assert isinstance(expr, LiteralExpr)
        return render_literal(expr.value, self.imports)

    def _name(self, expr: Expr) -> str:
        assert isinstance(expr, NameExpr)
        return expr.name

    def _constant(self, expr: Expr) -> str:
        assert isinstance(expr, ConstantExpr)
        return f"{self.imports.reference(expr.owner_type)}.{expr.member}"

    def _call(self, expr: Expr) -> str:
        assert isinstance(expr, CallExpr)
        parts = [self.expr(a) for a in expr.args]
        parts.extend(f"{k}={self.expr(v)}" for k, v in expr.kwargs)
        arguments = ", ".join(parts)
        if expr.receiver is not None:
            return f"{self.expr(expr.receiver)}.{expr.callee}({arguments})"
        owner = self.imports.reference(expr.owner_type or "object")
        if expr.callee == "__init__":
            return f"{owner}({arguments})"
        return f"{owner}.{expr.callee}({arguments})"

    def _helper(self, expr: Expr) -> str:
        assert isinstance(expr, HelperCallExpr)
        return f"{expr.helper}()"

    def _collection(self, expr: Expr) -> str:
        assert isinstance(expr, CollectionExpr)
        if expr.container == "dict":
            items = ", ".join(f"{self.expr(k)}: {self.expr(v)}" for k, v in expr.entries)
            return f"{{{items}}}"
        elements = [self.expr(e) for e in expr.elements]
        joined = ", ".join(elements)
        if expr.container == "list":
            return f"[{joined}]"
        if expr.container == "tuple":
            return f"({joined},)" if len(elements) == 1 else f"({joined})"
        if expr.container == "set":
            return f"{{{joined}}}" if elements else "set()"
        return f"frozenset({{{joined}}})" if elements else "frozenset()"

    def _placeholder(self, expr: Expr) -> str:
        assert isinstance(expr, PlaceholderExpr)
        return f"<<unresolved {expr.reference}>>"

    def _assertion(self, statement: AssertStatement) -> str:
        actual = self.expr(statement.actual)
        expected = statement.expected
        if statement.deep:
            self.imports.require(HARNESS_IMPORT)
            tolerance = (
                f", float_tolerance={statement.tolerance!r}"
                if statement.tolerance is not None
                else ""
            )
            return f"assert_deep_equals({actual}, {self.expr(expected)}{tolerance})"
        if isinstance(expected, LiteralExpr):
            value = expected.value
            if isinstance(value, NullValue):
                return f"assert {actual} is None"
            if isinstance(value, PrimitiveLiteral):
                if isinstance(value.value, bool):
                    return f"assert {actual} is {value.value}"
                if isinstance(value.value, float) and math.isnan(value.value):
                    self.imports.needs_math = True
                    return f"assert math.isnan({actual})"
        return f"assert {actual} == {self.expr(expected)}"


# =============================================================================
# Modules
# =============================================================================


def _bound_names(statements: Iterable[Statement]) -> set[str]:
    return {name for s in statements if (name := statement_binds(s)) is not None}


def _unit_names(unit: EmissionUnit) -> set[str]:
    names = _bound_names(unit.statements)
    for helper in unit.helpers:
        names.add(helper.name)
        names.update(_bound_names(helper.statements))
    return names


def render_helper(helper: Helper, renderer: PythonRenderer) -> list[str]:
    """Render a helper routine as a module-level function."""
    returns = renderer.imports.reference(helper.type_name)
    lines = [f"def {helper.name}() -> {returns}:"]
    lines.extend(renderer.body(helper.statements))
    lines.append(f"{INDENT}return {renderer.expr(helper.result)}")
    return lines


def _assemble(docstring: str, imports: ImportTable, blocks: list[list[str]]) -> str:
    lines = [f'"""{docstring}"""', ""]
    import_lines = imports.render()
    if import_lines:
        lines.extend(import_lines)
        lines.append("")
    for block in blocks:
        lines.append("")
        lines.extend(block)
        lines.append("")
    while lines and lines[-1] == "":
        lines.pop()
    return "\n".join(lines) + "\n"


def render_reconstruction(unit: EmissionUnit, docstring: str | None = None) -> str:
    """
    Render a unit as a module whose ``reconstruct()`` returns the object.

    Args:
        unit: The emission unit.
        docstring: Module docstring; defaults to one naming the root type.

    Returns:
        Python source text.
    """
    imports = ImportTable(_unit_names(unit) | {RECONSTRUCT_FUNCTION, "math"})
    renderer = PythonRenderer(imports)
    blocks = [render_helper(h, renderer) for h in unit.helpers]
    function = [f"def {RECONSTRUCT_FUNCTION}():"]
    function.extend(renderer.body(unit.statements))
    function.append(f"{INDENT}return {renderer.expr(unit.root)}")
    blocks.append(function)
    subject = short_type_name(unit.root_type) if unit.root_type else "value"
    return _assemble(docstring or f"Reconstruction of a captured {subject}.", imports, blocks)


def render_test_module(
    owner_type: str,
    tests: Sequence[tuple[str, Sequence[Statement]]],
    helpers: Sequence[Helper] = (),
) -> str:
    """
    Render the generated tests of one method-under-test owner as a pytest module.

    Args:
        owner_type: Type declaring the methods under test.
        tests: ``(test name, statements)`` pairs in file order; statements
            carry their Arrange/Act/Assert section.
        helpers: Helper routines, already in first-use order.

    Returns:
        Python source text.
    """
    reserved = {name for name, _ in tests} | {h.name for h in helpers} | {"math"}
    for _, statements in tests:
        reserved |= _bound_names(statements)
    for helper in helpers:
        reserved |= _bound_names(helper.statements)
    imports = ImportTable(reserved)
    renderer = PythonRenderer(imports)

    blocks = [render_helper(h, renderer) for h in helpers]
    for name, statements in tests:
        function = [f"def {name}() -> None:"]
        function.extend(renderer.body(statements, sections=True) or [f"{INDENT}pass"])
        blocks.append(function)
    logger.debug("Rendered %d tests for %s", len(tests), owner_type)
    return _assemble(
        f"Generated tests for {short_type_name(owner_type)}, captured from a recorded run.",
        imports,
        blocks,
    )
