"""
Unit tests for Python rendering.

These tests verify import aliasing, exact literal rendering, expression and
assertion forms, and the layout of reconstruction and test modules.
"""

import math

import pytest

from plaincode.emitter import (
    AssertStatement,
    AssignStatement,
    BindStatement,
    CallExpr,
    CallStatement,
    CollectionExpr,
    ConstantExpr,
    EmissionUnit,
    Helper,
    HelperCallExpr,
    LiteralExpr,
    NameExpr,
    PlaceholderExpr,
    Section,
)
from plaincode.models import NULL, PrimitiveLiteral, Text
from plaincode.render import (
    HARNESS_IMPORT,
    ImportTable,
    PythonRenderer,
    render_literal,
    render_reconstruction,
    render_test_module,
)

# =============================================================================
# Fixtures
# =============================================================================


def _lit(value: bool | int | float) -> LiteralExpr:
    return LiteralExpr(value=PrimitiveLiteral(value=value))


def _new_page(section: Section = Section.ARRANGE) -> BindStatement:
    return BindStatement(
        target="page",
        value=CallExpr(callee="__init__", owner_type="geo:Page", kwargs=(("width", _lit(2)),)),
        section=section,
    )


@pytest.fixture
def renderer() -> PythonRenderer:
    """A renderer with an empty import table."""
    return PythonRenderer(ImportTable())


# =============================================================================
# Import Tests
# =============================================================================


class TestImportTable:
    """Tests for ImportTable."""

    def test_builtins_not_imported(self) -> None:
        """Test that builtin types are referenced bare."""
        imports = ImportTable()
        assert imports.reference("builtins:int") == "int"
        assert imports.reference("str") == "str"
        assert imports.render() == []

    def test_nested_class_imports_outer(self) -> None:
        """Test that nested classes are reached through their outer class."""
        imports = ImportTable()
        assert imports.reference("a.b:Outer.Inner") == "Outer.Inner"
        assert imports.render() == ["from a.b import Outer"]

    def test_clash_with_local(self) -> None:
        """Test that a name clashing with a local gets a suffix."""
        imports = ImportTable(["Point"])
        assert imports.reference("geo:Point") == "Point_2"
        assert imports.render() == ["from geo import Point as Point_2"]

    def test_clash_between_modules(self) -> None:
        """Test that same-named classes of two modules both get imported."""
        imports = ImportTable()
        assert imports.reference("a:Point") == "Point"
        assert imports.reference("b:Point") == "Point_2"
        assert imports.reference("a:Point") == "Point"
        assert imports.render() == ["from a import Point", "from b import Point as Point_2"]

    def test_math_first(self) -> None:
        """Test that the math import precedes sorted from-imports."""
        imports = ImportTable()
        imports.reference("geo:Point")
        imports.require(HARNESS_IMPORT)
        imports.needs_math = True
        assert imports.render() == ["import math", "from geo import Point", HARNESS_IMPORT]


# =============================================================================
# Literal Tests
# =============================================================================


class TestRenderLiteral:
    """Tests for render_literal."""

    @pytest.mark.parametrize(
        "value,expected",
        [
            (PrimitiveLiteral(value=3), "3"),
            (PrimitiveLiteral(value=True), "True"),
            (PrimitiveLiteral(value=-0.0), "-0.0"),
            (PrimitiveLiteral(value=0.1), "0.1"),
            (PrimitiveLiteral(value=1e300), "1e+300"),
            (PrimitiveLiteral(value=2, type_name="float"), "2.0"),
            (Text(value="it's"), '"it\'s"'),
            (Text(value="line\nbreak"), "'line\\nbreak'"),
            (NULL, "None"),
        ],
    )
    def test_finite_values(self, value, expected: str) -> None:
        """Test that literals render to exact source text."""
        imports = ImportTable()
        assert render_literal(value, imports) == expected
        assert not imports.needs_math

    @pytest.mark.parametrize(
        "raw,expected",
        [(math.nan, "math.nan"), (math.inf, "math.inf"), (-math.inf, "-math.inf")],
    )
    def test_non_finite_values(self, raw: float, expected: str) -> None:
        """Test that non-finite floats go through the math module."""
        imports = ImportTable()
        assert render_literal(PrimitiveLiteral(value=raw), imports) == expected
        assert imports.needs_math

    def test_round_trip_through_eval(self) -> None:
        """Test that rendered floats evaluate back to the same value."""
        for raw in (0.1, 1 / 3, 1e-310, 123456789.123456789):
            text = render_literal(PrimitiveLiteral(value=raw), ImportTable())
            assert float(text) == raw


# =============================================================================
# Expression Tests
# =============================================================================


class TestExpressions:
    """Tests for PythonRenderer.expr."""

    def test_constructor_call(self, renderer: PythonRenderer) -> None:
        """Test positional and keyword constructor arguments."""
        expr = CallExpr(
            callee="__init__",
            owner_type="geo:Point",
            args=(_lit(1),),
            kwargs=(("y", _lit(2)),),
        )
        assert renderer.expr(expr) == "Point(1, y=2)"

    def test_factory_and_method_calls(self, renderer: PythonRenderer) -> None:
        """Test class-level and receiver calls."""
        factory = CallExpr(callee="of", owner_type="m:Colors")
        method = CallExpr(callee="scaled", receiver=NameExpr(name="p"), args=(_lit(2),))
        assert renderer.expr(factory) == "Colors.of()"
        assert renderer.expr(method) == "p.scaled(2)"

    def test_constant_and_helper(self, renderer: PythonRenderer) -> None:
        """Test constant reads and helper calls."""
        assert renderer.expr(ConstantExpr(owner_type="m:Shade", member="RED")) == "Shade.RED"
        assert renderer.expr(HelperCallExpr(helper="create_point")) == "create_point()"

    @pytest.mark.parametrize(
        "expr,expected",
        [
            (CollectionExpr(elements=(_lit(1), _lit(2))), "[1, 2]"),
            (CollectionExpr(container="tuple", elements=(_lit(1),)), "(1,)"),
            (CollectionExpr(container="tuple"), "()"),
            (CollectionExpr(container="set"), "set()"),
            (CollectionExpr(container="set", elements=(_lit(1),)), "{1}"),
            (CollectionExpr(container="frozenset"), "frozenset()"),
            (CollectionExpr(container="frozenset", elements=(_lit(1),)), "frozenset({1})"),
            (
                CollectionExpr(
                    container="dict", entries=((LiteralExpr(value=Text(value="k")), _lit(1)),)
                ),
                "{'k': 1}",
            ),
            (CollectionExpr(container="dict"), "{}"),
        ],
    )
    def test_collections(self, renderer: PythonRenderer, expr, expected: str) -> None:
        """Test every container display."""
        assert renderer.expr(expr) == expected

    def test_placeholder_never_compiles(self, renderer: PythonRenderer) -> None:
        """Test that placeholders render as invalid syntax."""
        text = renderer.expr(PlaceholderExpr(reference="3@1"))
        assert text == "<<unresolved 3@1>>"
        with pytest.raises(SyntaxError):
            compile(text, "<placeholder>", "eval")


# =============================================================================
# Statement Tests
# =============================================================================


class TestStatements:
    """Tests for statements and assertion forms."""

    def test_assign_and_call(self, renderer: PythonRenderer) -> None:
        """Test field writes and bare calls."""
        assign = AssignStatement(target="p", field="x", value=_lit(1))
        call = CallStatement(call=CallExpr(callee="reset", receiver=NameExpr(name="p")))
        assert renderer.statement(assign) == "p.x = 1"
        assert renderer.statement(call) == "p.reset()"

    def test_assert_forms(self, renderer: PythonRenderer) -> None:
        """Test identity, NaN and equality assertions."""
        result = NameExpr(name="result")
        assert (
            renderer.statement(AssertStatement(actual=result, expected=LiteralExpr(value=NULL)))
            == "assert result is None"
        )
        assert (
            renderer.statement(AssertStatement(actual=result, expected=_lit(False)))
            == "assert result is False"
        )
        assert renderer.statement(AssertStatement(actual=result, expected=_lit(3))) == (
            "assert result == 3"
        )
        assert renderer.statement(AssertStatement(actual=result, expected=_lit(math.nan))) == (
            "assert math.isnan(result)"
        )
        assert renderer.imports.needs_math

    def test_deep_assert(self, renderer: PythonRenderer) -> None:
        """Test that deep assertions import the harness comparison."""
        statement = AssertStatement(
            actual=NameExpr(name="result"),
            expected=NameExpr(name="expected"),
            deep=True,
            tolerance=1e-06,
        )
        assert renderer.statement(statement) == (
            "assert_deep_equals(result, expected, float_tolerance=1e-06)"
        )
        assert HARNESS_IMPORT in renderer.imports.render()

    def test_body_sections(self, renderer: PythonRenderer) -> None:
        """Test that section comments head each Arrange/Act/Assert block."""
        statements = [
            BindStatement(target="a", value=_lit(1)),
            BindStatement(
                target="result",
                value=CallExpr(callee="double", receiver=NameExpr(name="a")),
                section=Section.ACT,
            ),
            AssertStatement(actual=NameExpr(name="result"), expected=_lit(2)),
        ]
        assert renderer.body(statements, sections=True) == [
            "    # Arrange",
            "    a = 1",
            "",
            "    # Act",
            "    result = a.double()",
            "",
            "    # Assert",
            "    assert result == 2",
        ]


# =============================================================================
# Module Tests
# =============================================================================


class TestRenderReconstruction:
    """Tests for render_reconstruction."""

    def test_object_module(self) -> None:
        """Test the layout of a reconstruction module."""
        unit = EmissionUnit(
            statements=(
                _new_page(),
                AssignStatement(target="page", field="height", value=_lit(3)),
            ),
            root=NameExpr(name="page"),
            root_type="geo:Page",
        )
        assert render_reconstruction(unit) == (
            '"""Reconstruction of a captured Page."""\n'
            "\n"
            "from geo import Page\n"
            "\n"
            "\n"
            "def reconstruct():\n"
            "    page = Page(width=2)\n"
            "    page.height = 3\n"
            "    return page\n"
        )

    def test_primitive_module(self) -> None:
        """Test a module returning a non-finite float."""
        unit = EmissionUnit(root=_lit(math.nan))
        assert render_reconstruction(unit) == (
            '"""Reconstruction of a captured value."""\n'
            "\n"
            "import math\n"
            "\n"
            "\n"
            "def reconstruct():\n"
            "    return math.nan\n"
        )

    def test_helpers_rendered_first(self) -> None:
        """Test that helpers precede reconstruct() and compile."""
        helper = Helper(
            name="create_page",
            type_name="geo:Page",
            statements=(_new_page(),),
            result=NameExpr(name="page"),
        )
        unit = EmissionUnit(
            statements=(BindStatement(target="page", value=HelperCallExpr(helper="create_page")),),
            root=NameExpr(name="page"),
            helpers=(helper,),
            root_type="geo:Page",
        )
        text = render_reconstruction(unit, docstring="Custom.")
        assert text.startswith('"""Custom."""')
        assert text.index("def create_page() -> Page:") < text.index("def reconstruct():")
        compile(text, "<reconstruction>", "exec")


class TestRenderTestModule:
    """Tests for render_test_module."""

    def test_layout(self) -> None:
        """Test the layout of a generated test module."""
        statements = [
            _new_page(),
            BindStatement(
                target="result",
                value=CallExpr(callee="area", receiver=NameExpr(name="page")),
                section=Section.ACT,
            ),
            AssertStatement(actual=NameExpr(name="result"), expected=_lit(4)),
        ]
        text = render_test_module("geo:Page", [("test_area", statements)])
        assert text == (
            '"""Generated tests for Page, captured from a recorded run."""\n'
            "\n"
            "from geo import Page\n"
            "\n"
            "\n"
            "def test_area() -> None:\n"
            "    # Arrange\n"
            "    page = Page(width=2)\n"
            "\n"
            "    # Act\n"
            "    result = page.area()\n"
            "\n"
            "    # Assert\n"
            "    assert result == 4\n"
        )

    def test_empty_test_passes(self) -> None:
        """Test that a test without statements renders a pass body."""
        text = render_test_module("geo:Page", [("test_nothing", [])])
        assert "def test_nothing() -> None:\n    pass\n" in text

    def test_deterministic(self) -> None:
        """Test that rendering is byte-identical across calls."""
        tests = [("test_area", [_new_page()]), ("test_area_1", [_new_page()])]
        assert render_test_module("geo:Page", tests) == render_test_module("geo:Page", tests)
