"""
Synthetic corpus for round-trip verification.

Fixture types covering every reconstruction strategy, and a seeded generator
of sample objects built from them:

- structure-based: :class:`Point`, :class:`Label`, :class:`Polygon`,
  :class:`TreeNode`, :class:`Pair`
- trace-based: :class:`Tally`, :class:`Wallet`, :class:`Charset`
- mixed: :class:`Enclosure` (structure-based, holding a trace-based Tally)
- enumeration: :class:`Shade`

:func:`workload` exercises the same types through their public methods and is
the default entry point of ``plaincode record``.
"""

import codecs
import math
import random
from dataclasses import dataclass
from enum import Enum
from typing import Any, ClassVar

from pydantic import BaseModel

from .declarations import qualified_name
from .timeline import EncodingConstantAdapter

# =============================================================================
# Fixture types
# =============================================================================


class Shade(Enum):
    """Colour of a label."""

    RED = "red"
    GREEN = "green"
    BLUE = "blue"


@dataclass(frozen=True)
class Point:
    """An immutable 2-D point."""

    x: float
    y: float

    def distance_to(self, other: "Point") -> float:
        dx = self.x - other.x
        dy = self.y - other.y
        return math.hypot(dx, dy)


class Label:
    """Text with a shade."""

    text: str
    shade: Shade

    def __init__(self, text: str, shade: Shade) -> None:
        self.text = text
        self.shade = shade

    def describe(self) -> str:
        prefix = self.shade.value
        return f"{prefix}:{self.text}"


class Polygon:
    """A named polygon whose vertices are set after construction."""

    name: str
    vertices: list[Point]

    def __init__(self, name: str) -> None:
        self.name = name
        self.vertices = []

    def set_vertices(self, vertices: list[Point]) -> None:
        self.vertices = vertices

    def perimeter(self) -> float:
        total = 0.0
        ring = self.vertices[1:] + self.vertices[:1]
        for start, end in zip(self.vertices, ring):
            total += start.distance_to(end)
        return total

    def corners(self) -> list[Point]:
        """Vertices sorted by coordinates."""
        ordered = sorted(self.vertices, key=lambda p: (p.x, p.y))
        return ordered


class TreeNode:
    """A node of an integer tree."""

    value: int
    children: list["TreeNode"]

    def __init__(self, value: int, children: list["TreeNode"]) -> None:
        self.value = value
        self.children = children

    def total(self) -> int:
        result = self.value
        for child in self.children:
            result += child.total()
        return result


class Pair:
    """One half of a pair of partners; two instances may point at each other."""

    name: str
    partner: "Pair | None"

    def __init__(self, name: str, partner: "Pair | None" = None) -> None:
        self.name = name
        self.partner = partner


class Tally:
    """
    A named counter.

    The count is private and only changes through :meth:`add` and
    :meth:`reset`, so no plan can set it and tallies are replayed from the
    trace.
    """

    ZERO: ClassVar["Tally"]

    label: str
    _count: int

    def __init__(self, label: str) -> None:
        self.label = label
        self._count = 0

    def add(self, amount: int) -> None:
        self._count = self._count + amount

    def reset(self) -> None:
        self._count = 0

    def total(self) -> int:
        return self._count

    def scaled(self, factor: int) -> int:
        result = self._count * factor
        return result


Tally.ZERO = Tally("zero")


class Wallet:
    """Coins owned by a labelled holder; coins are only added by deposits."""

    owner: Label
    _coins: tuple[int, ...]

    def __init__(self, owner: Label) -> None:
        self.owner = owner
        self._coins = ()

    def deposit(self, coin: int) -> None:
        self._coins = (*self._coins, coin)

    def balance(self) -> int:
        total = sum(self._coins)
        return total


class Charset:
    """A text encoding, normalized to its canonical codec name."""

    _name: str

    def __init__(self, name: str) -> None:
        self._name = codecs.lookup(name).name

    @property
    def name(self) -> str:
        return self._name

    def describe(self, text: str) -> str:
        encoded = text.encode(self._name)
        return f"{self._name}:{len(encoded)}"


class StandardCharsets:
    """Canonical charset constants."""

    UTF_8 = Charset("utf-8")
    UTF_16 = Charset("utf-16")
    UTF_16LE = Charset("utf-16-le")
    UTF_16BE = Charset("utf-16-be")
    US_ASCII = Charset("ascii")
    ISO_8859_1 = Charset("iso8859-1")


class Enclosure:
    """A named enclosure counting its visitors with a Tally."""

    name: str
    tally: Tally

    def __init__(self, name: str, tally: Tally) -> None:
        self.name = name
        self.tally = tally

    def count_visit(self, amount: int) -> int:
        self.tally.add(amount)
        return self.tally.total()


CORPUS_TYPES: tuple[type, ...] = (
    Shade,
    Point,
    Label,
    Polygon,
    TreeNode,
    Pair,
    Tally,
    Wallet,
    Charset,
    StandardCharsets,
    Enclosure,
)
CORPUS_POINT = "plaincode.corpus:CorpusSample.value"


def charset_adapter() -> EncodingConstantAdapter:
    """Named-constant adapter mapping Charset descriptors to StandardCharsets."""
    return EncodingConstantAdapter([qualified_name(Charset)], qualified_name(StandardCharsets))


# =============================================================================
# Generator
# =============================================================================

MAX_SEQUENCE = 10
MAX_TREE_DEPTH = 4

_WORDS = ("alpha", "beta", "it's", 'say "hi"', "naïve", "line\nbreak", "", "Ωmega")
_ENCODINGS = (
    "utf8",
    "UTF-8",
    "utf_16",
    "utf-16-le",
    "utf_16_be",
    "us-ascii",
    "latin-1",
    "iso-8859-1",
    "cp1252",
)
_SHAPES = (
    "number",
    "text",
    "shade",
    "ints",
    "floats",
    "tuple",
    "words",
    "mapping",
    "point",
    "label",
    "labels",
    "polygon",
    "tree",
    "tally",
    "wallet",
    "charset",
    "enclosure",
    "constant",
)


class CorpusSample(BaseModel):
    """
    One generated value.

    Attributes:
        value: The object or value to round-trip.
        shape: Generator shape that produced it.
        over_bound: True iff a sequence in it exceeds the capture bound.
    """

    value: Any
    shape: str
    over_bound: bool = False

    model_config = {"arbitrary_types_allowed": True}


class CorpusGenerator:
    """Deterministic sample factory; one instance per run."""

    def __init__(self, seed: int, bound: int = 25, cycles: bool = False) -> None:
        self.rng = random.Random(seed)
        self.bound = bound
        self.shapes = _SHAPES + (("pair",) if cycles else ())

    def word(self) -> str:
        return self.rng.choice(_WORDS)

    def number(self) -> float | int | bool:
        pick = self.rng.randrange(6)
        if pick == 0:
            return self.rng.randint(-1000, 1000)
        if pick == 1:
            return self.rng.random() < 0.5
        if pick == 2:
            return self.rng.choice((math.inf, -math.inf, -0.0, 0.1, 1e300))
        return self.rng.uniform(-100.0, 100.0)

    def shade(self) -> Shade:
        return self.rng.choice(list(Shade))

    def point(self) -> Point:
        return Point(round(self.rng.uniform(-50, 50), 3), round(self.rng.uniform(-50, 50), 3))

    def label(self) -> Label:
        return Label(self.word(), self.shade())

    def polygon(self) -> Polygon:
        polygon = Polygon(self.word())
        if self.rng.random() < 0.8:
            polygon.set_vertices([self.point() for _ in range(self.rng.randint(0, MAX_SEQUENCE))])
        return polygon

    def tree(self, depth: int = 1) -> TreeNode:
        width = 0 if depth >= MAX_TREE_DEPTH else self.rng.randint(0, 3)
        return TreeNode(self.rng.randint(0, 99), [self.tree(depth + 1) for _ in range(width)])

    def tally(self) -> Tally:
        tally = Tally(self.word())
        for _ in range(self.rng.randint(0, 4)):
            step = self.rng.randrange(4)
            if step == 0:
                tally.reset()
            elif step == 1:
                tally.total()
            else:
                tally.add(self.rng.randint(-5, 20))
        return tally

    def wallet(self) -> Wallet:
        wallet = Wallet(self.label())
        for _ in range(self.rng.randint(0, 5)):
            wallet.deposit(self.rng.choice((1, 2, 5, 10, 20)))
            if self.rng.random() < 0.3:
                wallet.balance()
        return wallet

    def sample(self, over_bound_rate: float = 0.0) -> CorpusSample:
        if self.rng.random() < over_bound_rate:
            length = self.bound + 1 + self.rng.randint(0, 9)
            return CorpusSample(
                value=[self.rng.randint(0, 9) for _ in range(length)],
                shape="ints",
                over_bound=True,
            )
        shape = self.rng.choice(self.shapes)
        return CorpusSample(value=self._build(shape), shape=shape)

    def _build(self, shape: str) -> Any:
        rng = self.rng
        size = rng.randint(0, MAX_SEQUENCE)
        if shape == "number":
            return self.number()
        if shape == "text":
            return self.word()
        if shape == "shade":
            return self.shade()
        if shape == "ints":
            return [rng.randint(-9, 9) for _ in range(size)]
        if shape == "floats":
            return [round(rng.uniform(0, 1), 4) for _ in range(size)]
        if shape == "tuple":
            return tuple(self.number() for _ in range(size))
        if shape == "words":
            return {self.word() for _ in range(size)}
        if shape == "mapping":
            return {self.word(): rng.randint(0, 9) for _ in range(size)}
        if shape == "point":
            return self.point()
        if shape == "label":
            return self.label()
        if shape == "labels":
            return [self.label() if rng.random() < 0.5 else self.point() for _ in range(size)]
        if shape == "polygon":
            return self.polygon()
        if shape == "tree":
            return self.tree()
        if shape == "tally":
            return self.tally()
        if shape == "wallet":
            return self.wallet()
        if shape == "charset":
            return Charset(rng.choice(_ENCODINGS))
        if shape == "enclosure":
            tally = Tally.ZERO if rng.random() < 0.2 else self.tally()
            return Enclosure(self.word(), tally)
        if shape == "constant":
            return Tally.ZERO
        if shape == "pair":
            first = Pair(self.word())
            second = Pair(self.word(), first)
            first.partner = second
            return first
        raise ValueError(f"Unknown corpus shape {shape!r}")


def generate_corpus(
    seed: int,
    size: int,
    bound: int = 25,
    over_bound_rate: float = 0.0,
    cycles: bool = False,
) -> list[CorpusSample]:
    """
    Generate ``size`` samples deterministically from ``seed``.

    Trace-based samples are only reconstructible when generated while a
    recorder traces their classes.

    Args:
        seed: Random seed.
        size: Number of samples.
        bound: Capture bound that over-bound sequences exceed.
        over_bound_rate: Probability of a sample being an over-bound sequence.
        cycles: Include pairs of mutually referencing objects.
    """
    generator = CorpusGenerator(seed, bound, cycles)
    return [generator.sample(over_bound_rate) for _ in range(size)]


# =============================================================================
# Workload
# =============================================================================


def workload(seed: int = 7, rounds: int = 5) -> None:
    """
    Exercise the corpus types through their public methods.

    Used as the entry point of ``plaincode record`` on the corpus.
    """
    generator = CorpusGenerator(seed)
    for _ in range(rounds):
        generator.point().distance_to(generator.point())
        generator.label().describe()
        polygon = generator.polygon()
        polygon.perimeter()
        polygon.corners()
        generator.tree().total()
        tally = generator.tally()
        tally.scaled(generator.rng.randint(1, 4))
        wallet = generator.wallet()
        wallet.balance()
        Charset(generator.rng.choice(_ENCODINGS)).describe(generator.word())
        Enclosure(generator.word(), generator.tally()).count_visit(generator.rng.randint(1, 5))

