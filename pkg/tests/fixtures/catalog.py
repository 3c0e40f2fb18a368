"""
Declaration shapes for analyzer and solver tests.

Each class exercises one way a type can (or cannot) be rebuilt:

- ``Page``: constructor, a setter and a plain assignment.
- ``Color``: a constructor covering every field and a factory covering one.
- ``Handle``: a constructor that cannot be called, so the factory is used.
- ``Temperature``: a private field set by the constructor.
- ``Gauge``: a private field only a declared setter can set.
- ``Sealed``: a private field nothing sets.
- ``PDColor``: built component by component, so it is replayed from its trace.
- ``Catalog``: a class without ``__init__`` whose constants are instances.
"""

import abc
import logging
from dataclasses import dataclass
from enum import Enum

from plaincode import setter

logger = logging.getLogger(__name__)


class Orientation(Enum):
    """Page orientation."""

    PORTRAIT = "portrait"
    LANDSCAPE = "landscape"


class Page:
    """A page with an orientation and a size."""

    width: int
    height: int
    orientation: Orientation

    def __init__(self, orientation: Orientation) -> None:
        self.orientation = orientation
        self.width = 0
        self.height = 0

    def set_width(self, width: int) -> None:
        self.width = width

    def align_orientation(self, width: int, height: int) -> Orientation:
        landscape = width > height
        return Orientation.LANDSCAPE if landscape else Orientation.PORTRAIT

    def _margin(self) -> int:
        inner = self.width // 10
        return inner

    @staticmethod
    def ratio(width: int, height: int) -> float:
        value = width / height
        return value


class Color:
    """An RGB colour."""

    red: int
    green: int
    blue: int

    def __init__(self, red: int, green: int, blue: int) -> None:
        self.red = red
        self.green = green
        self.blue = blue

    @classmethod
    def grey(cls, level: int) -> "Color":
        return cls(level, level, level)


class Handle:
    """A named resource; only :meth:`open` binds every constructor argument."""

    path: str

    def __init__(self, path: str, verbose: bool) -> None:
        if verbose:
            logger.debug("Opening %s", path)
        self.path = path

    @classmethod
    def open(cls, path: str) -> "Handle":
        return cls(path, False)


class Temperature:
    """A temperature in kelvin."""

    _kelvin: float

    def __init__(self, kelvin: float) -> None:
        self._kelvin = kelvin


class Gauge:
    """A gauge whose level is clamped by :meth:`calibrate`."""

    _level: int

    def __init__(self) -> None:
        self._level = 0

    @setter("_level", value="_level")
    def calibrate(self, value: int) -> None:
        self._level = max(0, value)


class Sealed:
    """Holds a token no callable exposes."""

    _token: str

    def __init__(self) -> None:
        self._token = "sealed"


class PDColor:
    """A colour in a named colour space, built component by component."""

    space: str
    _components: list[float]

    def __init__(self, space: str) -> None:
        self.space = space
        self._components = []

    def add_component(self, value: float) -> None:
        self._components = [*self._components, value]

    def get_components(self) -> list[float]:
        components = list(self._components)
        return components


class Shape(abc.ABC):
    """An abstract shape."""

    @abc.abstractmethod
    def area(self) -> float:
        total = 0.0
        return total


@dataclass
class Size:
    """A width and height pair."""

    width: int
    height: int

    def scaled(self, factor: int) -> "Size":
        width = self.width * factor
        return Size(width, self.height * factor)


@dataclass(frozen=True)
class Margin:
    """An immutable margin."""

    top: int
    bottom: int


class Catalog:
    """Named pages."""

    STANDARD: "Catalog"
    LEGAL: "Catalog"

    def count(self) -> int:
        pages = 0
        return pages


Catalog.STANDARD = Catalog()
Catalog.LEGAL = Catalog()


class _Internal:
    """A private helper class."""

    def compute(self) -> int:
        value = 1
        return value
