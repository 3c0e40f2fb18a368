"""
Instrumentation of Python classes.

Wraps ``__init__``, public methods and ``__setattr__`` of traced classes so
they report to a :class:`~plaincode.recorder.Recorder`, and wraps serialization
points so their receiver, arguments and return value are captured. Every
change is undone when the returned handle is restored.
"""

import functools
import importlib
import inspect
import logging
from collections.abc import Iterable
from typing import Any

from .declarations import qualified_name
from .exceptions import AnalysisError
from .models import StaticFieldEntry, split_type_name
from .recorder import Recorder

logger = logging.getLogger(__name__)

_MISSING = object()


def resolve_class(type_name: str) -> type:
    """
    Import the class named by a ``module:QualName`` type name.

    Raises:
        AnalysisError: If the module or class cannot be found.
    """
    module_name, qualname = split_type_name(type_name)
    if module_name is None:
        raise AnalysisError(f"Not a qualified type name: '{type_name}'", type_name)
    try:
        target: Any = importlib.import_module(module_name)
        for part in qualname.split("."):
            target = getattr(target, part)
    except (ImportError, AttributeError) as e:
        raise AnalysisError(f"Cannot resolve '{type_name}': {e}", type_name) from e
    if not inspect.isclass(target):
        raise AnalysisError(f"'{type_name}' is not a class", type_name)
    return target


def resolve_point(point_id: str) -> tuple[type, str]:
    """Split a serialization point id into its class and method name."""
    owner, _, method = point_id.rpartition(".")
    cls = resolve_class(owner)
    if not callable(getattr(cls, method, None)):
        raise AnalysisError(f"Unknown serialization point '{point_id}'", owner)
    return cls, method


def _split_arguments(
    signature: inspect.Signature, receiver: Any, args: tuple[Any, ...], kwargs: dict[str, Any]
) -> tuple[list[Any], list[str], dict[str, Any]]:
    """Normalize a call into positional values with names, and keyword-only values."""
    try:
        bound = signature.bind(receiver, *args, **kwargs)
    except TypeError:
        return list(args), [], dict(kwargs)
    positional: list[Any] = []
    names: list[str] = []
    keywords: dict[str, Any] = {}
    for index, (name, value) in enumerate(bound.arguments.items()):
        if index == 0:
            continue
        kind = signature.parameters[name].kind
        if kind == inspect.Parameter.VAR_POSITIONAL:
            positional.extend(value)
            names.extend(f"{name}{i}" for i in range(len(value)))
        elif kind == inspect.Parameter.VAR_KEYWORD:
            keywords.update(value)
        elif kind == inspect.Parameter.KEYWORD_ONLY:
            keywords[name] = value
        else:
            positional.append(value)
            names.append(name)
    return positional, names, keywords


class Instrumentation:
    """
    Handle over the wrapped members of instrumented classes.

    Use as a context manager, or call :meth:`restore` explicitly.
    """

    def __init__(self, recorder: Recorder) -> None:
        self.recorder = recorder
        self.static_entries: list[StaticFieldEntry] = []
        self._saved: list[tuple[type, str, Any]] = []

    def _replace(self, cls: type, name: str, value: Any) -> None:
        self._saved.append((cls, name, cls.__dict__.get(name, _MISSING)))
        setattr(cls, name, value)

    def restore(self) -> None:
        """Put back every original member, newest first."""
        while self._saved:
            cls, name, original = self._saved.pop()
            if original is _MISSING:
                delattr(cls, name)
            else:
                setattr(cls, name, original)

    def __enter__(self) -> "Instrumentation":
        return self

    def __exit__(self, *args: Any) -> None:
        self.restore()

    # -------------------------------------------------------------------------
    # Traced classes
    # -------------------------------------------------------------------------

    def trace_class(self, cls: type) -> None:
        """Wrap constructor, public methods and field writes of a class."""
        recorder = self.recorder
        type_name = qualified_name(cls)

        original_init = cls.__init__
        init_signature = inspect.signature(original_init)

        @functools.wraps(original_init)
        def __init__(obj: Any, *args: Any, **kwargs: Any) -> None:
            if type(obj) is not cls or not recorder.active or recorder.is_registered(obj):
                original_init(obj, *args, **kwargs)
                return
            start = recorder.begin_construct()
            positional, names, keywords = _split_arguments(init_signature, obj, args, kwargs)
            captured, captured_kwargs, plans = recorder.capture_arguments(positional, keywords)
            original_init(obj, *args, **kwargs)
            recorder.record_construct(
                obj,
                type_name,
                "__init__",
                args=captured,
                kwargs=captured_kwargs,
                arg_names=names,
                start_time=start,
                embedded_plans=plans,
            )

        self._replace(cls, "__init__", __init__)

        for name, member in list(vars(cls).items()):
            if name.startswith("_") or not inspect.isfunction(member):
                continue
            self._replace(cls, name, self._method_wrapper(cls, name, member))

        base_setattr = cls.__dict__.get("__setattr__")

        def __setattr__(obj: Any, field_name: str, value: Any) -> None:
            receiver_id = recorder.object_id_of(obj)
            if receiver_id is None or not recorder.active:
                if base_setattr is not None:
                    base_setattr(obj, field_name, value)
                else:
                    super(cls, obj).__setattr__(field_name, value)  # type: ignore[misc]
                return
            old = getattr(obj, field_name, None)
            if base_setattr is not None:
                base_setattr(obj, field_name, value)
            else:
                super(cls, obj).__setattr__(field_name, value)  # type: ignore[misc]
            recorder.record_field_set(receiver_id, field_name, old, value)

        self._replace(cls, "__setattr__", __setattr__)
        logger.debug("Tracing %s", type_name)

    def _method_wrapper(self, cls: type, name: str, original: Any) -> Any:
        recorder = self.recorder
        qualified = f"{qualified_name(cls)}.{name}"
        signature = inspect.signature(original)

        @functools.wraps(original)
        def method(obj: Any, *args: Any, **kwargs: Any) -> Any:
            receiver_id = recorder.object_id_of(obj)
            if receiver_id is None or not recorder.active:
                return original(obj, *args, **kwargs)
            positional, names, keywords = _split_arguments(signature, obj, args, kwargs)
            captured, captured_kwargs, plans = recorder.capture_arguments(positional, keywords)
            call_id = recorder.record_method_start(
                receiver_id,
                qualified,
                args=captured,
                kwargs=captured_kwargs,
                arg_names=names,
                embedded_plans=plans,
            )
            try:
                result = original(obj, *args, **kwargs)
            except BaseException:
                recorder.record_method_end(call_id, abnormal=True)
                raise
            recorder.record_method_end(call_id)
            return result

        return method

    # -------------------------------------------------------------------------
    # Serialization points
    # -------------------------------------------------------------------------

    def capture_point(self, point_id: str) -> None:
        """Wrap a serialization point so each invocation produces a record."""
        recorder = self.recorder
        cls, name = resolve_point(point_id)
        original = getattr(cls, name)
        signature = inspect.signature(original)

        @functools.wraps(original)
        def point(obj: Any, *args: Any, **kwargs: Any) -> Any:
            if not recorder.active:
                return original(obj, *args, **kwargs)
            positional, names, keywords = _split_arguments(signature, obj, args, kwargs)
            pending = recorder.begin_serialization(
                point_id, obj, positional, names, keywords
            )
            result = original(obj, *args, **kwargs)
            pending.complete(result)
            return result

        self._replace(cls, name, point)
        logger.debug("Capturing serialization point %s", point_id)


def instrument(
    recorder: Recorder,
    traced: Iterable[type] = (),
    points: Iterable[str] = (),
) -> Instrumentation:
    """
    Instrument classes and serialization points.

    Args:
        recorder: A started recorder.
        traced: Classes reconstructed from the trace.
        points: Serialization point identifiers (``module:Class.method``).

    Returns:
        Handle restoring the original classes when closed.
    """
    handle = Instrumentation(recorder)
    traced = list(traced)
    try:
        for cls in traced:
            handle.trace_class(cls)
        for point_id in points:
            handle.capture_point(point_id)
        handle.static_entries = recorder.catalog_static_constants(traced)
    except Exception:
        handle.restore()
        raise
    return handle
