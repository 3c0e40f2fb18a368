"""
plaincode - plain-code serialization of Python objects.

Objects captured at runtime are turned into ordinary Python statements that
rebuild them: structure-based types through plans synthesized from their
declarations, everything else by replaying the traced calls that shaped them.
The same machinery generates Arrange-Act-Assert tests from recorded runs.
"""

from .analyzer import (
    SelectionCriteria,
    TypeRegistry,
    build_plan_database,
    closure_of_associated_types,
    enumerate_actions,
    extract_type_model,
    select_serialization_points,
)
from .config import Settings, load_settings
from .database import ReconstructionDatabase, ReconstructionSource, Resolution
from .declarations import constructor, factory, qualified_name, setter
from .emitter import (
    EmissionUnit,
    Emitter,
    NamingContext,
    deduplicate,
    emit,
    inline_primitives,
    outline_helpers,
)
from .exceptions import (
    AnalysisError,
    ConfigurationError,
    ContractViolation,
    EmissionError,
    InstantiationError,
    LogCorruptionError,
    PlainCodeError,
    PlanInfeasibleError,
    RecorderFailedError,
    ResolutionError,
    TraceDecodingError,
    TraceEncodingError,
)
from .harness import (
    Comparison,
    Outcome,
    OutcomeStatus,
    RoundTripReport,
    ScratchWorkspace,
    assert_deep_equals,
    check_generated,
    deep_equals,
    run_corpus,
    verify_roundtrip,
)
from .instrument import Instrumentation, instrument
from .models import (
    Action,
    ActionKind,
    CostTable,
    PlanDatabase,
    ReconstructionPlan,
    SerializationRecord,
    TypeModel,
)
from .recorder import Recorder
from .render import render_reconstruction, render_test_module
from .solver import PlanProblem, assemble_plan, instantiate_plan, solve
from .testgen import (
    DiscardReason,
    GeneratedTest,
    GenerationReport,
    GenerationStatus,
    generate_tests,
    write_tests,
)
from .timeline import EncodingConstantAdapter, TraceAnalysis, actions_for

__version__ = "0.1.0"
