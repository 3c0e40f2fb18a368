"""
Plan synthesis.

Chooses the cheapest set of actions that constructs an object and sets every
field, then orders it into a deterministic reconstruction plan:

    minimize    sum(a_i * cost_i)
    subject to  exactly one selected action is constructing
                every field is set by at least one selected action

The search is an exact branch-and-bound: each constructing action is tried in
turn and the fields it leaves unset are covered by a minimum-cost selection of
non-constructing actions.
"""

import logging
import math
from collections.abc import Iterable, Mapping, Sequence

from pydantic import BaseModel, Field

from .exceptions import ContractViolation, InstantiationError, PlanInfeasibleError
from .models import (
    Action,
    ActionKind,
    CapturedValue,
    CostTable,
    ReconstructionPlan,
    TypeModel,
)

logger = logging.getLogger(__name__)

_KIND_PRIORITY = {ActionKind.CALL_METHOD: 0, ActionKind.ASSIGN_FIELD: 1}


class PlanProblem(BaseModel):
    """
    One instance of the selection problem.

    Attributes:
        actions: Candidate actions; action ``i`` owns selection variable ``a_i``.
        costs: Cost per action kind.
        field_universe: Fields to cover, in declaration order.
        target_type: Type the plan reconstructs (used in error messages).
    """

    actions: tuple[Action, ...]
    costs: CostTable = Field(default_factory=CostTable)
    field_universe: tuple[str, ...] = ()
    target_type: str = ""

    model_config = {"frozen": True}

    @classmethod
    def for_model(
        cls, model: TypeModel, actions: Iterable[Action], costs: CostTable
    ) -> "PlanProblem":
        """Build the problem of a type model."""
        return cls(
            actions=tuple(actions),
            costs=costs,
            field_universe=model.field_names,
            target_type=model.type_name,
        )

    def cost(self, action: Action) -> int:
        """Cost of one action."""
        return self.costs.cost_of(action.kind)


def _tie_key(actions: Sequence[Action], cost: int) -> tuple[object, ...]:
    return (
        cost,
        len(actions),
        tuple(sorted(a.kind.value for a in actions)),
        tuple(sorted(a.label for a in actions)),
    )


class _CoverSearch:
    """Minimum-cost cover of a field set by non-constructing actions."""

    def __init__(self, problem: PlanProblem, candidates: list[Action]) -> None:
        self.problem = problem
        self.candidates = candidates
        self.order = {f: i for i, f in enumerate(problem.field_universe)}
        self.options: dict[str, list[Action]] = {}
        for field_name in problem.field_universe:
            covering = [a for a in candidates if field_name in a.covered_fields]
            covering.sort(key=lambda a: (problem.cost(a), a.kind.value, a.label))
            self.options[field_name] = covering

    def coverable(self, fields: Iterable[str]) -> str | None:
        """Return the first field no candidate covers, or None."""
        for field_name in sorted(fields, key=self.order.__getitem__):
            if not self.options[field_name]:
                return field_name
        return None

    def _lower_bound(self, uncovered: frozenset[str]) -> int:
        return max(
            (self.problem.cost(self.options[f][0]) for f in uncovered), default=0
        )

    def run(
        self, fields: frozenset[str], prefix: list[Action], prefix_cost: int, bound: float
    ) -> tuple[tuple[object, ...], list[Action]] | None:
        best: list[tuple[tuple[object, ...], list[Action]]] = []
        best_cost = [bound]

        def search(uncovered: frozenset[str], chosen: list[Action], cost: int) -> None:
            if cost + self._lower_bound(uncovered) > best_cost[0]:
                return
            if not uncovered:
                selection = prefix + chosen
                key = _tie_key(selection, cost)
                if not best or key < best[0][0]:
                    best[:] = [(key, selection)]
                    best_cost[0] = cost
                return
            first = min(uncovered, key=self.order.__getitem__)
            for action in self.options[first]:
                search(
                    uncovered - set(action.covered_fields),
                    [*chosen, action],
                    cost + self.problem.cost(action),
                )

        search(fields, [], prefix_cost)
        return best[0] if best else None


def solve(problem: PlanProblem) -> list[Action]:
    """
    Select the minimum-cost action subset satisfying the plan constraints.

    Equal-cost optima are broken by fewer actions, then the sorted action-kind
    sequence, then the sorted callable names.

    Args:
        problem: The selection problem.

    Returns:
        The selected actions, constructing action first.

    Raises:
        PlanInfeasibleError: If no constructing action exists, or a field can
            not be covered together with any constructing action.
    """
    universe = frozenset(problem.field_universe)
    constructing = [a for a in problem.actions if a.constructing]
    if not constructing:
        raise PlanInfeasibleError(problem.target_type, "constructing")

    cover = _CoverSearch(problem, [a for a in problem.actions if not a.constructing])
    best: tuple[tuple[object, ...], list[Action]] | None = None
    first_failure: str | None = None

    for action in sorted(
        constructing, key=lambda a: (problem.cost(a), a.kind.value, a.label)
    ):
        remaining = universe - set(action.covered_fields)
        missing = cover.coverable(remaining)
        if missing is not None:
            first_failure = first_failure or missing
            continue
        bound = best[0][0] if best else math.inf
        found = cover.run(remaining, [action], problem.cost(action), bound)  # type: ignore[arg-type]
        if found is not None and (best is None or found[0] < best[0]):
            best = found

    if best is None:
        raise PlanInfeasibleError(problem.target_type, "coverage", first_failure)

    logger.debug(
        "Solved %s: %s (cost %s)",
        problem.target_type,
        [a.label for a in best[1]],
        best[0][0],
    )
    return best[1]


def check_selection(actions: Sequence[Action], universe: Iterable[str]) -> list[str]:
    """
    Independently check a selection against the plan constraints.

    Returns:
        Violations; empty when exactly one action is constructing and every
        field of the universe is covered.
    """
    violations: list[str] = []
    constructing = sum(1 for a in actions if a.constructing)
    if constructing == 0:
        violations.append("no constructing action selected")
    elif constructing > 1:
        violations.append(f"{constructing} constructing actions selected")
    covered = {f for a in actions for f in a.covered_fields}
    for field_name in universe:
        if field_name not in covered:
            violations.append(f"field '{field_name}' is not set")
    return violations


def assemble_plan(
    selected: Sequence[Action], model: TypeModel, costs: CostTable | None = None
) -> ReconstructionPlan:
    """
    Order a selection into a reconstruction plan.

    The constructing action comes first; field-setting actions follow the
    declaration order of the first field they set, setter calls before
    assignments, then by name.

    Raises:
        ContractViolation: If the selection violates the plan constraints.
    """
    violations = check_selection(selected, model.field_names)
    if violations:
        raise ContractViolation(
            f"Cannot assemble plan for {model.type_name}: {'; '.join(violations)}"
        )
    costs = costs or CostTable()
    position = {f: i for i, f in enumerate(model.field_names)}
    head = [a for a in selected if a.constructing]
    tail = sorted(
        (a for a in selected if not a.constructing),
        key=lambda a: (
            min((position.get(f, len(position)) for f in a.covered_fields), default=len(position)),
            _KIND_PRIORITY.get(a.kind, 2),
            a.label,
        ),
    )
    actions = (*head, *tail)
    return ReconstructionPlan(
        actions=actions,
        target_type=model.type_name,
        total_cost=sum(costs.cost_of(a.kind) for a in actions),
    )


def instantiate_plan(
    plan: ReconstructionPlan, values: Mapping[str, CapturedValue]
) -> ReconstructionPlan:
    """
    Bind every meta-variable of a plan to a captured field value.

    Object-typed values arrive as ObjectRef markers and stay deferred to
    trace-based reconstruction.

    Raises:
        InstantiationError: If a meta-variable's field has no value.
    """
    actions = []
    for action in plan.actions:
        bound = []
        for meta in action.meta_variables:
            key = meta.bound_field or meta.placeholder_name
            if key not in values:
                raise InstantiationError(key)
            bound.append(meta.model_copy(update={"value": values[key]}))
        actions.append(action.model_copy(update={"meta_variables": tuple(bound)}))
    return plan.model_copy(update={"actions": tuple(actions)})
