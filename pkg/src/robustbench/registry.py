"""Perturbation registry: every transform and attack, with its taxonomy labels.

Levels and targets are reported exactly as the source tables name them,
including their quirks (new_line_afterdoc carries a Statement-Level label
despite sitting with the sentence transforms).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .corpus import Task
from .pylex import Span, splice

DEFAULT_SEED = 5  # matches the reference experimental setup


class PerturbError(ValueError):
    pass


class GradientAccessError(PerturbError):
    """Raised by attack methods that need white-box gradients."""


@dataclass(slots=True)
class PerturbationSpec:
    id: str
    seed: int = DEFAULT_SEED
    params: dict = field(default_factory=dict)


@dataclass(slots=True)
class Edit:
    span: Span
    before: str
    after: str


@dataclass(slots=True)
class PerturbOutcome:
    task: Task
    applied: bool
    edits: list[Edit] = field(default_factory=list)
    note: str = ""


@dataclass(slots=True)
class Perturbation:
    id: str
    level: str
    target: str  # "code", "task-description", "comments"
    kind: str  # "transform" or "attack"
    fn: Callable | None = None
    needs: frozenset[str] = frozenset()  # resources: "lexicon", "translator"


def unchanged(task: Task, note: str) -> PerturbOutcome:
    """Outcome for a transform that found no applicable site."""
    return PerturbOutcome(task=task, applied=False, note=note)


def apply_prompt_edits(task: Task, edits: list[tuple[Span, str]], **field_updates) -> PerturbOutcome:
    """Splice edits into the prompt, recording before/after for each span."""
    prompt = task.prompt
    new_prompt = splice(prompt, edits)
    recorded = [Edit(span, prompt[span.start : span.end], after) for span, after in sorted(edits)]
    new_task = task.with_fields(prompt=new_prompt, **field_updates)
    return PerturbOutcome(task=new_task, applied=True, edits=recorded)


_REGISTRY: dict[str, Perturbation] = {}


def register(entry: Perturbation) -> None:
    if entry.id in _REGISTRY:
        raise ValueError(f"duplicate perturbation id {entry.id!r}")
    _REGISTRY[entry.id] = entry


def get(perturbation_id: str) -> Perturbation:
    _ensure_loaded()
    try:
        return _REGISTRY[perturbation_id]
    except KeyError:
        known = ", ".join(sorted(_REGISTRY))
        raise PerturbError(f"unknown perturbation {perturbation_id!r} (known: {known})") from None


def all_perturbations() -> list[Perturbation]:
    _ensure_loaded()
    return sorted(_REGISTRY.values(), key=lambda p: (p.target, p.id))


def transform_ids() -> list[str]:
    """Ids runnable as deterministic seeded transforms (attacks excluded)."""
    return [p.id for p in all_perturbations() if p.kind == "transform"]


_loaded = False


def _ensure_loaded() -> None:
    global _loaded
    if _loaded:
        return
    _loaded = True
    from . import attack, perturb_code, perturb_comment, perturb_nl  # noqa: F401  (registration side effects)


def apply_perturbation(task: Task, spec: PerturbationSpec, *, lexicon=None, translator=None) -> PerturbOutcome:
    """Dispatch a deterministic transform by id.

    Attack ids need a scorer and live behind the attack module; asking the
    transform dispatcher to run one is an error, as is a gradient method.
    """
    entry = get(spec.id)
    if entry.kind != "transform":
        raise PerturbError(
            f"{spec.id} is a search-based attack; run it through the attack interface with a scorer"
        )
    kwargs = {}
    if "lexicon" in entry.needs:
        kwargs["lexicon"] = lexicon
    if "translator" in entry.needs:
        kwargs["translator"] = translator
    return entry.fn(task, spec, **kwargs)
