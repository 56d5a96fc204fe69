"""Comment perturbations: reshape the docstring as comments, or add noise ones.

Both keep the program's behaviour intact.  Turning description lines into
comments leaves the quotes and doctests where they are, and an inserted
comment is inert to the interpreter wherever it lands.
"""

from __future__ import annotations

import random

from .corpus import Task
from .perturb_nl import description_spans
from .pylex import Span, index
from .registry import (
    Perturbation,
    PerturbationSpec,
    PerturbError,
    PerturbOutcome,
    apply_prompt_edits as _apply_prompt_edits,
    register,
    unchanged as _unchanged,
)

DEFAULT_COMMENT = "#This is a randomly inserted comment"


def doc_to_comment(task: Task, seed: int = 0) -> PerturbOutcome:
    """Prefix every description line inside the docstring with '#'."""
    idx = index(task.prompt)
    doc = idx.docstring
    if doc is None:
        return _unchanged(task, "no docstring")
    spans = description_spans(task.prompt, doc)
    if not spans:
        return _unchanged(task, "no description text")
    edits = [(Span(s.start, s.start), "#") for s in spans]
    return _apply_prompt_edits(task, edits)


def _crosses_line_end(idx, content_end: int) -> bool:
    for tok in idx.tokens:
        if tok.start < content_end < tok.end:
            return True
        if tok.start >= content_end:
            break
    return False


def random_insert_comment(task: Task, seed: int = 0, params: dict | None = None) -> PerturbOutcome:
    """Drop one unrelated comment at a seeded spot in the function body.

    The comment either trails an existing code line or takes a line of its
    own at a statement boundary.  Prompts whose body is still to be written
    have nowhere meaningful to comment and come back unapplied.
    """
    params = params or {}
    text = str(params.get("text", DEFAULT_COMMENT))
    idx = index(task.prompt)
    source = task.prompt
    doc = idx.docstring
    fn = next((f for f in idx.function_defs if f.name_token.text == task.entry_point), None)
    if fn is None or fn.body_span is None:
        return _unchanged(task, "entry function has no body")
    body = fn.body_span

    eol_sites = []
    for line in idx.line_map:
        if line.start < body.start or line.start >= body.end:
            continue
        if doc is not None and line.start <= doc.end - 1 and doc.start <= line.end:
            continue
        stripped = line.text(source).strip()
        if not stripped or stripped.startswith("#") or stripped.endswith("\\"):
            continue
        content_end = line.end - 1 if source[line.end - 1 : line.end] == "\n" else line.end
        if _crosses_line_end(idx, content_end):
            continue
        eol_sites.append(("eol", content_end, ""))
    if not eol_sites:
        return _unchanged(task, "function body has no code lines")

    own_sites = []
    for at in idx.statement_boundaries:
        if at < body.start or at >= body.end:
            continue
        own_sites.append(("own", at, idx.line_at(at).leading_ws))

    kind, at, indent = random.Random(seed).choice(eol_sites + own_sites)
    insert = " " + text if kind == "eol" else f"{indent}{text}\n"
    return _apply_prompt_edits(task, [(Span(at, at), insert)])


# ---------------------------------------------------------------------------
# Dispatch and registration


def apply_comment_perturbation(task: Task, spec: PerturbationSpec) -> PerturbOutcome:
    from .registry import get

    entry = get(spec.id)
    if entry.target != "comments":
        raise PerturbError(f"{spec.id} does not target comments")
    return entry.fn(task, spec)


def _reg(pid, fn):
    register(
        Perturbation(
            id=pid, level="Sentence-Level", target="comments", kind="transform", fn=fn
        )
    )


_reg("doc2comment", lambda t, s: doc_to_comment(t, s.seed))
_reg("randominsertcomments", lambda t, s: random_insert_comment(t, s.seed, s.params))
