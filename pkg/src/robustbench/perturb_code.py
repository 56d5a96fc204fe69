"""Code-target transforms: renames, structural rewrites, whitespace noise.

Every transform takes the task's prompt as text, edits it through lexer
spans, and leaves canonical_solution alone.  Entry-point renames also
rewrite the entry_point field and the test block so the task stays
self-consistent.  A transform with no applicable site returns the task
unchanged with applied=False rather than failing.
"""

from __future__ import annotations

import random

from . import lexicon as lexicon_mod
from .corpus import Task
from .pylex import Span, StructureIndex, index, lex, rename_edits, splice
from .registry import (
    Perturbation,
    PerturbationSpec,
    PerturbError,
    PerturbOutcome,
    apply_prompt_edits as _apply_prompt_edits,
    register,
    unchanged as _unchanged,
)

# Keyboard neighborhoods for typo generation.  Deliberately generous around
# each key (diagonals included) so classic fat-finger pairs are reachable.
QWERTY_NEIGHBORS = {
    "a": "qwsz",
    "b": "vghn",
    "c": "xdfv",
    "d": "ersfxc",
    "e": "wsdr",
    "f": "rtdgcv",
    "g": "tyfhvb",
    "h": "yugjbnm",
    "i": "ujko",
    "j": "uihknm",
    "k": "iojlm",
    "l": "opkm",
    "m": "nhjkl",
    "n": "bghjm",
    "o": "iklp",
    "p": "ol",
    "q": "wa",
    "r": "etdf",
    "s": "weadzx",
    "t": "ryfg",
    "u": "yihj",
    "v": "cfgb",
    "w": "qase",
    "x": "sdzc",
    "y": "tugh",
    "z": "asx",
}

# Stand-in identifier pool for the codebase-style variable renamer.
VARIABLE_POOL = [
    "acc", "agg", "amount", "answer", "arr", "aux", "bag", "base",
    "best_value", "block", "bucket", "buf", "cache", "candidate", "carry", "cell",
    "chunk", "collected", "combo", "counter", "cursor", "data", "depth", "digit",
    "elem_value", "entry", "extent", "flag", "gathered", "grand_total", "group", "holder",
    "idx_value", "info", "item_value", "kept", "last_seen", "leftover", "limit", "marker",
    "memo", "mid", "node", "offset", "out", "partial", "pivot", "pointer",
    "pos", "prior", "probe", "queue_item", "record", "reg", "rem", "running_total",
    "scratch", "seen", "slot", "stack_top", "state", "store", "tally", "track",
]
assert len(VARIABLE_POOL) == 64

RANDOM_NAME_LENGTH = 11
_NAME_ALPHABET = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
_NAME_ALPHANUM = _NAME_ALPHABET + "0123456789"

_CLAUSE_STARTERS = ("else", "elif", "except", "finally", "case")
_COMPOUND_STARTERS = (
    "if", "for", "while", "def", "class", "with", "try", "else", "elif",
    "except", "finally", "match", "case", "async",
)

_MIRROR = {"<": ">", ">": "<", "<=": ">=", ">=": "<=", "==": "==", "!=": "!="}


# ---------------------------------------------------------------------------
# Entry-point renames


def _derive_swap_char(name: str, rng: random.Random, lex_tables) -> str | None:
    candidates = []
    for i in range(len(name) - 1):
        if name[i] == name[i + 1]:
            continue
        swapped = name[:i] + name[i + 1] + name[i] + name[i + 2 :]
        if swapped.isidentifier():
            candidates.append(swapped)
    return rng.choice(candidates) if candidates else None


def _derive_change_char(name: str, rng: random.Random, lex_tables, n_chars=2, variant="case") -> str | None:
    alpha = [i for i, ch in enumerate(name) if ch.isalpha()]
    if not alpha:
        return None
    chosen = sorted(rng.sample(alpha, min(n_chars, len(alpha))))
    chars = list(name)
    for i in chosen:
        if variant == "case":
            chars[i] = chars[i].swapcase()
        elif variant == "substitute":
            pool = [c for c in _NAME_ALPHABET.lower() if c != chars[i].lower()]
            repl = rng.choice(pool)
            chars[i] = repl.upper() if chars[i].isupper() else repl
        else:
            raise PerturbError(f"unknown change-char variant {variant!r}")
    out = "".join(chars)
    return out if out != name and out.isidentifier() else None


def _derive_camel_case(name: str, rng: random.Random, lex_tables) -> str | None:
    parts = name.split("_")
    if len([p for p in parts if p]) < 2:
        return None
    first, *rest = [p for p in parts if p]
    out = first + "".join(p[:1].upper() + p[1:] for p in rest)
    return out if out != name else None


def _derive_butter_finger(name: str, rng: random.Random, lex_tables) -> str | None:
    positions = [i for i, ch in enumerate(name) if ch.lower() in QWERTY_NEIGHBORS]
    if not positions:
        return None
    i = rng.choice(positions)
    original = name[i]
    repl = rng.choice(QWERTY_NEIGHBORS[original.lower()])
    if original.isupper():
        repl = repl.upper()
    if repl == original:
        return None
    out = name[:i] + repl + name[i + 1 :]
    return out if out.isidentifier() else None


def _identifier_fragment(variant: str) -> str | None:
    frag = variant.replace(" ", "_").replace("-", "_")
    return frag if ("x" + frag).isidentifier() else None


def _derive_from_table(name: str, rng: random.Random, table: dict[str, list[str]]) -> str | None:
    words = name.split("_")
    eligible = [
        i
        for i, w in enumerate(words)
        if w.lower() in table and _identifier_fragment(table[w.lower()][0]) is not None
    ]
    if not eligible:
        return None
    i = rng.choice(eligible)
    replacement = _identifier_fragment(table[words[i].lower()][0])
    if words[i][:1].isupper():
        replacement = replacement[:1].upper() + replacement[1:]
    words = words[:i] + [replacement] + words[i + 1 :]
    out = "_".join(words)
    return out if out != name and out.isidentifier() else None


_FUNC_RENAME_MODES = {
    "swap-char": _derive_swap_char,
    "change-char": _derive_change_char,
    "camel-case": _derive_camel_case,
    "butter-finger": _derive_butter_finger,
    "synonym-sub": None,  # handled via lexicon tables below
    "inflectional": None,
}


def func_rename(task: Task, mode: str, seed: int, params: dict | None = None, lexicon=None) -> PerturbOutcome:
    """Rename the entry point; the derivation of the new name depends on mode."""
    params = params or {}
    old = task.entry_point
    if not old:
        raise PerturbError(f"{task.task_id}: empty entry point")
    if not any(fn.name_token.text == old for fn in index(task.prompt).function_defs):
        raise PerturbError(f"{task.task_id}: entry point {old!r} not defined in prompt")
    rng = random.Random(seed)
    if mode in ("synonym-sub", "inflectional"):
        lexicon = lexicon or lexicon_mod.load_lexicon()
        table = lexicon.synonyms if mode == "synonym-sub" else lexicon.inflections
        new = _derive_from_table(old, rng, table)
    elif mode == "change-char":
        new = _derive_change_char(
            old, rng, None,
            n_chars=int(params.get("n_chars", 2)),
            variant=params.get("variant", "case"),
        )
    elif mode in _FUNC_RENAME_MODES:
        new = _FUNC_RENAME_MODES[mode](old, rng, None)
    else:
        raise PerturbError(f"unknown func-rename mode {mode!r}")
    if new is None:
        return _unchanged(task, f"no {mode} rename applicable to {old!r}")
    if not new:
        raise PerturbError(f"{task.task_id}: empty name after {mode} rename")
    prompt_edits = rename_edits(task.prompt, old, new, scope="everywhere")
    new_test = splice(task.test, rename_edits(task.test, old, new, scope="everywhere"))
    return _apply_prompt_edits(task, prompt_edits, entry_point=new, test=new_test)


# ---------------------------------------------------------------------------
# Local-variable renames


def _entry_function(idx: StructureIndex, task: Task):
    for fn in idx.function_defs:
        if fn.name_token.text == task.entry_point:
            return fn
    return idx.function_defs[0] if idx.function_defs else None


def _parameter_names(idx: StructureIndex, fn) -> set[str]:
    names: set[str] = set()
    depth = 0
    for tok in idx.tokens:
        if tok.start < fn.header_span.start or tok.start >= fn.header_span.end:
            continue
        if tok.kind == "delimiter" and tok.text in "([{":
            depth += 1
        elif tok.kind == "delimiter" and tok.text in ")]}":
            depth -= 1
        elif tok.kind == "identifier" and depth >= 1:
            names.add(tok.text)  # over-approximates (annotations too), safely
    return names


def _local_variables(idx: StructureIndex, fn, entry_point: str) -> list[str]:
    """Assigned simple names in the body, in first-assignment order."""
    if fn is None or fn.body_span is None:
        return []
    params = _parameter_names(idx, fn)
    body = [
        t
        for t in idx.tokens
        if fn.body_span.start <= t.start < fn.body_span.end
        and t.kind not in ("newline", "indent-run", "comment")
    ]
    out: list[str] = []
    for i, tok in enumerate(body):
        if tok.kind != "identifier":
            continue
        prev = body[i - 1] if i > 0 else None
        nxt = body[i + 1] if i + 1 < len(body) else None
        if prev is not None and prev.kind == "delimiter" and prev.text == ".":
            continue  # attribute access
        is_assign = (
            nxt is not None
            and nxt.kind == "operator"
            and nxt.text.endswith("=")
            and nxt.text not in ("==", "!=", "<=", ">=")
        )
        is_for_target = (
            prev is not None
            and prev.kind == "keyword"
            and prev.text == "for"
            and nxt is not None
            and nxt.kind == "keyword"
            and nxt.text == "in"
        )
        if not (is_assign or is_for_target):
            continue
        if tok.text == entry_point or tok.text in params or tok.text in out:
            continue
        out.append(tok.text)
    return out


def _random_identifier(rng: random.Random, length: int = RANDOM_NAME_LENGTH) -> str:
    first = rng.choice(_NAME_ALPHABET)
    rest = "".join(rng.choice(_NAME_ALPHANUM) for _ in range(length - 1))
    return first + rest


def var_rename(task: Task, mode: str, seed: int) -> PerturbOutcome:
    """Rename one seeded-random local variable at all its occurrences."""
    idx = index(task.prompt)
    fn = _entry_function(idx, task)
    candidates = _local_variables(idx, fn, task.entry_point)
    if not candidates:
        return _unchanged(task, "no local variables in prompt body")
    rng = random.Random(seed)
    old = rng.choice(candidates)
    if mode == "pool":
        pool = [n for n in VARIABLE_POOL if n != old]
        new = rng.choice(pool)
    elif mode == "naive":
        new = "VAR_0"
    elif mode == "random":
        new = _random_identifier(rng)
    else:
        raise PerturbError(f"unknown var-rename mode {mode!r}")
    edits = rename_edits(task.prompt, old, new, scope="code-only")
    return _apply_prompt_edits(task, edits)


# ---------------------------------------------------------------------------
# Structural rewrites


def _body_tokens(idx: StructureIndex, span: Span):
    return [
        t
        for t in idx.tokens
        if span.start <= t.start < span.end and t.kind not in ("newline", "indent-run")
    ]


def for_while_transform(task: Task, seed: int) -> PerturbOutcome:
    """Rewrite one for-loop over a simple name as an index-driven while loop."""
    idx = index(task.prompt)
    loops = []
    for loop in idx.for_loops:
        if not loop.simple_iterable or loop.body_span is None:
            continue
        if any(
            t.kind == "keyword" and t.text == "continue"
            for t in _body_tokens(idx, loop.body_span)
        ):
            continue  # a continue would jump over the appended increment
        loops.append(loop)
    if not loops:
        return _unchanged(task, "no for-loop over a simple name")
    rng = random.Random(seed)
    loop = rng.choice(loops)

    used = {t.text for t in idx.tokens if t.kind == "identifier"}
    ivar = "index"
    suffix = 0
    while ivar in used:
        suffix += 1
        ivar = f"index_{suffix}"

    iterable = task.prompt[loop.iterable_span.start : loop.iterable_span.end]
    target = loop.target_token.text
    header_line = idx.line_at(loop.header_span.start)
    edits = [
        (Span(header_line.start, header_line.start), f"{loop.indent}{ivar} = 0\n"),
        (Span(loop.header_span.start, loop.header_span.end), f"while {ivar} < len({iterable}):"),
        (Span(loop.body_span.start, loop.body_span.start), f"{loop.body_indent}{target} = {iterable}[{ivar}]\n"),
        (Span(loop.body_span.end, loop.body_span.end), f"{loop.body_indent}{ivar} += 1\n"),
    ]
    return _apply_prompt_edits(task, edits)


def operand_swap(task: Task, seed: int) -> PerturbOutcome:
    """Swap the operands of one comparison, mirroring the operator."""
    idx = index(task.prompt)
    if not idx.comparisons:
        return _unchanged(task, "no comparison in prompt")
    rng = random.Random(seed)
    cmp = rng.choice(idx.comparisons)
    left = task.prompt[cmp.left_span.start : cmp.left_span.end]
    right = task.prompt[cmp.right_span.start : cmp.right_span.end]
    edits = [
        (cmp.left_span, right),
        (Span(cmp.op_token.start, cmp.op_token.end), _MIRROR[cmp.op_token.text]),
        (cmp.right_span, left),
    ]
    return _apply_prompt_edits(task, edits)


def _line_is_simple_statement(idx: StructureIndex, line) -> bool:
    """True when the line is one bracket-balanced simple statement."""
    tokens = [
        t
        for t in idx.tokens
        if line.start <= t.start and t.end <= line.end
        and t.kind not in ("newline", "indent-run", "comment")
    ]
    if not tokens:
        return False
    first = tokens[0]
    if first.kind == "keyword" and first.text in _COMPOUND_STARTERS:
        return False
    depth = 0
    for t in tokens:
        if t.kind == "delimiter" and t.text in "([{":
            depth += 1
        elif t.kind == "delimiter" and t.text in ")]}":
            depth -= 1
    text = line.text(idx.source).strip()
    if depth != 0 or text.endswith(":") or text.endswith("\\"):
        return False
    # A string token crossing the line boundary means we only saw part of it.
    covered = any(t.start < line.start < t.end or t.start < line.end < t.end for t in idx.tokens)
    return not covered


def dead_code_insert(task: Task, seed: int) -> PerturbOutcome:
    """Insert a guarded two-line dead block at a body statement boundary."""
    idx = index(task.prompt)
    fn = _entry_function(idx, task)
    if fn is None or fn.body_span is None:
        return _unchanged(task, "no function body in prompt")
    doc_line_start = idx.line_at(idx.docstring.start).start if idx.docstring else -1
    boundaries = []
    for b in idx.statement_boundaries:
        if not (fn.body_span.start <= b < fn.body_span.end):
            continue
        if b == doc_line_start:
            continue  # never push the docstring off its first-statement slot
        line_text = idx.line_at(b).text(idx.source).strip()
        first_word = line_text.split()[0].rstrip(":") if line_text.split() else ""
        if first_word in _CLAUSE_STARTERS:
            continue  # inserting above else/elif/except would re-bind the clause
        boundaries.append(b)
    if not boundaries:
        return _unchanged(task, "no statement boundary in prompt body")
    rng = random.Random(seed)
    at = rng.choice(boundaries)

    copyable = [
        idx.line_at(b).text(idx.source).strip()
        for b in boundaries
        if _line_is_simple_statement(idx, idx.line_at(b))
    ]
    statement = rng.choice(copyable) if copyable else "pass"
    indent = idx.line_at(at).leading_ws
    block = f"{indent}if False:\n{indent}    {statement}\n"
    return _apply_prompt_edits(task, [(Span(at, at), block)])


# ---------------------------------------------------------------------------
# Whitespace restructuring


def _line_starts_inside_string(idx: StructureIndex, line) -> bool:
    return any(
        t.kind in ("string", "other") and t.start < line.start < t.end for t in idx.tokens
    )


def tab_indent(task: Task, seed: int = 0) -> PerturbOutcome:
    """Convert each leading 4-space run to one tab on every code line."""
    idx = index(task.prompt)
    doc = idx.docstring
    edits = []
    converts_code = False
    for line in idx.line_map:
        ws = line.leading_ws
        if "    " not in ws or _line_starts_inside_string(idx, line):
            continue
        if not (doc is not None and line.start <= doc.start < line.end):
            converts_code = True
        edits.append((Span(line.start, line.start + len(ws)), ws.replace("    ", "\t")))
    # A lone docstring conversion would leave the indentation inconsistent
    # with whatever completes the function, so it does not count.
    if not edits or not converts_code:
        return _unchanged(task, "no indented code lines to convert")
    return _apply_prompt_edits(task, edits)


def split_lines(task: Task, seed: int = 0) -> PerturbOutcome:
    """Split the longest splittable line after a comma or binary operator.

    Points inside brackets get a plain newline with hanging indentation;
    top-level points fall back to backslash continuation.  The point nearest
    the middle of the line wins, earliest on ties.
    """
    idx = index(task.prompt)
    prompt = task.prompt
    depth = 0
    by_line: dict[int, list[tuple[int, int]]] = {}  # line.start -> [(token_end, depth)]
    for tok in idx.tokens:
        if tok.kind == "delimiter" and tok.text in "([{":
            depth += 1
            continue
        if tok.kind == "delimiter" and tok.text in ")]}":
            depth = max(0, depth - 1)
            continue
        is_comma = tok.kind == "delimiter" and tok.text == ","
        is_operator = tok.kind == "operator"
        if not (is_comma or is_operator):
            continue
        line = idx.line_at(tok.start)
        by_line.setdefault(line.start, []).append((tok.end, depth))

    candidates = []
    for line in idx.line_map:
        points = by_line.get(line.start)
        if not points:
            continue
        text = line.text(prompt).rstrip("\n")
        candidates.append((len(text), line, points))
    if not candidates:
        return _unchanged(task, "no line with a splittable token")
    length, line, points = max(candidates, key=lambda c: (c[0], -c[1].start))

    bracketed = [p for p in points if p[1] >= 1]
    pool = bracketed if bracketed else points
    mid = line.start + length / 2
    cut, cut_depth = min(pool, key=lambda p: (abs(p[0] - mid), p[0]))

    continuation = line.leading_ws + " " * 8
    end = cut + 1 if cut < len(prompt) and prompt[cut] == " " else cut
    joiner = "\n" if cut_depth >= 1 else " \\\n"
    return _apply_prompt_edits(task, [(Span(cut, end), joiner + continuation)])


def new_lines(task: Task, seed: int) -> PerturbOutcome:
    """Insert one blank line at a seeded-random statement boundary."""
    idx = index(task.prompt)
    if not idx.statement_boundaries:
        return _unchanged(task, "no statement boundary")
    rng = random.Random(seed)
    at = rng.choice(idx.statement_boundaries)
    return _apply_prompt_edits(task, [(Span(at, at), "\n")])


def new_line_aftercode(task: Task, seed: int = 0) -> PerturbOutcome:
    """Append two newline characters to the prompt."""
    p = len(task.prompt)
    return _apply_prompt_edits(task, [(Span(p, p), "\n\n")])


# ---------------------------------------------------------------------------
# Dispatch and registration


def apply_code_perturbation(task: Task, spec: PerturbationSpec, lexicon=None) -> PerturbOutcome:
    from .registry import get

    entry = get(spec.id)
    if entry.target != "code":
        raise PerturbError(f"{spec.id} does not target code")
    kwargs = {"lexicon": lexicon} if "lexicon" in entry.needs else {}
    return entry.fn(task, spec, **kwargs)


def _reg(pid, level, fn, needs=()):
    register(
        Perturbation(
            id=pid, level=level, target="code", kind="transform", fn=fn, needs=frozenset(needs)
        )
    )


_reg("FuncRenameSwapChar", "Character-Level", lambda t, s: func_rename(t, "swap-char", s.seed, s.params))
_reg("FuncRenameChangeChar", "Character-Level", lambda t, s: func_rename(t, "change-char", s.seed, s.params))
_reg("tab_indent", "Character-Level", lambda t, s: tab_indent(t, s.seed))
_reg("split_lines", "Character-Level", lambda t, s: split_lines(t, s.seed))
_reg("FuncRenameCamelCase", "Word-Level", lambda t, s: func_rename(t, "camel-case", s.seed, s.params))
_reg("FuncRenameButterFinger", "Word-Level", lambda t, s: func_rename(t, "butter-finger", s.seed, s.params))
_reg(
    "FuncRenameSynonymSub",
    "Word-Level",
    lambda t, s, lexicon=None: func_rename(t, "synonym-sub", s.seed, s.params, lexicon),
    needs=("lexicon",),
)
_reg("VarRenamerCB", "Word-Level", lambda t, s: var_rename(t, "pool", s.seed))
_reg("VarRenamerNaive", "Word-Level", lambda t, s: var_rename(t, "naive", s.seed))
_reg("VarRenamerRN", "Word-Level", lambda t, s: var_rename(t, "random", s.seed))
_reg(
    "FuncRenameInflectionalVariation",
    "Statement-Level",
    lambda t, s, lexicon=None: func_rename(t, "inflectional", s.seed, s.params, lexicon),
    needs=("lexicon",),
)
_reg("DeadCodeInserter", "Statement-Level", lambda t, s: dead_code_insert(t, s.seed))
_reg("ForWhileTransformer", "Statement-Level", lambda t, s: for_while_transform(t, s.seed))
_reg("OperandSwap", "Statement-Level", lambda t, s: operand_swap(t, s.seed))
_reg("new_lines", "Statement-Level", lambda t, s: new_lines(t, s.seed))
_reg("new_line_aftercode", "Statement-Level", lambda t, s: new_line_aftercode(t, s.seed))
