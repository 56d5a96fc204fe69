"""Span-preserving lexer and lightweight structure index for Python sources.

The perturbation transforms edit benchmark prompts as text, so they need
token spans that point back into the original string byte-for-byte.  The
standard library tokenizer normalizes line endings and raises on incomplete
input, which rules it out here: perturbed prompts must survive lexing even
when they are not valid Python, and every edit must be expressible as a
span replacement on the untouched source.

Nothing in this module executes or parses code beyond what is needed to
locate function headers, bodies, docstrings, comments, for-loops,
comparisons and statement starts.
"""

from __future__ import annotations

import keyword
import re
from dataclasses import dataclass, field
from typing import NamedTuple

KEYWORDS = frozenset(keyword.kwlist)

# Longest match wins; sorted at module load.
_OPERATORS = [
    "**=", "//=", ">>=", "<<=",
    "**", "//", ">>", "<<", "<=", ">=", "==", "!=", "->", ":=",
    "+=", "-=", "*=", "/=", "%=", "@=", "&=", "|=", "^=",
    "+", "-", "*", "/", "%", "@", "&", "|", "^", "~", "<", ">", "=",
]
_DELIMITERS = frozenset("()[]{},:;.")
_OPEN = {"(": ")", "[": "]", "{": "}"}
_CLOSE = frozenset(")]}")

_STRING_PREFIXES = frozenset(
    p
    for base in ("r", "b", "u", "f", "rb", "br", "fr", "rf")
    for p in {base, base.upper(), base.capitalize(), base[::-1].capitalize() if len(base) == 2 else base}
) | frozenset({"Rb", "bR", "Rf", "fR", "rB", "Br", "rF", "Fr", "BR", "RB", "FR", "RF"})

_NUMBER_RE = re.compile(
    r"""
    0[xX][0-9a-fA-F_]+ |
    0[oO][0-7_]+ |
    0[bB][01_]+ |
    (?:\d[\d_]*)?\.\d[\d_]*(?:[eE][+-]?\d+)?[jJ]? |
    \d[\d_]*\.(?:[eE][+-]?\d+)?[jJ]? |
    \d[\d_]*(?:[eE][+-]?\d+)?[jJ]?
    """,
    re.VERBOSE,
)

_IDENT_START_RE = re.compile(r"[A-Za-z_-\U0010ffff]")
_IDENT_RE = re.compile(r"[A-Za-z_-\U0010ffff][0-9A-Za-z_-\U0010ffff]*")


class Span(NamedTuple):
    start: int
    end: int


@dataclass(slots=True)
class Token:
    kind: str
    text: str
    start: int
    end: int

    @property
    def span(self) -> Span:
        return Span(self.start, self.end)


def lex(source: str) -> list[Token]:
    """Tokenize ``source`` into non-overlapping spans.

    Guarantees, checked by the tests rather than assumed: token text always
    equals the corresponding source slice, spans are sorted and disjoint, and
    the gaps between tokens contain only whitespace and backslash-newline
    continuations.  Unterminated strings become a single ``other`` token
    running to the end of input; the lexer never raises on malformed text.
    """
    tokens: list[Token] = []
    n = len(source)
    i = 0
    at_line_start = True

    def emit(kind: str, start: int, end: int) -> None:
        tokens.append(Token(kind, source[start:end], start, end))

    while i < n:
        c = source[i]
        if at_line_start and c in " \t":
            j = i
            while j < n and source[j] in " \t":
                j += 1
            # Leading run counts as indentation only when the line has content.
            if j < n and source[j] not in "\r\n":
                emit("indent-run", i, j)
            i = j
            at_line_start = False
            continue
        at_line_start = False
        if c == "\n":
            emit("newline", i, i + 1)
            i += 1
            at_line_start = True
            continue
        if c == "\r":
            end = i + 2 if i + 1 < n and source[i + 1] == "\n" else i + 1
            emit("newline", i, end)
            i = end
            at_line_start = True
            continue
        if c in " \t":
            i += 1
            continue
        if c == "\\" and i + 1 < n and source[i + 1] in "\r\n":
            i += 2 if source[i + 1] == "\n" else (3 if source[i + 1 : i + 3] == "\r\n" else 2)
            continue
        if c == "#":
            j = i
            while j < n and source[j] not in "\r\n":
                j += 1
            emit("comment", i, j)
            i = j
            continue
        if c in "\"'":
            i = _lex_string(source, i, i, emit)
            continue
        if _IDENT_START_RE.match(c):
            m = _IDENT_RE.match(source, i)
            assert m is not None
            text = m.group()
            j = m.end()
            if text in _STRING_PREFIXES and j < n and source[j] in "\"'":
                i = _lex_string(source, i, j, emit)
                continue
            emit("keyword" if text in KEYWORDS else "identifier", i, j)
            i = j
            continue
        if c.isdigit() or (c == "." and i + 1 < n and source[i + 1].isdigit()):
            m = _NUMBER_RE.match(source, i)
            if m and m.end() > i:
                emit("number", i, m.end())
                i = m.end()
                continue
        matched = False
        for op in _OPERATORS:
            if source.startswith(op, i):
                emit("operator", i, i + len(op))
                i += len(op)
                matched = True
                break
        if matched:
            continue
        if c in _DELIMITERS:
            emit("delimiter", i, i + 1)
            i += 1
            continue
        emit("other", i, i + 1)
        i += 1
    return tokens


def _lex_string(source: str, start: int, quote_pos: int, emit) -> int:
    """Scan a string literal starting at ``quote_pos`` (prefix at ``start``).

    Returns the index just past the token.  Backslash always escapes the next
    character, which matches how the real tokenizer finds the closing quote
    even for raw strings.
    """
    n = len(source)
    q = source[quote_pos]
    triple = source[quote_pos : quote_pos + 3] in ('"""', "'''")
    i = quote_pos + (3 if triple else 1)
    closer = q * 3 if triple else q
    while i < n:
        c = source[i]
        if c == "\\" and i + 1 < n:
            i += 2
            continue
        if not triple and c in "\r\n":
            # Unterminated single-quoted string: swallow to end of input.
            emit("other", start, n)
            return n
        if source.startswith(closer, i):
            end = i + len(closer)
            emit("string", start, end)
            return end
        i += 1
    emit("other", start, n)
    return n


# ---------------------------------------------------------------------------
# Structure index


@dataclass(slots=True)
class Line:
    start: int
    end: int  # offset just past the newline, or len(source) for the last line
    leading_ws: str

    def text(self, source: str) -> str:
        return source[self.start : self.end]


@dataclass(slots=True)
class FunctionDef:
    name_token: Token
    header_span: Span
    body_span: Span | None
    body_indent: str
    indent: str


@dataclass(slots=True)
class ForLoop:
    target_token: Token
    iterable_span: Span
    header_span: Span
    body_span: Span | None
    indent: str
    body_indent: str
    simple_iterable: bool


@dataclass(slots=True)
class Comparison:
    left_span: Span
    op_token: Token
    right_span: Span


@dataclass(slots=True)
class StructureIndex:
    source: str
    tokens: list[Token]
    line_map: list[Line]
    function_defs: list[FunctionDef] = field(default_factory=list)
    docstring: Span | None = None
    comments: list[Span] = field(default_factory=list)
    for_loops: list[ForLoop] = field(default_factory=list)
    comparisons: list[Comparison] = field(default_factory=list)
    statement_boundaries: list[int] = field(default_factory=list)

    def line_at(self, offset: int) -> Line:
        for line in self.line_map:
            if line.start <= offset < line.end or (offset == line.end == len(self.source)):
                return line
        return self.line_map[-1]


def _build_line_map(source: str) -> list[Line]:
    lines: list[Line] = []
    start = 0
    n = len(source)
    while start <= n:
        nl = source.find("\n", start)
        end = n if nl < 0 else nl + 1
        body = source[start:end]
        stripped = body.lstrip(" \t")
        lines.append(Line(start, end, body[: len(body) - len(stripped)]))
        if nl < 0:
            break
        start = end
    if not lines:
        lines.append(Line(0, 0, ""))
    return lines


# Keywords that terminate an operand scan.  Value keywords are legal operands.
_OPERAND_STOP_KEYWORDS = KEYWORDS - {"None", "True", "False"}
_COMPARISON_OPS = frozenset({"<", ">", "<=", ">=", "==", "!="})
_CLAUSE_KEYWORDS = frozenset({"else", "elif", "except", "finally", "case"})


def index(source: str) -> StructureIndex:
    """Build the structure index used by the code transforms.

    Statement boundaries are offsets of physical-line starts that begin a
    logical statement (bracket depth zero, not a string interior, previous
    line not ending in a continuation).  Appending blank lines to the source
    leaves every recorded span unchanged.
    """
    tokens = lex(source)
    idx = StructureIndex(source=source, tokens=tokens, line_map=_build_line_map(source))
    idx.comments = [t.span for t in tokens if t.kind == "comment"]

    depth = 0
    line_start = True
    logical_starts: list[int] = []  # indices into tokens
    for ti, tok in enumerate(tokens):
        if tok.kind == "newline":
            if depth == 0:
                line_start = True
            continue
        if tok.kind == "indent-run":
            continue
        if line_start and depth == 0:
            logical_starts.append(ti)
            line_start = False
        if tok.kind == "delimiter":
            if tok.text in _OPEN:
                depth += 1
            elif tok.text in _CLOSE:
                depth = max(0, depth - 1)

    idx.statement_boundaries = sorted(
        {idx.line_at(tokens[ti].start).start for ti in logical_starts if tokens[ti].kind != "comment"}
    )

    for ti in logical_starts:
        tok = tokens[ti]
        if tok.kind == "keyword" and tok.text == "def":
            fn = _scan_function(idx, tokens, ti)
            if fn is not None:
                idx.function_defs.append(fn)
        elif tok.kind == "keyword" and tok.text == "for":
            loop = _scan_for(idx, tokens, ti)
            if loop is not None:
                idx.for_loops.append(loop)

    if idx.function_defs:
        idx.docstring = _find_docstring(idx, idx.function_defs[0])

    _scan_comparisons(idx, tokens)
    return idx


def _header_colon(tokens: list[Token], ti: int) -> int | None:
    """Index of the ``:`` that closes the compound-statement header at ti."""
    depth = 0
    for tj in range(ti, len(tokens)):
        tok = tokens[tj]
        if tok.kind == "delimiter":
            if tok.text in _OPEN:
                depth += 1
            elif tok.text in _CLOSE:
                depth -= 1
            elif tok.text == ":" and depth == 0:
                return tj
        elif tok.kind == "newline" and depth == 0:
            return None
    return None


def _block_body(idx: StructureIndex, header_end: int, indent: str) -> tuple[Span | None, str]:
    """Span covering the indented block after a header ending at header_end."""
    lines = idx.line_map
    li = 0
    while li < len(lines) and lines[li].end <= header_end:
        li += 1
    li += 1  # first line after the header line
    body_lines: list[Line] = []
    body_indent = ""
    for line in lines[li:]:
        text = line.text(idx.source)
        if text.strip() == "":
            if body_lines:
                continue  # interior blank line, may still be inside the block
            continue
        if len(line.leading_ws) <= len(indent):
            break
        if not body_indent:
            body_indent = line.leading_ws
        body_lines.append(line)
    if not body_lines:
        return None, body_indent
    return Span(body_lines[0].start, body_lines[-1].end), body_indent


def _scan_function(idx: StructureIndex, tokens: list[Token], ti: int) -> FunctionDef | None:
    if ti + 1 >= len(tokens) or tokens[ti + 1].kind != "identifier":
        return None
    name = tokens[ti + 1]
    colon = _header_colon(tokens, ti)
    if colon is None:
        return None
    indent = idx.line_at(tokens[ti].start).leading_ws
    body_span, body_indent = _block_body(idx, tokens[colon].end, indent)
    return FunctionDef(
        name_token=name,
        header_span=Span(tokens[ti].start, tokens[colon].end),
        body_span=body_span,
        body_indent=body_indent,
        indent=indent,
    )


def _scan_for(idx: StructureIndex, tokens: list[Token], ti: int) -> ForLoop | None:
    if ti + 2 >= len(tokens):
        return None
    target = tokens[ti + 1]
    in_tok = tokens[ti + 2]
    if target.kind != "identifier" or in_tok.kind != "keyword" or in_tok.text != "in":
        return None  # tuple targets and the async form are not rewrite sites
    colon = _header_colon(tokens, ti)
    if colon is None or colon <= ti + 3:
        return None
    iterable_tokens = [
        t for t in tokens[ti + 3 : colon] if t.kind not in ("newline", "indent-run", "comment")
    ]
    if not iterable_tokens:
        return None
    iterable_span = Span(iterable_tokens[0].start, iterable_tokens[-1].end)
    simple = len(iterable_tokens) == 1 and iterable_tokens[0].kind == "identifier"
    indent = idx.line_at(tokens[ti].start).leading_ws
    body_span, body_indent = _block_body(idx, tokens[colon].end, indent)
    return ForLoop(
        target_token=target,
        iterable_span=iterable_span,
        header_span=Span(tokens[ti].start, tokens[colon].end),
        body_span=body_span,
        indent=indent,
        body_indent=body_indent,
        simple_iterable=simple,
    )


def _find_docstring(idx: StructureIndex, fn: FunctionDef) -> Span | None:
    if fn.body_span is None:
        return None
    for tok in idx.tokens:
        if tok.start < fn.body_span.start:
            continue
        if tok.start >= fn.body_span.end:
            break
        if tok.kind in ("newline", "indent-run", "comment"):
            continue
        return tok.span if tok.kind == "string" else None
    return None


def _scan_comparisons(idx: StructureIndex, tokens: list[Token]) -> None:
    code = [t for t in tokens if t.kind not in ("newline", "indent-run", "comment")]
    newline_set = {t.start for t in tokens if t.kind == "newline"}

    def is_stop(tok: Token) -> bool:
        if tok.kind == "keyword" and tok.text in _OPERAND_STOP_KEYWORDS:
            return True
        if tok.kind == "operator" and (tok.text.endswith("=") and tok.text not in _COMPARISON_OPS):
            return True  # assignments and augmented assignments
        if tok.kind == "operator" and tok.text in _COMPARISON_OPS:
            return True
        if tok.kind == "delimiter" and tok.text in (",", ":", ";"):
            return True
        return False

    for ci, tok in enumerate(code):
        if tok.kind != "operator" or tok.text not in _COMPARISON_OPS:
            continue
        left, left_stop = _operand_left(code, ci, is_stop)
        right, right_stop = _operand_right(code, ci, is_stop)
        if left is None or right is None:
            continue
        chained = any(
            s is not None and s.kind == "operator" and s.text in _COMPARISON_OPS
            for s in (left_stop, right_stop)
        )
        if chained:
            continue
        # A newline between operand and operator would mean a bracketed
        # multi-line expression; spans remain valid either way.
        idx.comparisons.append(Comparison(left, tok, right))
    del newline_set


def _operand_left(code: list[Token], ci: int, is_stop) -> tuple[Span | None, Token | None]:
    depth = 0
    end = None
    start = None
    j = ci - 1
    while j >= 0:
        tok = code[j]
        if tok.kind == "delimiter" and tok.text in _CLOSE:
            depth += 1
        elif tok.kind == "delimiter" and tok.text in _OPEN:
            if depth == 0:
                return (Span(start, end) if start is not None else None), tok
            depth -= 1
        elif depth == 0 and is_stop(tok):
            return (Span(start, end) if start is not None else None), tok
        if end is None:
            end = tok.end
        start = tok.start
        j -= 1
    return (Span(start, end) if start is not None else None), None


def _operand_right(code: list[Token], ci: int, is_stop) -> tuple[Span | None, Token | None]:
    depth = 0
    start = None
    end = None
    j = ci + 1
    while j < len(code):
        tok = code[j]
        if tok.kind == "delimiter" and tok.text in _OPEN:
            depth += 1
        elif tok.kind == "delimiter" and tok.text in _CLOSE:
            if depth == 0:
                return (Span(start, end) if start is not None else None), tok
            depth -= 1
        elif depth == 0 and is_stop(tok):
            return (Span(start, end) if start is not None else None), tok
        if start is None:
            start = tok.start
        end = tok.end
        j += 1
    return (Span(start, end) if start is not None else None), None


# ---------------------------------------------------------------------------
# Edits


def splice(source: str, edits: list[tuple[Span, str]]) -> str:
    """Apply span replacements, validating bounds and overlap first.

    Edits are applied right to left so earlier spans stay valid; the caller
    supplies spans into the original source only.
    """
    ordered = sorted(edits, key=lambda e: (e[0].start, e[0].end))
    prev_end = 0
    for (start, end), _ in ordered:
        if not (0 <= start <= end <= len(source)):
            raise ValueError(f"edit span ({start}, {end}) out of bounds for length {len(source)}")
        if start < prev_end:
            raise ValueError(f"overlapping edit spans at offset {start}")
        prev_end = end
    out = source
    for (start, end), replacement in reversed(ordered):
        out = out[:start] + replacement + out[end:]
    return out


_WORD_BOUNDARY = r"(?<![0-9A-Za-z_]){}(?![0-9A-Za-z_])"


def rename_edits(source: str, old: str, new: str, scope: str = "everywhere") -> list[tuple[Span, str]]:
    """Span replacements that rename identifier ``old`` to ``new``.

    With the default ``everywhere`` scope, whole-word matches inside string
    literals and comments are rewritten too, so doctest invocations and
    prose mentions follow the identifier.  ``code-only`` restricts the edit
    to identifier tokens.
    """
    if not new.isidentifier() or keyword.iskeyword(new):
        raise ValueError(f"{new!r} is not a usable identifier")
    if scope not in ("everywhere", "code-only"):
        raise ValueError(f"unknown rename scope {scope!r}")
    word = re.compile(_WORD_BOUNDARY.format(re.escape(old)))
    edits: list[tuple[Span, str]] = []
    for tok in lex(source):
        if tok.kind == "identifier" and tok.text == old:
            edits.append((tok.span, new))
        elif scope == "everywhere" and tok.kind in ("string", "comment"):
            replaced = word.sub(new, tok.text)
            if replaced != tok.text:
                edits.append((tok.span, replaced))
    return edits


def rename_identifier(source: str, old: str, new: str, scope: str = "everywhere") -> str:
    """Rename every identifier token ``old`` to ``new``; see rename_edits."""
    return splice(source, rename_edits(source, old, new, scope))
