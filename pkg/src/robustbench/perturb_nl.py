"""Task-description perturbations: noise and rewrites inside the docstring.

Only the description text is touched.  Code around the docstring keeps its
exact bytes, and doctest material (the ``>>>`` calls plus their expected
output lines) is never modified, so a perturbed task still checks the same
behaviour.
"""

from __future__ import annotations

import random
import re
import shlex
import subprocess
import threading

import requests

from . import lexicon as lexicon_mod
from .corpus import Task
from .perturb_code import QWERTY_NEIGHBORS
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

DEFAULT_P = 0.1  # per-site noise probability shared by the character and word modes

_WORD_RE = re.compile(r"[A-Za-z]+")
_STRING_PREFIX = "rRbBuUfF"


# ---------------------------------------------------------------------------
# Docstring anatomy


def classify_docstring(source: str, doc: Span) -> list[tuple[str, Span]]:
    """Split a docstring span into lines tagged text/doctest/output/blank.

    Spans cover the part of each line inside the quotes.  For text lines the
    span is trimmed to the printable description, so an edit there cannot eat
    the indentation or the closing quotes.  Output lines are everything that
    follows a ``>>>`` call until a blank line, matching how doctest reads.
    """
    body = source[doc.start : doc.end]
    plen = 0
    while plen < len(body) and body[plen] in _STRING_PREFIX:
        plen += 1
    qlen = 3 if body[plen : plen + 3] in ('"""', "'''") else 1
    inner_start = doc.start + plen + qlen
    inner_end = doc.end - qlen
    out = []
    in_doctest = False
    pos = inner_start
    while pos < inner_end:
        nl = source.find("\n", pos, inner_end)
        line_end = nl if nl != -1 else inner_end
        seg = source[pos:line_end]
        stripped = seg.strip()
        if not stripped:
            in_doctest = False
            out.append(("blank", Span(pos, line_end)))
        elif stripped.startswith(">>>"):
            in_doctest = True
            out.append(("doctest", Span(pos, line_end)))
        elif in_doctest:
            out.append(("output", Span(pos, line_end)))
        else:
            lead = len(seg) - len(seg.lstrip())
            trail = len(seg) - len(seg.rstrip())
            out.append(("text", Span(pos + lead, line_end - trail)))
        pos = line_end + 1
    return out


def description_spans(source: str, doc: Span) -> list[Span]:
    return [s for kind, s in classify_docstring(source, doc) if kind == "text" and s.end > s.start]


def _docstring_or_none(task: Task):
    return index(task.prompt).docstring


# ---------------------------------------------------------------------------
# Character-level noise


def _butter_lines(texts: list[str], rng: random.Random, p: float) -> list[str]:
    sites = [
        (li, ci)
        for li, t in enumerate(texts)
        for ci, c in enumerate(t)
        if c.lower() in QWERTY_NEIGHBORS
    ]
    fired = [s for s in sites if rng.random() < p]
    if not fired and sites:
        fired = [sites[rng.randrange(len(sites))]]
    out = [list(t) for t in texts]
    for li, ci in fired:
        c = out[li][ci]
        repl = rng.choice(QWERTY_NEIGHBORS[c.lower()])
        out[li][ci] = repl.upper() if c.isupper() else repl
    return ["".join(t) for t in out]


def _case_lines(texts: list[str], rng: random.Random, p: float) -> list[str]:
    sites = [(li, ci) for li, t in enumerate(texts) for ci, c in enumerate(t) if c.isalpha()]
    fired = [s for s in sites if rng.random() < p]
    if not fired and sites:
        fired = [sites[rng.randrange(len(sites))]]
    out = [list(t) for t in texts]
    for li, ci in fired:
        out[li][ci] = out[li][ci].swapcase()
    return ["".join(t) for t in out]


def _swap_lines(texts: list[str], rng: random.Random, p: float) -> list[str]:
    # Words shorter than four characters keep their spelling; the swap stays
    # interior so the word silhouette survives, as with real typos.
    sites = [
        (li, m.start(), len(m.group()))
        for li, t in enumerate(texts)
        for m in _WORD_RE.finditer(t)
        if len(m.group()) >= 4
    ]
    fired = [s for s in sites if rng.random() < p]
    if not fired and sites:
        fired = [sites[rng.randrange(len(sites))]]
    out = [list(t) for t in texts]
    for li, start, length in fired:
        i = start + rng.randrange(1, length - 2)
        out[li][i], out[li][i + 1] = out[li][i + 1], out[li][i]
    return ["".join(t) for t in out]


def _whitespace_lines(texts: list[str], rng: random.Random, p: float) -> list[str]:
    out = []
    for t in texts:
        built = []
        for c in t:
            if c == " " and rng.random() < p:
                continue
            built.append(c)
            if c != " " and rng.random() < p:
                built.append(" ")
        out.append("".join(built))
    return out


_CHAR_MODES = {
    "butter-finger": _butter_lines,
    "change-case": _case_lines,
    "swap-chars": _swap_lines,
    "whitespace": _whitespace_lines,
}


def char_noise(task: Task, mode: str, seed: int, params: dict | None = None) -> PerturbOutcome:
    params = params or {}
    p = float(params.get("p", DEFAULT_P))
    doc = _docstring_or_none(task)
    if doc is None:
        return _unchanged(task, "no docstring")
    spans = description_spans(task.prompt, doc)
    if not spans:
        return _unchanged(task, "no description text")
    if p <= 0:
        return _unchanged(task, "p=0")
    rng = random.Random(seed)
    texts = [task.prompt[s.start : s.end] for s in spans]
    new_texts = _CHAR_MODES[mode](texts, rng, p)
    edits = [(s, nt) for s, t, nt in zip(spans, texts, new_texts) if nt != t]
    if not edits:
        return _unchanged(task, "noise produced no visible change")
    return _apply_prompt_edits(task, edits)


# ---------------------------------------------------------------------------
# Word-level substitution


def match_case(word: str, repl: str) -> str:
    if word.isupper() and len(word) > 1:
        return repl.upper()
    if word[:1].isupper():
        return repl[:1].upper() + repl[1:]
    return repl


def word_substitute(
    task: Task, mode: str, seed: int, params: dict | None = None, lexicon=None
) -> PerturbOutcome:
    """Insert or swap dictionary words in the description.

    mode "synonym-insert" appends the synonym after the word it matched,
    "synonym-sub" replaces the word, "inflectional" replaces it with an
    inflected form.  Stopwords never match; each eligible word fires with
    probability p, and if none fires one is drawn so an applicable prompt is
    always visibly perturbed.
    """
    params = params or {}
    p = float(params.get("p", DEFAULT_P))
    lexicon = lexicon or lexicon_mod.load_lexicon()
    table = lexicon.inflections if mode == "inflectional" else lexicon.synonyms
    doc = _docstring_or_none(task)
    if doc is None:
        return _unchanged(task, "no docstring")
    spans = description_spans(task.prompt, doc)
    sites = []  # (absolute span of the word, word text)
    for s in spans:
        text = task.prompt[s.start : s.end]
        for m in _WORD_RE.finditer(text):
            w = m.group()
            if w.lower() in lexicon.stopwords or w.lower() not in table:
                continue
            sites.append((Span(s.start + m.start(), s.start + m.end()), w))
    if not sites:
        return _unchanged(task, "no dictionary word in description")
    if p <= 0:
        return _unchanged(task, "p=0")
    rng = random.Random(seed)
    fired = [s for s in sites if rng.random() < p]
    if not fired:
        fired = [sites[rng.randrange(len(sites))]]
    edits = []
    for span, w in fired:
        variant = table[w.lower()][0]
        if mode == "synonym-insert":
            edits.append((Span(span.end, span.end), " " + variant))
        else:
            edits.append((span, match_case(w, variant)))
    return _apply_prompt_edits(task, edits)


# ---------------------------------------------------------------------------
# Sentence-level rewrites


def _sentence_spans(text: str) -> list[tuple[int, int]]:
    spans, start = [], 0
    for i, c in enumerate(text):
        if c in ".!?":
            spans.append((start, i + 1))
            start = i + 1
    if start < len(text):
        spans.append((start, len(text)))
    return spans


_FUTURE_BASE = {
    "is": "be",
    "are": "be",
    "am": "be",
    "was": "be",
    "were": "be",
    "has": "have",
    "had": "have",
    "does": "do",
    "did": "do",
}


def tense_transform(
    task: Task, tense: str, seed: int, params: dict | None = None, lexicon=None
) -> PerturbOutcome:
    """Move the first recognized verb of each sentence to past or future."""
    lexicon = lexicon or lexicon_mod.load_lexicon()
    verbs = lexicon.verbs
    doc = _docstring_or_none(task)
    if doc is None:
        return _unchanged(task, "no docstring")
    edits = []
    for s in description_spans(task.prompt, doc):
        text = task.prompt[s.start : s.end]
        for sent_start, sent_end in _sentence_spans(text):
            for m in _WORD_RE.finditer(text, sent_start, sent_end):
                w = m.group()
                if w.lower() not in verbs:
                    continue
                if tense == "past":
                    repl = match_case(w, verbs[w.lower()][0])
                else:
                    base = _FUTURE_BASE.get(w.lower(), w.lower())
                    repl = match_case(w, "will " + base)
                if repl != w:
                    edits.append((Span(s.start + m.start(), s.start + m.end()), repl))
                break
    if not edits:
        return _unchanged(task, "no recognized verb in description")
    return _apply_prompt_edits(task, edits)


class Translator:
    """Round-trips text through a pivot language.

    http mode POSTs ``{"text", "source", "target"}`` to the endpoint and
    expects ``{"text"}`` back.  command mode runs a template whose {SRC} and
    {TGT} placeholders name the language pair, text on stdin, translation on
    stdout.  identity mode returns the input, which keeps pipelines runnable
    with no service attached.  A failing backend raises; silently skipping a
    perturbation would bias every downstream metric.
    """

    MAX_INFLIGHT = 4

    def __init__(
        self,
        mode: str = "identity",
        endpoint: str = "",
        command: str = "",
        pivot: str = "de",
        timeout: float = 30.0,
    ):
        if mode not in ("identity", "http", "command"):
            raise PerturbError(f"unknown translator mode {mode!r}")
        if mode == "http" and not endpoint:
            raise PerturbError("http translator needs an endpoint")
        if mode == "command" and not command:
            raise PerturbError("command translator needs a command template")
        self.mode = mode
        self.endpoint = endpoint
        self.command = command
        self.pivot = pivot
        self.timeout = timeout
        self._gate = threading.Semaphore(self.MAX_INFLIGHT)

    @classmethod
    def from_params(cls, params: dict) -> "Translator":
        kwargs = {k: params[k] for k in ("mode", "endpoint", "command", "pivot", "timeout") if k in params}
        if "endpoint" in kwargs and "mode" not in kwargs:
            kwargs["mode"] = "http"
        elif "command" in kwargs and "mode" not in kwargs:
            kwargs["mode"] = "command"
        return cls(**kwargs)

    def translate(self, text: str, source: str, target: str) -> str:
        if self.mode == "identity":
            return text
        with self._gate:
            if self.mode == "http":
                return self._via_http(text, source, target)
            return self._via_command(text, source, target)

    def round_trip(self, text: str, source: str = "en") -> str:
        pivoted = self.translate(text, source, self.pivot)
        return self.translate(pivoted, self.pivot, source)

    def _via_http(self, text: str, source: str, target: str) -> str:
        try:
            resp = requests.post(
                self.endpoint,
                json={"text": text, "source": source, "target": target},
                timeout=self.timeout,
            )
            resp.raise_for_status()
            body = resp.json()
        except requests.RequestException as exc:
            raise PerturbError(f"translation request failed: {exc}") from exc
        except ValueError as exc:
            raise PerturbError(f"translation endpoint returned invalid JSON: {exc}") from exc
        if not isinstance(body, dict) or "text" not in body:
            raise PerturbError("translation endpoint response lacks a 'text' field")
        return str(body["text"])

    def _via_command(self, text: str, source: str, target: str) -> str:
        argv = [
            part.replace("{SRC}", source).replace("{TGT}", target)
            for part in shlex.split(self.command)
        ]
        try:
            proc = subprocess.run(
                argv, input=text, capture_output=True, text=True, timeout=self.timeout
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise PerturbError(f"translation command failed: {exc}") from exc
        if proc.returncode != 0:
            detail = proc.stderr.strip() or f"exit {proc.returncode}"
            raise PerturbError(f"translation command failed: {detail}")
        return proc.stdout.rstrip("\n")


def back_translate(
    task: Task, seed: int = 0, params: dict | None = None, translator: Translator | None = None
) -> PerturbOutcome:
    translator = translator or Translator()
    doc = _docstring_or_none(task)
    if doc is None:
        return _unchanged(task, "no docstring")
    spans = description_spans(task.prompt, doc)
    if not spans:
        return _unchanged(task, "no description text")
    edits = []
    for s in spans:
        text = task.prompt[s.start : s.end]
        rendered = translator.round_trip(text)
        # Keep the docstring one line per line; a translator that emits
        # newlines would otherwise corrupt the prompt layout.
        rendered = " ".join(rendered.splitlines()) if "\n" in rendered else rendered
        if rendered != text:
            edits.append((s, rendered))
    if not edits:
        return _unchanged(task, "translation returned the input unchanged")
    return _apply_prompt_edits(task, edits)


# ---------------------------------------------------------------------------
# Layout


def newline_after_doc(task: Task, seed: int = 0) -> PerturbOutcome:
    idx = index(task.prompt)
    doc = idx.docstring
    if doc is None:
        return _unchanged(task, "no docstring")
    line = idx.line_at(doc.end - 1)
    return _apply_prompt_edits(task, [(Span(line.end, line.end), "\n")])


# ---------------------------------------------------------------------------
# Dispatch and registration


def apply_nl_perturbation(
    task: Task, spec: PerturbationSpec, lexicon=None, translator=None
) -> PerturbOutcome:
    from .registry import get

    entry = get(spec.id)
    if entry.target != "task-description":
        raise PerturbError(f"{spec.id} does not target the task description")
    kwargs = {}
    if "lexicon" in entry.needs:
        kwargs["lexicon"] = lexicon
    if "translator" in entry.needs:
        kwargs["translator"] = translator
    return entry.fn(task, spec, **kwargs)


def _reg(pid, level, fn, needs=()):
    register(
        Perturbation(
            id=pid,
            level=level,
            target="task-description",
            kind="transform",
            fn=fn,
            needs=frozenset(needs),
        )
    )


_reg(
    "ButterFingersPerturbation",
    "Character-Level",
    lambda t, s: char_noise(t, "butter-finger", s.seed, s.params),
)
_reg(
    "ChangeCharCase",
    "Character-Level",
    lambda t, s: char_noise(t, "change-case", s.seed, s.params),
)
_reg(
    "SwapCharactersPerturbation",
    "Character-Level",
    lambda t, s: char_noise(t, "swap-chars", s.seed, s.params),
)
_reg(
    "WhitespacePerturbation",
    "Character-Level",
    lambda t, s: char_noise(t, "whitespace", s.seed, s.params),
)
_reg(
    "SynonymInsertion",
    "Word-Level",
    lambda t, s, lexicon=None: word_substitute(t, "synonym-insert", s.seed, s.params, lexicon),
    needs=("lexicon",),
)
_reg(
    "SynonymSubstitution",
    "Word-Level",
    lambda t, s, lexicon=None: word_substitute(t, "synonym-sub", s.seed, s.params, lexicon),
    needs=("lexicon",),
)
_reg(
    "EnglishInflectionalVariation",
    "Word-Level",
    lambda t, s, lexicon=None: word_substitute(t, "inflectional", s.seed, s.params, lexicon),
    needs=("lexicon",),
)
_reg(
    "BackTranslation",
    "Sentence-Level",
    lambda t, s, translator=None: back_translate(
        t, s.seed, s.params, translator or Translator.from_params(s.params.get("translator", {}))
    ),
    needs=("translator",),
)
_reg(
    "TenseTransformationPast",
    "Sentence-Level",
    lambda t, s, lexicon=None: tense_transform(t, "past", s.seed, s.params, lexicon),
    needs=("lexicon",),
)
_reg(
    "TenseTransformationFuture",
    "Sentence-Level",
    lambda t, s, lexicon=None: tense_transform(t, "future", s.seed, s.params, lexicon),
    needs=("lexicon",),
)
# The source taxonomy files this label under Statement-Level even though it
# lives with the sentence transforms; reported verbatim.
_reg("new_line_afterdoc", "Statement-Level", lambda t, s: newline_after_doc(t, s.seed))
