"""Black-box adversarial search over task descriptions.

Four strategies, all driven by a pluggable scorer that maps a candidate
task to an adversarial score in [0,1] (1 means the model fails the oracle
on it): greedy saliency-guided word substitution, greedy character
manipulation, their combination, and a discrete particle swarm.  Gradient
methods are registered so reports can name them, but they cannot run
against a black-box target and say so when asked.

Every candidate a search scores differs from the input only inside the
docstring description, so an "adversarial" prompt still specifies the same
function.
"""

from __future__ import annotations

import json
import math
import random
import re
import shlex
import subprocess
from dataclasses import dataclass, field

from .corpus import Task
from .perturb_code import QWERTY_NEIGHBORS
from .perturb_nl import description_spans, match_case
from .pylex import Span, index, splice
from .registry import (
    DEFAULT_SEED,
    GradientAccessError,
    Perturbation,
    PerturbError,
    register,
)

DEFAULT_BUDGET = 200
UNK_MARKER = "UNK"
CHAR_OPS = ("swap", "substitute", "delete", "insert")

_WORD_RE = re.compile(r"[A-Za-z]+")


class BudgetExceededError(PerturbError):
    """One more query would pass the scorer's budget."""


class Scorer:
    """Counts queries against a budget; subclasses provide _evaluate."""

    def __init__(self, query_budget: int = DEFAULT_BUDGET):
        if query_budget < 0:
            raise PerturbError("query budget must be >= 0")
        self.query_budget = query_budget
        self.queries_used = 0

    @property
    def remaining(self) -> int:
        return self.query_budget - self.queries_used

    def score(self, task: Task) -> float:
        if self.queries_used >= self.query_budget:
            raise BudgetExceededError(f"query budget {self.query_budget} exhausted")
        self.queries_used += 1
        value = float(self._evaluate(task))
        if math.isnan(value) or value < -1e-9 or value > 1 + 1e-9:
            raise PerturbError(f"scorer returned {value!r}, expected a value in [0,1]")
        return min(1.0, max(0.0, value))

    def _evaluate(self, task: Task) -> float:
        raise NotImplementedError


class CallableScorer(Scorer):
    def __init__(self, fn, query_budget: int = DEFAULT_BUDGET):
        super().__init__(query_budget)
        self._fn = fn

    def _evaluate(self, task: Task) -> float:
        return self._fn(task)


class CommandScorer(Scorer):
    """Scores through an external command: task JSON in, score line out."""

    def __init__(self, command: str, query_budget: int = DEFAULT_BUDGET, timeout: float = 60.0):
        super().__init__(query_budget)
        self.command = command
        self.timeout = timeout

    def _evaluate(self, task: Task) -> float:
        try:
            proc = subprocess.run(
                shlex.split(self.command),
                input=json.dumps(task.to_record()),
                capture_output=True,
                text=True,
                timeout=self.timeout,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise PerturbError(f"scorer command failed: {exc}") from exc
        if proc.returncode != 0:
            detail = proc.stderr.strip() or f"exit {proc.returncode}"
            raise PerturbError(f"scorer command failed: {detail}")
        line = proc.stdout.strip().splitlines()
        if not line:
            raise PerturbError("scorer command printed no score")
        try:
            return float(line[0])
        except ValueError as exc:
            raise PerturbError(f"scorer command printed {line[0]!r}, not a number") from exc


@dataclass(slots=True)
class AttackResult:
    success: bool
    best_task: Task
    best_score: float
    queries: int
    trace: list[tuple[str, float]] = field(default_factory=list)


class SaliencyRanking(list):
    """Positions sorted by descending saliency; truncated marks a budget cut."""

    truncated = False


@dataclass(slots=True)
class DescriptionView:
    """Word positions of the docstring description, with substitution."""

    task: Task
    words: list[tuple[Span, str]]

    @classmethod
    def of(cls, task: Task) -> "DescriptionView":
        idx = index(task.prompt)
        words: list[tuple[Span, str]] = []
        if idx.docstring is not None:
            for s in description_spans(task.prompt, idx.docstring):
                for m in _WORD_RE.finditer(task.prompt[s.start : s.end]):
                    words.append((Span(s.start + m.start(), s.start + m.end()), m.group()))
        return cls(task, words)

    def replace(self, assignments: dict[int, str]) -> Task:
        edits = []
        for pos, new in sorted(assignments.items()):
            span, old = self.words[pos]
            if new != old:
                edits.append((span, new))
        if not edits:
            return self.task
        return self.task.with_fields(prompt=splice(self.task.prompt, edits))


def _probe_text(word: str, probe: str) -> str:
    return UNK_MARKER if probe == "unk" else ""


def _saliency(
    view: DescriptionView, scorer: Scorer, base: float, probe: str
) -> SaliencyRanking:
    scored = []
    ranking = SaliencyRanking()
    for pos in range(len(view.words)):
        try:
            s = scorer.score(view.replace({pos: _probe_text(view.words[pos][1], probe)}))
        except BudgetExceededError:
            ranking.truncated = True
            break
        scored.append((pos, s - base))
    # Stable: equal saliencies keep original word order.
    scored.sort(key=lambda item: -item[1])
    ranking.extend(scored)
    return ranking


def word_saliency(task: Task, scorer: Scorer, *, base_score: float | None = None) -> SaliencyRanking:
    """Rank description words by how much masking them with UNK moves the score.

    Costs one query per word plus one for the baseline unless base_score is
    supplied.  When the budget runs dry mid-ranking the list covers the
    positions probed so far and is flagged truncated.
    """
    view = DescriptionView.of(task)
    if not view.words:
        raise PerturbError("task description has no words to rank")
    if base_score is None:
        base_score = scorer.score(task)
    return _saliency(view, scorer, base_score, "unk")


def _synonym_candidates(word: str, lexicon) -> list[str]:
    if lexicon is None:
        return []
    variants = lexicon.synonyms.get(word.lower(), [])
    return [match_case(word, v) for v in variants]


def _char_candidates(word: str, ops) -> list[str]:
    out: list[str] = []
    seen = {word}

    def add(cand: str):
        if cand not in seen:
            seen.add(cand)
            out.append(cand)

    if "swap" in ops and len(word) >= 2:
        for i in range(len(word) - 1):
            add(word[:i] + word[i + 1] + word[i] + word[i + 2 :])
    if "substitute" in ops:
        for i, c in enumerate(word):
            for nb in QWERTY_NEIGHBORS.get(c.lower(), ""):
                add(word[:i] + (nb.upper() if c.isupper() else nb) + word[i + 1 :])
    if "delete" in ops and len(word) >= 2:
        for i in range(len(word)):
            add(word[:i] + word[i + 1 :])
    if "insert" in ops:
        for i, c in enumerate(word):
            add(word[: i + 1] + c + word[i + 1 :])
    return out


def _greedy(task: Task, scorer: Scorer, candidate_fn, probe: str) -> AttackResult:
    view = DescriptionView.of(task)
    assignments: dict[int, str] = {}

    def result(score, trace):
        return AttackResult(
            success=score >= 1.0,
            best_task=view.replace(assignments),
            best_score=score,
            queries=scorer.queries_used,
            trace=trace,
        )

    try:
        base = scorer.score(task)
    except BudgetExceededError:
        return AttackResult(False, task, 0.0, scorer.queries_used, [])
    trace = [("baseline", base)]
    current = base
    if current >= 1.0 or not view.words:
        return result(current, trace)

    ranking = _saliency(view, scorer, base, probe)
    for pos, _sal in ranking:
        word = assignments.get(pos, view.words[pos][1])
        step_best: tuple[float, str] | None = None
        exhausted = False
        for cand in candidate_fn(word):
            try:
                s = scorer.score(view.replace({**assignments, pos: cand}))
            except BudgetExceededError:
                exhausted = True
                break
            if step_best is None or s > step_best[0]:
                step_best = (s, cand)
        if step_best is not None and step_best[0] > current:
            current = step_best[0]
            assignments[pos] = step_best[1]
            trace.append((f"{word}->{step_best[1]}", current))
        if current >= 1.0 or exhausted:
            break
    return result(current, trace)


def greedy_word_attack(task: Task, scorer: Scorer, lexicon) -> AttackResult:
    """Substitute synonyms at high-saliency positions, best strict gain first."""
    return _greedy(task, scorer, lambda w: _synonym_candidates(w, lexicon), probe="unk")


def greedy_char_attack(task: Task, scorer: Scorer, ops=CHAR_OPS) -> AttackResult:
    """Apply single-character bugs to words ranked by leave-one-out saliency."""
    ops = tuple(ops)
    if not ops:
        raise PerturbError("greedy_char_attack needs at least one edit op")
    unknown = set(ops) - set(CHAR_OPS)
    if unknown:
        raise PerturbError(f"unknown char ops: {sorted(unknown)}")
    return _greedy(task, scorer, lambda w: _char_candidates(w, ops), probe="drop")


def combined_attack(task: Task, scorer: Scorer, lexicon) -> AttackResult:
    """Score synonym and character-bug candidates together at each step."""
    return _greedy(
        task,
        scorer,
        lambda w: _synonym_candidates(w, lexicon) + _char_candidates(w, CHAR_OPS),
        probe="drop",
    )


@dataclass(slots=True)
class SwarmParams:
    particles: int = 8
    iterations: int = 10
    inertia: float = 0.7
    cognitive: float = 1.5
    social: float = 1.5
    mutation: float = 0.1
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.particles < 1:
            raise PerturbError("swarm needs at least one particle")
        for name in ("inertia", "cognitive", "social", "mutation"):
            if getattr(self, name) < 0:
                raise PerturbError(f"{name} must be >= 0")


def _sigmoid(x: float) -> float:
    if x < -60:
        return 0.0
    return 1.0 / (1.0 + math.exp(-x))


def pso_attack(task: Task, scorer: Scorer, lexicon, params: SwarmParams | None = None) -> AttackResult:
    """Discrete particle swarm over per-position synonym choices.

    A particle assigns each substitutable position one synonym or its
    original word.  Velocities are adoption pressures: after the inertia,
    cognitive and social updates, sigmoid(velocity) gives the probability of
    copying that position from the particle's own best or the global best.
    A little mutation keeps the swarm from collapsing early.
    """
    params = params or SwarmParams()
    view = DescriptionView.of(task)
    rng = random.Random(params.seed)
    choices: list[tuple[int, list[str]]] = []  # (position, [original, syn1, ...])
    for pos, (_span, word) in enumerate(view.words):
        syns = _synonym_candidates(word, lexicon)
        if syns:
            choices.append((pos, [word, *syns]))
    if not choices:
        return AttackResult(False, task, 0.0, 0, [])

    dims = len(choices)

    def to_task(vec):
        return view.replace(
            {pos: opts[vec[d]] for d, (pos, opts) in enumerate(choices) if vec[d] != 0}
        )

    def describe(vec):
        subs = sum(1 for v in vec if v != 0)
        return f"{subs}/{dims} positions substituted"

    swarm = []
    for _ in range(params.particles):
        vec = [rng.randrange(len(opts)) if rng.random() < 0.5 else 0 for _pos, opts in choices]
        swarm.append(vec)
    velocity = [[0.0] * dims for _ in range(params.particles)]

    pbest = [None] * params.particles  # (score, vec)
    gbest: tuple[float, list[int]] | None = None
    trace: list[tuple[str, float]] = []
    queries_cut = False

    def evaluate(i, vec):
        nonlocal gbest, queries_cut
        try:
            s = scorer.score(to_task(vec))
        except BudgetExceededError:
            queries_cut = True
            return False
        if pbest[i] is None or s > pbest[i][0]:
            pbest[i] = (s, vec[:])
        if gbest is None or s > gbest[0]:
            gbest = (s, vec[:])
            trace.append((describe(vec), s))
        return True

    for i, vec in enumerate(swarm):
        if not evaluate(i, vec):
            break

    if gbest is not None and gbest[0] < 1.0 and not queries_cut:
        for _it in range(params.iterations):
            for i in range(params.particles):
                vec = swarm[i]
                for d in range(dims):
                    pull_p = 1.0 if pbest[i][1][d] != vec[d] else 0.0
                    pull_g = 1.0 if gbest[1][d] != vec[d] else 0.0
                    velocity[i][d] = (
                        params.inertia * velocity[i][d]
                        + params.cognitive * rng.random() * pull_p
                        + params.social * rng.random() * pull_g
                    )
                    if rng.random() < _sigmoid(velocity[i][d]):
                        source = pbest[i][1] if rng.random() < 0.5 else gbest[1]
                        vec[d] = source[d]
                    # Mutation always moves, or a converged swarm would freeze.
                    if rng.random() < params.mutation and len(choices[d][1]) > 1:
                        others = [k for k in range(len(choices[d][1])) if k != vec[d]]
                        vec[d] = others[rng.randrange(len(others))]
                if not evaluate(i, vec):
                    break
            if gbest[0] >= 1.0 or queries_cut:
                break

    if gbest is None:
        return AttackResult(False, task, 0.0, scorer.queries_used, [])
    return AttackResult(
        success=gbest[0] >= 1.0,
        best_task=to_task(gbest[1]),
        best_score=gbest[0],
        queries=scorer.queries_used,
        trace=trace,
    )


# ---------------------------------------------------------------------------
# Dispatch and registration

_GRADIENT_IDS = ("FD", "HotFlip")


def run_attack(
    task: Task,
    attack_id: str,
    scorer: Scorer,
    lexicon=None,
    ops=CHAR_OPS,
    params: SwarmParams | None = None,
) -> AttackResult:
    if attack_id in _GRADIENT_IDS:
        raise GradientAccessError(f"{attack_id} requires white-box gradients; out of scope")
    if attack_id == "PWWS":
        return greedy_word_attack(task, scorer, lexicon)
    if attack_id == "DeepWordBug":
        return greedy_char_attack(task, scorer, ops)
    if attack_id == "TextBugger":
        return combined_attack(task, scorer, lexicon)
    if attack_id == "SememePSO":
        return pso_attack(task, scorer, lexicon, params)
    raise PerturbError(f"unknown attack {attack_id!r}")


def _reg(pid, level):
    register(
        Perturbation(id=pid, level=level, target="task-description", kind="attack")
    )


_reg("PWWS", "Word-Level")
_reg("SememePSO", "Word-Level")
_reg("TextBugger", "Word+Character-Level")
_reg("DeepWordBug", "Character-Level")
_reg("FD", "Word-Level")
_reg("HotFlip", "Word+Character-Level")
