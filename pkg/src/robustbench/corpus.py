"""Benchmark task records, JSONL IO, and manual-validation sampling.

Tasks follow the HumanEval record shape: a prompt holding the code context
(signature, docstring, optionally a body), the entry point name, a reference
solution, and a test block that defines ``check``.  Unknown fields ride
along untouched so perturbed corpora keep whatever extra metadata the
source benchmark carried.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from statistics import NormalDist

from .pylex import index

REQUIRED_FIELDS = ("task_id", "prompt", "entry_point", "canonical_solution", "test")


class CorpusError(ValueError):
    pass


@dataclass(slots=True)
class Task:
    task_id: str
    prompt: str
    entry_point: str
    canonical_solution: str
    test: str
    extra: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        rec = {name: getattr(self, name) for name in REQUIRED_FIELDS}
        rec.update(self.extra)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Task":
        missing = [name for name in REQUIRED_FIELDS if name not in rec]
        if missing:
            raise CorpusError(f"task record missing fields: {', '.join(missing)}")
        extra = {k: v for k, v in rec.items() if k not in REQUIRED_FIELDS}
        return cls(*(rec[name] for name in REQUIRED_FIELDS), extra=extra)

    def with_fields(self, **kwargs) -> "Task":
        return replace(self, **kwargs)


def validate_task(task: Task) -> None:
    """Check the structural invariants a task must satisfy to be judged."""
    if not task.task_id:
        raise CorpusError("empty task_id")
    idx = index(task.prompt)
    names = {fn.name_token.text for fn in idx.function_defs}
    if task.entry_point not in names:
        raise CorpusError(
            f"{task.task_id}: prompt defines {sorted(names) or 'no functions'}, "
            f"not entry point {task.entry_point!r}"
        )
    if task.entry_point not in task.test and "def check" not in task.test:
        raise CorpusError(f"{task.task_id}: test invokes neither {task.entry_point!r} nor check()")


def load_corpus(path: str | Path, validate: bool = True) -> list[Task]:
    tasks: list[Task] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            try:
                task = Task.from_record(rec)
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
            if task.task_id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate task_id {task.task_id!r}")
            seen.add(task.task_id)
            if validate:
                try:
                    validate_task(task)
                except CorpusError as exc:
                    raise CorpusError(f"{path}:{lineno}: {exc}") from exc
            tasks.append(task)
    return tasks


def save_corpus(tasks: list[Task], path: str | Path) -> None:
    """Write one JSON object per line; load(save(x)) is byte-stable."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for task in tasks:
            fh.write(json.dumps(task.to_record()) + "\n")


def mini_corpus_path() -> Path:
    """Path of the bundled ten-task corpus used by the tests and demos."""
    return Path(resources.files("robustbench").joinpath("data", "mini_corpus.jsonl"))


# ---------------------------------------------------------------------------
# Sampling for manual validation


@dataclass(slots=True)
class StratumPlan:
    label: str
    population: int


def cochran_sample_size(population: int, confidence: float, margin: float) -> int:
    """Sample size via Cochran's formula with finite-population correction.

    Uses the worst-case proportion p = 0.5.  The result is ceiled and never
    exceeds the population.
    """
    if population <= 0:
        raise ValueError("population must be positive")
    if not 0 < confidence < 1:
        raise ValueError("confidence must be in (0, 1)")
    if not 0 < margin < 1:
        raise ValueError("margin must be in (0, 1)")
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    n0 = (z * z * 0.25) / (margin * margin)
    n = n0 / (1 + (n0 - 1) / population)
    return min(population, math.ceil(n))


def allocate_largest_remainder(plan: list[StratumPlan], total: int) -> list[int]:
    """Hamilton apportionment of ``total`` across strata by population."""
    pop_total = sum(s.population for s in plan)
    if pop_total <= 0:
        raise ValueError("no population to sample from")
    if total > pop_total:
        raise ValueError(f"cannot sample {total} from population {pop_total}")
    quotas = [s.population * total / pop_total for s in plan]
    counts = [math.floor(q) for q in quotas]
    counts = [min(c, s.population) for c, s in zip(counts, plan)]
    leftover = total - sum(counts)
    order = sorted(
        range(len(plan)),
        key=lambda i: (-(quotas[i] - math.floor(quotas[i])), i),
    )
    oi = 0
    while leftover > 0:
        i = order[oi % len(order)]
        if counts[i] < plan[i].population:
            counts[i] += 1
            leftover -= 1
        oi += 1
    return counts


def stratified_sample(
    plan: list[StratumPlan], total: int, seed: int
) -> list[tuple[str, int, list[int]]]:
    """Allocate ``total`` across strata and draw ids uniformly per stratum.

    Ids are indices into each stratum's own population, sorted for
    readability; the draw is deterministic in ``seed``.
    """
    import random

    counts = allocate_largest_remainder(plan, total)
    rng = random.Random(seed)
    out = []
    for stratum, count in zip(plan, counts):
        ids = sorted(rng.sample(range(stratum.population), count))
        out.append((stratum.label, count, ids))
    return out
