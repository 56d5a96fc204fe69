"""Robustness metrics and paired significance tests.

Conventions follow the unbiased pass@k estimator family: a task with n
samples and c correct ones has pass@k = 1 - C(n-c, k)/C(n, k).  The robust
variants replace c with worst-case counts across perturbation seeds, and
the relative-change metric counts flips in both directions, so its k-form
ranges over [0, 2].
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field, replace
from statistics import NormalDist, median


def comb(n: int, k: int) -> int:
    """Binomial coefficient with the out-of-range cases pinned to zero."""
    if k < 0 or n < 0 or k > n:
        return 0
    return math.comb(n, k)


def pass_at_k(n: int, c: int, k: int) -> float:
    if not 0 <= c <= n:
        raise ValueError(f"correct count {c} outside [0, {n}]")
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    return 1.0 - comb(n - c, k) / comb(n, k)


@dataclass(slots=True)
class CorrectnessMatrix:
    """Per-sample correctness for one perturbation against the baseline.

    ``original[t][i]`` is sample i of task t judged on the unperturbed task;
    ``perturbed[seed][t][i]`` is the same sample slot judged under the
    perturbation at that seed.  All columns share task order and n.
    """

    task_ids: list[str]
    n: int
    original: list[list[bool]]
    perturbed: dict[int, list[list[bool]]] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.original) != len(self.task_ids):
            raise ValueError("original column length does not match task list")
        for row in self.original:
            if len(row) != self.n:
                raise ValueError(f"expected {self.n} samples per task")
        for seed, column in self.perturbed.items():
            if len(column) != len(self.task_ids):
                raise ValueError(f"seed {seed}: column length does not match task list")
            for row in column:
                if len(row) != self.n:
                    raise ValueError(f"seed {seed}: expected {self.n} samples per task")

    def robust_correct(self, t: int) -> int:
        """Samples of task t correct under every perturbation seed."""
        if not self.perturbed:
            raise ValueError("no perturbed columns")
        return sum(
            1
            for i in range(self.n)
            if all(column[t][i] for column in self.perturbed.values())
        )

    def original_correct(self, t: int) -> int:
        return sum(self.original[t])


def baseline_pass_at_k(matrix: CorrectnessMatrix, k: int) -> float:
    values = [pass_at_k(matrix.n, matrix.original_correct(t), k) for t in range(len(matrix.task_ids))]
    return sum(values) / len(values) if values else 0.0


def robust_pass_at_k(matrix: CorrectnessMatrix, k: int) -> float:
    """Mean over tasks of pass@k computed on worst-case-across-seeds counts."""
    values = [pass_at_k(matrix.n, matrix.robust_correct(t), k) for t in range(len(matrix.task_ids))]
    return sum(values) / len(values) if values else 0.0


def robust_drop(passatk: float, rp: float) -> float:
    """Relative drop (pass@k - RP@k) / pass@k; signed, negative on gains."""
    if passatk == 0:
        warnings.warn("pass@k is zero; robust drop reported as 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return (passatk - rp) / passatk


@dataclass(slots=True)
class FlipCounts:
    rc_plus: int  # tasks wrong originally, correct under perturbation
    rc_minus: int  # tasks correct originally, wrong under perturbation
    n_tasks: int


def flip_counts(matrix: CorrectnessMatrix) -> FlipCounts:
    if matrix.n != 1:
        raise ValueError("task-level flip counts are defined for n=1; use robust_rel_at_k")
    plus = minus = 0
    for t in range(len(matrix.task_ids)):
        orig = matrix.original[t][0]
        pert = all(column[t][0] for column in matrix.perturbed.values())
        if orig and not pert:
            minus += 1
        elif pert and not orig:
            plus += 1
    return FlipCounts(rc_plus=plus, rc_minus=minus, n_tasks=len(matrix.task_ids))


def robust_rel_at_1(counts: FlipCounts) -> float:
    if counts.n_tasks <= 0:
        raise ValueError("no tasks")
    return (counts.rc_plus + counts.rc_minus) / counts.n_tasks


def robust_rel_at_k(matrix: CorrectnessMatrix, k: int) -> float:
    """Two-sided flip metric in [0, 2]; reduces to robust_rel_at_1 at n=k=1."""
    n = matrix.n
    terms = []
    for t in range(len(matrix.task_ids)):
        rc_minus = rc_plus = 0
        for i in range(n):
            orig = matrix.original[t][i]
            pert = all(column[t][i] for column in matrix.perturbed.values())
            if orig and not pert:
                rc_minus += 1
            elif pert and not orig:
                rc_plus += 1
        terms.append(2.0 - comb(n - rc_minus, k) / comb(n, k) - comb(n - rc_plus, k) / comb(n, k))
    return sum(terms) / len(terms) if terms else 0.0


# ---------------------------------------------------------------------------
# Paired significance


@dataclass(slots=True)
class StatTestResult:
    w_statistic: float
    n_nonzero: int
    p_value: float
    effect_r: float
    z: float
    method: str  # "exact" or "normal"
    alternative: str
    p_bonferroni: float | None = None
    label: str = ""


def _average_ranks(values: list[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for t in order[i : j + 1]:
            ranks[t] = avg
        i = j + 1
    return ranks


def _exact_cdf_counts(n: int) -> list[int]:
    """counts[s] = number of sign assignments of ranks 1..n with positive-rank sum s."""
    max_sum = n * (n + 1) // 2
    counts = [0] * (max_sum + 1)
    counts[0] = 1
    for r in range(1, n + 1):
        for s in range(max_sum, r - 1, -1):
            counts[s] += counts[s - r]
    return counts


def wilcoxon_signed_rank(
    pairs: list[tuple[float, float]], alternative: str = "two-sided"
) -> StatTestResult:
    """Wilcoxon signed-rank test on paired values.

    Zero differences are dropped; tied absolute differences get average
    ranks.  W is min(W+, W-).  The exact null distribution is used when at
    most 25 nonzero pairs remain and no ties occur; otherwise the normal
    approximation Z = (W - n(n+1)/4) / sqrt(n(n+1)(2n+1)/24), with no
    continuity correction.  The effect size r = |Z| / sqrt(n) always comes
    from that Z, even when the p-value is exact.
    """
    if alternative not in ("two-sided", "one-sided"):
        raise ValueError(f"unknown alternative {alternative!r}")
    diffs = [a - b for a, b in pairs if a != b]
    n = len(diffs)
    if n == 0:
        raise ValueError("all paired differences are zero; test undefined")
    magnitudes = [abs(d) for d in diffs]
    ranks = _average_ranks(magnitudes)
    w_plus = sum(r for r, d in zip(ranks, diffs) if d > 0)
    w_minus = sum(r for r, d in zip(ranks, diffs) if d < 0)
    w = min(w_plus, w_minus)

    mean = n * (n + 1) / 4
    sd = math.sqrt(n * (n + 1) * (2 * n + 1) / 24)
    z = (w - mean) / sd
    effect_r = abs(z) / math.sqrt(n)

    has_ties = len(set(magnitudes)) != n
    if n <= 25 and not has_ties:
        counts = _exact_cdf_counts(n)
        below = sum(counts[: int(w) + 1])
        p_one = below / (1 << n)
        method = "exact"
    else:
        p_one = NormalDist().cdf(z)
        method = "normal"
    p = p_one if alternative == "one-sided" else min(1.0, 2 * p_one)
    return StatTestResult(
        w_statistic=w,
        n_nonzero=n,
        p_value=p,
        effect_r=effect_r,
        z=z,
        method=method,
        alternative=alternative,
    )


def bonferroni(p: float, m: int, capped: bool = False) -> float:
    """Multiply the p-value by the family size; uncapped by default.

    Uncapped values above 1 are reported as-is so corrected columns remain
    comparable across rows (the capped form is available behind the flag).
    """
    if m <= 0:
        raise ValueError("family size must be positive")
    out = p * m
    return min(1.0, out) if capped else out


# ---------------------------------------------------------------------------
# Report rows


@dataclass(slots=True)
class MetricRow:
    perturbation_id: str
    level: str
    passatk: float  # baseline pass@k for the run
    rp: float  # pass@k measured under the perturbation (worst case)
    drop: float  # signed fraction, (passatk - rp) / passatk
    rel: float  # relative-change metric
    applied_tasks: int = 0
    total_tasks: int = 0
    error: str = ""


MEDIAN_ID = "Median"


def median_by_level(rows: list[MetricRow]) -> list[MetricRow]:
    """One synthetic row per level holding column-wise medians.

    Levels keep first-appearance order; an even row count medians to the
    mean of the two middle values.
    """
    levels: list[str] = []
    for row in rows:
        if row.level not in levels:
            levels.append(row.level)
    out = []
    for level in levels:
        group = [r for r in rows if r.level == level]
        out.append(
            MetricRow(
                perturbation_id=MEDIAN_ID,
                level=level,
                passatk=median(r.passatk for r in group),
                rp=median(r.rp for r in group),
                drop=median(r.drop for r in group),
                rel=median(r.rel for r in group),
                applied_tasks=0,
                total_tasks=group[0].total_tasks,
            )
        )
    return out


def format_pct(value: float) -> str:
    return f"{value * 100:.2f}"


def rows_to_csv(rows: list[MetricRow], include_medians: bool = True) -> str:
    """Render rows in the table layout: the passatk column carries the pass
    rate measured under each perturbation, drops and rels as percentages."""
    all_rows = list(rows)
    if include_medians:
        all_rows += median_by_level(rows)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["level", "method", "passatk", "drop_pct", "rel_pct"])
    for row in all_rows:
        writer.writerow(
            [row.level, row.perturbation_id, f"{row.rp:.3f}", format_pct(row.drop), format_pct(row.rel)]
        )
    return buf.getvalue()


def stats_to_csv(stats: list[StatTestResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["w_statistic", "p_value", "p_bonferroni", "effect_r"])
    for s in stats:
        w = int(s.w_statistic) if float(s.w_statistic).is_integer() else s.w_statistic
        pb = "" if s.p_bonferroni is None else f"{s.p_bonferroni:.9g}"
        writer.writerow([w, f"{s.p_value:.9g}", pb, f"{s.effect_r:.9g}"])
    return buf.getvalue()


def apply_bonferroni(stats: list[StatTestResult], m: int | None = None, capped: bool = False) -> list[StatTestResult]:
    family = m if m is not None else len(stats)
    return [replace(s, p_bonferroni=bonferroni(s.p_value, family, capped)) for s in stats]
