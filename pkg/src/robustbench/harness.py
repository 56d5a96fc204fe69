"""End-to-end orchestration: perturb, complete, judge, report.

The harness owns the three process boundaries of a run: the completion
provider (a command fed task JSONL on stdin, emitting completion JSONL on
stdout), the execution runner (a long-lived worker speaking line-delimited
JSON with a READY handshake), and the report files.  Everything between
those boundaries is deterministic, so identical manifests give identical
reports whenever the provider and oracle are deterministic.
"""

from __future__ import annotations

import json
import os
import queue
import shlex
import subprocess
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .corpus import Task, load_corpus, save_corpus
from .lexicon import load_lexicon
from .metrics import (
    CorrectnessMatrix,
    MetricRow,
    StatTestResult,
    apply_bonferroni,
    baseline_pass_at_k,
    median_by_level,
    robust_drop,
    robust_pass_at_k,
    robust_rel_at_k,
    rows_to_csv,
    stats_to_csv,
    wilcoxon_signed_rank,
)
from .registry import DEFAULT_SEED, PerturbationSpec, apply_perturbation, get

RUNNER_ENV = "ROBUSTBENCH_RUNNER"


class HarnessError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Configuration


@dataclass(slots=True)
class ProviderConfig:
    mode: str  # "command" | "file"
    command_template: str = ""
    completions_path: str = ""
    samples_per_task: int = 1
    timeout: float = 600.0

    def __post_init__(self):
        if self.mode not in ("command", "file"):
            raise HarnessError(f"unknown provider mode {self.mode!r}")
        if self.mode == "command" and (not self.command_template or self.completions_path):
            raise HarnessError("command mode takes command_template and no completions_path")
        if self.mode == "file" and (not self.completions_path or self.command_template):
            raise HarnessError("file mode takes completions_path and no command_template")
        if self.samples_per_task < 1:
            raise HarnessError("samples_per_task must be >= 1")


@dataclass(slots=True)
class OracleConfig:
    mode: str = "runner"  # "runner" | "precomputed"
    runner_path: str = ""
    per_task_timeout: float = 15.0
    max_parallel: int = 0  # 0 means one worker per core

    def __post_init__(self):
        if self.mode not in ("runner", "precomputed"):
            raise HarnessError(f"unknown oracle mode {self.mode!r}")
        if self.per_task_timeout <= 0:
            raise HarnessError("per_task_timeout must be positive")

    def resolved_runner(self) -> str:
        override = os.environ.get(RUNNER_ENV, "")
        command = override or self.runner_path
        if not command:
            raise HarnessError(
                f"no runner configured: set OracleConfig.runner_path or {RUNNER_ENV}"
            )
        return command

    def workers(self, jobs: int) -> int:
        cap = self.max_parallel or os.cpu_count() or 1
        return max(1, min(cap, jobs))


@dataclass(slots=True)
class CompletionRecord:
    task_id: str
    completion: str


@dataclass(slots=True)
class JudgedRecord:
    task_id: str
    completion: str
    ori_pred: str | None
    result: str
    passed: bool
    mean_logp: float | None = None

    def to_record(self) -> dict:
        return {
            "task_id": self.task_id,
            "completion": self.completion,
            "ori_pred": self.ori_pred,
            "result": self.result,
            "passed": self.passed,
            "mean_logp": self.mean_logp,
        }


# ---------------------------------------------------------------------------
# Perturbation stage


@dataclass(slots=True)
class PerturbedCorpus:
    spec: PerturbationSpec
    tasks: list[Task]
    applied: dict[str, bool] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)

    @property
    def applied_count(self) -> int:
        return sum(1 for v in self.applied.values() if v)


def perturb_corpus(
    corpus: list[Task],
    specs: list[PerturbationSpec],
    lexicon=None,
    translator=None,
) -> dict[str, PerturbedCorpus]:
    """One perturbed corpus per spec; every task kept, applied or not.

    A task a transform cannot touch passes through unchanged with
    applied=false; a task that makes the transform raise is passed through
    too, with the error recorded, so a single bad task never sinks a run.
    """
    seen = set()
    for spec in specs:
        if spec.id in seen:
            raise HarnessError(f"duplicate perturbation {spec.id!r} in one run")
        seen.add(spec.id)
        get(spec.id)  # unknown ids fail before any work happens
    out: dict[str, PerturbedCorpus] = {}
    for spec in specs:
        result = PerturbedCorpus(spec=spec, tasks=[])
        for task in corpus:
            try:
                outcome = apply_perturbation(task, spec, lexicon=lexicon, translator=translator)
            except Exception as exc:  # noqa: BLE001  (aggregated per task by contract)
                result.tasks.append(task)
                result.applied[task.task_id] = False
                result.errors[task.task_id] = str(exc)
                continue
            result.tasks.append(outcome.task)
            result.applied[task.task_id] = outcome.applied
        out[spec.id] = result
    return out


# ---------------------------------------------------------------------------
# Completion stage


def _parse_completion_lines(lines, origin: str) -> list[CompletionRecord]:
    records = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise HarnessError(f"{origin}:{lineno}: malformed completion JSON: {exc}") from exc
        if not isinstance(data, dict) or "task_id" not in data or "completion" not in data:
            raise HarnessError(f"{origin}:{lineno}: completion record needs task_id and completion")
        records.append(CompletionRecord(str(data["task_id"]), str(data["completion"])))
    return records


def _validate_completions(
    corpus: list[Task], records: list[CompletionRecord], n: int, origin: str
) -> None:
    known = {t.task_id for t in corpus}
    counts: dict[str, int] = {}
    for rec in records:
        if rec.task_id not in known:
            raise HarnessError(f"{origin}: completion for unknown task_id {rec.task_id!r}")
        counts[rec.task_id] = counts.get(rec.task_id, 0) + 1
    for task in corpus:
        got = counts.get(task.task_id, 0)
        if got != n:
            raise HarnessError(
                f"{origin}: expected {n} completions for {task.task_id!r}, got {got}"
            )


def obtain_completions(corpus: list[Task], provider: ProviderConfig) -> list[CompletionRecord]:
    if provider.mode == "file":
        path = Path(provider.completions_path)
        if not path.exists():
            raise HarnessError(f"completions file not found: {path}")
        records = _parse_completion_lines(path.read_text().splitlines(), str(path))
    else:
        payload = "".join(json.dumps(t.to_record()) + "\n" for t in corpus)
        argv = shlex.split(provider.command_template)
        try:
            proc = subprocess.run(
                argv, input=payload, capture_output=True, text=True, timeout=provider.timeout
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise HarnessError(f"provider command failed: {exc}") from exc
        if proc.returncode != 0:
            detail = proc.stderr.strip() or f"exit {proc.returncode}"
            raise HarnessError(f"provider command failed: {detail}")
        records = _parse_completion_lines(proc.stdout.splitlines(), "provider output")
    _validate_completions(corpus, records, provider.samples_per_task, "provider")
    return records


# ---------------------------------------------------------------------------
# Judging stage


def assemble_program(task: Task, completion: str) -> str:
    return task.prompt + completion + "\n" + task.test + "\n" + f"check({task.entry_point})" + "\n"


class RunnerClient:
    """One live runner process: READY handshake, then request/response lines."""

    def __init__(self, command: str):
        argv = shlex.split(command)
        try:
            self.proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise HarnessError(f"could not start runner {command!r}: {exc}") from exc
        greeting = self.proc.stdout.readline().strip()
        if greeting != "READY":
            self.close()
            raise HarnessError(f"runner did not greet with READY (got {greeting!r})")

    def execute(self, request_id: str, program: str, timeout_s: float) -> dict:
        payload = json.dumps({"id": request_id, "program": program, "timeout_s": timeout_s})
        try:
            self.proc.stdin.write(payload + "\n")
            self.proc.stdin.flush()
            line = self.proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise HarnessError(f"runner pipe broke: {exc}") from exc
        if not line:
            raise HarnessError("runner closed its output stream")
        try:
            response = json.loads(line)
        except json.JSONDecodeError as exc:
            raise HarnessError(f"runner spoke non-JSON: {line!r}") from exc
        if response.get("id") != request_id:
            raise HarnessError(
                f"runner answered {response.get('id')!r} to request {request_id!r}"
            )
        return response

    def close(self):
        for stream in (self.proc.stdin, self.proc.stdout):
            try:
                if stream:
                    stream.close()
            except OSError:
                pass
        self.proc.terminate()
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()


def _judged_from_response(rec: CompletionRecord, response: dict) -> JudgedRecord:
    passed = bool(response.get("passed"))
    if passed:
        result = "passed"
    else:
        result = f"failed: {response.get('error') or 'tests did not pass'}"
    return JudgedRecord(
        task_id=rec.task_id,
        completion=rec.completion,
        ori_pred=None,
        result=result,
        passed=passed,
    )


def judge(
    corpus: list[Task], completions: list, oracle: OracleConfig
) -> list[JudgedRecord]:
    """Order-stable pass/fail judgment for each completion record."""
    by_id = {t.task_id: t for t in corpus}
    for rec in completions:
        if rec.task_id not in by_id:
            raise HarnessError(f"completion references unknown task_id {rec.task_id!r}")

    if oracle.mode == "precomputed":
        out = []
        for rec in completions:
            if not hasattr(rec, "passed"):
                raise HarnessError("precomputed oracle needs judged records with passed flags")
            out.append(rec)
        return out

    command = oracle.resolved_runner()
    results: list[JudgedRecord | None] = [None] * len(completions)
    jobs: queue.SimpleQueue = queue.SimpleQueue()
    for idx, rec in enumerate(completions):
        jobs.put((idx, rec))
    failures: list[Exception] = []

    def worker():
        try:
            client = RunnerClient(command)
        except HarnessError as exc:
            failures.append(exc)
            return
        try:
            while True:
                try:
                    idx, rec = jobs.get_nowait()
                except queue.Empty:
                    return
                program = assemble_program(by_id[rec.task_id], rec.completion)
                request_id = f"{rec.task_id}#{idx}"
                try:
                    response = client.execute(request_id, program, oracle.per_task_timeout)
                except HarnessError as exc:
                    # The task failed with the runner, not because of its
                    # tests; say so, then start a fresh runner for the rest.
                    results[idx] = JudgedRecord(
                        task_id=rec.task_id,
                        completion=rec.completion,
                        ori_pred=None,
                        result=f"failed: runner error: {exc}",
                        passed=False,
                    )
                    client.close()
                    try:
                        client = RunnerClient(command)
                    except HarnessError as fatal:
                        failures.append(fatal)
                        return
                    continue
                results[idx] = _judged_from_response(rec, response)
        finally:
            client.close()

    threads = [
        threading.Thread(target=worker, daemon=True)
        for _ in range(oracle.workers(len(completions)))
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if failures:
        raise failures[0]
    missing = [i for i, r in enumerate(results) if r is None]
    if missing:
        raise HarnessError(f"judging dropped {len(missing)} completions")
    return results  # type: ignore[return-value]


def attach_ori_pred(
    judged: list[JudgedRecord], baseline: list[JudgedRecord] | None
) -> list[JudgedRecord]:
    """Fill ori_pred with the baseline completion for the same task and slot."""
    if baseline is None:
        for rec in judged:
            rec.ori_pred = rec.completion
        return judged
    slots: dict[str, list[str]] = {}
    for rec in baseline:
        slots.setdefault(rec.task_id, []).append(rec.completion)
    cursor: dict[str, int] = {}
    for rec in judged:
        i = cursor.get(rec.task_id, 0)
        cursor[rec.task_id] = i + 1
        preds = slots.get(rec.task_id, [])
        rec.ori_pred = preds[i] if i < len(preds) else None
    return judged


# ---------------------------------------------------------------------------
# JSONL persistence


def write_jsonl(path, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        for rec in records:
            data = rec.to_record() if hasattr(rec, "to_record") else asdict(rec)
            fh.write(json.dumps(data, ensure_ascii=False) + "\n")


def load_completions(path) -> list[CompletionRecord]:
    path = Path(path)
    if not path.exists():
        raise HarnessError(f"completions file not found: {path}")
    return _parse_completion_lines(path.read_text().splitlines(), str(path))


def load_judged(path) -> list[JudgedRecord]:
    path = Path(path)
    if not path.exists():
        raise HarnessError(f"judged file not found: {path}")
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise HarnessError(f"{path}:{lineno}: malformed judged JSON: {exc}") from exc
        try:
            out.append(
                JudgedRecord(
                    task_id=str(data["task_id"]),
                    completion=str(data["completion"]),
                    ori_pred=data.get("ori_pred"),
                    result=str(data.get("result", "")),
                    passed=bool(data["passed"]),
                    mean_logp=data.get("mean_logp"),
                )
            )
        except KeyError as exc:
            raise HarnessError(f"{path}:{lineno}: judged record missing {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# Metric assembly


def _columns(corpus: list[Task], judged: list[JudgedRecord], n: int) -> list[list[bool]]:
    per_task: dict[str, list[bool]] = {t.task_id: [] for t in corpus}
    for rec in judged:
        if rec.task_id not in per_task:
            raise HarnessError(f"judged record for unknown task_id {rec.task_id!r}")
        per_task[rec.task_id].append(rec.passed)
    for tid, flags in per_task.items():
        if len(flags) != n:
            raise HarnessError(f"expected {n} judged samples for {tid!r}, got {len(flags)}")
    return [per_task[t.task_id] for t in corpus]


def _degenerate_stat(label: str) -> StatTestResult:
    return StatTestResult(
        w_statistic=0.0,
        n_nonzero=0,
        p_value=1.0,
        effect_r=0.0,
        z=0.0,
        method="degenerate",
        alternative="one-sided",
        label=label,
    )


def report_rows(
    corpus: list[Task],
    baseline: list[JudgedRecord],
    per_spec: dict[str, list[JudgedRecord]],
    *,
    k: int,
    n: int,
    applied_counts: dict[str, int] | None = None,
    errors: dict[str, str] | None = None,
) -> tuple[float, list[MetricRow], list[MetricRow], list[StatTestResult]]:
    """Pure assembly from judged records to report rows, medians and stats.

    Running this over persisted judged files gives the same numbers as the
    end-to-end pipeline that produced them.
    """
    original = _columns(corpus, baseline, n)
    ids = [t.task_id for t in corpus]
    base_matrix = CorrectnessMatrix(task_ids=ids, n=n, original=original)
    passatk = baseline_pass_at_k(base_matrix, k)

    rows: list[MetricRow] = []
    stats: list[StatTestResult] = []
    for spec_id, judged in per_spec.items():
        level = get(spec_id).level
        row_error = (errors or {}).get(spec_id, "")
        if row_error:
            rows.append(
                MetricRow(
                    perturbation_id=spec_id,
                    level=level,
                    passatk=passatk,
                    rp=0.0,
                    drop=0.0,
                    rel=0.0,
                    total_tasks=len(ids),
                    error=row_error,
                )
            )
            stats.append(_degenerate_stat(spec_id))
            continue
        matrix = CorrectnessMatrix(
            task_ids=ids, n=n, original=original, perturbed={0: _columns(corpus, judged, n)}
        )
        rp = robust_pass_at_k(matrix, k)
        rows.append(
            MetricRow(
                perturbation_id=spec_id,
                level=level,
                passatk=passatk,
                rp=rp,
                drop=robust_drop(passatk, rp),
                rel=robust_rel_at_k(matrix, k),
                applied_tasks=(applied_counts or {}).get(spec_id, 0),
                total_tasks=len(ids),
            )
        )
        pairs = [
            (matrix.original_correct(t) / n, matrix.robust_correct(t) / n)
            for t in range(len(ids))
        ]
        try:
            stat = wilcoxon_signed_rank(pairs, alternative="one-sided")
            stat.label = spec_id
        except ValueError:
            stat = _degenerate_stat(spec_id)
        stats.append(stat)

    clean_rows = [r for r in rows if not r.error]
    medians = median_by_level(clean_rows) if clean_rows else []
    stats = apply_bonferroni(stats, m=len(per_spec) or None)
    return passatk, rows, medians, stats


# ---------------------------------------------------------------------------
# Whole runs


@dataclass(slots=True)
class RunManifest:
    corpus: str
    perturbations: list[PerturbationSpec]
    provider: ProviderConfig
    oracle: OracleConfig
    seed: int = DEFAULT_SEED
    k: int = 1
    out_dir: str = "run-out"
    lexicon_dir: str = ""
    translator: dict = field(default_factory=dict)
    started: str = ""
    finished: str = ""
    versions: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "corpus": self.corpus,
            "perturbations": [
                {"id": s.id, "seed": s.seed, "params": s.params} for s in self.perturbations
            ],
            "provider": asdict(self.provider),
            "oracle": asdict(self.oracle),
            "seed": self.seed,
            "k": self.k,
            "out_dir": self.out_dir,
            "lexicon_dir": self.lexicon_dir,
            "translator": self.translator,
            "started": self.started,
            "finished": self.finished,
            "versions": self.versions,
        }


@dataclass(slots=True)
class RobustnessReport:
    rows: list[MetricRow]
    medians: list[MetricRow]
    stats: list[StatTestResult]
    manifest: RunManifest
    baseline_passatk: float = 0.0

    def to_record(self) -> dict:
        return {
            "baseline": {
                "passatk": self.baseline_passatk,
                "k": self.manifest.k,
                "n": self.manifest.provider.samples_per_task,
            },
            "rows": [asdict(r) for r in self.rows],
            "medians": [asdict(r) for r in self.medians],
            "stats": [asdict(s) for s in self.stats],
            "manifest": self.manifest.to_record(),
        }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_report_files(report: RobustnessReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(
        rows_to_csv(report.rows + report.medians, include_medians=False)
    )
    (out / "stats.csv").write_text(stats_to_csv(report.stats))
    (out / "report.json").write_text(json.dumps(report.to_record(), indent=2) + "\n")


def run_evaluation(manifest: RunManifest) -> RobustnessReport:
    """Baseline once, then each perturbation, then the report files."""
    from .perturb_nl import Translator

    out = Path(manifest.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = load_corpus(manifest.corpus)
    lexicon = load_lexicon(manifest.lexicon_dir or None)
    translator = Translator.from_params(manifest.translator) if manifest.translator else None

    manifest.started = _now()
    manifest.finished = ""
    manifest.versions = {"tool": __version__, "lexicon": lexicon.digest}
    (out / "manifest.json").write_text(json.dumps(manifest.to_record(), indent=2) + "\n")

    baseline_completions = obtain_completions(corpus, manifest.provider)
    write_jsonl(out / "completions" / "original.jsonl", baseline_completions)
    baseline = attach_ori_pred(judge(corpus, baseline_completions, manifest.oracle), None)
    write_jsonl(out / "judged" / "original.jsonl", baseline)

    specs = [
        PerturbationSpec(id=s.id, seed=s.seed if s.seed is not None else manifest.seed, params=s.params)
        for s in manifest.perturbations
    ]
    perturbed = perturb_corpus(corpus, specs, lexicon=lexicon, translator=translator)

    per_spec: dict[str, list[JudgedRecord]] = {}
    applied_counts: dict[str, int] = {}
    spec_errors: dict[str, str] = {}
    for spec in specs:
        variant = perturbed[spec.id]
        (out / "perturbed").mkdir(exist_ok=True)
        save_corpus(variant.tasks, out / "perturbed" / f"{spec.id}.jsonl")
        applied_counts[spec.id] = variant.applied_count
        try:
            completions = obtain_completions(variant.tasks, manifest.provider)
            write_jsonl(out / "completions" / f"{spec.id}.jsonl", completions)
            judged = attach_ori_pred(judge(variant.tasks, completions, manifest.oracle), baseline)
        except HarnessError as exc:
            spec_errors[spec.id] = str(exc)
            per_spec[spec.id] = []
            continue
        write_jsonl(out / "judged" / f"{spec.id}.jsonl", judged)
        per_spec[spec.id] = judged

    passatk, rows, medians, stats = report_rows(
        corpus,
        baseline,
        per_spec,
        k=manifest.k,
        n=manifest.provider.samples_per_task,
        applied_counts=applied_counts,
        errors=spec_errors,
    )
    report = RobustnessReport(
        rows=rows, medians=medians, stats=stats, manifest=manifest, baseline_passatk=passatk
    )
    write_report_files(report, out)
    manifest.finished = _now()
    (out / "manifest.json").write_text(json.dumps(manifest.to_record(), indent=2) + "\n")
    return report


# ---------------------------------------------------------------------------
# Attack support


def completion_failure_scorer(provider: ProviderConfig, oracle: OracleConfig, query_budget=None):
    """Adversarial score for one candidate task: 1 - fraction of passing samples."""
    from .attack import DEFAULT_BUDGET, CallableScorer

    def fn(task: Task) -> float:
        completions = obtain_completions([task], provider)
        judged = judge([task], completions, oracle)
        return 1.0 - sum(1 for r in judged if r.passed) / len(judged)

    return CallableScorer(fn, query_budget if query_budget is not None else DEFAULT_BUDGET)
