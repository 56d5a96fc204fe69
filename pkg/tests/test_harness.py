import json
import sys
from pathlib import Path

import pytest

from robustbench.corpus import Task, load_corpus, mini_corpus_path
from robustbench.harness import (
    CompletionRecord,
    HarnessError,
    JudgedRecord,
    OracleConfig,
    ProviderConfig,
    RunManifest,
    RunnerClient,
    assemble_program,
    attach_ori_pred,
    completion_failure_scorer,
    judge,
    load_judged,
    obtain_completions,
    perturb_corpus,
    report_rows,
    run_evaluation,
    write_jsonl,
)
from robustbench.metrics import MEDIAN_ID
from robustbench.registry import PerturbationSpec

HELPERS = Path(__file__).parent / "helpers"
FAKE_RUNNER = f"{sys.executable} {HELPERS / 'fake_runner.py'}"
ECHO = f"{sys.executable} -m robustbench.providers.echo"

pytestmark = pytest.mark.usefixtures("runner_env_clear")


@pytest.fixture
def runner_env_clear(monkeypatch):
    monkeypatch.delenv("ROBUSTBENCH_RUNNER", raising=False)


@pytest.fixture(scope="module")
def corpus():
    return load_corpus(mini_corpus_path())


@pytest.fixture(scope="module")
def small_corpus(corpus):
    return corpus[:4]


def oracle(**kwargs) -> OracleConfig:
    kwargs.setdefault("runner_path", FAKE_RUNNER)
    return OracleConfig(**kwargs)


def tiny_task(task_id="toy/0", body="    return x + 1\n", test_value=2):
    return Task(
        task_id=task_id,
        prompt='def f(x):\n    """ Add one. """\n',
        canonical_solution=body,
        test=f"def check(candidate):\n    assert candidate(1) == {test_value}\n",
        entry_point="f",
    )


# ---------------------------------------------------------------------------
# Program assembly


def test_assemble_program_shape():
    task = tiny_task()
    program = assemble_program(task, "    return x + 1")
    assert program == (
        task.prompt + "    return x + 1" + "\n" + task.test + "\n" + "check(f)" + "\n"
    )


def test_assembled_program_runs(corpus):
    task = corpus[0]
    program = assemble_program(task, task.canonical_solution)
    exec(compile(program, "<judged>", "exec"), {})


# ---------------------------------------------------------------------------
# Config validation


def test_provider_config_needs_exactly_one_source():
    with pytest.raises(HarnessError):
        ProviderConfig(mode="command")
    with pytest.raises(HarnessError):
        ProviderConfig(mode="command", command_template="x", completions_path="y")
    with pytest.raises(HarnessError):
        ProviderConfig(mode="file")
    with pytest.raises(HarnessError):
        ProviderConfig(mode="nonsense", command_template="x")
    ProviderConfig(mode="file", completions_path="y")


def test_oracle_config_validation():
    with pytest.raises(HarnessError):
        OracleConfig(per_task_timeout=0)
    with pytest.raises(HarnessError):
        OracleConfig(mode="psychic")
    assert oracle(max_parallel=8).workers(3) == 3
    assert oracle(max_parallel=2).workers(9) == 2


def test_runner_env_overrides_config(monkeypatch):
    monkeypatch.setenv("ROBUSTBENCH_RUNNER", "env-runner")
    assert OracleConfig(runner_path="config-runner").resolved_runner() == "env-runner"
    monkeypatch.delenv("ROBUSTBENCH_RUNNER")
    assert OracleConfig(runner_path="config-runner").resolved_runner() == "config-runner"
    with pytest.raises(HarnessError, match="ROBUSTBENCH_RUNNER"):
        OracleConfig().resolved_runner()


# ---------------------------------------------------------------------------
# Completions


def test_echo_provider_round_trip(small_corpus):
    provider = ProviderConfig(mode="command", command_template=ECHO)
    records = obtain_completions(small_corpus, provider)
    assert [r.task_id for r in records] == [t.task_id for t in small_corpus]
    assert records[0].completion == small_corpus[0].canonical_solution


def test_samples_per_task_three(small_corpus):
    provider = ProviderConfig(
        mode="command", command_template=f"{ECHO} --samples 3", samples_per_task=3
    )
    records = obtain_completions(small_corpus, provider)
    assert len(records) == 3 * len(small_corpus)
    for task in small_corpus:
        assert sum(1 for r in records if r.task_id == task.task_id) == 3


def test_count_mismatch_names_task(small_corpus):
    provider = ProviderConfig(
        mode="command", command_template=f"{ECHO} --samples 2", samples_per_task=3
    )
    with pytest.raises(HarnessError, match="expected 3 completions for"):
        obtain_completions(small_corpus, provider)


def test_provider_nonzero_exit_surfaces_stderr(small_corpus):
    cmd = f"{sys.executable} -c \"import sys; print('model fell over', file=sys.stderr); sys.exit(3)\""
    provider = ProviderConfig(mode="command", command_template=cmd)
    with pytest.raises(HarnessError, match="model fell over"):
        obtain_completions(small_corpus, provider)


def test_provider_malformed_json(small_corpus):
    cmd = f"{sys.executable} -c \"print('not json')\""
    provider = ProviderConfig(mode="command", command_template=cmd)
    with pytest.raises(HarnessError, match="malformed completion JSON"):
        obtain_completions(small_corpus, provider)


def test_file_mode_missing_task_names_it(small_corpus, tmp_path):
    path = tmp_path / "completions.jsonl"
    with open(path, "w") as fh:
        for task in small_corpus[:-1]:
            fh.write(json.dumps({"task_id": task.task_id, "completion": "    pass"}) + "\n")
    provider = ProviderConfig(mode="file", completions_path=str(path))
    missing = small_corpus[-1].task_id
    with pytest.raises(HarnessError) as excinfo:
        obtain_completions(small_corpus, provider)
    assert missing in str(excinfo.value)


def test_file_mode_unknown_task_rejected(small_corpus, tmp_path):
    path = tmp_path / "completions.jsonl"
    lines = [{"task_id": t.task_id, "completion": "    pass"} for t in small_corpus]
    lines.append({"task_id": "Mini/999", "completion": "    pass"})
    path.write_text("".join(json.dumps(l) + "\n" for l in lines))
    provider = ProviderConfig(mode="file", completions_path=str(path))
    with pytest.raises(HarnessError, match="Mini/999"):
        obtain_completions(small_corpus, provider)


# ---------------------------------------------------------------------------
# Runner client and judging


def test_ready_handshake_required():
    with pytest.raises(HarnessError, match="READY"):
        RunnerClient(f"{sys.executable} -c \"print('hello')\"")


def test_missing_runner_binary():
    with pytest.raises(HarnessError, match="could not start runner"):
        RunnerClient("/no/such/runner-binary")


def test_judge_pass_and_fail():
    passing = tiny_task("toy/pass")
    failing = tiny_task("toy/fail")
    records = [
        CompletionRecord("toy/pass", "    return x + 1"),
        CompletionRecord("toy/fail", "    return x - 1"),
    ]
    judged = judge([passing, failing], records, oracle())
    assert [r.passed for r in judged] == [True, False]
    assert judged[0].result == "passed"
    assert judged[1].result.startswith("failed: ")
    assert "AssertionError" in judged[1].result
    assert judged[0].mean_logp is None


def test_judge_timeout():
    task = tiny_task("toy/slow")
    records = [CompletionRecord("toy/slow", "    import time\n    time.sleep(30)\n    return x + 1")]
    judged = judge([task], records, oracle(per_task_timeout=1.0))
    assert judged[0].passed is False
    assert "timeout" in judged[0].result


def test_crash_does_not_poison_following_request():
    task = tiny_task("toy/crash")
    records = [
        CompletionRecord("toy/crash", "    import os, signal\n    os.kill(os.getpid(), signal.SIGKILL)"),
        CompletionRecord("toy/crash", "    return x + 1"),
    ]
    judged = judge([task], records, oracle(max_parallel=1))
    assert judged[0].passed is False
    assert "crash" in judged[0].result
    assert judged[1].passed is True


def test_judge_order_stable_under_parallelism(corpus):
    records = []
    for task in corpus[:8]:
        records.append(CompletionRecord(task.task_id, task.canonical_solution))
    records.append(CompletionRecord(corpus[0].task_id, "    raise ValueError('nope')"))
    judged = judge(corpus, records, oracle(max_parallel=4))
    assert [r.task_id for r in judged] == [r.task_id for r in records]
    assert [r.passed for r in judged] == [True] * 8 + [False]


def test_runner_death_is_recorded_and_judging_continues():
    tasks = [tiny_task(f"toy/{i}") for i in range(3)]
    records = [
        CompletionRecord("toy/0", "    return x + 1"),
        CompletionRecord("toy/1", "    POISON = 1\n    return x + 1"),
        CompletionRecord("toy/2", "    return x + 1"),
    ]
    cfg = oracle(runner_path=f"{FAKE_RUNNER} --die-on POISON", max_parallel=1)
    judged = judge(tasks, records, cfg)
    assert [r.passed for r in judged] == [True, False, True]
    assert "runner error" in judged[1].result


def test_judge_unknown_task_id():
    with pytest.raises(HarnessError, match="ghost"):
        judge([tiny_task()], [CompletionRecord("ghost", "    pass")], oracle())


def test_precomputed_mode_passes_records_through():
    record = JudgedRecord("toy/0", "    pass", None, "passed", True)
    out = judge([tiny_task()], [record], OracleConfig(mode="precomputed"))
    assert out == [record]
    with pytest.raises(HarnessError, match="passed flags"):
        judge([tiny_task()], [CompletionRecord("toy/0", "    pass")], OracleConfig(mode="precomputed"))


# ---------------------------------------------------------------------------
# ori_pred wiring


def test_ori_pred_baseline_is_own_completion():
    judged = [JudgedRecord("t/0", "A", None, "passed", True)]
    attach_ori_pred(judged, None)
    assert judged[0].ori_pred == "A"


def test_ori_pred_perturbed_takes_baseline_slot():
    baseline = [
        JudgedRecord("t/0", "base-a", "base-a", "passed", True),
        JudgedRecord("t/0", "base-b", "base-b", "passed", True),
        JudgedRecord("t/1", "base-c", "base-c", "passed", True),
    ]
    judged = [
        JudgedRecord("t/0", "pert-a", None, "passed", True),
        JudgedRecord("t/0", "pert-b", None, "failed: x", False),
        JudgedRecord("t/1", "pert-c", None, "passed", True),
    ]
    attach_ori_pred(judged, baseline)
    assert [r.ori_pred for r in judged] == ["base-a", "base-b", "base-c"]


# ---------------------------------------------------------------------------
# Perturbation stage


def test_perturb_corpus_keeps_every_task(corpus):
    specs = [PerturbationSpec(id="tab_indent"), PerturbationSpec(id="OperandSwap")]
    out = perturb_corpus(corpus, specs)
    assert set(out) == {"tab_indent", "OperandSwap"}
    for variant in out.values():
        assert [t.task_id for t in variant.tasks] == [t.task_id for t in corpus]
        assert not variant.errors
        assert 0 < variant.applied_count <= len(corpus)


def test_perturb_corpus_rejects_duplicates(corpus):
    specs = [PerturbationSpec(id="tab_indent"), PerturbationSpec(id="tab_indent")]
    with pytest.raises(HarnessError, match="duplicate"):
        perturb_corpus(corpus, specs)


def test_perturb_corpus_rejects_unknown_id(corpus):
    from robustbench.registry import PerturbError

    with pytest.raises(PerturbError, match="unknown perturbation"):
        perturb_corpus(corpus, [PerturbationSpec(id="NoSuchThing")])


def test_perturb_corpus_collects_per_task_errors(corpus):
    from robustbench.perturb_nl import Translator

    bad = Translator(mode="http", endpoint="http://127.0.0.1:9/translate")
    out = perturb_corpus(corpus, [PerturbationSpec(id="BackTranslation")], translator=bad)
    variant = out["BackTranslation"]
    assert [t.task_id for t in variant.tasks] == [t.task_id for t in corpus]
    assert variant.applied_count == 0
    assert len(variant.errors) == len(corpus)
    assert "translation request failed" in next(iter(variant.errors.values()))


# ---------------------------------------------------------------------------
# Report assembly


def judged_all(corpus, passed, n=1):
    out = []
    for task in corpus:
        for _ in range(n):
            out.append(
                JudgedRecord(
                    task_id=task.task_id,
                    completion="    pass",
                    ori_pred="    pass",
                    result="passed" if passed else "failed: AssertionError",
                    passed=passed,
                )
            )
    return out


def test_report_rows_identity_case(small_corpus):
    baseline = judged_all(small_corpus, True)
    per_spec = {"tab_indent": judged_all(small_corpus, True)}
    passatk, rows, medians, stats = report_rows(
        small_corpus, baseline, per_spec, k=1, n=1
    )
    assert passatk == 1.0
    (row,) = rows
    assert (row.rp, row.drop, row.rel) == (1.0, 0.0, 0.0)
    assert medians[0].perturbation_id == MEDIAN_ID
    assert stats[0].method == "degenerate"
    assert stats[0].p_value == 1.0


def test_report_rows_total_drop_case(small_corpus):
    baseline = judged_all(small_corpus, True)
    per_spec = {"FuncRenameSwapChar": judged_all(small_corpus, False)}
    passatk, rows, _, stats = report_rows(small_corpus, baseline, per_spec, k=1, n=1)
    (row,) = rows
    assert row.passatk == 1.0
    assert row.rp == 0.0
    assert row.drop == 1.0
    assert row.rel == passatk  # every originally-correct task flipped
    assert stats[0].n_nonzero == len(small_corpus)
    assert stats[0].p_bonferroni is not None


def test_report_rows_spec_error_row(small_corpus):
    baseline = judged_all(small_corpus, True)
    per_spec = {"tab_indent": judged_all(small_corpus, True), "BackTranslation": []}
    _, rows, medians, stats = report_rows(
        small_corpus,
        baseline,
        per_spec,
        k=1,
        n=1,
        errors={"BackTranslation": "translator unreachable"},
    )
    by_id = {r.perturbation_id: r for r in rows}
    assert by_id["BackTranslation"].error == "translator unreachable"
    # the errored row must not drag the medians down
    assert all(m.rp == 1.0 for m in medians if m.level == "Character-Level")


def test_report_rows_count_mismatch(small_corpus):
    baseline = judged_all(small_corpus, True)
    with pytest.raises(HarnessError, match="expected 1 judged"):
        report_rows(small_corpus, baseline[:-1], {}, k=1, n=1)


# ---------------------------------------------------------------------------
# Whole runs


def preserving_manifest(tmp_path, corpus_path, specs, samples=1):
    return RunManifest(
        corpus=str(corpus_path),
        perturbations=specs,
        provider=ProviderConfig(
            mode="command",
            command_template=f"{ECHO} --samples {samples}" if samples > 1 else ECHO,
            samples_per_task=samples,
        ),
        oracle=oracle(),
        out_dir=str(tmp_path / "out"),
    )


def write_subcorpus(tmp_path, corpus):
    path = tmp_path / "corpus.jsonl"
    write_jsonl(path, corpus)
    return path


def test_run_evaluation_identity(tmp_path, small_corpus):
    corpus_path = write_subcorpus(tmp_path, small_corpus)
    specs = [PerturbationSpec(id="tab_indent"), PerturbationSpec(id="OperandSwap")]
    report = run_evaluation(preserving_manifest(tmp_path, corpus_path, specs))

    assert report.baseline_passatk == 1.0
    assert len(report.rows) == len(specs)
    for row in report.rows:
        assert row.rp == 1.0
        assert row.drop == 0.0
        assert row.rel == 0.0
        assert row.total_tasks == len(small_corpus)

    out = tmp_path / "out"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["started"] and manifest["finished"]
    assert manifest["versions"]["tool"]
    assert manifest["versions"]["lexicon"]

    report_csv = (out / "report.csv").read_text().splitlines()
    assert report_csv[0] == "level,method,passatk,drop_pct,rel_pct"
    # one line per spec plus one median line per level present
    assert len(report_csv) == 1 + len(specs) + len(report.medians)
    stats_csv = (out / "stats.csv").read_text().splitlines()
    assert stats_csv[0] == "w_statistic,p_value,p_bonferroni,effect_r"

    for name in ("original", "tab_indent", "OperandSwap"):
        assert (out / "judged" / f"{name}.jsonl").exists()
    for spec in specs:
        assert (out / "perturbed" / f"{spec.id}.jsonl").exists()


def test_run_evaluation_total_drop(tmp_path, small_corpus):
    corpus_path = write_subcorpus(tmp_path, small_corpus)
    provider_cmd = (
        f"{sys.executable} {HELPERS / 'originals_provider.py'} --originals {corpus_path}"
    )
    manifest = RunManifest(
        corpus=str(corpus_path),
        perturbations=[PerturbationSpec(id="FuncRenameSwapChar")],
        provider=ProviderConfig(mode="command", command_template=provider_cmd),
        oracle=oracle(),
        out_dir=str(tmp_path / "out"),
    )
    report = run_evaluation(manifest)
    (row,) = report.rows
    assert report.baseline_passatk == 1.0
    assert row.rp == 0.0
    assert row.drop == 1.0
    assert row.rel == report.baseline_passatk


def test_run_evaluation_baseline_only(tmp_path, small_corpus):
    corpus_path = write_subcorpus(tmp_path, small_corpus)
    report = run_evaluation(preserving_manifest(tmp_path, corpus_path, []))
    assert report.baseline_passatk == 1.0
    assert report.rows == []
    assert report.medians == []
    assert (tmp_path / "out" / "judged" / "original.jsonl").exists()


def test_manifest_written_before_any_result(tmp_path, small_corpus):
    corpus_path = write_subcorpus(tmp_path, small_corpus)
    manifest = RunManifest(
        corpus=str(corpus_path),
        perturbations=[],
        provider=ProviderConfig(
            mode="command", command_template=f"{sys.executable} -c 'import sys; sys.exit(3)'"
        ),
        oracle=oracle(),
        out_dir=str(tmp_path / "out"),
    )
    with pytest.raises(HarnessError):
        run_evaluation(manifest)
    on_disk = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert on_disk["started"]
    assert on_disk["finished"] == ""


def test_judged_files_carry_record_schema(tmp_path, small_corpus):
    corpus_path = write_subcorpus(tmp_path, small_corpus)
    run_evaluation(
        preserving_manifest(tmp_path, corpus_path, [PerturbationSpec(id="tab_indent")])
    )
    lines = (tmp_path / "out" / "judged" / "tab_indent.jsonl").read_text().splitlines()
    assert len(lines) == len(small_corpus)
    for line in lines:
        record = json.loads(line)
        assert set(record) == {"task_id", "completion", "ori_pred", "result", "passed", "mean_logp"}
        assert record["mean_logp"] is None
        assert record["result"] == "passed"
        assert record["passed"] is True
        # echo answers with the canonical solution either way, so the
        # perturbed-run prediction matches the baseline one
        assert record["ori_pred"] == record["completion"]


def test_report_recomputes_from_judged_files(tmp_path, small_corpus):
    corpus_path = write_subcorpus(tmp_path, small_corpus)
    specs = [PerturbationSpec(id="tab_indent"), PerturbationSpec(id="OperandSwap")]
    report = run_evaluation(preserving_manifest(tmp_path, corpus_path, specs))

    out = tmp_path / "out"
    corpus = load_corpus(corpus_path)
    baseline = load_judged(out / "judged" / "original.jsonl")
    per_spec = {s.id: load_judged(out / "judged" / f"{s.id}.jsonl") for s in specs}
    passatk, rows, medians, stats = report_rows(corpus, baseline, per_spec, k=1, n=1)

    assert passatk == report.baseline_passatk
    assert [
        (r.perturbation_id, r.rp, r.drop, r.rel) for r in rows
    ] == [(r.perturbation_id, r.rp, r.drop, r.rel) for r in report.rows]
    assert medians == report.medians
    assert [(s.label, s.p_value, s.p_bonferroni) for s in stats] == [
        (s.label, s.p_value, s.p_bonferroni) for s in report.stats
    ]


def test_run_evaluation_samples_three(tmp_path, small_corpus):
    corpus_path = write_subcorpus(tmp_path, small_corpus[:2])
    report = run_evaluation(
        preserving_manifest(
            tmp_path, corpus_path, [PerturbationSpec(id="tab_indent")], samples=3
        )
    )
    lines = (tmp_path / "out" / "judged" / "original.jsonl").read_text().splitlines()
    assert len(lines) == 6
    assert report.baseline_passatk == 1.0


# ---------------------------------------------------------------------------
# Attack scorer bridge


def test_completion_failure_scorer(tmp_path, small_corpus):
    corpus_path = write_subcorpus(tmp_path, small_corpus)
    provider_cmd = (
        f"{sys.executable} {HELPERS / 'originals_provider.py'} --originals {corpus_path}"
    )
    provider = ProviderConfig(mode="command", command_template=provider_cmd)
    scorer = completion_failure_scorer(provider, oracle(), query_budget=5)

    task = small_corpus[0]
    assert scorer.score(task) == 0.0
    assert scorer.score(task.with_fields(prompt=task.prompt + "# nudge\n")) == 1.0
    assert scorer.queries_used == 2
