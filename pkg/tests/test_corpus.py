import json
import math

import pytest

from robustbench.corpus import (
    CorpusError,
    StratumPlan,
    Task,
    allocate_largest_remainder,
    cochran_sample_size,
    load_corpus,
    mini_corpus_path,
    save_corpus,
    stratified_sample,
    validate_task,
)


def make_task(task_id="T/0", entry="f"):
    return Task(
        task_id=task_id,
        prompt=f"def {entry}(x):\n    \"\"\" Double x.\n    >>> {entry}(2)\n    4\n    \"\"\"\n",
        entry_point=entry,
        canonical_solution="    return x * 2\n",
        test=f"def check(candidate):\n    assert candidate(2) == 4\n",
    )


def test_roundtrip_bytes_identical(tmp_path):
    tasks = [make_task("T/0"), make_task("T/1", "g"), make_task("T/2", "h")]
    tasks[1].extra["difficulty"] = "easy"
    first = tmp_path / "a.jsonl"
    second = tmp_path / "b.jsonl"
    save_corpus(tasks, first)
    loaded = load_corpus(first)
    save_corpus(loaded, second)
    assert first.read_bytes() == second.read_bytes()
    assert loaded == tasks


def test_unknown_fields_preserved(tmp_path):
    rec = {
        "task_id": "X/1",
        "prompt": "def f(x):\n    \"\"\" Id.\n    \"\"\"\n",
        "entry_point": "f",
        "canonical_solution": "    return x\n",
        "test": "def check(candidate):\n    assert candidate(1) == 1\n",
        "origin": "unit-test",
        "tags": ["a", "b"],
    }
    path = tmp_path / "c.jsonl"
    path.write_text(json.dumps(rec) + "\n")
    (task,) = load_corpus(path)
    assert task.extra == {"origin": "unit-test", "tags": ["a", "b"]}
    out = tmp_path / "d.jsonl"
    save_corpus([task], out)
    assert json.loads(out.read_text()) == rec


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"task_id": "ok"}\n{broken\n')
    with pytest.raises(CorpusError, match=r":1:"):
        load_corpus(path)  # line 1 is already missing fields
    path.write_text(json.dumps(make_task().to_record()) + "\n{broken\n")
    with pytest.raises(CorpusError, match=r":2: malformed JSON"):
        load_corpus(path)


def test_duplicate_task_id_rejected(tmp_path):
    path = tmp_path / "dup.jsonl"
    rec = json.dumps(make_task().to_record())
    path.write_text(rec + "\n" + rec + "\n")
    with pytest.raises(CorpusError, match="duplicate task_id"):
        load_corpus(path)


def test_missing_field_rejected(tmp_path):
    rec = make_task().to_record()
    del rec["entry_point"]
    path = tmp_path / "mf.jsonl"
    path.write_text(json.dumps(rec) + "\n")
    with pytest.raises(CorpusError, match="missing fields: entry_point"):
        load_corpus(path)


def test_validate_entry_point_must_be_defined():
    task = make_task()
    task.entry_point = "nope"
    with pytest.raises(CorpusError, match="not entry point 'nope'"):
        validate_task(task)


def test_validate_test_must_reference_entry():
    task = make_task()
    task.test = "assert 1 == 1\n"
    with pytest.raises(CorpusError, match="invokes neither"):
        validate_task(task)


def test_mini_corpus_loads_and_validates():
    tasks = load_corpus(mini_corpus_path())
    assert len(tasks) == 10
    ids = [t.task_id for t in tasks]
    assert len(set(ids)) == 10
    by_entry = {t.entry_point: t for t in tasks}
    assert "rolling_max" in by_entry
    assert "has_close_elements" in by_entry
    assert by_entry["rolling_max"].prompt.startswith("def rolling_max(numbers):")
    assert "running_max = None" in by_entry["rolling_max"].prompt


# ---------------------------------------------------------------------------
# Cochran sample sizing


def cochran_oracle(population, margin, z=1.959964):
    """Independent recomputation at spec-stated z, kept free of the library."""
    n0 = z * z * 0.25 / (margin * margin)
    return min(population, math.ceil(n0 / (1 + (n0 - 1) / population)))


def test_cochran_reference_value():
    assert cochran_sample_size(38692, 0.95, 0.05) == 381


@pytest.mark.parametrize("population", [50, 100, 381, 1000, 10000, 38692, 5_000_000])
def test_cochran_matches_oracle(population):
    assert cochran_sample_size(population, 0.95, 0.05) == cochran_oracle(population, 0.05)


def test_cochran_small_population_clamped():
    assert cochran_sample_size(10, 0.95, 0.05) == 10
    assert cochran_sample_size(1, 0.95, 0.05) == 1


def test_cochran_tighter_margin_grows():
    loose = cochran_sample_size(100000, 0.95, 0.05)
    tight = cochran_sample_size(100000, 0.95, 0.01)
    assert tight > loose


def test_cochran_rejects_bad_inputs():
    with pytest.raises(ValueError):
        cochran_sample_size(0, 0.95, 0.05)
    with pytest.raises(ValueError):
        cochran_sample_size(10, 1.5, 0.05)
    with pytest.raises(ValueError):
        cochran_sample_size(10, 0.95, 0.0)


# ---------------------------------------------------------------------------
# Stratified sampling

BENCHMARK_STRATA = [
    StratumPlan("humaneval-code", 4592),
    StratumPlan("humaneval-attack", 984),
    StratumPlan("mbpp-code", 27272),
    StratumPlan("mbpp-attack", 5844),
]


def test_allocation_benchmark_strata():
    # Hamilton quotas for 381 over the four strata; the remainders fall to
    # the second and third strata.
    assert allocate_largest_remainder(BENCHMARK_STRATA, 381) == [45, 10, 269, 57]


def test_allocation_sums_and_bounds():
    plan = [StratumPlan("a", 3), StratumPlan("b", 5), StratumPlan("c", 2)]
    counts = allocate_largest_remainder(plan, 7)
    assert sum(counts) == 7
    assert all(0 <= c <= s.population for c, s in zip(counts, plan))


def test_allocation_rejects_oversample():
    with pytest.raises(ValueError):
        allocate_largest_remainder([StratumPlan("a", 2)], 3)


def test_stratified_sample_deterministic_and_valid():
    a = stratified_sample(BENCHMARK_STRATA, 381, seed=5)
    b = stratified_sample(BENCHMARK_STRATA, 381, seed=5)
    assert a == b
    c = stratified_sample(BENCHMARK_STRATA, 381, seed=6)
    assert a != c
    total = 0
    for (label, count, ids), stratum in zip(a, BENCHMARK_STRATA):
        assert label == stratum.label
        assert count == len(ids) == len(set(ids))
        assert all(0 <= i < stratum.population for i in ids)
        assert ids == sorted(ids)
        total += count
    assert total == 381


def test_stratified_sample_exhausts_tiny_strata():
    plan = [StratumPlan("tiny", 2), StratumPlan("big", 98)]
    out = stratified_sample(plan, 100, seed=5)
    assert [c for _, c, _ in out] == [2, 98]
