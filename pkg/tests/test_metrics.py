import itertools
import math
import random
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustbench.metrics import (
    CorrectnessMatrix,
    FlipCounts,
    MetricRow,
    StatTestResult,
    apply_bonferroni,
    baseline_pass_at_k,
    bonferroni,
    comb,
    flip_counts,
    format_pct,
    median_by_level,
    pass_at_k,
    robust_drop,
    robust_pass_at_k,
    robust_rel_at_1,
    robust_rel_at_k,
    rows_to_csv,
    stats_to_csv,
    wilcoxon_signed_rank,
)

# ---------------------------------------------------------------------------
# Oracles: everything here is independent enumeration, no calls back into
# the library's formulas.


def comb_oracle(n, k):
    if k < 0 or n < 0 or k > n:
        return 0
    return math.factorial(n) // (math.factorial(k) * math.factorial(n - k))


def pass_at_k_oracle(n, c, k):
    """Fraction of k-subsets of the n samples containing a correct one."""
    samples = list(range(n))
    correct = set(range(c))
    subsets = list(itertools.combinations(samples, k))
    hits = sum(1 for s in subsets if any(i in correct for i in s))
    return hits / len(subsets)


def rel_term_oracle(n, k, minus_set, plus_set):
    """Eq-style two-sided term by direct subset enumeration."""
    subsets = list(itertools.combinations(range(n), k))
    minus_hits = sum(1 for s in subsets if any(i in minus_set for i in s))
    plus_hits = sum(1 for s in subsets if any(i in plus_set for i in s))
    return minus_hits / len(subsets) + plus_hits / len(subsets)


def wilcoxon_exact_oracle(ranks, w_obs):
    """P(T <= w_obs) by enumerating all sign assignments of the ranks."""
    n = len(ranks)
    hits = 0
    for signs in itertools.product((0, 1), repeat=n):
        t = sum(r for r, s in zip(ranks, signs) if s)
        if t <= w_obs:
            hits += 1
    return hits / 2**n


# ---------------------------------------------------------------------------
# comb / pass@k


def test_comb_matches_factorial_oracle():
    for n in range(0, 12):
        for k in range(-2, n + 3):
            assert comb(n, k) == comb_oracle(n, k)


def test_pass_at_k_exhaustive_small_n():
    for n in range(1, 9):
        for c in range(0, n + 1):
            for k in range(1, n + 1):
                assert pass_at_k(n, c, k) == pytest.approx(pass_at_k_oracle(n, c, k), abs=1e-12)


def test_pass_at_k_bounds_and_edges():
    assert pass_at_k(5, 0, 3) == 0.0
    assert pass_at_k(5, 5, 1) == 1.0
    with pytest.raises(ValueError):
        pass_at_k(5, 6, 1)
    with pytest.raises(ValueError):
        pass_at_k(5, 2, 0)
    with pytest.raises(ValueError):
        pass_at_k(5, 2, 6)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 30), st.data())
def test_pass_at_k_monotone_in_c(n, data):
    k = data.draw(st.integers(1, n))
    values = [pass_at_k(n, c, k) for c in range(n + 1)]
    assert values == sorted(values)
    assert values[0] == 0.0 and values[-1] == 1.0


# ---------------------------------------------------------------------------
# Matrix metrics vs enumeration on random inputs


def random_matrix(rng, n_tasks=None):
    n = rng.randint(1, 8)
    n_tasks = n_tasks or rng.randint(1, 6)
    seeds = rng.sample(range(100), rng.randint(1, 3))
    original = [[rng.random() < 0.6 for _ in range(n)] for _ in range(n_tasks)]
    perturbed = {
        s: [[rng.random() < 0.5 for _ in range(n)] for _ in range(n_tasks)] for s in seeds
    }
    return CorrectnessMatrix(
        task_ids=[f"T/{i}" for i in range(n_tasks)], n=n, original=original, perturbed=perturbed
    )


def test_matrix_metrics_match_enumeration_on_1000_random():
    rng = random.Random(12345)
    start = time.monotonic()
    for _ in range(1000):
        m = random_matrix(rng)
        k = rng.randint(1, m.n)
        robust_sets = [
            {i for i in range(m.n) if all(col[t][i] for col in m.perturbed.values())}
            for t in range(len(m.task_ids))
        ]
        expected_rp = sum(
            pass_at_k_oracle(m.n, len(robust_sets[t]), k) for t in range(len(m.task_ids))
        ) / len(m.task_ids)
        assert robust_pass_at_k(m, k) == pytest.approx(expected_rp, abs=1e-9)

        expected_rel = 0.0
        for t in range(len(m.task_ids)):
            minus = {i for i in range(m.n) if m.original[t][i] and i not in robust_sets[t]}
            plus = {i for i in range(m.n) if not m.original[t][i] and i in robust_sets[t]}
            expected_rel += rel_term_oracle(m.n, k, minus, plus)
        expected_rel /= len(m.task_ids)
        assert robust_rel_at_k(m, k) == pytest.approx(expected_rel, abs=1e-9)
    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"enumeration cross-check took {elapsed:.1f}s"


def test_worst_case_across_seeds():
    m = CorrectnessMatrix(
        task_ids=["a"],
        n=2,
        original=[[True, True]],
        perturbed={1: [[True, False]], 2: [[False, True]]},
    )
    # Neither sample survives every seed.
    assert m.robust_correct(0) == 0
    assert robust_pass_at_k(m, 1) == 0.0
    single = CorrectnessMatrix(
        task_ids=["a"], n=2, original=[[True, True]], perturbed={1: [[True, False]]}
    )
    assert single.robust_correct(0) == 1


def test_rel_at_k_reduces_to_rel_at_1():
    m = CorrectnessMatrix(
        task_ids=["a", "b", "c", "d"],
        n=1,
        original=[[True], [False], [True], [False]],
        perturbed={5: [[False], [True], [True], [False]]},
    )
    counts = flip_counts(m)
    assert (counts.rc_plus, counts.rc_minus) == (1, 1)
    assert robust_rel_at_1(counts) == pytest.approx(0.5)
    assert robust_rel_at_k(m, 1) == pytest.approx(0.5)


def test_rel_at_k_range_two_sided():
    m = CorrectnessMatrix(
        task_ids=["a"], n=2, original=[[True, False]], perturbed={1: [[False, True]]}
    )
    # One sample flips each way: both one-sided terms are 1 at k=2.
    assert robust_rel_at_k(m, 2) == pytest.approx(2.0)


def test_flip_counts_requires_n1():
    m = CorrectnessMatrix(task_ids=["a"], n=2, original=[[True, True]], perturbed={1: [[True, True]]})
    with pytest.raises(ValueError):
        flip_counts(m)


def test_matrix_shape_validation():
    with pytest.raises(ValueError):
        CorrectnessMatrix(task_ids=["a"], n=2, original=[[True]], perturbed={})
    with pytest.raises(ValueError):
        CorrectnessMatrix(task_ids=["a", "b"], n=1, original=[[True]], perturbed={})


# ---------------------------------------------------------------------------
# Drop / rel formatting


def test_robust_drop_signed():
    assert robust_drop(0.5, 0.4) == pytest.approx(0.2)
    assert robust_drop(0.5, 0.6) == pytest.approx(-0.2)


def test_robust_drop_zero_baseline_warns():
    with pytest.warns(RuntimeWarning):
        assert robust_drop(0.0, 0.3) == 0.0


def test_drop_consistency_with_table_values():
    # Baseline inferred from a zero-drop row (0.116), RP from another row
    # (0.092): the printed 21.05% is only reachable within +/-1.5pp from the
    # rounded values; the unrounded per-164 counts give it exactly.
    assert robust_drop(0.116, 0.092) == pytest.approx(0.2105, abs=0.015)
    assert format_pct(robust_drop(19 / 164, 15 / 164)) == "21.05"


def test_rel_formatting_examples():
    assert format_pct(robust_rel_at_1(FlipCounts(0, 4, 164))) == "2.44"
    assert format_pct(robust_rel_at_1(FlipCounts(1, 0, 974))) == "0.10"


# ---------------------------------------------------------------------------
# Wilcoxon


def test_wilcoxon_fifteen_same_sign():
    pairs = [(float(i), 0.0) for i in range(1, 16)]
    res = wilcoxon_signed_rank(pairs, alternative="one-sided")
    assert res.w_statistic == 0
    assert res.n_nonzero == 15
    assert res.method == "exact"
    assert res.z == pytest.approx(-60 / math.sqrt(310), abs=1e-9)
    assert res.effect_r == pytest.approx(0.87988269, abs=5e-4)
    assert res.p_value == pytest.approx(1 / 32768, abs=1e-12)


def test_wilcoxon_two_sided_doubles():
    pairs = [(float(i), 0.0) for i in range(1, 16)]
    one = wilcoxon_signed_rank(pairs, alternative="one-sided")
    two = wilcoxon_signed_rank(pairs, alternative="two-sided")
    assert two.p_value == pytest.approx(2 * one.p_value)


def test_wilcoxon_exact_matches_enumeration():
    rng = random.Random(7)
    for _ in range(20):
        n = rng.randint(3, 11)
        # Distinct magnitudes so the exact path applies.
        mags = rng.sample(range(1, 50), n)
        diffs = [m if rng.random() < 0.5 else -m for m in mags]
        pairs = [(float(d), 0.0) for d in diffs]
        res = wilcoxon_signed_rank(pairs, alternative="one-sided")
        assert res.method == "exact"
        assert res.p_value == pytest.approx(
            wilcoxon_exact_oracle(list(range(1, n + 1)), res.w_statistic), abs=1e-12
        )


def test_wilcoxon_zeros_dropped():
    pairs = [(1.0, 1.0), (2.0, 0.0), (3.0, 0.0), (0.5, 0.5)]
    res = wilcoxon_signed_rank(pairs)
    assert res.n_nonzero == 2


def test_wilcoxon_ties_fall_back_to_normal():
    pairs = [(1.0, 0.0)] * 5 + [(-2.0, 0.0)] * 3
    res = wilcoxon_signed_rank(pairs)
    assert res.method == "normal"


def test_wilcoxon_large_n_normal():
    pairs = [(float(i), 0.1 * i) for i in range(1, 31)]
    res = wilcoxon_signed_rank(pairs)
    assert res.method == "normal"
    assert res.n_nonzero == 30


def test_wilcoxon_all_zero_errors():
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([(1.0, 1.0), (2.0, 2.0)])


def test_wilcoxon_average_ranks_on_ties():
    # |d| = [1, 1, 2]: ranks 1.5, 1.5, 3; signs +, -, +.
    res = wilcoxon_signed_rank([(1.0, 0.0), (-1.0, 0.0), (2.0, 0.0)])
    assert res.w_statistic == pytest.approx(1.5)


def test_wilcoxon_balanced_w_near_mean():
    # Alternating signs over 18 pairs lands W near n(n+1)/4.
    pairs = [((-1) ** i * float(i), 0.0) for i in range(1, 19)]
    res = wilcoxon_signed_rank(pairs)
    mean = 18 * 19 / 4
    assert abs(res.w_statistic - mean) < mean / 2
    assert res.p_value > 0.1


# ---------------------------------------------------------------------------
# Bonferroni


def test_bonferroni_reference_values_nine_decimals():
    assert abs(bonferroni(0.000195066, 15) - 0.00292599) < 1e-9
    assert abs(bonferroni(0.596588135, 15) - 8.948822025) < 1e-9


def test_bonferroni_uncapped_by_default():
    assert bonferroni(0.2, 10) == pytest.approx(2.0)
    assert bonferroni(0.2, 10, capped=True) == 1.0


def test_bonferroni_rejects_bad_family():
    with pytest.raises(ValueError):
        bonferroni(0.1, 0)


def test_apply_bonferroni_default_family_size():
    stats = [
        wilcoxon_signed_rank([(float(i), 0.0) for i in range(1, 16)]),
        wilcoxon_signed_rank([(float(i), 0.5 * i) for i in range(1, 16)]),
    ]
    out = apply_bonferroni(stats)
    assert all(s.p_bonferroni == pytest.approx(s.p_value * 2) for s in out)
    out15 = apply_bonferroni(stats, m=15)
    assert all(s.p_bonferroni == pytest.approx(s.p_value * 15) for s in out15)


# ---------------------------------------------------------------------------
# Rows, medians, CSV


def rows_fixture():
    mk = lambda pid, level, rp, drop, rel: MetricRow(
        perturbation_id=pid, level=level, passatk=0.66, rp=rp, drop=drop, rel=rel, total_tasks=164
    )
    return [
        mk("C1", "Character-Level", 0.579, 0.0, 0.0244),
        mk("C2", "Character-Level", 0.579, 0.0, 0.0732),
        mk("C3", "Character-Level", 0.652, 0.0183, 0.0732),
        mk("C4", "Character-Level", 0.652, 0.0183, 0.0976),
        mk("W1", "Word-Level", 0.555, 0.0421, 0.1),
    ]


def test_median_by_level_even_count():
    medians = median_by_level(rows_fixture())
    char = next(m for m in medians if m.level == "Character-Level")
    assert char.perturbation_id == "Median"
    assert char.rp == pytest.approx((0.579 + 0.652) / 2)  # 0.6155
    # Unrounded inputs print the table's 0.616.
    unrounded = (95 / 164 + 107 / 164) / 2
    assert f"{unrounded:.3f}" == "0.616"


def test_median_preserves_level_order():
    medians = median_by_level(rows_fixture())
    assert [m.level for m in medians] == ["Character-Level", "Word-Level"]


def test_median_odd_count():
    rows = rows_fixture()[:3]
    char = median_by_level(rows)[0]
    assert char.rp == 0.579


def test_rows_to_csv_layout():
    text = rows_to_csv(rows_fixture(), include_medians=True)
    lines = text.strip().split("\n")
    assert lines[0] == "level,method,passatk,drop_pct,rel_pct"
    assert lines[1] == "Character-Level,C1,0.579,0.00,2.44"
    assert lines[3] == "Character-Level,C3,0.652,1.83,7.32"
    median_lines = [l for l in lines if ",Median," in l]
    assert len(median_lines) == 2
    assert median_lines[0].startswith("Character-Level,Median,0.61")


def test_stats_csv_columns():
    res = wilcoxon_signed_rank([(float(i), 0.0) for i in range(1, 16)], alternative="one-sided")
    (out,) = apply_bonferroni([res], m=15)
    text = stats_to_csv([out])
    lines = text.strip().split("\n")
    assert lines[0] == "w_statistic,p_value,p_bonferroni,effect_r"
    w, p, pb, r = lines[1].split(",")
    assert w == "0"
    assert float(p) == pytest.approx(1 / 32768)
    assert float(pb) == pytest.approx(15 / 32768)
    assert float(r) == pytest.approx(0.87988269, abs=5e-4)
