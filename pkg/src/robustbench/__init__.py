"""Robustness testing for code-completion benchmarks.

Perturbs benchmark tasks along a granularity-by-target taxonomy, collects
completions from a black-box provider, judges them in a sandboxed runner,
and reports robust pass/drop/relative-change metrics with paired
significance tests.
"""

__version__ = "0.1.0"
