"""Command-line surface.

Each subcommand is one pipeline stage with file handoffs, so the expensive
stages can run on separate machines: perturb -> complete -> judge ->
evaluate.  evaluate can also drive the whole pipeline itself when given a
provider command and a runner.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .corpus import (
    CorpusError,
    StratumPlan,
    cochran_sample_size,
    load_corpus,
    save_corpus,
    stratified_sample,
)
from .harness import (
    HarnessError,
    OracleConfig,
    ProviderConfig,
    RunManifest,
    attach_ori_pred,
    judge as judge_records,
    load_completions,
    load_judged,
    obtain_completions,
    perturb_corpus,
    report_rows,
    run_evaluation,
    write_jsonl,
    write_report_files,
)
from .lexicon import load_lexicon
from .metrics import MetricRow, StatTestResult, format_pct, rows_to_csv, stats_to_csv
from .registry import (
    DEFAULT_SEED,
    GradientAccessError,
    PerturbError,
    PerturbationSpec,
    all_perturbations,
)

class UsageError(Exception):
    """Missing or inconsistent flags; exits 2 like a parse failure."""


def require(args, *names) -> None:
    for name in names:
        if not getattr(args, name.replace("-", "_"), None):
            raise UsageError(f"--{name} is required")


_CONFIG_TYPES = {
    "seed": int,
    "k": int,
    "jobs": int,
    "budget": int,
    "samples": int,
    "timeout": float,
    "confidence": float,
    "margin": float,
    "population": int,
    "total": int,
    "strict": lambda v: v.lower() in ("1", "true", "yes", "on"),
    "spec": lambda v: [s.strip() for s in v.split(",") if s.strip()],
}


def read_config(path: str) -> dict:
    """key=value lines; '#' comments; values may be single- or double-quoted."""
    values: dict = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip().strip("-")
        value = value.strip()
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
            value = value[1:-1]
        convert = _CONFIG_TYPES.get(key, str)
        try:
            values[key.replace("-", "_")] = convert(value)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def _provider_from_args(args) -> ProviderConfig:
    if getattr(args, "provider_cmd", None) and getattr(args, "completions", None):
        raise UsageError("give either --provider-cmd or --completions, not both")
    if getattr(args, "provider_cmd", None):
        return ProviderConfig(
            mode="command",
            command_template=args.provider_cmd,
            samples_per_task=args.samples,
        )
    if getattr(args, "completions", None):
        return ProviderConfig(
            mode="file", completions_path=args.completions, samples_per_task=args.samples
        )
    raise UsageError("a provider is required: --provider-cmd or --completions")


def _oracle_from_args(args) -> OracleConfig:
    return OracleConfig(
        mode="runner",
        runner_path=getattr(args, "runner", "") or "",
        per_task_timeout=args.timeout,
        max_parallel=args.jobs,
    )


def _specs_from_args(args) -> list[PerturbationSpec]:
    return [PerturbationSpec(id=s, seed=args.seed) for s in (args.spec or [])]


def _translator_params(args) -> dict:
    endpoint = getattr(args, "translator_endpoint", "") or ""
    return {"endpoint": endpoint} if endpoint else {}


# ---------------------------------------------------------------------------
# Subcommands


def cmd_list_perturbations(args) -> int:
    for p in all_perturbations():
        print(f"{p.id}  {p.level}  {p.target}  {p.kind}")
    return 0


def cmd_perturb(args) -> int:
    require(args, "corpus", "out")
    if not args.spec:
        raise UsageError("at least one --spec is required")
    corpus = load_corpus(args.corpus)
    specs = _specs_from_args(args)
    lexicon = load_lexicon(args.lexicon_dir or None)
    translator = None
    params = _translator_params(args)
    if params:
        from .perturb_nl import Translator

        translator = Translator.from_params(params)
    variants = perturb_corpus(corpus, specs, lexicon=lexicon, translator=translator)
    if args.strict:
        for variant in variants.values():
            for task_id, error in variant.errors.items():
                raise HarnessError(f"{variant.spec.id} failed on {task_id}: {error}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for spec in specs:
        variant = variants[spec.id]
        save_corpus(variant.tasks, out / f"{spec.id}.jsonl")
        line = f"{spec.id}: applied {variant.applied_count}/{len(variant.tasks)}"
        if variant.errors:
            line += f", {len(variant.errors)} errors"
        print(line)
    return 0


def cmd_complete(args) -> int:
    require(args, "corpus", "out")
    corpus = load_corpus(args.corpus)
    provider = _provider_from_args(args)
    records = obtain_completions(corpus, provider)
    write_jsonl(args.out, records)
    print(f"wrote {len(records)} completions to {args.out}")
    return 0


def cmd_judge(args) -> int:
    require(args, "corpus", "completions", "out")
    corpus = load_corpus(args.corpus)
    completions = load_completions(args.completions)
    baseline = load_judged(args.baseline) if args.baseline else None
    judged = judge_records(corpus, completions, _oracle_from_args(args))
    attach_ori_pred(judged, baseline)
    write_jsonl(args.out, judged)
    passed = sum(1 for r in judged if r.passed)
    print(f"judged {len(judged)} completions, {passed} passed, wrote {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    require(args, "corpus", "out")
    if args.judged_dir:
        return _evaluate_from_judged(args)
    # no judged files: drive the full pipeline from here
    manifest = RunManifest(
        corpus=args.corpus,
        perturbations=_specs_from_args(args),
        provider=_provider_from_args(args),
        oracle=_oracle_from_args(args),
        seed=args.seed,
        k=args.k,
        out_dir=args.out,
        lexicon_dir=args.lexicon_dir or "",
        translator=_translator_params(args),
    )
    report = run_evaluation(manifest)
    print(rows_to_csv(report.rows + report.medians, include_medians=False), end="")
    return 0


def _evaluate_from_judged(args) -> int:
    corpus = load_corpus(args.corpus)
    judged_dir = Path(args.judged_dir)
    original = judged_dir / "original.jsonl"
    if not original.exists():
        raise HarnessError(f"no baseline judged file at {original}")
    baseline = load_judged(original)
    per_spec = {}
    wanted = args.spec or sorted(
        p.stem for p in judged_dir.glob("*.jsonl") if p.stem != "original"
    )
    for spec_id in wanted:
        per_spec[spec_id] = load_judged(judged_dir / f"{spec_id}.jsonl")
    n = args.samples
    passatk, rows, medians, stats = report_rows(corpus, baseline, per_spec, k=args.k, n=n)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(rows_to_csv(rows + medians, include_medians=False))
    (out / "stats.csv").write_text(stats_to_csv(stats))
    payload = {
        "baseline": {"passatk": passatk, "k": args.k, "n": n},
        "rows": [asdict(r) for r in rows],
        "medians": [asdict(r) for r in medians],
        "stats": [asdict(s) for s in stats],
    }
    (out / "report.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(rows_to_csv(rows + medians, include_medians=False), end="")
    return 0


def cmd_attack(args) -> int:
    from .attack import DEFAULT_BUDGET, CommandScorer, SwarmParams, run_attack

    require(args, "corpus", "attack", "out")
    corpus = load_corpus(args.corpus)
    if args.task:
        wanted = set(args.task)
        corpus = [t for t in corpus if t.task_id in wanted]
        missing = wanted - {t.task_id for t in corpus}
        if missing:
            raise HarnessError(f"tasks not in corpus: {', '.join(sorted(missing))}")
    lexicon = load_lexicon(args.lexicon_dir or None)
    budget = args.budget if args.budget is not None else DEFAULT_BUDGET

    def make_scorer():
        if args.scorer_cmd:
            return CommandScorer(args.scorer_cmd, budget)
        from .harness import completion_failure_scorer

        return completion_failure_scorer(
            _provider_from_args(args), _oracle_from_args(args), query_budget=budget
        )

    results = []
    for task in corpus:
        scorer = make_scorer()  # fresh budget per task
        result = run_attack(
            task,
            args.attack,
            scorer,
            lexicon=lexicon,
            params=SwarmParams(seed=args.seed) if args.attack == "SememePSO" else None,
        )
        results.append(
            {
                "task_id": task.task_id,
                "attack": args.attack,
                "success": result.success,
                "best_score": result.best_score,
                "queries": result.queries,
                "perturbed_prompt": result.best_task.prompt,
                "trace": [[label, score] for label, score in result.trace],
            }
        )
    with open(args.out, "w") as fh:
        for row in results:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    hits = sum(1 for r in results if r["success"])
    print(f"{args.attack}: {hits}/{len(results)} successful, wrote {args.out}")
    return 0


def cmd_sample(args) -> int:
    if args.strata:
        plan = []
        for item in args.strata:
            label, _, size = item.partition("=")
            if not size.isdigit():
                raise ValueError(f"bad stratum {item!r}, expected label=count")
            plan.append(StratumPlan(label=label, population=int(size)))
    else:
        if not args.population:
            raise UsageError("give --population or at least one --strata")
        plan = [StratumPlan(label="all", population=args.population)]
    population = sum(s.population for s in plan)
    total = args.total or cochran_sample_size(population, args.confidence, args.margin)
    print(f"population {population}, sample size {total}")
    for label, count, ids in stratified_sample(plan, total, args.seed):
        print(f"{label} ({count}): {', '.join(map(str, ids))}")
    return 0


def cmd_report(args) -> int:
    require(args, "report", "out")
    payload = json.loads(Path(args.report).read_text())
    rows = [MetricRow(**r) for r in payload.get("rows", [])]
    medians = [MetricRow(**r) for r in payload.get("medians", [])]
    stats = [StatTestResult(**s) for s in payload.get("stats", [])]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(rows_to_csv(rows + medians, include_medians=False))
    (out / "stats.csv").write_text(stats_to_csv(stats))
    (out / "report.md").write_text(_markdown_report(payload, rows + medians, stats))
    print(f"wrote report.csv, stats.csv, report.md to {out}")
    return 0


def _markdown_report(payload: dict, rows: list[MetricRow], stats: list[StatTestResult]) -> str:
    lines = ["# Robustness report", ""]
    baseline = payload.get("baseline", {})
    if baseline:
        lines.append(
            f"Baseline pass@{baseline.get('k', 1)}: {baseline.get('passatk', 0.0):.3f} "
            f"(n={baseline.get('n', 1)})"
        )
        lines.append("")
    lines += [
        "| Level | Method | Pass@k | Drop % | Rel % |",
        "| --- | --- | --- | --- | --- |",
    ]
    for row in rows:
        lines.append(
            f"| {row.level} | {row.perturbation_id} | {row.rp:.3f} "
            f"| {format_pct(row.drop)} | {format_pct(row.rel)} |"
        )
    if stats:
        lines += [
            "",
            "| Test | W | p | p (Bonferroni) | r |",
            "| --- | --- | --- | --- | --- |",
        ]
        for s in stats:
            pb = "" if s.p_bonferroni is None else f"{s.p_bonferroni:.3g}"
            lines.append(
                f"| {s.label} | {s.w_statistic:g} | {s.p_value:.3g} | {pb} | {s.effect_r:.3g} |"
            )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Parser


def _add_common(parser, *names):
    if "corpus" in names:
        parser.add_argument("--corpus", default="", help="task JSONL file")
    if "seed" in names:
        parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    if "lexicon" in names:
        parser.add_argument("--lexicon-dir", default="")
        parser.add_argument("--translator-endpoint", default="")
    if "provider" in names:
        parser.add_argument("--provider-cmd", default="", help="completion command")
        parser.add_argument("--completions", default="", help="precomputed completions JSONL")
        parser.add_argument("--samples", type=int, default=1, help="completions per task")
    if "oracle" in names:
        parser.add_argument("--runner", default="", help="runner command")
        parser.add_argument("--timeout", type=float, default=15.0, help="per-task seconds")
        parser.add_argument("--jobs", type=int, default=0, help="parallel judges, 0 = cores")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustbench",
        description="Perturb code-completion tasks and measure how models hold up.",
    )
    parser.add_argument("--config", default="", help="key=value defaults, flags override")
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", default="", help="key=value defaults, flags override")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser(
        "list-perturbations", parents=[shared], help="show the perturbation registry"
    )
    p.set_defaults(fn=cmd_list_perturbations)

    p = sub.add_parser("perturb", parents=[shared], help="write perturbed corpora")
    _add_common(p, "corpus", "seed", "lexicon")
    p.add_argument("--spec", action="append", help="perturbation id, repeatable")
    p.add_argument("--out", default="", help="output directory")
    p.add_argument("--strict", action="store_true", help="fail on any per-task error")
    p.set_defaults(fn=cmd_perturb)

    p = sub.add_parser("complete", parents=[shared], help="collect completions from a provider")
    _add_common(p, "corpus", "provider")
    p.add_argument("--out", default="", help="completions JSONL to write")
    p.set_defaults(fn=cmd_complete)

    p = sub.add_parser("judge", parents=[shared], help="run completions against their tests")
    _add_common(p, "corpus", "oracle")
    p.add_argument("--completions", default="", help="completions JSONL")
    p.add_argument("--baseline", default="", help="judged baseline JSONL for ori_pred")
    p.add_argument("--out", default="", help="judged JSONL to write")
    p.set_defaults(fn=cmd_judge)

    p = sub.add_parser("evaluate", parents=[shared], help="compute the robustness report")
    _add_common(p, "corpus", "seed", "lexicon", "provider", "oracle")
    p.add_argument("--spec", action="append", help="perturbation id, repeatable")
    p.add_argument("--judged-dir", default="", help="directory of judged JSONL files")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--out", default="", help="report directory")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("attack", parents=[shared], help="run a black-box attack over the corpus")
    _add_common(p, "corpus", "seed", "lexicon", "provider", "oracle")
    p.add_argument("--attack", default="", help="attack id, see list-perturbations")
    p.add_argument("--scorer-cmd", default="", help="command scoring one task JSON")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--task", action="append", help="restrict to these task ids")
    p.add_argument("--out", default="", help="attack results JSONL")
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("sample", parents=[shared], help="stratified sample for manual validation")
    p.add_argument("--population", type=int, default=0)
    p.add_argument("--strata", action="append", help="label=count, repeatable")
    p.add_argument("--confidence", type=float, default=0.95)
    p.add_argument("--margin", type=float, default=0.05)
    p.add_argument("--total", type=int, default=0, help="override computed sample size")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("report", parents=[shared], help="re-render a report.json")
    p.add_argument("--report", default="", help="report.json path")
    p.add_argument("--out", default="", help="output directory")
    p.set_defaults(fn=cmd_report)

    parser.subcommand_parsers = sub.choices
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)

    config_path = ""
    for at, item in enumerate(argv):
        if item == "--config":
            if at + 1 >= len(argv):
                parser.error("--config needs a path")
            config_path = argv[at + 1]
        elif item.startswith("--config="):
            config_path = item.partition("=")[2]
    if config_path:
        try:
            defaults = read_config(config_path)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        # config entries become parser defaults, so explicit flags win; the
        # subcommand parsers fill their own namespaces, hence set on each
        parser.set_defaults(**defaults)
        for subparser in parser.subcommand_parsers.values():
            subparser.set_defaults(**defaults)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except GradientAccessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (HarnessError, PerturbError, CorpusError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
